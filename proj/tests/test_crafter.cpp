#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "emulator.hpp"
#include "error.hpp"
#include "layout.hpp"
#include "materializer.hpp"
#include "pipeline.hpp"

#include <algorithm>
#include <cstring>
#include <string>

using namespace rf;

namespace {

const char* kDiamond =
    ".func f\n"
    "  mov rax, rdi\n"
    "  mov rcx, 0x1111111111111111\n"
    "  mov rdx, 0x2222222222222222\n"
    "  cmp rax, 0\n"
    "  je zero\n"
    "  mov rax, 1\n"
    "  add rax, 0x77\n"
    "  jmp out\n"
    "zero:\n"
    "  mov rax, 2\n"
    "  add rax, 0x99\n"
    "out:\n"
    "  ret\n";

ObfResult build(const std::string& src, ObfConfig cfg = {}) {
  return obfuscate_source(src, cfg);
}

}  // namespace

TEST_CASE("a plain function translates into a chain that runs") {
  ObfResult r = build(kDiamond);
  CHECK(r.crafted.untranslated.empty());
  REQUIRE(r.crafted.funcs.size() == 1);
  const FunctionChain& ch = r.crafted.funcs[0].chain;
  CHECK(ch.name == "f");
  CHECK(ch.blocks.size() == 4);  // diamond
  for (uint64_t in : {0ull, 5ull}) {
    RunOutputs nat = run_native(r.native, "f", {in});
    RunOutputs obf = run_obfuscated(r.mat.image, "f", {in});
    CHECK(nat.exit == ExitReason::ok);
    CHECK(obf.exit == ExitReason::ok);
    CHECK(nat.rax() == obf.rax());
  }
}

TEST_CASE("chain geometry: cells, labels, gadget addresses") {
  ObfResult r = build(kDiamond);
  const Manifest& m = r.mat.manifest;
  REQUIRE(m.funcs.size() == 1);
  const ManifestFunction& mf = m.funcs[0];
  CHECK(mf.name == "f");
  CHECK(mf.chain_base >= kChainBase);
  CHECK(mf.chain_end > mf.chain_base);
  CHECK(mf.chain_end <= m.chain_end);
  // blocks tile the chain in order
  REQUIRE(mf.blocks.size() == 4);
  for (size_t i = 0; i < mf.blocks.size(); ++i) {
    const ManifestBlock& b = mf.blocks[i];
    CHECK(b.start <= b.body);
    CHECK(b.body < b.end);
    if (i) CHECK(b.start >= mf.blocks[i - 1].end);
  }
  CHECK(mf.blocks.front().start == mf.chain_base);
  CHECK(mf.blocks.back().end == mf.chain_end);
  // without confusion every cell is 8-byte aligned
  for (uint64_t a : mf.gadget_addrs) CHECK(a % 8 == 0);
  // every recorded gadget cell holds a pool address
  const ImgSection* chain = r.mat.image.section("chain");
  REQUIRE(chain != nullptr);
  for (uint64_t cell : mf.gadget_addrs) {
    REQUIRE(cell >= chain->vaddr);
    uint64_t v = 0;
    std::memcpy(&v, chain->bytes.data() + (cell - chain->vaddr), 8);
    CHECK(v >= m.pool_base);
    CHECK(v < m.pool_end);
  }
  CHECK(m.true_gadget_items > 0);
  CHECK(m.pool_count == r.pool.size());
}

TEST_CASE("the conditional branch is recorded at the manifest") {
  ObfResult r = build(kDiamond);
  const ManifestFunction& mf = r.mat.manifest.funcs[0];
  bool cond = false;
  for (const ManifestBranch& b : mf.branches) {
    if (!b.conditional) continue;
    cond = true;
    CHECK(!b.hardened);  // p1 off
    CHECK(b.addr >= mf.chain_base);
    CHECK(b.addr < mf.chain_end);
  }
  CHECK(cond);
}

TEST_CASE("builds are deterministic per seed and diverge across seeds") {
  ObfConfig cfg;
  cfg.seed = 5;
  ObfResult a = build(kDiamond, cfg);
  ObfResult b = build(kDiamond, cfg);
  CHECK(save_image(a.mat.image) == save_image(b.mat.image));
  CHECK(save_image(a.native) == save_image(b.native));
  cfg.seed = 6;
  ObfResult c = build(kDiamond, cfg);
  CHECK(save_image(a.mat.image) != save_image(c.mat.image));
  // the baseline does not depend on the seed
  CHECK(save_image(a.native) == save_image(c.native));
}

TEST_CASE("only-lists keep everything else native") {
  std::string src =
      ".func f\n  mov rax, 1\n  add rax, 0x1111\n  add rax, 0x2222\n"
      "  add rax, 0x3333\n  add rax, 0x4444\n  ret\n"
      ".func g\n  mov rax, 2\n  add rax, 0x1111\n  add rax, 0x2222\n"
      "  add rax, 0x3333\n  add rax, 0x4444\n  ret\n";
  ObfConfig cfg;
  cfg.only = {"f"};
  ObfResult r = build(src, cfg);
  REQUIRE(r.crafted.funcs.size() == 1);
  CHECK(r.crafted.funcs[0].chain.name == "f");
  REQUIRE(r.crafted.untranslated.size() == 1);
  CHECK(r.crafted.untranslated[0] == "g");
  CHECK(r.crafted.untranslated_why[0] == "excluded by configuration");
  CHECK(r.mat.image.has_symbol("f.chain"));
  CHECK(!r.mat.image.has_symbol("g.chain"));
  // g still runs natively inside the obfuscated image
  CHECK(run_native(r.mat.image, "g", {}).rax() == 0x2 + 0xaaaa);
}

TEST_CASE("bodies below the pivot stub stay native") {
  ObfResult r = build(".func tiny\n  mov rax, 1\n  ret\n");
  CHECK(r.crafted.funcs.empty());
  REQUIRE(r.crafted.untranslated.size() == 1);
  CHECK(r.crafted.untranslated_why[0] == "body smaller than the pivot stub");
  CHECK(run_native(r.mat.image, "tiny", {}).rax() == 1);
}

TEST_CASE("untranslatable instructions leave the function native") {
  std::string src =
      ".func f\n  mov rax, 1\n  add rax, 0x1111\n  add rax, 0x2222\n"
      "  add rax, 0x3333\n  add rax, 0x4444\n  hlt\n";
  ObfResult r = build(src);
  CHECK(r.crafted.funcs.empty());
  REQUIRE(r.crafted.untranslated.size() == 1);
  CHECK(r.crafted.untranslated_why[0].find("Untranslatable") !=
        std::string::npos);
  CHECK(r.crafted.untranslated_why[0].find("hlt") != std::string::npos);
}

TEST_CASE("craft statistics reflect the work done") {
  ObfResult plain = build(kDiamond);
  const CraftStats& s = plain.crafted.funcs[0].stats;
  CHECK(s.roplets > 0);
  CHECK(s.items > 0);
  CHECK(s.distinct_gadgets > 0);
  CHECK(s.p1_applied == 0);
  CHECK(s.p2_edges == 0);
  CHECK(s.p3_inserted == 0);
  CHECK(s.confused_imms == 0);
  CHECK(s.native_bytes > 0);

  ObfConfig cfg;
  cfg.p1 = true;
  cfg.p2 = true;
  cfg.p3 = P3Mode::for_loop;
  cfg.confusion = true;
  ObfResult hard = build(kDiamond, cfg);
  const CraftStats& h = hard.crafted.funcs[0].stats;
  CHECK(h.p1_applied + h.p1_fallback > 0);
  CHECK(h.p2_edges > 0);
  CHECK(h.p3_inserted > 0);
  CHECK(h.confused_imms > 0);
  CHECK(h.items > s.items);  // hardening always grows the chain
}

TEST_CASE("hardened builds still agree with the baseline") {
  ObfConfig cfg;
  cfg.p1 = true;
  cfg.p2 = true;
  cfg.p3 = P3Mode::array;
  cfg.confusion = true;
  cfg.seed = 77;
  ObfResult r = build(kDiamond, cfg);
  REQUIRE(r.crafted.funcs.size() == 1);
  for (uint64_t in : {0ull, 1ull, ~0ull}) {
    RunOutputs nat = run_native(r.native, "f", {in});
    RunOutputs obf = run_obfuscated(r.mat.image, "f", {in});
    REQUIRE(obf.exit == ExitReason::ok);
    CHECK(nat.rax() == obf.rax());
  }
  // array hardening allocates opaque arrays in the dynamic data window
  const ManifestFunction& mf = r.mat.manifest.funcs[0];
  CHECK(!mf.arrays.empty());
  for (const ArraySpec& a : mf.arrays) {
    CHECK(a.cells_addr >= kDynDataAddr);
    CHECK(a.cells_addr < kGlobalsAddr);
    CHECK(a.modtab_addr >= kDynDataAddr);
    CHECK(a.m <= kArrayMaxM);
  }
}

TEST_CASE("switch dispatch is recorded with its width") {
  std::string src =
      ".func f\n"
      ".jumptable sw: a, b, c\n"
      "  mov rcx, [tab]\n"
      "  mov rax, rdi\n"
      "  and rax, 1\n"
      "  shl rax, 3\n"
      "  mov rcx, rax\n"
      "  mov rax, [tab]\n"
      "sw: jmp rax\n"
      "a: mov rax, 0x10\n"
      "  ret\n"
      "b: mov rax, 0x20\n"
      "  ret\n"
      "c: mov rax, 0x30\n"
      "  ret\n"
      ".addrtable tab: a, b, c\n";
  ObfResult r = build(src);
  REQUIRE(r.crafted.funcs.size() == 1);
  const ManifestFunction& mf = r.mat.manifest.funcs[0];
  REQUIRE(mf.switches.size() == 1);
  const ManifestSwitch& sw = mf.switches[0];
  CHECK(sw.entries.size() == 3);
  CHECK((sw.width == 1 || sw.width == 2 || sw.width == 4));
  for (const auto& [text, mirror, chain] : sw.entries) {
    CHECK(mirror == text + kRevTabDelta);
    CHECK(chain >= mf.chain_base);
    CHECK(chain < mf.chain_end);
  }
}

TEST_CASE("config validation") {
  ObfConfig cfg;
  cfg.n = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = {};
  cfg.n = 8;
  cfg.s = 4;  // n residues cannot exceed the stride
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = {};
  cfg.m = 64;  // modulus above kArrayMaxM breaks the cell bound
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = {};
  cfg.k = 1.5;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = {};
  cfg.eta_max = -1;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = {};
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.wants("anything"));
  cfg.only = {"a"};
  CHECK(cfg.wants("a"));
  CHECK(!cfg.wants("b"));
}

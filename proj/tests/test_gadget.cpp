#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "error.hpp"
#include "gadget.hpp"
#include "layout.hpp"

using namespace rf;

namespace {

MicroInstr mk(Op op, Reg r1 = Reg::rax, Reg r2 = Reg::rax, int32_t disp = 0,
              uint64_t imm = 0, Cond cc = Cond::e) {
  return MicroInstr{op, r1, r2, disp, imm, cc};
}

const MicroInstr kRet = mk(Op::ret);

}  // namespace

TEST_CASE("universal pool is a pure function of the seed") {
  GadgetPool a = build_universal_pool(7);
  GadgetPool b = build_universal_pool(7);
  CHECK(a.size() == b.size());
  CHECK(a.dump() == b.dump());
  auto ea = a.encode_text(kTextBase + 0x1000);
  auto eb = b.encode_text(kTextBase + 0x1000);
  CHECK(ea == eb);
  CHECK(a.dump() == b.dump());  // addresses included once encoded

  GadgetPool c = build_universal_pool(8);
  c.encode_text(kTextBase + 0x1000);
  CHECK(c.dump() != a.dump());  // layout order shuffles with the seed
}

TEST_CASE("match and require") {
  GadgetPool pool = build_universal_pool(3);
  std::vector<MicroInstr> popper{mk(Op::pop_r, Reg::rax), kRet};
  const Gadget* g = pool.match(popper);
  REQUIRE(g != nullptr);
  CHECK(g->instrs == popper);
  CHECK(&pool.require(popper) != nullptr);
  CHECK(pool.match({mk(Op::hlt)}) == nullptr);
  try {
    pool.require({mk(Op::mov_ri, Reg::rax, Reg::rax, 0, 1), kRet});
    FAIL("load-immediate is pop data, not a pool pattern");
  } catch (const Error& e) {
    CHECK(e.code == Errc::no_gadget);
    CHECK(std::string(e.what()).find("no gadget for: mov rax,") !=
          std::string::npos);
  }
}

TEST_CASE("patterns dedup to one copy, so match is deterministic") {
  GadgetPool pool = build_universal_pool(5);
  std::vector<MicroInstr> popper{mk(Op::pop_r, Reg::rdi), kRet};
  const Gadget* first = pool.match(popper);
  for (int i = 0; i < 16; ++i) CHECK(pool.match(popper) == first);
}

TEST_CASE("every crafter pattern family is present") {
  GadgetPool pool = build_universal_pool(1);
  const Reg some[] = {Reg::rax, Reg::rcx, Reg::rbp, Reg::r9, Reg::r15};
  for (Reg a : some) {
    CHECK(pool.match({mk(Op::pop_r, a), kRet}));
    CHECK(pool.match({mk(Op::neg_r, a), kRet}));
    CHECK(pool.match({mk(Op::not_r, a), kRet}));
    CHECK(pool.match({mk(Op::mov_ri, a, Reg::rax, 0, 0), kRet}));  // zero
    CHECK(pool.match({mk(Op::add_rr, Reg::rsp, a), kRet}));  // dispatch
    CHECK(pool.match({mk(Op::xchg_rm, Reg::rsp, a), kRet}));
    for (int c = 1; c <= 7; ++c)
      CHECK(pool.match({mk(Op::shl_ri, a, Reg::rax, 0, c), kRet}));
    CHECK(pool.match({mk(Op::shr_ri, a, Reg::rax, 0, 63), kRet}));
    CHECK(pool.match({mk(Op::sub_ri, a, Reg::rax, 0, kConfusionBias), kRet}));
    for (Reg b : some) {
      CHECK(pool.match({mk(Op::mov_rr, a, b), kRet}));
      CHECK(pool.match({mk(Op::add_rr, a, b), kRet}));
      CHECK(pool.match({mk(Op::sub_rr, a, b), kRet}));
      CHECK(pool.match({mk(Op::xor_rr, a, b), kRet}));
      CHECK(pool.match({mk(Op::cmp_rr, a, b), kRet}));
      CHECK(pool.match({mk(Op::mov_rm, a, b, 0), kRet}));
      CHECK(pool.match({mk(Op::mov_mr, a, b, 0), kRet}));
      for (Cond cc : {Cond::e, Cond::ne, Cond::b, Cond::ae, Cond::be, Cond::a})
        CHECK(pool.match({mk(Op::cmov_rr, a, b, 0, 0, cc), kRet}));
    }
  }
  // same-register forms exist: they are how chains zero and test
  CHECK(pool.match({mk(Op::xor_rr, Reg::rax, Reg::rax), kRet}));
  CHECK(pool.match({mk(Op::sub_rr, Reg::r12, Reg::r12), kRet}));
  CHECK(pool.match({mk(Op::test_rr, Reg::rdi, Reg::rdi), kRet}));
  CHECK(pool.match({mk(Op::add_rr, Reg::rcx, Reg::rcx), kRet}));
  // sub-cell rsp hops and fixed disposal steps
  for (int d = 1; d <= 7; ++d)
    CHECK(pool.match({mk(Op::lea, Reg::rsp, Reg::rsp, d), kRet}));
  for (int64_t d : {8, 16, 24})
    CHECK(pool.match({mk(Op::add_ri, Reg::rsp, Reg::rax, 0, uint64_t(d)), kRet}));
  CHECK(pool.match({mk(Op::pop_r, Reg::r10), mk(Op::pop_r, Reg::r11), kRet}));
  // nothing binds rsp as an ordinary operand
  CHECK(!pool.match({mk(Op::pop_r, Reg::rsp), kRet}));
  CHECK(!pool.match({mk(Op::mov_rr, Reg::rax, Reg::rsp), kRet}));
}

TEST_CASE("world-switch sequences live in the pool") {
  GadgetPool pool = build_universal_pool(42);
  CHECK(pool.match(seq_unpivot_ret()));
  CHECK(pool.match(seq_call_out()));
  CHECK(pool.match(seq_call_resume()));
  CHECK(pool.match(seq_tail_jump()));
  // all four hardwire the scratch slot address
  for (auto seq : {seq_unpivot_ret(), seq_call_out(), seq_call_resume(),
                   seq_tail_jump()}) {
    bool touches_ss = false;
    for (const MicroInstr& mi : seq)
      touches_ss |= mi.imm == kSsAddr;
    CHECK(touches_ss);
  }
  // the non-call forms end in ret or jmp reg as a chain needs
  CHECK(seq_unpivot_ret().back().op == Op::ret);
  CHECK(seq_call_out().back().op == Op::jmp_r);
  CHECK(seq_tail_jump().back().op == Op::jmp_r);
}

TEST_CASE("add dedups and validates") {
  GadgetPool pool(99);
  std::vector<MicroInstr> seq{mk(Op::mov_rr, Reg::rax, Reg::rbx), kRet};
  const Gadget& g1 = pool.add(seq);
  const Gadget& g2 = pool.add(seq);
  CHECK(g1.id == g2.id);
  CHECK(pool.size() == 1);
  try {
    pool.add({mk(Op::mov_rr, Reg::rax, Reg::rbx)});
    FAIL("a gadget that does not end in ret/jmp reg is not a gadget");
  } catch (const Error& e) {
    CHECK(e.code == Errc::internal);
  }
}

TEST_CASE("encode_text lays gadgets out and freezes the pool") {
  GadgetPool pool = build_universal_pool(17);
  size_t n = pool.size();
  CHECK(!pool.frozen());
  uint64_t base = kTextBase + 0x2000;
  std::vector<uint8_t> blob = pool.encode_text(base);
  CHECK(pool.frozen());
  CHECK(pool.size() == n);

  size_t body_bytes = 0;
  for (const Gadget& g : pool.all()) {
    REQUIRE(g.addr >= base);
    REQUIRE(g.addr + 1 <= base + blob.size());
    // the gadget's own bytes decode back to its sequence
    size_t off = g.addr - base;
    for (const MicroInstr& mi : g.instrs) {
      auto d = decode(blob, off);
      REQUIRE(d.has_value());
      CHECK(d->instr == mi);
      off += d->length;
      body_bytes += d->length;
    }
  }
  // junk gaps push the blob past the packed size
  CHECK(blob.size() > body_bytes);

  try {
    pool.add({mk(Op::pop_r, Reg::rax), kRet});
    FAIL("the pool must reject growth after layout");
  } catch (const Error& e) {
    CHECK(e.code == Errc::internal);
  }
}

TEST_CASE("gadget text formatting") {
  GadgetPool pool(1);
  const Gadget& g = pool.add({mk(Op::pop_r, Reg::rdi), kRet});
  CHECK(g.text() == "pop rdi ; ret");
}

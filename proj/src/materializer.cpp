#include "materializer.hpp"

#include <algorithm>
#include <cstring>

#include "error.hpp"
#include "hardening.hpp"
#include "layout.hpp"
#include "rng.hpp"

namespace rf {

namespace {

MicroInstr ins(Op op, Reg r1 = Reg::rax, Reg r2 = Reg::rax, int32_t disp = 0,
               uint64_t imm = 0) {
  return MicroInstr{op, r1, r2, disp, imm, Cond::e};
}

void put_u64(std::vector<uint8_t>& buf, uint64_t off, uint64_t v) {
  for (int i = 0; i < 8; i++) buf[off + i] = uint8_t(v >> (8 * i));
}

std::vector<MicroInstr> pivot_stub(uint64_t chain_addr) {
  return {
      ins(Op::mov_ri, Reg::r11, Reg::rax, 0, kSsAddr),
      ins(Op::add_mi, Reg::r11, Reg::rax, 0, 8),   // one level deeper
      ins(Op::add_rm, Reg::r11, Reg::r11),         // r11 = active slot
      ins(Op::mov_mr, Reg::r11, Reg::rsp),         // park the native rsp
      ins(Op::mov_ri, Reg::rsp, Reg::rax, 0, chain_addr),
      ins(Op::ret),
  };
}

}  // namespace

size_t pivot_stub_size() {
  size_t n = 0;
  for (const MicroInstr& i : pivot_stub(0)) n += encoded_length(i.op);
  return n;
}

namespace {

// Per-function byte layout of a relaxed chain.
struct ChainLayout {
  uint64_t base = 0, end = 0;
  std::vector<uint64_t> block_start;
  std::vector<std::vector<uint64_t>> item_off;  // per block, items + 1 entries

  uint64_t label_addr(const FunctionChain& c, uint32_t id) const {
    auto it = c.labels.find(id);
    if (it == c.labels.end()) fail(Errc::internal, "unbound chain label");
    return block_start[it->second.block] +
           item_off[it->second.block][it->second.item];
  }
};

// Fallthrough templates always resolve to a zero delta because the crafted
// block order keeps the fall block adjacent, so they are dropped wholesale.
void relax(FunctionChain& c) {
  for (size_t bi = 0; bi < c.blocks.size(); bi++) {
    ChainBlock& cb = c.blocks[bi];
    for (size_t si = 0; si < c.branches.size(); si++) {
      BranchSite& s = c.branches[si];
      if (s.block != bi || !s.removable) continue;
      if (s.item_index + s.item_count != cb.items.size())
        fail(Errc::internal, "removable template not trailing");
      cb.items.resize(s.item_index);
      for (auto& [id, pos] : c.labels)
        if (pos.block == bi && pos.item > cb.items.size())
          pos.item = cb.items.size();
      c.branches.erase(c.branches.begin() + si);
      break;
    }
  }
}

ChainLayout lay_out(const FunctionChain& c, uint64_t base) {
  ChainLayout lo;
  lo.base = base;
  uint64_t cur = base;
  for (const ChainBlock& cb : c.blocks) {
    lo.block_start.push_back(cur);
    std::vector<uint64_t> offs;
    uint64_t off = 0;
    for (const ChainItem& it : cb.items) {
      offs.push_back(off);
      off += 8 + it.gap_after;
    }
    offs.push_back(off);
    lo.item_off.push_back(std::move(offs));
    cur += off;
  }
  lo.end = cur;
  return lo;
}

void render_chain(const FunctionChain& c, const ChainLayout& lo,
                  const GadgetPool& pool, std::vector<uint8_t>& buf,
                  uint64_t buf_base) {
  for (size_t bi = 0; bi < c.blocks.size(); bi++) {
    const ChainBlock& cb = c.blocks[bi];
    for (size_t k = 0; k < cb.items.size(); k++) {
      const ChainItem& it = cb.items[k];
      uint64_t addr = lo.block_start[bi] + lo.item_off[bi][k];
      uint64_t v = 0;
      switch (it.kind) {
        case ItemKind::gadget:
          v = pool.all()[it.value].addr;
          if (it.ref.biased) v += kConfusionBias;
          break;
        case ItemKind::imm:
          v = it.value;
          break;
        case ItemKind::label: {
          v = lo.label_addr(c, it.ref.id) + uint64_t(it.ref.addend);
          if (it.ref.anchor) v -= lo.label_addr(c, it.ref.anchor);
          if (it.ref.biased) v += kConfusionBias;
          break;
        }
        case ItemKind::slot:
          continue;  // stays seeded junk
      }
      put_u64(buf, addr - buf_base, v);
    }
  }
}

void write_data_common(const Program& prog, std::vector<uint8_t>& data) {
  for (const Global& g : prog.globals)
    put_u64(data, g.addr - kDataBase, g.value);
  for (const AddrTable& t : prog.tables)
    for (size_t i = 0; i < t.entries.size(); i++)
      put_u64(data, t.addr + 8 * i - kDataBase, t.entries[i]);
}

uint64_t data_extent(const Program& prog, uint64_t dyn_cursor) {
  uint64_t end = std::max(prog.data_end, kGlobalsAddr);
  end = std::max(end, dyn_cursor);
  if (end > kDataBase + kDataSize) fail(Errc::layout, "data region exhausted");
  return end;
}

}  // namespace

ProgramImage materialize_native(const Program& prog) {
  ProgramImage img;

  ImgSection text;
  text.name = "text";
  text.vaddr = kTextBase;
  text.bytes.assign(prog.text_end - kTextBase, 0);
  for (const Function& fn : prog.funcs) {
    std::vector<uint8_t> enc;
    for (const AsmInstr& ai : fn.instrs) encode_to(ai.mi, enc);
    std::copy(enc.begin(), enc.end(),
              text.bytes.begin() + (fn.entry - kTextBase));
    img.symbols[fn.name] = fn.entry;
  }
  img.sections.push_back(std::move(text));

  ImgSection data;
  data.name = "data";
  data.vaddr = kDataBase;
  data.bytes.assign(data_extent(prog, kDynDataAddr) - kDataBase, 0);
  write_data_common(prog, data.bytes);
  img.sections.push_back(std::move(data));

  for (const Global& g : prog.globals) img.symbols["g." + g.name] = g.addr;
  return img;
}

MaterializedImage materialize(const Program& prog, CraftedProgram& crafted,
                              GadgetPool& pool, const ObfConfig& cfg) {
  if (pool.frozen()) fail(Errc::internal, "pool already materialized");
  MaterializedImage out;
  Manifest& mf = out.manifest;
  mf.seed = cfg.seed;

  const size_t stub_len = pivot_stub_size();
  for (const CraftedFunction& cf : crafted.funcs) {
    const Function* fn = prog.find(cf.chain.name);
    if (!fn) fail(Errc::internal, "crafted function missing from program");
    if (fn->body_size < stub_len)
      fail(Errc::stub_too_large,
           fn->name + ": body smaller than the pivot stub");
  }

  // Text: native bodies, junk over translated ones, pool appended.
  uint64_t pool_base = (prog.text_end + 15) & ~15ull;
  std::vector<uint8_t> pool_blob = pool.encode_text(pool_base);
  uint64_t text_end = pool_base + pool_blob.size();
  if (text_end > kTextBase + kTextSize)
    fail(Errc::layout, "text region exhausted by the pool");

  Rng junk(mix64(cfg.seed, 0x6a756e6b));
  std::vector<uint8_t> text(text_end - kTextBase);
  for (auto& b : text) b = uint8_t(0xc0 | (junk.next() & 0x3f));
  for (const Function& fn : prog.funcs) {
    bool translated = false;
    for (const CraftedFunction& cf : crafted.funcs)
      if (cf.chain.name == fn.name) translated = true;
    if (translated) continue;
    std::vector<uint8_t> enc;
    for (const AsmInstr& ai : fn.instrs) encode_to(ai.mi, enc);
    std::copy(enc.begin(), enc.end(), text.begin() + (fn.entry - kTextBase));
  }
  std::copy(pool_blob.begin(), pool_blob.end(),
            text.begin() + (pool_base - kTextBase));

  // Chains: relax, pack, resolve.
  std::vector<ChainLayout> layouts;
  uint64_t cursor = kChainBase;
  for (CraftedFunction& cf : crafted.funcs) {
    relax(cf.chain);
    uint64_t base = (cursor + 15) & ~15ull;
    layouts.push_back(lay_out(cf.chain, base));
    cursor = layouts.back().end;
  }
  if (cursor > kChainBase + kChainSize)
    fail(Errc::layout, "chain region exhausted");
  std::vector<uint8_t> chain_bytes(cursor - kChainBase);
  for (auto& b : chain_bytes) b = uint8_t(junk.next());
  for (size_t fi = 0; fi < crafted.funcs.size(); fi++)
    render_chain(crafted.funcs[fi].chain, layouts[fi], pool, chain_bytes,
                 kChainBase);

  // Pivot stubs, now that chain bases exist.
  for (size_t fi = 0; fi < crafted.funcs.size(); fi++) {
    const Function* fn = prog.find(crafted.funcs[fi].chain.name);
    std::vector<uint8_t> enc;
    for (const MicroInstr& i : pivot_stub(layouts[fi].base)) encode_to(i, enc);
    std::copy(enc.begin(), enc.end(), text.begin() + (fn->entry - kTextBase));
  }

  // Data: globals and tables as assembled, plus the crafted structures.
  std::vector<uint8_t> data(data_extent(prog, crafted.dyn_cursor) - kDataBase,
                            0);
  write_data_common(prog, data);
  for (const CraftedFunction& cf : crafted.funcs) {
    for (const ArraySpec& a : cf.chain.arrays) {
      std::vector<uint64_t> cells = build_opaque_array(a);
      for (size_t i = 0; i < cells.size(); i++)
        put_u64(data, a.cells_addr + 8 * i - kDataBase, cells[i]);
      std::vector<uint64_t> tab = build_array_modtab(a);
      for (size_t i = 0; i < tab.size(); i++)
        put_u64(data, a.modtab_addr + 8 * i - kDataBase, tab[i]);
    }
  }

  // Mirror entries for translated indirect jumps.
  std::map<uint64_t, uint8_t> mirror_bytes;
  for (size_t fi = 0; fi < crafted.funcs.size(); fi++) {
    const FunctionChain& c = crafted.funcs[fi].chain;
    const ChainLayout& lo = layouts[fi];
    for (const SwitchSite& sw : c.switches) {
      uint64_t anchor = lo.label_addr(c, sw.anchor_label);
      for (const auto& [taddr, label] : sw.targets) {
        uint64_t target = lo.label_addr(c, label);
        int64_t delta = int64_t(target - anchor);
        if (delta % 8 != 0) fail(Errc::internal, "unaligned dispatch delta");
        int64_t v = delta / 8;
        int64_t lim = int64_t(1) << (8 * sw.width - 1);
        if (v < -lim || v >= lim)
          fail(Errc::width, c.name + ": mirror entry does not fit width " +
                                std::to_string(sw.width));
        uint64_t at = taddr + kRevTabDelta;
        if (at < kRevTabAddr || at + sw.width > kRevTabAddr + kRevTabSize)
          fail(Errc::layout, "mirror entry outside the reverse table");
        for (int k = 0; k < sw.width; k++) {
          uint8_t byte = uint8_t(uint64_t(v) >> (8 * k));
          auto [it, fresh] = mirror_bytes.emplace(at + k, byte);
          if (!fresh && it->second != byte)
            fail(Errc::width, c.name + ": conflicting mirror entries");
        }
      }
    }
  }
  for (const auto& [at, byte] : mirror_bytes) data[at - kDataBase] = byte;

  // Assemble the image.
  ImgSection stext{"text", kTextBase, std::move(text)};
  ImgSection sdata{"data", kDataBase, std::move(data)};
  ImgSection schain{"chain", kChainBase, std::move(chain_bytes)};
  out.image.sections.push_back(std::move(stext));
  out.image.sections.push_back(std::move(sdata));
  out.image.sections.push_back(std::move(schain));
  for (const Function& fn : prog.funcs) out.image.symbols[fn.name] = fn.entry;
  for (const Global& g : prog.globals)
    out.image.symbols["g." + g.name] = g.addr;
  for (size_t fi = 0; fi < crafted.funcs.size(); fi++)
    out.image.symbols[crafted.funcs[fi].chain.name + ".chain"] =
        layouts[fi].base;
  out.image.symbols["pool.base"] = pool_base;
  out.image.symbols["pool.end"] = text_end;

  // Manifest.
  mf.pool_base = pool_base;
  mf.pool_end = text_end;
  mf.pool_count = pool.size();
  mf.chain_end = cursor;
  mf.untranslated = crafted.untranslated;
  mf.untranslated_why = crafted.untranslated_why;
  for (size_t fi = 0; fi < crafted.funcs.size(); fi++) {
    const CraftedFunction& cf = crafted.funcs[fi];
    const ChainLayout& lo = layouts[fi];
    ManifestFunction m;
    m.name = cf.chain.name;
    m.entry = prog.find(m.name)->entry;
    m.chain_base = lo.base;
    m.chain_end = lo.end;
    m.arrays = cf.chain.arrays;
    m.stats = cf.stats;
    for (size_t bi = 0; bi < cf.chain.blocks.size(); bi++) {
      const ChainBlock& cb = cf.chain.blocks[bi];
      ManifestBlock b;
      b.id = cb.block_id;
      b.start = lo.block_start[bi];
      b.body = lo.block_start[bi] + lo.item_off[bi][cb.prologue_items];
      b.end = lo.block_start[bi] + lo.item_off[bi][cb.items.size()];
      m.blocks.push_back(b);
    }
    for (const BranchSite& s : cf.chain.branches) {
      ManifestBranch b;
      b.block = s.block;
      b.addr = lo.block_start[s.block] + lo.item_off[s.block][s.item_index];
      b.conditional = s.conditional;
      b.hardened = s.hardened;
      b.cc = s.cc;
      m.branches.push_back(b);
    }
    for (const SwitchSite& sw : cf.chain.switches) {
      ManifestSwitch msw;
      msw.anchor = lo.label_addr(cf.chain, sw.anchor_label);
      msw.width = sw.width;
      for (const auto& [taddr, label] : sw.targets)
        msw.entries.emplace_back(taddr, taddr + kRevTabDelta,
                                 lo.label_addr(cf.chain, label));
      m.switches.push_back(msw);
    }
    for (size_t bi = 0; bi < cf.chain.blocks.size(); bi++) {
      const ChainBlock& cb = cf.chain.blocks[bi];
      for (size_t k = 0; k < cb.items.size(); k++)
        if (cb.items[k].kind == ItemKind::gadget) {
          m.gadget_addrs.push_back(lo.block_start[bi] + lo.item_off[bi][k]);
          mf.true_gadget_items++;
        }
    }
    mf.funcs.push_back(std::move(m));
  }
  return out;
}

}  // namespace rf

#include "hardening.hpp"

#include <algorithm>
#include <cassert>

#include "crafter.hpp"
#include "error.hpp"

namespace rf {

namespace {

MicroInstr ins(Op op, Reg r1 = Reg::rax, Reg r2 = Reg::rax, int32_t disp = 0,
               uint64_t imm = 0, Cond cc = Cond::e) {
  return MicroInstr{op, r1, r2, disp, imm, cc};
}

uint64_t pow2_floor(uint64_t v) {
  uint64_t p = 1;
  while (p * 2 <= v) p *= 2;
  return p;
}

// Mixes the live input-derived registers into `s`. The value itself is
// irrelevant: only the residue invariant of the array matters, so any
// data-dependent index in [0, p') is as good as any other.
void mix_symbolic(Crafter& c, Crafter::Scratch& sc, Reg s,
                  const std::vector<Reg>& xs, uint64_t p2floor) {
  if (xs.empty()) {
    c.pop_imm(s, c.rng.below(p2floor), "static column");
  } else {
    c.movrr(s, xs[0]);
    for (size_t k = 1; k < xs.size(); k++)
      c.rr(c.rng.chance(0.5) ? Op::xor_rr : Op::add_rr, s, xs[k]);
  }
  Reg t = sc.take();
  c.pop_imm(t, p2floor - 1, "column mask");
  c.rr(Op::and_rr, s, t);
  sc.release(t);
}

// Loads modtab[cells[b + j*s]] into `idx` where j arrives in `idx` itself.
// Uses one extra scratch register.
void load_residue(Crafter& c, Crafter::Scratch& sc, Reg idx, int b) {
  const ArraySpec& a = c.array;
  Reg t = sc.take();
  if (b != 0) {
    c.pop_imm(t, static_cast<uint64_t>(b), "row");
    c.rr(Op::add_rr, idx, t);
  }
  c.shl_small(idx, 3);
  c.pop_imm(t, a.cells_addr, "cells");
  c.rr(Op::add_rr, idx, t);
  c.load0(idx, idx);
  c.shl_small(idx, 3);
  c.pop_imm(t, a.modtab_addr, "remainders");
  c.rr(Op::add_rr, idx, t);
  c.load0(idx, idx);
  sc.release(t);
}

}  // namespace

// --- P1: opaque-array dispatch --------------------------------------------

bool p1_dispatch(Crafter& c, int ordinal, bool conditional, Cond cc,
                 uint32_t taken_label, size_t term_instr) {
  if (ordinal >= c.array.n) fail(Errc::internal, "dispatch ordinal overflow");
  Crafter::Scratch sc(c, c.dead_for(term_instr), RegSet{});
  if (sc.capacity() < (conditional ? 3 : 2)) return false;

  const ArraySpec& a = c.array;
  uint64_t a_b = residue_of(a, ordinal);
  std::vector<Reg> xs = c.symbolic_at(term_instr);
  size_t b = c.chain.blocks.size() - 1;
  size_t start = c.chain.blocks[b].items.size();

  Reg flags = Reg::rax;
  if (conditional) {
    // The branch condition has to outlive the index arithmetic below.
    flags = sc.take();
    Reg u = sc.take(), v = sc.take();
    c.flag_window = true;
    c.zero(flags);
    c.pop_imm(u, 1);
    c.cmov(Cond::b, flags, u);
    c.zero(v);
    c.pop_imm(u, 2);
    c.cmov(Cond::ne, v, u);
    c.rr(Op::or_rr, flags, v);
    c.flag_window = false;
    sc.release(u);
    sc.release(v);
  }

  Reg s = sc.take();
  mix_symbolic(c, sc, s, xs, pow2_floor(static_cast<uint64_t>(a.p)));
  Reg idx = sc.take();
  c.mul_const(idx, s, static_cast<uint64_t>(a.s));
  sc.release(s);
  load_residue(c, sc, idx, ordinal);

  if (conditional) {
    c.flag_window = true;
    c.shr1(flags);
    sc.release(flags);
  }
  Reg l = sc.take();
  size_t val = c.pop_label(
      l, LabelRef{taken_label, -static_cast<int64_t>(a_b), 0, false},
      "hardened taken delta");
  if (conditional) {
    Reg z = sc.take();
    c.pop_imm(z, 0 - a_b, "hardened fall delta");
    c.cmov(negate(cc), l, z);
    c.flag_window = false;
    sc.release(z);
  }
  c.rr(Op::add_rr, l, idx);
  sc.release(idx);
  c.add_rsp_reg(l);
  uint32_t anchor = c.here_label();
  c.chain.blocks[b].items[val].ref.anchor = anchor;

  BranchSite site;
  site.block = b;
  site.item_index = start;
  site.item_count = c.chain.blocks[b].items.size() - start;
  site.conditional = conditional;
  site.cc = cc;
  site.target_label = taken_label;
  site.hardened = true;
  c.chain.branches.push_back(site);
  return true;
}

// --- P2: stack-delta prologue ---------------------------------------------

bool p2_prologue(Crafter& c, size_t block, const P2Plan& plan) {
  size_t first = c.cf.blocks[block].first;
  RegSet avail = c.dead_for(first) - plan.keep;
  Crafter::Scratch sc(c, avail, RegSet{});
  if (sc.capacity() < (plan.diff_form ? 2 : 3)) return false;

  Reg d = sc.take();
  c.movrr(d, plan.a);
  if (plan.b_is_imm) {
    if (plan.b_imm != 0) {
      Reg t = sc.take();
      c.pop_imm(t, plan.b_imm);
      c.rr(Op::sub_rr, d, t);
      sc.release(t);
    }
  } else {
    c.rr(Op::sub_rr, d, plan.b);
  }

  if (plan.diff_form) {
    // Legit entry came through the equal side: d == 0 and the whole product
    // vanishes. A flipped branch lands here with d != 0 and walks off.
    Reg acc = sc.take();
    c.mul_const(acc, d, static_cast<uint64_t>(plan.x));
    c.add_rsp_reg(acc);
    sc.release(acc);
  } else {
    Reg u = sc.take(), w = sc.take();
    c.not_zero(d, u, w);       // d = (a != b), which legit entry makes 1
    c.pop_imm(u, 1);
    c.rr(Op::sub_rr, u, d);    // u = 1 - d
    c.mul_const(w, u, static_cast<uint64_t>(plan.x));
    c.add_rsp_reg(w);
    sc.release(u);
    sc.release(w);
  }
  sc.release(d);
  return true;
}

// --- P3: artificial states ------------------------------------------------

namespace {

bool p3_for_loop(Crafter& c, size_t block) {
  size_t first = c.cf.blocks[block].first;
  Crafter::Scratch sc(c, c.dead_for(first), RegSet{});
  if (sc.capacity() < 4) return false;

  std::vector<Reg> xs = c.symbolic_at(first);
  Reg cnt = sc.take(), acc = sc.take(), t = sc.take();

  // Trip count (x & 0xff) + 1: every input byte value walks the loop a
  // different number of times.
  if (xs.empty())
    c.pop_imm(cnt, 1 + c.rng.below(0xff));
  else
    c.movrr(cnt, xs[0]);
  c.pop_imm(t, 0xff);
  c.rr(Op::and_rr, cnt, t);
  c.pop_imm(t, 1);
  c.rr(Op::add_rr, cnt, t);
  c.pop_imm(acc, c.rng.next() & 0xffff, "loop state");

  uint32_t head = c.here_label();
  bool parity = c.rng.chance(0.5);
  if (parity) {
    c.movrr(t, cnt);
    Reg u = sc.take();
    c.pop_imm(u, 1);
    c.rr(Op::and_rr, t, u);
    c.rr(Op::test_rr, t, t);
    c.flag_window = true;
    c.pop_imm(u, 3);
    c.pop_imm(t, static_cast<uint64_t>(-1));
    c.cmov(Cond::e, u, t);
    c.flag_window = false;
    c.rr(Op::add_rr, acc, u);
    sc.release(u);
  } else {
    c.pop_imm(t, 0xab00);
    c.rr(Op::and_rr, acc, t);
    c.rr(Op::add_rr, acc, cnt);
  }
  c.pop_imm(t, 1);
  c.rr(Op::sub_rr, cnt, t);  // sets ZF on the last trip

  // Inline back-branch: the template registers come from this scratch set,
  // not a fresh one, so the loop state stays untouched.
  size_t cb = c.chain.blocks.size() - 1;
  size_t start = c.chain.blocks[cb].items.size();
  Reg l = t;
  Reg z = sc.take();
  c.flag_window = true;
  size_t val = c.pop_label(l, LabelRef{head, 0, 0, false}, "loop back delta");
  c.zero(z);
  c.cmov(negate(Cond::ne), l, z);
  c.flag_window = false;
  c.add_rsp_reg(l);
  uint32_t anchor = c.here_label();
  c.chain.blocks[cb].items[val].ref.anchor = anchor;

  BranchSite site;
  site.block = cb;
  site.item_index = start;
  site.item_count = c.chain.blocks[cb].items.size() - start;
  site.conditional = true;
  site.cc = Cond::ne;
  site.target_label = head;
  c.chain.branches.push_back(site);

  sc.release(cnt);
  sc.release(acc);
  sc.release(t);
  sc.release(z);
  return true;
}

bool p3_array(Crafter& c, size_t block) {
  size_t first = c.cf.blocks[block].first;
  Crafter::Scratch sc(c, c.dead_for(first), RegSet{});
  const ArraySpec& a = c.array;
  std::vector<Reg> xs = c.symbolic_at(first);
  uint64_t p2f = pow2_floor(static_cast<uint64_t>(a.p));
  int family = static_cast<int>(c.rng.below(3));
  int cap = sc.capacity();
  if (family == 0 && cap < 3) family = 2;
  if (family == 1 && cap < 4) family = 2;
  if (cap < 2) return false;

  int b0 = static_cast<int>(c.rng.below(static_cast<uint64_t>(a.n)));
  uint64_t j0 = c.rng.below(static_cast<uint64_t>(a.p));
  uint64_t cell0 = a.cells_addr + 8 * (b0 + j0 * a.s);

  if (family == 0) {
    // Re-base one cell: reduce to the residue, then add back a data-driven
    // multiple of m. 4m stays under the cell bound by the m <= 63 cap.
    Reg v = sc.take(), u = sc.take(), w = sc.take();
    c.pop_imm(v, cell0);
    c.load0(v, v);
    c.shl_small(v, 3);
    c.pop_imm(u, a.modtab_addr);
    c.rr(Op::add_rr, v, u);
    c.load0(v, v);
    if (xs.empty())
      c.pop_imm(u, c.rng.below(4));
    else
      c.movrr(u, xs[0]);
    c.pop_imm(w, 3);
    c.rr(Op::and_rr, u, w);
    c.mul_const(w, u, static_cast<uint64_t>(a.m));
    c.rr(Op::add_rr, v, w);
    c.pop_imm(u, cell0);
    c.store0(u, v);
    sc.release(v);
    sc.release(u);
    sc.release(w);
    return true;
  }
  if (family == 1) {
    // Swap two cells of one residue row; the invariant is column-blind.
    Reg u = sc.take(), t = sc.take(), v = sc.take(), w = sc.take();
    if (xs.empty())
      c.pop_imm(u, c.rng.below(p2f));
    else
      c.movrr(u, xs[0]);
    c.pop_imm(w, p2f - 1);
    c.rr(Op::and_rr, u, w);
    c.movrr(t, u);
    c.mul_const(v, u, static_cast<uint64_t>(a.s));
    c.shl_small(v, 3);
    c.pop_imm(w, a.cells_addr + 8 * b0);
    c.rr(Op::add_rr, v, w);  // first cell address
    c.pop_imm(w, 1);
    c.rr(Op::add_rr, t, w);
    c.pop_imm(w, p2f - 1);
    c.rr(Op::and_rr, t, w);
    c.mul_const(u, t, static_cast<uint64_t>(a.s));
    c.shl_small(u, 3);
    c.pop_imm(w, a.cells_addr + 8 * b0);
    c.rr(Op::add_rr, u, w);  // neighbour cell address
    c.load0(t, v);
    c.load0(w, u);
    c.store0(v, w);
    c.store0(u, t);
    sc.release(u);
    sc.release(t);
    sc.release(v);
    sc.release(w);
    return true;
  }
  // Fold two cells into a junk cell. Sums stay under two times the cell
  // bound, which the remainder table covers.
  uint64_t cell1 =
      a.cells_addr + 8 * (c.rng.below(static_cast<uint64_t>(a.n)) +
                          c.rng.below(static_cast<uint64_t>(a.p)) * a.s);
  uint64_t junk = a.cells_addr +
                  8 * (a.n + c.rng.below(static_cast<uint64_t>(a.s - a.n)) +
                       c.rng.below(static_cast<uint64_t>(a.p)) * a.s);
  Reg t = sc.take(), u = sc.take();
  c.pop_imm(t, cell0);
  c.load0(t, t);
  c.pop_imm(u, cell1);
  c.load0(u, u);
  c.rr(Op::add_rr, t, u);
  c.shl_small(t, 3);
  c.pop_imm(u, a.modtab_addr);
  c.rr(Op::add_rr, t, u);
  c.load0(t, t);
  c.pop_imm(u, junk);
  c.store0(u, t);
  sc.release(t);
  sc.release(u);
  return true;
}

}  // namespace

bool p3_insert(Crafter& c, size_t block) {
  if (c.cfg.p3 == P3Mode::array && c.have_array) {
    if (c.array.s > c.array.n) return p3_array(c, block);
    return false;
  }
  return p3_for_loop(c, block);
}

// --- immediate confusion --------------------------------------------------

namespace {

bool is_pop_gadget(const GadgetPool& pool, uint64_t id, Reg& out) {
  const Gadget& g = pool.all()[id];
  if (g.instrs.size() != 2 || g.instrs[0].op != Op::pop_r) return false;
  out = g.instrs[0].r1;
  return true;
}

struct Insert {
  size_t pos;  // inserted before the old item at this index
  ChainItem item;
};

}  // namespace

void confuse_chain(FunctionChain& chain, GadgetPool& pool, const ObfConfig& cfg,
                   Rng& rng, CraftStats& stats) {
  if (pool.frozen()) fail(Errc::internal, "confusion after pool freeze");
  (void)cfg;

  for (size_t bi = 0; bi < chain.blocks.size(); bi++) {
    ChainBlock& cb = chain.blocks[bi];
    std::vector<Insert> inserts;

    for (size_t k = 0; k + 1 < cb.items.size(); k++) {
      if (cb.items[k].kind != ItemKind::gadget) continue;
      Reg r;
      if (!is_pop_gadget(pool, cb.items[k].value, r)) continue;
      ChainItem& v = cb.items[k + 1];
      if (v.no_confuse || v.kind == ItemKind::slot) continue;
      if (!rng.chance(0.9)) continue;

      if (v.kind == ItemKind::label) {
        // Anchored refs resolve to a small delta, so the biased form lands
        // near the bias point inside the text window. Absolute label refs
        // would not, and gadget addresses never do; both stay as they are.
        if (v.ref.anchor == 0 || v.ref.biased) continue;
        v.ref.biased = true;
        const Gadget& fix = pool.require(
            {ins(Op::sub_ri, r, Reg::rax, 0, kConfusionBias), ins(Op::ret)});
        inserts.push_back({k + 2, item_gadget(fix.id, "unbias")});
        stats.confused_imms++;
        continue;
      }
      if (v.kind != ItemKind::imm) continue;

      // Plain immediate. Bias when the shifted value stays inside the text
      // window; otherwise xor against an in-window decoy. Either way the
      // bytes on the stack read as a text address.
      uint64_t val = v.value;
      if (val + kConfusionBias - kTextBase < kTextSize && rng.chance(0.5)) {
        v.value = val + kConfusionBias;
        const Gadget& fix = pool.require(
            {ins(Op::sub_ri, r, Reg::rax, 0, kConfusionBias), ins(Op::ret)});
        inserts.push_back({k + 2, item_gadget(fix.id, "unbias")});
      } else {
        uint64_t decoy = kTextBase + rng.below(kTextSize);
        uint64_t mask = val ^ decoy;
        v.value = decoy;
        const Gadget& fix =
            pool.add({ins(Op::xor_ri, r, Reg::rax, 0, mask), ins(Op::ret)});
        inserts.push_back({k + 2, item_gadget(fix.id, "unmask")});
        stats.mask_gadgets++;
      }
      stats.confused_imms++;
    }

    if (inserts.empty()) continue;

    // Rebuild the block and shift every position that points into it.
    std::vector<ChainItem> items;
    items.reserve(cb.items.size() + inserts.size());
    size_t next = 0;
    std::vector<size_t> pos_map(cb.items.size() + 1, 0);
    for (size_t k = 0; k <= cb.items.size(); k++) {
      while (next < inserts.size() && inserts[next].pos == k)
        items.push_back(std::move(inserts[next++].item));
      pos_map[k] = items.size();
      if (k < cb.items.size()) items.push_back(std::move(cb.items[k]));
    }
    cb.items = std::move(items);
    cb.prologue_items = pos_map[cb.prologue_items];

    for (auto& [id, pos] : chain.labels)
      if (pos.block == bi) pos.item = pos_map[pos.item];
    for (BranchSite& site : chain.branches) {
      if (site.block != bi) continue;
      size_t end = pos_map[site.item_index + site.item_count];
      site.item_index = pos_map[site.item_index];
      site.item_count = end - site.item_index;
    }
  }
}

// --- array images ---------------------------------------------------------

std::vector<uint64_t> build_opaque_array(const ArraySpec& a) {
  std::vector<uint64_t> cells(static_cast<size_t>(a.s) * a.p);
  for (int j = 0; j < a.p; j++) {
    for (int b = 0; b < a.s; b++) {
      size_t idx = static_cast<size_t>(b) + static_cast<size_t>(j) * a.s;
      if (b < a.n) {
        uint64_t r = residue_of(a, b);
        uint64_t tmax = (kArrayCellBound - 1 - r) / a.m;
        uint64_t t = mix64(a.inst_seed, 0xce11, idx) % (tmax + 1);
        cells[idx] = r + static_cast<uint64_t>(a.m) * t;
      } else {
        cells[idx] = mix64(a.inst_seed, 0x6a6b, idx) % kArrayCellBound;
      }
    }
  }
  return cells;
}

std::vector<uint64_t> build_array_modtab(const ArraySpec& a) {
  std::vector<uint64_t> tab(kArrayModTabEntries);
  for (uint64_t v = 0; v < kArrayModTabEntries; v++)
    tab[v] = v % static_cast<uint64_t>(a.m);
  return tab;
}

}  // namespace rf

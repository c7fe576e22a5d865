#include "crafter.hpp"

#include <algorithm>
#include <cassert>

#include "error.hpp"
#include "hardening.hpp"
#include "materializer.hpp"

namespace rf {

namespace {

MicroInstr ins(Op op, Reg r1 = Reg::rax, Reg r2 = Reg::rax, int32_t disp = 0,
               uint64_t imm = 0, Cond cc = Cond::e) {
  return MicroInstr{op, r1, r2, disp, imm, cc};
}

RegSet all_regs_but_rsp() {
  RegSet s;
  for (int i = 0; i < kNumRegs; i++) s.add(static_cast<Reg>(i));
  s.remove(Reg::rsp);
  return s;
}

// Maps an imm ALU form to its reg-reg twin (same result, same flags).
Op rr_twin(Op op) {
  switch (op) {
    case Op::add_ri: return Op::add_rr;
    case Op::sub_ri: return Op::sub_rr;
    case Op::and_ri: return Op::and_rr;
    case Op::or_ri: return Op::or_rr;
    case Op::xor_ri: return Op::xor_rr;
    case Op::cmp_ri: return Op::cmp_rr;
    default: fail(Errc::internal, "no rr twin");
  }
}

}  // namespace

Crafter::Crafter(const Function& f, const Program& pr, GadgetPool& po,
                 const ObfConfig& co, uint64_t& dyn)
    : fn(f),
      prog(pr),
      pool(po),
      cfg(co),
      cf(build_cfg(f)),
      lm(analyze_liveness(f, cf)),
      tm(analyze_taint(f, cf)),
      rp(ropletize(f, cf, lm)),
      rng(mix64(co.seed, fnv64(f.name), 0x7c)),
      dyn_cursor(dyn) {
  chain.name = fn.name;
  p3_left_ = cfg.p3_sites;
  block_labels_.resize(cf.blocks.size());
  for (size_t b = 0; b < cf.blocks.size(); b++) block_labels_[b] = chain.new_label();

  // Dispatch-hardening prescan: fix the set of hardened sites now so the
  // array can be sized before any emission.
  size_t n_sites = 0;
  for (const Block& blk : cf.blocks) {
    const MicroInstr& t = fn.instrs[blk.last].mi;
    if (t.op == Op::jcc_abs) {
      n_sites++;
    } else if (t.op == Op::jmp_abs && t.imm >= fn.entry &&
               t.imm < fn.entry + fn.body_size) {
      if (rng.chance(cfg.k)) {
        p1_uncond_.insert(blk.last);
        n_sites++;
      }
    }
    if (t.op == Op::jmp_r) has_switch_ = true;
  }
  if (cfg.p1 && n_sites > 0) {
    int m_f = std::max(cfg.m, static_cast<int>(n_sites) + 1);
    if (m_f <= kArrayMaxM) {
      array.inst_seed = mix64(cfg.seed, fnv64(fn.name), 0xa1);
      array.n = static_cast<int>(n_sites);
      array.s = static_cast<int>(n_sites) + (cfg.s - cfg.n);
      array.p = cfg.p;
      array.m = m_f;
      array.cells_addr = dyn_cursor;
      array.modtab_addr = dyn_cursor + 8ull * array.s * array.p;
      dyn_cursor = array.modtab_addr + 8ull * kArrayModTabEntries;
      if (dyn_cursor > kGlobalsAddr)
        fail(Errc::layout, "opaque-array region exhausted");
      have_array = true;
      chain.arrays.push_back(array);
    }
  }

  // Edge-prologue prescan.
  p2_plans_.resize(cf.blocks.size());
  if (cfg.p2) {
    for (size_t b = 0; b < cf.blocks.size(); b++) {
      const Block& blk = cf.blocks[b];
      if (blk.preds.size() != 1) continue;
      const Block& pred = cf.blocks[blk.preds[0]];
      const MicroInstr& t = fn.instrs[pred.last].mi;
      if (t.op != Op::jcc_abs || (t.cc != Cond::e && t.cc != Cond::ne)) continue;
      // Find the flag producer; it must be a plain compare whose operands
      // still hold their compared values at the edge.
      size_t pi = pred.last;
      bool found = false;
      P2Plan plan;
      while (pi > pred.first) {
        pi--;
        const MicroInstr& c = fn.instrs[pi].mi;
        if (!writes_flags(c)) continue;
        if (c.op == Op::cmp_rr) {
          plan.a = c.r1;
          plan.b = c.r2;
          plan.keep = RegSet::of({c.r1, c.r2});
          found = true;
        } else if (c.op == Op::cmp_ri) {
          plan.a = c.r1;
          plan.b_is_imm = true;
          plan.b_imm = c.imm;
          plan.keep = RegSet::of({c.r1});
          found = true;
        } else if (c.op == Op::test_rr && c.r1 == c.r2) {
          plan.a = c.r1;
          plan.b_is_imm = true;
          plan.b_imm = 0;
          plan.keep = RegSet::of({c.r1});
          found = true;
        }
        break;
      }
      if (!found) continue;
      bool clobbered = false;
      for (size_t j = pi + 1; j <= pred.last; j++)
        if (regs_written(fn.instrs[j].mi).intersects(plan.keep)) clobbered = true;
      if (clobbered) continue;

      const AsmInstr* ti = fn.instr_at(t.imm);
      if (!ti) continue;
      size_t taken_block = cf.block_at(static_cast<size_t>(ti - fn.instrs.data()));
      bool is_taken = taken_block == b;
      if (!is_taken && blk.preds[0] + 1 != b) continue;  // neither side of it
      // Equality-taken and inequality-fallthrough want the difference form:
      // legit entry means a == b there, so x*(a-b) vanishes.
      plan.diff_form = (t.cc == Cond::e) == is_taken;
      plan.x = static_cast<int>(rng.range(4, 127)) * 2 + 1;  // odd, 9..255
      if (plan.x < 9) plan.x = 9;
      plan.eligible = true;
      p2_plans_[b] = plan;
    }
  }
}

RegSet Crafter::dead_for(size_t i) const {
  const MicroInstr& mi = fn.instrs[i].mi;
  RegSet dead = all_regs_but_rsp() - lm.live_in[i] - lm.live_out[i] -
                regs_read(mi) - regs_written(mi);
  size_t b = cf.block_at(i);
  if (cf.blocks[b].last == i)
    for (size_t s : cf.blocks[b].succs)
      if (p2_plans_[s].eligible) dead = dead - p2_plans_[s].keep;
  return dead;
}

RegSet Crafter::spillable_for(size_t i) const {
  const MicroInstr& mi = fn.instrs[i].mi;
  return ((lm.live_in[i] & lm.live_out[i]) - regs_read(mi)) -
         regs_written(mi) - RegSet::of({Reg::rsp});
}

std::vector<Reg> Crafter::symbolic_at(size_t i) const {
  std::vector<Reg> out;
  RegSet live = lm.live_in[i];
  RegSet sym = tm.symbolic[i] & live;
  sym.remove(Reg::rsp);
  sym.for_each([&](Reg r) {
    if (out.size() < 4) out.push_back(r);
  });
  if (out.empty()) {
    live.remove(Reg::rsp);
    live.for_each([&](Reg r) {
      if (out.empty()) out.push_back(r);
    });
  }
  return out;
}

// --- emission -------------------------------------------------------------

size_t Crafter::emit(ChainItem it) {
  auto& items = chain.blocks[cur_block_].items;
  items.push_back(std::move(it));
  return items.size() - 1;
}

void Crafter::g1(const MicroInstr& mi, std::string note) {
  const Gadget& g = pool.require({mi, ins(Op::ret)});
  emit(item_gadget(g.id, std::move(note)));
}

void Crafter::gseq(const std::vector<MicroInstr>& seq, std::string note) {
  const Gadget& g = pool.require(seq);
  emit(item_gadget(g.id, std::move(note)));
}

size_t Crafter::pop_imm(Reg r, uint64_t v, std::string note) {
  g1(ins(Op::pop_r, r));
  ChainItem it = item_imm(v, std::move(note));
  it.no_confuse = flag_window;
  return emit(std::move(it));
}

size_t Crafter::pop_label(Reg r, LabelRef ref, std::string note) {
  g1(ins(Op::pop_r, r));
  ChainItem it = item_label(ref, std::move(note));
  it.no_confuse = flag_window;
  return emit(std::move(it));
}

size_t Crafter::pop_gadget_addr(Reg r, size_t gadget_id, std::string note) {
  g1(ins(Op::pop_r, r));
  ChainItem it = item_gadget(gadget_id, std::move(note));
  it.no_confuse = flag_window;
  return emit(std::move(it));
}

void Crafter::zero(Reg r) { g1(ins(Op::mov_ri, r, Reg::rax, 0, 0)); }

void Crafter::movrr(Reg d, Reg s) {
  if (d == s) fail(Errc::internal, "mov r,r with equal regs");
  g1(ins(Op::mov_rr, d, s));
}

void Crafter::rr(Op op, Reg d, Reg s) { g1(ins(op, d, s)); }

void Crafter::load0(Reg d, Reg base) { g1(ins(Op::mov_rm, d, base)); }

void Crafter::store0(Reg base, Reg s) { g1(ins(Op::mov_mr, base, s)); }

void Crafter::cmov(Cond cc, Reg d, Reg s) {
  g1(ins(Op::cmov_rr, d, s, 0, 0, cc));
}

void Crafter::shl_small(Reg r, int c) {
  if (c < 1 || c > 7) fail(Errc::internal, "shl_small count");
  g1(ins(Op::shl_ri, r, Reg::rax, 0, static_cast<uint64_t>(c)));
}

void Crafter::shr1(Reg r) { g1(ins(Op::shr_ri, r, Reg::rax, 0, 1)); }

void Crafter::shr63(Reg r) { g1(ins(Op::shr_ri, r, Reg::rax, 0, 63)); }

void Crafter::add_rsp_reg(Reg r) { g1(ins(Op::add_rr, Reg::rsp, r)); }

void Crafter::mul_const(Reg acc, Reg src, uint64_t k) {
  if (acc == src || k == 0) fail(Errc::internal, "mul_const misuse");
  if (k & 1)
    movrr(acc, src);
  else
    zero(acc);
  for (int bit = 1; bit < 64 && (k >> bit); bit++) {
    shl_small(src, 1);
    if ((k >> bit) & 1) rr(Op::add_rr, acc, src);
  }
}

void Crafter::not_zero(Reg v, Reg u, Reg w) {
  movrr(u, v);
  g1(ins(Op::not_r, u));
  pop_imm(w, ~0ull);
  rr(Op::add_rr, w, v);   // w = v - 1
  rr(Op::and_rr, u, w);   // u = ~v & (v-1); bit 63 clear iff v != 0
  g1(ins(Op::not_r, u));
  shr63(u);
  movrr(v, u);
}

uint32_t Crafter::here_label() {
  uint32_t id = chain.new_label();
  chain.bind(id, cur_block_, chain.blocks[cur_block_].items.size());
  return id;
}

// --- scratch --------------------------------------------------------------

Crafter::Scratch::Scratch(Crafter& c, RegSet avail, RegSet spillable)
    : c_(c), avail_(avail), spillable_(spillable) {}

int Crafter::Scratch::capacity() const {
  int n = avail_.count();
  if (!spilled_ && !spillable_.empty() && n >= 1) n++;
  return n;
}

void Crafter::Scratch::ensure(int k) {
  if (avail_.count() >= k) return;
  if (!spilled_ && !spillable_.empty() && avail_.count() >= 1 &&
      avail_.count() + 1 >= k) {
    // Park one live register in an upcoming chain slot; the slot is popped
    // back into it right before the fragment ends.
    Reg addr = Reg::rax;
    avail_.for_each([&](Reg r) { addr = r; });
    Reg victim = Reg::rax;
    spillable_.for_each([&](Reg r) { victim = r; });
    slot_label_ = c_.chain.new_label();
    c_.pop_label(addr, LabelRef{slot_label_, 0, 0, false}, "spill slot addr");
    c_.store0(addr, victim);
    avail_.add(victim);
    spilled_ = true;
    spilled_reg_ = victim;
  }
  if (avail_.count() < k)
    fail(Errc::register_pressure,
         c_.fn.name + ": needed " + std::to_string(k) + " scratch registers");
}

Reg Crafter::Scratch::take() {
  ensure(1);
  std::vector<Reg> regs;
  avail_.for_each([&](Reg r) { regs.push_back(r); });
  Reg r = regs[c_.rng.below(regs.size())];
  avail_.remove(r);
  return r;
}

void Crafter::Scratch::release(Reg r) { avail_.add(r); }

void Crafter::Scratch::finish() {
  if (!spilled_) return;
  c_.g1(ins(Op::pop_r, spilled_reg_), "spill restore");
  size_t idx = c_.emit(item_slot("spill slot"));
  c_.chain.bind(slot_label_, c_.cur_block_, idx);
  spilled_ = false;
}

// --- flags ----------------------------------------------------------------

Crafter::FlagsGuard Crafter::guard_flags(size_t i, bool lowering_dirty,
                                         Scratch& sc) {
  FlagsGuard fg;
  if (!lowering_dirty || !lm.flags_out[i] || writes_flags(fn.instrs[i].mi))
    return fg;
  sc.ensure(3);
  Reg a = sc.take(), b = sc.take(), c = sc.take();
  bool saved = flag_window;
  flag_window = true;
  zero(a);
  pop_imm(b, 1);
  cmov(Cond::b, a, b);  // a = CF
  zero(c);
  pop_imm(b, 2);
  cmov(Cond::ne, c, b);  // c = 2 * !ZF
  rr(Op::or_rr, a, c);
  flag_window = saved;
  sc.release(b);
  sc.release(c);
  fg.active = true;
  fg.a = a;
  return fg;
}

void Crafter::unguard_flags(FlagsGuard& fg, Scratch& sc) {
  if (!fg.active) return;
  shr1(fg.a);  // CF = bit0, ZF = (v>>1)==0: exactly the captured state
  sc.release(fg.a);
  fg.active = false;
}

void Crafter::spill_edge_flags(size_t term, Scratch& sc) {
  sc.ensure(3);
  Reg a = sc.take(), b = sc.take(), c = sc.take();
  bool saved = flag_window;
  flag_window = true;
  zero(a);
  pop_imm(b, 1);
  cmov(Cond::b, a, b);
  zero(c);
  pop_imm(b, 2);
  cmov(Cond::ne, c, b);
  // Two cells, no merge: an or here would destroy the flags the branch
  // template still has to read.
  pop_imm(b, kFlagsSpillAddr);
  store0(b, a);
  pop_imm(b, kFlagsSpillAddr + 8);
  store0(b, c);
  flag_window = saved;
  sc.release(a);
  sc.release(b);
  sc.release(c);
  (void)term;
}

void Crafter::restore_edge_flags(size_t b) {
  size_t first = cf.blocks[b].first;
  if (!lm.flags_in[first] || cf.blocks[b].preds.empty()) return;
  Scratch sc(*this, dead_for(first), RegSet{});
  sc.ensure(2);
  Reg x = sc.take(), y = sc.take();
  pop_imm(x, kFlagsSpillAddr);
  load0(x, x);
  pop_imm(y, kFlagsSpillAddr + 8);
  load0(y, y);
  rr(Op::or_rr, x, y);
  shr1(x);
  sc.release(x);
  sc.release(y);
}

// --- eta ------------------------------------------------------------------

void Crafter::maybe_eta(size_t i) {
  if (!cfg.confusion || cfg.eta_max <= 0 || lm.flags_out[i]) return;
  if (stats.eta_gaps > 0 && !rng.chance(0.4)) return;
  RegSet dead = dead_for(i);
  if (dead.empty()) return;
  std::vector<Reg> regs;
  dead.for_each([&](Reg r) { regs.push_back(r); });
  Reg s = regs[rng.below(regs.size())];
  uint64_t eta = 0;
  for (int tries = 0; tries < 32; tries++) {
    eta = rng.range(1, static_cast<uint64_t>(cfg.eta_max));
    if (eta % 8 != 0) break;
    eta = 0;
  }
  if (eta == 0) return;
  pop_imm(s, eta, "eta");
  g1(ins(Op::add_rr, Reg::rsp, s), "eta hop");
  chain.blocks[cur_block_].items.back().gap_after = static_cast<uint8_t>(eta);
  block_misalign_ = (block_misalign_ + eta) % 8;
  stats.eta_gaps++;
}

// Dead pop of a text-window value. To a scanner the operand is
// indistinguishable from a gadget pointer; at run time it lands in a dead
// register. Flag-neutral, so no liveness constraint beyond the register.
void Crafter::maybe_decoy(size_t i) {
  if (!cfg.confusion) return;
  int pairs = rng.chance(0.75) ? 1 : 0;
  if (pairs && rng.chance(0.35)) pairs++;
  for (; pairs > 0; pairs--) {
    RegSet dead = dead_for(i);
    if (dead.empty()) return;
    std::vector<Reg> regs;
    dead.for_each([&](Reg r) { regs.push_back(r); });
    Reg s = regs[rng.below(regs.size())];
    pop_imm(s, kTextBase + rng.below(kTextSize), "decoy");
    chain.blocks[cur_block_].items.back().no_confuse = true;
    stats.decoys++;
  }
}

// Flags may be live here (jcc terminators), so the hop must be a lea.
void Crafter::realign_block(size_t last_instr) {
  (void)last_instr;
  if (block_misalign_ == 0) return;
  uint64_t eta = 8 - block_misalign_;
  g1(ins(Op::lea, Reg::rsp, Reg::rsp, static_cast<int32_t>(eta)),
     "realign hop");
  chain.blocks[cur_block_].items.back().gap_after = static_cast<uint8_t>(eta);
  block_misalign_ = 0;
  stats.eta_gaps++;
}

// --- stack-world helpers --------------------------------------------------

Reg Crafter::slot_addr_in(Scratch& sc) {
  Reg s = sc.take();
  pop_imm(s, kSsAddr);
  g1(ins(Op::add_rm, s, s), "level slot");
  return s;
}

// --- run ------------------------------------------------------------------

CraftedFunction Crafter::run() {
  for (size_t b = 0; b < cf.blocks.size(); b++) craft_block(b);

  for (const RopletBlock& rb : rp.blocks) stats.roplets += rb.roplets.size();
  std::vector<uint8_t> enc;
  for (const AsmInstr& ai : fn.instrs) encode_to(ai.mi, enc);
  stats.native_bytes = enc.size();
  for (const ChainBlock& cb : chain.blocks) stats.items += cb.items.size();
  std::set<uint64_t> used;
  for (const ChainBlock& cb : chain.blocks)
    for (const ChainItem& it : cb.items)
      if (it.kind == ItemKind::gadget) used.insert(it.value);
  stats.distinct_gadgets = used.size();

  CraftedFunction out;
  out.chain = std::move(chain);
  out.stats = stats;
  return out;
}

void Crafter::craft_block(size_t b) {
  chain.blocks.push_back(ChainBlock{b, {}, 0});
  cur_block_ = b;
  block_misalign_ = 0;
  chain.bind(block_labels_[b], b, 0);

  if (p2_plans_[b].eligible) {
    if (p2_prologue(*this, b, p2_plans_[b]))
      stats.p2_edges++;
    else
      stats.p2_skipped++;
  }
  chain.blocks[b].prologue_items = chain.blocks[b].items.size();

  if (cfg.p3 != P3Mode::none && p3_left_ > 0 && rng.chance(0.6)) {
    if (p3_insert(*this, b)) {
      p3_left_--;
      stats.p3_inserted++;
    }
  }

  restore_edge_flags(b);

  const Block& blk = cf.blocks[b];
  for (size_t i = blk.first; i <= blk.last; i++) {
    const MicroInstr& mi = fn.instrs[i].mi;
    if (i == blk.last && is_terminator(mi)) {
      realign_block(i);
      lower_terminator(i, mi, b);
      return;
    }
    lower_instr(i, mi);
    maybe_eta(i);
    maybe_decoy(i);
  }

  // Fallthrough block: make the edge explicit; layout elides it again when
  // the target ends up adjacent.
  realign_block(blk.last);
  size_t succ = blk.succs.empty() ? b + 1 : blk.succs[0];
  if (succ != b + 1) fail(Errc::internal, "fallthrough not adjacent");
  if (lm.flags_out[blk.last]) {
    Scratch sc(*this, dead_for(blk.last), RegSet{});
    spill_edge_flags(blk.last, sc);
  }
  plain_uncond_template(blk.last, block_labels_[succ], true);
}

// --- templates ------------------------------------------------------------

void Crafter::plain_cond_template(size_t i, size_t b, Cond cc, uint32_t taken) {
  Scratch sc(*this, dead_for(i), RegSet{});
  sc.ensure(2);
  Reg l = sc.take(), z = sc.take();
  size_t start = chain.blocks[b].items.size();
  flag_window = true;
  size_t val = pop_label(l, LabelRef{taken, 0, 0, false}, "taken delta");
  zero(z);
  cmov(negate(cc), l, z);
  flag_window = false;
  add_rsp_reg(l);
  uint32_t anchor = here_label();
  chain.blocks[b].items[val].ref.anchor = anchor;

  BranchSite site;
  site.block = b;
  site.item_index = start;
  site.item_count = chain.blocks[b].items.size() - start;
  site.conditional = true;
  site.cc = cc;
  site.target_label = taken;
  chain.branches.push_back(site);
}

void Crafter::plain_uncond_template(size_t i, uint32_t target, bool removable) {
  Scratch sc(*this, dead_for(i), RegSet{});
  sc.ensure(1);
  Reg l = sc.take();
  size_t b = cur_block_;
  size_t start = chain.blocks[b].items.size();
  bool saved = flag_window;
  flag_window = flag_window || lm.flags_out[i] != 0;
  size_t val = pop_label(l, LabelRef{target, 0, 0, false}, "jump delta");
  flag_window = saved;
  add_rsp_reg(l);
  uint32_t anchor = here_label();
  chain.blocks[b].items[val].ref.anchor = anchor;

  BranchSite site;
  site.block = b;
  site.item_index = start;
  site.item_count = chain.blocks[b].items.size() - start;
  site.conditional = false;
  site.removable = removable;
  site.target_label = target;
  chain.branches.push_back(site);
}

// --- terminators ----------------------------------------------------------

void Crafter::lower_terminator(size_t i, const MicroInstr& mi, size_t b) {
  switch (mi.op) {
    case Op::ret:
      gseq(seq_unpivot_ret(), "epilogue");
      return;
    case Op::jcc_abs: {
      const AsmInstr* ti = fn.instr_at(mi.imm);
      if (!ti) fail(Errc::internal, "jcc target unmapped");
      size_t tb = cf.block_at(static_cast<size_t>(ti - fn.instrs.data()));
      uint32_t taken = block_labels_[tb];
      if (lm.flags_out[i]) {
        Scratch sc(*this, dead_for(i), RegSet{});
        flag_window = true;
        spill_edge_flags(i, sc);
        flag_window = false;
      }
      if (cfg.p1 && have_array) {
        int ord = next_ordinal++;
        if (p1_dispatch(*this, ord, true, mi.cc, taken, i)) {
          stats.p1_applied++;
          return;
        }
        stats.p1_fallback++;
      }
      plain_cond_template(i, b, mi.cc, taken);
      return;
    }
    case Op::jmp_abs: {
      if (mi.imm < fn.entry || mi.imm >= fn.entry + fn.body_size) {
        lower_tail(mi);
        return;
      }
      const AsmInstr* ti = fn.instr_at(mi.imm);
      if (!ti) fail(Errc::internal, "jmp target unmapped");
      size_t tb = cf.block_at(static_cast<size_t>(ti - fn.instrs.data()));
      if (lm.flags_out[i]) {
        Scratch sc(*this, dead_for(i), RegSet{});
        spill_edge_flags(i, sc);
      }
      if (cfg.p1 && have_array && p1_uncond_.count(i)) {
        int ord = next_ordinal++;
        if (p1_dispatch(*this, ord, false, Cond::e, block_labels_[tb], i)) {
          stats.p1_applied++;
          return;
        }
        stats.p1_fallback++;
      }
      plain_uncond_template(i, block_labels_[tb], false);
      return;
    }
    case Op::jmp_r:
      lower_switch(i, mi, b);
      return;
    default:
      fail(Errc::internal, "unexpected terminator");
  }
}

void Crafter::lower_tail(const MicroInstr& mi) {
  pop_imm(Reg::rax, mi.imm, "tail target");
  gseq(seq_tail_jump(), "tail transfer");
}

void Crafter::lower_call(size_t i, const MicroInstr& mi) {
  RegSet live = lm.live_in[i];
  if (live.has(Reg::r10) || live.has(Reg::r11) || live.has(Reg::rax))
    fail(Errc::internal, "call scratch unexpectedly live");

  size_t resume = pool.require(seq_call_resume()).id;
  pop_imm(Reg::r11, kSsAddr, "call: ss");
  g1(ins(Op::add_rm, Reg::r11, Reg::r11), "call: level slot");
  load0(Reg::r10, Reg::r11);  // caller-world rsp
  pop_imm(Reg::rax, static_cast<uint64_t>(-8));
  rr(Op::add_rr, Reg::rax, Reg::r10);  // fabricated frame top
  store0(Reg::r11, Reg::rax);
  pop_gadget_addr(Reg::r10, resume, "return site");
  store0(Reg::rax, Reg::r10);  // plant return address
  pop_imm(Reg::r10, mi.imm, "callee entry");
  gseq(seq_call_out(), "call out");
}

void Crafter::lower_switch(size_t i, const MicroInstr& mi, size_t b) {
  if (lm.flags_out[i]) {
    Scratch sc(*this, dead_for(i), RegSet{});
    spill_edge_flags(i, sc);
  }
  auto jt = fn.jump_tables.find(i);
  if (jt == fn.jump_tables.end())
    fail(Errc::internal, "indirect jump without table");

  SwitchSite site;
  site.block = b;
  std::vector<uint64_t> addrs;
  for (const std::string& lbl : jt->second) {
    size_t idx = fn.labels.at(lbl);
    uint64_t addr = fn.instrs[idx].addr;
    size_t tb = cf.block_at(idx);
    site.targets.emplace_back(addr, block_labels_[tb]);
    addrs.push_back(addr);
  }
  std::sort(addrs.begin(), addrs.end());
  addrs.erase(std::unique(addrs.begin(), addrs.end()), addrs.end());
  uint64_t spacing = ~0ull;
  for (size_t j = 1; j < addrs.size(); j++)
    spacing = std::min(spacing, addrs[j] - addrs[j - 1]);
  site.width = spacing >= 4 ? 4 : spacing >= 2 ? 2 : 1;

  Scratch sc(*this, dead_for(i), RegSet{});
  sc.ensure(site.width == 1 ? 1 : 2);
  Reg d = sc.take();
  pop_imm(d, kRevTabDelta, "mirror shift");
  rr(Op::add_rr, d, mi.r1);
  if (site.width == 1) {
    g1(ins(Op::movsx8_rm, d, d));
  } else {
    Reg s = sc.take();
    load0(d, d);
    uint64_t mask = site.width == 2 ? 0xffff : 0xffffffff;
    uint64_t sign = site.width == 2 ? 0x8000 : 0x80000000;
    pop_imm(s, mask);
    rr(Op::and_rr, d, s);
    pop_imm(s, sign);
    rr(Op::xor_rr, d, s);
    rr(Op::sub_rr, d, s);
    sc.release(s);
  }
  shl_small(d, 3);
  add_rsp_reg(d);
  site.anchor_label = here_label();
  chain.switches.push_back(std::move(site));
}

// --- straight-line lowering -----------------------------------------------

void Crafter::lower_instr(size_t i, const MicroInstr& mi) {
  const Reg sp = Reg::rsp;
  Scratch sc(*this, dead_for(i), spillable_for(i));

  // Values popped while flags have to survive the whole fragment must not
  // attract confusion arithmetic.
  bool through = lm.flags_out[i] && !writes_flags(mi);
  bool saved_window = flag_window;
  flag_window = flag_window || (through && mi.op != Op::call_abs);

  auto done = [&](FlagsGuard* fg = nullptr) {
    if (fg) unguard_flags(*fg, sc);
    sc.finish();
    flag_window = saved_window;
  };

  switch (mi.op) {
    case Op::leave: {
      // mov rsp, rbp ; pop rbp, through the same lowering paths.
      done();
      lower_instr(i, MicroInstr{Op::mov_rr, sp, Reg::rbp, 0, 0, Cond::e});
      lower_instr(i, MicroInstr{Op::pop_r, Reg::rbp, Reg::rax, 0, 0, Cond::e});
      return;
    }
    case Op::mov_rr: {
      if (mi.r1 == sp) {  // retarget the native stack pointer
        FlagsGuard fg = guard_flags(i, true, sc);
        Reg s1 = slot_addr_in(sc);
        store0(s1, mi.r2);
        sc.release(s1);
        done(&fg);
        return;
      }
      if (mi.r2 == sp) {  // read the native stack pointer
        FlagsGuard fg = guard_flags(i, true, sc);
        pop_imm(mi.r1, kSsAddr);
        g1(ins(Op::add_rm, mi.r1, mi.r1));
        load0(mi.r1, mi.r1);
        done(&fg);
        return;
      }
      movrr(mi.r1, mi.r2);
      done();
      return;
    }
    case Op::mov_ri:
      pop_imm(mi.r1, mi.imm);
      done();
      return;
    case Op::cmov_rr:
      cmov(mi.cc, mi.r1, mi.r2);
      done();
      return;
    case Op::mov_rm: {
      if (mi.r2 == sp) {
        FlagsGuard fg = guard_flags(i, true, sc);
        sp_load_ea(sc, mi.r1, mi.disp);
        load0(mi.r1, mi.r1);
        done(&fg);
        return;
      }
      if (mi.disp == 0) {
        load0(mi.r1, mi.r2);
        done();
        return;
      }
      FlagsGuard fg = guard_flags(i, true, sc);
      if (mi.r1 != mi.r2) {
        pop_imm(mi.r1, static_cast<int64_t>(mi.disp));
        rr(Op::add_rr, mi.r1, mi.r2);
        load0(mi.r1, mi.r1);
      } else {
        Reg s = sc.take();
        pop_imm(s, static_cast<int64_t>(mi.disp));
        rr(Op::add_rr, s, mi.r2);
        load0(mi.r1, s);
        sc.release(s);
      }
      done(&fg);
      return;
    }
    case Op::movsx8_rm: {
      if (mi.r2 == sp) {
        FlagsGuard fg = guard_flags(i, true, sc);
        sp_load_ea(sc, mi.r1, mi.disp);
        g1(ins(Op::movsx8_rm, mi.r1, mi.r1));
        done(&fg);
        return;
      }
      if (mi.disp == 0) {
        g1(ins(Op::movsx8_rm, mi.r1, mi.r2));
        done();
        return;
      }
      FlagsGuard fg = guard_flags(i, true, sc);
      if (mi.r1 != mi.r2) {
        pop_imm(mi.r1, static_cast<int64_t>(mi.disp));
        rr(Op::add_rr, mi.r1, mi.r2);
        g1(ins(Op::movsx8_rm, mi.r1, mi.r1));
      } else {
        Reg s = sc.take();
        pop_imm(s, static_cast<int64_t>(mi.disp));
        rr(Op::add_rr, s, mi.r2);
        g1(ins(Op::movsx8_rm, mi.r1, s));
        sc.release(s);
      }
      done(&fg);
      return;
    }
    case Op::mov_mr: {
      FlagsGuard fg = guard_flags(i, mi.r1 == sp || mi.disp != 0, sc);
      Reg base = mi.r1;
      if (mi.r1 == sp) {
        base = sp_ea(sc, mi.disp);
      } else if (mi.disp != 0) {
        base = sc.take();
        pop_imm(base, static_cast<int64_t>(mi.disp));
        rr(Op::add_rr, base, mi.r1);
      }
      store0(base, mi.r2);
      if (base != mi.r1) sc.release(base);
      done(&fg);
      return;
    }
    case Op::xchg_rm: {
      FlagsGuard fg = guard_flags(i, true, sc);
      Reg base = mi.r2;
      if (mi.r2 == sp) {
        base = sp_ea(sc, mi.disp);
      } else if (mi.disp != 0) {
        base = sc.take();
        pop_imm(base, static_cast<int64_t>(mi.disp));
        rr(Op::add_rr, base, mi.r2);
      }
      Reg t = sc.take();
      load0(t, base);
      store0(base, mi.r1);
      movrr(mi.r1, t);
      sc.release(t);
      if (base != mi.r2) sc.release(base);
      done(&fg);
      return;
    }
    case Op::lea: {
      if (mi.r2 == sp) {
        FlagsGuard fg = guard_flags(i, true, sc);
        sp_load_ea(sc, mi.r1, 0);
        if (mi.disp != 0) {
          Reg s = sc.take();
          pop_imm(s, static_cast<int64_t>(mi.disp));
          rr(Op::add_rr, mi.r1, s);
          sc.release(s);
        }
        done(&fg);
        return;
      }
      FlagsGuard fg = guard_flags(i, true, sc);
      if (mi.r1 != mi.r2) {
        pop_imm(mi.r1, static_cast<int64_t>(mi.disp));
        rr(Op::add_rr, mi.r1, mi.r2);
      } else {
        Reg s = sc.take();
        pop_imm(s, static_cast<int64_t>(mi.disp));
        rr(Op::add_rr, mi.r1, s);
        sc.release(s);
      }
      done(&fg);
      return;
    }
    case Op::lea_rip:
      pop_imm(mi.r1, abs_of(i, mi));
      done();
      return;
    case Op::mov_rrip:
      pop_imm(mi.r1, abs_of(i, mi));
      load0(mi.r1, mi.r1);
      done();
      return;
    case Op::mov_ripr: {
      Reg s = sc.take();
      pop_imm(s, abs_of(i, mi));
      store0(s, mi.r1);
      sc.release(s);
      done();
      return;
    }
    case Op::add_rr:
    case Op::sub_rr: {
      if (mi.r1 == sp) {
        Reg s1 = slot_addr_in(sc);
        Reg s2 = sc.take();
        if (mi.op == Op::add_rr) {
          movrr(s2, mi.r2);
          g1(ins(Op::add_rm, s2, s1));
        } else {
          load0(s2, s1);
          rr(Op::sub_rr, s2, mi.r2);
        }
        store0(s1, s2);
        sc.release(s1);
        sc.release(s2);
        done();
        return;
      }
      if (mi.r2 == sp) {  // rsp as a plain source operand
        Reg u = sp_ea(sc, 0);
        rr(mi.op, mi.r1, u);
        sc.release(u);
        done();
        return;
      }
      rr(mi.op, mi.r1, mi.r2);
      done();
      return;
    }
    case Op::and_rr:
    case Op::or_rr:
    case Op::xor_rr:
    case Op::shl_rr:
    case Op::shr_rr:
    case Op::cmp_rr:
    case Op::test_rr:
      rr(mi.op, mi.r1, mi.r2);
      done();
      return;
    case Op::add_ri:
    case Op::sub_ri: {
      if (mi.r1 == sp) {
        Reg s1 = slot_addr_in(sc);
        Reg s2 = sc.take();
        if (mi.op == Op::add_ri || !lm.flags_out[i]) {
          uint64_t v = mi.op == Op::add_ri ? mi.imm : ~mi.imm + 1;
          pop_imm(s2, v);
          g1(ins(Op::add_rm, s2, s1));
        } else {
          load0(s2, s1);
          Reg s3 = sc.take();
          pop_imm(s3, mi.imm);
          rr(Op::sub_rr, s2, s3);
          sc.release(s3);
        }
        store0(s1, s2);
        sc.release(s1);
        sc.release(s2);
        done();
        return;
      }
      Reg s = sc.take();
      pop_imm(s, mi.imm);
      rr(rr_twin(mi.op), mi.r1, s);
      sc.release(s);
      done();
      return;
    }
    case Op::and_ri:
    case Op::or_ri:
    case Op::xor_ri:
    case Op::cmp_ri: {
      Reg s = sc.take();
      pop_imm(s, mi.imm);
      rr(rr_twin(mi.op), mi.r1, s);
      sc.release(s);
      done();
      return;
    }
    case Op::shl_ri: {
      int c = static_cast<int>(mi.imm & 63);
      if (c >= 1 && c <= 7) {
        shl_small(mi.r1, c);
      } else {
        Reg s = sc.take();
        pop_imm(s, mi.imm & 63);
        rr(Op::shl_rr, mi.r1, s);
        sc.release(s);
      }
      done();
      return;
    }
    case Op::shr_ri: {
      int c = static_cast<int>(mi.imm & 63);
      if (c == 1) {
        shr1(mi.r1);
      } else if (c == 63) {
        shr63(mi.r1);
      } else {
        Reg s = sc.take();
        pop_imm(s, mi.imm & 63);
        rr(Op::shr_rr, mi.r1, s);
        sc.release(s);
      }
      done();
      return;
    }
    case Op::neg_r:
    case Op::not_r:
      g1(ins(mi.op, mi.r1));
      done();
      return;
    case Op::add_rm: {
      if (mi.r2 == sp) {
        Reg ea = sp_ea(sc, mi.disp);
        g1(ins(Op::add_rm, mi.r1, ea));
        sc.release(ea);
        done();
        return;
      }
      if (mi.disp == 0) {
        g1(ins(Op::add_rm, mi.r1, mi.r2));
        done();
        return;
      }
      Reg s = sc.take();
      pop_imm(s, static_cast<int64_t>(mi.disp));
      rr(Op::add_rr, s, mi.r2);
      g1(ins(Op::add_rm, mi.r1, s));
      sc.release(s);
      done();
      return;
    }
    case Op::add_mi:
    case Op::sub_mi: {
      Reg base = mi.r1;
      bool own_base = false;
      if (mi.r1 == sp) {
        base = sp_ea(sc, mi.disp);
        own_base = true;
      } else if (mi.disp != 0) {
        base = sc.take();
        own_base = true;
        pop_imm(base, static_cast<int64_t>(mi.disp));
        rr(Op::add_rr, base, mi.r1);
      }
      Reg v = sc.take();
      if (mi.op == Op::add_mi || !lm.flags_out[i]) {
        uint64_t imm = mi.op == Op::add_mi ? mi.imm : ~mi.imm + 1;
        pop_imm(v, imm);
        g1(ins(Op::add_rm, v, base));
      } else {
        load0(v, base);
        Reg s = sc.take();
        pop_imm(s, mi.imm);
        rr(Op::sub_rr, v, s);
        sc.release(s);
      }
      store0(base, v);
      sc.release(v);
      if (own_base) sc.release(base);
      done();
      return;
    }
    case Op::push_r:
    case Op::push_i: {
      FlagsGuard fg = guard_flags(i, true, sc);
      Reg s1 = slot_addr_in(sc);
      Reg s2 = sc.take();
      pop_imm(s2, static_cast<uint64_t>(-8));
      g1(ins(Op::add_rm, s2, s1));  // new native top
      store0(s1, s2);
      if (mi.op == Op::push_r) {
        store0(s2, mi.r1);
      } else {
        pop_imm(s1, mi.imm);  // s1's slot address role is over
        store0(s2, s1);
      }
      sc.release(s1);
      sc.release(s2);
      done(&fg);
      return;
    }
    case Op::pop_r: {
      FlagsGuard fg = guard_flags(i, true, sc);
      Reg s1 = slot_addr_in(sc);
      load0(mi.r1, s1);  // old native top; pop target is never live-in
      Reg s2 = sc.take();
      pop_imm(s2, 8);
      g1(ins(Op::add_rm, s2, s1));
      store0(s1, s2);
      load0(mi.r1, mi.r1);
      sc.release(s1);
      sc.release(s2);
      done(&fg);
      return;
    }
    case Op::pushf: {
      FlagsGuard fg = guard_flags(i, true, sc);
      sc.ensure(3);
      Reg a = sc.take(), b = sc.take(), c = sc.take();
      bool saved = flag_window;
      flag_window = true;
      zero(a);
      pop_imm(b, 1);
      cmov(Cond::b, a, b);
      zero(c);
      pop_imm(b, 0x40);
      cmov(Cond::e, c, b);
      rr(Op::or_rr, a, c);  // native flags word: bit0 CF, bit6 ZF
      flag_window = saved;
      pop_imm(b, kSsAddr);
      g1(ins(Op::add_rm, b, b));
      pop_imm(c, static_cast<uint64_t>(-8));
      g1(ins(Op::add_rm, c, b));
      store0(b, c);
      store0(c, a);
      sc.release(a);
      sc.release(b);
      sc.release(c);
      done(&fg);
      return;
    }
    case Op::popf: {
      Reg s1 = slot_addr_in(sc);
      Reg a = sc.take();
      load0(a, s1);
      Reg s2 = sc.take();
      pop_imm(s2, 8);
      g1(ins(Op::add_rm, s2, s1));
      store0(s1, s2);
      load0(a, a);  // the flags word
      sc.release(s1);
      Reg b = s2;  // reuse
      Reg c = sc.take();
      movrr(b, a);
      pop_imm(c, 6);
      rr(Op::shr_rr, b, c);
      pop_imm(c, 1);
      rr(Op::and_rr, b, c);
      rr(Op::xor_rr, b, c);  // !ZF
      shl_small(b, 1);
      rr(Op::and_rr, a, c);  // CF
      rr(Op::or_rr, a, b);
      shr1(a);
      sc.release(a);
      sc.release(b);
      sc.release(c);
      done();
      return;
    }
    case Op::call_abs:
      lower_call(i, mi);
      done();
      return;
    default:
      fail(Errc::internal, std::string("unhandled lowering: ") + disasm(mi));
  }
}

uint64_t Crafter::abs_of(size_t i, const MicroInstr& mi) const {
  return fn.instrs[i].addr + encoded_length(mi.op) +
         static_cast<int64_t>(mi.disp);
}

// Computes other-world rsp + disp into a fresh scratch register.
Reg Crafter::sp_ea(Scratch& sc, int32_t disp) {
  Reg s = slot_addr_in(sc);
  load0(s, s);
  if (disp != 0) {
    Reg t = sc.take();
    pop_imm(t, static_cast<int64_t>(disp));
    rr(Op::add_rr, s, t);
    sc.release(t);
  }
  return s;
}

// Same, but builds the address in `dest` (a register the fragment defines).
void Crafter::sp_load_ea(Scratch& sc, Reg dest, int32_t disp) {
  pop_imm(dest, kSsAddr);
  g1(ins(Op::add_rm, dest, dest));
  load0(dest, dest);
  if (disp != 0) {
    Reg t = sc.take();
    pop_imm(t, static_cast<int64_t>(disp));
    rr(Op::add_rr, dest, t);
    sc.release(t);
  }
}

// --- program driver -------------------------------------------------------

CraftedProgram craft_program(const Program& prog, GadgetPool& pool,
                             const ObfConfig& cfg) {
  cfg.validate();
  CraftedProgram out;
  for (const Function& fn : prog.funcs) {
    if (!cfg.wants(fn.name)) {
      out.untranslated.push_back(fn.name);
      out.untranslated_why.push_back("excluded by configuration");
      continue;
    }
    if (fn.body_size < pivot_stub_size()) {
      out.untranslated.push_back(fn.name);
      out.untranslated_why.push_back("body smaller than the pivot stub");
      continue;
    }
    try {
      Crafter c(fn, prog, pool, cfg, out.dyn_cursor);
      out.funcs.push_back(c.run());
    } catch (const Error& e) {
      if (e.code == Errc::untranslatable || e.code == Errc::cfg_incomplete ||
          e.code == Errc::register_pressure) {
        out.untranslated.push_back(fn.name);
        out.untranslated_why.push_back(std::string(errc_name(e.code)) + ": " +
                                       e.what());
        continue;
      }
      throw;
    }
  }
  return out;
}

}  // namespace rf

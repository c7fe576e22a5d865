#include "analysis.hpp"

#include <algorithm>
#include <set>

#include "error.hpp"

namespace rf {

namespace {

bool addr_in_fn(const Function& fn, uint64_t addr) {
  return addr >= fn.entry && addr < fn.entry + fn.body_size;
}

size_t index_of_addr(const Function& fn, uint64_t addr) {
  for (size_t i = 0; i < fn.instrs.size(); ++i)
    if (fn.instrs[i].addr == addr) return i;
  fail(Errc::cfg_incomplete, fn.name + ": jump into the middle of an instruction");
}

}  // namespace

Cfg build_cfg(const Function& fn) {
  const size_t n = fn.instrs.size();
  std::set<size_t> leaders{0};
  for (size_t i = 0; i < n; ++i) {
    const MicroInstr& mi = fn.instrs[i].mi;
    if (mi.op == Op::jmp_abs || mi.op == Op::jcc_abs) {
      if (addr_in_fn(fn, mi.imm)) leaders.insert(index_of_addr(fn, mi.imm));
      if (i + 1 < n) leaders.insert(i + 1);
    } else if (mi.op == Op::jmp_r) {
      auto it = fn.jump_tables.find(i);
      if (it == fn.jump_tables.end())
        fail(Errc::cfg_incomplete,
             fn.name + ": indirect jump at line " + std::to_string(fn.instrs[i].line) +
                 " has no .jumptable");
      for (const auto& lab : it->second) leaders.insert(fn.labels.at(lab));
      if (i + 1 < n) leaders.insert(i + 1);
    } else if (mi.op == Op::ret || mi.op == Op::hlt) {
      if (i + 1 < n) leaders.insert(i + 1);
    }
  }

  Cfg cfg;
  cfg.block_of.assign(n, 0);
  std::vector<size_t> starts(leaders.begin(), leaders.end());
  for (size_t b = 0; b < starts.size(); ++b) {
    Block blk;
    blk.first = starts[b];
    blk.last = (b + 1 < starts.size() ? starts[b + 1] : n) - 1;
    for (size_t i = blk.first; i <= blk.last; ++i) cfg.block_of[i] = b;
    cfg.blocks.push_back(blk);
  }

  // A terminator anywhere but the block's last slot would have created a
  // leader right after it, so blocks hold at most one, in last position.
  for (auto& blk : cfg.blocks)
    for (size_t i = blk.first; i < blk.last; ++i)
      if (is_terminator(fn.instrs[i].mi))
        fail(Errc::internal, fn.name + ": terminator not in block tail position");

  auto block_of_addr = [&](uint64_t addr) { return cfg.block_of[index_of_addr(fn, addr)]; };
  for (size_t b = 0; b < cfg.blocks.size(); ++b) {
    Block& blk = cfg.blocks[b];
    const MicroInstr& t = fn.instrs[blk.last].mi;
    switch (t.op) {
      case Op::jmp_abs:
        if (addr_in_fn(fn, t.imm)) blk.succs.push_back(block_of_addr(t.imm));
        break;  // tail jump: no intra successors
      case Op::jcc_abs:
        if (!addr_in_fn(fn, t.imm))
          fail(Errc::cfg_incomplete, fn.name + ": conditional jump leaves the function");
        if (blk.last + 1 >= n)
          fail(Errc::cfg_incomplete, fn.name + ": conditional jump falls off the function end");
        blk.succs.push_back(block_of_addr(t.imm));
        if (std::find(blk.succs.begin(), blk.succs.end(), cfg.block_of[blk.last + 1]) ==
            blk.succs.end())
          blk.succs.push_back(cfg.block_of[blk.last + 1]);
        break;
      case Op::jmp_r:
        for (const auto& lab : fn.jump_tables.at(blk.last)) {
          size_t s = cfg.block_of[fn.labels.at(lab)];
          if (std::find(blk.succs.begin(), blk.succs.end(), s) == blk.succs.end())
            blk.succs.push_back(s);
        }
        break;
      case Op::ret:
      case Op::hlt:
        break;
      default:
        if (blk.last + 1 >= n)
          fail(Errc::cfg_incomplete, fn.name + ": control falls off the function end");
        blk.succs.push_back(cfg.block_of[blk.last + 1]);
    }
    for (size_t s : blk.succs) cfg.blocks[s].preds.push_back(b);
  }
  return cfg;
}

namespace {

RegSet ret_liveout(const Function& fn) {
  RegSet s = callee_saved();
  s.add(Reg::rax);
  s.add(Reg::rsp);
  s |= fn.extra_liveout;
  return s;
}

RegSet tail_liveout(const Function& fn) {
  // Not ret_liveout + args: rax is produced by the callee the jump hands
  // over to, so it is dead here and stays available as the jump vehicle.
  RegSet s = callee_saved();
  s.add(Reg::rsp);
  s |= arg_regs();
  s |= fn.extra_liveout;
  return s;
}

}  // namespace

LivenessMap analyze_liveness(const Function& fn, const Cfg& cfg) {
  const size_t n = fn.instrs.size();
  LivenessMap lm;
  lm.live_in.assign(n, {});
  lm.live_out.assign(n, {});
  lm.flags_in.assign(n, 0);
  lm.flags_out.assign(n, 0);

  auto transfer = [&](size_t i) {
    const MicroInstr& mi = fn.instrs[i].mi;
    RegSet use = regs_read(mi);
    RegSet def = regs_written(mi);
    bool fuse = reads_flags(mi);
    bool fdef = writes_flags(mi);
    if (mi.op == Op::call_abs) {
      use |= arg_regs();
      def |= caller_saved();
      fdef = true;
    }
    RegSet in = use | (lm.live_out[i] - def);
    in.add(Reg::rsp);
    bool fin = fuse || (lm.flags_out[i] && !fdef);
    bool changed = !(in == lm.live_in[i]) || fin != bool(lm.flags_in[i]);
    lm.live_in[i] = in;
    lm.flags_in[i] = fin;
    return changed;
  };

  bool changed = true;
  while (changed) {
    changed = false;
    for (size_t bi = cfg.blocks.size(); bi-- > 0;) {
      const Block& blk = cfg.blocks[bi];
      for (size_t i = blk.last + 1; i-- > blk.first;) {
        const MicroInstr& mi = fn.instrs[i].mi;
        RegSet out;
        bool fout = false;
        if (i == blk.last) {
          if (mi.op == Op::ret) {
            out = ret_liveout(fn);
          } else if (mi.op == Op::hlt) {
            out = RegSet::of({Reg::rsp});
          } else if (mi.op == Op::jmp_abs && blk.succs.empty()) {
            out = tail_liveout(fn);
          } else {
            for (size_t s : blk.succs) {
              out |= lm.live_in[cfg.blocks[s].first];
              fout = fout || lm.flags_in[cfg.blocks[s].first];
            }
          }
        } else {
          out = lm.live_in[i + 1];
          fout = lm.flags_in[i + 1];
        }
        lm.live_out[i] = out;
        lm.flags_out[i] = fout;
        changed |= transfer(i);
      }
    }
  }
  return lm;
}

namespace {

struct TaintState {
  RegSet regs;
  bool mem = false;
  bool operator==(const TaintState&) const = default;
  TaintState join(const TaintState& o) const {
    return {regs | o.regs, mem || o.mem};
  }
};

TaintState fwd_transfer(const MicroInstr& mi, TaintState s) {
  auto t = [&](Reg r) { return s.regs.has(r); };
  switch (mi.op) {
    case Op::mov_rr:
      if (t(mi.r2)) s.regs.add(mi.r1); else s.regs.remove(mi.r1);
      break;
    case Op::mov_ri:
      s.regs.remove(mi.r1);
      break;
    case Op::mov_rm: case Op::movsx8_rm:
      if (t(mi.r2) || s.mem) s.regs.add(mi.r1); else s.regs.remove(mi.r1);
      break;
    case Op::mov_rrip:
      if (s.mem) s.regs.add(mi.r1); else s.regs.remove(mi.r1);
      break;
    case Op::mov_mr:
      if (t(mi.r2)) s.mem = true;
      break;
    case Op::mov_ripr:
      if (t(mi.r1)) s.mem = true;
      break;
    case Op::lea:
      if (t(mi.r2)) s.regs.add(mi.r1); else s.regs.remove(mi.r1);
      break;
    case Op::lea_rip:
      s.regs.remove(mi.r1);
      break;
    case Op::add_rr: case Op::sub_rr: case Op::and_rr: case Op::or_rr:
    case Op::xor_rr: case Op::shl_rr: case Op::shr_rr:
      if (t(mi.r2)) s.regs.add(mi.r1);
      break;
    case Op::add_rm:
      if (t(mi.r2) || s.mem) s.regs.add(mi.r1);
      break;
    case Op::add_ri: case Op::sub_ri: case Op::and_ri: case Op::or_ri:
    case Op::xor_ri: case Op::shl_ri: case Op::shr_ri:
    case Op::neg_r: case Op::not_r:
      break;
    case Op::add_mi: case Op::sub_mi:
      break;  // memory cell keeps its classification under the summary bit
    case Op::cmov_rr:
      if (t(mi.r2)) s.regs.add(mi.r1);
      break;
    case Op::xchg_rm: {
      bool rt = t(mi.r1);
      if (s.mem) s.regs.add(mi.r1); else s.regs.remove(mi.r1);
      if (rt) s.mem = true;
      break;
    }
    case Op::push_r:
      if (t(mi.r1)) s.mem = true;
      break;
    case Op::pop_r:
      if (s.mem) s.regs.add(mi.r1); else s.regs.remove(mi.r1);
      break;
    case Op::call_abs: {
      bool any = s.regs.intersects(arg_regs());
      caller_saved().for_each([&](Reg r) { s.regs.remove(r); });
      if (any) {
        s.regs.add(Reg::rax);
        s.mem = true;
      }
      break;
    }
    default:
      break;
  }
  s.regs.remove(Reg::rsp);
  return s;
}

TaintState bwd_transfer(const Function& fn, const MicroInstr& mi, TaintState s) {
  auto rel = [&](Reg r) { return s.regs.has(r); };
  auto move_like = [&](Reg dst, Reg src) {
    if (rel(dst)) {
      s.regs.remove(dst);
      s.regs.add(src);
    }
  };
  switch (mi.op) {
    case Op::mov_rr: move_like(mi.r1, mi.r2); break;
    case Op::mov_ri: case Op::lea_rip: s.regs.remove(mi.r1); break;
    case Op::mov_rm: case Op::movsx8_rm: case Op::mov_rrip:
      if (rel(mi.r1)) {
        s.regs.remove(mi.r1);
        s.mem = true;
      }
      break;
    case Op::mov_mr:
      if (s.mem) s.regs.add(mi.r2);
      break;
    case Op::mov_ripr:
      if (s.mem) s.regs.add(mi.r1);
      break;
    case Op::lea: move_like(mi.r1, mi.r2); break;
    case Op::add_rr: case Op::sub_rr: case Op::and_rr: case Op::or_rr:
    case Op::xor_rr: case Op::shl_rr: case Op::shr_rr:
      if (rel(mi.r1)) s.regs.add(mi.r2);
      break;
    case Op::add_rm:
      if (rel(mi.r1)) s.mem = true;
      break;
    case Op::add_mi: case Op::sub_mi:
      break;
    case Op::cmov_rr:
      if (rel(mi.r1)) s.regs.add(mi.r2);
      break;
    case Op::xchg_rm: {
      bool r_rel = rel(mi.r1);
      s.regs.remove(mi.r1);
      if (s.mem) s.regs.add(mi.r1);
      if (r_rel) s.mem = true;
      break;
    }
    case Op::push_r:
      if (s.mem) s.regs.add(mi.r1);
      break;
    case Op::pop_r:
      if (rel(mi.r1)) {
        s.regs.remove(mi.r1);
        s.mem = true;
      }
      break;
    case Op::call_abs:
      if (rel(Reg::rax) || s.mem) {
        s.regs.remove(Reg::rax);
        s.regs |= arg_regs();
      }
      break;
    case Op::ret:
      s.regs = RegSet::of({Reg::rax});
      s.regs |= fn.extra_liveout;
      s.mem = true;  // stored globals are observable
      break;
    default:
      break;
  }
  s.regs.remove(Reg::rsp);
  return s;
}

}  // namespace

TaintMap analyze_taint(const Function& fn, const Cfg& cfg) {
  const size_t n = fn.instrs.size();
  const size_t nb = cfg.blocks.size();

  // Forward pass: block-level fixed point, then per-instruction expansion.
  std::vector<TaintState> fwd_in(nb), fwd_out(nb);
  fwd_in[0].regs = arg_regs();
  fwd_in[0].regs.remove(Reg::rsp);
  bool changed = true;
  while (changed) {
    changed = false;
    for (size_t b = 0; b < nb; ++b) {
      TaintState in = fwd_in[b];
      for (size_t p : cfg.blocks[b].preds) in = in.join(fwd_out[p]);
      if (b == 0) in.regs |= arg_regs();
      TaintState out = in;
      for (size_t i = cfg.blocks[b].first; i <= cfg.blocks[b].last; ++i)
        out = fwd_transfer(fn.instrs[i].mi, out);
      if (!(in == fwd_in[b]) || !(out == fwd_out[b])) changed = true;
      fwd_in[b] = in;
      fwd_out[b] = out;
    }
  }

  // Backward pass: seed at rets (and tail jumps, which hand off to a callee
  // whose result flows to our caller).
  std::vector<TaintState> bwd_in(nb), bwd_out(nb);  // in = at block end, out = at block start
  changed = true;
  while (changed) {
    changed = false;
    for (size_t b = nb; b-- > 0;) {
      const Block& blk = cfg.blocks[b];
      TaintState end = bwd_in[b];
      for (size_t s : blk.succs) end = end.join(bwd_out[s]);
      const MicroInstr& t = fn.instrs[blk.last].mi;
      if (t.op == Op::jmp_abs && blk.succs.empty()) {
        end.regs |= arg_regs();
        end.mem = true;
      }
      TaintState start = end;
      for (size_t i = blk.last + 1; i-- > blk.first;)
        start = bwd_transfer(fn, fn.instrs[i].mi, start);
      if (!(end == bwd_in[b]) || !(start == bwd_out[b])) changed = true;
      bwd_in[b] = end;
      bwd_out[b] = start;
    }
  }

  TaintMap tm;
  tm.input_derived.assign(n, {});
  tm.output_relevant.assign(n, {});
  tm.symbolic.assign(n, {});
  for (size_t b = 0; b < nb; ++b) {
    const Block& blk = cfg.blocks[b];
    // Forward states walked down; backward states recomputed per suffix.
    TaintState f = fwd_in[b];
    std::vector<TaintState> bstates(blk.last - blk.first + 2);
    bstates.back() = bwd_in[b];
    for (size_t i = blk.last + 1; i-- > blk.first;)
      bstates[i - blk.first] = bwd_transfer(fn, fn.instrs[i].mi, bstates[i - blk.first + 1]);
    for (size_t i = blk.first; i <= blk.last; ++i) {
      tm.input_derived[i] = f.regs;
      tm.output_relevant[i] = bstates[i - blk.first].regs;
      tm.symbolic[i] = f.regs & bstates[i - blk.first].regs;
      f = fwd_transfer(fn.instrs[i].mi, f);
    }
  }
  return tm;
}

}  // namespace rf

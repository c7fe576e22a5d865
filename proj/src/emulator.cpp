#include "emulator.hpp"

#include <cstdio>
#include <cstring>

#include "error.hpp"
#include "layout.hpp"

namespace rf {

const char* exit_reason_name(ExitReason r) {
  switch (r) {
    case ExitReason::ok: return "ok";
    case ExitReason::halt: return "halt";
    case ExitReason::invalid_decode: return "invalid_decode";
    case ExitReason::stack_fault: return "stack_fault";
    case ExitReason::mem_fault: return "mem_fault";
    case ExitReason::fuel_exhausted: return "fuel_exhausted";
    case ExitReason::ss_overflow: return "ss_overflow";
    case ExitReason::ss_underflow: return "ss_underflow";
    case ExitReason::running: return "running";
  }
  return "?";
}

std::string Trace::export_text() const {
  std::string out;
  char buf[160];
  for (size_t i = 0; i < events.size(); ++i) {
    const TraceEvent& e = events[i];
    snprintf(buf, sizeof buf, "%zu 0x%llx %s 0x%llx 0x%llx 0x%llx\n", i,
             (unsigned long long)e.addr, disasm_at(e.instr, e.addr).c_str(),
             (unsigned long long)e.rsp_before, (unsigned long long)e.rsp_after,
             (unsigned long long)e.ss0);
    out += buf;
  }
  return out;
}

Emulator::Emulator(const ProgramImage& img) : img_(img) {
  for (const auto& s : img.sections) {
    Seg seg;
    seg.base = s.vaddr;
    seg.bytes = s.bytes;
    seg.writable = s.name != "text";
    segs_.push_back(std::move(seg));
  }
  Seg stack;
  stack.base = kStackTop - kStackSize;
  stack.bytes.assign(kStackSize, 0);
  stack.writable = true;
  segs_.push_back(std::move(stack));
}

Emulator::~Emulator() = default;

Emulator::Seg* Emulator::seg_for(uint64_t addr, size_t n) {
  for (auto& s : segs_)
    if (s.contains(addr, n)) return &s;
  return nullptr;
}

const Emulator::Seg* Emulator::seg_for(uint64_t addr, size_t n) const {
  for (const auto& s : segs_)
    if (s.contains(addr, n)) return &s;
  return nullptr;
}

void Emulator::setup_call(uint64_t entry, const std::vector<uint64_t>& args) {
  // Reset writable memory from the image; the synthetic stack zeroes.
  for (auto& seg : segs_) {
    if (!seg.writable) continue;
    bool from_img = false;
    for (const auto& s : img_.sections) {
      if (s.vaddr == seg.base) {
        seg.bytes = s.bytes;
        from_img = true;
        break;
      }
    }
    if (!from_img) std::fill(seg.bytes.begin(), seg.bytes.end(), 0);
  }
  regs_.fill(0);
  cf_ = zf_ = false;
  events_ = 0;
  fault_addr_ = 0;
  fault_event_ = 0;
  trace_ = Trace{};

  static constexpr Reg kArgOrder[6] = {Reg::rdi, Reg::rsi, Reg::rdx,
                                       Reg::rcx, Reg::r8, Reg::r9};
  if (args.size() > 6) fail(Errc::param, "at most 6 arguments supported");
  for (size_t i = 0; i < args.size(); ++i) regs_[size_t(kArgOrder[i])] = args[i];

  uint64_t rsp = kStackTop - 64;
  rsp -= 8;
  uint64_t v = kReturnSentinel;
  Seg* s = seg_for(rsp, 8);
  memcpy(s->bytes.data() + (rsp - s->base), &v, 8);
  regs_[size_t(Reg::rsp)] = rsp;
  rip_ = entry;
}

bool Emulator::load(uint64_t addr, size_t n, uint64_t& out) {
  const Seg* s = seg_for(addr, n);
  if (!s) return false;
  uint64_t v = 0;
  memcpy(&v, s->bytes.data() + (addr - s->base), n);
  out = v;
  return true;
}

bool Emulator::store(uint64_t addr, size_t n, uint64_t v, ExitReason& fault) {
  Seg* s = seg_for(addr, n);
  if (!s) {
    fault = ExitReason::mem_fault;
    return false;
  }
  if (!s->writable) {
    fault = ExitReason::mem_fault;
    return false;
  }
  memcpy(s->bytes.data() + (addr - s->base), &v, n);
  // Stack-switching discipline: cell 0 must stay a plausible byte offset.
  if (addr < kSsAddr + 8 && addr + n > kSsAddr) {
    uint64_t cell0 = ss0();
    if (int64_t(cell0) < 0) {
      fault = ExitReason::ss_underflow;
      return false;
    }
    if (cell0 > 8ull * kSsCapacity) {
      fault = ExitReason::ss_overflow;
      return false;
    }
  }
  return true;
}

uint64_t Emulator::ss0() const {
  uint64_t v = 0;
  const Seg* s = seg_for(kSsAddr, 8);
  if (s) memcpy(&v, s->bytes.data() + (kSsAddr - s->base), 8);
  return v;
}

bool Emulator::cond(Cond c) const {
  switch (c) {
    case Cond::e: return zf_;
    case Cond::ne: return !zf_;
    case Cond::b: return cf_;
    case Cond::ae: return !cf_;
    case Cond::be: return cf_ || zf_;
    case Cond::a: return !cf_ && !zf_;
  }
  return false;
}

ExitReason Emulator::step() {
  const Seg* text = seg_for(rip_, 1);
  if (!text || text->writable) {
    fault_addr_ = rip_;
    fault_event_ = events_;
    return ExitReason::invalid_decode;
  }
  auto d = decode(text->bytes, rip_ - text->base);
  if (!d) {
    fault_addr_ = rip_;
    fault_event_ = events_;
    return ExitReason::invalid_decode;
  }

  uint64_t rsp_before = regs_[size_t(Reg::rsp)];
  uint64_t addr = rip_;
  ExitReason r = exec(d->instr, d->length);
  ++events_;
  if (tracing_) {
    TraceEvent e;
    e.addr = addr;
    e.instr = d->instr;
    e.rsp_before = rsp_before;
    e.rsp_after = regs_[size_t(Reg::rsp)];
    e.ss0 = ss0();
    trace_.events.push_back(e);
  }
  if (d->instr.op == Op::add_rr && d->instr.r1 == Reg::rsp && r == ExitReason::running)
    trace_.branch_deltas.push_back(int64_t(regs_[size_t(d->instr.r2)]));
  if (r != ExitReason::running && r != ExitReason::ok) {
    fault_event_ = events_ - 1;
  }
  return r;
}

ExitReason Emulator::exec(const MicroInstr& i, size_t len) {
  uint64_t next = rip_ + len;
  auto& R = regs_;
  auto r1 = [&]() -> uint64_t& { return R[size_t(i.r1)]; };
  auto r2v = [&]() { return R[size_t(i.r2)]; };
  uint64_t ea = 0;
  ExitReason fault = ExitReason::mem_fault;

  auto set_zf = [&](uint64_t v) { zf_ = v == 0; };
  auto do_add = [&](uint64_t a, uint64_t b) {
    uint64_t res = a + b;
    cf_ = res < a;
    set_zf(res);
    return res;
  };
  auto do_sub = [&](uint64_t a, uint64_t b) {
    cf_ = a < b;
    uint64_t res = a - b;
    set_zf(res);
    return res;
  };
  auto logic = [&](uint64_t res) {
    cf_ = false;
    set_zf(res);
    return res;
  };
  auto mem_fail = [&]() {
    fault_addr_ = ea;
    return fault;
  };
  auto load64 = [&](uint64_t a, uint64_t& out) {
    ea = a;
    return load(a, 8, out);
  };
  auto store64 = [&](uint64_t a, uint64_t v) {
    ea = a;
    return store(a, 8, v, fault);
  };
  auto push64 = [&](uint64_t v) {
    R[size_t(Reg::rsp)] -= 8;
    ea = R[size_t(Reg::rsp)];
    if (!store(ea, 8, v, fault)) {
      if (fault == ExitReason::mem_fault) fault = ExitReason::stack_fault;
      return false;
    }
    return true;
  };
  auto pop64 = [&](uint64_t& v) {
    ea = R[size_t(Reg::rsp)];
    if (!load(ea, 8, v)) {
      fault = ExitReason::stack_fault;
      return false;
    }
    R[size_t(Reg::rsp)] += 8;
    return true;
  };

  uint64_t m = 0;
  switch (i.op) {
    case Op::mov_rr: r1() = r2v(); break;
    case Op::mov_ri: r1() = i.imm; break;
    case Op::mov_rm:
      if (!load64(r2v() + uint64_t(int64_t(i.disp)), m)) return mem_fail();
      r1() = m;
      break;
    case Op::mov_mr:
      if (!store64(r1() + uint64_t(int64_t(i.disp)), r2v())) return mem_fail();
      break;
    case Op::mov_rrip:
      if (!load64(next + uint64_t(int64_t(i.disp)), m)) return mem_fail();
      r1() = m;
      break;
    case Op::mov_ripr:
      if (!store64(next + uint64_t(int64_t(i.disp)), r1())) return mem_fail();
      break;
    case Op::lea: r1() = r2v() + uint64_t(int64_t(i.disp)); break;
    case Op::lea_rip: r1() = next + uint64_t(int64_t(i.disp)); break;
    case Op::add_rr: r1() = do_add(r1(), r2v()); break;
    case Op::add_ri: r1() = do_add(r1(), i.imm); break;
    case Op::add_rm:
      if (!load64(r2v() + uint64_t(int64_t(i.disp)), m)) return mem_fail();
      r1() = do_add(r1(), m);
      break;
    case Op::add_mi:
      ea = r1() + uint64_t(int64_t(i.disp));
      if (!load(ea, 8, m)) return mem_fail();
      if (!store(ea, 8, do_add(m, i.imm), fault)) return mem_fail();
      break;
    case Op::sub_rr: r1() = do_sub(r1(), r2v()); break;
    case Op::sub_ri: r1() = do_sub(r1(), i.imm); break;
    case Op::sub_mi:
      ea = r1() + uint64_t(int64_t(i.disp));
      if (!load(ea, 8, m)) return mem_fail();
      if (!store(ea, 8, do_sub(m, i.imm), fault)) return mem_fail();
      break;
    case Op::and_rr: r1() = logic(r1() & r2v()); break;
    case Op::and_ri: r1() = logic(r1() & i.imm); break;
    case Op::or_rr: r1() = logic(r1() | r2v()); break;
    case Op::or_ri: r1() = logic(r1() | i.imm); break;
    case Op::xor_rr: r1() = logic(r1() ^ r2v()); break;
    case Op::xor_ri: r1() = logic(r1() ^ i.imm); break;
    case Op::shl_ri:
    case Op::shl_rr: {
      uint64_t c = (i.op == Op::shl_ri ? i.imm : r2v()) & 63;
      if (c) {
        uint64_t v = r1();
        cf_ = (v >> (64 - c)) & 1;
        r1() = v << c;
        set_zf(r1());
      }
      break;
    }
    case Op::shr_ri:
    case Op::shr_rr: {
      uint64_t c = (i.op == Op::shr_ri ? i.imm : r2v()) & 63;
      if (c) {
        uint64_t v = r1();
        cf_ = (v >> (c - 1)) & 1;
        r1() = v >> c;
        set_zf(r1());
      }
      break;
    }
    case Op::neg_r: {
      uint64_t v = r1();
      cf_ = v != 0;
      r1() = uint64_t(-int64_t(v));
      set_zf(r1());
      break;
    }
    case Op::not_r: r1() = ~r1(); break;
    case Op::cmp_rr: do_sub(r1(), r2v()); break;
    case Op::cmp_ri: do_sub(r1(), i.imm); break;
    case Op::test_rr: logic(r1() & r2v()); break;
    case Op::movsx8_rm: {
      ea = r2v() + uint64_t(int64_t(i.disp));
      uint64_t b = 0;
      if (!load(ea, 1, b)) return mem_fail();
      r1() = uint64_t(int64_t(int8_t(uint8_t(b))));
      break;
    }
    case Op::push_r:
      if (!push64(r1())) return mem_fail();
      break;
    case Op::push_i:
      if (!push64(i.imm)) return mem_fail();
      break;
    case Op::pushf: {
      uint64_t w = (cf_ ? 1 : 0) | (zf_ ? 0x40 : 0);
      if (!push64(w)) return mem_fail();
      break;
    }
    case Op::pop_r:
      if (!pop64(m)) return mem_fail();
      r1() = m;
      break;
    case Op::popf:
      if (!pop64(m)) return mem_fail();
      cf_ = m & 1;
      zf_ = m & 0x40;
      break;
    case Op::cmov_rr: {
      bool take = cond(i.cc);
      if (flips_.count(events_)) take = !take;
      if (take) r1() = r2v();
      break;
    }
    case Op::xchg_rm: {
      ea = r2v() + uint64_t(int64_t(i.disp));
      if (!load(ea, 8, m)) return mem_fail();
      if (!store(ea, 8, r1(), fault)) return mem_fail();
      r1() = m;
      break;
    }
    case Op::jmp_abs: rip_ = i.imm; return ExitReason::running;
    case Op::jmp_r: rip_ = r1(); return ExitReason::running;
    case Op::jcc_abs: {
      bool take = cond(i.cc);
      if (flips_.count(events_)) take = !take;
      rip_ = take ? i.imm : next;
      return ExitReason::running;
    }
    case Op::call_abs:
      if (!push64(next)) return mem_fail();
      rip_ = i.imm;
      return ExitReason::running;
    case Op::ret:
      if (!pop64(m)) return mem_fail();
      if (m == kReturnSentinel) {
        rip_ = m;
        return ExitReason::ok;
      }
      rip_ = m;
      return ExitReason::running;
    case Op::leave: {
      R[size_t(Reg::rsp)] = R[size_t(Reg::rbp)];
      if (!pop64(m)) return mem_fail();
      R[size_t(Reg::rbp)] = m;
      break;
    }
    case Op::hlt:
      rip_ = next;
      return ExitReason::halt;
  }
  rip_ = next;
  return ExitReason::running;
}

ExitReason Emulator::run(uint64_t fuel) {
  while (fuel-- > 0) {
    ExitReason r = step();
    if (r != ExitReason::running) return r;
  }
  fault_event_ = events_;
  return ExitReason::fuel_exhausted;
}

std::unique_ptr<Emulator::Snapshot> Emulator::snapshot() const {
  auto s = std::make_unique<Snapshot>();
  for (const auto& seg : segs_)
    if (seg.writable) s->writable.push_back(seg.bytes);
  s->regs = regs_;
  s->rip = rip_;
  s->cf = cf_;
  s->zf = zf_;
  s->events = events_;
  return s;
}

void Emulator::restore(const Snapshot& s) {
  size_t k = 0;
  for (auto& seg : segs_)
    if (seg.writable) seg.bytes = s.writable[k++];
  regs_ = s.regs;
  rip_ = s.rip;
  cf_ = s.cf;
  zf_ = s.zf;
  events_ = s.events;
}

RunOutputs Emulator::outputs() const {
  RunOutputs o;
  o.event_count = events_;
  o.fault_addr = fault_addr_;
  o.fault_event = fault_event_;
  o.regs = regs_;
  for (const auto& [name, addr] : img_.symbols) {
    if (name.rfind("g.", 0) != 0) continue;
    uint64_t v = 0;
    const Seg* s = seg_for(addr, 8);
    if (s) memcpy(&v, s->bytes.data() + (addr - s->base), 8);
    o.globals.emplace_back(name.substr(2), v);
  }
  return o;
}

bool Emulator::read_mem(uint64_t addr, void* out, size_t n) const {
  const Seg* s = seg_for(addr, n);
  if (!s) return false;
  memcpy(out, s->bytes.data() + (addr - s->base), n);
  return true;
}

bool Emulator::write_mem(uint64_t addr, const void* in, size_t n) {
  Seg* s = seg_for(addr, n);
  if (!s || !s->writable) return false;
  memcpy(s->bytes.data() + (addr - s->base), in, n);
  return true;
}

namespace {

RunOutputs run_entry(const ProgramImage& img, const std::string& fn,
                     const std::vector<uint64_t>& args, uint64_t fuel) {
  Emulator emu(img);
  emu.setup_call(img.symbol(fn), args);
  ExitReason r = emu.run(fuel);
  RunOutputs o = emu.outputs();
  o.exit = r;
  return o;
}

}  // namespace

RunOutputs run_native(const ProgramImage& img, const std::string& fn,
                      const std::vector<uint64_t>& args, uint64_t fuel) {
  if (img.has_symbol(fn + ".chain"))
    fail(Errc::param, "run_native: '" + fn + "' is pivoted in this image");
  return run_entry(img, fn, args, fuel);
}

RunOutputs run_obfuscated(const ProgramImage& img, const std::string& fn,
                          const std::vector<uint64_t>& args, uint64_t fuel) {
  if (!img.has_symbol(fn + ".chain"))
    fail(Errc::param, "run_obfuscated: '" + fn + "' is not pivoted in this image");
  return run_entry(img, fn, args, fuel);
}

}  // namespace rf

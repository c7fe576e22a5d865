#include "isa.hpp"

#include <array>
#include <cassert>
#include <cstdio>

namespace rf {

namespace {

constexpr std::array<const char*, 16> kRegNames = {
    "rax", "rcx", "rdx", "rbx", "rsp", "rbp", "rsi", "rdi",
    "r8",  "r9",  "r10", "r11", "r12", "r13", "r14", "r15",
};

constexpr std::array<const char*, 6> kCondNames = {"e", "ne", "b", "ae", "be", "a"};

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(uint8_t(v));
  out.push_back(uint8_t(v >> 8));
  out.push_back(uint8_t(v >> 16));
  out.push_back(uint8_t(v >> 24));
}

void put_u64(std::vector<uint8_t>& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(uint8_t(v >> (8 * i)));
}

uint32_t get_u32(std::span<const uint8_t> b, size_t off) {
  return uint32_t(b[off]) | uint32_t(b[off + 1]) << 8 | uint32_t(b[off + 2]) << 16 |
         uint32_t(b[off + 3]) << 24;
}

uint64_t get_u64(std::span<const uint8_t> b, size_t off) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= uint64_t(b[off + i]) << (8 * i);
  return v;
}

}  // namespace

const char* reg_name(Reg r) { return kRegNames[static_cast<int>(r)]; }

std::optional<Reg> reg_from_name(std::string_view name) {
  for (int i = 0; i < kNumRegs; ++i)
    if (name == kRegNames[i]) return static_cast<Reg>(i);
  return std::nullopt;
}

const char* cond_name(Cond c) { return kCondNames[static_cast<int>(c)]; }

std::optional<Cond> cond_from_name(std::string_view name) {
  for (int i = 0; i < 6; ++i)
    if (name == kCondNames[i]) return static_cast<Cond>(i);
  return std::nullopt;
}

const char* op_mnemonic(Op op) {
  switch (op) {
    case Op::mov_rr: case Op::mov_ri: case Op::mov_rm: case Op::mov_mr:
    case Op::mov_rrip: case Op::mov_ripr:
      return "mov";
    case Op::lea: case Op::lea_rip: return "lea";
    case Op::add_rr: case Op::add_ri: case Op::add_rm: case Op::add_mi: return "add";
    case Op::sub_rr: case Op::sub_ri: case Op::sub_mi: return "sub";
    case Op::and_rr: case Op::and_ri: return "and";
    case Op::or_rr: case Op::or_ri: return "or";
    case Op::xor_rr: case Op::xor_ri: return "xor";
    case Op::shl_ri: case Op::shl_rr: return "shl";
    case Op::shr_ri: case Op::shr_rr: return "shr";
    case Op::neg_r: return "neg";
    case Op::not_r: return "not";
    case Op::cmp_rr: case Op::cmp_ri: return "cmp";
    case Op::test_rr: return "test";
    case Op::movsx8_rm: return "movsx8";
    case Op::push_r: case Op::push_i: return "push";
    case Op::pop_r: return "pop";
    case Op::pushf: return "pushf";
    case Op::popf: return "popf";
    case Op::cmov_rr: return "cmov";
    case Op::xchg_rm: return "xchg";
    case Op::jmp_abs: case Op::jmp_r: return "jmp";
    case Op::jcc_abs: return "jcc";
    case Op::call_abs: return "call";
    case Op::ret: return "ret";
    case Op::leave: return "leave";
    case Op::hlt: return "hlt";
  }
  return "?";
}

OpShape op_shape(Op op) {
  switch (op) {
    case Op::mov_rr: case Op::add_rr: case Op::sub_rr: case Op::and_rr:
    case Op::or_rr: case Op::xor_rr: case Op::shl_rr: case Op::shr_rr:
    case Op::cmp_rr: case Op::test_rr:
      return {.regs = true, .single_reg = false, .cc = false, .disp = false, .imm = false};
    case Op::mov_ri: case Op::add_ri: case Op::sub_ri: case Op::and_ri:
    case Op::or_ri: case Op::xor_ri: case Op::shl_ri: case Op::shr_ri:
    case Op::cmp_ri:
      return {.regs = true, .single_reg = true, .cc = false, .disp = false, .imm = true};
    case Op::mov_rm: case Op::mov_mr: case Op::lea: case Op::add_rm:
    case Op::movsx8_rm: case Op::xchg_rm:
      return {.regs = true, .single_reg = false, .cc = false, .disp = true, .imm = false};
    case Op::add_mi: case Op::sub_mi:
      return {.regs = true, .single_reg = true, .cc = false, .disp = true, .imm = true};
    case Op::mov_rrip: case Op::mov_ripr: case Op::lea_rip:
      return {.regs = true, .single_reg = true, .cc = false, .disp = true, .imm = false};
    case Op::neg_r: case Op::not_r: case Op::push_r: case Op::pop_r: case Op::jmp_r:
      return {.regs = true, .single_reg = true, .cc = false, .disp = false, .imm = false};
    case Op::push_i: case Op::jmp_abs: case Op::call_abs:
      return {.regs = false, .single_reg = false, .cc = false, .disp = false, .imm = true};
    case Op::jcc_abs:
      return {.regs = false, .single_reg = false, .cc = true, .disp = false, .imm = true};
    case Op::cmov_rr:
      return {.regs = true, .single_reg = false, .cc = true, .disp = false, .imm = false};
    case Op::pushf: case Op::popf: case Op::ret: case Op::leave: case Op::hlt:
      return {.regs = false, .single_reg = false, .cc = false, .disp = false, .imm = false};
  }
  return {};
}

size_t encoded_length(Op op) {
  OpShape s = op_shape(op);
  return 1 + (s.regs ? 1 : 0) + (s.cc ? 1 : 0) + (s.disp ? 4 : 0) + (s.imm ? 8 : 0);
}

void encode_to(const MicroInstr& i, std::vector<uint8_t>& out) {
  OpShape s = op_shape(i.op);
  out.push_back(static_cast<uint8_t>(i.op));
  if (s.regs) {
    uint8_t lo = s.single_reg ? 0 : static_cast<uint8_t>(i.r2);
    out.push_back(uint8_t(static_cast<uint8_t>(i.r1) << 4 | lo));
  }
  if (s.cc) out.push_back(static_cast<uint8_t>(i.cc));
  if (s.disp) put_u32(out, uint32_t(i.disp));
  if (s.imm) put_u64(out, i.imm);
}

std::vector<uint8_t> encode(const MicroInstr& i) {
  std::vector<uint8_t> out;
  encode_to(i, out);
  return out;
}

std::optional<DecodeResult> decode(std::span<const uint8_t> bytes, size_t offset) {
  if (offset >= bytes.size()) return std::nullopt;
  uint8_t b0 = bytes[offset];
  if (b0 < kFirstOpcode || b0 > kLastOpcode) return std::nullopt;
  Op op = static_cast<Op>(b0);
  OpShape s = op_shape(op);
  size_t len = encoded_length(op);
  if (offset + len > bytes.size()) return std::nullopt;

  MicroInstr i;
  i.op = op;
  size_t p = offset + 1;
  if (s.regs) {
    uint8_t rb = bytes[p++];
    if (s.single_reg && (rb & 0x0F) != 0) return std::nullopt;
    i.r1 = static_cast<Reg>(rb >> 4);
    i.r2 = static_cast<Reg>(rb & 0x0F);
  }
  if (s.cc) {
    uint8_t cb = bytes[p++];
    if (cb > 5) return std::nullopt;
    i.cc = static_cast<Cond>(cb);
  }
  if (s.disp) {
    i.disp = int32_t(get_u32(bytes, p));
    p += 4;
  }
  if (s.imm) {
    i.imm = get_u64(bytes, p);
    p += 8;
  }
  assert(p - offset == len);
  return DecodeResult{i, len};
}

namespace {

std::string mem_str(Reg base, int32_t disp) {
  char buf[48];
  if (disp == 0)
    snprintf(buf, sizeof buf, "[%s]", reg_name(base));
  else if (disp > 0)
    snprintf(buf, sizeof buf, "[%s+0x%x]", reg_name(base), disp);
  else
    snprintf(buf, sizeof buf, "[%s-0x%x]", reg_name(base), -disp);
  return buf;
}

std::string rip_str(int32_t disp) {
  char buf[32];
  if (disp >= 0)
    snprintf(buf, sizeof buf, "[rip+0x%x]", disp);
  else
    snprintf(buf, sizeof buf, "[rip-0x%x]", -disp);
  return buf;
}

std::string imm_str(uint64_t v) {
  char buf[32];
  if (v < 10)
    snprintf(buf, sizeof buf, "%llu", (unsigned long long)v);
  else
    snprintf(buf, sizeof buf, "0x%llx", (unsigned long long)v);
  return buf;
}

}  // namespace

std::string disasm(const MicroInstr& i) {
  std::string m = op_mnemonic(i.op);
  switch (i.op) {
    case Op::mov_rr: case Op::add_rr: case Op::sub_rr: case Op::and_rr:
    case Op::or_rr: case Op::xor_rr: case Op::shl_rr: case Op::shr_rr:
    case Op::cmp_rr: case Op::test_rr:
      return m + " " + reg_name(i.r1) + ", " + reg_name(i.r2);
    case Op::mov_ri: case Op::add_ri: case Op::sub_ri: case Op::and_ri:
    case Op::or_ri: case Op::xor_ri: case Op::shl_ri: case Op::shr_ri:
    case Op::cmp_ri:
      return m + " " + reg_name(i.r1) + ", " + imm_str(i.imm);
    case Op::mov_rm: case Op::add_rm:
      return m + " " + reg_name(i.r1) + ", " + mem_str(i.r2, i.disp);
    case Op::movsx8_rm:
      return "movsx8 " + std::string(reg_name(i.r1)) + ", byte " + mem_str(i.r2, i.disp);
    case Op::lea:
      return m + " " + reg_name(i.r1) + ", " + mem_str(i.r2, i.disp);
    case Op::mov_mr:
      return m + " " + mem_str(i.r1, i.disp) + ", " + reg_name(i.r2);
    case Op::mov_rrip:
      return m + " " + reg_name(i.r1) + ", " + rip_str(i.disp);
    case Op::mov_ripr:
      return m + " " + rip_str(i.disp) + ", " + reg_name(i.r1);
    case Op::lea_rip:
      return m + " " + reg_name(i.r1) + ", " + rip_str(i.disp);
    case Op::add_mi: case Op::sub_mi:
      return m + " qword " + mem_str(i.r1, i.disp) + ", " + imm_str(i.imm);
    case Op::neg_r: case Op::not_r: case Op::pop_r: case Op::push_r:
      return m + " " + reg_name(i.r1);
    case Op::push_i:
      return m + " " + imm_str(i.imm);
    case Op::pushf: case Op::popf: case Op::ret: case Op::leave: case Op::hlt:
      return m;
    case Op::cmov_rr:
      return std::string("cmov") + cond_name(i.cc) + " " + reg_name(i.r1) + ", " + reg_name(i.r2);
    case Op::xchg_rm:
      return m + " " + reg_name(i.r1) + ", " + mem_str(i.r2, i.disp);
    case Op::jmp_abs: case Op::call_abs:
      return m + " " + imm_str(i.imm);
    case Op::jmp_r:
      return m + " " + reg_name(i.r1);
    case Op::jcc_abs:
      return std::string("j") + cond_name(i.cc) + " " + imm_str(i.imm);
  }
  return m;
}

std::string disasm_at(const MicroInstr& i, uint64_t addr) {
  if (i.op == Op::mov_rrip || i.op == Op::mov_ripr || i.op == Op::lea_rip) {
    uint64_t target = addr + encoded_length(i.op) + uint64_t(int64_t(i.disp));
    char buf[32];
    snprintf(buf, sizeof buf, "[0x%llx]", (unsigned long long)target);
    std::string m = op_mnemonic(i.op);
    if (i.op == Op::mov_ripr) return m + " " + buf + ", " + reg_name(i.r1);
    return m + " " + reg_name(i.r1) + ", " + buf;
  }
  return disasm(i);
}

std::string RegSet::str() const {
  std::string out = "{";
  bool first = true;
  for_each([&](Reg r) {
    if (!first) out += ",";
    out += reg_name(r);
    first = false;
  });
  out += "}";
  return out;
}

RegSet arg_regs() {
  return RegSet::of({Reg::rdi, Reg::rsi, Reg::rdx, Reg::rcx, Reg::r8, Reg::r9});
}

RegSet caller_saved() {
  return RegSet::of({Reg::rax, Reg::rcx, Reg::rdx, Reg::rsi, Reg::rdi,
                     Reg::r8, Reg::r9, Reg::r10, Reg::r11});
}

RegSet callee_saved() {
  return RegSet::of({Reg::rbx, Reg::rbp, Reg::r12, Reg::r13, Reg::r14, Reg::r15});
}

RegSet regs_read(const MicroInstr& i) {
  RegSet s;
  switch (i.op) {
    case Op::mov_rr: s.add(i.r2); break;
    case Op::mov_ri: break;
    case Op::mov_rm: case Op::lea: case Op::movsx8_rm: s.add(i.r2); break;
    case Op::mov_mr: s.add(i.r1); s.add(i.r2); break;
    case Op::mov_rrip: break;
    case Op::mov_ripr: s.add(i.r1); break;
    case Op::lea_rip: break;
    case Op::add_rr: case Op::sub_rr: case Op::and_rr: case Op::or_rr:
    case Op::xor_rr: case Op::shl_rr: case Op::shr_rr:
      s.add(i.r1); s.add(i.r2); break;
    case Op::add_ri: case Op::sub_ri: case Op::and_ri: case Op::or_ri:
    case Op::xor_ri: case Op::shl_ri: case Op::shr_ri:
      s.add(i.r1); break;
    case Op::add_rm: s.add(i.r1); s.add(i.r2); break;
    case Op::add_mi: case Op::sub_mi: s.add(i.r1); break;
    case Op::neg_r: case Op::not_r: s.add(i.r1); break;
    case Op::cmp_rr: case Op::test_rr: s.add(i.r1); s.add(i.r2); break;
    case Op::cmp_ri: s.add(i.r1); break;
    case Op::push_r: s.add(i.r1); s.add(Reg::rsp); break;
    case Op::push_i: case Op::pushf: s.add(Reg::rsp); break;
    case Op::pop_r: case Op::popf: s.add(Reg::rsp); break;
    case Op::cmov_rr: s.add(i.r1); s.add(i.r2); break;
    case Op::xchg_rm: s.add(i.r1); s.add(i.r2); break;
    case Op::jmp_abs: case Op::jcc_abs: case Op::call_abs: break;
    case Op::jmp_r: s.add(i.r1); break;
    case Op::ret: s.add(Reg::rsp); break;
    case Op::leave: s.add(Reg::rbp); break;
    case Op::hlt: break;
  }
  return s;
}

RegSet regs_written(const MicroInstr& i) {
  RegSet s;
  switch (i.op) {
    case Op::mov_rr: case Op::mov_ri: case Op::mov_rm: case Op::mov_rrip:
    case Op::lea: case Op::lea_rip: case Op::movsx8_rm:
      s.add(i.r1); break;
    case Op::mov_mr: case Op::mov_ripr: break;
    case Op::add_rr: case Op::add_ri: case Op::add_rm:
    case Op::sub_rr: case Op::sub_ri:
    case Op::and_rr: case Op::and_ri: case Op::or_rr: case Op::or_ri:
    case Op::xor_rr: case Op::xor_ri:
    case Op::shl_ri: case Op::shl_rr: case Op::shr_ri: case Op::shr_rr:
    case Op::neg_r: case Op::not_r:
      s.add(i.r1); break;
    case Op::add_mi: case Op::sub_mi: break;
    case Op::cmp_rr: case Op::cmp_ri: case Op::test_rr: break;
    case Op::push_r: case Op::push_i: case Op::pushf: s.add(Reg::rsp); break;
    case Op::pop_r: s.add(i.r1); s.add(Reg::rsp); break;
    case Op::popf: s.add(Reg::rsp); break;
    case Op::cmov_rr: s.add(i.r1); break;
    case Op::xchg_rm: s.add(i.r1); break;
    case Op::jmp_abs: case Op::jmp_r: case Op::jcc_abs: break;
    case Op::call_abs: s.add(Reg::rsp); break;
    case Op::ret: s.add(Reg::rsp); break;
    case Op::leave: s.add(Reg::rsp); s.add(Reg::rbp); break;
    case Op::hlt: break;
  }
  return s;
}

bool writes_flags(const MicroInstr& i) {
  switch (i.op) {
    case Op::add_rr: case Op::add_ri: case Op::add_rm: case Op::add_mi:
    case Op::sub_rr: case Op::sub_ri: case Op::sub_mi:
    case Op::and_rr: case Op::and_ri: case Op::or_rr: case Op::or_ri:
    case Op::xor_rr: case Op::xor_ri:
    case Op::shl_ri: case Op::shl_rr: case Op::shr_ri: case Op::shr_rr:
    case Op::neg_r: case Op::cmp_rr: case Op::cmp_ri: case Op::test_rr:
    case Op::popf:
      return true;
    default:
      return false;
  }
}

bool reads_flags(const MicroInstr& i) {
  return i.op == Op::cmov_rr || i.op == Op::jcc_abs || i.op == Op::pushf;
}

bool reads_mem(const MicroInstr& i) {
  switch (i.op) {
    case Op::mov_rm: case Op::mov_rrip: case Op::add_rm: case Op::movsx8_rm:
    case Op::pop_r: case Op::popf: case Op::xchg_rm: case Op::ret: case Op::leave:
    case Op::add_mi: case Op::sub_mi:
      return true;
    default:
      return false;
  }
}

bool writes_mem(const MicroInstr& i) {
  switch (i.op) {
    case Op::mov_mr: case Op::mov_ripr: case Op::add_mi: case Op::sub_mi:
    case Op::push_r: case Op::push_i: case Op::pushf: case Op::xchg_rm:
    case Op::call_abs:
      return true;
    default:
      return false;
  }
}

bool is_terminator(const MicroInstr& i) {
  switch (i.op) {
    case Op::jmp_abs: case Op::jmp_r: case Op::jcc_abs: case Op::ret: case Op::hlt:
      return true;
    default:
      return false;
  }
}

}  // namespace rf

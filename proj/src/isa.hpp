#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace rf {

enum class Reg : uint8_t {
  rax = 0, rcx, rdx, rbx, rsp, rbp, rsi, rdi,
  r8, r9, r10, r11, r12, r13, r14, r15,
};

inline constexpr int kNumRegs = 16;
inline constexpr Reg kRsp = Reg::rsp;

const char* reg_name(Reg r);
std::optional<Reg> reg_from_name(std::string_view name);

// Condition codes over the two modelled flags. Adjacent codes are negations
// of each other, so negate() is a single bit flip.
enum class Cond : uint8_t { e = 0, ne, b, ae, be, a };

inline Cond negate(Cond c) { return static_cast<Cond>(static_cast<uint8_t>(c) ^ 1); }
const char* cond_name(Cond c);
std::optional<Cond> cond_from_name(std::string_view name);

// Closed opcode table. Byte values 0x01..0x2D; 0x00 and anything >= 0x2E
// decodes to nothing. Each operand form gets its own opcode byte so that
// decoding is defined at every byte offset.
enum class Op : uint8_t {
  mov_rr = 0x01,
  mov_ri,
  mov_rm,
  mov_mr,
  mov_rrip,   // mov reg, [rip+disp]
  mov_ripr,   // mov [rip+disp], reg
  lea,        // lea reg, [base+disp]
  lea_rip,    // lea reg, [rip+disp]
  add_rr,
  add_ri,
  add_rm,     // add reg, [base+disp]
  add_mi,     // add qword [base+disp], imm
  sub_rr,
  sub_ri,
  sub_mi,     // sub qword [base+disp], imm
  and_rr,
  and_ri,
  or_rr,
  or_ri,
  xor_rr,
  xor_ri,
  shl_ri,
  shl_rr,
  shr_ri,
  shr_rr,
  neg_r,
  not_r,
  cmp_rr,
  cmp_ri,
  test_rr,
  movsx8_rm,  // movsx reg, byte [base+disp]
  push_r,
  push_i,
  pop_r,
  pushf,
  popf,
  cmov_rr,
  xchg_rm,    // xchg reg, [base+disp]
  jmp_abs,
  jmp_r,
  jcc_abs,
  call_abs,
  ret,
  leave,
  hlt,        // 0x2D
};

inline constexpr uint8_t kFirstOpcode = 0x01;
inline constexpr uint8_t kLastOpcode = 0x2D;

const char* op_mnemonic(Op op);

// A single decoded instruction. Field roles depend on the operand form:
//   r1 = destination / single register / memory base on the mem-dst forms
//   r2 = source register / memory base on the mem-src forms
//   disp = signed memory displacement (also used by the rip-relative forms)
//   imm = immediate or absolute code address (jmp_abs/jcc_abs/call_abs/push_i)
struct MicroInstr {
  Op op{Op::hlt};
  Reg r1{Reg::rax};
  Reg r2{Reg::rax};
  int32_t disp{0};
  uint64_t imm{0};
  Cond cc{Cond::e};

  bool operator==(const MicroInstr&) const = default;
};

// Encoding layout: opcode byte, register byte (r1<<4 | r2) when the form has
// register operands, condition byte for cmov/jcc, 4-byte LE displacement,
// 8-byte LE immediate.
struct OpShape {
  bool regs;       // register byte present
  bool single_reg; // low nibble of the register byte must be zero
  bool cc;
  bool disp;
  bool imm;
};

OpShape op_shape(Op op);
size_t encoded_length(Op op);

std::vector<uint8_t> encode(const MicroInstr& i);
void encode_to(const MicroInstr& i, std::vector<uint8_t>& out);

struct DecodeResult {
  MicroInstr instr;
  size_t length = 0;
};

// Decodes at `offset`. Returns nullopt on an invalid opcode byte, a nonzero
// low nibble in a single-register form, an out-of-range condition byte, or
// truncated bytes.
std::optional<DecodeResult> decode(std::span<const uint8_t> bytes, size_t offset = 0);

// Disassembly. `addr` is the instruction's own address; rip-relative forms
// print their resolved absolute target when it is known.
std::string disasm(const MicroInstr& i);
std::string disasm_at(const MicroInstr& i, uint64_t addr);

// --- Static facts used by dataflow analysis and gadget metadata. ---

struct RegSet {
  uint16_t bits = 0;

  static RegSet of(std::initializer_list<Reg> rs) {
    RegSet s;
    for (Reg r : rs) s.add(r);
    return s;
  }
  void add(Reg r) { bits |= uint16_t(1u << static_cast<int>(r)); }
  void remove(Reg r) { bits &= uint16_t(~(1u << static_cast<int>(r))); }
  bool has(Reg r) const { return bits & (1u << static_cast<int>(r)); }
  bool empty() const { return bits == 0; }
  int count() const { return __builtin_popcount(bits); }
  RegSet operator|(RegSet o) const { return RegSet{uint16_t(bits | o.bits)}; }
  RegSet operator&(RegSet o) const { return RegSet{uint16_t(bits & o.bits)}; }
  RegSet operator-(RegSet o) const { return RegSet{uint16_t(bits & ~o.bits)}; }
  RegSet& operator|=(RegSet o) { bits |= o.bits; return *this; }
  bool operator==(const RegSet&) const = default;
  bool intersects(RegSet o) const { return (bits & o.bits) != 0; }
  std::string str() const;

  template <typename F>
  void for_each(F&& f) const {
    for (int i = 0; i < kNumRegs; ++i)
      if (bits & (1u << i)) f(static_cast<Reg>(i));
  }
};

// Calling convention (fixed by design): args rdi,rsi,rdx,rcx,r8,r9; return
// rax; caller-saved rax,rcx,rdx,rsi,rdi,r8..r11; callee-saved rbx,rbp,r12..r15.
RegSet arg_regs();
RegSet caller_saved();
RegSet callee_saved();

RegSet regs_read(const MicroInstr& i);
RegSet regs_written(const MicroInstr& i);
bool writes_flags(const MicroInstr& i);
bool reads_flags(const MicroInstr& i);
bool reads_mem(const MicroInstr& i);
bool writes_mem(const MicroInstr& i);
bool is_terminator(const MicroInstr& i);  // jmp/jcc/ret/hlt (call is not)

}  // namespace rf

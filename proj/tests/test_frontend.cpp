#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "analysis.hpp"
#include "assembler.hpp"
#include "error.hpp"
#include "layout.hpp"

#include <string>

using namespace rf;

namespace {

Errc code_of(const std::string& src) {
  try {
    assemble(src);
  } catch (const Error& e) {
    return e.code;
  }
  return Errc::internal;  // "no error", distinguishable from every real code
}

}  // namespace

TEST_CASE("layout: functions from kTextBase, globals from kGlobalsAddr") {
  Program p = assemble(
      ".global gv 42\n"
      ".global gw 0x10\n"
      ".func f\n"
      "  mov rax, rdi\n"
      "  ret\n"
      ".func g\n"
      "  ret\n");
  REQUIRE(p.funcs.size() == 2);
  CHECK(p.funcs[0].entry == kTextBase);
  CHECK(p.funcs[0].body_size == 3);  // mov_rr + ret
  CHECK(p.funcs[1].entry == kTextBase + 3);
  CHECK(p.text_end == kTextBase + 4);
  REQUIRE(p.globals.size() == 2);
  CHECK(p.globals[0].addr == kGlobalsAddr);
  CHECK(p.globals[0].value == 42);
  CHECK(p.globals[1].addr == kGlobalsAddr + 8);
  CHECK(p.globals[1].value == 0x10);
  CHECK(p.find("g") != nullptr);
  CHECK(p.find("missing") == nullptr);
  CHECK(p.find_global("gw")->value == 0x10);
}

TEST_CASE("instruction addresses accumulate encoded lengths") {
  Program p = assemble(
      ".func f\n"
      "  mov rax, 7\n"      // 10
      "  add rax, rdi\n"    // 2
      "  mov rcx, [rsp+8]\n"  // 6
      "  ret\n");
  const Function& f = p.funcs[0];
  REQUIRE(f.instrs.size() == 4);
  CHECK(f.instrs[0].addr == kTextBase);
  CHECK(f.instrs[1].addr == kTextBase + 10);
  CHECK(f.instrs[2].addr == kTextBase + 12);
  CHECK(f.instrs[3].addr == kTextBase + 18);
  CHECK(f.body_size == 19);
  CHECK(f.instr_at(kTextBase + 12)->mi.op == Op::mov_rm);
  CHECK(f.instr_at(kTextBase + 13) == nullptr);
}

TEST_CASE("rip-relative operands resolve next-instruction-relative") {
  Program p = assemble(
      ".global gv 5\n"
      ".func f\n"
      "  mov rax, [gv]\n"
      "  mov [gv], rax\n"
      "  lea rcx, [gv]\n"
      "  ret\n");
  const Function& f = p.funcs[0];
  uint64_t gv = p.globals[0].addr;
  for (size_t i = 0; i < 3; ++i) {
    const AsmInstr& ai = f.instrs[i];
    CHECK(ai.addr + encoded_length(ai.mi.op) + ai.mi.disp == gv);
  }
  CHECK(f.instrs[0].mi.op == Op::mov_rrip);
  CHECK(f.instrs[1].mi.op == Op::mov_ripr);
  CHECK(f.instrs[2].mi.op == Op::lea_rip);
}

TEST_CASE("branch targets, labels and calls resolve to absolute addresses") {
  Program p = assemble(
      ".func f\n"
      "  cmp rdi, 0\n"
      "  je done\n"
      "  call g\n"
      "done:\n"
      "  ret\n"
      ".func g\n"
      "  mov rax, 1\n"
      "  ret\n");
  const Function& f = p.funcs[0];
  const Function& g = p.funcs[1];
  REQUIRE(f.labels.count("done"));
  size_t done = f.labels.at("done");
  CHECK(f.instrs[1].mi.op == Op::jcc_abs);
  CHECK(f.instrs[1].mi.cc == Cond::e);
  CHECK(f.instrs[1].mi.imm == f.instrs[done].addr);
  CHECK(f.instrs[2].mi.op == Op::call_abs);
  CHECK(f.instrs[2].mi.imm == g.entry);
}

TEST_CASE("inline labels and address tables") {
  Program p = assemble(
      ".func f\n"
      "  jmp over\n"
      "a: mov rax, 1\n"
      "  ret\n"
      "over: mov rax, 2\n"
      "  ret\n"
      ".addrtable tab: a, over\n");
  const Function& f = p.funcs[0];
  REQUIRE(p.tables.size() == 1);
  const AddrTable& t = p.tables[0];
  CHECK(t.addr >= kGlobalsAddr);
  REQUIRE(t.entries.size() == 2);
  CHECK(t.entries[0] == f.instrs[f.labels.at("a")].addr);
  CHECK(t.entries[1] == f.instrs[f.labels.at("over")].addr);
  // [ident] also reaches address tables
  Program q = assemble(
      ".func f\n"
      "  jmp over\n"
      "a: ret\n"
      "over: mov rax, [tab]\n"
      "  ret\n"
      ".addrtable tab: a\n");
  const AsmInstr& ld = q.funcs[0].instrs[2];
  CHECK(ld.mi.op == Op::mov_rrip);
  CHECK(ld.addr + encoded_length(ld.mi.op) + ld.mi.disp == q.tables[0].addr);
}

TEST_CASE(".liveout and qword/byte prefixes") {
  Program p = assemble(
      ".func f\n"
      ".liveout rbx, r12\n"
      "  mov rbx, rdi\n"
      "  add qword [rsp+8], 1\n"
      "  movsx8 rax, byte [rsp+8]\n"
      "  ret\n");
  CHECK(p.funcs[0].extra_liveout == RegSet::of({Reg::rbx, Reg::r12}));
  CHECK(p.funcs[0].instrs[1].mi.op == Op::add_mi);
  CHECK(p.funcs[0].instrs[2].mi.op == Op::movsx8_rm);
}

TEST_CASE("comments, negative displacements, immediate forms") {
  Program p = assemble(
      "; leading comment\n"
      ".func f\n"
      "  mov rax, [rbp-16]  ; trailing comment\n"
      "  sub rsp, 0x20\n"
      "  push -1\n"
      "  pop rcx\n"
      "  add rsp, 0x20\n"
      "  ret\n");
  const Function& f = p.funcs[0];
  CHECK(f.instrs[0].mi.disp == -16);
  CHECK(f.instrs[1].mi.imm == 0x20);
  CHECK(f.instrs[2].mi.op == Op::push_i);
  CHECK(f.instrs[2].mi.imm == ~0ull);
}

TEST_CASE("syntax errors carry the failing line") {
  struct Row { const char* src; const char* what; };
  const Row rows[] = {
      {"mov rax, 1\n", "instruction outside .func"},
      {".func f\n  bogus rax, 1\n  ret\n", "unknown mnemonic"},
      {".func f\n  mov eax, 1\n  ret\n", "unknown register"},
      {".func f\n  je nowhere\n  ret\n", "unresolved jump target"},
      {".func f\n  call nowhere\n  ret\n", "call to a non-function"},
      {".func f\nl: mov rax, 1\nl: ret\n", "duplicate label"},
      {".func f\n  mov rax, [nope]\n  ret\n", "unresolved data name"},
      {".func f\n  mov rax\n  ret\n", "missing operand"},
      {".func f\n  cmovxx rax, rcx\n  ret\n", "bad condition"},
      {".func f\n  ret\n.func f\n  ret\n", "duplicate function"},
      {".wat f\n", "unknown directive"},
  };
  for (const Row& r : rows) {
    CHECK_MESSAGE(code_of(r.src) == Errc::syntax, r.what);
    try {
      assemble(r.src);
    } catch (const Error& e) {
      CHECK_MESSAGE(std::string(e.what()).find("line") != std::string::npos,
                    r.what);
    }
  }
  // a jump may target another function (tail); that is not an error
  CHECK(code_of(".func f\n  jmp g\n.func g\n  ret\n") == Errc::internal);
}

TEST_CASE("encode_function and disassemble_range round-trip") {
  Program p = assemble(
      ".func f\n"
      "  mov rax, rdi\n"
      "  cmp rax, 10\n"
      "  jb low\n"
      "  mov rax, 0\n"
      "low:\n"
      "  ret\n");
  const Function& f = p.funcs[0];
  std::vector<uint8_t> bytes = encode_function(f);
  CHECK(bytes.size() == f.body_size);
  std::string text = disassemble_range(bytes, f.entry);
  // every instruction shows at its own address
  for (const AsmInstr& ai : f.instrs) {
    char addr[32];
    snprintf(addr, sizeof addr, "0x%llx:", (unsigned long long)ai.addr);
    CHECK_MESSAGE(text.find(addr) != std::string::npos, disasm(ai.mi));
  }
  // truncated tail reports the bad byte instead of decoding past it
  std::vector<uint8_t> cut(bytes.begin(), bytes.begin() + 3);
  std::string broken = disassemble_range(cut, f.entry);
  CHECK(broken.find("(bad)") != std::string::npos);
}

TEST_CASE("cfg: diamond") {
  Program p = assemble(
      ".func f\n"
      "  cmp rdi, 0\n"
      "  je zero\n"
      "  mov rax, 1\n"
      "  jmp out\n"
      "zero:\n"
      "  mov rax, 2\n"
      "out:\n"
      "  ret\n");
  const Function& f = p.funcs[0];
  Cfg cfg = build_cfg(f);
  REQUIRE(cfg.blocks.size() == 4);
  // entry: cmp+je; then taken-side order follows instruction order
  const Block& b0 = cfg.blocks[0];
  CHECK(b0.first == 0);
  CHECK(b0.last == 1);
  REQUIRE(b0.succs.size() == 2);
  size_t thenb = cfg.block_at(2), elseb = cfg.block_at(4), outb = cfg.block_at(5);
  CHECK(cfg.blocks[thenb].succs == std::vector<size_t>{outb});
  CHECK(cfg.blocks[elseb].succs == std::vector<size_t>{outb});
  CHECK(cfg.blocks[outb].succs.empty());
  CHECK(cfg.blocks[outb].preds.size() == 2);
  CHECK(cfg.block_at(0) == 0);
}

TEST_CASE("cfg: loop back edge") {
  Program p = assemble(
      ".func f\n"
      "  mov rax, 0\n"
      "top:\n"
      "  add rax, rdi\n"
      "  sub rdi, 1\n"
      "  cmp rdi, 0\n"
      "  jne top\n"
      "  ret\n");
  Cfg cfg = build_cfg(p.funcs[0]);
  REQUIRE(cfg.blocks.size() == 3);
  size_t head = cfg.block_at(1);
  const Block& loop = cfg.blocks[head];
  bool self = false;
  for (size_t s : loop.succs) self |= s == head;
  CHECK(self);
  CHECK(cfg.blocks[head].preds.size() == 2);  // entry and itself
}

TEST_CASE("cfg: indirect jump needs a .jumptable") {
  const char* body =
      ".func f\n"
      "  jmp rax\n"
      "a: ret\n";
  try {
    build_cfg(assemble(body).funcs[0]);
    FAIL("indirect jump without a table should not form a cfg");
  } catch (const Error& e) {
    CHECK(e.code == Errc::cfg_incomplete);
  }
  Program p = assemble(
      ".func f\n"
      ".jumptable sw: a, b\n"
      "sw: jmp rax\n"
      "a: mov rax, 1\n"
      "  ret\n"
      "b: ret\n");
  Cfg cfg = build_cfg(p.funcs[0]);
  CHECK(cfg.blocks[0].succs.size() == 2);
}

TEST_CASE("cfg: falling off the end is incomplete") {
  Program p = assemble(
      ".func f\n"
      "  mov rax, 1\n");
  try {
    build_cfg(p.funcs[0]);
    FAIL("fallthrough past the last instruction should not form a cfg");
  } catch (const Error& e) {
    CHECK(e.code == Errc::cfg_incomplete);
  }
}

TEST_CASE("cfg: tail jump terminates with no successors") {
  Program p = assemble(
      ".func f\n"
      "  jmp g\n"
      ".func g\n"
      "  ret\n");
  Cfg cfg = build_cfg(p.funcs[0]);
  REQUIRE(cfg.blocks.size() == 1);
  CHECK(cfg.blocks[0].succs.empty());
}

TEST_CASE("liveness: straight line") {
  Program p = assemble(
      ".func f\n"
      "  mov rax, rdi\n"
      "  add rax, rsi\n"
      "  ret\n");
  const Function& f = p.funcs[0];
  LivenessMap lm = analyze_liveness(f, build_cfg(f));
  RegSet base = callee_saved() | RegSet::of({Reg::rsp});
  CHECK(lm.live_in[0] == (base | RegSet::of({Reg::rdi, Reg::rsi})));
  CHECK(lm.live_in[1] == (base | RegSet::of({Reg::rax, Reg::rsi})));
  // ret keeps rax, rsp and the callee-saved set live
  CHECK(lm.live_in[2] == (base | RegSet::of({Reg::rax})));
  CHECK(lm.flags_in[0] == 0);
  CHECK(lm.flags_in[1] == 0);
}

TEST_CASE("liveness: flags live between cmp and jcc, dead after") {
  Program p = assemble(
      ".func f\n"
      "  cmp rdi, 1\n"
      "  je one\n"
      "  mov rax, 0\n"
      "  ret\n"
      "one:\n"
      "  mov rax, 1\n"
      "  ret\n");
  const Function& f = p.funcs[0];
  LivenessMap lm = analyze_liveness(f, build_cfg(f));
  CHECK(lm.flags_in[0] == 0);
  CHECK(lm.flags_in[1] == 1);  // before the je
  CHECK(lm.flags_in[2] == 0);
  CHECK(lm.flags_out[1] == 0);  // both targets redefine before reading
}

TEST_CASE("liveness: calls use args and clobber the caller-saved set") {
  Program p = assemble(
      ".func f\n"
      "  mov rbx, rdi\n"
      "  call g\n"
      "  add rax, rbx\n"
      "  ret\n"
      ".func g\n"
      "  mov rax, 3\n"
      "  ret\n");
  const Function& f = p.funcs[0];
  LivenessMap lm = analyze_liveness(f, build_cfg(f));
  // rbx survives the call, so it is live into it; rax does not survive
  CHECK(lm.live_in[1].has(Reg::rbx));
  CHECK(!lm.live_in[1].has(Reg::rax));
  // the call itself uses every argument register
  CHECK((lm.live_in[1] & arg_regs()) == arg_regs());
  // rax is only live after the call produced it
  CHECK(lm.live_in[2].has(Reg::rax));
}

TEST_CASE("liveness: declared .liveout registers reach the ret") {
  Program p = assemble(
      ".func f\n"
      ".liveout r12\n"
      "  mov r12, rdi\n"
      "  mov rax, 0\n"
      "  ret\n");
  const Function& f = p.funcs[0];
  LivenessMap lm = analyze_liveness(f, build_cfg(f));
  CHECK(lm.live_out[2].has(Reg::r12));
  CHECK(lm.live_in[0].has(Reg::rdi));
}

TEST_CASE("liveness: tail jump keeps argument registers live") {
  Program p = assemble(
      ".func f\n"
      "  mov rdi, 1\n"
      "  jmp g\n"
      ".func g\n"
      "  mov rax, rdi\n"
      "  ret\n");
  const Function& f = p.funcs[0];
  LivenessMap lm = analyze_liveness(f, build_cfg(f));
  CHECK((lm.live_out[1] & arg_regs()) == arg_regs());
}

TEST_CASE("taint: symbolic is the forward/backward intersection") {
  Program p = assemble(
      ".func f\n"
      "  mov rax, rdi\n"   // 0: rax becomes input-derived
      "  mov rcx, 5\n"     // 1: rcx is a constant
      "  add rax, rcx\n"   // 2
      "  mov rdx, rsi\n"   // 3: derived but never used again
      "  ret\n");          // 4
  const Function& f = p.funcs[0];
  TaintMap tm = analyze_taint(f, build_cfg(f));
  // before instr 0 every argument register is derived
  CHECK((tm.input_derived[0] & arg_regs()) == arg_regs());
  // before the add: rax derived, rcx constant
  CHECK(tm.input_derived[2].has(Reg::rax));
  CHECK(!tm.input_derived[2].has(Reg::rcx));
  // both add operands matter for the return value
  CHECK(tm.output_relevant[2].has(Reg::rax));
  CHECK(tm.output_relevant[2].has(Reg::rcx));
  CHECK(tm.symbolic[2] == (tm.input_derived[2] & tm.output_relevant[2]));
  CHECK(tm.symbolic[2].has(Reg::rax));
  CHECK(!tm.symbolic[2].has(Reg::rcx));
  // rdx: derived, irrelevant, so never symbolic
  CHECK(tm.input_derived[4].has(Reg::rdx));
  CHECK(!tm.symbolic[4].has(Reg::rdx));
}

TEST_CASE("taint: constants reloaded from input stay derived through memory") {
  // one summary bit per direction: any derived store taints loads
  Program p = assemble(
      ".func f\n"
      "  mov [rsp-8], rdi\n"
      "  mov rax, [rsp-8]\n"
      "  ret\n");
  const Function& f = p.funcs[0];
  TaintMap tm = analyze_taint(f, build_cfg(f));
  CHECK(tm.symbolic[2].has(Reg::rax));
}

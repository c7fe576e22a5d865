#include "assembler.hpp"

#include <cctype>
#include <charconv>
#include <cstdio>

#include "error.hpp"
#include "layout.hpp"

namespace rf {

namespace {

[[noreturn]] void syntax(int line, const std::string& msg) {
  fail(Errc::syntax, "line " + std::to_string(line) + ": " + msg);
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && isspace((unsigned char)s.front())) s.remove_prefix(1);
  while (!s.empty() && isspace((unsigned char)s.back())) s.remove_suffix(1);
  return s;
}

bool is_ident(std::string_view s) {
  if (s.empty()) return false;
  if (!isalpha((unsigned char)s[0]) && s[0] != '_' && s[0] != '.') return false;
  for (char c : s)
    if (!isalnum((unsigned char)c) && c != '_' && c != '.') return false;
  return true;
}

std::optional<uint64_t> parse_imm(std::string_view s) {
  bool neg = false;
  if (!s.empty() && (s[0] == '-' || s[0] == '+')) {
    neg = s[0] == '-';
    s.remove_prefix(1);
  }
  if (s.empty()) return std::nullopt;
  uint64_t v = 0;
  std::from_chars_result r{};
  if (s.size() > 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X'))
    r = std::from_chars(s.data() + 2, s.data() + s.size(), v, 16);
  else
    r = std::from_chars(s.data(), s.data() + s.size(), v, 10);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) return std::nullopt;
  return neg ? uint64_t(-int64_t(v)) : v;
}

// A parsed operand before symbol resolution.
struct Operand {
  enum Kind { reg, imm, mem, rip_sym, ident } kind;
  Reg r{Reg::rax};
  uint64_t value = 0;
  int32_t disp = 0;
  std::string name;  // rip_sym / ident
};

struct PInstr {
  MicroInstr mi;
  int line = 0;
  std::string target;  // symbolic jump/call target
  std::string sym;     // symbolic global for rip-relative forms
};

Operand parse_operand(std::string_view s, int line) {
  s = trim(s);
  if (s.rfind("qword", 0) == 0) s = trim(s.substr(5));
  if (s.rfind("byte", 0) == 0) s = trim(s.substr(4));
  if (!s.empty() && s.front() == '[') {
    if (s.back() != ']') syntax(line, "unterminated memory operand");
    std::string_view inner = trim(s.substr(1, s.size() - 2));
    size_t sep = inner.find_first_of("+-", 1);
    std::string_view base = sep == std::string_view::npos ? inner : trim(inner.substr(0, sep));
    if (auto r = reg_from_name(base)) {
      int64_t d = 0;
      if (sep != std::string_view::npos) {
        auto v = parse_imm(trim(inner.substr(sep + 1)));
        if (!v) syntax(line, "bad displacement in memory operand");
        d = int64_t(*v);
        if (inner[sep] == '-') d = -d;
        if (d < INT32_MIN || d > INT32_MAX) syntax(line, "displacement out of range");
      }
      return {.kind = Operand::mem, .r = *r, .disp = int32_t(d)};
    }
    if (is_ident(inner)) return {.kind = Operand::rip_sym, .name = std::string(inner)};
    syntax(line, "bad memory operand base");
  }
  if (auto r = reg_from_name(s)) return {.kind = Operand::reg, .r = *r};
  if (auto v = parse_imm(s)) return {.kind = Operand::imm, .value = *v};
  if (is_ident(s)) return {.kind = Operand::ident, .name = std::string(s)};
  syntax(line, "bad operand '" + std::string(s) + "'");
}

std::vector<Operand> parse_operands(std::string_view rest, int line) {
  std::vector<Operand> out;
  rest = trim(rest);
  if (rest.empty()) return out;
  size_t start = 0;
  for (size_t i = 0; i <= rest.size(); ++i) {
    if (i == rest.size() || rest[i] == ',') {
      out.push_back(parse_operand(rest.substr(start, i - start), line));
      start = i + 1;
    }
  }
  return out;
}

PInstr build_instr(std::string_view mnem, std::vector<Operand> ops, int line) {
  PInstr p;
  p.line = line;
  MicroInstr& m = p.mi;
  auto want = [&](size_t n) {
    if (ops.size() != n)
      syntax(line, std::string(mnem) + " expects " + std::to_string(n) + " operand(s)");
  };
  auto kinds2 = [&](Operand::Kind a, Operand::Kind b) {
    return ops.size() == 2 && ops[0].kind == a && ops[1].kind == b;
  };

  auto alu2 = [&](Op rr, Op ri) {
    want(2);
    if (kinds2(Operand::reg, Operand::reg)) {
      m.op = rr; m.r1 = ops[0].r; m.r2 = ops[1].r;
    } else if (kinds2(Operand::reg, Operand::imm)) {
      m.op = ri; m.r1 = ops[0].r; m.imm = ops[1].value;
    } else {
      syntax(line, std::string(mnem) + ": unsupported operand form");
    }
  };

  if (mnem == "mov") {
    want(2);
    if (kinds2(Operand::reg, Operand::reg)) {
      m.op = Op::mov_rr; m.r1 = ops[0].r; m.r2 = ops[1].r;
    } else if (kinds2(Operand::reg, Operand::imm)) {
      m.op = Op::mov_ri; m.r1 = ops[0].r; m.imm = ops[1].value;
    } else if (kinds2(Operand::reg, Operand::mem)) {
      m.op = Op::mov_rm; m.r1 = ops[0].r; m.r2 = ops[1].r; m.disp = ops[1].disp;
    } else if (kinds2(Operand::mem, Operand::reg)) {
      m.op = Op::mov_mr; m.r1 = ops[0].r; m.disp = ops[0].disp; m.r2 = ops[1].r;
    } else if (kinds2(Operand::reg, Operand::rip_sym)) {
      m.op = Op::mov_rrip; m.r1 = ops[0].r; p.sym = ops[1].name;
    } else if (kinds2(Operand::rip_sym, Operand::reg)) {
      m.op = Op::mov_ripr; m.r1 = ops[1].r; p.sym = ops[0].name;
    } else {
      syntax(line, "mov: unsupported operand form");
    }
  } else if (mnem == "lea") {
    want(2);
    if (kinds2(Operand::reg, Operand::mem)) {
      m.op = Op::lea; m.r1 = ops[0].r; m.r2 = ops[1].r; m.disp = ops[1].disp;
    } else if (kinds2(Operand::reg, Operand::rip_sym)) {
      m.op = Op::lea_rip; m.r1 = ops[0].r; p.sym = ops[1].name;
    } else {
      syntax(line, "lea: unsupported operand form");
    }
  } else if (mnem == "add" || mnem == "sub") {
    want(2);
    bool is_add = mnem == "add";
    if (kinds2(Operand::reg, Operand::reg)) {
      m.op = is_add ? Op::add_rr : Op::sub_rr; m.r1 = ops[0].r; m.r2 = ops[1].r;
    } else if (kinds2(Operand::reg, Operand::imm)) {
      m.op = is_add ? Op::add_ri : Op::sub_ri; m.r1 = ops[0].r; m.imm = ops[1].value;
    } else if (is_add && kinds2(Operand::reg, Operand::mem)) {
      m.op = Op::add_rm; m.r1 = ops[0].r; m.r2 = ops[1].r; m.disp = ops[1].disp;
    } else if (kinds2(Operand::mem, Operand::imm)) {
      m.op = is_add ? Op::add_mi : Op::sub_mi;
      m.r1 = ops[0].r; m.disp = ops[0].disp; m.imm = ops[1].value;
    } else {
      syntax(line, std::string(mnem) + ": unsupported operand form");
    }
  } else if (mnem == "and") {
    alu2(Op::and_rr, Op::and_ri);
  } else if (mnem == "or") {
    alu2(Op::or_rr, Op::or_ri);
  } else if (mnem == "xor") {
    alu2(Op::xor_rr, Op::xor_ri);
  } else if (mnem == "shl") {
    alu2(Op::shl_rr, Op::shl_ri);
  } else if (mnem == "shr") {
    alu2(Op::shr_rr, Op::shr_ri);
  } else if (mnem == "cmp") {
    alu2(Op::cmp_rr, Op::cmp_ri);
  } else if (mnem == "test") {
    want(2);
    if (!kinds2(Operand::reg, Operand::reg)) syntax(line, "test: expects reg, reg");
    m.op = Op::test_rr; m.r1 = ops[0].r; m.r2 = ops[1].r;
  } else if (mnem == "neg" || mnem == "not") {
    want(1);
    if (ops[0].kind != Operand::reg) syntax(line, std::string(mnem) + ": expects a register");
    m.op = mnem == "neg" ? Op::neg_r : Op::not_r;
    m.r1 = ops[0].r;
  } else if (mnem == "movsx8") {
    want(2);
    if (!kinds2(Operand::reg, Operand::mem)) syntax(line, "movsx8: expects reg, byte [mem]");
    m.op = Op::movsx8_rm; m.r1 = ops[0].r; m.r2 = ops[1].r; m.disp = ops[1].disp;
  } else if (mnem == "push") {
    want(1);
    if (ops[0].kind == Operand::reg) {
      m.op = Op::push_r; m.r1 = ops[0].r;
    } else if (ops[0].kind == Operand::imm) {
      m.op = Op::push_i; m.imm = ops[0].value;
    } else {
      syntax(line, "push: expects reg or imm");
    }
  } else if (mnem == "pop") {
    want(1);
    if (ops[0].kind != Operand::reg) syntax(line, "pop: expects a register");
    m.op = Op::pop_r; m.r1 = ops[0].r;
  } else if (mnem == "pushf") {
    want(0); m.op = Op::pushf;
  } else if (mnem == "popf") {
    want(0); m.op = Op::popf;
  } else if (mnem.rfind("cmov", 0) == 0) {
    auto cc = cond_from_name(mnem.substr(4));
    if (!cc) syntax(line, "unknown condition '" + std::string(mnem) + "'");
    want(2);
    if (!kinds2(Operand::reg, Operand::reg)) syntax(line, "cmov: expects reg, reg");
    m.op = Op::cmov_rr; m.cc = *cc; m.r1 = ops[0].r; m.r2 = ops[1].r;
  } else if (mnem == "xchg") {
    want(2);
    if (!kinds2(Operand::reg, Operand::mem)) syntax(line, "xchg: expects reg, [mem]");
    m.op = Op::xchg_rm; m.r1 = ops[0].r; m.r2 = ops[1].r; m.disp = ops[1].disp;
  } else if (mnem == "jmp") {
    want(1);
    if (ops[0].kind == Operand::reg) {
      m.op = Op::jmp_r; m.r1 = ops[0].r;
    } else if (ops[0].kind == Operand::ident) {
      m.op = Op::jmp_abs; p.target = ops[0].name;
    } else {
      syntax(line, "jmp: expects a register or label");
    }
  } else if (mnem.size() >= 2 && mnem[0] == 'j') {
    auto cc = cond_from_name(mnem.substr(1));
    if (!cc) syntax(line, "unknown mnemonic '" + std::string(mnem) + "'");
    want(1);
    if (ops[0].kind != Operand::ident) syntax(line, "conditional jump expects a label");
    m.op = Op::jcc_abs; m.cc = *cc; p.target = ops[0].name;
  } else if (mnem == "call") {
    want(1);
    if (ops[0].kind != Operand::ident) syntax(line, "call: expects a function name");
    m.op = Op::call_abs; p.target = ops[0].name;
  } else if (mnem == "ret") {
    want(0); m.op = Op::ret;
  } else if (mnem == "leave") {
    want(0); m.op = Op::leave;
  } else if (mnem == "hlt") {
    want(0); m.op = Op::hlt;
  } else {
    syntax(line, "unknown mnemonic '" + std::string(mnem) + "'");
  }
  return p;
}

struct PFunc {
  std::string name;
  int line = 0;
  std::vector<PInstr> instrs;
  std::map<std::string, size_t> labels;
  std::vector<std::pair<std::string, int>> jt_sites;  // site label -> directive line
  std::map<std::string, std::vector<std::string>> jt_targets;
  RegSet extra_liveout;
};

}  // namespace

Program assemble(std::string_view source) {
  std::vector<PFunc> pfuncs;
  std::vector<Global> globals;
  std::vector<AddrTable> tables;
  PFunc* cur = nullptr;
  std::vector<std::string> pending_labels;
  bool implicit_started = false;

  auto start_func = [&](const std::string& name, int line) {
    for (const auto& f : pfuncs)
      if (f.name == name) syntax(line, "duplicate function '" + name + "'");
    if (cur && !pending_labels.empty())
      syntax(line, "dangling label before function start");
    pfuncs.push_back(PFunc{.name = name, .line = line});
    cur = &pfuncs.back();
    pending_labels.clear();
  };

  int lineno = 0;
  size_t pos = 0;
  while (pos <= source.size()) {
    size_t eol = source.find('\n', pos);
    std::string_view raw = source.substr(pos, eol == std::string_view::npos ? std::string_view::npos
                                                                            : eol - pos);
    pos = eol == std::string_view::npos ? source.size() + 1 : eol + 1;
    ++lineno;
    if (auto c = raw.find(';'); c != std::string_view::npos) raw = raw.substr(0, c);
    std::string_view lv = trim(raw);
    if (lv.empty()) continue;
    std::string text(lv);

    if (text[0] == '.') {
      size_t sp = text.find_first_of(" \t");
      std::string dir = text.substr(0, sp);
      std::string rest = sp == std::string::npos ? "" : std::string(trim(text.substr(sp)));
      if (dir == ".func") {
        if (!is_ident(rest)) syntax(lineno, ".func expects a name");
        start_func(rest, lineno);
      } else if (dir == ".global") {
        size_t s2 = rest.find_first_of(" \t");
        if (s2 == std::string::npos) syntax(lineno, ".global expects: name value");
        std::string name = rest.substr(0, s2);
        auto v = parse_imm(trim(std::string_view(rest).substr(s2)));
        if (!is_ident(name) || !v) syntax(lineno, ".global expects: name value");
        for (const auto& g : globals)
          if (g.name == name) syntax(lineno, "duplicate global '" + name + "'");
        globals.push_back(Global{.name = name, .value = *v});
      } else if (dir == ".addrtable") {
        size_t colon = rest.find(':');
        if (colon == std::string::npos) syntax(lineno, ".addrtable expects: name: L1, L2, ...");
        AddrTable t;
        t.name = std::string(trim(std::string_view(rest).substr(0, colon)));
        if (!is_ident(t.name)) syntax(lineno, ".addrtable: bad name");
        std::string_view ls = trim(std::string_view(rest).substr(colon + 1));
        size_t start = 0;
        std::string lstr(ls);
        for (size_t i = 0; i <= lstr.size(); ++i) {
          if (i == lstr.size() || lstr[i] == ',') {
            std::string lab(trim(std::string_view(lstr).substr(start, i - start)));
            if (!is_ident(lab)) syntax(lineno, ".addrtable: bad label");
            t.labels.push_back(lab);
            start = i + 1;
          }
        }
        if (t.labels.empty()) syntax(lineno, ".addrtable: empty label list");
        tables.push_back(std::move(t));
      } else if (dir == ".jumptable") {
        if (!cur) syntax(lineno, ".jumptable outside a function");
        size_t colon = rest.find(':');
        if (colon == std::string::npos) syntax(lineno, ".jumptable expects: site: L1, L2, ...");
        std::string site(trim(std::string_view(rest).substr(0, colon)));
        if (!is_ident(site)) syntax(lineno, ".jumptable: bad site label");
        std::vector<std::string> targets;
        std::string lstr(trim(std::string_view(rest).substr(colon + 1)));
        size_t start = 0;
        for (size_t i = 0; i <= lstr.size(); ++i) {
          if (i == lstr.size() || lstr[i] == ',') {
            std::string lab(trim(std::string_view(lstr).substr(start, i - start)));
            if (!is_ident(lab)) syntax(lineno, ".jumptable: bad target label");
            targets.push_back(lab);
            start = i + 1;
          }
        }
        if (targets.empty()) syntax(lineno, ".jumptable: empty target list");
        cur->jt_sites.emplace_back(site, lineno);
        cur->jt_targets[site] = std::move(targets);
      } else if (dir == ".liveout") {
        if (!cur) syntax(lineno, ".liveout outside a function");
        std::string lstr = rest;
        size_t start = 0;
        for (size_t i = 0; i <= lstr.size(); ++i) {
          if (i == lstr.size() || lstr[i] == ',') {
            std::string rn(trim(std::string_view(lstr).substr(start, i - start)));
            auto r = reg_from_name(rn);
            if (!r) syntax(lineno, ".liveout: bad register '" + rn + "'");
            cur->extra_liveout.add(*r);
            start = i + 1;
          }
        }
      } else {
        syntax(lineno, "unknown directive '" + dir + "'");
      }
      continue;
    }

    // Optional "label:" prefixes, then an optional instruction.
    while (true) {
      size_t colon = text.find(':');
      if (colon == std::string::npos) break;
      std::string head(trim(std::string_view(text).substr(0, colon)));
      if (!is_ident(head)) break;
      if (!cur) {
        start_func(head, lineno);
        implicit_started = true;
      } else {
        if (cur->labels.count(head) || (implicit_started && head == cur->name))
          syntax(lineno, "duplicate label '" + head + "'");
        pending_labels.push_back(head);
      }
      text = std::string(trim(std::string_view(text).substr(colon + 1)));
      if (text.empty()) break;
    }
    if (text.empty()) continue;

    if (!cur) syntax(lineno, "instruction outside a function");
    size_t sp = text.find_first_of(" \t");
    std::string mnem = text.substr(0, sp);
    std::string rest = sp == std::string::npos ? "" : text.substr(sp);
    PInstr pi = build_instr(mnem, parse_operands(rest, lineno), lineno);
    for (auto& lab : pending_labels) cur->labels[lab] = cur->instrs.size();
    pending_labels.clear();
    cur->instrs.push_back(std::move(pi));
  }
  if (!pending_labels.empty())
    syntax(lineno, "dangling label '" + pending_labels.front() + "' at end of input");
  if (pfuncs.empty()) fail(Errc::syntax, "no functions in input");
  for (const auto& f : pfuncs)
    if (f.instrs.empty()) syntax(f.line, "function '" + f.name + "' has no instructions");

  // Layout: function bodies back to back from kTextBase, data from kGlobalsAddr.
  Program prog;
  uint64_t addr = kTextBase;
  for (auto& pf : pfuncs) {
    Function fn;
    fn.name = pf.name;
    fn.entry = addr;
    fn.labels = pf.labels;
    fn.extra_liveout = pf.extra_liveout;
    for (auto& pi : pf.instrs) {
      AsmInstr ai{pi.mi, addr, pi.line};
      fn.instrs.push_back(ai);
      addr += encoded_length(pi.mi.op);
    }
    fn.body_size = addr - fn.entry;
    prog.funcs.push_back(std::move(fn));
  }
  prog.text_end = addr;
  if (prog.text_end > kTextBase + kTextSize)
    fail(Errc::layout, "program text exceeds the text section");

  uint64_t daddr = kGlobalsAddr;
  for (auto& g : globals) {
    g.addr = daddr;
    daddr += 8;
    prog.globals.push_back(g);
  }
  for (auto& t : tables) {
    t.addr = daddr;
    daddr += 8 * t.labels.size();
    prog.tables.push_back(std::move(t));
  }
  prog.data_end = daddr;

  // Resolution.
  auto func_entry = [&](const std::string& name) -> std::optional<uint64_t> {
    for (const auto& f : prog.funcs)
      if (f.name == name) return f.entry;
    return std::nullopt;
  };
  auto label_addr = [&](const Function& fn, const std::string& lab) -> std::optional<uint64_t> {
    auto it = fn.labels.find(lab);
    if (it == fn.labels.end()) return std::nullopt;
    return fn.instrs[it->second].addr;
  };
  auto data_sym = [&](const std::string& name) -> std::optional<uint64_t> {
    for (const auto& g : prog.globals)
      if (g.name == name) return g.addr;
    for (const auto& t : prog.tables)
      if (t.name == name) return t.addr;
    return std::nullopt;
  };

  for (size_t fi = 0; fi < prog.funcs.size(); ++fi) {
    Function& fn = prog.funcs[fi];
    PFunc& pf = pfuncs[fi];
    for (size_t ii = 0; ii < fn.instrs.size(); ++ii) {
      AsmInstr& ai = fn.instrs[ii];
      PInstr& pi = pf.instrs[ii];
      if (!pi.target.empty()) {
        std::optional<uint64_t> t;
        if (ai.mi.op == Op::call_abs) {
          t = func_entry(pi.target);
        } else {
          t = label_addr(fn, pi.target);
          if (!t) t = func_entry(pi.target);
        }
        if (!t)
          syntax(ai.line, "unresolved " + std::string(op_mnemonic(ai.mi.op)) + " target '" +
                              pi.target + "'");
        ai.mi.imm = *t;
      }
      if (!pi.sym.empty()) {
        auto s = data_sym(pi.sym);
        if (!s) syntax(ai.line, "unresolved data symbol '" + pi.sym + "'");
        int64_t d = int64_t(*s) - int64_t(ai.addr + encoded_length(ai.mi.op));
        ai.mi.disp = int32_t(d);
      }
    }
    for (const auto& [site, dline] : pf.jt_sites) {
      auto it = fn.labels.find(site);
      if (it == fn.labels.end()) syntax(dline, "jumptable site '" + site + "' not found");
      if (fn.instrs[it->second].mi.op != Op::jmp_r)
        syntax(dline, "jumptable site '" + site + "' does not label an indirect jump");
      for (const auto& lab : pf.jt_targets[site])
        if (!fn.labels.count(lab))
          syntax(dline, "jumptable target '" + lab + "' not found");
      fn.jump_tables[it->second] = pf.jt_targets[site];
    }
  }
  for (auto& t : prog.tables) {
    for (const auto& lab : t.labels) {
      std::optional<uint64_t> a;
      for (const auto& fn : prog.funcs)
        if (auto la = label_addr(fn, lab)) { a = la; break; }
      if (!a) {
        for (const auto& fn : prog.funcs)
          if (fn.name == lab) { a = fn.entry; break; }
      }
      if (!a) fail(Errc::syntax, "addrtable '" + t.name + "': unresolved label '" + lab + "'");
      t.entries.push_back(*a);
    }
  }
  return prog;
}

std::vector<uint8_t> encode_function(const Function& fn) {
  std::vector<uint8_t> out;
  out.reserve(fn.body_size);
  for (const auto& ai : fn.instrs) encode_to(ai.mi, out);
  return out;
}

std::string disassemble_range(std::span<const uint8_t> bytes, uint64_t base) {
  std::string out;
  size_t off = 0;
  char buf[32];
  while (off < bytes.size()) {
    auto d = decode(bytes, off);
    snprintf(buf, sizeof buf, "0x%llx: ", (unsigned long long)(base + off));
    out += buf;
    if (!d) {
      out += "(bad)\n";
      break;
    }
    out += disasm_at(d->instr, base + off);
    out += "\n";
    off += d->length;
  }
  return out;
}

}  // namespace rf

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "isa.hpp"

namespace rf {

struct AsmInstr {
  MicroInstr mi;
  uint64_t addr = 0;
  int line = 0;
};

struct Function {
  std::string name;
  uint64_t entry = 0;
  uint64_t body_size = 0;
  std::vector<AsmInstr> instrs;
  std::map<std::string, size_t> labels;                 // label -> instr index
  std::map<size_t, std::vector<std::string>> jump_tables;  // jmp-reg instr index -> target labels
  RegSet extra_liveout;  // registers beyond rax observable at ret (.liveout)

  const AsmInstr* instr_at(uint64_t addr) const {
    for (const auto& ai : instrs)
      if (ai.addr == addr) return &ai;
    return nullptr;
  }
  std::vector<std::string> labels_of(size_t index) const {
    std::vector<std::string> out;
    for (const auto& [l, i] : labels)
      if (i == index) out.push_back(l);
    return out;
  }
};

struct Global {
  std::string name;
  uint64_t value = 0;
  uint64_t addr = 0;
};

struct AddrTable {
  std::string name;
  uint64_t addr = 0;
  std::vector<std::string> labels;
  std::vector<uint64_t> entries;  // resolved label addresses
};

struct Program {
  std::vector<Function> funcs;
  std::vector<Global> globals;
  std::vector<AddrTable> tables;
  uint64_t text_end = 0;  // first address past the last function body
  uint64_t data_end = 0;  // first data address past globals/tables

  const Function* find(const std::string& name) const {
    for (const auto& f : funcs)
      if (f.name == name) return &f;
    return nullptr;
  }
  const Global* find_global(const std::string& name) const {
    for (const auto& g : globals)
      if (g.name == name) return &g;
    return nullptr;
  }
};

}  // namespace rf

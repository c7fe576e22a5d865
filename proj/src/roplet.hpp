#pragma once

#include "analysis.hpp"

namespace rf {

enum class RopletKind {
  intra_transfer,
  inter_transfer,
  epilogue,
  direct_stack_access,
  stack_ptr_ref,
  instr_ptr_ref,
  data_movement,
  alu,
};

const char* roplet_kind_name(RopletKind k);

// The translation unit handed to the chain crafter. One source instruction
// maps to one or more roplets (they share instr_index); leave expands before
// classification and an rsp-as-plain-operand instruction splits into the
// stack-pointer reference plus the remaining effect.
struct Roplet {
  RopletKind kind{RopletKind::alu};
  size_t instr_index = 0;
  MicroInstr payload;  // for instr_ptr_ref the imm field carries the resolved
                       // absolute data address of the rip-relative operand
  bool tail = false;   // inter_transfer: tail jump rather than call
  RegSet live_after;
  bool flags_live_after = false;
};

struct RopletBlock {
  size_t block_id = 0;
  std::vector<Roplet> roplets;
};

struct RopletProgram {
  std::vector<RopletBlock> blocks;
};

// Classifies one instruction into its roplet kinds. With a function context,
// jumps that leave the function classify as tail inter-transfers. Throws
// Errc::untranslatable for stack-pointer uses outside add/sub/mov/lea and
// for push rsp / pop rsp / hlt.
std::vector<RopletKind> classify(const MicroInstr& mi, const Function* fn = nullptr);

RopletProgram ropletize(const Function& fn, const Cfg& cfg, const LivenessMap& lm);

// Debug dump: one line per roplet, "kind | payload | live={...} | flags=0/1".
std::string dump(const RopletProgram& rp);

}  // namespace rf

#pragma once

#include <vector>

#include "program.hpp"

namespace rf {

struct Block {
  size_t first = 0;  // instruction index range, inclusive
  size_t last = 0;   // terminator position (single terminator per block)
  std::vector<size_t> succs;
  std::vector<size_t> preds;
};

struct Cfg {
  std::vector<Block> blocks;  // block 0 is the entry
  std::vector<size_t> block_of;  // instruction index -> block id

  size_t block_at(size_t instr_index) const { return block_of[instr_index]; }
};

// Splits at jump targets and after terminators. An indirect jump must carry a
// .jumptable directive; otherwise Errc::cfg_incomplete. A block that falls off
// the end of the function is also incomplete. A jmp to another function (tail
// jump) terminates its block with no intra-function successors.
Cfg build_cfg(const Function& fn);

struct LivenessMap {
  std::vector<RegSet> live_in;
  std::vector<RegSet> live_out;
  std::vector<char> flags_in;
  std::vector<char> flags_out;
};

// Backward may-liveness to a fixed point. Calls clobber the caller-saved set
// and flags, and use the argument registers. RSP is live everywhere. Live-out
// of RET is rax plus rsp plus the callee-saved set plus declared .liveout
// registers; a tail jump additionally keeps the argument registers live.
LivenessMap analyze_liveness(const Function& fn, const Cfg& cfg);

struct TaintMap {
  // Per instruction, state at the point *before* it executes.
  std::vector<RegSet> input_derived;
  std::vector<RegSet> output_relevant;
  std::vector<RegSet> symbolic;  // intersection of the two
};

// Dataflow-only taint: forward from the argument registers meets a backward
// slice from the return value (and stored globals). Control dependences are
// deliberately not tracked. Memory is a single summary bit each direction.
TaintMap analyze_taint(const Function& fn, const Cfg& cfg);

}  // namespace rf

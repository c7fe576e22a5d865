#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "emulator.hpp"
#include "materializer.hpp"

#include "json.hpp"

namespace rf {

// Attack harness. Three analyst strategies run against a built image plus
// the ground-truth manifest, so tests can measure exactly how much each
// hardening pass takes away from them.

struct FlipRecord {
  std::vector<uint64_t> flips;  // inverted event indices; the last is new
  std::string outcome;          // new_block | fault | divergence | no_effect
  std::string exit;
  std::vector<uint64_t> found;  // block body addrs first reached by this run
};

struct ScanHit {
  uint64_t offset = 0;  // chain address of the candidate cell
  uint64_t target = 0;  // text address it appears to point at
  size_t decoded = 0;   // micro-ops decoded before stopping
  bool ret_reached = false;
  bool true_gadget = false;
  size_t emu_steps = 0;  // speculative execution from this cell
  std::string emu_exit;
};

struct AttackReport {
  std::string mode;
  std::string function;
  uint64_t budget = 0;
  uint64_t budget_used = 0;

  // flip
  size_t total_blocks = 0;
  size_t baseline_blocks = 0;
  std::vector<uint64_t> discovered;  // bodies reached only through flipping
  std::vector<FlipRecord> flips;
  size_t new_block_flips = 0, fault_flips = 0, divergence_flips = 0,
         no_effect_flips = 0;

  // scan
  size_t scanned_offsets = 0;
  std::vector<ScanHit> candidates;
  size_t true_positions = 0;
  size_t true_hit = 0;        // true gadget cells among the candidates
  double candidate_ratio = 0; // candidates / true positions

  // explore
  size_t runs = 0;
  size_t path_count = 0;

  bool budget_exhausted = false;  // stopped with work left
};

// Records a seed trace, then inverts the decision of one cmov at a time,
// transitively extending flip sets along diverged traces until the run
// budget is spent. A block counts as discovered when some ret pops a cell
// inside its body; edge prologues do not count.
AttackReport flip_branches(const ProgramImage& img, const ManifestFunction& mf,
                           const std::vector<uint64_t>& args, size_t budget,
                           uint64_t fuel = kDefaultFuel);

// Reads a u64 at every byte offset of the function's chain. Values inside
// the text window are candidate gadget pointers; each is speculatively
// decoded for up to 32 micro-ops to size the block it would run.
AttackReport scan_speculative(const ProgramImage& img,
                              const ManifestFunction& mf);

struct InputDomain {
  size_t arg = 0;
  uint64_t lo = 0, hi = 0;  // inclusive
};

// Runs the function over the cross product of the input domains (clipped by
// the budget) and counts distinct branch-delta signatures.
AttackReport explore_paths(const ProgramImage& img, const std::string& fn,
                           const std::vector<InputDomain>& domains,
                           size_t budget, uint64_t fuel = kDefaultFuel);

nlohmann::json attack_json(const AttackReport& r);

}  // namespace rf

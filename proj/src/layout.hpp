#pragma once

#include <cstdint>

namespace rf {

// Fixed virtual-memory plan. Gadget bodies hardwire some of these, so they
// are global constants rather than per-image choices.
inline constexpr uint64_t kTextBase = 0x400000;
inline constexpr uint64_t kTextSize = 0x100000;  // 1 MiB
inline constexpr uint64_t kDataBase = 0x600000;
inline constexpr uint64_t kDataSize = 0x100000;
inline constexpr uint64_t kChainBase = 0x700000;
inline constexpr uint64_t kChainSize = 0x100000;
inline constexpr uint64_t kStackTop = 0x7fff0000;
inline constexpr uint64_t kStackSize = 0x40000;

// Data section internal plan:
//   ss array (stack-switching bookkeeping), cell 0 at kSsAddr
inline constexpr uint64_t kSsAddr = kDataBase;
inline constexpr int kSsCapacity = 64;  // slots beyond cell 0
//   two-cell spill area for flags carried across chain block edges
inline constexpr uint64_t kFlagsSpillAddr = kDataBase + 0x3f0;
//   reverse-jump-table mirror of the function text region
inline constexpr uint64_t kRevTabAddr = kDataBase + 0x10000;
inline constexpr uint64_t kRevTabSize = 0x40000;
//   dynamic allocations (opaque arrays etc.)
inline constexpr uint64_t kDynDataAddr = kDataBase + 0x60000;
//   assembler-visible globals and address tables
inline constexpr uint64_t kGlobalsAddr = kDataBase + 0x80000;

// Mirror translation: a text address T maps to T + kRevTabDelta in data.
inline constexpr uint64_t kRevTabDelta = kRevTabAddr - kTextBase;

// Immediate-confusion base scheme: chain items carry v + kConfusionBias and a
// hardwired sub gadget strips it. Mid-text so biased code addresses stay in
// plausible ranges.
inline constexpr uint64_t kConfusionBias = kTextBase + kTextSize / 2;

// Sentinel return address marking top-level completion in the emulator.
inline constexpr uint64_t kReturnSentinel = 0xffffffffffffff00ull;

}  // namespace rf

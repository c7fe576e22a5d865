#pragma once

#include "chain.hpp"
#include "gadget.hpp"

namespace rf {

class Crafter;

// Opaque-array dispatch replacing a plain transfer template. Returns false
// when register pressure forbids it (caller falls back to the plain form).
// `cc` is ignored for unconditional sites.
bool p1_dispatch(Crafter& c, int ordinal, bool conditional, Cond cc,
                 uint32_t taken_label, size_t term_instr);

// Stack-delta prologue at a conditional edge's target block entry.
// Emits nothing when scratch is unavailable; returns whether it emitted.
struct P2Plan;
bool p2_prologue(Crafter& c, size_t block, const P2Plan& plan);

// In-chain artificial-state insertion at a block entry. Returns whether a
// site was emitted.
bool p3_insert(Crafter& c, size_t block);

// Immediate confusion pass over a finished chain: rewrites pop-consumed
// values through the sub-base, xor-mask and shift schemes and inserts
// eta-style decoy weight. May add mask gadgets to the pool.
void confuse_chain(FunctionChain& chain, GadgetPool& pool, const ObfConfig& cfg,
                   Rng& rng, CraftStats& stats);

// Cell image of an opaque array: s*p cells; for b < n every cell at b + j*s
// holds residue_of(b) mod m, all cells below kArrayCellBound.
std::vector<uint64_t> build_opaque_array(const ArraySpec& a);

// Remainder table for the same array: kArrayModTabEntries entries, v -> v%m.
std::vector<uint64_t> build_array_modtab(const ArraySpec& a);

}  // namespace rf

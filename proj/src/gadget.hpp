#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "isa.hpp"
#include "rng.hpp"

namespace rf {

struct Gadget {
  std::vector<MicroInstr> instrs;  // last is ret or jmp_r
  uint64_t addr = 0;               // assigned by encode_text
  size_t id = 0;

  std::string text() const;  // "pop rax ; ret"
};

// The artificial gadget pool. Built once per obfuscation run from the seed;
// chains refer to gadgets only through match()/require(), so every address
// that ends up in a chain exists in this pool. Most of the pool is decoy
// weight on purpose: a scanner sees all of it, a chain uses a sliver.
class GadgetPool {
 public:
  explicit GadgetPool(uint64_t seed);

  // Exact sequence match. Several copies of a pattern may exist; require()
  // picks one with the pool rng so chains spread over the copies.
  const Gadget* match(const std::vector<MicroInstr>& seq) const;
  const Gadget& require(const std::vector<MicroInstr>& seq);

  // Registers a new pattern (dedups against existing ones). Only valid
  // before encode_text; confusion uses this for on-demand mask gadgets.
  const Gadget& add(std::vector<MicroInstr> seq);

  // Lays every gadget out after `base` in seeded order with junk gaps,
  // assigns addresses, freezes the pool, and returns the blob.
  std::vector<uint8_t> encode_text(uint64_t base);

  bool frozen() const { return frozen_; }
  size_t size() const { return gadgets_.size(); }
  const std::vector<Gadget>& all() const { return gadgets_; }
  uint64_t seed() const { return seed_; }

  std::string dump() const;  // one line per gadget, address-sorted

 private:
  std::string key_of(const std::vector<MicroInstr>& seq) const;

  uint64_t seed_;
  mutable Rng rng_;
  bool frozen_ = false;
  std::vector<Gadget> gadgets_;
  std::unordered_map<std::string, std::vector<size_t>> index_;
};

// Builds the full universal pool: every pattern family the crafter can ask
// for, instantiated over all register bindings.
GadgetPool build_universal_pool(uint64_t seed);

// World-switch sequences, shared between the pool builder and the crafter so
// require() always finds them. All hardwire the scratch-slot address; the
// epilogue/tail forms drop one nesting level, the call-out/resume pair keeps
// the level and flips worlds around a native call.
std::vector<MicroInstr> seq_unpivot_ret();   // clobbers r10, r11
std::vector<MicroInstr> seq_call_out();      // jumps through r10, clobbers r11
std::vector<MicroInstr> seq_call_resume();   // clobbers r11
std::vector<MicroInstr> seq_tail_jump();     // jumps through rax, clobbers r10, r11

}  // namespace rf

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "chain.hpp"
#include "gadget.hpp"
#include "image.hpp"
#include "program.hpp"

namespace rf {

// Everything the report and the attack harness need to know about where the
// crafted structures landed.
struct ManifestBlock {
  size_t id = 0;
  uint64_t start = 0;  // first chain byte of the block
  uint64_t body = 0;   // first byte after the edge prologue
  uint64_t end = 0;
};

struct ManifestBranch {
  size_t block = 0;
  uint64_t addr = 0;  // template start
  bool conditional = false;
  bool hardened = false;
  Cond cc = Cond::e;
};

struct ManifestSwitch {
  uint64_t anchor = 0;
  int width = 1;
  // text target, mirror entry address, chain target
  std::vector<std::tuple<uint64_t, uint64_t, uint64_t>> entries;
};

struct ManifestFunction {
  std::string name;
  uint64_t entry = 0;
  uint64_t chain_base = 0, chain_end = 0;
  std::vector<ManifestBlock> blocks;
  std::vector<ManifestBranch> branches;
  std::vector<ManifestSwitch> switches;
  std::vector<ArraySpec> arrays;
  std::vector<uint64_t> gadget_addrs;  // cells that really hold gadget addrs
  CraftStats stats;
};

struct Manifest {
  uint64_t seed = 0;
  uint64_t pool_base = 0, pool_end = 0;
  size_t pool_count = 0;
  uint64_t chain_end = 0;
  size_t true_gadget_items = 0;  // chain cells that really hold gadget addrs
  std::vector<ManifestFunction> funcs;
  std::vector<std::string> untranslated;
  std::vector<std::string> untranslated_why;
};

struct MaterializedImage {
  ProgramImage image;
  Manifest manifest;
};

// Bytes the in-place pivot stub needs. Functions with smaller bodies cannot
// be rewritten and stay native.
size_t pivot_stub_size();

// Baseline image: original bodies, no chains. The differential oracle runs
// against this.
ProgramImage materialize_native(const Program& prog);

// Full image: pivot stubs over translated bodies, gadget pool appended to
// text, packed chains, opaque arrays and mirror tables in data. Consumes the
// pool (encodes and freezes it) and relaxes the chains in place.
MaterializedImage materialize(const Program& prog, CraftedProgram& crafted,
                              GadgetPool& pool, const ObfConfig& cfg);

}  // namespace rf

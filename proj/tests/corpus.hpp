#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "chain.hpp"
#include "pipeline.hpp"
#include "rng.hpp"

// Shared test corpus: one assembled program exercising every translatable
// construct, plus the configuration matrix the differential tests sweep.
namespace corpus {

struct Fn {
  const char* name;
  int nargs;
};

const std::string& source();

// Functions the drivers call directly. All of these translate under every
// configuration; the nat_* helpers below are deliberately left native.
const std::vector<Fn>& translated();
const std::vector<Fn>& native_helpers();

// Subset with data-dependent conditional branches, for the flip harness.
const std::vector<Fn>& branchy();

enum class Config { none, p1, p2, p3for, p3array, confusion, all };
inline constexpr int kNumConfigs = 7;

const char* config_name(Config c);
rf::ObfConfig make_config(Config c, uint64_t seed);

// Builds the whole corpus under one configuration, cached per (config, seed).
const rf::ObfResult& build(Config c, uint64_t seed = 11);

// Deterministic argument vector: a mix of small values, bit patterns and
// boundary constants so compares at 2^63 and masked loops all get exercised.
std::vector<uint64_t> args_for(int nargs, uint64_t salt);

}  // namespace corpus

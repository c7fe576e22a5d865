#pragma once

#include <string>

#include "chain.hpp"
#include "gadget.hpp"
#include "materializer.hpp"
#include "program.hpp"

#include "json.hpp"

namespace rf {

struct ObfResult {
  ObfConfig cfg;
  Program prog;
  GadgetPool pool;  // frozen once materialization is done
  CraftedProgram crafted;
  MaterializedImage mat;
  ProgramImage native;  // baseline image for the differential oracle
};

// Source text in, both images out. Deterministic for a given (source, cfg).
ObfResult obfuscate_source(const std::string& source, const ObfConfig& cfg);

nlohmann::ordered_json config_json(const ObfConfig& cfg);
ObfConfig config_from_json(const nlohmann::json& j);
nlohmann::ordered_json manifest_json(const Manifest& mf);
// Inverse, as far as the attack harness needs it: function geometry and
// gadget positions come back; branch/switch/stat details do not.
Manifest manifest_from_json(const nlohmann::json& j);
// Run report: configuration echo, per-function crafting statistics, pool and
// layout footprint. Content is a pure function of the inputs.
nlohmann::ordered_json report_json(const ObfResult& r);

}  // namespace rf

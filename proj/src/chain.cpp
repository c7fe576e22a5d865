#include "chain.hpp"

#include <algorithm>

#include "error.hpp"
#include "rng.hpp"

namespace rf {

uint64_t residue_of(const ArraySpec& a, int b) {
  return mix64(a.inst_seed, 0xa0, static_cast<uint64_t>(b)) % a.m;
}

void ObfConfig::validate() const {
  if (n < 1 || n > 32) fail(Errc::param, "n out of range [1,32]");
  if (s < n || s > 64) fail(Errc::param, "s out of range [n,64]");
  if (p < 2 || p > 256) fail(Errc::param, "p out of range [2,256]");
  if (m < 2 || m > kArrayMaxM) fail(Errc::param, "m out of range [2,63]");
  if (k < 0.0 || k > 1.0) fail(Errc::param, "k out of range [0,1]");
  if (eta_max < 0 || eta_max > 64) fail(Errc::param, "eta_max out of range [0,64]");
  if (p3_sites < 0 || p3_sites > 16) fail(Errc::param, "p3_sites out of range [0,16]");
}

bool ObfConfig::wants(const std::string& fn) const {
  if (only.empty()) return true;
  return std::find(only.begin(), only.end(), fn) != only.end();
}

}  // namespace rf

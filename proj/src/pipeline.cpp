#include "pipeline.hpp"

#include "assembler.hpp"
#include "crafter.hpp"
#include "error.hpp"
#include "hardening.hpp"
#include "rng.hpp"

namespace rf {

using nlohmann::ordered_json;

ObfResult obfuscate_source(const std::string& source, const ObfConfig& cfg) {
  cfg.validate();
  ObfResult r{cfg, assemble(source), GadgetPool(cfg.seed), {}, {}, {}};
  r.native = materialize_native(r.prog);
  r.pool = build_universal_pool(cfg.seed);
  r.crafted = craft_program(r.prog, r.pool, cfg);
  if (cfg.confusion) {
    for (CraftedFunction& cf : r.crafted.funcs) {
      Rng rng(mix64(cfg.seed, fnv64(cf.chain.name), 0xc0));
      confuse_chain(cf.chain, r.pool, cfg, rng, cf.stats);
    }
  }
  r.mat = materialize(r.prog, r.crafted, r.pool, cfg);
  return r;
}

ordered_json config_json(const ObfConfig& cfg) {
  ordered_json j;
  j["seed"] = cfg.seed;
  j["p1"] = cfg.p1;
  j["p2"] = cfg.p2;
  j["p3"] = cfg.p3 == P3Mode::none ? "none"
            : cfg.p3 == P3Mode::for_loop ? "for"
                                         : "array";
  j["confusion"] = cfg.confusion;
  j["eta_max"] = cfg.eta_max;
  j["p3_sites"] = cfg.p3_sites;
  j["n"] = cfg.n;
  j["s"] = cfg.s;
  j["p"] = cfg.p;
  j["m"] = cfg.m;
  j["k"] = cfg.k;
  if (!cfg.only.empty()) j["only"] = cfg.only;
  return j;
}

ObfConfig config_from_json(const nlohmann::json& j) {
  ObfConfig cfg;
  if (!j.is_object()) fail(Errc::format, "config must be a JSON object");
  for (const auto& [key, val] : j.items()) {
    if (key == "seed") cfg.seed = val.get<uint64_t>();
    else if (key == "p1") cfg.p1 = val.get<bool>();
    else if (key == "p2") cfg.p2 = val.get<bool>();
    else if (key == "p3") {
      std::string m = val.get<std::string>();
      if (m == "none") cfg.p3 = P3Mode::none;
      else if (m == "for") cfg.p3 = P3Mode::for_loop;
      else if (m == "array") cfg.p3 = P3Mode::array;
      else fail(Errc::format, "p3 must be none, for or array");
    } else if (key == "confusion") cfg.confusion = val.get<bool>();
    else if (key == "eta_max") cfg.eta_max = val.get<int>();
    else if (key == "p3_sites") cfg.p3_sites = val.get<int>();
    else if (key == "n") cfg.n = val.get<int>();
    else if (key == "s") cfg.s = val.get<int>();
    else if (key == "p") cfg.p = val.get<int>();
    else if (key == "m") cfg.m = val.get<int>();
    else if (key == "k") cfg.k = val.get<double>();
    else if (key == "only") cfg.only = val.get<std::vector<std::string>>();
    else fail(Errc::format, "unknown config key: " + key);
  }
  cfg.validate();
  return cfg;
}

namespace {

ordered_json stats_json(const CraftStats& s) {
  ordered_json j;
  j["roplets"] = s.roplets;
  j["items"] = s.items;
  j["distinct_gadgets"] = s.distinct_gadgets;
  j["p1_applied"] = s.p1_applied;
  j["p1_fallback"] = s.p1_fallback;
  j["p2_edges"] = s.p2_edges;
  j["p2_skipped"] = s.p2_skipped;
  j["p3_inserted"] = s.p3_inserted;
  j["confused_imms"] = s.confused_imms;
  j["mask_gadgets"] = s.mask_gadgets;
  j["eta_gaps"] = s.eta_gaps;
  j["decoys"] = s.decoys;
  j["native_bytes"] = s.native_bytes;
  return j;
}

const char* cc_name(Cond c) {
  switch (c) {
    case Cond::e: return "e";
    case Cond::ne: return "ne";
    case Cond::b: return "b";
    case Cond::ae: return "ae";
    case Cond::be: return "be";
    case Cond::a: return "a";
  }
  return "?";
}

}  // namespace

ordered_json manifest_json(const Manifest& mf) {
  ordered_json j;
  j["seed"] = mf.seed;
  j["pool"] = {{"base", mf.pool_base},
               {"end", mf.pool_end},
               {"gadgets", mf.pool_count}};
  j["chain_end"] = mf.chain_end;
  j["true_gadget_items"] = mf.true_gadget_items;
  j["functions"] = ordered_json::array();
  for (const ManifestFunction& f : mf.funcs) {
    ordered_json fj;
    fj["name"] = f.name;
    fj["entry"] = f.entry;
    fj["chain_base"] = f.chain_base;
    fj["chain_end"] = f.chain_end;
    fj["blocks"] = ordered_json::array();
    for (const ManifestBlock& b : f.blocks)
      fj["blocks"].push_back({{"id", b.id},
                              {"start", b.start},
                              {"body", b.body},
                              {"end", b.end}});
    fj["branches"] = ordered_json::array();
    for (const ManifestBranch& b : f.branches)
      fj["branches"].push_back({{"block", b.block},
                                {"addr", b.addr},
                                {"conditional", b.conditional},
                                {"hardened", b.hardened},
                                {"cc", cc_name(b.cc)}});
    fj["switches"] = ordered_json::array();
    for (const ManifestSwitch& sw : f.switches) {
      ordered_json sj;
      sj["anchor"] = sw.anchor;
      sj["width"] = sw.width;
      sj["entries"] = ordered_json::array();
      for (const auto& [taddr, mirror, target] : sw.entries)
        sj["entries"].push_back(
            {{"text", taddr}, {"mirror", mirror}, {"chain", target}});
      fj["switches"].push_back(sj);
    }
    fj["arrays"] = ordered_json::array();
    for (const ArraySpec& a : f.arrays)
      fj["arrays"].push_back({{"n", a.n},
                              {"s", a.s},
                              {"p", a.p},
                              {"m", a.m},
                              {"cells", a.cells_addr},
                              {"modtab", a.modtab_addr}});
    fj["gadget_addrs"] = f.gadget_addrs;
    fj["stats"] = stats_json(f.stats);
    j["functions"].push_back(fj);
  }
  j["untranslated"] = ordered_json::array();
  for (size_t i = 0; i < mf.untranslated.size(); i++)
    j["untranslated"].push_back(
        {{"name", mf.untranslated[i]}, {"reason", mf.untranslated_why[i]}});
  return j;
}

Manifest manifest_from_json(const nlohmann::json& j) {
  Manifest mf;
  try {
    mf.seed = j.at("seed").get<uint64_t>();
    mf.pool_base = j.at("pool").at("base").get<uint64_t>();
    mf.pool_end = j.at("pool").at("end").get<uint64_t>();
    mf.pool_count = j.at("pool").at("gadgets").get<size_t>();
    mf.chain_end = j.at("chain_end").get<uint64_t>();
    mf.true_gadget_items = j.at("true_gadget_items").get<size_t>();
    for (const auto& fj : j.at("functions")) {
      ManifestFunction f;
      f.name = fj.at("name").get<std::string>();
      f.entry = fj.at("entry").get<uint64_t>();
      f.chain_base = fj.at("chain_base").get<uint64_t>();
      f.chain_end = fj.at("chain_end").get<uint64_t>();
      for (const auto& bj : fj.at("blocks")) {
        ManifestBlock b;
        b.id = bj.at("id").get<size_t>();
        b.start = bj.at("start").get<uint64_t>();
        b.body = bj.at("body").get<uint64_t>();
        b.end = bj.at("end").get<uint64_t>();
        f.blocks.push_back(b);
      }
      f.gadget_addrs = fj.at("gadget_addrs").get<std::vector<uint64_t>>();
      mf.funcs.push_back(std::move(f));
    }
    for (const auto& uj : j.at("untranslated")) {
      mf.untranslated.push_back(uj.at("name").get<std::string>());
      mf.untranslated_why.push_back(uj.at("reason").get<std::string>());
    }
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::format, std::string("manifest: ") + e.what());
  }
  return mf;
}

ordered_json report_json(const ObfResult& r) {
  ordered_json j;
  j["config"] = config_json(r.cfg);
  j["manifest"] = manifest_json(r.mat.manifest);

  size_t items = 0, gaps = 0;
  ordered_json funcs = ordered_json::array();
  for (const CraftedFunction& cf : r.crafted.funcs) {
    items += cf.stats.items;
    gaps += cf.stats.eta_gaps;
    funcs.push_back({{"name", cf.chain.name}, {"stats", stats_json(cf.stats)}});
  }
  j["functions"] = funcs;
  j["totals"] = {{"functions", r.crafted.funcs.size()},
                 {"untranslated", r.crafted.untranslated.size()},
                 {"items", items},
                 {"eta_gaps", gaps},
                 {"pool_gadgets", r.pool.size()}};
  return j;
}

}  // namespace rf

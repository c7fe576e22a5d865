// Batch front end over the ropforge C API.

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "ropforge.h"

#include "CLI11.hpp"
#include "json.hpp"

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

[[noreturn]] void die_status(int status) {
  std::cerr << "error: " << rf_status_name(status) << ": " << rf_last_error()
            << "\n";
  std::exit(1);
}

void check(int status) {
  if (status != RF_OK) die_status(status);
}

[[noreturn]] void die_io(const std::string& what) {
  std::cerr << "error: io: " << what << "\n";
  std::exit(1);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) die_io("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const void* data, size_t len) {
  std::ofstream out(path, std::ios::binary);
  if (!out) die_io("cannot write " + path);
  out.write(static_cast<const char*>(data), std::streamsize(len));
  if (!out) die_io("short write to " + path);
}

void emit(const std::string& text, const std::string& out_path) {
  if (out_path.empty())
    std::cout << text << "\n";
  else
    write_file(out_path, text.data(), text.size());
}

// Accepts decimal, hex (0x...) and negative values; negatives wrap to
// two's complement so "-1" means the all-ones word.
uint64_t parse_u64(const std::string& s) {
  std::string t = s;
  bool neg = !t.empty() && t[0] == '-';
  if (neg) t = t.substr(1);
  uint64_t v = 0;
  size_t pos = 0;
  try {
    v = std::stoull(t, &pos, 0);
  } catch (const std::exception&) {
    throw CLI::ValidationError("'" + s + "' is not an integer");
  }
  if (pos != t.size())
    throw CLI::ValidationError("'" + s + "' is not an integer");
  return neg ? ~v + 1 : v;
}

// "arg:lo-hi", e.g. "0:0-255". Plain "lo-hi" means argument 0.
json parse_domain(const std::string& s) {
  size_t colon = s.find(':');
  std::string range = colon == std::string::npos ? s : s.substr(colon + 1);
  size_t dash = range.find('-', 1);
  if (dash == std::string::npos)
    throw CLI::ValidationError("domain '" + s + "' is not arg:lo-hi");
  json d;
  d["arg"] = colon == std::string::npos
                 ? 0
                 : parse_u64(s.substr(0, colon));
  d["lo"] = parse_u64(range.substr(0, dash));
  d["hi"] = parse_u64(range.substr(dash + 1));
  return d;
}

std::string default_manifest_path(const std::string& image_path) {
  std::string base = image_path;
  const std::string ext = ".ropi";
  if (base.size() > ext.size() &&
      base.compare(base.size() - ext.size(), ext.size(), ext) == 0)
    base.resize(base.size() - ext.size());
  return base + ".manifest.json";
}

rf_img* load_image_or_die(const std::string& path) {
  rf_img* img = nullptr;
  check(rf_img_load(path.c_str(), &img));
  return img;
}

struct ObfuscateArgs {
  std::string input, output = "out.ropi";
  std::string report_path, manifest_path, native_path;
  uint64_t seed = 1;
  bool p1 = false, p2 = false, confusion = false, all = false;
  std::string p3 = "none";
  int eta = 16, p3_sites = 2;
  int n = 4, s = 4, p = 32, m = 13;
  double k = 0.25;
  std::vector<std::string> only;
};

int cmd_obfuscate(const ObfuscateArgs& a) {
  ordered_json cfg;
  cfg["seed"] = a.seed;
  cfg["p1"] = a.p1 || a.all;
  cfg["p2"] = a.p2 || a.all;
  cfg["p3"] = (a.all && a.p3 == "none") ? "for" : a.p3;
  cfg["confusion"] = a.confusion || a.all;
  cfg["eta_max"] = a.eta;
  cfg["p3_sites"] = a.p3_sites;
  cfg["n"] = a.n;
  cfg["s"] = a.s;
  cfg["p"] = a.p;
  cfg["m"] = a.m;
  cfg["k"] = a.k;
  if (!a.only.empty()) cfg["only"] = a.only;

  std::string source = read_file(a.input);
  rf_ctx* ctx = nullptr;
  check(rf_obfuscate(source.c_str(), cfg.dump().c_str(), &ctx));

  uint8_t* bytes = nullptr;
  size_t len = 0;
  check(rf_image(ctx, 1, &bytes, &len));
  write_file(a.output, bytes, len);
  rf_buf_free(bytes);

  if (!a.native_path.empty()) {
    check(rf_image(ctx, 0, &bytes, &len));
    write_file(a.native_path, bytes, len);
    rf_buf_free(bytes);
  }

  char* manifest = nullptr;
  check(rf_manifest(ctx, &manifest));
  std::string mpath = a.manifest_path.empty()
                          ? default_manifest_path(a.output)
                          : a.manifest_path;
  write_file(mpath, manifest, std::strlen(manifest));
  rf_str_free(manifest);

  if (!a.report_path.empty()) {
    char* report = nullptr;
    check(rf_report(ctx, &report));
    write_file(a.report_path, report, std::strlen(report));
    rf_str_free(report);
  }

  rf_free(ctx);
  return 0;
}

struct EmulateArgs {
  std::string image, fn, out;
  std::vector<std::string> args;
  uint64_t fuel = 0;
  bool trace = false;
};

int cmd_emulate(const EmulateArgs& a) {
  rf_img* img = load_image_or_die(a.image);
  std::vector<uint64_t> args;
  for (const std::string& s : a.args) args.push_back(parse_u64(s));

  char* out = nullptr;
  check(rf_run_image(img, a.fn.c_str(), args.data(), args.size(), a.fuel,
                     a.trace ? 1 : 0, &out));
  emit(out, a.out);
  rf_str_free(out);
  rf_img_free(img);
  return 0;
}

struct AttackArgs {
  std::string image, fn, mode = "flip", manifest, out;
  std::vector<std::string> args, domains;
  uint64_t budget = 0, fuel = 0;
};

int cmd_attack(const AttackArgs& a) {
  rf_img* img = load_image_or_die(a.image);
  std::string mpath =
      a.manifest.empty() ? default_manifest_path(a.image) : a.manifest;
  std::string manifest = read_file(mpath);

  ordered_json params;
  if (!a.args.empty()) {
    json v = json::array();
    for (const std::string& s : a.args) v.push_back(parse_u64(s));
    params["args"] = v;
  }
  if (a.budget) params["budget"] = a.budget;
  if (a.fuel) params["fuel"] = a.fuel;
  if (!a.domains.empty()) {
    json v = json::array();
    for (const std::string& s : a.domains) v.push_back(parse_domain(s));
    params["domains"] = v;
  }

  char* out = nullptr;
  check(rf_attack_image(img, manifest.c_str(), a.fn.c_str(), a.mode.c_str(),
                        params.dump().c_str(), &out));
  emit(out, a.out);
  rf_str_free(out);
  rf_img_free(img);
  return 0;
}

struct ReportArgs {
  std::vector<std::string> inputs;
  std::string out;
};

// One line per artifact. Build reports summarize hardening counts; attack
// reports summarize what the attack got.
int cmd_report(const ReportArgs& a) {
  std::ostringstream tab;
  tab << "artifact                          kind     summary\n";
  for (const std::string& path : a.inputs) {
    json j;
    try {
      j = json::parse(read_file(path));
    } catch (const json::exception& e) {
      std::cerr << "error: format: " << path << ": " << e.what() << "\n";
      return 1;
    }
    std::string name = path;
    if (name.size() > 32) name = "..." + name.substr(name.size() - 29);
    tab << name << std::string(name.size() < 34 ? 34 - name.size() : 1, ' ');

    if (j.contains("mode")) {
      std::string mode = j["mode"].get<std::string>();
      tab << "attack   mode=" << mode;
      if (mode == "flip")
        tab << " blocks=" << j["blocks_baseline"] << "+"
            << (j["blocks_discovered"].size()) << "/" << j["blocks_total"]
            << " outcomes=" << j["outcomes"].dump();
      else if (mode == "scan")
        tab << " candidates=" << j["candidates"] << " true="
            << j["true_positions"] << " ratio=" << j["candidate_ratio"];
      else
        tab << " paths=" << j["path_count"] << " runs=" << j["runs"];
    } else if (j.contains("manifest")) {
      const json& t = j["totals"];
      tab << "build    functions=" << t["functions"]
          << " untranslated=" << t["untranslated"] << " items=" << t["items"]
          << " gadgets=" << t["pool_gadgets"] << " seed="
          << j["config"]["seed"];
    } else if (j.contains("functions")) {
      tab << "manifest functions=" << j["functions"].size()
          << " true_gadget_items=" << j["true_gadget_items"];
    } else {
      tab << "unknown";
    }
    tab << "\n";
  }
  emit(tab.str(), a.out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ropforge: ROP chain obfuscation toolchain"};
  app.require_subcommand(1);

  ObfuscateArgs ob;
  CLI::App* obf = app.add_subcommand("obfuscate", "assemble and obfuscate");
  obf->add_option("input", ob.input, "micro-ISA assembly file")->required();
  obf->add_option("-o,--output", ob.output, "output image (ROPI)");
  obf->add_option("--seed", ob.seed, "RNG seed");
  obf->add_flag("--p1", ob.p1, "harden branches with opaque-array dispatch");
  obf->add_flag("--p2", ob.p2, "data-dependent edge prologues");
  obf->add_option("--p3", ob.p3, "state widening: none, for or array")
      ->check(CLI::IsMember({"none", "for", "array"}));
  obf->add_flag("--confusion", ob.confusion, "operand disguising + eta gaps");
  obf->add_flag("--all", ob.all, "enable p1, p2, p3 (for) and confusion");
  obf->add_option("--eta", ob.eta, "max junk gap bytes");
  obf->add_option("--p3-sites", ob.p3_sites, "max p3 sites per function");
  obf->add_option("--n", ob.n, "residue classes per array row");
  obf->add_option("--s", ob.s, "array row stride");
  obf->add_option("--p", ob.p, "array rows");
  obf->add_option("--m", ob.m, "residue modulus");
  obf->add_option("--k", ob.k, "fraction of unconditional jumps hardened");
  obf->add_option("--only", ob.only, "restrict translation to these functions");
  obf->add_option("--report", ob.report_path, "write build report JSON here");
  obf->add_option("--manifest", ob.manifest_path,
                  "manifest path (default: <output>.manifest.json)");
  obf->add_option("--native", ob.native_path, "also write the baseline image");

  EmulateArgs em;
  CLI::App* emu = app.add_subcommand("emulate", "run a function in an image");
  emu->add_option("image", em.image, "ROPI image")->required();
  emu->add_option("fn", em.fn, "function name")->required();
  emu->add_option("--args", em.args, "call arguments");
  emu->add_option("--fuel", em.fuel, "instruction budget");
  emu->add_flag("--trace", em.trace, "include the execution trace");
  emu->add_option("--out", em.out, "write JSON here instead of stdout");

  AttackArgs at;
  CLI::App* atk = app.add_subcommand("attack", "run the adversary harness");
  atk->add_option("image", at.image, "ROPI image")->required();
  atk->add_option("fn", at.fn, "function name")->required();
  atk->add_option("--mode", at.mode, "flip, scan or explore")
      ->check(CLI::IsMember({"flip", "scan", "explore"}));
  atk->add_option("--manifest", at.manifest,
                  "manifest path (default: <image>.manifest.json)");
  atk->add_option("--args", at.args, "seed-trace call arguments");
  atk->add_option("--budget", at.budget, "attack budget");
  atk->add_option("--fuel", at.fuel, "per-run instruction budget");
  atk->add_option("--domains", at.domains,
                  "explore input domains, arg:lo-hi");
  atk->add_option("--out", at.out, "write JSON here instead of stdout");

  ReportArgs re;
  CLI::App* rep = app.add_subcommand("report", "summarize JSON artifacts");
  rep->add_option("inputs", re.inputs, "report/manifest/attack JSON files")
      ->required();
  rep->add_option("--out", re.out, "write the table here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_name() == "CallForHelp" || e.get_name() == "CallForAllHelp" ||
        e.get_name() == "CallForVersion")
      return app.exit(e);
    app.exit(e);
    return 2;
  }

  if (const char* env = std::getenv("RF_SEED")) {
    try {
      ob.seed = parse_u64(env);
    } catch (const CLI::ValidationError&) {
      std::cerr << "error: param: RF_SEED is not an integer\n";
      return 2;
    }
  }

  if (obf->parsed()) return cmd_obfuscate(ob);
  if (emu->parsed()) return cmd_emulate(em);
  if (atk->parsed()) return cmd_attack(at);
  return cmd_report(re);
}

#include "ropforge.h"

#include <cstdlib>
#include <cstring>
#include <memory>
#include <string>

#include "adversary.hpp"
#include "emulator.hpp"
#include "error.hpp"
#include "image.hpp"
#include "pipeline.hpp"

#include "json.hpp"

using nlohmann::json;
using nlohmann::ordered_json;

struct rf_ctx {
  rf::ObfResult res;
};

struct rf_img {
  rf::ProgramImage img;
};

namespace {

thread_local std::string g_last_error;

int from_errc(rf::Errc c) { return static_cast<int>(c) + 1; }

template <typename F>
int guarded(F&& f) {
  try {
    f();
    return RF_OK;
  } catch (const rf::Error& e) {
    g_last_error = e.what();
    return from_errc(e.code);
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return RF_E_INTERNAL;
  }
}

char* dup_str(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

int need(bool ok, const char* what) {
  if (ok) return RF_OK;
  g_last_error = std::string("null ") + what;
  return RF_E_PARAM;
}

ordered_json outputs_json(const rf::RunOutputs& o) {
  ordered_json j;
  j["exit"] = rf::exit_reason_name(o.exit);
  j["rax"] = o.rax();
  ordered_json regs;
  for (int r = 0; r < 16; r++)
    regs[rf::reg_name(static_cast<rf::Reg>(r))] = o.regs[size_t(r)];
  j["regs"] = std::move(regs);
  ordered_json globals;
  for (const auto& [name, value] : o.globals) globals[name] = value;
  j["globals"] = std::move(globals);
  j["events"] = o.event_count;
  if (o.exit != rf::ExitReason::ok) {
    j["fault_addr"] = o.fault_addr;
    j["fault_event"] = o.fault_event;
  }
  return j;
}

}  // namespace

extern "C" {

const char* rf_version(void) { return "ropforge 0.1.0"; }

const char* rf_status_name(int status) {
  switch (status) {
    case RF_OK: return "ok";
    case RF_E_SYNTAX: return "syntax";
    case RF_E_CFG_INCOMPLETE: return "cfg_incomplete";
    case RF_E_UNTRANSLATABLE: return "untranslatable";
    case RF_E_NO_GADGET: return "no_gadget";
    case RF_E_REGISTER_PRESSURE: return "register_pressure";
    case RF_E_WIDTH: return "width";
    case RF_E_LAYOUT: return "layout";
    case RF_E_STUB_TOO_LARGE: return "stub_too_large";
    case RF_E_PARAM: return "param";
    case RF_E_FORMAT: return "format";
    case RF_E_IO: return "io";
    case RF_E_EMU: return "emu";
    case RF_E_INTERNAL: return "internal";
  }
  return "unknown";
}

const char* rf_last_error(void) { return g_last_error.c_str(); }

int rf_obfuscate(const char* source, const char* config_json, rf_ctx** out) {
  if (int r = need(source && out, "argument")) return r;
  return guarded([&] {
    rf::ObfConfig cfg;
    if (config_json) {
      json j;
      try {
        j = json::parse(config_json);
      } catch (const json::exception& e) {
        rf::fail(rf::Errc::format, std::string("config: ") + e.what());
      }
      cfg = rf::config_from_json(j);
    }
    *out = new rf_ctx{rf::obfuscate_source(source, cfg)};
  });
}

void rf_free(rf_ctx* ctx) { delete ctx; }

int rf_report(rf_ctx* ctx, char** json) {
  if (int r = need(ctx && json, "argument")) return r;
  return guarded([&] { *json = dup_str(rf::report_json(ctx->res).dump(2)); });
}

int rf_manifest(rf_ctx* ctx, char** json) {
  if (int r = need(ctx && json, "argument")) return r;
  return guarded([&] {
    *json = dup_str(rf::manifest_json(ctx->res.mat.manifest).dump(2));
  });
}

int rf_image(rf_ctx* ctx, int obfuscated, uint8_t** bytes, size_t* len) {
  if (int r = need(ctx && bytes && len, "argument")) return r;
  return guarded([&] {
    const rf::ProgramImage& img =
        obfuscated ? ctx->res.mat.image : ctx->res.native;
    std::vector<uint8_t> blob = rf::save_image(img);
    *bytes = static_cast<uint8_t*>(std::malloc(blob.size()));
    std::memcpy(*bytes, blob.data(), blob.size());
    *len = blob.size();
  });
}

int rf_img_from_bytes(const uint8_t* bytes, size_t len, rf_img** out) {
  if (int r = need(bytes && out, "argument")) return r;
  return guarded([&] {
    auto img = std::make_unique<rf_img>();
    img->img = rf::load_image({bytes, len});
    *out = img.release();
  });
}

int rf_img_load(const char* path, rf_img** out) {
  if (int r = need(path && out, "argument")) return r;
  return guarded([&] {
    auto img = std::make_unique<rf_img>();
    img->img = rf::load_image_file(path);
    *out = img.release();
  });
}

void rf_img_free(rf_img* img) { delete img; }

int rf_run_image(rf_img* img, const char* fn, const uint64_t* args,
                 size_t nargs, uint64_t fuel, int want_trace, char** json) {
  if (int r = need(img && fn && json && (args || nargs == 0), "argument"))
    return r;
  return guarded([&] {
    std::vector<uint64_t> a(args, args + nargs);
    if (!img->img.has_symbol(fn))
      rf::fail(rf::Errc::param, std::string("no function '") + fn + "'");
    uint64_t fl = fuel ? fuel : rf::kDefaultFuel;

    rf::Emulator emu(img->img);
    emu.setup_call(img->img.symbol(fn), a);
    emu.set_tracing(want_trace != 0);
    rf::ExitReason exit = emu.run(fl);
    rf::RunOutputs o = emu.outputs();
    o.exit = exit;

    ordered_json j = outputs_json(o);
    j["pivoted"] = img->img.has_symbol(std::string(fn) + ".chain");
    if (want_trace) j["trace"] = emu.trace().export_text();
    *json = dup_str(j.dump(2));
  });
}

int rf_attack_image(rf_img* img, const char* manifest_json, const char* fn,
                    const char* mode, const char* params_json, char** json) {
  if (int r = need(img && manifest_json && fn && mode && json, "argument"))
    return r;
  return guarded([&] {
    rf::Manifest mf;
    try {
      mf = rf::manifest_from_json(nlohmann::json::parse(manifest_json));
    } catch (const nlohmann::json::exception& e) {
      rf::fail(rf::Errc::format, std::string("manifest: ") + e.what());
    }

    std::vector<uint64_t> args;
    size_t budget = 0;
    uint64_t fuel = rf::kDefaultFuel;
    std::vector<rf::InputDomain> domains;
    if (params_json) {
      nlohmann::json p;
      try {
        p = nlohmann::json::parse(params_json);
      } catch (const nlohmann::json::exception& e) {
        rf::fail(rf::Errc::format, std::string("params: ") + e.what());
      }
      if (p.contains("args")) args = p["args"].get<std::vector<uint64_t>>();
      if (p.contains("budget")) budget = p["budget"].get<size_t>();
      if (p.contains("fuel")) fuel = p["fuel"].get<uint64_t>();
      if (p.contains("domains"))
        for (const auto& d : p["domains"])
          domains.push_back({d.value("arg", size_t{0}),
                             d.value("lo", uint64_t{0}),
                             d.value("hi", uint64_t{255})});
    }

    const rf::ManifestFunction* target = nullptr;
    for (const rf::ManifestFunction& f : mf.funcs)
      if (f.name == fn) target = &f;

    rf::AttackReport rep;
    std::string m = mode;
    if (m == "flip") {
      if (!target)
        rf::fail(rf::Errc::param, std::string(fn) + " is not in the manifest");
      rep = rf::flip_branches(img->img, *target, args,
                              budget ? budget : 256, fuel);
    } else if (m == "scan") {
      if (!target)
        rf::fail(rf::Errc::param, std::string(fn) + " is not in the manifest");
      rep = rf::scan_speculative(img->img, *target);
    } else if (m == "explore") {
      if (domains.empty()) domains.push_back({0, 0, 255});
      rep = rf::explore_paths(img->img, fn, domains,
                              budget ? budget : 65536, fuel);
    } else {
      rf::fail(rf::Errc::param, "mode must be flip, scan or explore");
    }
    *json = dup_str(rf::attack_json(rep).dump(2));
  });
}

void rf_buf_free(uint8_t* bytes) { std::free(bytes); }
void rf_str_free(char* s) { std::free(s); }

}  // extern "C"

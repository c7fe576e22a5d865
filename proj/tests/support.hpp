#pragma once

#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "emulator.hpp"
#include "layout.hpp"
#include "materializer.hpp"

// Emulation helpers shared by the suites: run a function in a given image
// and capture everything the differential compares.
namespace support {

struct RunResult {
  rf::RunOutputs out;
  uint64_t ss0 = ~0ull;       // ss cell 0 after the run
  uint64_t events = 0;
};

inline RunResult run_in(const rf::ProgramImage& img, const std::string& fn,
                        const std::vector<uint64_t>& args,
                        uint64_t fuel = rf::kDefaultFuel) {
  rf::Emulator emu(img);
  emu.setup_call(img.symbol(fn), args);
  emu.run(fuel);
  RunResult r;
  r.out = emu.outputs();
  r.ss0 = emu.ss0();
  r.events = emu.event_count();
  return r;
}

// Native-vs-rewritten agreement on the observable surface: exit reason,
// return value, declared live-out registers, globals. The rewritten run must
// also leave the world-switch bookkeeping balanced.
inline std::optional<std::string> diff_outputs(const RunResult& nat,
                                               const RunResult& obf,
                                               rf::RegSet extra_liveout) {
  std::ostringstream why;
  if (nat.out.exit != obf.out.exit) {
    why << "exit " << rf::exit_reason_name(nat.out.exit) << " vs "
        << rf::exit_reason_name(obf.out.exit);
    return why.str();
  }
  if (nat.out.exit == rf::ExitReason::ok) {
    if (nat.out.rax() != obf.out.rax()) {
      why << "rax " << nat.out.rax() << " vs " << obf.out.rax();
      return why.str();
    }
    std::optional<std::string> bad;
    extra_liveout.for_each([&](rf::Reg r) {
      if (!bad && nat.out.reg(r) != obf.out.reg(r)) {
        std::ostringstream w;
        w << rf::reg_name(r) << " " << nat.out.reg(r) << " vs "
          << obf.out.reg(r);
        bad = w.str();
      }
    });
    if (bad) return bad;
    if (nat.out.globals != obf.out.globals) return std::string("globals differ");
    if (obf.ss0 != 0) {
      why << "ss cell0 left at " << obf.ss0;
      return why.str();
    }
  }
  return std::nullopt;
}

}  // namespace support

#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "image.hpp"
#include "isa.hpp"

namespace rf {

enum class ExitReason {
  ok,              // top-level return hit the sentinel
  halt,            // hlt executed
  invalid_decode,  // fetch outside text or undecodable bytes
  stack_fault,     // rsp-carried access out of writable memory
  mem_fault,       // any other access out of mapped memory
  fuel_exhausted,
  ss_overflow,
  ss_underflow,
  running,         // only from step()
};

const char* exit_reason_name(ExitReason r);

struct TraceEvent {
  uint64_t addr = 0;  // fetch address
  MicroInstr instr;
  uint64_t rsp_before = 0;
  uint64_t rsp_after = 0;
  uint64_t ss0 = 0;   // ss cell 0 after the instruction
};

struct Trace {
  std::vector<TraceEvent> events;
  // RSP deltas observed at chain dispatch points (add rsp, reg): the branch
  // decision signature of the run.
  std::vector<int64_t> branch_deltas;

  std::string export_text() const;
};

struct RunOutputs {
  ExitReason exit = ExitReason::running;
  uint64_t fault_addr = 0;      // faulting access or fetch address
  size_t fault_event = 0;       // event index of the fault
  uint64_t event_count = 0;
  std::array<uint64_t, 16> regs{};
  std::vector<std::pair<std::string, uint64_t>> globals;  // sorted by name

  uint64_t rax() const { return regs[0]; }
  uint64_t reg(Reg r) const { return regs[size_t(r)]; }
};

inline constexpr uint64_t kDefaultFuel = 10'000'000;

// Deterministic interpreter over a loaded image. ROP execution needs no
// special mode: ret pops the next rip from wherever rsp points, so once the
// pivot stub aims rsp at a chain the chain drives execution.
class Emulator {
 public:
  explicit Emulator(const ProgramImage& img);
  ~Emulator();
  Emulator(const Emulator&) = delete;
  Emulator& operator=(const Emulator&) = delete;

  // Resets mutable memory from the image and arranges a top-level call:
  // argument registers loaded, rsp below the stack top with the return
  // sentinel pushed, rip at the function entry.
  void setup_call(uint64_t entry, const std::vector<uint64_t>& args);

  ExitReason step();
  ExitReason run(uint64_t fuel = kDefaultFuel);

  // Deep copy of the mutable machine state.
  struct Snapshot {
    std::vector<std::vector<uint8_t>> writable;  // each writable segment
    std::array<uint64_t, 16> regs;
    uint64_t rip;
    bool cf, zf;
    uint64_t events;
  };
  std::unique_ptr<Snapshot> snapshot() const;
  void restore(const Snapshot& s);

  void set_tracing(bool on) { tracing_ = on; }
  const Trace& trace() const { return trace_; }
  Trace& trace() { return trace_; }

  // Event indices at which the next flag read by a cmov is inverted.
  void set_flips(std::set<uint64_t> flips) { flips_ = std::move(flips); }

  RunOutputs outputs() const;

  uint64_t reg(Reg r) const { return regs_[size_t(r)]; }
  void set_reg(Reg r, uint64_t v) { regs_[size_t(r)] = v; }
  uint64_t rip() const { return rip_; }
  void set_rip(uint64_t v) { rip_ = v; }  // adversary speculation hook
  bool cf() const { return cf_; }
  bool zf() const { return zf_; }
  uint64_t event_count() const { return events_; }
  uint64_t ss0() const;
  uint64_t fault_addr() const { return fault_addr_; }

  // Direct memory access for tests and the adversary harness.
  bool read_mem(uint64_t addr, void* out, size_t n) const;
  bool write_mem(uint64_t addr, const void* in, size_t n);

 private:
  struct Seg {
    uint64_t base = 0;
    std::vector<uint8_t> bytes;
    bool writable = false;
    bool contains(uint64_t addr, size_t n) const {
      return addr >= base && addr + n <= base + bytes.size() && addr + n >= addr;
    }
  };

  Seg* seg_for(uint64_t addr, size_t n);
  const Seg* seg_for(uint64_t addr, size_t n) const;
  bool load(uint64_t addr, size_t n, uint64_t& out);
  bool store(uint64_t addr, size_t n, uint64_t v, ExitReason& fault);
  ExitReason exec(const MicroInstr& i, size_t len);
  bool cond(Cond c) const;

  const ProgramImage& img_;
  std::vector<Seg> segs_;  // text, data, chain, stack
  std::array<uint64_t, 16> regs_{};
  uint64_t rip_ = 0;
  bool cf_ = false, zf_ = false;
  uint64_t events_ = 0;
  uint64_t fault_addr_ = 0;
  size_t fault_event_ = 0;
  bool tracing_ = false;
  Trace trace_;
  std::set<uint64_t> flips_;
};

// Convenience wrappers. run_native requires the function to still carry its
// original body; run_obfuscated requires a pivoted one ("fn.chain" symbol).
RunOutputs run_native(const ProgramImage& img, const std::string& fn,
                      const std::vector<uint64_t>& args, uint64_t fuel = kDefaultFuel);
RunOutputs run_obfuscated(const ProgramImage& img, const std::string& fn,
                          const std::vector<uint64_t>& args, uint64_t fuel = kDefaultFuel);

}  // namespace rf

#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "analysis.hpp"
#include "chain.hpp"
#include "gadget.hpp"
#include "program.hpp"
#include "rng.hpp"
#include "roplet.hpp"

namespace rf {

// Per-edge stack-delta plan: the successor block was reached through an
// equality branch whose compared operands are still intact, so its prologue
// can fold the (known-zero or known-nonzero) difference into rsp.
struct P2Plan {
  bool eligible = false;
  bool diff_form = false;  // rsp += x*(a-b); else rsp += x*(1-[a!=b])
  Reg a = Reg::rax;
  bool b_is_imm = false;
  Reg b = Reg::rax;
  uint64_t b_imm = 0;
  int x = 0;
  RegSet keep;
};

// Translates one function into a gadget chain.  Hardening passes hook into
// the emission helpers below, so the predicate builders live elsewhere but
// drive the same machinery.
class Crafter {
 public:
  Crafter(const Function& fn, const Program& prog, GadgetPool& pool,
          const ObfConfig& cfg, uint64_t& dyn_cursor);

  CraftedFunction run();

  // Emission: every helper appends to the block being crafted.
  size_t emit(ChainItem it);
  void g1(const MicroInstr& mi, std::string note = {});
  void gseq(const std::vector<MicroInstr>& seq, std::string note = {});
  size_t pop_imm(Reg r, uint64_t v, std::string note = {});
  size_t pop_label(Reg r, LabelRef ref, std::string note = {});
  size_t pop_gadget_addr(Reg r, size_t gadget_id, std::string note = {});
  void zero(Reg r);
  void movrr(Reg d, Reg s);
  void rr(Op op, Reg d, Reg s);
  void load0(Reg d, Reg base);
  void store0(Reg base, Reg s);
  void cmov(Cond cc, Reg d, Reg s);
  void shl_small(Reg r, int c);
  void shr1(Reg r);
  void shr63(Reg r);
  void add_rsp_reg(Reg r);
  void mul_const(Reg acc, Reg src, uint64_t k);  // clobbers src
  void not_zero(Reg v, Reg u, Reg w);            // v = (v != 0), clobbers u,w
  uint32_t here_label();
  uint32_t block_label(size_t b) const { return block_labels_[b]; }

  // Scratch registers for one fragment.  At most one live register can be
  // parked in a chain slot; the restore lands when finish() runs, so the
  // fragment must not branch away in between.
  class Scratch {
   public:
    Scratch(Crafter& c, RegSet avail, RegSet spillable);
    int capacity() const;
    void ensure(int k);
    Reg take();
    void release(Reg r);
    void finish();

   private:
    Crafter& c_;
    RegSet avail_;
    RegSet spillable_;
    bool spilled_ = false;
    Reg spilled_reg_ = Reg::rax;
    uint32_t slot_label_ = 0;
  };

  struct FlagsGuard {
    bool active = false;
    Reg a = Reg::rax;
  };
  FlagsGuard guard_flags(size_t i, bool lowering_dirty, Scratch& sc);
  void unguard_flags(FlagsGuard& fg, Scratch& sc);

  RegSet dead_for(size_t i) const;
  RegSet spillable_for(size_t i) const;
  // Registers carrying input-derived values, live here; dispatch predicates
  // mix them so the computed index stays data-dependent.
  std::vector<Reg> symbolic_at(size_t i) const;

  const Function& fn;
  const Program& prog;
  GadgetPool& pool;
  const ObfConfig& cfg;
  Cfg cf;
  LivenessMap lm;
  TaintMap tm;
  RopletProgram rp;
  FunctionChain chain;
  CraftStats stats;
  Rng rng;
  uint64_t& dyn_cursor;
  bool have_array = false;
  ArraySpec array;
  int next_ordinal = 0;
  // While set, popped values must keep their plain form: flags are in
  // flight and any inserted arithmetic would corrupt them.
  bool flag_window = false;

 private:
  void craft_block(size_t b);
  void lower_instr(size_t i, const MicroInstr& mi);
  void lower_terminator(size_t i, const MicroInstr& mi, size_t b);
  void lower_call(size_t i, const MicroInstr& mi);
  void lower_tail(const MicroInstr& mi);
  void lower_switch(size_t i, const MicroInstr& mi, size_t b);
  void plain_cond_template(size_t i, size_t b, Cond cc, uint32_t taken);
  void plain_uncond_template(size_t i, uint32_t target, bool removable);
  void spill_edge_flags(size_t term, Scratch& sc);
  void restore_edge_flags(size_t b);
  void maybe_eta(size_t i);
  void maybe_decoy(size_t i);
  void realign_block(size_t last_instr);
  Reg slot_addr_in(Scratch& sc);
  Reg sp_ea(Scratch& sc, int32_t disp);
  void sp_load_ea(Scratch& sc, Reg dest, int32_t disp);
  uint64_t abs_of(size_t i, const MicroInstr& mi) const;

  std::vector<uint32_t> block_labels_;
  std::vector<P2Plan> p2_plans_;
  std::set<size_t> p1_uncond_;
  size_t cur_block_ = 0;
  uint64_t block_misalign_ = 0;
  bool has_switch_ = false;
  int p3_left_ = 0;

  friend bool p1_dispatch(Crafter&, int, bool, Cond, uint32_t, size_t);
  friend bool p2_prologue(Crafter&, size_t, const P2Plan&);
  friend bool p3_insert(Crafter&, size_t);
};

CraftedProgram craft_program(const Program& prog, GadgetPool& pool,
                             const ObfConfig& cfg);

}  // namespace rf

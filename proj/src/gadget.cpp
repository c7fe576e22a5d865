#include "gadget.hpp"

#include <algorithm>
#include <sstream>

#include "error.hpp"
#include "layout.hpp"

namespace rf {

std::string Gadget::text() const {
  std::string s;
  for (size_t i = 0; i < instrs.size(); i++) {
    if (i) s += " ; ";
    s += disasm(instrs[i]);
  }
  return s;
}

GadgetPool::GadgetPool(uint64_t seed) : seed_(seed), rng_(seed ^ 0x67616467ull) {}

std::string GadgetPool::key_of(const std::vector<MicroInstr>& seq) const {
  std::vector<uint8_t> bytes;
  for (const MicroInstr& mi : seq) encode_to(mi, bytes);
  return std::string(bytes.begin(), bytes.end());
}

const Gadget* GadgetPool::match(const std::vector<MicroInstr>& seq) const {
  auto it = index_.find(key_of(seq));
  if (it == index_.end()) return nullptr;
  const std::vector<size_t>& ids = it->second;
  return &gadgets_[ids[ids.size() > 1 ? rng_.below(ids.size()) : 0]];
}

const Gadget& GadgetPool::require(const std::vector<MicroInstr>& seq) {
  const Gadget* g = match(seq);
  if (!g) {
    std::string want;
    for (size_t i = 0; i < seq.size(); i++) {
      if (i) want += " ; ";
      want += disasm(seq[i]);
    }
    fail(Errc::no_gadget, "no gadget for: " + want);
  }
  return *g;
}

const Gadget& GadgetPool::add(std::vector<MicroInstr> seq) {
  if (frozen_) fail(Errc::internal, "gadget pool already frozen");
  if (seq.empty()) fail(Errc::internal, "empty gadget");
  Op last = seq.back().op;
  if (last != Op::ret && last != Op::jmp_r)
    fail(Errc::internal, "gadget must end in ret or jmp reg");
  std::string k = key_of(seq);
  auto it = index_.find(k);
  if (it != index_.end()) return gadgets_[it->second.front()];
  Gadget g;
  g.instrs = std::move(seq);
  g.id = gadgets_.size();
  index_[k].push_back(g.id);
  gadgets_.push_back(std::move(g));
  return gadgets_.back();
}

std::vector<uint8_t> GadgetPool::encode_text(uint64_t base) {
  if (frozen_) fail(Errc::internal, "gadget pool already frozen");
  frozen_ = true;

  std::vector<size_t> order(gadgets_.size());
  for (size_t i = 0; i < order.size(); i++) order[i] = i;
  Rng lay(seed_ ^ 0x74786574ull);
  for (size_t i = order.size(); i > 1; i--)
    std::swap(order[i - 1], order[lay.below(i)]);

  std::vector<uint8_t> blob;
  for (size_t id : order) {
    // Junk gap: random bytes that are deliberately poor instruction starts,
    // so straight-line decode between gadgets usually dies fast.
    size_t gap = lay.below(8);
    for (size_t j = 0; j < gap; j++)
      blob.push_back(static_cast<uint8_t>(0xc0 | lay.below(0x40)));
    Gadget& g = gadgets_[id];
    g.addr = base + blob.size();
    for (const MicroInstr& mi : g.instrs) encode_to(mi, blob);
  }
  return blob;
}

std::string GadgetPool::dump() const {
  std::vector<const Gadget*> by_addr;
  by_addr.reserve(gadgets_.size());
  for (const Gadget& g : gadgets_) by_addr.push_back(&g);
  std::sort(by_addr.begin(), by_addr.end(),
            [](const Gadget* a, const Gadget* b) { return a->addr < b->addr; });
  std::ostringstream os;
  for (const Gadget* g : by_addr) {
    os << "0x" << std::hex << g->addr << std::dec << ": " << g->text() << "\n";
  }
  return os.str();
}

namespace {

MicroInstr mk(Op op, Reg r1 = Reg::rax, Reg r2 = Reg::rax, int32_t disp = 0,
              uint64_t imm = 0, Cond cc = Cond::e) {
  return MicroInstr{op, r1, r2, disp, imm, cc};
}

const MicroInstr kRet = mk(Op::ret);

bool usable(Reg r) { return r != Reg::rsp; }

}  // namespace

GadgetPool build_universal_pool(uint64_t seed) {
  GadgetPool pool(seed);
  auto add1 = [&](std::vector<MicroInstr> seq) { pool.add(std::move(seq)); };

  std::vector<Reg> regs;
  for (int i = 0; i < kNumRegs; i++)
    if (usable(static_cast<Reg>(i))) regs.push_back(static_cast<Reg>(i));

  // Plain ret: the 8-byte disposal step.
  add1({kRet});

  // Sub-cell rsp hops. lea leaves the flags alone, so these realign the
  // chain even while a branch condition is in flight.
  for (int d = 1; d <= 7; d++)
    add1({mk(Op::lea, Reg::rsp, Reg::rsp, d), kRet});

  for (Reg r : regs) {
    add1({mk(Op::pop_r, r), kRet});
    add1({mk(Op::mov_ri, r, Reg::rax, 0, 0), kRet});  // zero r
    add1({mk(Op::neg_r, r), kRet});
    add1({mk(Op::not_r, r), kRet});
    add1({mk(Op::add_rr, Reg::rsp, r), kRet});  // conditional-skip dispatch
    add1({mk(Op::xchg_rm, Reg::rsp, r), kRet});
    for (int c = 1; c <= 7; c++) add1({mk(Op::shl_ri, r, Reg::rax, 0, c), kRet});
    add1({mk(Op::shr_ri, r, Reg::rax, 0, 1), kRet});
    add1({mk(Op::shr_ri, r, Reg::rax, 0, 63), kRet});
    // Confusion base scheme: the bias lives here in text, not in the chain.
    add1({mk(Op::sub_ri, r, Reg::rax, 0, kConfusionBias), kRet});
  }

  for (Reg a : regs) {
    for (Reg b : regs) {
      // Same-register forms stay in: xor r,r / sub r,r / test r,r are how
      // real code zeroes and tests, and add r,r doubles.
      add1({mk(Op::mov_rr, a, b), kRet});
      add1({mk(Op::add_rr, a, b), kRet});
      add1({mk(Op::sub_rr, a, b), kRet});
      add1({mk(Op::and_rr, a, b), kRet});
      add1({mk(Op::or_rr, a, b), kRet});
      add1({mk(Op::xor_rr, a, b), kRet});
      add1({mk(Op::shl_rr, a, b), kRet});
      add1({mk(Op::shr_rr, a, b), kRet});
      add1({mk(Op::cmp_rr, a, b), kRet});
      add1({mk(Op::test_rr, a, b), kRet});
      for (int cc = 0; cc < 6; cc++)
        add1({mk(Op::cmov_rr, a, b, 0, 0, static_cast<Cond>(cc)), kRet});
      add1({mk(Op::mov_rm, a, b), kRet});      // mov a, [b]
      add1({mk(Op::mov_mr, a, b), kRet});      // mov [a], b
      add1({mk(Op::movsx8_rm, a, b), kRet});   // movsx8 a, byte [b]
      add1({mk(Op::add_rm, a, b), kRet});      // add a, [b]
    }
  }

  // Fixed-displacement disposal hops.
  for (int64_t d : {8, 16, 24})
    add1({mk(Op::add_ri, Reg::rsp, Reg::rax, 0, d), kRet});
  add1({mk(Op::pop_r, Reg::r10), mk(Op::pop_r, Reg::r11), kRet});

  // World-switch machinery.
  add1(seq_unpivot_ret());
  add1(seq_call_out());
  add1(seq_call_resume());
  add1(seq_tail_jump());

  return pool;
}

// The scratch slot keeps, per nesting level, the stack pointer of whichever
// world is not running; xchg through it flips worlds and leaves the
// invariant intact.

std::vector<MicroInstr> seq_unpivot_ret() {
  return {mk(Op::mov_ri, Reg::r11, Reg::rax, 0, kSsAddr),
          mk(Op::mov_rr, Reg::r10, Reg::r11),
          mk(Op::add_rm, Reg::r11, Reg::r11),
          mk(Op::sub_mi, Reg::r10, Reg::rax, 0, 8),
          mk(Op::xchg_rm, Reg::rsp, Reg::r11), kRet};
}

std::vector<MicroInstr> seq_call_out() {
  return {mk(Op::mov_ri, Reg::r11, Reg::rax, 0, kSsAddr),
          mk(Op::add_rm, Reg::r11, Reg::r11),
          mk(Op::xchg_rm, Reg::rsp, Reg::r11),
          mk(Op::jmp_r, Reg::r10)};
}

std::vector<MicroInstr> seq_call_resume() {
  return {mk(Op::mov_ri, Reg::r11, Reg::rax, 0, kSsAddr),
          mk(Op::add_rm, Reg::r11, Reg::r11),
          mk(Op::xchg_rm, Reg::rsp, Reg::r11), kRet};
}

std::vector<MicroInstr> seq_tail_jump() {
  return {mk(Op::mov_ri, Reg::r11, Reg::rax, 0, kSsAddr),
          mk(Op::mov_rr, Reg::r10, Reg::r11),
          mk(Op::add_rm, Reg::r11, Reg::r11),
          mk(Op::sub_mi, Reg::r10, Reg::rax, 0, 8),
          mk(Op::xchg_rm, Reg::rsp, Reg::r11),
          mk(Op::jmp_r, Reg::rax)};
}

}  // namespace rf

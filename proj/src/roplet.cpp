#include "roplet.hpp"

#include <sstream>

#include "error.hpp"

namespace rf {

const char* roplet_kind_name(RopletKind k) {
  switch (k) {
    case RopletKind::intra_transfer: return "IntraTransfer";
    case RopletKind::inter_transfer: return "InterTransfer";
    case RopletKind::epilogue: return "Epilogue";
    case RopletKind::direct_stack_access: return "DirectStackAccess";
    case RopletKind::stack_ptr_ref: return "StackPtrRef";
    case RopletKind::instr_ptr_ref: return "InstrPtrRef";
    case RopletKind::data_movement: return "DataMovement";
    case RopletKind::alu: return "ALU";
  }
  return "?";
}

namespace {

bool mem_base_rsp(const MicroInstr& mi) {
  switch (mi.op) {
    case Op::mov_rm:
    case Op::lea:
    case Op::add_rm:
    case Op::movsx8_rm:
      return mi.r2 == Reg::rsp;
    case Op::mov_mr:
    case Op::add_mi:
    case Op::sub_mi:
      return mi.r1 == Reg::rsp;
    case Op::xchg_rm:
      return mi.r2 == Reg::rsp;
    default:
      return false;
  }
}

[[noreturn]] void reject(const MicroInstr& mi, const char* why) {
  fail(Errc::untranslatable, std::string(why) + ": " + disasm(mi));
}

}  // namespace

std::vector<RopletKind> classify(const MicroInstr& mi, const Function* fn) {
  using K = RopletKind;
  const Reg sp = Reg::rsp;

  switch (mi.op) {
    case Op::hlt:
      reject(mi, "trap has no chain form");
    case Op::ret:
      return {K::epilogue};
    case Op::leave:
      return {K::epilogue, K::direct_stack_access};
    case Op::call_abs:
      return {K::inter_transfer};
    case Op::jmp_abs: {
      if (fn && (mi.imm < fn->entry || mi.imm >= fn->entry + fn->body_size))
        return {K::inter_transfer};
      return {K::intra_transfer};
    }
    case Op::jmp_r:
      if (mi.r1 == sp) reject(mi, "indirect jump through rsp");
      return {K::intra_transfer};
    case Op::jcc_abs:
      return {K::intra_transfer};
    case Op::push_r:
      if (mi.r1 == sp) reject(mi, "push rsp");
      return {K::direct_stack_access};
    case Op::pop_r:
      if (mi.r1 == sp) reject(mi, "pop rsp");
      return {K::direct_stack_access};
    case Op::push_i:
    case Op::pushf:
    case Op::popf:
      return {K::direct_stack_access};
    case Op::mov_rrip:
    case Op::mov_ripr:
      if (mi.r1 == sp) reject(mi, "rsp in rip-relative access");
      return {K::instr_ptr_ref, K::data_movement};
    case Op::lea_rip:
      if (mi.r1 == sp) reject(mi, "rsp in rip-relative access");
      return {K::instr_ptr_ref};
    default:
      break;
  }

  // Remaining forms: plain moves, memory forms, ALU. The stack pointer is
  // supported only as an add/sub target, a mov source or target, or a memory
  // base; anything else has no chain lowering.
  bool base_sp = mem_base_rsp(mi);
  bool r1_sp = false, r2_sp = false;
  switch (op_shape(mi.op).regs) {
    case 2:
      r2_sp = !base_sp && mi.r2 == sp;
      [[fallthrough]];
    case 1:
      r1_sp = !(base_sp && (mi.op == Op::mov_mr || mi.op == Op::add_mi ||
                            mi.op == Op::sub_mi)) &&
              mi.r1 == sp;
      break;
    default:
      break;
  }

  if (r1_sp) {
    switch (mi.op) {
      case Op::add_ri:
      case Op::sub_ri:
        return {K::stack_ptr_ref};
      case Op::add_rr:
      case Op::sub_rr:
      case Op::mov_rr:
        if (mi.r2 == sp) reject(mi, "rsp combined with itself");
        return {K::stack_ptr_ref};
      default:
        reject(mi, "unsupported rsp target");
    }
  }
  if (r2_sp) {
    if (mi.op == Op::mov_rr) return {K::stack_ptr_ref};
    reject(mi, "unsupported rsp source");
  }

  std::vector<RopletKind> kinds;
  if (base_sp) kinds.push_back(K::stack_ptr_ref);

  switch (mi.op) {
    case Op::mov_rr:
    case Op::mov_ri:
    case Op::cmov_rr:
      kinds.push_back(K::data_movement);
      break;
    case Op::lea:
      // Address materialization only; with an rsp base the stack-ptr roplet
      // already carries the whole effect.
      if (!base_sp) kinds.push_back(K::data_movement);
      break;
    case Op::mov_rm:
    case Op::mov_mr:
    case Op::movsx8_rm:
    case Op::xchg_rm:
      kinds.push_back(K::data_movement);
      break;
    case Op::add_rr:
    case Op::add_ri:
    case Op::add_rm:
    case Op::add_mi:
    case Op::sub_rr:
    case Op::sub_ri:
    case Op::sub_mi:
    case Op::and_rr:
    case Op::and_ri:
    case Op::or_rr:
    case Op::or_ri:
    case Op::xor_rr:
    case Op::xor_ri:
    case Op::shl_ri:
    case Op::shl_rr:
    case Op::shr_ri:
    case Op::shr_rr:
    case Op::neg_r:
    case Op::not_r:
    case Op::cmp_rr:
    case Op::cmp_ri:
    case Op::test_rr:
      kinds.push_back(K::alu);
      break;
    default:
      reject(mi, "no classification");
  }
  return kinds;
}

RopletProgram ropletize(const Function& fn, const Cfg& cfg, const LivenessMap& lm) {
  RopletProgram rp;
  rp.blocks.reserve(cfg.blocks.size());
  for (size_t b = 0; b < cfg.blocks.size(); b++) {
    const Block& blk = cfg.blocks[b];
    RopletBlock rb;
    rb.block_id = b;
    for (size_t i = blk.first; i <= blk.last; i++) {
      const AsmInstr& ai = fn.instrs[i];
      MicroInstr payload = ai.mi;

      // Resolve rip-relative operands to the absolute data address now;
      // nothing downstream wants to reason about encoder offsets.
      if (payload.op == Op::mov_rrip || payload.op == Op::mov_ripr ||
          payload.op == Op::lea_rip) {
        payload.imm = ai.addr + encoded_length(payload.op) +
                      static_cast<int64_t>(payload.disp);
      }

      if (payload.op == Op::leave) {
        Roplet lo;
        lo.kind = RopletKind::epilogue;
        lo.instr_index = i;
        lo.payload = MicroInstr{Op::mov_rr, Reg::rsp, Reg::rbp, 0, 0, Cond::e};
        lo.live_after = lm.live_out[i];
        lo.flags_live_after = lm.flags_out[i] != 0;
        rb.roplets.push_back(lo);
        lo.kind = RopletKind::direct_stack_access;
        lo.payload = MicroInstr{Op::pop_r, Reg::rbp, Reg::rax, 0, 0, Cond::e};
        rb.roplets.push_back(lo);
        continue;
      }

      for (RopletKind k : classify(ai.mi, &fn)) {
        Roplet r;
        r.kind = k;
        r.instr_index = i;
        r.payload = payload;
        r.tail = k == RopletKind::inter_transfer && ai.mi.op == Op::jmp_abs;
        r.live_after = lm.live_out[i];
        r.flags_live_after = lm.flags_out[i] != 0;
        rb.roplets.push_back(r);
      }
    }
    rp.blocks.push_back(std::move(rb));
  }
  return rp;
}

std::string dump(const RopletProgram& rp) {
  std::ostringstream os;
  for (const RopletBlock& rb : rp.blocks) {
    os << "block " << rb.block_id << ":\n";
    for (const Roplet& r : rp.blocks[rb.block_id].roplets) {
      os << "  " << roplet_kind_name(r.kind);
      if (r.tail) os << "(tail)";
      os << " | " << disasm(r.payload) << " | live=" << r.live_after.str()
         << " | flags=" << (r.flags_live_after ? 1 : 0) << "\n";
    }
  }
  return os.str();
}

}  // namespace rf

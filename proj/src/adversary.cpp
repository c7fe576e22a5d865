#include "adversary.hpp"

#include <algorithm>
#include <deque>
#include <set>

#include "error.hpp"
#include "layout.hpp"

namespace rf {

namespace {

// A block is visited when a ret pops one of its body cells. Prologue cells
// are excluded on purpose: a flip that derails inside an edge prologue has
// not shown the analyst anything about the block behind it.
std::vector<uint64_t> visited_bodies(const ManifestFunction& mf,
                                     const Trace& tr) {
  std::vector<const ManifestBlock*> blocks;
  blocks.reserve(mf.blocks.size());
  for (const ManifestBlock& b : mf.blocks) blocks.push_back(&b);
  std::sort(blocks.begin(), blocks.end(),
            [](const ManifestBlock* a, const ManifestBlock* b) {
              return a->start < b->start;
            });

  std::set<uint64_t> seen;
  for (const TraceEvent& e : tr.events) {
    if (e.instr.op != Op::ret) continue;
    auto it = std::upper_bound(blocks.begin(), blocks.end(), e.rsp_before,
                               [](uint64_t v, const ManifestBlock* b) {
                                 return v < b->start;
                               });
    if (it == blocks.begin()) continue;
    const ManifestBlock* b = *(it - 1);
    if (e.rsp_before >= b->body && e.rsp_before < b->end) seen.insert(b->body);
  }
  return {seen.begin(), seen.end()};
}

// The branch-decision signature: the rsp deltas taken at dispatch points.
std::string path_signature(const Emulator& emu, ExitReason exit) {
  std::string sig = exit_reason_name(exit);
  sig += ':';
  for (int64_t d : emu.trace().branch_deltas)
    sig.append(reinterpret_cast<const char*>(&d), 8);
  return sig;
}

// Flip classification also cares about the computed result.
std::string run_signature(const Emulator& emu, ExitReason exit) {
  std::string sig = path_signature(emu, exit);
  uint64_t rax = emu.reg(Reg::rax);
  sig.append(reinterpret_cast<const char*>(&rax), 8);
  return sig;
}

std::vector<uint64_t> cmov_events(const Trace& tr) {
  std::vector<uint64_t> out;
  for (size_t i = 0; i < tr.events.size(); i++)
    if (tr.events[i].instr.op == Op::cmov_rr) out.push_back(i);
  return out;
}

bool faulted(ExitReason r) { return r != ExitReason::ok; }

}  // namespace

AttackReport flip_branches(const ProgramImage& img, const ManifestFunction& mf,
                           const std::vector<uint64_t>& args, size_t budget,
                           uint64_t fuel) {
  AttackReport rep;
  rep.mode = "flip";
  rep.function = mf.name;
  rep.budget = budget;
  rep.total_blocks = mf.blocks.size();

  Emulator emu(img);
  auto run_with = [&](const std::vector<uint64_t>& flips) {
    emu.setup_call(mf.entry, args);
    emu.set_flips({flips.begin(), flips.end()});
    emu.set_tracing(true);
    return emu.run(fuel);
  };

  struct Node {
    std::vector<uint64_t> flips;
    std::vector<uint64_t> cmovs;
    std::string sig;
  };

  ExitReason exit = run_with({});
  std::set<uint64_t> discovered;
  for (uint64_t b : visited_bodies(mf, emu.trace())) discovered.insert(b);
  rep.baseline_blocks = discovered.size();

  std::deque<Node> queue;
  queue.push_back({{}, cmov_events(emu.trace()), run_signature(emu, exit)});

  while (!queue.empty() && rep.budget_used < budget) {
    Node node = std::move(queue.front());
    queue.pop_front();
    uint64_t floor = node.flips.empty() ? 0 : node.flips.back() + 1;

    for (uint64_t ev : node.cmovs) {
      if (ev < floor) continue;
      if (rep.budget_used >= budget) break;
      rep.budget_used++;

      std::vector<uint64_t> flips = node.flips;
      flips.push_back(ev);
      ExitReason r = run_with(flips);

      FlipRecord rec;
      rec.flips = flips;
      rec.exit = exit_reason_name(r);
      for (uint64_t b : visited_bodies(mf, emu.trace()))
        if (discovered.insert(b).second) rec.found.push_back(b);

      if (!rec.found.empty()) {
        rec.outcome = "new_block";
        rep.new_block_flips++;
        queue.push_back(
            {flips, cmov_events(emu.trace()), run_signature(emu, r)});
      } else if (faulted(r)) {
        rec.outcome = "fault";
        rep.fault_flips++;
      } else if (run_signature(emu, r) != node.sig) {
        rec.outcome = "divergence";
        rep.divergence_flips++;
        queue.push_back(
            {flips, cmov_events(emu.trace()), run_signature(emu, r)});
      } else {
        rec.outcome = "no_effect";
        rep.no_effect_flips++;
      }
      rep.flips.push_back(std::move(rec));
    }
  }

  rep.budget_exhausted = !queue.empty() && rep.budget_used >= budget;
  rep.discovered.assign(discovered.begin(), discovered.end());
  return rep;
}

AttackReport scan_speculative(const ProgramImage& img,
                              const ManifestFunction& mf) {
  AttackReport rep;
  rep.mode = "scan";
  rep.function = mf.name;

  const ImgSection* chain = img.section("chain");
  const ImgSection* text = img.section("text");
  if (!chain || !text) fail(Errc::param, "image has no chain to scan");

  std::set<uint64_t> truth(mf.gadget_addrs.begin(), mf.gadget_addrs.end());
  rep.true_positions = truth.size();

  // Fresh machine state shared by every speculative run.
  Emulator emu(img);
  emu.setup_call(mf.entry, {});
  auto clean = emu.snapshot();

  constexpr size_t kWindow = 32;  // speculative bound per candidate
  for (uint64_t off = mf.chain_base; off + 8 <= mf.chain_end; off++) {
    rep.scanned_offsets++;
    uint64_t v = 0;
    for (int i = 7; i >= 0; i--)
      v = (v << 8) | chain->bytes[off + uint64_t(i) - chain->vaddr];
    if (v - kTextBase >= kTextSize) continue;

    ScanHit hit;
    hit.offset = off;
    hit.target = v;
    hit.true_gadget = truth.count(off) != 0;
    uint64_t pc = v;
    while (hit.decoded < kWindow && pc - text->vaddr < text->bytes.size()) {
      auto d = decode(text->bytes, pc - text->vaddr);
      if (!d) break;
      hit.decoded++;
      if (d->instr.op == Op::ret) {
        hit.ret_reached = true;
        break;
      }
      if (is_terminator(d->instr)) break;
      pc += d->length;
    }

    // Run the block as the chain would: rsp past the cell, rip at the value.
    emu.restore(*clean);
    emu.set_reg(Reg::rsp, off + 8);
    emu.set_rip(v);
    ExitReason r = ExitReason::running;
    while (hit.emu_steps < kWindow) {
      r = emu.step();
      hit.emu_steps++;
      if (r != ExitReason::running) break;
    }
    hit.emu_exit = exit_reason_name(r);

    if (hit.true_gadget) rep.true_hit++;
    rep.candidates.push_back(hit);
  }

  if (rep.true_positions)
    rep.candidate_ratio = double(rep.candidates.size()) /
                          double(rep.true_positions);
  return rep;
}

AttackReport explore_paths(const ProgramImage& img, const std::string& fn,
                           const std::vector<InputDomain>& domains,
                           size_t budget, uint64_t fuel) {
  AttackReport rep;
  rep.mode = "explore";
  rep.function = fn;
  rep.budget = budget;

  size_t nargs = 0;
  for (const InputDomain& d : domains) {
    if (d.hi < d.lo) fail(Errc::param, "empty input domain");
    nargs = std::max(nargs, d.arg + 1);
  }

  Emulator emu(img);
  uint64_t entry = img.symbol(fn);
  std::set<std::string> sigs;

  std::vector<uint64_t> cur;
  for (const InputDomain& d : domains) cur.push_back(d.lo);

  bool more = true;
  while (more && rep.runs < budget) {
    std::vector<uint64_t> args(nargs, 0);
    for (size_t i = 0; i < domains.size(); i++) args[domains[i].arg] = cur[i];

    emu.setup_call(entry, args);
    emu.set_flips({});
    ExitReason r = emu.run(fuel);
    rep.runs++;
    sigs.insert(path_signature(emu, r));

    if (domains.empty()) break;
    size_t i = domains.size();
    while (i-- > 0) {
      if (cur[i] != domains[i].hi) {
        cur[i]++;
        break;
      }
      cur[i] = domains[i].lo;
      if (i == 0) more = false;
    }
  }

  rep.budget_used = rep.runs;
  rep.path_count = sigs.size();
  rep.budget_exhausted = more && !domains.empty();
  return rep;
}

nlohmann::json attack_json(const AttackReport& r) {
  nlohmann::ordered_json j;
  j["mode"] = r.mode;
  j["function"] = r.function;
  if (r.mode == "flip") {
    j["budget"] = r.budget;
    j["budget_used"] = r.budget_used;
    j["budget_exhausted"] = r.budget_exhausted;
    j["blocks_total"] = r.total_blocks;
    j["blocks_baseline"] = r.baseline_blocks;
    j["blocks_discovered"] = r.discovered;
    j["outcomes"] = {{"new_block", r.new_block_flips},
                     {"fault", r.fault_flips},
                     {"divergence", r.divergence_flips},
                     {"no_effect", r.no_effect_flips}};
    nlohmann::ordered_json flips = nlohmann::ordered_json::array();
    size_t cap = std::min<size_t>(r.flips.size(), 256);
    for (size_t i = 0; i < cap; i++) {
      const FlipRecord& f = r.flips[i];
      flips.push_back({{"flips", f.flips},
                       {"outcome", f.outcome},
                       {"exit", f.exit},
                       {"found", f.found}});
    }
    j["flips"] = std::move(flips);
    j["flips_truncated"] = r.flips.size() > cap;
  } else if (r.mode == "scan") {
    j["scanned_offsets"] = r.scanned_offsets;
    j["candidates"] = r.candidates.size();
    j["true_positions"] = r.true_positions;
    j["true_hit"] = r.true_hit;
    j["candidate_ratio"] = r.candidate_ratio;
    nlohmann::ordered_json hits = nlohmann::ordered_json::array();
    size_t cap = std::min<size_t>(r.candidates.size(), 512);
    for (size_t i = 0; i < cap; i++) {
      const ScanHit& h = r.candidates[i];
      hits.push_back({{"offset", h.offset},
                      {"target", h.target},
                      {"decoded", h.decoded},
                      {"ret", h.ret_reached},
                      {"emu_steps", h.emu_steps},
                      {"emu_exit", h.emu_exit},
                      {"true_gadget", h.true_gadget}});
    }
    j["hits"] = std::move(hits);
    j["hits_truncated"] = r.candidates.size() > cap;
  } else {
    j["budget"] = r.budget;
    j["runs"] = r.runs;
    j["path_count"] = r.path_count;
    j["budget_exhausted"] = r.budget_exhausted;
  }
  return j;
}

}  // namespace rf

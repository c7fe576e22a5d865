#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "isa.hpp"
#include "layout.hpp"

namespace rf {

// A chain is a byte region popped by rets. Most positions hold one of:
//   gadget  - text address of a pool gadget (stored as pool id until layout)
//   imm     - literal data consumed by a pop
//   label   - chain-position reference, resolved during layout
//   slot    - runtime scratch; initial content is seeded junk
enum class ItemKind : uint8_t { gadget, imm, label, slot };

struct LabelRef {
  uint32_t id = 0;
  int64_t addend = 0;
  // With an anchor label the item resolves to target+addend-anchor: the
  // rsp-relative deltas that dispatch adds to rsp. 0 means absolute.
  uint32_t anchor = 0;
  // Confusion: resolved value additionally carries kConfusionBias.
  bool biased = false;
};

struct ChainItem {
  ItemKind kind = ItemKind::imm;
  uint64_t value = 0;  // imm value, or gadget id before layout
  LabelRef ref;        // label target; also carries `biased` for imm/gadget
  uint8_t gap_after = 0;   // junk bytes inserted after this item (eta)
  bool no_confuse = false;  // flag state is in flight over this value
  std::string note;
};

inline ChainItem item_gadget(size_t id, std::string note = {}) {
  ChainItem it;
  it.kind = ItemKind::gadget;
  it.value = id;
  it.note = std::move(note);
  return it;
}

inline ChainItem item_imm(uint64_t v, std::string note = {}) {
  ChainItem it;
  it.kind = ItemKind::imm;
  it.value = v;
  it.note = std::move(note);
  return it;
}

inline ChainItem item_label(LabelRef r, std::string note = {}) {
  ChainItem it;
  it.kind = ItemKind::label;
  it.ref = r;
  it.note = std::move(note);
  return it;
}

inline ChainItem item_slot(std::string note = {}) {
  ChainItem it;
  it.kind = ItemKind::slot;
  it.note = std::move(note);
  return it;
}

struct ChainPos {
  size_t block = 0;
  size_t item = 0;
};

// One conditional or unconditional transfer inside a chain, recorded for the
// manifest and for layout relaxation.
struct BranchSite {
  size_t block = 0;       // source block index
  size_t item_index = 0;  // first item of the dispatch template
  size_t item_count = 0;
  bool conditional = false;
  bool removable = false;  // plain uncond template; layout may elide it
  Cond cc = Cond::e;
  uint32_t target_label = 0;
  bool hardened = false;  // opaque-array dispatch instead of plain template
};

// Opaque array instance. Cell/table addresses are fixed at creation time so
// chain immediates can refer to them; the materializer fills the bytes.
// Invariant: for b < n, every cell at index b + j*s holds residue_of(b)
// mod m, and every cell value stays below kArrayCellBound forever.
struct ArraySpec {
  uint64_t inst_seed = 0;
  int n = 0, s = 0, p = 0, m = 0;
  uint64_t cells_addr = 0;   // s*p u64 cells
  uint64_t modtab_addr = 0;  // kArrayModTabEntries u64 entries, v -> v mod m
};

inline constexpr uint64_t kArrayCellBound = 256;
inline constexpr uint64_t kArrayModTabEntries = 512;  // covers two-cell sums
inline constexpr int kArrayMaxM = 63;  // keeps re-based cells under the bound

uint64_t residue_of(const ArraySpec& a, int b);

// Indirect-jump dispatch through the data mirror: signed width-byte entries
// at mirror(T) hold (target chain addr - anchor)/8 for each table target T.
struct SwitchSite {
  size_t block = 0;
  int width = 1;  // 1, 2 or 4
  uint32_t anchor_label = 0;
  std::vector<std::pair<uint64_t, uint32_t>> targets;  // text addr -> label
};

struct ChainBlock {
  size_t block_id = 0;
  std::vector<ChainItem> items;
  // Items [0, prologue_items) belong to the edge-integrity prologue; the
  // manifest block start is the first item after them.
  size_t prologue_items = 0;
};

struct FunctionChain {
  std::string name;
  std::vector<ChainBlock> blocks;  // cfg order; cond fallthrough is adjacent
  std::unordered_map<uint32_t, ChainPos> labels;
  std::vector<BranchSite> branches;
  std::vector<SwitchSite> switches;
  std::vector<ArraySpec> arrays;
  uint32_t next_label = 1;

  uint32_t new_label() { return next_label++; }
  void bind(uint32_t id, size_t block, size_t item) { labels[id] = {block, item}; }
};

enum class P3Mode { none, for_loop, array };

struct ObfConfig {
  uint64_t seed = 1;
  bool p1 = false;
  bool p2 = false;
  P3Mode p3 = P3Mode::none;
  bool confusion = false;
  int eta_max = 16;   // junk gap bound in bytes; active with `confusion`
  int p3_sites = 2;   // per-function insertion budget
  int n = 4, s = 4, p = 32, m = 13;
  double k = 0.25;    // share of unconditional transfers also array-hardened
  std::vector<std::string> only;  // translate just these functions if nonempty

  void validate() const;  // Errc::param on nonsense
  bool wants(const std::string& fn) const;
};

// Per-function crafting statistics for the run report.
struct CraftStats {
  size_t roplets = 0;
  size_t items = 0;
  size_t distinct_gadgets = 0;
  size_t p1_applied = 0, p1_fallback = 0;
  size_t p2_edges = 0, p2_skipped = 0;
  size_t p3_inserted = 0;
  size_t confused_imms = 0, mask_gadgets = 0, eta_gaps = 0, decoys = 0;
  size_t native_bytes = 0;
};

struct CraftedFunction {
  FunctionChain chain;
  CraftStats stats;
};

struct CraftedProgram {
  std::vector<CraftedFunction> funcs;        // translated
  std::vector<std::string> untranslated;     // left native, with reasons
  std::vector<std::string> untranslated_why;
  uint64_t dyn_cursor = kDynDataAddr;        // array allocation watermark
};

}  // namespace rf

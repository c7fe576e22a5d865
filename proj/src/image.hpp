#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace rf {

struct ImgSection {
  std::string name;  // stored as 8 bytes, zero padded
  uint64_t vaddr = 0;
  std::vector<uint8_t> bytes;
};

// A runnable program image: text (function bodies and gadgets), data
// (globals, stack-switching array, opaque arrays, reverse jump tables) and
// chain (crafted chains). Symbols name function entries, chain starts
// ("fn.chain"), globals and the internal data structures.
struct ProgramImage {
  std::vector<ImgSection> sections;
  std::map<std::string, uint64_t> symbols;

  const ImgSection* section(const std::string& name) const {
    for (const auto& s : sections)
      if (s.name == name) return &s;
    return nullptr;
  }
  ImgSection* section(const std::string& name) {
    for (auto& s : sections)
      if (s.name == name) return &s;
    return nullptr;
  }
  uint64_t symbol(const std::string& name) const;
  bool has_symbol(const std::string& name) const { return symbols.count(name) != 0; }
};

// File format: magic "ROPI", version u32 LE, section count u32 LE, section
// records (name 8 bytes zero padded, vaddr u64, size u64, file offset u64),
// symbol table (count u32, entries of u32 name length + bytes + u64 addr),
// then the raw section bytes at their recorded offsets.
inline constexpr uint32_t kImageVersion = 1;

std::vector<uint8_t> save_image(const ProgramImage& img);
ProgramImage load_image(std::span<const uint8_t> bytes);

void write_image_file(const ProgramImage& img, const std::string& path);
ProgramImage load_image_file(const std::string& path);

}  // namespace rf

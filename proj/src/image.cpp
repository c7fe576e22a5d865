#include "image.hpp"

#include <cstdio>
#include <cstring>

#include "error.hpp"
#include "layout.hpp"

namespace rf {

namespace {

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(uint8_t(v >> (8 * i)));
}

void put_u64(std::vector<uint8_t>& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(uint8_t(v >> (8 * i)));
}

struct Reader {
  std::span<const uint8_t> b;
  size_t p = 0;
  void need(size_t n) {
    if (p + n > b.size()) fail(Errc::format, "truncated image");
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(b[p++]) << (8 * i);
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(b[p++]) << (8 * i);
    return v;
  }
};

}  // namespace

uint64_t ProgramImage::symbol(const std::string& name) const {
  auto it = symbols.find(name);
  if (it == symbols.end()) fail(Errc::format, "unknown symbol '" + name + "'");
  return it->second;
}

std::vector<uint8_t> save_image(const ProgramImage& img) {
  std::vector<uint8_t> out;
  out.insert(out.end(), {'R', 'O', 'P', 'I'});
  put_u32(out, kImageVersion);
  put_u32(out, uint32_t(img.sections.size()));

  size_t header_end = out.size() + img.sections.size() * 32;
  {
    size_t symtab = 4;
    for (const auto& [name, addr] : img.symbols) symtab += 4 + name.size() + 8;
    header_end += symtab;
  }

  uint64_t file_off = header_end;
  for (const auto& s : img.sections) {
    char name[8] = {};
    memcpy(name, s.name.data(), std::min<size_t>(8, s.name.size()));
    out.insert(out.end(), name, name + 8);
    put_u64(out, s.vaddr);
    put_u64(out, s.bytes.size());
    put_u64(out, file_off);
    file_off += s.bytes.size();
  }

  put_u32(out, uint32_t(img.symbols.size()));
  for (const auto& [name, addr] : img.symbols) {
    put_u32(out, uint32_t(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put_u64(out, addr);
  }

  for (const auto& s : img.sections) out.insert(out.end(), s.bytes.begin(), s.bytes.end());
  return out;
}

ProgramImage load_image(std::span<const uint8_t> bytes) {
  Reader r{bytes};
  r.need(4);
  if (memcmp(bytes.data(), "ROPI", 4) != 0) fail(Errc::format, "bad image magic");
  r.p = 4;
  uint32_t version = r.u32();
  if (version != kImageVersion)
    fail(Errc::format, "unsupported image version " + std::to_string(version));
  uint32_t nsec = r.u32();
  if (nsec > 64) fail(Errc::format, "implausible section count");

  struct Rec {
    std::string name;
    uint64_t vaddr, size, off;
  };
  std::vector<Rec> recs;
  for (uint32_t i = 0; i < nsec; ++i) {
    r.need(8);
    char name[9] = {};
    memcpy(name, bytes.data() + r.p, 8);
    r.p += 8;
    Rec rec;
    rec.name = name;
    rec.vaddr = r.u64();
    rec.size = r.u64();
    rec.off = r.u64();
    recs.push_back(std::move(rec));
  }

  ProgramImage img;
  uint32_t nsym = r.u32();
  for (uint32_t i = 0; i < nsym; ++i) {
    uint32_t len = r.u32();
    if (len > 4096) fail(Errc::format, "implausible symbol name length");
    r.need(len);
    std::string name(reinterpret_cast<const char*>(bytes.data() + r.p), len);
    r.p += len;
    img.symbols[name] = r.u64();
  }

  for (const auto& rec : recs) {
    if (rec.off + rec.size > bytes.size()) fail(Errc::format, "section exceeds file size");
    ImgSection s;
    s.name = rec.name;
    s.vaddr = rec.vaddr;
    s.bytes.assign(bytes.begin() + rec.off, bytes.begin() + rec.off + rec.size);
    img.sections.push_back(std::move(s));
  }

  // Stack-switching bookkeeping must start empty.
  if (const ImgSection* d = img.section("data")) {
    if (kSsAddr >= d->vaddr && kSsAddr + 8 <= d->vaddr + d->bytes.size()) {
      uint64_t cell0 = 0;
      for (int i = 0; i < 8; ++i) cell0 |= uint64_t(d->bytes[kSsAddr - d->vaddr + i]) << (8 * i);
      if (cell0 != 0) fail(Errc::format, "ss cell 0 not zero at load");
    }
  }
  return img;
}

void write_image_file(const ProgramImage& img, const std::string& path) {
  std::vector<uint8_t> bytes = save_image(img);
  FILE* f = fopen(path.c_str(), "wb");
  if (!f) fail(Errc::io, "cannot open '" + path + "' for writing");
  size_t n = fwrite(bytes.data(), 1, bytes.size(), f);
  fclose(f);
  if (n != bytes.size()) fail(Errc::io, "short write to '" + path + "'");
}

ProgramImage load_image_file(const std::string& path) {
  FILE* f = fopen(path.c_str(), "rb");
  if (!f) fail(Errc::io, "cannot open '" + path + "'");
  std::vector<uint8_t> bytes;
  uint8_t buf[65536];
  size_t n;
  while ((n = fread(buf, 1, sizeof buf, f)) > 0) bytes.insert(bytes.end(), buf, buf + n);
  fclose(f);
  return load_image(bytes);
}

}  // namespace rf

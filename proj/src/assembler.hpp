#pragma once

#include <string_view>

#include "program.hpp"

namespace rf {

// Assembles a full program: parses, lays out functions from kTextBase and
// globals/address tables from kGlobalsAddr, and resolves every symbolic
// reference (jump/call targets to absolute addresses, named globals to
// rip-relative displacements). Throws Error(Errc::syntax) with a line number
// for malformed input or unresolved names.
Program assemble(std::string_view source);

// Encodes one function body exactly as laid out.
std::vector<uint8_t> encode_function(const Function& fn);

// Linear disassembly of an encoded range, one instruction per line
// ("0xADDR: text"). Stops at the first invalid byte, reporting it.
std::string disassemble_range(std::span<const uint8_t> bytes, uint64_t base);

}  // namespace rf

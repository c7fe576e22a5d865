#pragma once

#include <stdexcept>
#include <string>

namespace rf {

enum class Errc {
  syntax,
  cfg_incomplete,
  untranslatable,
  no_gadget,
  register_pressure,
  width,
  layout,
  stub_too_large,
  param,
  format,
  io,
  emu,
  internal,
};

const char* errc_name(Errc c);

struct Error : std::runtime_error {
  Errc code;
  Error(Errc c, const std::string& msg) : std::runtime_error(msg), code(c) {}
};

[[noreturn]] inline void fail(Errc c, const std::string& msg) { throw Error(c, msg); }

}  // namespace rf

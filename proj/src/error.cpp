#include "error.hpp"

namespace rf {

const char* errc_name(Errc c) {
  switch (c) {
    case Errc::syntax: return "SyntaxError";
    case Errc::cfg_incomplete: return "CfgIncomplete";
    case Errc::untranslatable: return "Untranslatable";
    case Errc::no_gadget: return "NoGadget";
    case Errc::register_pressure: return "RegisterPressure";
    case Errc::width: return "WidthError";
    case Errc::layout: return "LayoutError";
    case Errc::stub_too_large: return "StubTooLarge";
    case Errc::param: return "ParamError";
    case Errc::format: return "FormatError";
    case Errc::io: return "IoError";
    case Errc::emu: return "EmuFault";
    case Errc::internal: return "InternalError";
  }
  return "UnknownError";
}

}  // namespace rf

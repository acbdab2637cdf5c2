#include "maskbench/error.hpp"

namespace maskbench {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::format: return "format";
    case ErrorKind::unsupported: return "unsupported";
    case ErrorKind::io: return "io";
    case ErrorKind::precondition: return "precondition";
    case ErrorKind::config: return "config";
    case ErrorKind::shape: return "shape";
    case ErrorKind::undefined_reference: return "undefined-reference";
    case ErrorKind::input: return "input";
    case ErrorKind::corruption: return "corruption";
    case ErrorKind::data: return "data";
    case ErrorKind::alignment: return "alignment";
    case ErrorKind::divergence: return "divergence";
    case ErrorKind::silence: return "silence";
  }
  return "unknown";
}

}  // namespace maskbench

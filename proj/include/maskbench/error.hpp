#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace maskbench {

enum class ErrorKind {
  format,
  unsupported,
  io,
  precondition,
  config,
  shape,
  undefined_reference,
  input,
  corruption,
  data,
  alignment,
  divergence,
  silence,
};

std::string_view to_string(ErrorKind kind);

/// Single exception type for the library; `kind()` lets callers map to exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) throw Error(kind, what);
}

}  // namespace maskbench

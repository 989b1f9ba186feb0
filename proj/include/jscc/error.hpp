#pragma once

#include <stdexcept>
#include <string>

namespace jscc {

enum class ErrorKind {
  kInvalidArgument,
  kShapeMismatch,
  kIo,
  kFormat,
  kConfig,
  kPrecondition,
  kDivergence,
};

/// Every failure raised by the library carries a kind so that the CLI can
/// map it onto an exit code without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool condition, ErrorKind kind, const std::string& what) {
  if (!condition) fail(kind, what);
}

}  // namespace jscc

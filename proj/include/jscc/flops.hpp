#pragma once

#include <cstdint>

namespace jscc {

/// Multiply–accumulate tally filled in by the layers while a MacScope is
/// alive on the current thread. Layers report analytically from their input
/// and output shapes, so counting is independent of the kernels used.
class MacScope {
 public:
  MacScope();
  ~MacScope();
  MacScope(const MacScope&) = delete;
  MacScope& operator=(const MacScope&) = delete;

  int64_t macs() const { return macs_; }

  static void add(int64_t macs);

 private:
  int64_t macs_ = 0;
  MacScope* previous_ = nullptr;
};

}  // namespace jscc

#pragma once

#include <array>
#include <cstdint>

namespace jscc {

/// Every width used by the networks. Defaults are the desk-scale table
/// documented in docs/architecture.md.
struct ArchTable {
  int64_t latent_channels = 64;     // frame latent C
  int64_t mv_latent_channels = 64;  // motion latent C_mv
  int64_t feature_channels = 48;    // propagated feature C_f; contexts are C_f, 2C_f, 4C_f
  std::array<int64_t, 3> frame_widths{48, 64, 96};  // analysis stages at 1/2, 1/4, 1/8
  std::array<int64_t, 3> mv_widths{32, 48, 64};
  int64_t hyper_channels = 16;  // hyper-latent width at 1/64
  int64_t entropy_width = 64;   // hyper-decoder / context-model feature width
  int64_t temporal_prior_channels = 64;
  int64_t offset_groups = 4;
  int64_t offset_hidden = 32;
  int64_t flow_hidden = 32;
  int64_t flow_levels = 3;
  int64_t policy_hidden = 32;

  bool operator==(const ArchTable&) const = default;
};

}  // namespace jscc

#pragma once

#include <filesystem>
#include <string>

#include <gtest/gtest.h>

#include "jscc/architecture.hpp"

namespace jscc::testing {

/// Small widths that keep every test well under a second per forward pass.
inline ArchTable compact_arch() {
  ArchTable a;
  a.latent_channels = 32;
  a.mv_latent_channels = 16;
  a.feature_channels = 16;
  a.frame_widths = {24, 32, 48};
  a.mv_widths = {8, 16, 16};
  a.hyper_channels = 8;
  a.entropy_width = 32;
  a.temporal_prior_channels = 16;
  a.offset_groups = 2;
  a.offset_hidden = 16;
  a.flow_hidden = 16;
  a.policy_hidden = 16;
  return a;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    std::string name = "jscc_" + tag;
    if (info) name += std::string("_") + info->test_suite_name() + "_" + info->name();
    path_ = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace jscc::testing

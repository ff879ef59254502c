#pragma once

#include <gtest/gtest.h>

#include <cstdint>
#include <filesystem>
#include <string>

#include "oracles.hpp"
#include "scarbench/error.hpp"

namespace scarbench::testing {

// Asserts that `stmt` throws scarbench::Error with the given code.
#define EXPECT_ERRC(stmt, errc)                                                   \
  do {                                                                            \
    try {                                                                         \
      stmt;                                                                       \
      ADD_FAILURE() << "expected " << ::scarbench::to_string(errc) << " from " #stmt; \
    } catch (const ::scarbench::Error& e__) {                                     \
      EXPECT_EQ(e__.code(), errc) << e__.what();                                  \
    }                                                                             \
  } while (0)

/// Fresh per-test scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
  auto dir = std::filesystem::temp_directory_path() / "scarbench_tests" /
             (std::string(info->test_suite_name()) + "." + info->name() + "." + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace scarbench::testing

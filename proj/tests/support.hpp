// Copyright 2026 The qcg Authors
// SPDX-License-Identifier: Apache-2.0

// Helpers shared by the unit tests and the acceptance binary.

#pragma once

#include <unistd.h>

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "qcg/model.hpp"
#include "qcg/numerics.hpp"

namespace qcg::testing {

/// `count` sequences of `length` uniformly drawn tokens.
inline std::vector<std::vector<Token>> random_sequences(std::size_t count, std::size_t length, std::size_t vocab,
                                                        std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<Token>> out(count);
  for (auto& s : out)
    for (std::size_t i = 0; i < length; ++i) s.push_back(static_cast<Token>(rng.uniform_int(vocab)));
  return out;
}

/// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("qcg-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string operator/(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

}  // namespace qcg::testing

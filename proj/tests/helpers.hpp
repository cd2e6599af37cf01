#pragma once

#include "sd2/autodiff.hpp"
#include "sd2/rng.hpp"

#include <filesystem>
#include <unistd.h>
#include <string>
#include <vector>

namespace sd2::test {

inline ad::Tensor random_tensor(ad::Index rows, ad::Index cols, std::uint64_t seed, double scale = 1.0) {
  RngStream rng(seed, "test_tensor");
  ad::Tensor t(rows, cols);
  for (ad::Index i = 0; i < t.size(); ++i) t.data()[i] = scale * rng.normal();
  return t;
}

inline ad::Tensor column(std::vector<double> v) {
  ad::Tensor t(static_cast<ad::Index>(v.size()), 1);
  for (std::size_t i = 0; i < v.size(); ++i) t(static_cast<ad::Index>(i), 0) = v[i];
  return t;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("sd2_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace sd2::test


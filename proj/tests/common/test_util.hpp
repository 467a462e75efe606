#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "sbl/geometry.hpp"

namespace sbl::prop {

/// Seeded generator shared by the property tests.
class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
  bool coin() { return integer(0, 1) == 1; }

  Box box(double extent = 100.0, double min_size = 1.0, double max_size = 40.0) {
    const double w = uniform(min_size, max_size);
    const double h = uniform(min_size, max_size);
    const double x = uniform(0.0, extent - w);
    const double y = uniform(0.0, extent - h);
    return {x, y, x + w, y + h};
  }

  /// Box near `ref`, so overlaps are common.
  Box jitter(const Box& ref, double amount) {
    return {ref.x_min + uniform(-amount, amount), ref.y_min + uniform(-amount, amount),
            ref.x_max + uniform(0.0, amount), ref.y_max + uniform(0.0, amount)};
  }

  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("sbl_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace sbl::prop

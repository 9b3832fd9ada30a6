#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cx/ingest.hpp"
#include "cx/random.hpp"

namespace cx::testing {

struct LabeledMatrix {
  EmbeddingMatrix matrix;
  std::vector<int> labels;
};

/// Three Gaussian clusters in `dims` dimensions. Each cluster is a random
/// 3-dimensional Gaussian sheet around its center plus small isotropic noise,
/// the low intrinsic dimension typical of text-embedding neighborhoods.
inline LabeledMatrix three_gaussians(std::size_t n = 3000, std::size_t dims = 64, std::uint64_t seed = 7) {
  constexpr std::size_t kLatent = 3;
  Rng rng(seed);
  std::vector<std::vector<double>> centers(3, std::vector<double>(dims));
  std::vector<std::vector<double>> basis(3, std::vector<double>(dims * kLatent));
  for (int c = 0; c < 3; ++c) {
    for (auto& v : centers[c]) v = 1.0 * rng.normal();
    for (auto& v : basis[c]) v = 1.2 * rng.normal() / std::sqrt(static_cast<double>(dims));
  }
  LabeledMatrix out{EmbeddingMatrix(n, dims), std::vector<int>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    const int c = static_cast<int>(i * 3 / n);
    out.labels[i] = c;
    double z[kLatent];
    for (auto& v : z) v = rng.normal();
    auto row = out.matrix.row(i);
    for (std::size_t d = 0; d < dims; ++d) {
      double v = centers[c][d] + 0.02 * rng.normal();
      for (std::size_t l = 0; l < kLatent; ++l) v += basis[c][d * kLatent + l] * z[l];
      row[d] = static_cast<float>(v);
    }
  }
  return out;
}

/// Isotropic standard normal rows (no cluster structure, full intrinsic dimension).
inline EmbeddingMatrix gaussian_noise(std::size_t n, std::size_t dims, std::uint64_t seed) {
  Rng rng(seed);
  EmbeddingMatrix m(n, dims);
  for (auto& v : m.data) v = static_cast<float>(rng.normal());
  return m;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("cx_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace cx::testing

#pragma once

#include "carrierscope/store.hpp"
#include "carrierscope/types.hpp"

#include <Eigen/QR>

#include <unistd.h>

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace testutil {

using carrierscope::ActivationField;
using carrierscope::Mat;
using carrierscope::Vec;

// Self-cleaning scratch directory; tests never share one.
struct TempDir {
  std::filesystem::path path;

  explicit TempDir(const std::string& tag) {
    static std::atomic<unsigned> counter{0};
    path = std::filesystem::temp_directory_path() /
           ("carrierscope_" + tag + "_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter++));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

inline Mat random_matrix(std::mt19937_64& rng, int rows, int cols) {
  std::normal_distribution<double> g(0.0, 1.0);
  Mat m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = g(rng);
  return m;
}

inline Vec random_unit(std::mt19937_64& rng, int dim) {
  Vec v = random_matrix(rng, dim, 1);
  return v / v.norm();
}

// Orthonormal dim x k via QR of a Gaussian draw.
inline Mat random_orthonormal(std::mt19937_64& rng, int dim, int k) {
  const Mat m = random_matrix(rng, dim, k);
  Eigen::HouseholderQR<Mat> qr(m);
  Mat q = qr.householderQ() * Mat::Identity(dim, k);
  return q;
}

// Field whose state at (e, p, l) is produced by a caller-supplied generator.
template <typename Fn>
ActivationField make_field(int examples, const std::vector<int>& offsets,
                           int layers, int dim, Fn&& state_of) {
  ActivationField f;
  f.examples = examples;
  f.positions = static_cast<int>(offsets.size());
  f.layers = layers;
  f.dim = dim;
  f.position_offsets = offsets;
  f.data.resize(static_cast<std::size_t>(examples) * f.positions * layers * dim);
  for (int e = 0; e < examples; ++e)
    for (int p = 0; p < f.positions; ++p)
      for (int l = 0; l < layers; ++l) {
        const Vec s = state_of(e, p, l);
        for (int d = 0; d < dim; ++d)
          f.data[f.flat_index(e, p, l, d)] = static_cast<float>(s[d]);
      }
  return f;
}

}  // namespace testutil

#pragma once

#include "carrierscope/carriers.hpp"
#include "carrierscope/types.hpp"

#include <cmath>

namespace carrierscope {

inline constexpr double kSpectrumEpsilon = 1e-12;
// Numerical rank keeps sigma_i strictly above this fraction of sigma_1, so a
// zero matrix has rank 0 and comparisons shrink instead of padding.
inline constexpr double kRankThresholdRatio = 1e-10;

// q_i = sigma_i^2 / sum_j sigma_j^2; an all-zero spectrum maps to all-zero q.
template <typename Derived>
VecX<typename Derived::Scalar> normalized_energies(
    const Eigen::MatrixBase<Derived>& singular_values) {
  using Scalar = typename Derived::Scalar;
  VecX<Scalar> q = singular_values.derived().array().square();
  const Scalar total = q.sum();
  if (total > Scalar(0)) {
    q /= total;
  } else {
    q.setZero();
  }
  return q;
}

// exp of the Shannon entropy of the normalized energies.
template <typename Derived>
typename Derived::Scalar effective_rank(
    const Eigen::MatrixBase<Derived>& singular_values,
    typename Derived::Scalar eps = typename Derived::Scalar(kSpectrumEpsilon)) {
  using Scalar = typename Derived::Scalar;
  const VecX<Scalar> q = normalized_energies(singular_values);
  Scalar entropy = Scalar(0);
  for (Index i = 0; i < q.size(); ++i) {
    entropy -= q[i] * std::log(q[i] + eps);
  }
  return std::exp(entropy);
}

// (sum sigma^2)^2 / (sum sigma^4 + eps), a second-moment dimensionality proxy.
template <typename Derived>
typename Derived::Scalar participation_ratio(
    const Eigen::MatrixBase<Derived>& singular_values,
    typename Derived::Scalar eps = typename Derived::Scalar(kSpectrumEpsilon)) {
  using Scalar = typename Derived::Scalar;
  const auto s2 = singular_values.derived().array().square();
  const Scalar second = s2.sum();
  const Scalar fourth = s2.square().sum();
  return second * second / (fourth + eps);
}

// Smallest k (1-based) whose cumulative normalized energy reaches `fraction`;
// 0 if the spectrum never gets there (only possible when all sigma are 0).
template <typename Derived>
int min_k_for_energy(const Eigen::MatrixBase<Derived>& singular_values,
                     double fraction) {
  using Scalar = typename Derived::Scalar;
  const VecX<Scalar> q = normalized_energies(singular_values);
  Scalar cumulative = Scalar(0);
  for (Index i = 0; i < q.size(); ++i) {
    cumulative += q[i];
    if (static_cast<double>(cumulative) >= fraction) {
      return static_cast<int>(i) + 1;
    }
  }
  return 0;
}

struct SpectrumSummary {
  int checkpoint = 0;
  Vec singular_values;  // descending, nonnegative
  Vec energies;         // q_i, sums to 1 when any sigma > 0
  int k90 = 0;
  int k95 = 0;
  int k_report = 3;
  double topk_energy = 0.0;  // cumulative q over the first k_report values
  double erank = 1.0;
  double participation_ratio = 0.0;
  double epsilon = kSpectrumEpsilon;
};

struct PrincipalAngleReport {
  int checkpoint = 0;
  int reference_checkpoint = 0;
  int k = 3;            // configured comparison width
  int effective_k = 0;  // width actually compared (min of the basis widths)
  Vec angles_deg;       // ascending, each in [0, 90]
};

// One row per grid site in canonical order (offsets ascending, then layers),
// columns = hidden dims.
Mat flatten_field(const CandidateLibrary& library);

SpectrumSummary singular_spectrum(const Eigen::Ref<const Mat>& r,
                                  int k_report = 3);

// Top-k right singular vectors as columns, sign-fixed so each column's
// largest-magnitude component is positive. Width shrinks to the numerical
// rank; a zero matrix yields a dim x 0 basis.
Mat topk_subspace(const Eigen::Ref<const Mat>& r, int k);

// Canonical angles between the two column spans, from the SVD of
// reference^T * current with a sine-path refinement that keeps angles near 0
// accurate to machine precision. Both inputs must be orthonormal within 1e-8.
PrincipalAngleReport principal_angles(const Eigen::Ref<const Mat>& current,
                                      const Eigen::Ref<const Mat>& reference,
                                      int k = 3);

}  // namespace carrierscope

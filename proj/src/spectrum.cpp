#include "carrierscope/spectrum.hpp"

#include "carrierscope/errors.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <numbers>
#include <string>

namespace carrierscope {

Mat flatten_field(const CandidateLibrary& library) {
  if (!library.frozen) {
    throw ValidationError("spectrum: cannot flatten an unfrozen library");
  }
  if (library.items.empty()) return Mat(0, 0);
  const Index dim = library.items.front().vector.size();
  Mat r(static_cast<Index>(library.items.size()), dim);
  for (std::size_t i = 0; i < library.items.size(); ++i) {
    const auto& item = library.items[i];
    if (item.vector.size() != dim) {
      throw ValidationError("spectrum: ragged candidate dimensions");
    }
    r.row(static_cast<Index>(i)) = item.vector.transpose();
  }
  return r;
}

SpectrumSummary singular_spectrum(const Eigen::Ref<const Mat>& r,
                                  int k_report) {
  if (!r.allFinite()) {
    throw ValidationError("spectrum: matrix has non-finite entries");
  }
  if (k_report < 1) {
    throw ValidationError("spectrum: k_report must be at least 1");
  }
  SpectrumSummary out;
  out.k_report = k_report;
  if (r.size() == 0) {
    out.singular_values = Vec(0);
    out.energies = Vec(0);
    return out;
  }
  Eigen::JacobiSVD<Mat> svd(r);
  out.singular_values = svd.singularValues();
  out.energies = normalized_energies(out.singular_values);
  out.k90 = min_k_for_energy(out.singular_values, 0.90);
  out.k95 = min_k_for_energy(out.singular_values, 0.95);
  const Index take = std::min<Index>(k_report, out.energies.size());
  out.topk_energy = out.energies.head(take).sum();
  out.erank = effective_rank(out.singular_values);
  out.participation_ratio = participation_ratio(out.singular_values);
  return out;
}

namespace {

// Largest-magnitude component positive; ties resolved to the first index by
// Eigen's visitor traversal order.
void fix_column_signs(Mat& basis) {
  for (Index j = 0; j < basis.cols(); ++j) {
    Index idx = 0;
    basis.col(j).cwiseAbs().maxCoeff(&idx);
    if (basis(idx, j) < 0.0) basis.col(j) = -basis.col(j);
  }
}

}  // namespace

Mat topk_subspace(const Eigen::Ref<const Mat>& r, int k) {
  if (k < 1) {
    throw ValidationError("spectrum: subspace width must be at least 1");
  }
  if (!r.allFinite()) {
    throw ValidationError("spectrum: matrix has non-finite entries");
  }
  if (r.size() == 0) return Mat(r.cols(), 0);
  Eigen::JacobiSVD<Mat> svd(r, Eigen::ComputeThinV);
  const Vec& sv = svd.singularValues();
  const double cutoff = kRankThresholdRatio * (sv.size() > 0 ? sv[0] : 0.0);
  Index rank = 0;
  while (rank < sv.size() && sv[rank] > cutoff) ++rank;
  const Index width = std::min<Index>(k, rank);
  Mat basis = svd.matrixV().leftCols(width);
  fix_column_signs(basis);
  return basis;
}

PrincipalAngleReport principal_angles(const Eigen::Ref<const Mat>& current,
                                      const Eigen::Ref<const Mat>& reference,
                                      int k) {
  if (current.rows() != reference.rows()) {
    throw ValidationError("spectrum: bases live in different ambient spaces");
  }
  const auto check_orthonormal = [](const Eigen::Ref<const Mat>& basis,
                                    const char* name) {
    if (basis.cols() == 0) return;
    const Mat gram = basis.transpose() * basis;
    const double deviation =
        (gram - Mat::Identity(basis.cols(), basis.cols()))
            .cwiseAbs()
            .maxCoeff();
    if (deviation > 1e-8) {
      throw ValidationError(std::string("spectrum: ") + name +
                            " basis is not orthonormal (deviation " +
                            std::to_string(deviation) + ")");
    }
  };
  check_orthonormal(current, "current");
  check_orthonormal(reference, "reference");

  PrincipalAngleReport report;
  report.k = k;
  report.effective_k =
      static_cast<int>(std::min(current.cols(), reference.cols()));
  if (report.effective_k == 0) {
    report.angles_deg = Vec(0);
    return report;
  }
  // Cosine-sine hybrid: arccos of the overlap singular values loses half the
  // significant digits near 0 degrees, so small angles come from the sines,
  // i.e. the singular values of the projection residual of the narrower
  // basis. Both paths measure the same canonical angles.
  const bool current_narrow = current.cols() <= reference.cols();
  const Eigen::Ref<const Mat>& a = current_narrow ? current : reference;
  const Eigen::Ref<const Mat>& b = current_narrow ? reference : current;
  const Mat overlap = b.transpose() * a;
  const Mat residual = a - b * overlap;
  const Vec cosines = Eigen::JacobiSVD<Mat>(overlap).singularValues();
  const Vec sines = Eigen::JacobiSVD<Mat>(residual).singularValues();
  const Index ek = report.effective_k;
  report.angles_deg = Vec(ek);
  for (Index i = 0; i < ek; ++i) {
    const double c = std::clamp(cosines[i], 0.0, 1.0);
    const double s = std::clamp(sines[ek - 1 - i], 0.0, 1.0);
    const double rad = c * c >= 0.5 ? std::asin(s) : std::acos(c);
    report.angles_deg[i] = rad * 180.0 / std::numbers::pi;
  }
  std::sort(report.angles_deg.begin(), report.angles_deg.end());
  return report;
}

}  // namespace carrierscope

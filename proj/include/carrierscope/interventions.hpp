#pragma once

#include "carrierscope/carriers.hpp"
#include "carrierscope/errors.hpp"
#include "carrierscope/toymodel.hpp"
#include "carrierscope/types.hpp"

#include <string>

namespace carrierscope {

// ‖u‖ must be 1 within 1e-9.
template <typename Derived>
void require_unit_norm(const Eigen::MatrixBase<Derived>& u) {
  using std::abs;
  if (abs(u.derived().norm() - typename Derived::Scalar(1)) > 1e-9) {
    throw ValidationError("interventions: direction is not unit-norm");
  }
}

// UᵀU must equal I within 1e-8 (max deviation).
template <typename Derived>
void require_orthonormal(const Eigen::MatrixBase<Derived>& basis) {
  using Scalar = typename Derived::Scalar;
  if (basis.cols() == 0) return;
  const MatX<Scalar> gram = basis.derived().transpose() * basis.derived();
  const Scalar deviation =
      (gram - MatX<Scalar>::Identity(basis.cols(), basis.cols()))
          .cwiseAbs()
          .maxCoeff();
  if (deviation > Scalar(1e-8)) {
    throw ValidationError("interventions: basis is not orthonormal");
  }
}

// h - (h.u)u; output orthogonal to u, never longer than the input.
template <typename DerivedS, typename DerivedU>
VecX<typename DerivedS::Scalar> single_direction_ablation(
    const Eigen::MatrixBase<DerivedS>& state,
    const Eigen::MatrixBase<DerivedU>& u) {
  require_unit_norm(u);
  const typename DerivedS::Scalar coef = state.derived().dot(u.derived());
  return state.derived() - coef * u.derived();
}

// h - U Uᵀ h; removes the whole column span at once.
template <typename DerivedS, typename DerivedU>
VecX<typename DerivedS::Scalar> subspace_ablation(
    const Eigen::MatrixBase<DerivedS>& state,
    const Eigen::MatrixBase<DerivedU>& basis) {
  require_orthonormal(basis);
  const VecX<typename DerivedS::Scalar> coords =
      basis.derived().transpose() * state.derived();
  return state.derived() - basis.derived() * coords;
}

// h + c u. No unit requirement; c scales whatever is passed in.
template <typename DerivedS, typename DerivedU>
VecX<typename DerivedS::Scalar> activation_addition(
    const Eigen::MatrixBase<DerivedS>& state,
    const Eigen::MatrixBase<DerivedU>& u,
    typename DerivedS::Scalar coefficient) {
  return state.derived() + coefficient * u.derived();
}

// Row-wise batch forms: each row of `states` is one residual state.
template <typename Scalar>
void ablate_direction_rows(Eigen::Ref<MatX<Scalar>> states,
                           const VecX<Scalar>& u) {
  require_unit_norm(u);
  const VecX<Scalar> proj = states * u;
  states.noalias() -= proj * u.transpose();
}

template <typename Scalar>
void ablate_subspace_rows(Eigen::Ref<MatX<Scalar>> states,
                          const MatX<Scalar>& basis) {
  require_orthonormal(basis);
  if (basis.cols() == 0) return;
  const MatX<Scalar> coords = states * basis;
  states.noalias() -= coords * basis.transpose();
}

template <typename Scalar>
void add_direction_rows(Eigen::Ref<MatX<Scalar>> states, const VecX<Scalar>& u,
                        Scalar coefficient) {
  states.rowwise() += (coefficient * u).transpose();
}

enum class InterventionMode { SingleDirection, Top3Subspace, Addition };

std::string to_string(InterventionMode mode);
InterventionMode intervention_mode_from_string(const std::string& name);

struct InterventionSpec {
  InterventionMode mode = InterventionMode::SingleDirection;
  int layer = 0;
  Vec u;                     // single_direction and addition modes
  Mat basis;                 // top3_subspace mode, dim x k (k <= 3)
  double coefficient = 1.0;  // addition mode only
};

// Mode-specific shape and norm checks against a model's hidden width.
void validate_spec(const InterventionSpec& spec, int hidden_dim,
                   int layer_count);

// Layer hook applying the configured operator to every state row at
// spec.layer.
LayerHook make_hook(const InterventionSpec& spec);

// Measurable toy analogues of behavioral metrics: class-conditional mean
// projections on the refusal axis, plus distribution damage vs baseline.
struct BehaviorProxies {
  double harm_refusal_projection = 0.0;
  double safe_refusal_projection = 0.0;
  double mean_kl_vs_baseline = 0.0;  // 0 for the baseline bundle itself
};

struct InterventionResult {
  int checkpoint = 0;
  InterventionSpec spec;
  BehaviorProxies baseline;
  BehaviorProxies post;
  BehaviorProxies deltas;  // post - baseline, exact
};

// Stack the per-position candidates at `layer` and take the top-3 right
// singular subspace; width shrinks below 3 when the rows are rank-deficient.
Mat build_top3_basis(const CandidateLibrary& library, int layer);

// Hooked forward over a labeled prompt set vs an identical unhooked run.
InterventionResult run_intervention(const ToyModel& model,
                                    const InterventionSpec& spec,
                                    const PromptSet& prompts,
                                    const Baselines& baselines,
                                    int checkpoint = 0);

}  // namespace carrierscope

#include "carrierscope/interventions.hpp"

#include "carrierscope/spectrum.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace carrierscope {

std::string to_string(InterventionMode mode) {
  switch (mode) {
    case InterventionMode::SingleDirection:
      return "single_direction";
    case InterventionMode::Top3Subspace:
      return "top3_subspace";
    case InterventionMode::Addition:
      return "addition";
  }
  throw ValidationError("interventions: unknown mode enum");
}

InterventionMode intervention_mode_from_string(const std::string& name) {
  if (name == "single_direction") return InterventionMode::SingleDirection;
  if (name == "top3_subspace") return InterventionMode::Top3Subspace;
  if (name == "addition") return InterventionMode::Addition;
  throw UsageError("unknown intervention mode '" + name +
                   "' (expected single_direction, top3_subspace, addition)");
}

void validate_spec(const InterventionSpec& spec, int hidden_dim,
                   int layer_count) {
  if (spec.layer < 0 || spec.layer >= layer_count) {
    throw ValidationError("interventions: layer " +
                          std::to_string(spec.layer) + " out of range");
  }
  switch (spec.mode) {
    case InterventionMode::SingleDirection:
      if (spec.u.size() != hidden_dim) {
        throw ValidationError("interventions: direction dimension mismatch");
      }
      require_unit_norm(spec.u);
      break;
    case InterventionMode::Top3Subspace:
      if (spec.basis.rows() != hidden_dim) {
        throw ValidationError("interventions: basis dimension mismatch");
      }
      if (spec.basis.cols() < 1 || spec.basis.cols() > 3) {
        throw ValidationError("interventions: basis width must be 1..3");
      }
      require_orthonormal(spec.basis);
      break;
    case InterventionMode::Addition:
      if (spec.u.size() != hidden_dim) {
        throw ValidationError("interventions: direction dimension mismatch");
      }
      if (!spec.u.allFinite() || !std::isfinite(spec.coefficient)) {
        throw ValidationError("interventions: non-finite addition");
      }
      break;
  }
}

LayerHook make_hook(const InterventionSpec& spec) {
  switch (spec.mode) {
    case InterventionMode::SingleDirection: {
      Vec u = spec.u;
      return {spec.layer, [u](Eigen::Ref<Mat> states) {
                ablate_direction_rows<double>(states, u);
              }};
    }
    case InterventionMode::Top3Subspace: {
      Mat basis = spec.basis;
      return {spec.layer, [basis](Eigen::Ref<Mat> states) {
                ablate_subspace_rows<double>(states, basis);
              }};
    }
    case InterventionMode::Addition: {
      Vec u = spec.u;
      const double c = spec.coefficient;
      return {spec.layer, [u, c](Eigen::Ref<Mat> states) {
                add_direction_rows<double>(states, u, c);
              }};
    }
  }
  throw ValidationError("interventions: unknown mode enum");
}

Mat build_top3_basis(const CandidateLibrary& library, int layer) {
  if (!library.frozen) {
    throw ValidationError("interventions: library is not frozen");
  }
  if (std::find(library.layers.begin(), library.layers.end(), layer) ==
      library.layers.end()) {
    throw ValidationError("interventions: layer " + std::to_string(layer) +
                          " absent from the candidate grid");
  }
  const Index dim = library.items.front().vector.size();
  Mat rows(static_cast<Index>(library.position_offsets.size()), dim);
  Index r = 0;
  for (int offset : library.position_offsets) {
    rows.row(r++) = library.at(offset, layer).vector.transpose();
  }
  return topk_subspace(rows, 3);
}

namespace {

BehaviorProxies proxies_from_states(const Mat& eval_states,
                                    const std::vector<char>& harmful,
                                    const Vec& w) {
  BehaviorProxies out;
  double harm_sum = 0.0;
  double safe_sum = 0.0;
  int harm_n = 0;
  int safe_n = 0;
  for (Index i = 0; i < eval_states.rows(); ++i) {
    const double proj = eval_states.row(i).dot(w);
    if (harmful[static_cast<std::size_t>(i)]) {
      harm_sum += proj;
      ++harm_n;
    } else {
      safe_sum += proj;
      ++safe_n;
    }
  }
  if (harm_n == 0 || safe_n == 0) {
    throw ValidationError(
        "interventions: prompt set must contain both classes");
  }
  out.harm_refusal_projection = harm_sum / harm_n;
  out.safe_refusal_projection = safe_sum / safe_n;
  return out;
}

}  // namespace

InterventionResult run_intervention(const ToyModel& model,
                                    const InterventionSpec& spec,
                                    const PromptSet& prompts,
                                    const Baselines& baselines,
                                    int checkpoint) {
  validate_spec(spec, model.config.hidden_dim, model.config.layer_count);
  if (prompts.count() == 0) {
    throw ValidationError("interventions: empty prompt set");
  }

  InterventionResult result;
  result.checkpoint = checkpoint;
  result.spec = spec;

  const ForwardCache cache = run_forward_cache(model, prompts);
  // eval_states has one row per prompt; collapse the per-row class flags.
  std::vector<char> prompt_class(static_cast<std::size_t>(cache.n));
  for (int i = 0; i < cache.n; ++i) {
    prompt_class[static_cast<std::size_t>(i)] = prompts.is_harmful(i) ? 1 : 0;
  }
  result.baseline =
      proxies_from_states(cache.eval_states(), prompt_class, baselines.w);
  result.baseline.mean_kl_vs_baseline = 0.0;

  const LayerHook hook = make_hook(spec);
  const Readout post = resume_with_op(model, cache, hook.layer, hook.fn);
  result.post = proxies_from_states(post.eval_states, prompt_class,
                                    baselines.w);
  double kl_sum = 0.0;
  bool blown = false;
  for (int i = 0; i < cache.n; ++i) {
    const double kl = kl_divergence(cache.final_dists.row(i).transpose(),
                                    post.final_dists.row(i).transpose());
    if (!std::isfinite(kl)) {
      blown = true;
      break;
    }
    kl_sum += kl;
  }
  result.post.mean_kl_vs_baseline =
      blown ? std::numeric_limits<double>::infinity() : kl_sum / cache.n;

  result.deltas.harm_refusal_projection =
      result.post.harm_refusal_projection -
      result.baseline.harm_refusal_projection;
  result.deltas.safe_refusal_projection =
      result.post.safe_refusal_projection -
      result.baseline.safe_refusal_projection;
  result.deltas.mean_kl_vs_baseline = result.post.mean_kl_vs_baseline -
                                      result.baseline.mean_kl_vs_baseline;
  return result;
}

}  // namespace carrierscope

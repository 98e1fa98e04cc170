#include "carrierscope/carriers.hpp"

#include "carrierscope/errors.hpp"
#include "carrierscope/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <utility>

namespace carrierscope {

namespace {

std::vector<int> canonical_grid(std::vector<int> values, const char* what) {
  if (values.empty()) {
    throw ValidationError(std::string("carriers: empty ") + what + " grid");
  }
  std::sort(values.begin(), values.end());
  if (std::adjacent_find(values.begin(), values.end()) != values.end()) {
    throw ValidationError(std::string("carriers: duplicate ") + what +
                          " grid entry");
  }
  return values;
}

void check_same_shape(const ActivationField& a, const ActivationField& b,
                      const char* what) {
  if (a.checkpoint != b.checkpoint) {
    throw ValidationError(std::string("carriers: ") + what +
                          " fields come from different checkpoints");
  }
  if (a.examples != b.examples || a.positions != b.positions ||
      a.layers != b.layers || a.dim != b.dim ||
      a.position_offsets != b.position_offsets) {
    throw ValidationError(std::string("carriers: ") + what +
                          " fields have mismatched shapes");
  }
}

int offset_index(const ActivationField& field, int offset) {
  auto it = std::find(field.position_offsets.begin(),
                      field.position_offsets.end(), offset);
  if (it == field.position_offsets.end()) {
    throw ValidationError("carriers: position offset " +
                          std::to_string(offset) + " absent from field");
  }
  return static_cast<int>(it - field.position_offsets.begin());
}

}  // namespace

const CandidateDirection& CandidateLibrary::at(int position_offset,
                                               int layer) const {
  for (const auto& c : items) {
    if (c.position_offset == position_offset && c.layer == layer) return c;
  }
  throw ValidationError("carriers: candidate (" +
                        std::to_string(position_offset) + ", " +
                        std::to_string(layer) + ") not in library");
}

CandidateLibrary build_library(const ActivationField& harm,
                               const ActivationField& safe,
                               const std::vector<int>& position_offsets,
                               const std::vector<int>& layers) {
  if (harm.split != Split::Harmful || safe.split != Split::Safe) {
    throw ValidationError("carriers: build_library expects (harmful, safe) fields");
  }
  if (harm.role != Role::Train || safe.role != Role::Train) {
    throw ValidationError("carriers: build_library expects train-role fields");
  }
  check_same_shape(harm, safe, "train");

  CandidateLibrary lib;
  lib.checkpoint = harm.checkpoint;
  lib.position_offsets = canonical_grid(position_offsets, "position");
  lib.layers = canonical_grid(layers, "layer");
  for (int layer : lib.layers) {
    if (layer < 0 || layer >= harm.layers) {
      throw ValidationError("carriers: layer " + std::to_string(layer) +
                            " out of range");
    }
  }

  lib.items.reserve(static_cast<std::size_t>(lib.position_offsets.size()) *
                    lib.layers.size());
  for (int offset : lib.position_offsets) {
    const int p = offset_index(harm, offset);
    for (int layer : lib.layers) {
      CandidateDirection cand;
      cand.position_offset = offset;
      cand.layer = layer;
      cand.vector = harm.mean_state(p, layer) - safe.mean_state(p, layer);
      cand.norm = cand.vector.norm();
      lib.items.push_back(std::move(cand));
    }
  }
  lib.frozen = true;
  return lib;
}

Baselines compute_baselines(const ActivationField& harm_val,
                            const ActivationField& safe_val) {
  if (harm_val.split != Split::Harmful || safe_val.split != Split::Safe) {
    throw ValidationError("carriers: compute_baselines expects (harmful, safe) fields");
  }
  if (harm_val.role != Role::Val || safe_val.role != Role::Val) {
    throw ValidationError("carriers: compute_baselines expects val-role fields");
  }
  check_same_shape(harm_val, safe_val, "val");

  const int p = harm_val.positions - 1;  // final position offset
  const int l = harm_val.layers - 1;     // final layer input
  Baselines b;
  b.mu_harm = harm_val.mean_state(p, l);
  b.mu_safe = safe_val.mean_state(p, l);
  const Vec diff = b.mu_harm - b.mu_safe;
  b.denom = diff.norm();
  if (b.denom <= 1e-9) {
    throw ValidationError(
        "degenerate-probe: harmful and safe val means coincide at the "
        "evaluation site");
  }
  b.w = diff / b.denom;
  return b;
}

namespace {

void check_prompt_classes(const PromptSet& set, bool harmful,
                          const char* what) {
  for (int i = 0; i < set.count(); ++i) {
    if (set.is_harmful(i) != harmful) {
      throw ValidationError(std::string("carriers: ") + what +
                            " prompt set has a mixed class marker");
    }
  }
}

Vec projections(const Mat& eval_states, const Vec& w) {
  return eval_states * w;
}

}  // namespace

CandidateScorer::CandidateScorer(const ToyModel& model,
                                 const PromptSet& harm_val,
                                 const PromptSet& safe_val,
                                 Baselines baselines, ScoringConfig config)
    : model_(model),
      baselines_(std::move(baselines)),
      config_(config),
      harm_cache_(),
      safe_cache_() {
  check_prompt_classes(harm_val, true, "harmful val");
  check_prompt_classes(safe_val, false, "safe val");
  if (baselines_.w.size() != model.config.hidden_dim) {
    throw ValidationError("carriers: baseline dimension mismatch");
  }
  harm_cache_ = run_forward_cache(model_, harm_val);
  safe_cache_ = run_forward_cache(model_, safe_val);
  harm_before_ = projections(harm_cache_.eval_states(), baselines_.w);
  safe_before_ = projections(safe_cache_.eval_states(), baselines_.w);
}

CarrierScore CandidateScorer::score(const CandidateDirection& cand) const {
  CarrierScore score;
  score.position_offset = cand.position_offset;
  score.layer = cand.layer;
  score.beta_kl = config_.beta_kl;

  if (cand.norm == 0.0) {
    score.admissible = true;  // no-op candidate: all components vanish
    return score;
  }
  if (cand.vector.size() != model_.config.hidden_dim) {
    throw ValidationError("carriers: candidate dimension mismatch");
  }
  if (cand.layer < 0 || cand.layer >= model_.config.layer_count) {
    throw ValidationError("carriers: candidate layer out of range");
  }
  if (!cand.vector.allFinite()) {
    throw ValidationError("carriers: candidate vector must be finite");
  }

  const Vec raw = cand.vector;
  const Vec unit = cand.vector / cand.norm;
  const double c = config_.addition_coefficient;

  // S_refuse: activation addition of the raw candidate on safe prompts.
  const Readout added = resume_with_op(
      model_, safe_cache_, cand.layer,
      [&](Eigen::Ref<Mat> rows) { rows.rowwise() += (c * raw).transpose(); });
  const Vec safe_after = projections(added.eval_states, baselines_.w);
  score.s_refuse =
      (safe_after - safe_before_).mean() / baselines_.denom;

  // S_comply: unit-direction ablation on harmful prompts.
  const Readout ablated_harm = resume_with_op(
      model_, harm_cache_, cand.layer, [&](Eigen::Ref<Mat> rows) {
        const Vec proj = rows * unit;
        rows.noalias() -= proj * unit.transpose();
      });
  const Vec harm_after = projections(ablated_harm.eval_states, baselines_.w);
  score.s_comply =
      (harm_before_ - harm_after).mean() / baselines_.denom;

  // KL gate: same ablation on safe prompts, distribution shift at the final
  // position.
  const Readout ablated_safe = resume_with_op(
      model_, safe_cache_, cand.layer, [&](Eigen::Ref<Mat> rows) {
        const Vec proj = rows * unit;
        rows.noalias() -= proj * unit.transpose();
      });
  double kl_sum = 0.0;
  double kl_max = 0.0;
  bool finite = true;
  for (int i = 0; i < safe_cache_.n; ++i) {
    const double kl = kl_divergence(safe_cache_.final_dists.row(i).transpose(),
                                    ablated_safe.final_dists.row(i).transpose());
    if (!std::isfinite(kl)) {
      finite = false;
      break;
    }
    kl_sum += kl;
    kl_max = std::max(kl_max, kl);
  }

  if (!finite) {
    score.kl = std::numeric_limits<double>::infinity();
    score.kl_max = std::numeric_limits<double>::infinity();
    score.s_total = std::numeric_limits<double>::quiet_NaN();
    score.admissible = false;
    return score;
  }
  score.kl = kl_sum / safe_cache_.n;
  score.kl_max = kl_max;
  score.s_total = score.s_refuse + score.s_comply - config_.beta_kl * score.kl;
  score.admissible = score.kl <= config_.kl_threshold;
  return score;
}

std::vector<CarrierScore> CandidateScorer::score_all(
    const CandidateLibrary& library, int threads) const {
  std::vector<CarrierScore> scores(library.items.size());
  parallel_for(static_cast<int>(library.items.size()),
               resolve_thread_count(threads),
               [&](int i) { scores[i] = score(library.items[i]); });
  return scores;
}

double refusal_shift_score(const CandidateDirection& candidate,
                           const ToyModel& model, const PromptSet& safe_val,
                           const Baselines& baselines,
                           double addition_coefficient) {
  check_prompt_classes(safe_val, false, "safe val");
  if (candidate.norm == 0.0) return 0.0;
  const ForwardCache cache = run_forward_cache(model, safe_val);
  const Vec before = cache.eval_states() * baselines.w;
  const Vec shift = addition_coefficient * candidate.vector;
  const Readout out = resume_with_op(
      model, cache, candidate.layer,
      [&](Eigen::Ref<Mat> rows) { rows.rowwise() += shift.transpose(); });
  const Vec after = out.eval_states * baselines.w;
  return (after - before).mean() / baselines.denom;
}

double comply_shift_score(const CandidateDirection& candidate,
                          const ToyModel& model, const PromptSet& harm_val,
                          const Baselines& baselines) {
  check_prompt_classes(harm_val, true, "harmful val");
  if (candidate.norm == 0.0) return 0.0;
  const ForwardCache cache = run_forward_cache(model, harm_val);
  const Vec before = cache.eval_states() * baselines.w;
  const Vec unit = candidate.vector / candidate.norm;
  const Readout out = resume_with_op(
      model, cache, candidate.layer, [&](Eigen::Ref<Mat> rows) {
        const Vec proj = rows * unit;
        rows.noalias() -= proj * unit.transpose();
      });
  const Vec after = out.eval_states * baselines.w;
  return (before - after).mean() / baselines.denom;
}

std::pair<double, double> kl_side_effect(const CandidateDirection& candidate,
                                         const ToyModel& model,
                                         const PromptSet& safe_val) {
  check_prompt_classes(safe_val, false, "safe val");
  if (safe_val.count() == 0) {
    throw ValidationError("carriers: kl_side_effect needs a non-empty safe val set");
  }
  if (candidate.norm == 0.0) return {0.0, 0.0};
  const ForwardCache cache = run_forward_cache(model, safe_val);
  const Vec unit = candidate.vector / candidate.norm;
  const Readout out = resume_with_op(
      model, cache, candidate.layer, [&](Eigen::Ref<Mat> rows) {
        const Vec proj = rows * unit;
        rows.noalias() -= proj * unit.transpose();
      });
  double sum = 0.0;
  double worst = 0.0;
  for (int i = 0; i < cache.n; ++i) {
    const double kl = kl_divergence(cache.final_dists.row(i).transpose(),
                                    out.final_dists.row(i).transpose());
    if (!std::isfinite(kl)) {
      const double inf = std::numeric_limits<double>::infinity();
      return {inf, inf};
    }
    sum += kl;
    worst = std::max(worst, kl);
  }
  return {sum / cache.n, worst};
}

CarrierScore score_candidate(const CandidateDirection& candidate,
                             const ToyModel& model, const PromptSet& harm_val,
                             const PromptSet& safe_val,
                             const Baselines& baselines,
                             const ScoringConfig& config) {
  CandidateScorer scorer(model, harm_val, safe_val, baselines, config);
  return scorer.score(candidate);
}

RankedCandidates rank_admissible(const std::vector<CarrierScore>& scores) {
  RankedCandidates out;
  for (const auto& s : scores) {
    if (s.admissible) out.admissible.push_back(s);
  }
  std::sort(out.admissible.begin(), out.admissible.end(),
            [](const CarrierScore& a, const CarrierScore& b) {
              if (a.s_total != b.s_total) return a.s_total > b.s_total;
              if (a.layer != b.layer) return a.layer < b.layer;
              return a.position_offset < b.position_offset;
            });
  if (!out.admissible.empty()) out.best = out.admissible.front();
  return out;
}

RankedCandidates rank_admissible(const CandidateLibrary& library,
                                 const std::vector<CarrierScore>& scores) {
  if (!library.frozen) {
    throw ValidationError("carriers: library is not frozen");
  }
  if (static_cast<int>(scores.size()) != library.grid_size()) {
    throw ValidationError("carriers: scored " + std::to_string(scores.size()) +
                          " candidates for a grid of " +
                          std::to_string(library.grid_size()));
  }
  std::set<std::pair<int, int>> seen;
  for (const auto& s : scores) {
    if (!seen.insert({s.position_offset, s.layer}).second) {
      throw ValidationError("carriers: duplicate score for grid site");
    }
    library.at(s.position_offset, s.layer);  // throws if off-grid
  }
  return rank_admissible(scores);
}

}  // namespace carrierscope

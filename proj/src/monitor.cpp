#include "carrierscope/monitor.hpp"

#include "carrierscope/errors.hpp"
#include "carrierscope/parallel.hpp"

#include <algorithm>
#include <cmath>

namespace carrierscope {

std::vector<int> default_monitor_layers(int layer_count) {
  if (layer_count < 2) {
    throw ValidationError("monitor: model has no observable layers");
  }
  const int lo = 1;
  const int hi = layer_count - 1;
  std::vector<int> layers;
  for (int k = 0; k < 5; ++k) {
    const double t = 5 > 1 ? static_cast<double>(k) / 4.0 : 0.0;
    layers.push_back(lo + static_cast<int>(std::llround(t * (hi - lo))));
  }
  layers.erase(std::unique(layers.begin(), layers.end()), layers.end());
  return layers;
}

namespace {

void validate_config(const MonitorConfig& config) {
  if (config.kl_threshold <= 0.0 || config.beta_kl <= 0.0) {
    throw ValidationError("monitor: thresholds must be positive");
  }
  if (config.batch_size < 1) {
    throw ValidationError("monitor: batch_size must be >= 1");
  }
  for (int c : {config.train_harmful, config.train_harmless,
                config.val_harmful, config.val_harmless}) {
    if (c < 0) throw ValidationError("monitor: counts must be >= 0");
  }
  if (config.positions.empty()) {
    throw ValidationError("monitor: empty position grid");
  }
}

ActivationField load_subsampled(const SyntheticRun& run, int checkpoint,
                                Split split, Role role, int count) {
  ActivationField field = load_field(run.manifest, checkpoint, split, role);
  if (count > 0) field = take_examples(field, count);
  return field;
}

double cosine_or_zero(const Vec& a, const Vec& b) {
  if (a.size() == 0 || b.size() == 0) return 0.0;
  const double na = a.norm();
  const double nb = b.norm();
  if (na <= 0.0 || nb <= 0.0) return 0.0;
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

}  // namespace

MonitorRecord dense_probe_step(const SyntheticRun& run, int checkpoint,
                               const MonitorConfig& config,
                               const MonitorRecord* previous,
                               const MonitorRecord* anchor) {
  validate_config(config);
  const std::vector<int> layers =
      config.candidate_layers.empty()
          ? default_monitor_layers(run.model_config.layer_count)
          : config.candidate_layers;

  const ActivationField harm_train = load_subsampled(
      run, checkpoint, Split::Harmful, Role::Train, config.train_harmful);
  const ActivationField safe_train = load_subsampled(
      run, checkpoint, Split::Safe, Role::Train, config.train_harmless);
  const ActivationField harm_val = load_subsampled(
      run, checkpoint, Split::Harmful, Role::Val, config.val_harmful);
  const ActivationField safe_val = load_subsampled(
      run, checkpoint, Split::Safe, Role::Val, config.val_harmless);

  const CandidateLibrary library =
      build_library(harm_train, safe_train, config.positions, layers);

  const Baselines baselines = compute_baselines(harm_val, safe_val);
  const ToyModel model = run.checkpoint_model(checkpoint);
  PromptSet harm_prompts = run.prompts(Split::Harmful, Role::Val);
  PromptSet safe_prompts = run.prompts(Split::Safe, Role::Val);
  if (config.val_harmful > 0) {
    harm_prompts = take_prompts(harm_prompts, config.val_harmful);
  }
  if (config.val_harmless > 0) {
    safe_prompts = take_prompts(safe_prompts, config.val_harmless);
  }

  ScoringConfig scoring;
  scoring.beta_kl = config.beta_kl;
  scoring.kl_threshold = config.kl_threshold;
  scoring.addition_coefficient = config.addition_coefficient;
  const CandidateScorer scorer(model, harm_prompts, safe_prompts, baselines,
                               scoring);
  const int threads = resolve_thread_count(config.threads);

  MonitorRecord record;
  record.checkpoint = checkpoint;
  record.selection_stats = scorer.score_all(library, threads);
  const RankedCandidates ranked =
      rank_admissible(library, record.selection_stats);
  record.n_admissible = static_cast<int>(ranked.admissible.size());
  record.has_admissible = ranked.best.has_value();

  if (record.has_admissible) {
    const CarrierScore& best = *ranked.best;
    record.selected_position = best.position_offset;
    record.selected_layer = best.layer;
    const CandidateDirection& cand =
        library.at(best.position_offset, best.layer);
    record.selected_direction = cand.vector;
    record.direction_norm = cand.norm;
    if (cand.norm > 0.0) {
      const Vec unit = cand.vector / cand.norm;
      const int p_idx = run.manifest.position_index(best.position_offset);
      record.projection_gap =
          unit.dot(harm_val.mean_state(p_idx, best.layer) -
                   safe_val.mean_state(p_idx, best.layer));
    }
  }

  record.cos_to_anchor =
      anchor == nullptr
          ? (record.direction_norm > 0.0 ? 1.0 : 0.0)
          : cosine_or_zero(record.selected_direction,
                           anchor->selected_direction);
  record.cos_to_previous =
      previous == nullptr
          ? 0.0
          : cosine_or_zero(record.selected_direction,
                           previous->selected_direction);

  if (anchor == nullptr) {
    record.cos_to_anchor_fixed = record.cos_to_anchor;
  } else if (anchor->has_admissible) {
    const CandidateDirection& fixed_site =
        library.at(anchor->selected_position, anchor->selected_layer);
    record.cos_to_anchor_fixed =
        cosine_or_zero(fixed_site.vector, anchor->selected_direction);
  }
  return record;
}

MonitorTrace monitor_run(const SyntheticRun& run, const MonitorConfig& config) {
  MonitorTrace trace;
  const MonitorRecord* anchor = nullptr;
  const MonitorRecord* previous = nullptr;
  trace.records.reserve(run.manifest.checkpoints.size());
  for (const CheckpointEntry& entry : run.manifest.checkpoints) {
    trace.records.push_back(
        dense_probe_step(run, entry.id, config, previous, anchor));
    anchor = &trace.records.front();
    previous = &trace.records.back();
  }
  return trace;
}

}  // namespace carrierscope

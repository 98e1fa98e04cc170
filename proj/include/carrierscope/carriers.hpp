#pragma once

#include "carrierscope/store.hpp"
#include "carrierscope/toymodel.hpp"
#include "carrierscope/types.hpp"

#include <optional>
#include <vector>

namespace carrierscope {

struct CandidateDirection {
  int position_offset = 0;  // negative end offset
  int layer = 0;
  Vec vector;  // mean(harmful) - mean(safe) at (position, layer)
  double norm = 0.0;
};

struct CarrierScore {
  int position_offset = 0;
  int layer = 0;
  double s_refuse = 0.0;
  double s_comply = 0.0;
  double kl = 0.0;      // mean over safe val prompts; +inf marks a blown gate
  double kl_max = 0.0;  // worst prompt, secondary diagnostic
  double beta_kl = 1.0;
  double s_total = 0.0;  // NaN when kl is non-finite
  bool admissible = false;
};

// Mean-difference grid for one checkpoint. Canonical order: position offsets
// ascending (outer), layers ascending (inner). Libraries freeze on
// construction; downstream consumers refuse unfrozen ones.
struct CandidateLibrary {
  int checkpoint = 0;
  std::vector<int> position_offsets;
  std::vector<int> layers;
  std::vector<CandidateDirection> items;
  bool frozen = false;

  int grid_size() const { return static_cast<int>(items.size()); }
  const CandidateDirection& at(int position_offset, int layer) const;
};

// Difference of class means per grid site, accumulated in double over the
// stored float32 states.
CandidateLibrary build_library(const ActivationField& harm,
                               const ActivationField& safe,
                               const std::vector<int>& position_offsets,
                               const std::vector<int>& layers);

// Class-mean readout frame at the evaluation site (final layer input, final
// position offset). w spans the harmful-minus-safe axis.
struct Baselines {
  Vec mu_safe;
  Vec mu_harm;
  Vec w;               // (mu_harm - mu_safe) / denom
  double denom = 0.0;  // ||mu_harm - mu_safe||
};

// ValidationError("degenerate-probe ...") when ||mu_harm - mu_safe|| <= 1e-9.
Baselines compute_baselines(const ActivationField& harm_val,
                            const ActivationField& safe_val);

struct ScoringConfig {
  double beta_kl = 1.0;
  double kl_threshold = 0.10;
  double addition_coefficient = 1.0;
};

// Shares baseline forward caches across a whole candidate grid; scoring one
// candidate costs three partial re-runs from its layer.
class CandidateScorer {
 public:
  CandidateScorer(const ToyModel& model, const PromptSet& harm_val,
                  const PromptSet& safe_val, Baselines baselines,
                  ScoringConfig config = {});

  CarrierScore score(const CandidateDirection& candidate) const;
  std::vector<CarrierScore> score_all(const CandidateLibrary& library,
                               int threads = 1) const;

  const Baselines& baselines() const { return baselines_; }
  const ScoringConfig& config() const { return config_; }

 private:
  const ToyModel& model_;
  Baselines baselines_;
  ScoringConfig config_;
  ForwardCache harm_cache_;
  ForwardCache safe_cache_;
  Vec harm_before_;  // w . eval_state per harmful val prompt
  Vec safe_before_;  // w . eval_state per safe val prompt
};

// Contract-level entry points; each rebuilds the shared caches, so pipelines
// should prefer CandidateScorer.
double refusal_shift_score(const CandidateDirection& candidate,
                           const ToyModel& model, const PromptSet& safe_val,
                           const Baselines& baselines,
                           double addition_coefficient = 1.0);
double comply_shift_score(const CandidateDirection& candidate,
                          const ToyModel& model, const PromptSet& harm_val,
                          const Baselines& baselines);
// Returns (mean, max) over safe val prompts of KL(base || ablated).
std::pair<double, double> kl_side_effect(const CandidateDirection& candidate,
                                         const ToyModel& model,
                                         const PromptSet& safe_val);
CarrierScore score_candidate(const CandidateDirection& candidate,
                             const ToyModel& model, const PromptSet& harm_val,
                             const PromptSet& safe_val,
                             const Baselines& baselines,
                             const ScoringConfig& config = {});

struct RankedCandidates {
  std::vector<CarrierScore> admissible;  // s_total descending, tie-broken
  std::optional<CarrierScore> best;      // empty when nothing passes the gate
};

// Sort key: s_total descending, then lower layer, then more negative
// position. Pure function of the score set; input order never matters.
RankedCandidates rank_admissible(const std::vector<CarrierScore>& scores);

// Grid-checked variant: every library entry must carry exactly one score.
RankedCandidates rank_admissible(const CandidateLibrary& library,
                                 const std::vector<CarrierScore>& scores);

}  // namespace carrierscope

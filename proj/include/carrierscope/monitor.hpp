#pragma once

#include "carrierscope/carriers.hpp"
#include "carrierscope/scenario.hpp"
#include "carrierscope/types.hpp"

#include <vector>

namespace carrierscope {

// Dense-trace probe settings. Counts of 0 mean "use every stored example";
// positive counts subsample the leading examples of each field. batch_size
// only chunks evaluation work and can never change results.
struct MonitorConfig {
  std::vector<int> positions = {-5, -4, -3, -2, -1};
  std::vector<int> candidate_layers;  // empty -> default_monitor_layers(run)
  double kl_threshold = 0.10;
  double beta_kl = 1.0;
  double addition_coefficient = 1.0;
  int batch_size = 8;
  int train_harmful = 0;
  int train_harmless = 0;
  int val_harmful = 0;
  int val_harmless = 0;
  int threads = 0;  // 0 -> resolve from environment
};

// Five evenly spaced observable layers across [1, layer_count-1].
std::vector<int> default_monitor_layers(int layer_count);

struct MonitorRecord {
  int checkpoint = 0;
  bool has_admissible = false;
  int selected_position = 0;  // meaningful only when has_admissible
  int selected_layer = 0;
  Vec selected_direction;     // zero-size when nothing admissible
  double direction_norm = 0.0;
  // Class-mean projection difference on the unit selected direction at the
  // selected grid site.
  double projection_gap = 0.0;
  double cos_to_anchor = 0.0;
  double cos_to_previous = 0.0;
  // Secondary diagnostic: cosine between the anchor's direction and this
  // checkpoint's candidate at the anchor's fixed (position, layer) site.
  double cos_to_anchor_fixed = 0.0;
  int n_admissible = 0;
  std::vector<CarrierScore> selection_stats;  // full grid, canonical order
};

struct MonitorTrace {
  std::vector<MonitorRecord> records;  // ascending checkpoint order
};

// One probe step: restricted candidate grid, admissibility scoring, drift
// statistics against the anchor and the immediately preceding record.
// Null anchor means the record is its own anchor.
MonitorRecord dense_probe_step(const SyntheticRun& run, int checkpoint,
                               const MonitorConfig& config,
                               const MonitorRecord* previous,
                               const MonitorRecord* anchor);

// One record per checkpoint, ascending; the first record anchors the rest.
MonitorTrace monitor_run(const SyntheticRun& run, const MonitorConfig& config);

}  // namespace carrierscope

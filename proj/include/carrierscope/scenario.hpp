#pragma once

#include "carrierscope/store.hpp"
#include "carrierscope/toymodel.hpp"
#include "carrierscope/types.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace carrierscope {

enum class ScenarioKind { Static, Relocation, DriftOnly };

const char* to_string(ScenarioKind kind);
ScenarioKind scenario_kind_from_string(const std::string& name);

// Layer fields below index the layer INPUT at which the planted mean shift is
// observable; the additive injection happens at the preceding block's output,
// so valid carrier layers are 1..layer_count-1.
struct ScenarioSpec {
  ScenarioKind kind = ScenarioKind::Static;
  std::vector<int> checkpoints = {0, 50, 100, 250, 500};  // first = reference

  int carrier_layer = 9;       // static, drift_only
  int late_layer = 9;          // relocation: pre-switch carrier layer
  int early_layer = 1;         // relocation: carrier layer once step >= switch_step
  int switch_step = 100;
  std::vector<double> rotation_schedule;  // drift_only: degrees per checkpoint

  // drift_only plants two weak fixed-direction carriers so the top-3 subspace
  // has stable secondary directions; without them principal angles would
  // compare storage-noise directions across checkpoints.
  std::vector<int> aux_layers = {1, 3};
  double aux_strength_fraction = 0.125;

  double strength = 320.0;
  int train_count = 256;
  int val_count = 96;
  int eval_count = 48;
  int prompt_len = 8;
  std::vector<int> position_offsets = {-5, -4, -3, -2, -1};

  std::uint64_t seed = 0;
  ToyModelConfig model;  // model.seed == 0 -> derived from scenario seed
  std::string run_id;    // empty -> derived from kind and seed
};

struct GroundTruthEntry {
  int layer = 0;
  Vec direction;
  double strength = 0.0;
  double rotation_deg = 0.0;
  std::vector<PlantedCarrier> aux;  // observable-layer indexing
};

struct SyntheticRun {
  RunManifest manifest;
  ToyModelConfig model_config;
  std::uint64_t prompt_seed = 0;
  int prompt_len = 0;
  std::map<int, std::vector<PlantedCarrier>> plants;  // checkpoint -> plant sites

  ToyModel checkpoint_model(int checkpoint) const;
  PromptSet prompts(Split split, Role role) const;
};

// Writes the activation container plus two sidecars: ground_truth.json (the
// per-checkpoint planted carrier, for tests and audits) and model.json (the
// recipe the pipeline needs to rebuild checkpoint models and prompt sets).
SyntheticRun generate_scenario(const ScenarioSpec& spec,
                               const std::filesystem::path& out_dir);

SyntheticRun load_synthetic_run(const std::filesystem::path& run_dir);

std::map<int, GroundTruthEntry> load_ground_truth(
    const std::filesystem::path& run_dir);

}  // namespace carrierscope

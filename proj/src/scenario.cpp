#include "carrierscope/scenario.hpp"

#include "carrierscope/errors.hpp"
#include "carrierscope/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace carrierscope {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kModelSeedTag = 0xA0DE1;
constexpr std::uint64_t kPromptSeedTag = 0x9000;
constexpr std::uint64_t kDirectionTag = 0xD14;

constexpr int role_tag(Role role) {
  switch (role) {
    case Role::Train: return 1;
    case Role::Val: return 2;
    default: return 3;
  }
}

// First four vectors of a seeded random orthonormal frame: d0 is the carrier,
// d1 spans the drift rotation plane, d2/d3 seed the aux stabilizers.
std::vector<Vec> orthonormal_frame(std::uint64_t seed, int dim, int count) {
  GaussianStream stream(seed);
  std::vector<Vec> frame;
  frame.reserve(count);
  while (static_cast<int>(frame.size()) < count) {
    Vec v(dim);
    for (int i = 0; i < dim; ++i) v[i] = stream.next();
    for (const Vec& u : frame) v -= u.dot(v) * u;
    const double norm = v.norm();
    if (norm < 1e-6) continue;  // essentially impossible; redraw
    frame.push_back(v / norm);
  }
  return frame;
}

void validate_spec(const ScenarioSpec& spec) {
  if (spec.checkpoints.empty()) {
    throw ValidationError("scenario: no checkpoints");
  }
  for (std::size_t i = 1; i < spec.checkpoints.size(); ++i) {
    if (spec.checkpoints[i] <= spec.checkpoints[i - 1]) {
      throw ValidationError("scenario: checkpoint ids must be strictly increasing");
    }
  }
  const int L = spec.model.layer_count;
  auto check_layer = [&](int layer, const char* what) {
    if (layer < 1 || layer >= L) {
      throw ValidationError(std::string("scenario: ") + what +
                            " must be in [1, layer_count)");
    }
  };
  switch (spec.kind) {
    case ScenarioKind::Static:
      check_layer(spec.carrier_layer, "carrier_layer");
      break;
    case ScenarioKind::Relocation:
      check_layer(spec.late_layer, "late_layer");
      check_layer(spec.early_layer, "early_layer");
      if (spec.early_layer >= spec.late_layer) {
        throw ValidationError("scenario: relocation requires early_layer < late_layer");
      }
      if (spec.switch_step <= spec.checkpoints.front() ||
          spec.switch_step > spec.checkpoints.back()) {
        throw ValidationError("scenario: switch_step must lie strictly inside the checkpoint range");
      }
      break;
    case ScenarioKind::DriftOnly:
      check_layer(spec.carrier_layer, "carrier_layer");
      if (spec.rotation_schedule.size() != spec.checkpoints.size()) {
        throw ValidationError("scenario: rotation_schedule length must match checkpoints");
      }
      if (spec.rotation_schedule.front() != 0.0) {
        throw ValidationError("scenario: rotation_schedule must start at 0 for the reference");
      }
      if (spec.aux_layers.size() != 2) {
        throw ValidationError("scenario: drift_only needs exactly two aux layers");
      }
      for (int l : spec.aux_layers) {
        check_layer(l, "aux layer");
        if (l == spec.carrier_layer) {
          throw ValidationError("scenario: aux layer collides with carrier_layer");
        }
      }
      if (spec.aux_layers[0] == spec.aux_layers[1]) {
        throw ValidationError("scenario: aux layers must be distinct");
      }
      if (spec.aux_strength_fraction <= 0.0 || spec.aux_strength_fraction >= 1.0) {
        throw ValidationError("scenario: aux_strength_fraction must be in (0, 1)");
      }
      break;
  }
  if (!(spec.strength > 0.0) || !std::isfinite(spec.strength)) {
    throw ValidationError("scenario: strength must be positive and finite");
  }
  if (spec.train_count < 2 || spec.val_count < 2 || spec.eval_count < 2) {
    throw ValidationError("scenario: class counts must be >= 2");
  }
  if (spec.position_offsets.empty()) {
    throw ValidationError("scenario: empty position_offsets");
  }
  for (std::size_t i = 0; i < spec.position_offsets.size(); ++i) {
    if (spec.position_offsets[i] >= 0) {
      throw ValidationError("scenario: position offsets must be negative");
    }
    if (i > 0 && spec.position_offsets[i] <= spec.position_offsets[i - 1]) {
      throw ValidationError("scenario: position offsets must be strictly increasing");
    }
  }
  // Offset -k must resolve to an absolute position >= 1 so the analysis grid
  // never touches the class-marker position.
  if (spec.prompt_len + spec.position_offsets.front() < 1) {
    throw ValidationError("scenario: prompt_len too short for the position offsets");
  }
}

json direction_to_json(const Vec& v) {
  json arr = json::array();
  for (Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

Vec direction_from_json(const json& arr) {
  Vec v(static_cast<Index>(arr.size()));
  for (std::size_t i = 0; i < arr.size(); ++i) v[static_cast<Index>(i)] = arr[i].get<double>();
  return v;
}

void write_json_file(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw IoError("cannot open " + path.string() + " for writing");
  }
  out << j.dump(2) << "\n";
  if (!out) {
    throw IoError("short write to " + path.string());
  }
}

json load_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open " + path.string());
  }
  try {
    json j;
    in >> j;
    return j;
  } catch (const json::exception& e) {
    throw ValidationError(path.filename().string() + ": invalid JSON: " +
                          std::string(e.what()));
  }
}


}  // namespace

const char* to_string(ScenarioKind kind) {
  switch (kind) {
    case ScenarioKind::Static: return "static";
    case ScenarioKind::Relocation: return "relocation";
    default: return "drift_only";
  }
}

ScenarioKind scenario_kind_from_string(const std::string& name) {
  if (name == "static") return ScenarioKind::Static;
  if (name == "relocation") return ScenarioKind::Relocation;
  if (name == "drift_only") return ScenarioKind::DriftOnly;
  throw UsageError("unknown scenario kind '" + name + "'");
}

ToyModel SyntheticRun::checkpoint_model(int checkpoint) const {
  auto it = plants.find(checkpoint);
  if (it == plants.end()) {
    throw ValidationError("run: no plant schedule for checkpoint " +
                          std::to_string(checkpoint));
  }
  ToyModel model = build_toy_model(model_config);
  for (const auto& p : it->second) {
    plant_carrier(model, p.layer, p.direction, p.strength);
  }
  return model;
}

PromptSet SyntheticRun::prompts(Split split, Role role) const {
  const int count = manifest.count_for(split, role);
  return make_prompt_set(prompt_seed, role_tag(role), split == Split::Harmful,
                         count, prompt_len, model_config.vocab_size);
}

SyntheticRun generate_scenario(const ScenarioSpec& spec,
                               const fs::path& out_dir) {
  ScenarioSpec s = spec;
  if (s.model.seed == 0) {
    s.model.seed = derive_seed(s.seed, kModelSeedTag);
  }
  validate_spec(s);

  SyntheticRun run;
  run.model_config = s.model;
  run.prompt_seed = derive_seed(s.seed, kPromptSeedTag);
  run.prompt_len = s.prompt_len;

  RunManifest& man = run.manifest;
  man.root = out_dir;
  man.run_id = !s.run_id.empty()
                   ? s.run_id
                   : std::string(to_string(s.kind)) + "-seed" +
                         std::to_string(s.seed);
  man.regime_label = std::string("synthetic-") + to_string(s.kind);
  man.hidden_dim = s.model.hidden_dim;
  man.layer_count = s.model.layer_count;
  man.position_offsets = s.position_offsets;
  for (std::size_t i = 0; i < s.checkpoints.size(); ++i) {
    man.checkpoints.push_back({s.checkpoints[i], i == 0});
  }
  for (Split split : {Split::Harmful, Split::Safe}) {
    man.counts[to_string(split)]["train"] = s.train_count;
    man.counts[to_string(split)]["val"] = s.val_count;
    man.counts[to_string(split)]["eval"] = s.eval_count;
  }

  const auto frame = orthonormal_frame(derive_seed(s.seed, kDirectionTag),
                                       s.model.hidden_dim, 4);
  const Vec& d0 = frame[0];
  const Vec& d1 = frame[1];

  std::map<int, GroundTruthEntry> truth;
  for (std::size_t i = 0; i < s.checkpoints.size(); ++i) {
    const int ckpt = s.checkpoints[i];
    GroundTruthEntry entry;
    entry.strength = s.strength;
    switch (s.kind) {
      case ScenarioKind::Static:
        entry.layer = s.carrier_layer;
        entry.direction = d0;
        break;
      case ScenarioKind::Relocation:
        entry.layer = ckpt >= s.switch_step ? s.early_layer : s.late_layer;
        entry.direction = d0;
        break;
      case ScenarioKind::DriftOnly: {
        entry.layer = s.carrier_layer;
        entry.rotation_deg = s.rotation_schedule[i];
        const double theta = entry.rotation_deg * M_PI / 180.0;
        entry.direction = std::cos(theta) * d0 + std::sin(theta) * d1;
        entry.aux.push_back({s.aux_layers[0], frame[2],
                             s.aux_strength_fraction * s.strength});
        entry.aux.push_back({s.aux_layers[1], frame[3],
                             s.aux_strength_fraction * s.strength});
        break;
      }
    }
    truth[ckpt] = std::move(entry);

    std::vector<PlantedCarrier> sites;
    const GroundTruthEntry& t = truth[ckpt];
    sites.push_back({t.layer - 1, t.direction, t.strength});
    for (const auto& aux : t.aux) {
      sites.push_back({aux.layer - 1, aux.direction, aux.strength});
    }
    run.plants[ckpt] = std::move(sites);
  }

  // Blobs first, manifest last: a partially written container has no
  // manifest and cannot be mistaken for a complete one.
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) {
    throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  }

  const int P = static_cast<int>(s.position_offsets.size());
  for (const auto& ck : man.checkpoints) {
    const ToyModel model = run.checkpoint_model(ck.id);
    for (Split split : {Split::Harmful, Split::Safe}) {
      for (Role role : {Role::Train, Role::Val, Role::Eval}) {
        const PromptSet prompts = run.prompts(split, role);
        const ForwardCache cache = run_forward_cache(model, prompts);
        ActivationField field;
        field.checkpoint = ck.id;
        field.split = split;
        field.role = role;
        field.examples = prompts.count();
        field.positions = P;
        field.layers = s.model.layer_count;
        field.dim = s.model.hidden_dim;
        field.position_offsets = s.position_offsets;
        field.data.resize(static_cast<std::size_t>(field.examples) * P *
                          field.layers * field.dim);
        for (int e = 0; e < field.examples; ++e) {
          for (int p = 0; p < P; ++p) {
            const int abs_pos = s.prompt_len + s.position_offsets[p];
            for (int l = 0; l < field.layers; ++l) {
              const auto row = cache.layer_inputs[l].row(
                  static_cast<Index>(e) * s.prompt_len + abs_pos);
              float* dst = field.data.data() + field.flat_index(e, p, l, 0);
              for (int d = 0; d < field.dim; ++d) {
                dst[d] = static_cast<float>(row[d]);
              }
            }
          }
        }
        write_field(field, man);
      }
    }
  }

  json truth_json;
  for (const auto& [ckpt, entry] : truth) {
    json e;
    e["layer"] = entry.layer;
    e["direction"] = direction_to_json(entry.direction);
    e["strength"] = entry.strength;
    e["rotation_deg"] = entry.rotation_deg;
    if (!entry.aux.empty()) {
      json aux = json::array();
      for (const auto& a : entry.aux) {
        aux.push_back({{"layer", a.layer},
                       {"direction", direction_to_json(a.direction)},
                       {"strength", a.strength}});
      }
      e["aux"] = aux;
    }
    truth_json["checkpoints"][std::to_string(ckpt)] = std::move(e);
  }
  write_json_file(out_dir / "ground_truth.json", truth_json);

  json model_json;
  model_json["model"] = {{"vocab_size", s.model.vocab_size},
                         {"hidden_dim", s.model.hidden_dim},
                         {"layer_count", s.model.layer_count},
                         {"mlp_hidden", s.model.mlp_hidden},
                         {"seed", s.model.seed},
                         {"activation", to_string(s.model.activation)}};
  model_json["prompt_seed"] = run.prompt_seed;
  model_json["prompt_len"] = run.prompt_len;
  for (const auto& [ckpt, sites] : run.plants) {
    json arr = json::array();
    for (const auto& p : sites) {
      arr.push_back({{"layer", p.layer},
                     {"direction", direction_to_json(p.direction)},
                     {"strength", p.strength}});
    }
    model_json["plants"][std::to_string(ckpt)] = std::move(arr);
  }
  write_json_file(out_dir / "model.json", model_json);

  save_manifest(man);
  return run;
}

SyntheticRun load_synthetic_run(const fs::path& run_dir) {
  SyntheticRun run;
  run.manifest = load_manifest(run_dir);

  const json j = load_json_file(run_dir / "model.json");
  try {
    const json& m = j.at("model");
    run.model_config.vocab_size = m.at("vocab_size").get<int>();
    run.model_config.hidden_dim = m.at("hidden_dim").get<int>();
    run.model_config.layer_count = m.at("layer_count").get<int>();
    run.model_config.mlp_hidden = m.at("mlp_hidden").get<int>();
    run.model_config.seed = m.at("seed").get<std::uint64_t>();
    run.model_config.activation =
        activation_from_string(m.at("activation").get<std::string>());
    run.prompt_seed = j.at("prompt_seed").get<std::uint64_t>();
    run.prompt_len = j.at("prompt_len").get<int>();
    for (const auto& [key, sites] : j.at("plants").items()) {
      std::vector<PlantedCarrier> list;
      for (const auto& p : sites) {
        list.push_back({p.at("layer").get<int>(),
                        direction_from_json(p.at("direction")),
                        p.at("strength").get<double>()});
      }
      run.plants[std::stoi(key)] = std::move(list);
    }
  } catch (const json::exception& e) {
    throw ValidationError("model.json: schema error: " + std::string(e.what()));
  }

  if (run.model_config.hidden_dim != run.manifest.hidden_dim ||
      run.model_config.layer_count != run.manifest.layer_count) {
    throw ValidationError("model.json: model shape disagrees with manifest");
  }
  for (const auto& ck : run.manifest.checkpoints) {
    if (run.plants.find(ck.id) == run.plants.end()) {
      throw ValidationError("model.json: missing plant schedule for checkpoint " +
                            std::to_string(ck.id));
    }
  }
  return run;
}

std::map<int, GroundTruthEntry> load_ground_truth(const fs::path& run_dir) {
  const json j = load_json_file(run_dir / "ground_truth.json");
  std::map<int, GroundTruthEntry> truth;
  try {
    for (const auto& [key, e] : j.at("checkpoints").items()) {
      GroundTruthEntry entry;
      entry.layer = e.at("layer").get<int>();
      entry.direction = direction_from_json(e.at("direction"));
      entry.strength = e.at("strength").get<double>();
      entry.rotation_deg = e.at("rotation_deg").get<double>();
      if (e.contains("aux")) {
        for (const auto& a : e.at("aux")) {
          entry.aux.push_back({a.at("layer").get<int>(),
                               direction_from_json(a.at("direction")),
                               a.at("strength").get<double>()});
        }
      }
      truth[std::stoi(key)] = std::move(entry);
    }
  } catch (const json::exception& e) {
    throw ValidationError("ground_truth.json: schema error: " +
                          std::string(e.what()));
  }
  return truth;
}

}  // namespace carrierscope

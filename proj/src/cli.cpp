#include "carrierscope/cli.hpp"

#include "carrierscope/behavior.hpp"
#include "carrierscope/carriers.hpp"
#include "carrierscope/emit.hpp"
#include "carrierscope/errors.hpp"
#include "carrierscope/interventions.hpp"
#include "carrierscope/monitor.hpp"
#include "carrierscope/parallel.hpp"
#include "carrierscope/scenario.hpp"
#include "carrierscope/spectrum.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>

namespace carrierscope {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Flag-value helpers

std::vector<std::string> split_commas(const std::string& text) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(text);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

std::vector<int> parse_int_list(const std::string& text, const char* flag) {
  std::vector<int> out;
  for (const std::string& cell : split_commas(text)) {
    int value = 0;
    const auto [ptr, ec] =
        std::from_chars(cell.data(), cell.data() + cell.size(), value);
    if (ec != std::errc() || ptr != cell.data() + cell.size()) {
      throw UsageError(std::string(flag) + ": '" + cell +
                       "' is not an integer");
    }
    out.push_back(value);
  }
  if (out.empty()) throw UsageError(std::string(flag) + ": empty list");
  return out;
}

std::vector<double> parse_double_list(const std::string& text,
                                      const char* flag) {
  std::vector<double> out;
  for (const std::string& cell : split_commas(text)) {
    try {
      std::size_t used = 0;
      const double value = std::stod(cell, &used);
      if (used != cell.size()) throw std::invalid_argument(cell);
      out.push_back(value);
    } catch (const std::exception&) {
      throw UsageError(std::string(flag) + ": '" + cell +
                       "' is not a number");
    }
  }
  if (out.empty()) throw UsageError(std::string(flag) + ": empty list");
  return out;
}

// ---------------------------------------------------------------------------
// JSON config merge: config keys become synthetic flags placed before the
// real command line, and every option takes its last occurrence, so explicit
// flags always win.

std::string config_value_to_token(const json& value, const std::string& key) {
  if (value.is_string()) return value.get<std::string>();
  if (value.is_number() || value.is_boolean()) return value.dump();
  if (value.is_array()) {
    std::string joined;
    for (std::size_t i = 0; i < value.size(); ++i) {
      if (i > 0) joined.push_back(',');
      const json& item = value[i];
      if (item.is_string()) {
        joined += item.get<std::string>();
      } else if (item.is_number()) {
        joined += item.dump();
      } else {
        throw UsageError("config: unsupported array element under '" + key +
                         "'");
      }
    }
    return joined;
  }
  throw UsageError("config: unsupported value type under '" + key + "'");
}

std::vector<std::string> config_tokens(const fs::path& path) {
  std::ifstream input(path);
  if (!input) throw IoError("cannot open config " + path.string());
  json config;
  try {
    input >> config;
  } catch (const json::exception& e) {
    throw UsageError("config " + path.string() + " is not valid JSON: " +
                     e.what());
  }
  if (!config.is_object()) {
    throw UsageError("config " + path.string() + " must be a JSON object");
  }
  std::vector<std::string> tokens;
  for (const auto& [key, value] : config.items()) {
    std::string flag = key;
    std::replace(flag.begin(), flag.end(), '_', '-');
    tokens.push_back("--" + flag);
    tokens.push_back(config_value_to_token(value, key));
  }
  return tokens;
}

// Extracts --config <path> / --config=<path> ahead of CLI11 parsing so the
// expansion can precede the remaining flags.
std::optional<std::string> find_config_path(
    const std::vector<std::string>& args) {
  std::optional<std::string> found;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size()) throw UsageError("--config needs a path");
      found = args[i + 1];
    } else if (args[i].rfind("--config=", 0) == 0) {
      found = args[i].substr(9);
    }
  }
  return found;
}

// ---------------------------------------------------------------------------
// Shared geometry pipeline (suite, intervene, report)

struct GeometryOptions {
  std::string anchors_csv;    // empty -> every checkpoint
  std::string positions_csv;  // empty -> container offsets
  std::string layers_csv;     // empty -> all observable layers 1..L-1
  double beta_kl = 1.0;
  double kl_threshold = 0.10;
  double addition_coefficient = 1.0;
  int angles_k = 3;
  int threads = 0;
};

struct ResolvedGeometry {
  std::vector<int> anchors;
  std::vector<int> positions;
  std::vector<int> layers;
};

ResolvedGeometry resolve_geometry(const SyntheticRun& run,
                                  const GeometryOptions& opt) {
  ResolvedGeometry out;
  if (opt.anchors_csv.empty()) {
    for (const CheckpointEntry& c : run.manifest.checkpoints) {
      out.anchors.push_back(c.id);
    }
  } else {
    out.anchors = parse_int_list(opt.anchors_csv, "--anchors");
    std::sort(out.anchors.begin(), out.anchors.end());
    if (std::adjacent_find(out.anchors.begin(), out.anchors.end()) !=
        out.anchors.end()) {
      throw UsageError("--anchors: duplicate checkpoint id");
    }
    for (int a : out.anchors) {
      if (!run.manifest.has_checkpoint(a)) {
        throw UsageError("--anchors: checkpoint " + std::to_string(a) +
                         " is not in the manifest");
      }
    }
    const int reference = run.manifest.reference().id;
    if (std::find(out.anchors.begin(), out.anchors.end(), reference) ==
        out.anchors.end()) {
      throw UsageError("--anchors must include the reference checkpoint " +
                       std::to_string(reference));
    }
  }
  out.positions = opt.positions_csv.empty()
                      ? run.manifest.position_offsets
                      : parse_int_list(opt.positions_csv, "--positions");
  if (opt.layers_csv.empty()) {
    for (int l = 1; l < run.model_config.layer_count; ++l) {
      out.layers.push_back(l);
    }
  } else {
    out.layers = parse_int_list(opt.layers_csv, "--layers");
  }
  if (opt.angles_k < 1) throw UsageError("--angles-k must be >= 1");
  return out;
}

struct AnchorAnalysis {
  int anchor = 0;
  CandidateLibrary library;
  std::vector<CarrierScore> scores;
  RankedCandidates ranked;
  SpectrumSummary spectrum;
  Mat basis;
  PrincipalAngleReport angles;
};

AnchorAnalysis analyze_anchor(const SyntheticRun& run, int anchor,
                              const ResolvedGeometry& grid,
                              const GeometryOptions& opt) {
  AnchorAnalysis out;
  out.anchor = anchor;
  const ActivationField harm_train =
      load_field(run.manifest, anchor, Split::Harmful, Role::Train);
  const ActivationField safe_train =
      load_field(run.manifest, anchor, Split::Safe, Role::Train);
  const ActivationField harm_val =
      load_field(run.manifest, anchor, Split::Harmful, Role::Val);
  const ActivationField safe_val =
      load_field(run.manifest, anchor, Split::Safe, Role::Val);

  out.library =
      build_library(harm_train, safe_train, grid.positions, grid.layers);
  const Baselines baselines = compute_baselines(harm_val, safe_val);
  const ToyModel model = run.checkpoint_model(anchor);
  ScoringConfig scoring;
  scoring.beta_kl = opt.beta_kl;
  scoring.kl_threshold = opt.kl_threshold;
  scoring.addition_coefficient = opt.addition_coefficient;
  const CandidateScorer scorer(model, run.prompts(Split::Harmful, Role::Val),
                               run.prompts(Split::Safe, Role::Val), baselines,
                               scoring);
  out.scores = scorer.score_all(out.library, resolve_thread_count(opt.threads));
  out.ranked = rank_admissible(out.library, out.scores);

  const Mat flat = flatten_field(out.library);
  out.spectrum = singular_spectrum(flat, opt.angles_k);
  out.spectrum.checkpoint = anchor;
  out.basis = topk_subspace(flat, opt.angles_k);
  return out;
}

std::vector<AnchorAnalysis> analyze_anchors(const SyntheticRun& run,
                                            const GeometryOptions& opt) {
  const ResolvedGeometry grid = resolve_geometry(run, opt);
  std::vector<AnchorAnalysis> out;
  out.reserve(grid.anchors.size());
  for (int anchor : grid.anchors) {
    out.push_back(analyze_anchor(run, anchor, grid, opt));
  }
  const int reference = run.manifest.reference().id;
  const auto ref_it =
      std::find_if(out.begin(), out.end(), [&](const AnchorAnalysis& a) {
        return a.anchor == reference;
      });
  for (AnchorAnalysis& a : out) {
    a.angles = principal_angles(a.basis, ref_it->basis, opt.angles_k);
    a.angles.checkpoint = a.anchor;
    a.angles.reference_checkpoint = reference;
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV renderers

constexpr int kGeomDecimals = 6;
constexpr int kRateDecimals = 3;
constexpr int kDeltaDecimals = 4;

std::string carriers_csv(const AnchorAnalysis& a) {
  CsvBuilder csv({"position", "layer", "norm", "s_refuse", "s_comply", "kl",
                  "kl_max", "s_total", "admissible", "is_best"});
  const CarrierScore* best =
      a.ranked.best.has_value() ? &*a.ranked.best : nullptr;
  std::size_t i = 0;
  for (const CandidateDirection& cand : a.library.items) {
    const CarrierScore& s = a.scores[i++];
    const bool is_best = best != nullptr &&
                         best->position_offset == s.position_offset &&
                         best->layer == s.layer;
    csv.add_row({std::to_string(s.position_offset), std::to_string(s.layer),
                 format_fixed(cand.norm, kGeomDecimals),
                 format_fixed(s.s_refuse, kGeomDecimals),
                 format_fixed(s.s_comply, kGeomDecimals),
                 format_fixed(s.kl, kGeomDecimals),
                 format_fixed(s.kl_max, kGeomDecimals),
                 format_fixed(s.s_total, kGeomDecimals),
                 s.admissible ? "1" : "0", is_best ? "1" : "0"});
  }
  return csv.str();
}

std::string spectrum_csv(const SpectrumSummary& s) {
  CsvBuilder csv({"rank", "sigma", "energy", "erank", "participation_ratio",
                  "k90", "k95"});
  for (Index i = 0; i < s.singular_values.size(); ++i) {
    csv.add_row({std::to_string(i + 1),
                 format_fixed(s.singular_values[i], kGeomDecimals),
                 format_fixed(s.energies[i], kGeomDecimals),
                 format_fixed(s.erank, kGeomDecimals),
                 format_fixed(s.participation_ratio, kGeomDecimals),
                 std::to_string(s.k90), std::to_string(s.k95)});
  }
  return csv.str();
}

std::string angles_csv(const PrincipalAngleReport& r) {
  CsvBuilder csv({"k", "angle_deg"});
  for (Index i = 0; i < r.angles_deg.size(); ++i) {
    csv.add_row({std::to_string(i + 1),
                 format_fixed(r.angles_deg[i], kGeomDecimals)});
  }
  return csv.str();
}

std::string anchors_summary_csv(const std::vector<AnchorAnalysis>& analyses) {
  CsvBuilder csv({"anchor", "best_pos", "best_layer", "best_kl", "s_refuse",
                  "s_comply", "s_total", "erank", "pr", "k90", "k95", "angle1",
                  "angle2", "angle3"});
  for (const AnchorAnalysis& a : analyses) {
    std::vector<std::string> row;
    row.push_back(std::to_string(a.anchor));
    if (a.ranked.best.has_value()) {
      const CarrierScore& b = *a.ranked.best;
      row.push_back(std::to_string(b.position_offset));
      row.push_back(std::to_string(b.layer));
      row.push_back(format_fixed(b.kl, kGeomDecimals));
      row.push_back(format_fixed(b.s_refuse, kGeomDecimals));
      row.push_back(format_fixed(b.s_comply, kGeomDecimals));
      row.push_back(format_fixed(b.s_total, kGeomDecimals));
    } else {
      for (int i = 0; i < 6; ++i) row.push_back("--");
    }
    row.push_back(format_fixed(a.spectrum.erank, kGeomDecimals));
    row.push_back(format_fixed(a.spectrum.participation_ratio, kGeomDecimals));
    row.push_back(std::to_string(a.spectrum.k90));
    row.push_back(std::to_string(a.spectrum.k95));
    for (int i = 0; i < 3; ++i) {
      row.push_back(i < a.angles.angles_deg.size()
                        ? format_fixed(a.angles.angles_deg[i], kGeomDecimals)
                        : std::string("--"));
    }
    csv.add_row(std::move(row));
  }
  return csv.str();
}

std::string monitor_trace_csv(const MonitorTrace& trace, int n_candidates) {
  CsvBuilder csv({"checkpoint", "selected_position", "selected_layer",
                  "direction_norm", "projection_gap", "cos_to_anchor",
                  "cos_to_previous", "cos_to_anchor_fixed", "n_admissible",
                  "n_candidates"});
  for (const MonitorRecord& r : trace.records) {
    std::vector<std::string> row;
    row.push_back(std::to_string(r.checkpoint));
    if (r.has_admissible) {
      row.push_back(std::to_string(r.selected_position));
      row.push_back(std::to_string(r.selected_layer));
    } else {
      row.push_back("--");
      row.push_back("--");
    }
    row.push_back(format_fixed(r.direction_norm, kGeomDecimals));
    row.push_back(format_fixed(r.projection_gap, kGeomDecimals));
    row.push_back(format_fixed(r.cos_to_anchor, kGeomDecimals));
    row.push_back(format_fixed(r.cos_to_previous, kGeomDecimals));
    row.push_back(format_fixed(r.cos_to_anchor_fixed, kGeomDecimals));
    row.push_back(std::to_string(r.n_admissible));
    row.push_back(std::to_string(n_candidates));
    csv.add_row(std::move(row));
  }
  return csv.str();
}

std::string intervention_csv(const std::string& regime,
                             const InterventionResult& result) {
  CsvBuilder csv({"regime", "anchor", "mode", "layer", "metric", "baseline",
                  "post", "delta"});
  const auto row = [&](const char* metric, double base, double post,
                       double delta) {
    csv.add_row({regime, std::to_string(result.checkpoint),
                 to_string(result.spec.mode), std::to_string(result.spec.layer),
                 metric, format_fixed(base, kGeomDecimals),
                 format_fixed(post, kGeomDecimals),
                 format_fixed(delta, kGeomDecimals)});
  };
  row("harm_refusal_projection", result.baseline.harm_refusal_projection,
      result.post.harm_refusal_projection,
      result.deltas.harm_refusal_projection);
  row("safe_refusal_projection", result.baseline.safe_refusal_projection,
      result.post.safe_refusal_projection,
      result.deltas.safe_refusal_projection);
  row("mean_kl_vs_baseline", result.baseline.mean_kl_vs_baseline,
      result.post.mean_kl_vs_baseline, result.deltas.mean_kl_vs_baseline);
  return csv.str();
}

std::string rate_or_missing(const std::optional<Fraction>& value) {
  return value.has_value() ? render_fraction(*value, kRateDecimals) : "--";
}

std::string frontier_csv(const FrontierReport& report) {
  CsvBuilder csv({"anchor", "harmbench_asr", "xstest_full", "xstest_partial",
                  "xstest_any", "strongreject_mean", "strict_utility",
                  "lenient_utility", "mean_helpfulness", "refusal_rate",
                  "empty_rate"});
  for (const AnchorBundle& b : report.rows) {
    std::vector<std::string> row;
    row.push_back(b.anchor_id);
    row.push_back(b.attacks ? render_fraction(b.attacks->asr(), kRateDecimals)
                            : "--");
    if (b.xstest) {
      row.push_back(render_fraction(b.xstest->full_rate(), kRateDecimals));
      row.push_back(render_fraction(b.xstest->partial_rate(), kRateDecimals));
      row.push_back(render_fraction(b.xstest->any_rate(), kRateDecimals));
    } else {
      row.insert(row.end(), {"--", "--", "--"});
    }
    row.push_back(b.strongreject
                      ? render_fraction(b.strongreject->mean(), kRateDecimals)
                      : "--");
    if (b.utility) {
      row.push_back(render_fraction(b.utility->strict_utility(), kRateDecimals));
      row.push_back(
          render_fraction(b.utility->lenient_utility(), kRateDecimals));
      row.push_back(
          render_fraction(b.utility->mean_helpfulness(), kRateDecimals));
      row.push_back(render_fraction(b.utility->refusal_rate(), kRateDecimals));
      row.push_back(render_fraction(b.utility->empty_rate(), kRateDecimals));
    } else {
      row.insert(row.end(), {"--", "--", "--", "--", "--"});
    }
    csv.add_row(std::move(row));
  }
  // Explicitly the mean over anchors, not a dense trajectory mean.
  std::vector<std::string> mean_row(11, "--");
  mean_row[0] = "anchor_mean";
  mean_row[1] = rate_or_missing(report.anchor_mean_asr);
  csv.add_row(std::move(mean_row));
  return csv.str();
}

std::string deltas_csv(const MetricBundle& baseline, const MetricBundle& post,
                       const MetricBundle& deltas) {
  CsvBuilder csv({"metric", "baseline", "post", "delta"});
  for (const auto& [metric, delta] : deltas) {
    csv.add_row({metric, render_fraction(baseline.at(metric), kDeltaDecimals),
                 render_fraction(post.at(metric), kDeltaDecimals),
                 render_fraction(delta, kDeltaDecimals)});
  }
  return csv.str();
}

// ---------------------------------------------------------------------------
// Behavior bundle loading

struct BehaviorInputs {
  std::vector<AnchorBundle> anchors;
  std::optional<std::pair<std::string, std::string>> delta;  // baseline, post
};

AnchorBundle load_bundle(const std::string& id, const fs::path& base,
                         const std::string& utility,
                         const std::string& attacks, const std::string& xstest,
                         const std::string& strongreject) {
  const auto resolve = [&](const std::string& p) {
    const fs::path path(p);
    return path.is_absolute() ? path : base / path;
  };
  AnchorBundle bundle;
  bundle.anchor_id = id;
  if (!utility.empty()) {
    bundle.utility = parse_utility_annotations(resolve(utility).string());
  }
  if (!attacks.empty()) {
    bundle.attacks = parse_attack_judgments(resolve(attacks).string());
  }
  if (!xstest.empty()) {
    bundle.xstest = parse_xstest_labels(resolve(xstest).string());
  }
  if (!strongreject.empty()) {
    bundle.strongreject = parse_strongreject(resolve(strongreject).string());
  }
  return bundle;
}

BehaviorInputs load_behavior_config(const fs::path& path) {
  std::ifstream input(path);
  if (!input) throw IoError("cannot open " + path.string());
  json config;
  try {
    input >> config;
  } catch (const json::exception& e) {
    throw ValidationError("behavior config " + path.string() +
                          " is not valid JSON: " + e.what());
  }
  if (!config.is_object() || !config.contains("anchors") ||
      !config["anchors"].is_array()) {
    throw ValidationError("behavior config needs an 'anchors' array");
  }
  if (config["anchors"].empty()) {
    throw ValidationError("behavior config has no anchors");
  }
  BehaviorInputs inputs;
  const fs::path base = path.parent_path();
  for (const json& entry : config["anchors"]) {
    if (!entry.is_object() || !entry.contains("id")) {
      throw ValidationError("behavior config anchor entries need an 'id'");
    }
    const auto field = [&](const char* key) {
      return entry.contains(key) ? entry[key].get<std::string>()
                                 : std::string();
    };
    const std::string id = entry["id"].is_string()
                               ? entry["id"].get<std::string>()
                               : entry["id"].dump();
    inputs.anchors.push_back(load_bundle(id, base, field("utility"),
                                         field("attacks"), field("xstest"),
                                         field("strongreject")));
  }
  if (config.contains("delta")) {
    const json& d = config["delta"];
    if (!d.is_object() || !d.contains("baseline") || !d.contains("post")) {
      throw ValidationError(
          "behavior config 'delta' needs 'baseline' and 'post' anchor ids");
    }
    inputs.delta = {{d["baseline"].get<std::string>(),
                     d["post"].get<std::string>()}};
  }
  return inputs;
}

const AnchorBundle& find_bundle(const std::vector<AnchorBundle>& anchors,
                                const std::string& id) {
  for (const AnchorBundle& b : anchors) {
    if (b.anchor_id == id) return b;
  }
  throw ValidationError("behavior: no anchor with id '" + id + "'");
}

// ---------------------------------------------------------------------------
// Subcommand option structs and handlers

struct SynthOptions {
  std::string kind = "static";
  std::string out;
  std::uint64_t seed = 1;
  std::string checkpoints_csv = "0,50,100,250,500";
  double strength = 320.0;
  int carrier_layer = 9;
  int early_layer = 1;
  int late_layer = 9;
  int switch_step = 100;
  std::string schedule_csv;
  std::string aux_layers_csv = "1,3";
  double aux_fraction = 0.125;
  int train_count = 256;
  int val_count = 96;
  int eval_count = 48;
  int prompt_len = 8;
  std::string positions_csv = "-5,-4,-3,-2,-1";
  int vocab = 32;
  int hidden_dim = 64;
  int layer_count = 12;
  int mlp_hidden = 128;
  std::string activation = "tanh";
  std::uint64_t model_seed = 0;
  std::string run_id;
};

ScenarioSpec spec_from_options(const SynthOptions& opt) {
  ScenarioSpec spec;
  spec.kind = scenario_kind_from_string(opt.kind);
  spec.checkpoints = parse_int_list(opt.checkpoints_csv, "--checkpoints");
  spec.strength = opt.strength;
  spec.carrier_layer = opt.carrier_layer;
  spec.early_layer = opt.early_layer;
  spec.late_layer = opt.late_layer;
  spec.switch_step = opt.switch_step;
  if (!opt.schedule_csv.empty()) {
    spec.rotation_schedule = parse_double_list(opt.schedule_csv, "--schedule");
  } else if (spec.kind == ScenarioKind::DriftOnly) {
    // Default drift: 10 degrees per checkpoint step, starting at 0.
    for (std::size_t i = 0; i < spec.checkpoints.size(); ++i) {
      spec.rotation_schedule.push_back(10.0 * static_cast<double>(i));
    }
  }
  spec.aux_layers = parse_int_list(opt.aux_layers_csv, "--aux-layers");
  spec.aux_strength_fraction = opt.aux_fraction;
  spec.train_count = opt.train_count;
  spec.val_count = opt.val_count;
  spec.eval_count = opt.eval_count;
  spec.prompt_len = opt.prompt_len;
  spec.position_offsets = parse_int_list(opt.positions_csv, "--positions");
  spec.seed = opt.seed;
  spec.model.vocab_size = opt.vocab;
  spec.model.hidden_dim = opt.hidden_dim;
  spec.model.layer_count = opt.layer_count;
  spec.model.mlp_hidden = opt.mlp_hidden;
  spec.model.seed = opt.model_seed;
  try {
    spec.model.activation = activation_from_string(opt.activation);
  } catch (const ValidationError& e) {
    throw UsageError(e.what());
  }
  spec.run_id = opt.run_id;
  return spec;
}

json geometry_config_json(const SyntheticRun& run, const ResolvedGeometry& g,
                          const GeometryOptions& opt) {
  json config;
  config["run_id"] = run.manifest.run_id;
  config["anchors"] = g.anchors;
  config["positions"] = g.positions;
  config["layers"] = g.layers;
  config["beta_kl"] = opt.beta_kl;
  config["kl_threshold"] = opt.kl_threshold;
  config["addition_coefficient"] = opt.addition_coefficient;
  config["angles_k"] = opt.angles_k;
  config["threads"] = resolve_thread_count(opt.threads);
  return config;
}

void emit_suite_files(AtomicEmitter& emitter,
                      const std::vector<AnchorAnalysis>& analyses) {
  for (const AnchorAnalysis& a : analyses) {
    const std::string tag = std::to_string(a.anchor);
    emitter.write_text("carriers_" + tag + ".csv", carriers_csv(a));
    emitter.write_text("spectrum_" + tag + ".csv", spectrum_csv(a.spectrum));
    emitter.write_text("angles_" + tag + ".csv", angles_csv(a.angles));
  }
  emitter.write_text("anchors_summary.csv", anchors_summary_csv(analyses));
}

int cmd_suite(const std::string& run_path, const std::string& out_dir,
              const GeometryOptions& opt) {
  const SyntheticRun run = load_synthetic_run(run_path);
  const ResolvedGeometry grid = resolve_geometry(run, opt);
  const std::vector<AnchorAnalysis> analyses = analyze_anchors(run, opt);
  AtomicEmitter emitter(out_dir);
  emit_suite_files(emitter, analyses);
  json config = geometry_config_json(run, grid, opt);
  config["command"] = "suite";
  emitter.write_json("resolved_config.json", config);
  emitter.commit();
  return 0;
}

struct MonitorOptions {
  std::string positions_csv;
  std::string layers_csv;
  double kl_threshold = 0.10;
  double beta_kl = 1.0;
  double addition_coefficient = 1.0;
  int batch_size = 8;
  int train_harmful = 0;
  int train_harmless = 0;
  int val_harmful = 0;
  int val_harmless = 0;
  int threads = 0;
};

MonitorConfig monitor_config_from_options(const SyntheticRun& run,
                                          const MonitorOptions& opt) {
  MonitorConfig config;
  config.positions = opt.positions_csv.empty()
                         ? run.manifest.position_offsets
                         : parse_int_list(opt.positions_csv, "--positions");
  config.candidate_layers =
      opt.layers_csv.empty()
          ? default_monitor_layers(run.model_config.layer_count)
          : parse_int_list(opt.layers_csv, "--layers");
  config.kl_threshold = opt.kl_threshold;
  config.beta_kl = opt.beta_kl;
  config.addition_coefficient = opt.addition_coefficient;
  config.batch_size = opt.batch_size;
  config.train_harmful = opt.train_harmful;
  config.train_harmless = opt.train_harmless;
  config.val_harmful = opt.val_harmful;
  config.val_harmless = opt.val_harmless;
  config.threads = opt.threads;
  return config;
}

json monitor_config_json(const SyntheticRun& run, const MonitorConfig& config) {
  json out;
  out["run_id"] = run.manifest.run_id;
  out["positions"] = config.positions;
  out["candidate_layers"] = config.candidate_layers;
  out["kl_threshold"] = config.kl_threshold;
  out["beta_kl"] = config.beta_kl;
  out["addition_coefficient"] = config.addition_coefficient;
  out["batch_size"] = config.batch_size;
  out["train_counts"] = {config.train_harmful, config.train_harmless};
  out["val_counts"] = {config.val_harmful, config.val_harmless};
  out["threads"] = resolve_thread_count(config.threads);
  return out;
}

int cmd_monitor(const std::string& run_path, const std::string& out_dir,
                const MonitorOptions& opt) {
  const SyntheticRun run = load_synthetic_run(run_path);
  const MonitorConfig config = monitor_config_from_options(run, opt);
  const MonitorTrace trace = monitor_run(run, config);
  const int n_candidates = static_cast<int>(config.positions.size()) *
                           static_cast<int>(config.candidate_layers.size());
  AtomicEmitter emitter(out_dir);
  emitter.write_text("monitor_trace.csv",
                     monitor_trace_csv(trace, n_candidates));
  json config_echo = monitor_config_json(run, config);
  config_echo["command"] = "monitor";
  emitter.write_json("resolved_config.json", config_echo);
  emitter.commit();
  return 0;
}

struct InterveneOptions {
  int anchor = std::numeric_limits<int>::min();  // sentinel: reference
  std::string mode = "single_direction";
  int layer = -1;        // -1: best admissible layer
  int position = 1;      // positive sentinel: best admissible position
  double coefficient = 1.0;
};

InterventionResult compute_intervention(const SyntheticRun& run,
                                        const AnchorAnalysis& analysis,
                                        InterventionMode mode, int layer,
                                        int position, double coefficient) {
  const CandidateDirection& cand = analysis.library.at(position, layer);
  InterventionSpec spec;
  spec.mode = mode;
  spec.layer = layer;
  switch (mode) {
    case InterventionMode::SingleDirection:
      if (cand.norm <= 0.0) {
        throw ValidationError("intervene: selected candidate has zero norm");
      }
      spec.u = cand.vector / cand.norm;
      break;
    case InterventionMode::Top3Subspace:
      spec.basis = build_top3_basis(analysis.library, layer);
      if (spec.basis.cols() == 0) {
        throw ValidationError("intervene: candidate rows at layer " +
                              std::to_string(layer) + " are all zero");
      }
      break;
    case InterventionMode::Addition:
      spec.u = cand.vector;
      spec.coefficient = coefficient;
      break;
  }
  const ActivationField harm_val =
      load_field(run.manifest, analysis.anchor, Split::Harmful, Role::Val);
  const ActivationField safe_val =
      load_field(run.manifest, analysis.anchor, Split::Safe, Role::Val);
  const Baselines baselines = compute_baselines(harm_val, safe_val);
  const PromptSet prompts =
      merge_prompt_sets(run.prompts(Split::Harmful, Role::Eval),
                        run.prompts(Split::Safe, Role::Eval));
  return run_intervention(run.checkpoint_model(analysis.anchor), spec, prompts,
                          baselines, analysis.anchor);
}

std::pair<int, int> select_site(const AnchorAnalysis& analysis,
                                const InterveneOptions& opt) {
  int layer = opt.layer;
  int position = opt.position;
  if (layer < 0 || position > 0) {
    if (!analysis.ranked.best.has_value()) {
      throw ValidationError(
          "intervene: no admissible candidate to select; pass --layer and "
          "--position explicitly");
    }
    if (layer < 0) layer = analysis.ranked.best->layer;
    if (position > 0) position = analysis.ranked.best->position_offset;
  }
  return {layer, position};
}

int cmd_intervene(const std::string& run_path, const std::string& out_dir,
                  const GeometryOptions& geom, const InterveneOptions& opt) {
  const SyntheticRun run = load_synthetic_run(run_path);
  const ResolvedGeometry grid = resolve_geometry(run, geom);
  const int anchor = opt.anchor == std::numeric_limits<int>::min()
                         ? run.manifest.reference().id
                         : opt.anchor;
  if (!run.manifest.has_checkpoint(anchor)) {
    throw UsageError("--anchor: checkpoint " + std::to_string(anchor) +
                     " is not in the manifest");
  }
  const InterventionMode mode = intervention_mode_from_string(opt.mode);
  const AnchorAnalysis analysis = analyze_anchor(run, anchor, grid, geom);
  const auto [layer, position] = select_site(analysis, opt);
  const InterventionResult result = compute_intervention(
      run, analysis, mode, layer, position, opt.coefficient);

  AtomicEmitter emitter(out_dir);
  emitter.write_text(
      "intervention_" + std::to_string(anchor) + "_" + opt.mode + ".csv",
      intervention_csv(run.manifest.regime_label, result));
  json config = geometry_config_json(run, grid, geom);
  config["command"] = "intervene";
  config["anchor"] = anchor;
  config["mode"] = opt.mode;
  config["layer"] = layer;
  config["position"] = position;
  config["coefficient"] = opt.coefficient;
  emitter.write_json("resolved_config.json", config);
  emitter.commit();
  return 0;
}

struct BehaviorOptions {
  std::string anchors_config;
  std::string anchor_id = "anchor";
  std::string utility;
  std::string attacks;
  std::string xstest;
  std::string strongreject;
};

int cmd_behavior(const std::string& out_dir, const BehaviorOptions& opt) {
  BehaviorInputs inputs;
  if (!opt.anchors_config.empty()) {
    inputs = load_behavior_config(opt.anchors_config);
  } else {
    if (opt.utility.empty() && opt.attacks.empty() && opt.xstest.empty() &&
        opt.strongreject.empty()) {
      throw UsageError(
          "behavior: pass --anchors-config or at least one input file");
    }
    inputs.anchors.push_back(load_bundle(opt.anchor_id, fs::current_path(),
                                         opt.utility, opt.attacks, opt.xstest,
                                         opt.strongreject));
  }
  const FrontierReport report = frontier_table(inputs.anchors);
  AtomicEmitter emitter(out_dir);
  emitter.write_text("frontier.csv", frontier_csv(report));
  if (inputs.delta.has_value()) {
    const MetricBundle baseline =
        bundle_metrics(find_bundle(inputs.anchors, inputs.delta->first));
    const MetricBundle post =
        bundle_metrics(find_bundle(inputs.anchors, inputs.delta->second));
    const MetricBundle deltas = intervention_delta(baseline, post);
    emitter.write_text("deltas.csv", deltas_csv(baseline, post, deltas));
  }
  json config;
  config["command"] = "behavior";
  config["anchors"] = json::array();
  for (const AnchorBundle& b : inputs.anchors) {
    config["anchors"].push_back(b.anchor_id);
  }
  if (inputs.delta) {
    config["delta"] = {{"baseline", inputs.delta->first},
                       {"post", inputs.delta->second}};
  }
  emitter.write_json("resolved_config.json", config);
  emitter.commit();
  return 0;
}

// Figure-source tables: per-panel CSVs with the same column shapes as the
// paper's five figures, populated from whatever inputs this run provides
// ("--" for absent metrics).

const AnchorBundle* bundle_for_anchor(const std::vector<AnchorBundle>& bundles,
                                      int anchor) {
  const std::string id = std::to_string(anchor);
  for (const AnchorBundle& b : bundles) {
    if (b.anchor_id == id) return &b;
  }
  return nullptr;
}

void emit_figures(AtomicEmitter& emitter,
                  const std::vector<AnchorAnalysis>& analyses,
                  const std::vector<InterventionResult>& interventions,
                  const std::vector<AnchorBundle>& bundles,
                  const std::string& regime) {
  CsvBuilder fig1({"anchor", "harmbench_asr", "xstest_any",
                   "strongreject_mean"});
  CsvBuilder fig2({"anchor", "strict_utility", "lenient_utility",
                   "mean_helpfulness", "refusal_rate", "empty_rate"});
  CsvBuilder fig3({"anchor", "best_position", "best_layer", "s_total",
                   "s_refuse", "erank", "participation_ratio"});
  CsvBuilder fig5({"anchor", "angle1", "angle2", "angle3", "harmbench_asr"});
  for (const AnchorAnalysis& a : analyses) {
    const std::string tag = std::to_string(a.anchor);
    const AnchorBundle* b = bundle_for_anchor(bundles, a.anchor);
    const std::string asr =
        b != nullptr && b->attacks
            ? render_fraction(b->attacks->asr(), kRateDecimals)
            : "--";
    fig1.add_row({tag, asr,
                  b != nullptr && b->xstest
                      ? render_fraction(b->xstest->any_rate(), kRateDecimals)
                      : "--",
                  b != nullptr && b->strongreject
                      ? render_fraction(b->strongreject->mean(), kRateDecimals)
                      : "--"});
    if (b != nullptr && b->utility) {
      const UtilityTable& u = *b->utility;
      fig2.add_row({tag, render_fraction(u.strict_utility(), kRateDecimals),
                    render_fraction(u.lenient_utility(), kRateDecimals),
                    render_fraction(u.mean_helpfulness(), kRateDecimals),
                    render_fraction(u.refusal_rate(), kRateDecimals),
                    render_fraction(u.empty_rate(), kRateDecimals)});
    } else {
      fig2.add_row({tag, "--", "--", "--", "--", "--"});
    }
    if (a.ranked.best.has_value()) {
      const CarrierScore& best = *a.ranked.best;
      fig3.add_row({tag, std::to_string(best.position_offset),
                    std::to_string(best.layer),
                    format_fixed(best.s_total, kGeomDecimals),
                    format_fixed(best.s_refuse, kGeomDecimals),
                    format_fixed(a.spectrum.erank, kGeomDecimals),
                    format_fixed(a.spectrum.participation_ratio,
                                 kGeomDecimals)});
    } else {
      fig3.add_row({tag, "--", "--", "--", "--",
                    format_fixed(a.spectrum.erank, kGeomDecimals),
                    format_fixed(a.spectrum.participation_ratio,
                                 kGeomDecimals)});
    }
    std::vector<std::string> fig5_row{tag, "--", "--", "--", asr};
    for (Index i = 0; i < std::min<Index>(3, a.angles.angles_deg.size());
         ++i) {
      fig5_row[static_cast<std::size_t>(i) + 1] =
          format_fixed(a.angles.angles_deg[i], kGeomDecimals);
    }
    fig5.add_row(std::move(fig5_row));
  }

  CsvBuilder fig4({"regime", "anchor", "mode", "metric", "baseline", "post",
                   "delta"});
  for (const InterventionResult& r : interventions) {
    const auto row = [&](const char* metric, double base, double post,
                         double delta) {
      fig4.add_row({regime, std::to_string(r.checkpoint),
                    to_string(r.spec.mode), metric,
                    format_fixed(base, kGeomDecimals),
                    format_fixed(post, kGeomDecimals),
                    format_fixed(delta, kGeomDecimals)});
    };
    row("harm_refusal_projection", r.baseline.harm_refusal_projection,
        r.post.harm_refusal_projection, r.deltas.harm_refusal_projection);
    row("safe_refusal_projection", r.baseline.safe_refusal_projection,
        r.post.safe_refusal_projection, r.deltas.safe_refusal_projection);
    row("mean_kl_vs_baseline", r.baseline.mean_kl_vs_baseline,
        r.post.mean_kl_vs_baseline, r.deltas.mean_kl_vs_baseline);
  }

  emitter.write_text("figures/fig1_behavior_overview.csv", fig1.str());
  emitter.write_text("figures/fig2_utility_trajectory.csv", fig2.str());
  emitter.write_text("figures/fig3_geometry_reorganization.csv", fig3.str());
  emitter.write_text("figures/fig4_causal_tradeoff.csv", fig4.str());
  emitter.write_text("figures/fig5_drift_vs_robustness.csv", fig5.str());
}

int cmd_report(const std::string& run_path, const std::string& out_dir,
               const GeometryOptions& geom, const MonitorOptions& mon,
               const std::string& anchors_config) {
  // Validate the cheap inputs before any heavy computation.
  BehaviorInputs behavior;
  if (!anchors_config.empty()) {
    behavior = load_behavior_config(anchors_config);
  }
  const SyntheticRun run = load_synthetic_run(run_path);
  const ResolvedGeometry grid = resolve_geometry(run, geom);
  const std::vector<AnchorAnalysis> analyses = analyze_anchors(run, geom);
  MonitorOptions mon_synced = mon;
  mon_synced.kl_threshold = geom.kl_threshold;
  mon_synced.beta_kl = geom.beta_kl;
  mon_synced.addition_coefficient = geom.addition_coefficient;
  mon_synced.threads = geom.threads;
  const MonitorConfig monitor_config =
      monitor_config_from_options(run, mon_synced);
  const MonitorTrace trace = monitor_run(run, monitor_config);

  std::vector<InterventionResult> interventions;
  for (const AnchorAnalysis& a : analyses) {
    if (!a.ranked.best.has_value()) continue;
    for (InterventionMode mode : {InterventionMode::SingleDirection,
                                  InterventionMode::Top3Subspace}) {
      interventions.push_back(
          compute_intervention(run, a, mode, a.ranked.best->layer,
                               a.ranked.best->position_offset, 1.0));
    }
  }

  AtomicEmitter emitter(out_dir);
  emit_suite_files(emitter, analyses);
  const int n_candidates =
      static_cast<int>(monitor_config.positions.size()) *
      static_cast<int>(monitor_config.candidate_layers.size());
  emitter.write_text("monitor_trace.csv",
                     monitor_trace_csv(trace, n_candidates));
  for (const InterventionResult& r : interventions) {
    emitter.write_text("intervention_" + std::to_string(r.checkpoint) + "_" +
                           to_string(r.spec.mode) + ".csv",
                       intervention_csv(run.manifest.regime_label, r));
  }
  if (!behavior.anchors.empty()) {
    emitter.write_text("frontier.csv",
                       frontier_csv(frontier_table(behavior.anchors)));
  }
  emit_figures(emitter, analyses, interventions, behavior.anchors,
               run.manifest.regime_label);

  json config = geometry_config_json(run, grid, geom);
  config["command"] = "report";
  config["monitor"] = monitor_config_json(run, monitor_config);
  if (!anchors_config.empty()) config["anchors_config"] = anchors_config;
  emitter.write_json("resolved_config.json", config);
  emitter.commit();
  return 0;
}

// ---------------------------------------------------------------------------
// Flag wiring

void add_geometry_flags(CLI::App* cmd, GeometryOptions& geom) {
  cmd->add_option("--anchors", geom.anchors_csv,
                  "Checkpoint ids to analyze (default: all)");
  cmd->add_option("--positions", geom.positions_csv,
                  "Position-offset grid (default: container offsets)");
  cmd->add_option("--layers", geom.layers_csv,
                  "Candidate layer grid (default: all observable layers)");
  cmd->add_option("--beta-kl", geom.beta_kl, "KL penalty weight");
  cmd->add_option("--kl-threshold", geom.kl_threshold,
                  "Admissibility gate on mean safe-prompt KL");
  cmd->add_option("--addition-coefficient", geom.addition_coefficient,
                  "Activation-addition coefficient");
  cmd->add_option("--angles-k", geom.angles_k, "Subspace width for angles");
  cmd->add_option("--threads", geom.threads,
                  "Worker threads (0: CARRIER_SCOPE_THREADS or hardware)");
}

void add_monitor_flags(CLI::App* cmd, MonitorOptions& mon,
                       bool prefixed = false) {
  const std::string prefix = prefixed ? "--monitor-" : "--";
  cmd->add_option(prefix + "positions", mon.positions_csv,
                  "Monitor position offsets (default: container offsets)");
  cmd->add_option(prefix + "layers", mon.layers_csv,
                  "Monitor candidate layers (default: 5 evenly spaced)");
  if (!prefixed) {
    cmd->add_option("--kl-threshold", mon.kl_threshold, "Admissibility gate");
    cmd->add_option("--beta-kl", mon.beta_kl, "KL penalty weight");
    cmd->add_option("--addition-coefficient", mon.addition_coefficient,
                    "Activation-addition coefficient");
    cmd->add_option("--threads", mon.threads, "Worker threads");
  }
  cmd->add_option(prefix + "batch-size", mon.batch_size,
                  "Evaluation chunk size (never changes results)");
  cmd->add_option(prefix + "train-harmful", mon.train_harmful,
                  "Harmful train examples to use (0: all stored)");
  cmd->add_option(prefix + "train-harmless", mon.train_harmless,
                  "Harmless train examples to use (0: all stored)");
  cmd->add_option(prefix + "val-harmful", mon.val_harmful,
                  "Harmful val examples to use (0: all stored)");
  cmd->add_option(prefix + "val-harmless", mon.val_harmless,
                  "Harmless val examples to use (0: all stored)");
}

int dispatch(std::vector<std::string> args) {
  CLI::App app{"Refusal-carrier geometry analysis over activation dumps",
               "carrier-scope"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  std::string config_path_sink;  // consumed during pre-expansion

  SynthOptions synth;
  CLI::App* synth_cmd =
      app.add_subcommand("synth", "Generate a synthetic activation container");
  synth_cmd->add_option("--config", config_path_sink, "JSON config file");
  synth_cmd->add_option("--kind", synth.kind, "Scenario kind")
      ->check(CLI::IsMember({"static", "relocation", "drift_only"}));
  synth_cmd->add_option("--out", synth.out, "Container directory")->required();
  synth_cmd->add_option("--seed", synth.seed, "Scenario seed");
  synth_cmd->add_option("--checkpoints", synth.checkpoints_csv,
                        "Checkpoint steps, first is the reference");
  synth_cmd->add_option("--strength", synth.strength, "Carrier strength");
  synth_cmd->add_option("--carrier-layer", synth.carrier_layer,
                        "Carrier layer (static, drift_only)");
  synth_cmd->add_option("--early-layer", synth.early_layer,
                        "Relocation: post-switch layer");
  synth_cmd->add_option("--late-layer", synth.late_layer,
                        "Relocation: pre-switch layer");
  synth_cmd->add_option("--switch-step", synth.switch_step,
                        "Relocation: first step at the early layer");
  synth_cmd->add_option("--schedule", synth.schedule_csv,
                        "Drift rotation degrees per checkpoint");
  synth_cmd->add_option("--aux-layers", synth.aux_layers_csv,
                        "Drift stabilizer layers");
  synth_cmd->add_option("--aux-fraction", synth.aux_fraction,
                        "Drift stabilizer strength fraction");
  synth_cmd->add_option("--train-count", synth.train_count,
                        "Train examples per class");
  synth_cmd->add_option("--val-count", synth.val_count,
                        "Val examples per class");
  synth_cmd->add_option("--eval-count", synth.eval_count,
                        "Eval examples per class");
  synth_cmd->add_option("--prompt-len", synth.prompt_len, "Prompt length");
  synth_cmd->add_option("--positions", synth.positions_csv,
                        "Stored position offsets");
  synth_cmd->add_option("--vocab", synth.vocab, "Vocabulary size");
  synth_cmd->add_option("--hidden-dim", synth.hidden_dim, "Residual width");
  synth_cmd->add_option("--layer-count", synth.layer_count, "Block count");
  synth_cmd->add_option("--mlp-hidden", synth.mlp_hidden, "Block MLP width");
  synth_cmd->add_option("--activation", synth.activation, "Block nonlinearity")
      ->check(CLI::IsMember({"tanh", "identity"}));
  synth_cmd->add_option("--model-seed", synth.model_seed,
                        "Weight seed (0: derive from --seed)");
  synth_cmd->add_option("--run-id", synth.run_id, "Container run id");

  std::string run_path;
  std::string out_dir;
  GeometryOptions geom;
  CLI::App* suite_cmd =
      app.add_subcommand("suite", "Anchor geometry suite over a container");
  suite_cmd->add_option("--config", config_path_sink, "JSON config file");
  suite_cmd->add_option("--run", run_path, "Container directory")->required();
  suite_cmd->add_option("--out", out_dir, "Report directory")->required();
  add_geometry_flags(suite_cmd, geom);

  MonitorOptions mon;
  CLI::App* monitor_cmd =
      app.add_subcommand("monitor", "Dense probe trace over checkpoints");
  monitor_cmd->add_option("--config", config_path_sink, "JSON config file");
  monitor_cmd->add_option("--run", run_path, "Container directory")
      ->required();
  monitor_cmd->add_option("--out", out_dir, "Report directory")->required();
  add_monitor_flags(monitor_cmd, mon);

  InterveneOptions intervene;
  CLI::App* intervene_cmd =
      app.add_subcommand("intervene", "Causal intervention at one anchor");
  intervene_cmd->add_option("--config", config_path_sink, "JSON config file");
  intervene_cmd->add_option("--run", run_path, "Container directory")
      ->required();
  intervene_cmd->add_option("--out", out_dir, "Report directory")->required();
  add_geometry_flags(intervene_cmd, geom);
  intervene_cmd->add_option("--anchor", intervene.anchor,
                            "Checkpoint id (default: reference)");
  intervene_cmd->add_option("--mode", intervene.mode, "Intervention mode")
      ->check(CLI::IsMember({"single_direction", "top3_subspace", "addition"}));
  intervene_cmd->add_option("--layer", intervene.layer,
                            "Intervention layer (-1: best admissible)");
  intervene_cmd->add_option(
      "--position", intervene.position,
      "Candidate position offset (positive: best admissible)");
  intervene_cmd->add_option("--coefficient", intervene.coefficient,
                            "Addition coefficient");

  BehaviorOptions behavior;
  CLI::App* behavior_cmd = app.add_subcommand(
      "behavior", "Aggregate external behavior-evaluation files");
  behavior_cmd->add_option("--config", config_path_sink, "JSON config file");
  behavior_cmd->add_option("--out", out_dir, "Report directory")->required();
  behavior_cmd->add_option("--anchors-config", behavior.anchors_config,
                           "JSON file listing per-anchor input files");
  behavior_cmd->add_option("--anchor-id", behavior.anchor_id,
                           "Anchor id for single-anchor inputs");
  behavior_cmd->add_option("--utility", behavior.utility,
                           "Benign-utility annotation CSV");
  behavior_cmd->add_option("--attacks", behavior.attacks,
                           "Attack judgment CSV");
  behavior_cmd->add_option("--xstest", behavior.xstest, "XSTest label CSV");
  behavior_cmd->add_option("--strongreject", behavior.strongreject,
                           "StrongREJECT score CSV");

  MonitorOptions report_mon;
  std::string report_anchors_config;
  CLI::App* report_cmd = app.add_subcommand(
      "report", "Full pipeline: suite + monitor + interventions + figures");
  report_cmd->add_option("--config", config_path_sink, "JSON config file");
  report_cmd->add_option("--run", run_path, "Container directory")->required();
  report_cmd->add_option("--out", out_dir, "Report directory")->required();
  add_geometry_flags(report_cmd, geom);
  add_monitor_flags(report_cmd, report_mon, /*prefixed=*/true);
  report_cmd->add_option("--anchors-config", report_anchors_config,
                         "Behavior input files (JSON)");

  try {
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  }

  if (synth_cmd->parsed()) {
    const ScenarioSpec spec = spec_from_options(synth);
    const SyntheticRun run = generate_scenario(spec, synth.out);
    std::cout << "wrote " << run.manifest.run_id << " ("
              << run.manifest.checkpoints.size() << " checkpoints) to "
              << synth.out << "\n";
    return 0;
  }
  if (suite_cmd->parsed()) return cmd_suite(run_path, out_dir, geom);
  if (monitor_cmd->parsed()) return cmd_monitor(run_path, out_dir, mon);
  if (intervene_cmd->parsed()) {
    return cmd_intervene(run_path, out_dir, geom, intervene);
  }
  if (behavior_cmd->parsed()) return cmd_behavior(out_dir, behavior);
  if (report_cmd->parsed()) {
    return cmd_report(run_path, out_dir, geom, report_mon,
                      report_anchors_config);
  }
  throw UsageError("no subcommand given");
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  try {
    std::vector<std::string> expanded = args;
    const std::optional<std::string> config_path = find_config_path(args);
    if (config_path.has_value()) {
      // Insert config-derived tokens right after the subcommand so explicit
      // flags, which come later, take precedence under TakeLast.
      const std::vector<std::string> tokens = config_tokens(*config_path);
      std::size_t sub = 0;
      while (sub < expanded.size()) {
        if (expanded[sub] == "--config") {
          sub += 2;  // skip the flag and its value
        } else if (!expanded[sub].empty() && expanded[sub][0] == '-') {
          sub += 1;
        } else {
          break;
        }
      }
      if (sub >= expanded.size()) throw UsageError("no subcommand given");
      expanded.insert(expanded.begin() + sub + 1, tokens.begin(),
                      tokens.end());
    }
    return dispatch(std::move(expanded));
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 3;
  } catch (const ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 4;
  }
}

}  // namespace carrierscope

#include "carrierscope/toymodel.hpp"

#include "carrierscope/errors.hpp"
#include "carrierscope/rng.hpp"

#include <cmath>
#include <limits>

namespace carrierscope {

const char* to_string(Activation a) {
  return a == Activation::Tanh ? "tanh" : "identity";
}

Activation activation_from_string(const std::string& name) {
  if (name == "tanh") return Activation::Tanh;
  if (name == "identity") return Activation::Identity;
  throw ValidationError("unknown activation '" + name + "'");
}

namespace {

// Substream tags for weight draws; fixed so that checkpoints regenerated from
// a config byte-match the original run.
constexpr std::uint64_t kEmbeddingTag = 0xE0;
constexpr std::uint64_t kUnembeddingTag = 0xE1;
constexpr std::uint64_t kW1Tag = 0x100;
constexpr std::uint64_t kW2Tag = 0x200;

Mat gaussian_matrix(std::uint64_t seed, Index rows, Index cols, double scale) {
  GaussianStream stream(seed);
  Mat m(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) {
      m(r, c) = scale * stream.next();
    }
  }
  return m;
}

void validate_config(const ToyModelConfig& c) {
  if (c.vocab_size < 3) {
    throw ValidationError("toymodel: vocab_size must be >= 3 (two marker ids plus tail tokens)");
  }
  if (c.hidden_dim <= 0 || c.layer_count <= 0 || c.mlp_hidden <= 0) {
    throw ValidationError("toymodel: dimensions must be positive");
  }
}

void apply_block(const ToyModel& model, int layer, Mat& states) {
  const Mat& w1 = model.w1[layer];
  const Mat& w2 = model.w2[layer];
  if (model.config.activation == Activation::Tanh) {
    states.noalias() += (states * w1.transpose()).array().tanh().matrix() *
                        w2.transpose();
  } else {
    states.noalias() += states * w1.transpose() * w2.transpose();
  }
}

void apply_plants(const ToyModel& model, int layer, Mat& states,
                  const std::vector<char>& harmful_rows) {
  for (const auto& plant : model.plants) {
    if (plant.layer != layer) continue;
    const Vec shift = plant.strength * plant.direction;
    for (Index r = 0; r < states.rows(); ++r) {
      if (harmful_rows[static_cast<std::size_t>(r)]) {
        states.row(r) += shift.transpose();
      }
    }
  }
}

Vec softmax(const Vec& logits) {
  const double m = logits.maxCoeff();
  Vec p = (logits.array() - m).exp();
  return p / p.sum();
}

}  // namespace

ToyModel build_toy_model(const ToyModelConfig& config) {
  validate_config(config);
  ToyModel model;
  model.config = config;
  const double w1_scale = 1.0 / std::sqrt(static_cast<double>(config.hidden_dim));
  const double w2_scale = 1.0 / std::sqrt(static_cast<double>(config.mlp_hidden));
  model.embedding = gaussian_matrix(derive_seed(config.seed, kEmbeddingTag),
                                    config.vocab_size, config.hidden_dim, 1.0);
  model.w1.reserve(config.layer_count);
  model.w2.reserve(config.layer_count);
  for (int l = 0; l < config.layer_count; ++l) {
    model.w1.push_back(gaussian_matrix(derive_seed(config.seed, kW1Tag + l),
                                       config.mlp_hidden, config.hidden_dim,
                                       w1_scale));
    model.w2.push_back(gaussian_matrix(derive_seed(config.seed, kW2Tag + l),
                                       config.hidden_dim, config.mlp_hidden,
                                       w2_scale));
  }
  model.unembedding = gaussian_matrix(derive_seed(config.seed, kUnembeddingTag),
                                      config.vocab_size, config.hidden_dim,
                                      w1_scale);
  return model;
}

void plant_carrier(ToyModel& model, int layer, const Vec& direction,
                   double strength) {
  if (layer < 0 || layer >= model.config.layer_count) {
    throw ValidationError("plant_carrier: layer out of range");
  }
  if (direction.size() != model.config.hidden_dim) {
    throw ValidationError("plant_carrier: direction has wrong dimension");
  }
  if (std::abs(direction.norm() - 1.0) > 1e-9) {
    throw ValidationError("plant_carrier: direction must be unit norm");
  }
  if (!std::isfinite(strength)) {
    throw ValidationError("plant_carrier: strength must be finite");
  }
  model.plants.push_back({layer, direction, strength});
}

ResidualTrace forward(const ToyModel& model, const std::vector<int>& tokens,
                      const std::vector<LayerHook>& hooks) {
  const auto& cfg = model.config;
  if (tokens.empty()) {
    throw ValidationError("forward: empty token sequence");
  }
  for (int t : tokens) {
    if (t < 0 || t >= cfg.vocab_size) {
      throw ValidationError("forward: token id out of range");
    }
  }
  for (const auto& hook : hooks) {
    if (hook.layer < 0 || hook.layer >= cfg.layer_count) {
      throw ValidationError("forward: hook layer out of range");
    }
    if (!hook.fn) {
      throw ValidationError("forward: empty hook function");
    }
  }

  const int T = static_cast<int>(tokens.size());
  const std::vector<char> harmful_rows(
      static_cast<std::size_t>(T), tokens[0] == kHarmfulMarker ? 1 : 0);

  Mat states(T, cfg.hidden_dim);
  for (int p = 0; p < T; ++p) {
    states.row(p) = model.embedding.row(tokens[p]);
  }

  ResidualTrace trace;
  trace.positions = T;
  trace.layers = cfg.layer_count;
  trace.dim = cfg.hidden_dim;
  trace.states.resize(static_cast<Index>(T) * cfg.layer_count, cfg.hidden_dim);

  for (int l = 0; l < cfg.layer_count; ++l) {
    for (const auto& hook : hooks) {
      if (hook.layer == l) hook.fn(states);
    }
    for (int p = 0; p < T; ++p) {
      trace.states.row(static_cast<Index>(p) * cfg.layer_count + l) =
          states.row(p);
    }
    apply_block(model, l, states);
    apply_plants(model, l, states, harmful_rows);
  }

  trace.final_dist =
      softmax(model.unembedding * states.row(T - 1).transpose());
  return trace;
}

PromptSet make_prompt_set(std::uint64_t seed, int role_tag, bool harmful,
                          int count, int prompt_len, int vocab_size) {
  if (count <= 0 || prompt_len < 2) {
    throw ValidationError("make_prompt_set: need count >= 1 and prompt_len >= 2");
  }
  if (vocab_size < 3) {
    throw ValidationError("make_prompt_set: vocab_size must be >= 3");
  }
  PromptSet set;
  set.tokens.resize(count, prompt_len);
  const int tail_span = vocab_size - 2;
  for (int i = 0; i < count; ++i) {
    set.tokens(i, 0) = harmful ? kHarmfulMarker : kSafeMarker;
    SplitMix64 rng(derive_seed(derive_seed(seed, 0x7000 + role_tag),
                               static_cast<std::uint64_t>(i)));
    for (int j = 1; j < prompt_len; ++j) {
      set.tokens(i, j) = 2 + static_cast<int>(rng.next() % tail_span);
    }
  }
  return set;
}

PromptSet take_prompts(const PromptSet& prompts, int count) {
  if (count < 1 || count > prompts.count()) {
    throw ValidationError("take_prompts: requested " + std::to_string(count) +
                          " of " + std::to_string(prompts.count()));
  }
  PromptSet out;
  out.tokens = prompts.tokens.topRows(count);
  return out;
}

PromptSet merge_prompt_sets(const PromptSet& a, const PromptSet& b) {
  if (a.length() != b.length()) {
    throw ValidationError("merge_prompt_sets: prompt lengths differ");
  }
  PromptSet out;
  out.tokens.resize(a.count() + b.count(), a.length());
  out.tokens.topRows(a.count()) = a.tokens;
  out.tokens.bottomRows(b.count()) = b.tokens;
  return out;
}

Mat ForwardCache::eval_states() const {
  Mat out(n, dim);
  const Mat& site = layer_inputs[layers - 1];
  for (int i = 0; i < n; ++i) {
    out.row(i) = site.row(static_cast<Index>(i) * T + (T - 1));
  }
  return out;
}

ForwardCache run_forward_cache(const ToyModel& model,
                               const PromptSet& prompts) {
  const auto& cfg = model.config;
  const int n = prompts.count();
  const int T = prompts.length();
  if (n == 0) {
    throw ValidationError("run_forward_cache: empty prompt set");
  }

  ForwardCache cache;
  cache.n = n;
  cache.T = T;
  cache.layers = cfg.layer_count;
  cache.dim = cfg.hidden_dim;
  cache.harmful.resize(static_cast<std::size_t>(n) * T);
  for (int i = 0; i < n; ++i) {
    const char h = prompts.is_harmful(i) ? 1 : 0;
    for (int p = 0; p < T; ++p) {
      cache.harmful[static_cast<std::size_t>(i) * T + p] = h;
    }
  }

  Mat states(static_cast<Index>(n) * T, cfg.hidden_dim);
  for (int i = 0; i < n; ++i) {
    for (int p = 0; p < T; ++p) {
      const int tok = prompts.tokens(i, p);
      if (tok < 0 || tok >= cfg.vocab_size) {
        throw ValidationError("run_forward_cache: token id out of range");
      }
      states.row(static_cast<Index>(i) * T + p) = model.embedding.row(tok);
    }
  }

  cache.layer_inputs.reserve(cfg.layer_count);
  for (int l = 0; l < cfg.layer_count; ++l) {
    cache.layer_inputs.push_back(states);
    apply_block(model, l, states);
    apply_plants(model, l, states, cache.harmful);
  }
  cache.final_states = states;

  cache.final_dists.resize(n, cfg.vocab_size);
  for (int i = 0; i < n; ++i) {
    cache.final_dists.row(i) =
        softmax(model.unembedding *
                states.row(static_cast<Index>(i) * T + (T - 1)).transpose())
            .transpose();
  }
  return cache;
}

Readout resume_with_op(const ToyModel& model, const ForwardCache& cache,
                       int layer, const RowOp& op) {
  const auto& cfg = model.config;
  if (layer < 0 || layer >= cfg.layer_count) {
    throw ValidationError("resume_with_op: layer out of range");
  }

  Mat states = cache.layer_inputs[layer];
  if (op) op(states);

  Readout readout;
  for (int l = layer; l < cfg.layer_count; ++l) {
    if (l == cfg.layer_count - 1) {
      readout.eval_states.resize(cache.n, cfg.hidden_dim);
      for (int i = 0; i < cache.n; ++i) {
        readout.eval_states.row(i) =
            states.row(static_cast<Index>(i) * cache.T + (cache.T - 1));
      }
    }
    apply_block(model, l, states);
    apply_plants(model, l, states, cache.harmful);
  }

  readout.final_dists.resize(cache.n, cfg.vocab_size);
  for (int i = 0; i < cache.n; ++i) {
    readout.final_dists.row(i) =
        softmax(model.unembedding *
                states.row(static_cast<Index>(i) * cache.T + (cache.T - 1))
                    .transpose())
            .transpose();
  }
  return readout;
}

double kl_divergence(const Eigen::Ref<const Vec>& p,
                     const Eigen::Ref<const Vec>& q) {
  if (p.size() != q.size()) {
    throw ValidationError("kl_divergence: size mismatch");
  }
  double kl = 0.0;
  for (Index i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    if (q[i] <= 0.0) return std::numeric_limits<double>::infinity();
    kl += p[i] * std::log(p[i] / q[i]);
  }
  // Guard against tiny negative round-off when p == q.
  return kl < 0.0 && kl > -1e-15 ? 0.0 : kl;
}

}  // namespace carrierscope

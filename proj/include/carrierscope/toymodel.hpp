#pragma once

#include "carrierscope/types.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace carrierscope {

// Reserved class-marker token ids. A prompt's leading token carries its
// class; tail tokens are drawn from [2, vocab_size).
inline constexpr int kHarmfulMarker = 0;
inline constexpr int kSafeMarker = 1;

enum class Activation { Tanh, Identity };

const char* to_string(Activation a);
Activation activation_from_string(const std::string& name);

struct ToyModelConfig {
  int vocab_size = 32;
  int hidden_dim = 64;
  int layer_count = 12;
  int mlp_hidden = 128;
  std::uint64_t seed = 0;
  // Identity turns every block into the linear map I + W2*W1; used by the
  // closed-form propagation oracles.
  Activation activation = Activation::Tanh;
};

// Additive class-conditional shift: strength * direction is added to the
// residual stream at `layer`'s block output (so it first appears at the input
// of layer + 1) for harmful-class prompts only.
struct PlantedCarrier {
  int layer = 0;
  Vec direction;  // unit norm
  double strength = 0.0;
};

// Residual-stream MLP stack without attention: positions are processed
// independently. Block: h <- h + W2 * act(W1 * h).
struct ToyModel {
  ToyModelConfig config;
  Mat embedding;            // vocab x dim, entries N(0,1) (table lookup, fan-in 1)
  std::vector<Mat> w1;      // mlp_hidden x dim, entries N(0, 1/hidden_dim)
  std::vector<Mat> w2;      // dim x mlp_hidden, entries N(0, 1/mlp_hidden)
  Mat unembedding;          // vocab x dim, entries N(0, 1/hidden_dim)
  std::vector<PlantedCarrier> plants;
};

ToyModel build_toy_model(const ToyModelConfig& config);

// direction must be unit norm within 1e-9; layer in [0, layer_count).
void plant_carrier(ToyModel& model, int layer, const Vec& direction,
                   double strength);

// A hook replaces the residual state at its layer's input; rows are
// positions, columns the hidden dimension. Hooks at the same layer compose in
// list order, and recorded states are post-hook.
using HookFn = std::function<void(Eigen::Ref<Mat>)>;
struct LayerHook {
  int layer = 0;
  HookFn fn;
};

struct ResidualTrace {
  int positions = 0;
  int layers = 0;
  int dim = 0;
  Mat states;      // (position * layers + layer) rows
  Vec final_dist;  // next-token distribution at the last position

  Eigen::Ref<const Mat> state(int position, int layer) const {
    return states.block(static_cast<Index>(position) * layers + layer, 0, 1,
                        dim);
  }
  Vec state_vec(int position, int layer) const {
    return states.row(static_cast<Index>(position) * layers + layer)
        .transpose();
  }
};

ResidualTrace forward(const ToyModel& model, const std::vector<int>& tokens,
                      const std::vector<LayerHook>& hooks = {});

// --- Batched kernel (plumbing shared by generation, scoring, interventions).

struct PromptSet {
  MatI tokens;  // n x T; column 0 holds the class marker

  int count() const { return static_cast<int>(tokens.rows()); }
  int length() const { return static_cast<int>(tokens.cols()); }
  bool is_harmful(int i) const { return tokens(i, 0) == kHarmfulMarker; }
};

// Paired construction: the tail token stream is keyed by (seed, role tag,
// example) only, so harmful/safe sets with equal (seed, role, count, length)
// differ in nothing but the leading marker. Class-mean differences of paired
// sets then isolate planted carriers exactly.
PromptSet make_prompt_set(std::uint64_t seed, int role_tag, bool harmful,
                          int count, int prompt_len, int vocab_size);

// Leading rows of a set; count must be in [1, prompts.count()].
PromptSet take_prompts(const PromptSet& prompts, int count);

// Row concatenation (a first); lengths must agree.
PromptSet merge_prompt_sets(const PromptSet& a, const PromptSet& b);

struct ForwardCache {
  int n = 0;
  int T = 0;
  int layers = 0;
  int dim = 0;
  std::vector<char> harmful;      // per residual row, prompt-major (n*T)
  std::vector<Mat> layer_inputs;  // layer -> (n*T) x dim residual at layer input
  Mat final_states;               // (n*T) x dim after the last block
  Mat final_dists;                // n x vocab at the last position

  // States at the evaluation site: last position, input of the last layer.
  Mat eval_states() const;
};

ForwardCache run_forward_cache(const ToyModel& model, const PromptSet& prompts);

// Row-wise transform applied to a block of residual states.
using RowOp = std::function<void(Eigen::Ref<Mat>)>;

struct Readout {
  Mat eval_states;  // n x dim
  Mat final_dists;  // n x vocab
};

// Re-runs the cached batch from `layer` with `op` applied to that layer's
// input states, reusing the cached prefix. op == nullptr replays the
// baseline.
Readout resume_with_op(const ToyModel& model, const ForwardCache& cache,
                       int layer, const RowOp& op);

// KL(p || q) with natural log; +inf when q underflows where p has mass.
double kl_divergence(const Eigen::Ref<const Vec>& p,
                     const Eigen::Ref<const Vec>& q);

}  // namespace carrierscope

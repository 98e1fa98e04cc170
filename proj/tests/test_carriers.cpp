#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "carrierscope/carriers.hpp"
#include "carrierscope/errors.hpp"
#include "carrierscope/toymodel.hpp"
#include "helpers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

using namespace carrierscope;
using testutil::make_field;
using testutil::random_unit;

namespace {

// Class-mean difference at (last position, layer input) over a cached batch.
Vec mean_diff_at(const ForwardCache& harm, const ForwardCache& safe,
                 int layer) {
  Vec h = Vec::Zero(harm.dim);
  Vec s = Vec::Zero(safe.dim);
  for (int i = 0; i < harm.n; ++i) {
    h += harm.layer_inputs[layer]
             .row(static_cast<Index>(i) * harm.T + harm.T - 1)
             .transpose();
  }
  for (int i = 0; i < safe.n; ++i) {
    s += safe.layer_inputs[layer]
             .row(static_cast<Index>(i) * safe.T + safe.T - 1)
             .transpose();
  }
  return h / harm.n - s / safe.n;
}

PromptSet single_prompt(bool harmful, int tail_token, int len) {
  PromptSet set;
  set.tokens.resize(1, len);
  set.tokens(0, 0) = harmful ? kHarmfulMarker : kSafeMarker;
  for (int j = 1; j < len; ++j) set.tokens(0, j) = tail_token;
  return set;
}

Baselines fake_baselines(const Vec& w, double denom) {
  Baselines b;
  b.w = w;
  b.denom = denom;
  b.mu_safe = Vec::Zero(w.size());
  b.mu_harm = denom * w;
  return b;
}

}  // namespace

TEST_CASE("candidate vectors are the exact class-mean differences") {
  auto harm = make_field(2, {-1}, 1, 2, [](int e, int, int) {
    Vec s(2);
    s << (e == 0 ? 1.0 : 3.0), 0.0;
    return s;
  });
  auto safe = make_field(2, {-1}, 1, 2, [](int e, int, int) {
    Vec s(2);
    s << 0.0, (e == 0 ? 0.0 : 2.0);
    return s;
  });
  safe.split = Split::Safe;

  const CandidateLibrary lib = build_library(harm, safe, {-1}, {0});
  CHECK(lib.frozen);
  CHECK(lib.grid_size() == 1);
  const CandidateDirection& cand = lib.at(-1, 0);
  CHECK(cand.vector[0] == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(cand.vector[1] == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(cand.norm == doctest::Approx(std::sqrt(5.0)).epsilon(1e-15));
  CHECK_THROWS_AS(lib.at(-2, 0), ValidationError);
  CHECK_THROWS_AS(lib.at(-1, 1), ValidationError);
}

TEST_CASE("library grids are canonicalized regardless of input order") {
  std::mt19937_64 rng(11);
  auto state = [&](int e, int p, int l) {
    Vec s(3);
    s << e + 0.5 * p, l - e, 0.25 * e * l;
    return s;
  };
  auto harm = make_field(4, {-3, -2, -1}, 4, 3, state);
  auto safe = make_field(4, {-3, -2, -1}, 4, 3,
                         [&](int e, int p, int l) { return -state(e, p, l); });
  safe.split = Split::Safe;

  const CandidateLibrary lib = build_library(harm, safe, {-1, -3}, {3, 0});
  CHECK(lib.position_offsets == std::vector<int>{-3, -1});
  CHECK(lib.layers == std::vector<int>{0, 3});
  REQUIRE(lib.grid_size() == 4);
  CHECK(lib.items[0].position_offset == -3);
  CHECK(lib.items[0].layer == 0);
  CHECK(lib.items[1].position_offset == -3);
  CHECK(lib.items[1].layer == 3);
  CHECK(lib.items[2].position_offset == -1);
  CHECK(lib.items[2].layer == 0);
  CHECK(lib.items[3].position_offset == -1);
  CHECK(lib.items[3].layer == 3);

  // Naive double-precision recompute over the stored float states.
  for (const auto& c : lib.items) {
    int p = 0;
    while (harm.position_offsets[p] != c.position_offset) ++p;
    Vec naive = Vec::Zero(3);
    for (int e = 0; e < 4; ++e) {
      naive += harm.state64(e, p, c.layer) - safe.state64(e, p, c.layer);
    }
    naive /= 4.0;
    CHECK((naive - c.vector).cwiseAbs().maxCoeff() <= 1e-12);
  }
  (void)rng;
}

TEST_CASE("identical classes yield zero candidates") {
  auto state = [](int e, int p, int l) {
    Vec s(2);
    s << e + p, l;
    return s;
  };
  auto harm = make_field(3, {-2, -1}, 2, 2, state);
  auto safe = make_field(3, {-2, -1}, 2, 2, state);
  safe.split = Split::Safe;
  const CandidateLibrary lib = build_library(harm, safe, {-2, -1}, {0, 1});
  for (const auto& c : lib.items) {
    CHECK(c.norm == 0.0);
    CHECK((c.vector.array() == 0.0).all());
  }
}

TEST_CASE("library construction rejects malformed inputs") {
  auto state = [](int, int, int) { return Vec::Zero(2).eval(); };
  auto harm = make_field(2, {-1}, 2, 2, state);
  auto safe = make_field(2, {-1}, 2, 2, state);
  safe.split = Split::Safe;

  CHECK_THROWS_AS(build_library(safe, harm, {-1}, {0}), ValidationError);
  CHECK_THROWS_AS(build_library(harm, safe, {}, {0}), ValidationError);
  CHECK_THROWS_AS(build_library(harm, safe, {-1, -1}, {0}), ValidationError);
  CHECK_THROWS_AS(build_library(harm, safe, {-1}, {2}), ValidationError);
  CHECK_THROWS_AS(build_library(harm, safe, {-2}, {0}), ValidationError);

  auto val_role = make_field(2, {-1}, 2, 2, state);
  val_role.role = Role::Val;
  CHECK_THROWS_AS(build_library(val_role, safe, {-1}, {0}), ValidationError);

  auto wide = make_field(2, {-1}, 2, 3,
                         [](int, int, int) { return Vec::Zero(3).eval(); });
  wide.split = Split::Safe;
  CHECK_THROWS_AS(build_library(harm, wide, {-1}, {0}), ValidationError);
}

TEST_CASE("baselines read the evaluation site and reject degenerate probes") {
  auto harm = make_field(2, {-2, -1}, 2, 3, [](int e, int p, int l) {
    Vec s(3);
    if (p == 1 && l == 1) {
      s << (e == 0 ? 1.0 : 3.0), 0.0, 0.0;
    } else {
      s << 9.0, 9.0, 9.0;  // decoy states away from the evaluation site
    }
    return s;
  });
  harm.role = Role::Val;
  auto safe = make_field(2, {-2, -1}, 2, 3, [](int, int p, int l) {
    Vec s(3);
    if (p == 1 && l == 1) {
      s << 0.0, 1.0, 0.0;
    } else {
      s << -9.0, 0.0, 4.0;
    }
    return s;
  });
  safe.split = Split::Safe;
  safe.role = Role::Val;

  const Baselines b = compute_baselines(harm, safe);
  CHECK(b.mu_harm[0] == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(b.mu_safe[1] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(b.denom == doctest::Approx(std::sqrt(5.0)).epsilon(1e-14));
  CHECK(b.w[0] == doctest::Approx(2.0 / std::sqrt(5.0)).epsilon(1e-14));
  CHECK(b.w[1] == doctest::Approx(-1.0 / std::sqrt(5.0)).epsilon(1e-14));
  CHECK(b.w.norm() == doctest::Approx(1.0).epsilon(1e-14));

  auto safe_same = harm;
  safe_same.split = Split::Safe;
  CHECK_THROWS_WITH_AS(compute_baselines(harm, safe_same),
                       doctest::Contains("degenerate-probe"), ValidationError);

  auto train_role = harm;
  train_role.role = Role::Train;
  CHECK_THROWS_AS(compute_baselines(train_role, safe), ValidationError);
}

TEST_CASE("zero-norm candidates score as exact no-ops") {
  const ToyModelConfig cfg{16, 8, 3, 12, 5};
  const ToyModel model = build_toy_model(cfg);
  const PromptSet harm = make_prompt_set(1, 0, true, 4, 4, 16);
  const PromptSet safe = make_prompt_set(1, 0, false, 4, 4, 16);
  std::mt19937_64 rng(2);
  const CandidateScorer scorer(model, harm, safe,
                               fake_baselines(random_unit(rng, 8), 1.5));

  CandidateDirection cand;
  cand.position_offset = -1;
  cand.layer = 1;
  cand.vector = Vec::Zero(8);
  cand.norm = 0.0;
  const CarrierScore score = scorer.score(cand);
  CHECK(score.s_refuse == 0.0);
  CHECK(score.s_comply == 0.0);
  CHECK(score.kl == 0.0);
  CHECK(score.kl_max == 0.0);
  CHECK(score.s_total == 0.0);
  CHECK(score.admissible);
}

TEST_CASE("scorer rejects malformed candidates and prompt sets") {
  const ToyModelConfig cfg{16, 8, 3, 12, 6};
  const ToyModel model = build_toy_model(cfg);
  const PromptSet harm = make_prompt_set(1, 0, true, 4, 4, 16);
  const PromptSet safe = make_prompt_set(1, 0, false, 4, 4, 16);
  std::mt19937_64 rng(3);
  const Vec w = random_unit(rng, 8);

  CHECK_THROWS_AS(CandidateScorer(model, safe, safe, fake_baselines(w, 1.0)),
                  ValidationError);
  CHECK_THROWS_AS(
      CandidateScorer(model, harm, safe, fake_baselines(random_unit(rng, 5), 1.0)),
      ValidationError);

  const CandidateScorer scorer(model, harm, safe, fake_baselines(w, 1.0));
  CandidateDirection cand;
  cand.position_offset = -1;
  cand.layer = 1;
  cand.vector = random_unit(rng, 5);
  cand.norm = 1.0;
  CHECK_THROWS_AS(scorer.score(cand), ValidationError);

  cand.vector = random_unit(rng, 8);
  cand.layer = 3;
  CHECK_THROWS_AS(scorer.score(cand), ValidationError);

  cand.layer = 1;
  cand.vector[2] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(scorer.score(cand), ValidationError);

  PromptSet empty_safe;
  empty_safe.tokens.resize(0, 4);
  cand.vector = random_unit(rng, 8);
  CHECK_THROWS_AS(kl_side_effect(cand, model, empty_safe), ValidationError);
}

TEST_CASE("linear models match the closed-form propagation oracle") {
  ToyModelConfig cfg;
  cfg.vocab_size = 12;
  cfg.hidden_dim = 6;
  cfg.layer_count = 4;
  cfg.mlp_hidden = 5;
  cfg.seed = 77;
  cfg.activation = Activation::Identity;
  const ToyModel model = build_toy_model(cfg);

  const PromptSet harm = make_prompt_set(9, 0, true, 6, 5, 12);
  const PromptSet safe = make_prompt_set(9, 0, false, 6, 5, 12);
  std::mt19937_64 rng(4);
  const Vec w = random_unit(rng, 6);
  const double denom = 2.5;
  ScoringConfig config;
  config.addition_coefficient = 0.5;
  const CandidateScorer scorer(model, harm, safe, fake_baselines(w, denom),
                               config);

  CandidateDirection cand;
  cand.position_offset = -1;
  cand.layer = 1;
  cand.vector = 3.0 * random_unit(rng, 6);
  cand.norm = cand.vector.norm();
  const CarrierScore score = scorer.score(cand);

  // Blocks are the linear maps I + W2*W1, so a shift injected at the input
  // of layer 1 reaches the evaluation site (input of layer 3) through the
  // product of blocks 1 and 2.
  const Mat eye = Mat::Identity(6, 6);
  const Mat m = (eye + model.w2[2] * model.w1[2]) *
                (eye + model.w2[1] * model.w1[1]);
  const double refuse_oracle =
      w.dot(m * (config.addition_coefficient * cand.vector)) / denom;
  CHECK(score.s_refuse == doctest::Approx(refuse_oracle).epsilon(1e-10));

  // Ablation is linear too; average the per-prompt removed component.
  const ForwardCache hc = run_forward_cache(model, harm);
  const Vec unit = cand.vector / cand.norm;
  double comply_oracle = 0.0;
  for (int i = 0; i < hc.n; ++i) {
    const Vec h =
        hc.layer_inputs[1].row(static_cast<Index>(i) * hc.T + hc.T - 1);
    comply_oracle += w.dot(m * (h.dot(unit) * unit)) / denom;
  }
  comply_oracle /= hc.n;
  CHECK(score.s_comply == doctest::Approx(comply_oracle).epsilon(1e-10));
}

TEST_CASE("additions orthogonal to the probe at the eval site score zero") {
  const ToyModelConfig cfg{20, 10, 5, 16, 13};
  const ToyModel model = build_toy_model(cfg);
  const PromptSet harm = make_prompt_set(14, 0, true, 5, 4, 20);
  const PromptSet safe = make_prompt_set(14, 0, false, 5, 4, 20);
  std::mt19937_64 rng(5);
  const Vec w = random_unit(rng, 10);
  const CandidateScorer scorer(model, harm, safe, fake_baselines(w, 1.0));

  CandidateDirection cand;
  cand.position_offset = -1;
  cand.layer = cfg.layer_count - 1;  // the evaluation site itself
  Vec r = 5.0 * random_unit(rng, 10);
  r -= w * w.dot(r);
  cand.vector = r;
  cand.norm = r.norm();
  const CarrierScore score = scorer.score(cand);
  CHECK(std::abs(score.s_refuse) < 1e-9);
}

TEST_CASE("directions no safe state touches have zero side effect") {
  const ToyModelConfig cfg{16, 16, 4, 8, 17};
  const ToyModel model = build_toy_model(cfg);
  // 3 prompts x 4 positions = 12 rows in a 16-dim space: a nullspace exists.
  const PromptSet safe = make_prompt_set(6, 0, false, 3, 4, 16);
  const ForwardCache cache = run_forward_cache(model, safe);
  Eigen::JacobiSVD<Mat> svd(cache.layer_inputs[2], Eigen::ComputeFullV);
  const Vec null_dir = svd.matrixV().col(15);
  REQUIRE((cache.layer_inputs[2] * null_dir).cwiseAbs().maxCoeff() < 1e-10);

  CandidateDirection cand;
  cand.position_offset = -1;
  cand.layer = 2;
  cand.vector = null_dir;
  cand.norm = 1.0;
  const auto [kl_mean, kl_max] = kl_side_effect(cand, model, safe);
  CHECK(kl_mean < 1e-12);
  CHECK(kl_max < 1e-12);
  CHECK(kl_max >= kl_mean);
}

TEST_CASE("the total score identity and the gate boundary are exact") {
  const ToyModelConfig cfg{16, 8, 4, 12, 23};
  ToyModel model = build_toy_model(cfg);
  std::mt19937_64 rng(6);
  plant_carrier(model, 1, random_unit(rng, 8), 20.0);
  const PromptSet harm = make_prompt_set(8, 1, true, 12, 5, 16);
  const PromptSet safe = make_prompt_set(8, 1, false, 12, 5, 16);
  const Baselines b = fake_baselines(random_unit(rng, 8), 2.0);

  CandidateDirection cand;
  cand.position_offset = -2;
  cand.layer = 2;
  cand.vector = 4.0 * random_unit(rng, 8);
  cand.norm = cand.vector.norm();

  const CarrierScore score = score_candidate(cand, model, harm, safe, b);
  REQUIRE(std::isfinite(score.kl));
  CHECK(score.kl > 0.0);
  CHECK(score.kl_max >= score.kl);
  CHECK(score.s_total ==
        score.s_refuse + score.s_comply - score.beta_kl * score.kl);

  // Admissibility is a closed inequality: a threshold equal to the measured
  // divergence admits, one ulp below rejects.
  ScoringConfig at_boundary;
  at_boundary.kl_threshold = score.kl;
  const CarrierScore admitted =
      score_candidate(cand, model, harm, safe, b, at_boundary);
  CHECK(admitted.kl == score.kl);
  CHECK(admitted.admissible);

  ScoringConfig below;
  below.kl_threshold = std::nextafter(score.kl, 0.0);
  CHECK_FALSE(score_candidate(cand, model, harm, safe, b, below).admissible);

  // The convenience entry points agree with the shared-cache scorer.
  CHECK(refusal_shift_score(cand, model, safe, b) ==
        doctest::Approx(score.s_refuse).epsilon(1e-12));
  CHECK(comply_shift_score(cand, model, harm, b) ==
        doctest::Approx(score.s_comply).epsilon(1e-12));
  const auto [kl_mean, kl_max] = kl_side_effect(cand, model, safe);
  CHECK(kl_mean == doctest::Approx(score.kl).epsilon(1e-12));
  CHECK(kl_max == doctest::Approx(score.kl_max).epsilon(1e-12));
}

TEST_CASE("a logit cliff blows the gate and the candidate is rejected") {
  // Hand-built model: zeroed blocks pass the embedding straight through, one
  // giant unembedding row turns an ablation into a logit cliff.
  ToyModelConfig cfg;
  cfg.vocab_size = 8;
  cfg.hidden_dim = 4;
  cfg.layer_count = 2;
  cfg.mlp_hidden = 2;
  cfg.seed = 1;
  ToyModel model = build_toy_model(cfg);
  for (auto& m : model.w1) m.setZero();
  for (auto& m : model.w2) m.setZero();
  model.embedding.setZero();
  model.embedding(2, 1) = 2.0;  // token 2 embeds to (0, 2, 0, 0)
  model.unembedding.setZero();
  model.unembedding(0, 0) = 800.0;

  const PromptSet safe = single_prompt(false, 2, 2);
  const PromptSet harm = single_prompt(true, 2, 2);

  // Baseline logits are all zero (uniform). Ablating (1,1,0,0)/sqrt(2) turns
  // the eval state into (-1, 1, 0, 0) and drives logit 0 to -800; the
  // resulting probability collapses to the subnormal floor while the
  // baseline keeps mass there, so the divergence lands three orders of
  // magnitude above the gate.
  CandidateDirection cand;
  cand.position_offset = -1;
  cand.layer = 1;
  cand.vector = Vec(4);
  cand.vector << 1.0, 1.0, 0.0, 0.0;
  cand.vector /= std::sqrt(2.0);
  cand.norm = 1.0;

  const auto [kl_mean, kl_max] = kl_side_effect(cand, model, safe);
  CHECK(kl_mean > 80.0);
  CHECK(std::isfinite(kl_mean));
  CHECK(kl_max == kl_mean);  // a single safe prompt

  std::mt19937_64 rng(7);
  const CarrierScore score = score_candidate(cand, model, harm, safe,
                                             fake_baselines(random_unit(rng, 4), 1.0));
  CHECK(score.kl == kl_mean);
  CHECK(score.s_total ==
        score.s_refuse + score.s_comply - score.beta_kl * score.kl);
  CHECK_FALSE(score.admissible);
}

TEST_CASE("ranking sorts by total score with deterministic tie-breaks") {
  auto entry = [](double s_total, int layer, int offset, bool admissible) {
    CarrierScore s;
    s.s_total = s_total;
    s.layer = layer;
    s.position_offset = offset;
    s.admissible = admissible;
    return s;
  };
  std::vector<CarrierScore> scores = {
      entry(0.5, 7, -1, true),  entry(0.5, 3, -1, true),
      entry(0.5, 3, -5, true),  entry(0.9, 9, -1, false),
      entry(0.2, 1, -1, true),  entry(-0.1, 0, -4, true),
  };
  // A blown gate writes an inadmissible marker score; ranking drops it.
  CarrierScore blown = entry(std::numeric_limits<double>::quiet_NaN(), 5, -2,
                             false);
  blown.kl = std::numeric_limits<double>::infinity();
  scores.push_back(blown);

  const RankedCandidates ranked = rank_admissible(scores);
  REQUIRE(ranked.admissible.size() == 5);
  REQUIRE(ranked.best.has_value());
  // Equal totals prefer the lower layer, then the more negative position.
  CHECK(ranked.best->layer == 3);
  CHECK(ranked.best->position_offset == -5);
  CHECK(ranked.admissible[1].layer == 3);
  CHECK(ranked.admissible[1].position_offset == -1);
  CHECK(ranked.admissible[2].layer == 7);
  CHECK(ranked.admissible[3].s_total == doctest::Approx(0.2));
  CHECK(ranked.admissible[4].s_total == doctest::Approx(-0.1));

  // Input order never matters.
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    std::shuffle(scores.begin(), scores.end(), rng);
    const RankedCandidates again = rank_admissible(scores);
    REQUIRE(again.admissible.size() == 5);
    for (std::size_t i = 0; i < 5; ++i) {
      CHECK(again.admissible[i].layer == ranked.admissible[i].layer);
      CHECK(again.admissible[i].position_offset ==
            ranked.admissible[i].position_offset);
    }
  }

  CHECK_FALSE(rank_admissible(std::vector<CarrierScore>{}).best.has_value());
  CHECK_FALSE(rank_admissible({entry(1.0, 2, -1, false)}).best.has_value());
}

TEST_CASE("grid-checked ranking demands one score per library site") {
  auto state = [](int e, int p, int l) {
    Vec s(2);
    s << e * (p + 1), l + e;
    return s;
  };
  auto harm = make_field(3, {-2, -1}, 2, 2, state);
  auto safe = make_field(3, {-2, -1}, 2, 2,
                         [&](int e, int p, int l) { return (-state(e, p, l)).eval(); });
  safe.split = Split::Safe;
  const CandidateLibrary lib = build_library(harm, safe, {-2, -1}, {0, 1});

  std::vector<CarrierScore> scores;
  for (const auto& c : lib.items) {
    CarrierScore s;
    s.position_offset = c.position_offset;
    s.layer = c.layer;
    s.s_total = c.norm;
    s.admissible = true;
    scores.push_back(s);
  }
  CHECK(rank_admissible(lib, scores).best.has_value());

  CandidateLibrary unfrozen = lib;
  unfrozen.frozen = false;
  CHECK_THROWS_AS(rank_admissible(unfrozen, scores), ValidationError);

  std::vector<CarrierScore> missing(scores.begin(), scores.end() - 1);
  CHECK_THROWS_AS(rank_admissible(lib, missing), ValidationError);

  std::vector<CarrierScore> duplicated = scores;
  duplicated[1] = duplicated[0];
  CHECK_THROWS_AS(rank_admissible(lib, duplicated), ValidationError);

  std::vector<CarrierScore> off_grid = scores;
  off_grid[2].layer = 9;
  CHECK_THROWS_AS(rank_admissible(lib, off_grid), ValidationError);
}

TEST_CASE("batch scoring equals per-candidate scoring at any thread count") {
  const ToyModelConfig cfg{16, 8, 4, 12, 29};
  ToyModel model = build_toy_model(cfg);
  std::mt19937_64 rng(9);
  plant_carrier(model, 2, random_unit(rng, 8), 30.0);

  const PromptSet harm_train = make_prompt_set(3, 0, true, 32, 5, 16);
  const PromptSet safe_train = make_prompt_set(3, 0, false, 32, 5, 16);
  const ForwardCache hc = run_forward_cache(model, harm_train);
  const ForwardCache sc = run_forward_cache(model, safe_train);

  CandidateLibrary lib;
  lib.checkpoint = 0;
  lib.position_offsets = {-1};
  lib.layers = {1, 2, 3};
  for (int layer : lib.layers) {
    CandidateDirection c;
    c.position_offset = -1;
    c.layer = layer;
    c.vector = mean_diff_at(hc, sc, layer);
    c.norm = c.vector.norm();
    lib.items.push_back(c);
  }
  lib.frozen = true;

  const PromptSet harm_val = make_prompt_set(3, 1, true, 16, 5, 16);
  const PromptSet safe_val = make_prompt_set(3, 1, false, 16, 5, 16);
  std::mt19937_64 rng2(10);
  const CandidateScorer scorer(model, harm_val, safe_val,
                               fake_baselines(random_unit(rng2, 8), 1.0));

  const std::vector<CarrierScore> serial = scorer.score_all(lib, 1);
  const std::vector<CarrierScore> threaded = scorer.score_all(lib, 2);
  REQUIRE(serial.size() == 3);
  for (std::size_t i = 0; i < serial.size(); ++i) {
    const CarrierScore one = scorer.score(lib.items[i]);
    CHECK(serial[i].s_total == one.s_total);
    CHECK(serial[i].kl == one.kl);
    CHECK(threaded[i].s_total == one.s_total);
    CHECK(threaded[i].s_refuse == one.s_refuse);
    CHECK(threaded[i].s_comply == one.s_comply);
  }
  // The planted layer's score dominates its pre-plant neighbors.
  const RankedCandidates ranked = rank_admissible(lib, serial);
  REQUIRE(ranked.best.has_value());
  CHECK(ranked.best->layer == 3);
}

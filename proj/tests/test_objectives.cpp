#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "bsl/errors.hpp"
#include "bsl/grad_check.hpp"
#include "bsl/models.hpp"
#include "bsl/objectives.hpp"
#include "bsl/rng.hpp"

using namespace bsl;

namespace {

// Direct transcription of the generalized soft Dice formula.
Real dice_oracle(const std::vector<Real>& p, const std::vector<Real>& g, std::size_t channels) {
  const std::size_t n = p.size() / channels;
  Real num = 0, den = 0;
  for (std::size_t c = 0; c < channels; ++c) {
    Real sg = 0, pg = 0, s = 0;
    for (std::size_t i = 0; i < n; ++i) {
      sg += g[c * n + i];
      pg += p[c * n + i] * g[c * n + i];
      s += p[c * n + i] + g[c * n + i];
    }
    const Real w = 1 / ((sg + 1) * (sg + 1));
    num += w * pg;
    den += w * s;
  }
  return 1 - (2 * num + 1e-6) / (den + 1e-6);
}

struct TinyProblem {
  Models models;
  ParamSet theta, omega;
  std::vector<Sequence> batch;
};

TinyProblem tiny_problem(std::size_t n, std::uint64_t seed) {
  ModelSpec spec;
  spec.segmenter.in_frames = spec.regressor.in_frames = 2;
  spec.segmenter.base_channels = spec.regressor.base_channels = 2;
  spec.segmenter.height = spec.regressor.height = 8;
  spec.segmenter.width = spec.regressor.width = 8;
  spec.regressor.depth = 2;
  TinyProblem tp{build_models(spec), initial_theta(spec, seed), initial_omega(spec, seed), {}};
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    Sequence s;
    s.frames = Tensor({2, 8, 8});
    s.targets = Tensor({2 * kNumLandmarks, 8, 8});
    for (Real& v : s.frames.data()) v = 2 * uniform01(rng) - 1;
    for (Real& v : s.targets.data()) v = uniform01(rng) < 0.3 ? 1 : 0;
    tp.batch.push_back(s);
  }
  return tp;
}

}  // namespace

TEST(SoftDice, MatchesFormula) {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Real> p(3 * 20), g(3 * 20);
    for (auto& v : p) v = uniform01(rng);
    for (auto& v : g) v = uniform01(rng) < 0.4 ? 1 : 0;
    EXPECT_NEAR(soft_dice_loss(p, g, 3), dice_oracle(p, g, 3), 1e-14);
  }
}

TEST(SoftDice, PerfectPredictionNearZeroAndRange) {
  std::vector<Real> g{1, 0, 1, 1, 0, 0};
  EXPECT_NEAR(soft_dice_loss(g, g, 2), 0, 1e-12);
  std::vector<Real> zeros(6, 0);
  const Real l = soft_dice_loss(zeros, g, 2);
  EXPECT_GT(l, 0.99);
  EXPECT_LE(l, 1);
}

TEST(SoftDice, GradientMatchesFiniteDifference) {
  Rng rng(2);
  std::vector<Real> p(2 * 10), g(2 * 10), grad(2 * 10);
  for (auto& v : p) v = uniform01(rng);
  for (auto& v : g) v = uniform01(rng) < 0.5 ? 1 : 0;
  soft_dice_loss(p, g, 2, grad);
  for (std::size_t i = 0; i < p.size(); ++i) {
    auto q = p;
    q[i] += 1e-6;
    const Real up = soft_dice_loss(q, g, 2);
    q[i] -= 2e-6;
    const Real down = soft_dice_loss(q, g, 2);
    EXPECT_NEAR(grad[i], (up - down) / 2e-6, 1e-7);
  }
}

TEST(SoftDice, SizeMismatch) {
  std::vector<Real> p(6), g(4);
  EXPECT_THROW(soft_dice_loss(p, g, 2), ContractError);
}

TEST(Ltheta, Variants) {
  const std::vector<Real> v{0.5, 0.1, 0.9, 0.3, 0.7};
  EXPECT_DOUBLE_EQ(ltheta({LthetaKind::kMin, 20}, v), 0.1);
  EXPECT_DOUBLE_EQ(ltheta({LthetaKind::kAvg, 20}, v), 0.5);
  // 40% of 5 frames -> 2 smallest.
  EXPECT_DOUBLE_EQ(ltheta({LthetaKind::kTopM, 40}, v), 0.2);
}

TEST(Ltheta, TopMCount) {
  EXPECT_EQ(top_m_count(20, 8), 2u);
  EXPECT_EQ(top_m_count(10, 4), 1u);  // round(0.4) = 0 -> at least one
  EXPECT_EQ(top_m_count(50, 8), 4u);
  EXPECT_EQ(top_m_count(100, 8), 8u);
}

TEST(Ltheta, MinGradientPicksFirstArgmin) {
  const std::vector<Real> v{0.4, 0.2, 0.2};
  std::vector<Real> d(3);
  ltheta({LthetaKind::kMin, 20}, v, d);
  EXPECT_EQ(d, (std::vector<Real>{0, 1, 0}));
}

TEST(Ltheta, ParseErrors) {
  EXPECT_THROW(parse_ltheta("max", 20), ConfigError);
  EXPECT_THROW(parse_ltheta("top_m", 0), ConfigError);
  EXPECT_EQ(parse_ltheta("top_m", 30).kind, LthetaKind::kTopM);
  EXPECT_THROW(parse_norm("zscore"), ConfigError);
}

TEST(Normalize, MinMaxExamples) {
  const auto n = minmax_normalize(std::vector<Real>{0.2, 0.5, 0.8});
  ASSERT_EQ(n.size(), 3u);
  EXPECT_EQ(n[0], 0);
  EXPECT_NEAR(n[1], 0.5, 1e-12);
  EXPECT_EQ(n[2], 1);
  EXPECT_EQ(minmax_normalize(std::vector<Real>{0.3, 0.3}), (std::vector<Real>{1, 1}));
  EXPECT_EQ(minmax_normalize(std::vector<Real>{0.7}), (std::vector<Real>{1}));
}

TEST(Normalize, RankExamples) {
  EXPECT_EQ(rank_normalize(std::vector<Real>{0.9, 0.1, 0.5}), (std::vector<Real>{1, 0, 0.5}));
  EXPECT_EQ(rank_normalize(std::vector<Real>{0.1, 0.5, 0.5, 0.9}), (std::vector<Real>{0, 0.5, 0.5, 1}));
  EXPECT_EQ(rank_normalize(std::vector<Real>{0.4}), (std::vector<Real>{1}));
}

TEST(Normalize, EmptyBatchIsContractError) {
  EXPECT_THROW(rank_normalize(std::vector<Real>{}), ContractError);
  EXPECT_THROW(minmax_normalize(std::vector<Real>{}), ContractError);
}

TEST(SkillTarget, ClampedComplement) {
  EXPECT_DOUBLE_EQ(skill_target(0.25, false), 0.75);
  EXPECT_DOUBLE_EQ(skill_target(0.25, true), 0.25);
  EXPECT_DOUBLE_EQ(skill_target(1.5, false), 0);
}

TEST(WeightedTaskLoss, MeanOfProducts) {
  EXPECT_DOUBLE_EQ(weighted_task_loss(std::vector<Real>{0.2, 0.4}, std::vector<Real>{1, 0.5}), 0.2);
  EXPECT_THROW(weighted_task_loss(std::vector<Real>{0.2}, std::vector<Real>{1, 0.5}), ContractError);
}

TEST(TaskLoss, GradientMatchesFiniteDifference) {
  for (auto kind : {LthetaKind::kMin, LthetaKind::kAvg, LthetaKind::kTopM}) {
    auto tp = tiny_problem(3, 11);
    ObjectiveOptions opts;
    opts.ltheta = {kind, 50};
    auto loss = [&](const ParamSet& theta) {
      return task_loss(tp.models.segmenter, tp.models.regressor, tp.batch, theta, tp.omega, opts).loss;
    };
    auto grad = [&](ParamSet& theta) {
      TensorMap g;
      task_loss(tp.models.segmenter, tp.models.regressor, tp.batch, theta, tp.omega, opts, &g);
      theta.accumulate_grads(g);
    };
    EXPECT_LT(finite_diff_check(tp.theta, loss, grad, {1e-5, 4, 2}), 1e-4) << to_string(opts.ltheta);
  }
}

TEST(SkillLoss, GradientMatchesFiniteDifference) {
  auto tp = tiny_problem(4, 12);
  ObjectiveOptions opts;
  auto loss = [&](const ParamSet& omega) {
    return skill_loss(tp.models.segmenter, tp.models.regressor, tp.batch, tp.theta, omega, opts).loss;
  };
  auto grad = [&](ParamSet& omega) {
    TensorMap g;
    skill_loss(tp.models.segmenter, tp.models.regressor, tp.batch, tp.theta, omega, opts, &g);
    omega.accumulate_grads(g);
  };
  EXPECT_LT(finite_diff_check(tp.omega, loss, grad, {1e-5, 4, 3}), 1e-4);
}

TEST(TaskLoss, UnitWeightsEqualPlainMean) {
  auto tp = tiny_problem(1, 13);  // one sequence: every normalization gives weight 1
  ObjectiveOptions opts;
  const BatchLoss weighted = task_loss(tp.models.segmenter, tp.models.regressor, tp.batch, tp.theta, tp.omega, opts);
  opts.uniform_weights = true;
  const BatchLoss plain = task_loss(tp.models.segmenter, tp.models.regressor, tp.batch, tp.theta, tp.omega, opts);
  EXPECT_EQ(weighted.weights, (std::vector<Real>{1}));
  EXPECT_EQ(weighted.loss, plain.loss);
}

TEST(SkillLoss, TargetsComeFromSegmenter) {
  auto tp = tiny_problem(3, 14);
  ObjectiveOptions opts;
  const BatchLoss s = skill_loss(tp.models.segmenter, tp.models.regressor, tp.batch, tp.theta, tp.omega, opts);
  const auto lt = sequence_ltheta(tp.models.segmenter, tp.theta, tp.batch, opts.ltheta, kNumLandmarks, 1);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(s.weights[i], 1 - lt[i]);
}

TEST(Objectives, ThreadCountDoesNotChangeGradients) {
  auto tp = tiny_problem(5, 15);
  ObjectiveOptions one, four;
  four.threads = 4;
  TensorMap g1, g4;
  const auto a = task_loss(tp.models.segmenter, tp.models.regressor, tp.batch, tp.theta, tp.omega, one, &g1);
  const auto b = task_loss(tp.models.segmenter, tp.models.regressor, tp.batch, tp.theta, tp.omega, four, &g4);
  EXPECT_EQ(a.loss, b.loss);
  EXPECT_EQ(g1, g4);
}

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "ascl/adversary.hpp"
#include "ascl/errors.hpp"
#include "oracles.hpp"

using namespace ascl;

namespace {

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

ModelSpec spec(std::size_t in, std::vector<std::size_t> hidden, std::size_t classes) {
  ModelSpec s;
  s.input_dim = in;
  s.hidden_layers = std::move(hidden);
  s.num_classes = classes;
  return s;
}

void set(Tensor t, const std::vector<double>& v) { std::copy(v.begin(), v.end(), t.mutable_data().begin()); }

// Logits (x0 - x1, x1 - x0) for inputs in the positive orthant.
Model difference_model() {
  Model m(spec(2, {2}, 2), 1);
  auto p = m.parameters();
  set(p[0], {1, 0, 0, 1});
  set(p[1], {0, 0});
  set(p[2], {1, -1, -1, 1});
  set(p[3], {0, 0});
  return m;
}

// Hand-written input gradient of sum_i CE(h(x_i), y_i) for a one-hidden-layer net.
std::vector<double> manual_ce_gradient(const Model& m, const Tensor& x, const std::vector<std::size_t>& y) {
  const auto p = m.parameters();
  const std::size_t n = x.rows(), d = x.cols(), h = p[0].cols(), c = p[2].cols();
  std::vector<double> out(n * d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> pre(h), act(h), logit(c);
    for (std::size_t j = 0; j < h; ++j) {
      pre[j] = p[1].data()[j];
      for (std::size_t k = 0; k < d; ++k) pre[j] += x.at(i, k) * p[0].data()[k * h + j];
      act[j] = std::max(pre[j], 0.0);
    }
    double mx = -INFINITY;
    for (std::size_t t = 0; t < c; ++t) {
      logit[t] = p[3].data()[t];
      for (std::size_t j = 0; j < h; ++j) logit[t] += act[j] * p[2].data()[j * c + t];
      mx = std::max(mx, logit[t]);
    }
    double z = 0.0;
    for (double l : logit) z += std::exp(l - mx);
    std::vector<double> dl(c);
    for (std::size_t t = 0; t < c; ++t) dl[t] = std::exp(logit[t] - mx) / z - (t == y[i] ? 1.0 : 0.0);
    for (std::size_t j = 0; j < h; ++j) {
      if (pre[j] <= 0.0) continue;
      double da = 0.0;
      for (std::size_t t = 0; t < c; ++t) da += dl[t] * p[2].data()[j * c + t];
      for (std::size_t k = 0; k < d; ++k) out[i * d + k] += da * p[0].data()[k * h + j];
    }
  }
  return out;
}

}  // namespace

TEST(ProjectLinf, Examples) {
  const Tensor orig = Tensor::vector({0.5, 0.98, 0.01});
  const Tensor adv = Tensor::vector({0.7, 1.2, -0.3});
  EXPECT_EQ(values(project_linf(adv, orig, 0.1)), (std::vector<double>{0.6, 1.0, 0.0}));
  EXPECT_EQ(values(project_linf(adv, orig, 0.0)), values(orig));
  EXPECT_THROW(project_linf(adv, Tensor::vector({0.5}), 0.1), DimensionError);
  EXPECT_THROW(project_linf(adv, orig, -0.1), ContractError);
}

TEST(ProjectLinf, IsIdempotentAndFeasible) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const Tensor orig = oracle::random_matrix(rng, 4, 5, false, 0.0, 1.0);
    const Tensor adv = oracle::random_matrix(rng, 4, 5, false, -0.5, 1.5);
    const double eps = rng.uniform(0.0, 0.3);
    const Tensor p = project_linf(adv, orig, eps);
    EXPECT_EQ(values(project_linf(p, orig, eps)), values(p));
    for (std::size_t i = 0; i < p.numel(); ++i) {
      EXPECT_LE(std::abs(p.data()[i] - orig.data()[i]), eps + 1e-15);
      EXPECT_GE(p.data()[i], 0.0);
      EXPECT_LE(p.data()[i], 1.0);
    }
  }
}

TEST(Pgd, ZeroEpsilonReturnsInputBitwise) {
  const Model m(spec(3, {8}, 3), 2);
  Rng rng(1);
  const Tensor x = oracle::random_matrix(rng, 6, 3, false, 0.0, 1.0);
  const std::vector<std::size_t> y = {0, 1, 2, 0, 1, 2};
  AttackConfig cfg;
  cfg.epsilon = 0.0;
  EXPECT_EQ(values(pgd_attack(m, x, y, cfg, 5)), values(x));
  EXPECT_EQ(values(multi_targeted_pgd(m, x, y, cfg, 5)), values(x));
}

TEST(Pgd, OneStepOnDifferenceModelHasClosedForm) {
  const Model m = difference_model();
  const Tensor x = Tensor::matrix(2, 2, {0.5, 0.4, 0.3, 0.6});
  const std::vector<std::size_t> y = {0, 1};
  AttackConfig cfg;
  cfg.epsilon = 0.05;
  cfg.eta = 0.05;
  cfg.steps = 1;
  cfg.random_init = false;
  const Tensor adv = pgd_attack(m, x, y, cfg, 0);
  // Label 0 is hurt by lowering x0 - x1; label 1 by raising it.
  const std::vector<double> expect = {0.5 - 0.05, 0.4 + 0.05, 0.3 + 0.05, 0.6 - 0.05};
  EXPECT_EQ(values(adv), expect);
}

TEST(Pgd, InputGradientMatchesHandDerivation) {
  const Model m(spec(4, {6}, 3), 8);
  Rng rng(2);
  const Tensor x = oracle::random_matrix(rng, 10, 4, false, 0.0, 1.0);
  std::vector<std::size_t> y(10);
  for (std::size_t i = 0; i < 10; ++i) y[i] = i % 3;
  const auto g = attack_gradient(m, x, y, AttackLoss::cross_entropy);
  const auto expect = manual_ce_gradient(m, x, y);
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(g[i], expect[i], 1e-12);
}

TEST(Pgd, MatchesReferenceLoop) {
  const Model m(spec(3, {10, 6}, 4), 4);
  Rng rng(7);
  const Tensor x = oracle::random_matrix(rng, 8, 3, false, 0.0, 1.0);
  std::vector<std::size_t> y(8);
  for (std::size_t i = 0; i < 8; ++i) y[i] = i % 4;
  AttackConfig cfg;
  cfg.epsilon = 0.1;
  cfg.eta = 0.03;
  cfg.steps = 7;
  const std::uint64_t seed = 99;

  std::vector<double> cur = values(x);
  for (std::size_t r = 0; r < 8; ++r) {
    Rng row_rng(derive_seed(seed, r));
    for (std::size_t k = 0; k < 3; ++k) {
      const double o = x.at(r, k);
      double v = cur[r * 3 + k] + row_rng.uniform(-cfg.epsilon, cfg.epsilon);
      cur[r * 3 + k] = std::clamp(v, std::max(o - cfg.epsilon, 0.0), std::min(o + cfg.epsilon, 1.0));
    }
  }
  for (std::size_t s = 0; s < cfg.steps; ++s) {
    const auto g = attack_gradient(m, Tensor::matrix(8, 3, cur), y, AttackLoss::cross_entropy);
    for (std::size_t i = 0; i < cur.size(); ++i) {
      const double o = x.data()[i];
      const double v = cur[i] + cfg.eta * (g[i] > 0 ? 1.0 : (g[i] < 0 ? -1.0 : 0.0));
      cur[i] = std::clamp(v, std::max(o - cfg.epsilon, 0.0), std::min(o + cfg.epsilon, 1.0));
    }
  }
  EXPECT_EQ(values(pgd_attack(m, x, y, cfg, seed)), cur);
}

TEST(Pgd, PureFeasibleAndDeterministic) {
  const Model m(spec(5, {12}, 3), 3);
  const auto before = m.parameters();
  std::vector<std::vector<double>> snapshot;
  for (const auto& p : before) snapshot.push_back(values(p));
  Rng rng(5);
  const Tensor x = oracle::random_matrix(rng, 30, 5, false, 0.0, 1.0);
  const auto x_copy = values(x);
  std::vector<std::size_t> y(30);
  for (std::size_t i = 0; i < 30; ++i) y[i] = i % 3;
  AttackConfig cfg;
  cfg.epsilon = 0.07;
  cfg.eta = 0.02;
  const Tensor a = pgd_attack(m, x, y, cfg, 1);
  const Tensor b = pgd_attack(m, x, y, cfg, 1);
  EXPECT_EQ(values(a), values(b));
  EXPECT_NE(values(a), values(pgd_attack(m, x, y, cfg, 2)));
  EXPECT_EQ(values(x), x_copy);
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(values(m.parameters()[i]), snapshot[i]);
  for (const Tensor* t : {&a, &b}) {
    for (std::size_t i = 0; i < t->numel(); ++i) {
      EXPECT_LE(std::abs(t->data()[i] - x.data()[i]), cfg.epsilon + 1e-15);
      EXPECT_GE(t->data()[i], 0.0);
      EXPECT_LE(t->data()[i], 1.0);
    }
  }
}

TEST(Pgd, RowsAreIndependentOfBatching) {
  const Model m(spec(3, {8}, 2), 6);
  const Dataset data = make_two_moons(300, 0.1, 1);
  Dataset d3 = data;
  d3.dim = 2;
  const Model moons(spec(2, {8}, 2), 6);
  AttackConfig cfg;
  cfg.epsilon = 0.05;
  cfg.steps = 3;
  const Tensor all = attack_dataset(AttackKind::pgd, moons, data, cfg, 11);
  for (std::size_t r : {0u, 1u, 255u, 256u, 299u}) {
    const std::size_t idx[] = {r};
    const Tensor single = pgd_attack(moons, data.feature_tensor(idx), data.labels_at(idx), cfg, 11, r);
    EXPECT_EQ(single.at(0, 0), all.at(r, 0));
    EXPECT_EQ(single.at(0, 1), all.at(r, 1));
  }
}

TEST(Pgd, ConstantModelLeavesInputsAlone) {
  Model m(spec(3, {4}, 3), 1);
  for (auto& p : m.parameters())
    for (double& v : p.mutable_data()) v = 0.0;
  Rng rng(9);
  const Tensor x = oracle::random_matrix(rng, 5, 3, false, 0.0, 1.0);
  const std::vector<std::size_t> y = {0, 1, 2, 0, 1};
  AttackConfig cfg;
  cfg.random_init = false;
  EXPECT_EQ(values(pgd_attack(m, x, y, cfg, 0)), values(x));
}

TEST(MultiTargeted, TwoClassesMatchesUntargetedWithoutRandomStart) {
  // With two classes ascending log p(other) and ascending CE(y) share the gradient sign.
  const Model m(spec(2, {16}, 2), 12);
  const Dataset data = make_two_moons(64, 0.1, 3);
  AttackConfig cfg;
  cfg.epsilon = 0.08;
  cfg.eta = 0.02;
  cfg.steps = 6;
  cfg.random_init = false;
  const Tensor x = data.feature_tensor();
  EXPECT_EQ(values(multi_targeted_pgd(m, x, data.labels, cfg, 0)), values(pgd_attack(m, x, data.labels, cfg, 0)));
}

TEST(MultiTargeted, NoWorseThanAnySingleTarget) {
  const Model m(spec(4, {16}, 4), 21);
  const Dataset data = make_blobs(4, 25, 4, 0.4, 2);
  AttackConfig cfg;
  cfg.epsilon = 0.1;
  cfg.eta = 0.025;
  const Tensor x = data.feature_tensor();
  const double acc_m = accuracy(m, multi_targeted_pgd(m, x, data.labels, cfg, 4), data.labels);
  AttackConfig targeted = cfg;
  targeted.loss = AttackLoss::targeted_cross_entropy;
  for (std::size_t offset = 1; offset < 4; ++offset) {
    std::vector<std::size_t> t(data.size());
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = (data.labels[i] + offset) % 4;
    const Tensor cand = pgd_attack(m, x, t, targeted, derive_seed(4, offset));
    EXPECT_LE(acc_m, accuracy(m, cand, data.labels));
  }
  EXPECT_LE(acc_m, accuracy(m, x, data.labels));
}

TEST(Evaluation, RobustAccuracyBoundedByCleanAccuracy) {
  const Model m(spec(2, {16}, 2), 5);
  const Dataset data = make_two_moons(200, 0.1, 9);
  AttackConfig cfg;
  cfg.random_init = false;
  const double clean = robust_accuracy(m, data, AttackKind::none, cfg, 0);
  EXPECT_DOUBLE_EQ(clean, accuracy(m, data.feature_tensor(), data.labels));
  EXPECT_LE(robust_accuracy(m, data, AttackKind::pgd, cfg, 0), clean);
  EXPECT_EQ(parse_attack_kind("mpgd"), AttackKind::mpgd);
  EXPECT_THROW(parse_attack_kind("fgsm"), ConfigError);
}

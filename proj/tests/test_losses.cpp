#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "good/losses.hpp"
#include "good/theory.hpp"
#include "oracles.hpp"

using namespace good;

namespace {

const double kLn2 = std::log(2.0);
const double kLn10 = std::log(10.0);

// Owns the feature storage that a TrainBatch only views.
struct OwnedBatch {
  std::vector<std::vector<float>> feats;
  TrainBatch batch;
  void rebind() {
    batch.features.clear();
    for (const auto& f : feats) batch.features.emplace_back(f.data(), f.size());
  }
};

PrototypeBank random_bank(std::mt19937_64& gen, std::uint32_t c, std::uint32_t d, double scale) {
  std::normal_distribution<double> nd(0.0, scale);
  PrototypeBank b(c, d, 0.5 + std::uniform_real_distribution<double>()(gen));
  for (auto& v : b.prototypes) v = nd(gen);
  return b;
}

OwnedBatch random_batch(std::mt19937_64& gen, std::uint32_t c, std::uint32_t d, std::size_t n, bool with_ood) {
  OwnedBatch ob;
  std::normal_distribution<float> nd;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<float> f(d);
    for (auto& v : f) v = nd(gen);
    ob.feats.push_back(f);
    ob.batch.gkm.push_back(oracle::simplex(gen, c));
    const bool ood = with_ood && (i % 2 == 1);
    ob.batch.targets.push_back(ood ? kOodLabel : std::uint32_t(gen() % c));
  }
  ob.rebind();
  return ob;
}

double total(const TrainBatch& b, const PrototypeBank& bank, const ObjectiveWeights& w) {
  return evaluate_objective(b, bank, w).total;
}

// Smallest |p_j - q_j| over the batch; near zero the L1 term has a kink.
double kink_margin(const TrainBatch& b, const PrototypeBank& bank) {
  double m = INFINITY;
  for (std::size_t i = 0; i < b.size(); ++i) {
    auto p = class_posteriors(b.features[i], bank);
    for (std::size_t j = 0; j < p.size(); ++j) m = std::min(m, std::fabs(p[j] - b.gkm[i][j]));
  }
  return m;
}

}  // namespace

TEST(CrossEntropy, Examples) {
  std::vector<double> onehot = {0, 1, 0};
  EXPECT_EQ(ce_loss(onehot, 1), 0.0);
  std::vector<double> u(10, 0.1);
  EXPECT_NEAR(ce_loss(u, 3), 2.302585, 1e-6);
  EXPECT_NEAR(ce_loss(u, 3), kLn10, 1e-15);
  std::vector<double> half = {0.5, 0.25, 0.25};
  EXPECT_NEAR(ce_loss(half, 0), kLn2, 1e-15);
}

TEST(CrossEntropy, ClampsZeroProbability) {
  std::vector<double> p = {1.0, 0.0};
  bool clamped = false;
  const double l = ce_loss(p, 1, &clamped);
  EXPECT_TRUE(clamped);
  EXPECT_NEAR(l, -std::log(1e-12), 1e-9);
  EXPECT_TRUE(std::isfinite(l));
  clamped = false;
  ce_loss(p, 0, &clamped);
  EXPECT_FALSE(clamped);
  EXPECT_THROW(ce_loss(p, 2), std::invalid_argument);
}

TEST(UniformOod, Examples) {
  std::vector<double> u5(5, 0.2);
  EXPECT_NEAR(uniform_ood_loss(u5), std::log(5.0), 1e-15);
  std::vector<double> h = {0.5, 0.5};
  EXPECT_NEAR(uniform_ood_loss(h), kLn2, 1e-15);
  std::vector<double> p = {0.9, 0.1};
  EXPECT_NEAR(uniform_ood_loss(p), 1.2040, 1e-4);
  EXPECT_NEAR(uniform_ood_loss(p), -0.5 * (std::log(0.9) + std::log(0.1)), 1e-15);
}

TEST(UniformOod, MinimumAtUniform) {
  std::mt19937_64 gen(10);
  for (int t = 0; t < 5000; ++t) {
    const std::size_t c = 2 + gen() % 30;
    auto p = oracle::simplex(gen, c, t % 2 == 0);
    EXPECT_GE(uniform_ood_loss(p), std::log(double(c)) - 1e-9);
  }
}

TEST(Reg, Examples) {
  std::vector<double> p = {0.6, 0.4}, q = {0.4, 0.6};
  EXPECT_EQ(reg_loss(p, p), 0.0);
  EXPECT_NEAR(reg_loss(p, q), 0.2, 1e-15);
  std::vector<double> a = {1, 0}, b = {0, 1};
  EXPECT_NEAR(reg_loss(a, b), 1.0, 1e-15);
  std::vector<double> c3 = {1, 0, 0};
  EXPECT_THROW(reg_loss(a, c3), std::invalid_argument);
}

TEST(Reg, EqualsScaledTotalVariation) {
  std::mt19937_64 gen(11);
  for (int t = 0; t < 5000; ++t) {
    const std::size_t c = 2 + gen() % 30;
    auto p = oracle::simplex(gen, c), q = oracle::simplex(gen, c, true);
    EXPECT_NEAR(reg_loss(p, q), 2.0 / double(c) * tv_distance(p, q), 1e-12);
  }
}

TEST(TrainLoss, Examples) {
  std::vector<double> onehot = {0, 0, 1};
  EXPECT_EQ(train_loss(onehot, 2, 0.25), 0.0);
  std::vector<double> p = {0.3, 0.7};
  EXPECT_EQ(train_loss(p, kOodLabel, 0.0), 0.0);
  std::vector<double> u(10, 0.1);
  EXPECT_NEAR(train_loss(u, kOodLabel, 0.25), 0.25 * kLn10, 1e-15);
}

TEST(Objective, ModeEndpoints) {
  std::mt19937_64 gen(12);
  for (int t = 0; t < 50; ++t) {
    const std::uint32_t c = 2 + gen() % 8;
    std::vector<ProbVector> p, q;
    std::vector<std::uint32_t> y;
    for (int i = 0; i < 6; ++i) {
      p.push_back(oracle::simplex(gen, c));
      q.push_back(oracle::simplex(gen, c));
      y.push_back(i % 3 == 0 ? kOodLabel : std::uint32_t(gen() % c));
    }
    const ObjectiveWeights base{0.25, 0.0, Mode::kBaseline};
    const double baseline = kde_objective(p, q, y, base).total;
    EXPECT_EQ(kde_objective(p, {}, y, base).total, baseline);

    // lambda = 0 in any mode with u = 0 is the baseline
    for (Mode m : {Mode::kReg, Mode::kBaseline}) {
      EXPECT_NEAR(kde_objective(p, q, y, {0.25, 0.0, m}).total, baseline, 1e-12);
    }
    std::vector<double> zeros(6, 0.0), ones(6, 1.0);
    EXPECT_NEAR(kde_objective(p, q, y, {0.25, 0.7, Mode::kKde}, zeros).total, baseline, 1e-12);

    // u = 1 keeps only lambda * mean reg
    auto full = kde_objective(p, q, y, {0.25, 0.7, Mode::kKde}, ones);
    EXPECT_NEAR(full.total, 0.7 * full.reg, 1e-12);

    // one-hot GKM posteriors give u = 1 without an override
    std::vector<ProbVector> hard;
    for (int i = 0; i < 6; ++i) {
      ProbVector h(c, 0.0);
      h[gen() % c] = 1.0;
      hard.push_back(h);
    }
    auto oh = kde_objective(p, hard, y, {0.25, 0.7, Mode::kKde});
    EXPECT_NEAR(oh.total, 0.7 * oh.reg, 1e-12);
    for (double u : oh.per_sample_u) EXPECT_EQ(u, 1.0);

    // reg mode adds lambda * reg on top of the train loss
    auto r = kde_objective(p, q, y, {0.25, 0.4, Mode::kReg});
    EXPECT_NEAR(r.total, baseline + 0.4 * r.reg, 1e-12);
    EXPECT_NEAR(baseline, r.ce + 0.25 * r.ood_uniform, 1e-12);
  }
}

TEST(Objective, AffineInBelief) {
  std::mt19937_64 gen(13);
  std::uniform_real_distribution<double> unif;
  for (int t = 0; t < 50; ++t) {
    const std::uint32_t c = 3 + gen() % 5;
    std::vector<ProbVector> p, q;
    std::vector<std::uint32_t> y;
    std::vector<double> u;
    for (int i = 0; i < 5; ++i) {
      p.push_back(oracle::simplex(gen, c));
      q.push_back(oracle::simplex(gen, c));
      y.push_back(i == 0 ? kOodLabel : std::uint32_t(gen() % c));
      u.push_back(unif(gen));
    }
    const ObjectiveWeights w{0.25, 0.3, Mode::kKde};
    std::vector<double> zeros(5, 0.0), ones(5, 1.0), flipped(5);
    for (int i = 0; i < 5; ++i) flipped[i] = 1.0 - u[i];
    const double at0 = kde_objective(p, q, y, w, zeros).total;
    const double at1 = kde_objective(p, q, y, w, ones).total;
    // the endpoints carry the train and reg parts; u and 1-u split them complementarily
    const double at_u = kde_objective(p, q, y, w, u).total;
    const double at_flip = kde_objective(p, q, y, w, flipped).total;
    EXPECT_NEAR(at_u + at_flip, at0 + at1, 1e-12);
    double weighted = 0;
    for (int i = 0; i < 5; ++i) {
      std::vector<ProbVector> pi = {p[i]}, qi = {q[i]};
      std::vector<std::uint32_t> yi = {y[i]};
      std::vector<double> z0 = {0.0}, z1 = {1.0};
      weighted += (1 - u[i]) * kde_objective(pi, qi, yi, w, z0).total + u[i] * kde_objective(pi, qi, yi, w, z1).total;
    }
    EXPECT_NEAR(at_u, weighted / 5, 1e-12);
  }
}

TEST(Objective, BreakdownAndErrors) {
  std::vector<ProbVector> p = {{0.5, 0.5}, {0.9, 0.1}};
  std::vector<ProbVector> q = {{0.5, 0.5}, {0.5, 0.5}};
  std::vector<std::uint32_t> y = {0, kOodLabel};
  auto b = kde_objective(p, q, y, {0.25, 0.3, Mode::kReg});
  EXPECT_NEAR(b.ce, kLn2 / 2, 1e-15);
  EXPECT_NEAR(b.ood_uniform, 1.2039728043259361 / 2, 1e-12);
  EXPECT_NEAR(b.reg, (0.4 + 0.4) / 2 / 2, 1e-15);  // row 0 contributes 0
  EXPECT_NEAR(b.total, b.ce + 0.25 * b.ood_uniform + 0.3 * b.reg, 1e-15);
  EXPECT_EQ(b.per_sample_u, (std::vector<double>{0.5, 0.5}));

  EXPECT_THROW(kde_objective(p, {}, y, {0.25, 0.3, Mode::kKde}), std::invalid_argument);
  EXPECT_THROW(kde_objective(p, {}, y, {0.25, 0.3, Mode::kReg}), std::invalid_argument);
  std::vector<std::uint32_t> short_y = {0};
  EXPECT_THROW(kde_objective(p, q, short_y, {}), std::invalid_argument);
  EXPECT_THROW(kde_objective(p, q, y, {-1.0, 0.3, Mode::kReg}), std::invalid_argument);
  std::vector<double> bad_u = {1.0};
  EXPECT_THROW(kde_objective(p, q, y, {}, bad_u), std::invalid_argument);
  EXPECT_THROW(parse_mode("sgd"), std::invalid_argument);
  EXPECT_EQ(parse_mode(to_string(Mode::kKde)), Mode::kKde);
}

TEST(Gradient, ZeroAtPerfectIdFit) {
  PrototypeBank bank(3, 2, 1.0);
  bank.prototypes = {1000, 0, 0, 0, -1000, 0};
  std::vector<float> z = {1, 0};
  TrainBatch b;
  b.features.emplace_back(z.data(), z.size());
  b.targets = {0};
  auto g = objective_gradient(b, bank, {0.25, 0.3, Mode::kBaseline});
  for (double v : g.values) EXPECT_EQ(v, 0.0);
}

TEST(Gradient, ZeroForUniformOodSample) {
  PrototypeBank bank(4, 3, 1.0);
  std::mt19937_64 gen(14);
  std::normal_distribution<double> nd;
  for (int c = 0; c < 4; ++c)
    for (int k = 0; k < 3; ++k) bank.prototypes[c * 3 + k] = (k == 0 ? 0.0 : nd(gen));
  std::vector<float> z = {2.5f, 0, 0};  // orthogonal to every prototype's varying part
  TrainBatch b;
  b.features.emplace_back(z.data(), z.size());
  b.targets = {kOodLabel};
  auto g = objective_gradient(b, bank, {0.25, 0.3, Mode::kBaseline});
  for (double v : g.values) EXPECT_EQ(v, 0.0);
}

TEST(Gradient, MatchesCentralDifferencesOverSeeds) {
  const Mode modes[] = {Mode::kBaseline, Mode::kReg, Mode::kKde};
  int checked = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 gen(1000 + seed);
    const Mode mode = modes[seed % 3];
    const ObjectiveWeights w{0.25, 0.3 + 0.5 * (seed % 2), mode};
    PrototypeBank bank;
    OwnedBatch ob;
    // resample configurations sitting on an L1 kink
    do {
      bank = random_bank(gen, 6, 8, 0.4);
      ob = random_batch(gen, 6, 8, 4, seed % 4 != 0);
    } while (mode != Mode::kBaseline && kink_margin(ob.batch, bank) < 1e-3);

    auto g = objective_gradient(ob.batch, bank, w);
    const double h = 1e-5;
    double max_rel = 0;
    for (std::size_t i = 0; i < bank.prototypes.size(); ++i) {
      auto plus = bank, minus = bank;
      plus.prototypes[i] += h;
      minus.prototypes[i] -= h;
      const double fd = (total(ob.batch, plus, w) - total(ob.batch, minus, w)) / (2 * h);
      const double rel = std::fabs(fd - g.values[i]) / std::max(1e-8, std::max(std::fabs(fd), std::fabs(g.values[i])));
      if (std::fabs(fd - g.values[i]) > 1e-9) max_rel = std::max(max_rel, rel);
    }
    EXPECT_LE(max_rel, 1e-4) << "seed " << seed << " mode " << to_string(mode);
    ++checked;
  }
  EXPECT_EQ(checked, 100);
}

TEST(Gradient, MissingGkmInRegModeThrows) {
  std::mt19937_64 gen(15);
  auto bank = random_bank(gen, 3, 2, 1.0);
  auto ob = random_batch(gen, 3, 2, 2, false);
  ob.batch.gkm.clear();
  EXPECT_THROW(objective_gradient(ob.batch, bank, {0.25, 0.3, Mode::kKde}), std::invalid_argument);
  EXPECT_NO_THROW(objective_gradient(ob.batch, bank, {0.25, 0.3, Mode::kBaseline}));
}

TEST(Objective, ClassPermutationEquivariance) {
  std::mt19937_64 gen(16);
  for (int t = 0; t < 30; ++t) {
    const std::uint32_t c = 5, d = 4;
    auto bank = random_bank(gen, c, d, 0.7);
    auto ob = random_batch(gen, c, d, 6, true);
    std::vector<std::uint32_t> perm(c);
    std::iota(perm.begin(), perm.end(), 0u);
    std::shuffle(perm.begin(), perm.end(), gen);

    // class j moves to slot perm[j]
    auto pbank = bank;
    for (std::uint32_t j = 0; j < c; ++j)
      for (std::uint32_t k = 0; k < d; ++k) pbank.prototypes[perm[j] * d + k] = bank.prototypes[j * d + k];
    auto pb = ob;
    pb.rebind();
    for (std::size_t i = 0; i < ob.batch.size(); ++i) {
      for (std::uint32_t j = 0; j < c; ++j) pb.batch.gkm[i][perm[j]] = ob.batch.gkm[i][j];
      if (ob.batch.targets[i] != kOodLabel) pb.batch.targets[i] = perm[ob.batch.targets[i]];
    }
    for (Mode m : {Mode::kBaseline, Mode::kReg, Mode::kKde}) {
      const ObjectiveWeights w{0.25, 0.3, m};
      auto a = evaluate_objective(ob.batch, bank, w);
      auto b = evaluate_objective(pb.batch, pbank, w);
      EXPECT_NEAR(a.total, b.total, 1e-12);
      EXPECT_NEAR(a.reg, b.reg, 1e-12);
      auto ga = objective_gradient(ob.batch, bank, w);
      auto gb = objective_gradient(pb.batch, pbank, w);
      for (std::uint32_t j = 0; j < c; ++j)
        for (std::uint32_t k = 0; k < d; ++k) EXPECT_NEAR(ga.values[j * d + k], gb.values[perm[j] * d + k], 1e-12);
    }
  }
}

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "good/scoring.hpp"

namespace good {

/// Probabilities are clamped to this floor before taking logarithms.
inline constexpr double kProbFloor = 1e-12;

/// Objective variants:
///   baseline  train loss only
///   reg       train loss + lambda * reg loss
///   kde       (1 - u) * train loss + lambda * u * reg loss, u = G-Belief
enum class Mode { kBaseline, kReg, kKde };

const char* to_string(Mode mode);
Mode parse_mode(const std::string& text);

/// -log p_y. Sets *clamped when p_y fell below kProbFloor.
double ce_loss(std::span<const double> p, std::uint32_t y, bool* clamped = nullptr);

/// Cross-entropy to the uniform distribution, -(1/C) sum_j log p_j. Minimum ln C at uniform p.
double uniform_ood_loss(std::span<const double> p, bool* clamped = nullptr);

/// Mean absolute difference (1/C) sum_j |p_j - q_j|, i.e. (2/C) TV(p, q).
double reg_loss(std::span<const double> p, std::span<const double> q);

/// ce_loss for an ID target, alpha * uniform_ood_loss when target == kOodLabel.
double train_loss(std::span<const double> p, std::uint32_t target, double alpha,
                  bool* clamped = nullptr);

struct ObjectiveWeights {
  double alpha = 0.25;
  double lambda = 0.3;
  Mode mode = Mode::kKde;
};

/// Batch means of the raw loss components and the mode-weighted total.
/// For baseline and reg, total == ce + alpha*ood_uniform (+ lambda*reg).
struct LossBreakdown {
  double ce = 0.0;           // sum of ID cross-entropies / batch size
  double ood_uniform = 0.0;  // sum of unweighted OOD uniform losses / batch size
  double reg = 0.0;          // mean reg loss over the batch
  double total = 0.0;
  std::vector<double> per_sample_u;
  bool clamped = false;
};

/// `q` may be empty only in baseline mode. `belief_override`, when non-empty,
/// replaces the per-sample u derived from q.
LossBreakdown kde_objective(std::span<const ProbVector> p, std::span<const ProbVector> q,
                            std::span<const std::uint32_t> targets, const ObjectiveWeights& weights,
                            std::span<const double> belief_override = {});

/// d total / d t_j for every prototype, row-major C x dim.
struct Gradient {
  std::uint32_t n_classes = 0;
  std::uint32_t dim = 0;
  std::vector<double> values;

  std::span<const double> row(std::uint32_t c) const {
    return {values.data() + std::size_t(c) * dim, dim};
  }
};

/// Features (views into embedding sets), frozen GKM posteriors, and targets
/// (class id, or kOodLabel for auxiliary OOD samples), index-aligned.
struct TrainBatch {
  std::vector<std::span<const float>> features;
  std::vector<ProbVector> gkm;
  std::vector<std::uint32_t> targets;

  std::size_t size() const { return features.size(); }
};

/// Posteriors of the batch under `bank`, fed to kde_objective.
LossBreakdown evaluate_objective(const TrainBatch& batch, const PrototypeBank& bank,
                                 const ObjectiveWeights& weights);

/// Analytic gradient of evaluate_objective(...).total. u is a constant weight
/// and the L1 subgradient is 0 at exact ties.
Gradient objective_gradient(const TrainBatch& batch, const PrototypeBank& bank,
                            const ObjectiveWeights& weights);

}  // namespace good

#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "good/embedkit.hpp"
#include "good/losses.hpp"
#include "good/scoring.hpp"

namespace good {

/// Half the L1 distance between two distributions.
double tv_distance(std::span<const double> p, std::span<const double> q);

/// Mean per-sample TV between two aligned output sets.
double tv_dataset(std::span<const ProbVector> f, std::span<const ProbVector> g);

/// sum_j p_j ln(p_j / q_j) with 0 ln 0 = 0. q is clamped at kProbFloor; *clamped
/// reports whether that happened at some p_j > 0 (the unclamped value is infinite).
double kl_divergence(std::span<const double> p, std::span<const double> q, bool* clamped = nullptr);

double kl_dataset(std::span<const ProbVector> p, std::span<const ProbVector> q, bool* clamped = nullptr);

/// sqrt(KL(p, q) / 2) - TV(p, q). Pinsker's inequality makes this >= 0.
double pinsker_gap(std::span<const double> p, std::span<const double> q);

/// Ground-truth rows: one-hot at the label for ID samples, uniform for OOD samples.
std::vector<ProbVector> target_distribution(std::span<const std::uint32_t> labels, std::uint32_t n_classes);

/// TV between model outputs and the ground-truth rows over a (joint ID + OOD) test set.
double gerror(std::span<const ProbVector> f, std::span<const ProbVector> targets);

/// TV_test(g, f*) - TV_train(g, f*).
double df_estimate(std::span<const ProbVector> g_train, std::span<const ProbVector> fstar_train,
                   std::span<const ProbVector> g_test, std::span<const ProbVector> fstar_test);

/// Stand-in for the optimal hypothesis f*. ID rows come from the analytic
/// Bayes posterior (synthetic data) or a reference bank (real data); OOD rows
/// are uniform, matching the ground-truth target for OOD samples.
class ReferenceHypothesis {
 public:
  static ReferenceHypothesis analytic(GeneratorSpec spec);
  static ReferenceHypothesis from_bank(PrototypeBank bank);

  std::vector<ProbVector> outputs(const EmbeddingSet& set) const;

  /// True for the bank path, where f* is only approximated.
  bool approximate() const { return bank_.has_value(); }
  std::string describe() const;

 private:
  std::optional<GeneratorSpec> spec_;
  std::vector<double> means_;
  std::optional<PrototypeBank> bank_;
};

/// Computable terms of the generalization bound. The Rademacher/confidence
/// constant is not represented.
struct BoundReport {
  double gerror = 0.0;
  double train_term = 0.0;  // sqrt(KL_train(P_true || f) / 2)
  double tv_train = 0.0;    // TV_train(g, f)
  double tv_test = 0.0;     // TV_test(g, f)
  double df = 0.0;          // TV_test(g, f*) - TV_train(g, f*)
  double sum_computable = 0.0;
  double lambda_config = 0.0;
  Mode mode = Mode::kKde;
};

/// `test` is the joint ID + OOD test set; both sets must carry labels.
BoundReport bound_report(const PrototypeBank& f, const PrototypeBank& g, const EmbeddingSet& train,
                         const EmbeddingSet& test, const ReferenceHypothesis& fstar,
                         double lambda_config, Mode mode);

std::string to_json(const BoundReport& report);

}  // namespace good

#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "good/embedkit.hpp"

namespace good {

/// Point on the probability simplex (entries >= 0, sum 1).
using ProbVector = std::vector<double>;

/// Class prototypes t_1..t_C in feature space plus a softmax temperature.
/// A frozen instance plays the role of the general-knowledge model.
struct PrototypeBank {
  std::uint32_t n_classes = 0;
  std::uint32_t dim = 0;
  double tau = 1.0;
  std::vector<double> prototypes;  // n_classes x dim, row-major

  PrototypeBank() = default;
  PrototypeBank(std::uint32_t classes, std::uint32_t dimension, double temperature)
      : n_classes(classes), dim(dimension), tau(temperature),
        prototypes(std::size_t(classes) * dimension, 0.0) {}

  std::span<const double> prototype(std::uint32_t c) const {
    return {prototypes.data() + std::size_t(c) * dim, dim};
  }
  std::span<double> prototype(std::uint32_t c) {
    return {prototypes.data() + std::size_t(c) * dim, dim};
  }

  void validate() const;

  /// Copy with every value rounded to float32, i.e. exactly what a save/load cycle yields.
  PrototypeBank storage_rounded() const;

  friend bool operator==(const PrototypeBank&, const PrototypeBank&) = default;
};

// "GPTB" file: magic, version u32=1, C u32, dim u32, tau f32, C rows of f32.
std::vector<std::uint8_t> serialize_bank(const PrototypeBank& bank);
PrototypeBank deserialize_bank(std::span<const std::uint8_t> bytes);
void save_bank(const PrototypeBank& bank, const std::filesystem::path& path);
PrototypeBank load_bank(const std::filesystem::path& path);

/// Max-subtracted softmax.
ProbVector softmax(std::span<const double> logits);

/// Index of the largest entry; ties go to the lowest index.
std::size_t argmax(std::span<const double> values);

/// softmax(<z, t_j> / tau) over the bank's classes.
template <class T>
ProbVector class_posteriors(std::span<const T> z, const PrototypeBank& bank) {
  if (z.size() != bank.dim) {
    throw std::invalid_argument("class_posteriors: feature dim " + std::to_string(z.size()) +
                                " != bank dim " + std::to_string(bank.dim));
  }
  for (T v : z) {
    if (!std::isfinite(v)) throw std::invalid_argument("class_posteriors: non-finite feature");
  }
  std::vector<double> logits(bank.n_classes);
  const double inv_tau = 1.0 / bank.tau;
  for (std::uint32_t c = 0; c < bank.n_classes; ++c) {
    const auto t = bank.prototype(c);
    double dot = 0.0;
    for (std::size_t k = 0; k < z.size(); ++k) dot += double(z[k]) * t[k];
    logits[c] = dot * inv_tau;
  }
  return softmax(logits);
}

/// Global-feature posteriors for every row of `set`. Parallel over rows
/// (GOOD_THREADS); the result does not depend on the thread count.
std::vector<ProbVector> set_posteriors(const EmbeddingSet& set, const PrototypeBank& bank);

/// Posteriors of each local patch of sample `i`.
std::vector<ProbVector> local_posteriors(const EmbeddingSet& set, std::size_t i,
                                         const PrototypeBank& bank);

enum class ScoreKind { kMcm, kGlmcm };

const char* to_string(ScoreKind kind);
ScoreKind parse_score_kind(const std::string& text);

struct Score {
  double value = 0.0;
  ScoreKind kind = ScoreKind::kMcm;
};

/// Maximum softmax probability.
Score mcm_score(std::span<const double> p);

/// Best (patch, class) local probability plus the global MCM score.
Score glmcm_score(std::span<const double> p_global, std::span<const ProbVector> p_locals);

enum class Decision { kId, kOod };

/// ID iff score >= threshold.
Decision decide(const Score& s, double threshold);

/// G-Belief: the general-knowledge model's maximum posterior on a sample.
double g_belief(std::span<const double> p_gkm);

/// Per-sample OOD scores of `set` under `bank`. glmcm requires local features.
std::vector<double> set_scores(const EmbeddingSet& set, const PrototypeBank& bank, ScoreKind kind);

/// General-knowledge bank for a synthetic benchmark: prototypes
/// (mu_c + noise) / sigma^2 at tau = 1, so with zero noise its posteriors equal
/// the analytic Bayes posterior.
PrototypeBank synthetic_gkm(const GeneratorSpec& spec, std::span<const double> means);

}  // namespace good

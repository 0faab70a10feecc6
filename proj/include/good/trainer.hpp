#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "good/embedkit.hpp"
#include "good/losses.hpp"
#include "good/metrics.hpp"
#include "good/scoring.hpp"
#include "good/theory.hpp"

namespace good {

struct TrainConfig {
  double lambda = 0.3;
  double alpha = 0.25;
  double tau = 1.0;
  std::uint32_t top_k = 200;
  double lr = 0.002;
  std::uint32_t epochs = 50;
  std::uint32_t batch = 32;
  std::uint32_t shots_per_class = 16;  // 0 = every labeled ID sample
  std::uint64_t seed = 0;
  Mode mode = Mode::kKde;
  ScoreKind score_kind = ScoreKind::kMcm;

  /// Throws std::invalid_argument naming the first bad field.
  void validate() const;

  ObjectiveWeights weights() const { return {alpha, lambda, mode}; }
};

std::string to_json(const TrainConfig& cfg);

struct EpochLog {
  std::uint32_t epoch = 0;
  double ce = 0.0;
  double ood_uniform = 0.0;
  double reg = 0.0;
  double total = 0.0;
  double mean_u = 0.0;
};

struct Checkpoint {
  PrototypeBank bank;
  std::uint32_t epoch = 0;
  std::vector<EpochLog> loss_history;
  TrainConfig config;
  std::vector<std::string> warnings;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Patch indices whose posterior ranks the true class strictly below the top K
/// (descending order, ties by class index). Those patches become auxiliary OOD samples.
std::vector<std::size_t> extract_ood_patches(std::span<const ProbVector> local_posteriors, std::uint32_t label,
                                             std::uint32_t top_k);

/// Seeded few-shot subset: `shots` samples per ID class, class-major order.
/// OOD-labeled rows are kept as they are. shots == 0 keeps every row.
EmbeddingSet subsample_shots(const EmbeddingSet& set, std::uint32_t shots, std::uint64_t seed);

/// Mini-batch SGD on the selected objective. `gkm` may be null in baseline
/// mode. The returned bank is rounded to its on-disk precision.
Checkpoint train(const EmbeddingSet& train_set, const PrototypeBank* gkm, const PrototypeBank& init,
                 const TrainConfig& cfg);

/// Writes the bank to `bank_path` and the training log to "<bank_path>.log.json".
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& bank_path);
std::filesystem::path training_log_path(const std::filesystem::path& bank_path);
std::string training_log_json(const Checkpoint& ckpt);

struct SweepRow {
  double lambda = 0.0;
  Mode mode = Mode::kKde;
  EvalReport eval;
  BoundReport bound;
  double final_total_loss = 0.0;
  std::optional<std::string> error;
};

/// One training run per lambda, each evaluated for detection metrics and bound terms.
/// A failing run yields an error row and the sweep continues.
std::vector<SweepRow> sweep(const EmbeddingSet& train_set, const EmbeddingSet& test_id,
                            const EmbeddingSet& test_ood, const PrototypeBank& gkm, const PrototypeBank& init,
                            const TrainConfig& base, std::span<const double> lambdas,
                            const ReferenceHypothesis& fstar);

inline constexpr const char* kSweepHeader =
    "lambda,mode,fpr95,auroc,id_accuracy,gerror,train_term,tv_train,tv_test,df,sum_computable,"
    "final_total_loss";

std::string sweep_csv(std::span<const SweepRow> rows);

/// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> a, std::span<const double> b);

}  // namespace good

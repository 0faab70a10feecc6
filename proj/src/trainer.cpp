#include "good/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "good/rng.hpp"
#include "json.hpp"

namespace good {
namespace {

void require(bool ok, const char* field, const char* why) {
  if (!ok) throw std::invalid_argument(std::string("train config: ") + field + " " + why);
}

template <class T>
void shuffle(std::vector<T>& items, SplitMix64& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace

void TrainConfig::validate() const {
  require(std::isfinite(lambda) && lambda >= 0, "lambda", "must be >= 0");
  require(std::isfinite(alpha) && alpha >= 0, "alpha", "must be >= 0");
  require(std::isfinite(tau) && tau > 0, "tau", "must be > 0");
  require(std::isfinite(lr) && lr > 0, "lr", "must be > 0");
  require(top_k >= 1, "top_k", "must be >= 1");
  require(batch >= 1, "batch", "must be >= 1");
}

std::string to_json(const TrainConfig& cfg) {
  nlohmann::ordered_json j;
  j["lambda"] = cfg.lambda;
  j["alpha"] = cfg.alpha;
  j["tau"] = cfg.tau;
  j["top_k"] = cfg.top_k;
  j["lr"] = cfg.lr;
  j["epochs"] = cfg.epochs;
  j["batch"] = cfg.batch;
  j["shots_per_class"] = cfg.shots_per_class;
  j["seed"] = cfg.seed;
  j["mode"] = to_string(cfg.mode);
  j["score_kind"] = to_string(cfg.score_kind);
  return j.dump();
}

std::vector<std::size_t> extract_ood_patches(std::span<const ProbVector> local_posteriors, std::uint32_t label,
                                             std::uint32_t top_k) {
  std::vector<std::size_t> extracted;
  for (std::size_t patch = 0; patch < local_posteriors.size(); ++patch) {
    const auto& p = local_posteriors[patch];
    if (label >= p.size()) throw std::invalid_argument("extract_ood_patches: label out of range");
    std::size_t rank = 1;
    for (std::size_t j = 0; j < p.size(); ++j) {
      if (p[j] > p[label] || (p[j] == p[label] && j < label)) ++rank;
    }
    if (rank > top_k) extracted.push_back(patch);
  }
  return extracted;
}

EmbeddingSet subsample_shots(const EmbeddingSet& set, std::uint32_t shots, std::uint64_t seed) {
  if (!set.has_labels()) throw std::invalid_argument("subsample_shots: training set needs labels");
  if (shots == 0) return set;
  std::vector<std::vector<std::size_t>> by_class(set.n_classes);
  std::vector<std::size_t> ood_rows;
  for (std::size_t i = 0; i < set.n_samples; ++i) {
    if (set.is_ood(i)) ood_rows.push_back(i);
    else by_class[set.labels[i]].push_back(i);
  }
  SplitMix64 rng(derive_seed(seed, streams::kShots));
  std::vector<std::size_t> rows;
  for (std::uint32_t c = 0; c < set.n_classes; ++c) {
    auto& members = by_class[c];
    if (members.size() < shots) {
      throw std::invalid_argument("subsample_shots: class " + std::to_string(c) + " has " +
                                  std::to_string(members.size()) + " samples, fewer than " +
                                  std::to_string(shots) + " shots");
    }
    shuffle(members, rng);
    rows.insert(rows.end(), members.begin(), members.begin() + shots);
  }
  rows.insert(rows.end(), ood_rows.begin(), ood_rows.end());
  return select_rows(set, rows);
}

Checkpoint train(const EmbeddingSet& train_set, const PrototypeBank* gkm, const PrototypeBank& init,
                 const TrainConfig& cfg) {
  cfg.validate();
  init.validate();
  if (gkm == nullptr && cfg.mode != Mode::kBaseline)
    throw std::invalid_argument(std::string("train: mode ") + to_string(cfg.mode) + " needs a GKM bank");
  if (train_set.dim != init.dim) throw std::invalid_argument("train: feature dim does not match the bank");
  if (train_set.n_classes != init.n_classes)
    throw std::invalid_argument("train: class count does not match the bank");
  if (gkm != nullptr && (gkm->dim != init.dim || gkm->n_classes != init.n_classes))
    throw std::invalid_argument("train: GKM and init banks disagree in shape");

  Checkpoint ckpt;
  ckpt.config = cfg;
  const std::uint32_t top_k = std::min(cfg.top_k, init.n_classes);
  if (top_k < cfg.top_k) {
    ckpt.warnings.push_back("top_k " + std::to_string(cfg.top_k) + " exceeds " +
                            std::to_string(init.n_classes) + " classes; using " + std::to_string(top_k) +
                            " (no patch can rank below it)");
  }
  if (!train_set.has_locals()) {
    ckpt.warnings.push_back("training set has no local features; training on ID samples only");
  }

  const EmbeddingSet data = subsample_shots(train_set, cfg.shots_per_class, cfg.seed);
  const std::size_t n = data.n_samples;
  if (n == 0) throw std::invalid_argument("train: empty training set");

  // The GKM is frozen, so its posteriors are computed once.
  std::vector<ProbVector> gkm_global;
  std::vector<std::vector<ProbVector>> gkm_local;
  if (gkm != nullptr) {
    gkm_global = set_posteriors(data, *gkm);
    if (data.has_locals()) {
      gkm_local.resize(n);
      for (std::size_t i = 0; i < n; ++i) gkm_local[i] = local_posteriors(data, i, *gkm);
    }
  }

  PrototypeBank bank = init;
  bank.tau = cfg.tau;
  const auto weights = cfg.weights();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  SplitMix64 rng(derive_seed(cfg.seed, streams::kShuffle));

  for (std::uint32_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle(order, rng);
    EpochLog log;
    log.epoch = epoch + 1;
    double seen = 0.0;
    double u_sum = 0.0;
    for (std::size_t start = 0; start < n; start += cfg.batch) {
      const std::size_t stop = std::min(n, start + cfg.batch);
      TrainBatch batch;
      for (std::size_t b = start; b < stop; ++b) {
        const std::size_t i = order[b];
        batch.features.push_back(data.global(i));
        batch.targets.push_back(data.labels[i]);
        if (gkm != nullptr) batch.gkm.push_back(gkm_global[i]);
        if (!data.has_locals() || data.is_ood(i)) continue;
        const auto patches = extract_ood_patches(local_posteriors(data, i, bank), data.labels[i], top_k);
        for (std::size_t patch : patches) {
          batch.features.push_back(data.local(i, patch));
          batch.targets.push_back(kOodLabel);
          if (gkm != nullptr) batch.gkm.push_back(gkm_local[i][patch]);
        }
      }

      const auto loss = evaluate_objective(batch, bank, weights);
      if (!std::isfinite(loss.total)) {
        throw TrainingDiverged("training diverged at epoch " + std::to_string(epoch + 1) +
                               ": non-finite total loss");
      }
      const auto grad = objective_gradient(batch, bank, weights);
      for (std::size_t k = 0; k < bank.prototypes.size(); ++k) bank.prototypes[k] -= cfg.lr * grad.values[k];
      for (double v : bank.prototypes) {
        if (!std::isfinite(v)) throw TrainingDiverged("training diverged: non-finite prototype");
      }

      const double m = double(batch.size());
      seen += m;
      log.ce += loss.ce * m;
      log.ood_uniform += loss.ood_uniform * m;
      log.reg += loss.reg * m;
      log.total += loss.total * m;
      for (double u : loss.per_sample_u) u_sum += u;
    }
    log.ce /= seen;
    log.ood_uniform /= seen;
    log.reg /= seen;
    log.total /= seen;
    log.mean_u = u_sum / seen;
    ckpt.loss_history.push_back(log);
    ckpt.epoch = epoch + 1;
  }
  ckpt.bank = bank.storage_rounded();
  return ckpt;
}

std::filesystem::path training_log_path(const std::filesystem::path& bank_path) {
  return std::filesystem::path(bank_path.string() + ".log.json");
}

std::string training_log_json(const Checkpoint& ckpt) {
  nlohmann::ordered_json j;
  j["epochs_completed"] = ckpt.epoch;
  auto& epochs = j["epochs"] = nlohmann::ordered_json::array();
  for (const auto& e : ckpt.loss_history) {
    nlohmann::ordered_json row;
    row["epoch"] = e.epoch;
    row["ce"] = e.ce;
    row["ood_uniform"] = e.ood_uniform;
    row["reg"] = e.reg;
    row["total"] = e.total;
    row["mean_u"] = e.mean_u;
    epochs.push_back(row);
  }
  return j.dump(2) + "\n";
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& bank_path) {
  save_bank(ckpt.bank, bank_path);
  std::ofstream out(training_log_path(bank_path), std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write training log next to " + bank_path.string());
  out << training_log_json(ckpt);
}

}  // namespace good

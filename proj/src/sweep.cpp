#include <algorithm>
#include <cmath>
#include <charconv>
#include <numeric>

#include "good/trainer.hpp"

namespace good {
namespace {

// Shortest text that parses back to the same double.
std::string fmt_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> idx(values.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && values[idx[j]] == values[idx[i]]) ++j;
    const double rank = 0.5 * double(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) ranks[idx[k]] = rank;
    i = j;
  }
  return ranks;
}

}  // namespace

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw std::invalid_argument("spearman: need two aligned series");
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  const double mean = 0.5 * double(a.size() + 1);
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    cov += (ra[i] - mean) * (rb[i] - mean);
    va += (ra[i] - mean) * (ra[i] - mean);
    vb += (rb[i] - mean) * (rb[i] - mean);
  }
  if (va == 0.0 || vb == 0.0) return 0.0;
  return cov / std::sqrt(va * vb);
}

std::vector<SweepRow> sweep(const EmbeddingSet& train_set, const EmbeddingSet& test_id,
                            const EmbeddingSet& test_ood, const PrototypeBank& gkm, const PrototypeBank& init,
                            const TrainConfig& base, std::span<const double> lambdas,
                            const ReferenceHypothesis& fstar) {
  if (lambdas.empty()) throw std::invalid_argument("sweep: no lambda values");
  // Bound terms are measured on the few-shot subset the model actually saw.
  const EmbeddingSet used = subsample_shots(train_set, base.shots_per_class, base.seed);
  const EmbeddingSet test = concat(test_id, test_ood);

  std::vector<SweepRow> rows;
  for (double lambda : lambdas) {
    SweepRow row;
    row.lambda = lambda;
    row.mode = base.mode;
    try {
      TrainConfig cfg = base;
      cfg.lambda = lambda;
      const auto ckpt = train(train_set, &gkm, init, cfg);
      row.final_total_loss = ckpt.loss_history.empty() ? 0.0 : ckpt.loss_history.back().total;
      row.eval = evaluate(ckpt.bank, test_id, test_ood, cfg.score_kind);
      row.bound = bound_report(ckpt.bank, gkm, used, test, fstar, lambda, cfg.mode);
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string sweep_csv(std::span<const SweepRow> rows) {
  std::string out = kSweepHeader;
  out += '\n';
  for (const auto& r : rows) {
    out += fmt_double(r.lambda) + ',' + to_string(r.mode);
    if (r.error) {
      for (int k = 0; k < 10; ++k) out += ",nan";
    } else {
      for (double v : {r.eval.fpr95, r.eval.auroc, r.eval.id_accuracy, r.bound.gerror, r.bound.train_term,
                       r.bound.tv_train, r.bound.tv_test, r.bound.df, r.bound.sum_computable,
                       r.final_total_loss}) {
        out += ',' + fmt_double(v);
      }
    }
    out += '\n';
  }
  return out;
}

}  // namespace good

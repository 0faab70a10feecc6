#include "good/theory.hpp"

#include <cmath>
#include <stdexcept>

#include "json.hpp"

namespace good {

double tv_distance(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw std::invalid_argument("tv_distance: length mismatch");
  double sum = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) sum += std::abs(p[j] - q[j]);
  return 0.5 * sum;
}

double tv_dataset(std::span<const ProbVector> f, std::span<const ProbVector> g) {
  if (f.size() != g.size()) throw std::invalid_argument("tv_dataset: misaligned outputs");
  if (f.empty()) throw std::invalid_argument("tv_dataset: empty dataset");
  double sum = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) sum += tv_distance(f[i], g[i]);
  return sum / double(f.size());
}

double kl_divergence(std::span<const double> p, std::span<const double> q, bool* clamped) {
  if (p.size() != q.size()) throw std::invalid_argument("kl_divergence: length mismatch");
  double sum = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (p[j] <= 0.0) continue;
    double qj = q[j];
    if (qj < kProbFloor) {
      if (clamped) *clamped = true;
      qj = kProbFloor;
    }
    sum += p[j] * std::log(p[j] / qj);
  }
  return sum;
}

double kl_dataset(std::span<const ProbVector> p, std::span<const ProbVector> q, bool* clamped) {
  if (p.size() != q.size()) throw std::invalid_argument("kl_dataset: misaligned outputs");
  if (p.empty()) throw std::invalid_argument("kl_dataset: empty dataset");
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) sum += kl_divergence(p[i], q[i], clamped);
  return sum / double(p.size());
}

double pinsker_gap(std::span<const double> p, std::span<const double> q) {
  // Rounding can leave KL a hair below zero for p == q.
  const double kl = std::max(0.0, kl_divergence(p, q));
  return std::sqrt(0.5 * kl) - tv_distance(p, q);
}

std::vector<ProbVector> target_distribution(std::span<const std::uint32_t> labels, std::uint32_t n_classes) {
  if (n_classes == 0) throw std::invalid_argument("target_distribution: zero classes");
  std::vector<ProbVector> rows;
  rows.reserve(labels.size());
  for (std::uint32_t y : labels) {
    if (y == kOodLabel) {
      rows.emplace_back(n_classes, 1.0 / double(n_classes));
    } else {
      if (y >= n_classes) throw std::invalid_argument("target_distribution: label out of range");
      ProbVector row(n_classes, 0.0);
      row[y] = 1.0;
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

double gerror(std::span<const ProbVector> f, std::span<const ProbVector> targets) {
  if (f.empty()) throw std::invalid_argument("gerror: empty test set");
  return tv_dataset(f, targets);
}

double df_estimate(std::span<const ProbVector> g_train, std::span<const ProbVector> fstar_train,
                   std::span<const ProbVector> g_test, std::span<const ProbVector> fstar_test) {
  if (fstar_train.empty() || fstar_test.empty()) throw std::invalid_argument("df_estimate: missing f* outputs");
  return tv_dataset(g_test, fstar_test) - tv_dataset(g_train, fstar_train);
}

ReferenceHypothesis ReferenceHypothesis::analytic(GeneratorSpec spec) {
  ReferenceHypothesis h;
  h.means_ = class_means(spec);
  h.spec_ = spec;
  return h;
}

ReferenceHypothesis ReferenceHypothesis::from_bank(PrototypeBank bank) {
  bank.validate();
  ReferenceHypothesis h;
  h.bank_ = std::move(bank);
  return h;
}

std::vector<ProbVector> ReferenceHypothesis::outputs(const EmbeddingSet& set) const {
  if (!set.has_labels()) throw std::invalid_argument("reference hypothesis: set must carry labels");
  const std::uint32_t classes = spec_ ? spec_->classes : bank_->n_classes;
  if (set.n_classes != classes) throw std::invalid_argument("reference hypothesis: class count mismatch");
  std::vector<ProbVector> out;
  out.reserve(set.n_samples);
  for (std::size_t i = 0; i < set.n_samples; ++i) {
    if (set.is_ood(i)) {
      out.emplace_back(classes, 1.0 / double(classes));
    } else if (spec_) {
      out.push_back(analytic_posterior(set.global(i), *spec_, means_));
    } else {
      out.push_back(class_posteriors(set.global(i), *bank_));
    }
  }
  return out;
}

std::string ReferenceHypothesis::describe() const {
  return bank_ ? "approximate f* (reference bank)" : "analytic f* (generator Bayes posterior)";
}

BoundReport bound_report(const PrototypeBank& f, const PrototypeBank& g, const EmbeddingSet& train,
                         const EmbeddingSet& test, const ReferenceHypothesis& fstar,
                         double lambda_config, Mode mode) {
  if (f.dim != g.dim || f.n_classes != g.n_classes || train.dim != f.dim || test.dim != f.dim)
    throw std::invalid_argument("bound_report: inconsistent dimensions");
  if (!train.has_labels() || !test.has_labels())
    throw std::invalid_argument("bound_report: train and test sets need labels");

  const auto f_train = set_posteriors(train, f);
  const auto g_train = set_posteriors(train, g);
  const auto f_test = set_posteriors(test, f);
  const auto g_test = set_posteriors(test, g);
  const auto truth_train = target_distribution(train.labels, f.n_classes);
  const auto truth_test = target_distribution(test.labels, f.n_classes);

  BoundReport r;
  r.gerror = gerror(f_test, truth_test);
  r.train_term = std::sqrt(0.5 * kl_dataset(truth_train, f_train));
  r.tv_train = tv_dataset(g_train, f_train);
  r.tv_test = tv_dataset(g_test, f_test);
  r.df = df_estimate(g_train, fstar.outputs(train), g_test, fstar.outputs(test));
  r.sum_computable = r.train_term + r.tv_train + r.tv_test + r.df;
  r.lambda_config = lambda_config;
  r.mode = mode;
  return r;
}

std::string to_json(const BoundReport& report) {
  nlohmann::ordered_json j;
  j["gerror"] = report.gerror;
  j["train_term"] = report.train_term;
  j["tv_train"] = report.tv_train;
  j["tv_test"] = report.tv_test;
  j["df"] = report.df;
  j["sum_computable"] = report.sum_computable;
  j["lambda_config"] = report.lambda_config;
  j["mode"] = to_string(report.mode);
  return j.dump(2);
}

}  // namespace good

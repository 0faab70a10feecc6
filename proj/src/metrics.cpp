#include "good/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>

#include "json.hpp"

namespace good {
namespace {

void require_nonempty(std::span<const double> id, std::span<const double> ood, const char* who) {
  if (id.empty() || ood.empty()) throw std::invalid_argument(std::string(who) + ": empty score list");
}

}  // namespace

double fpr_at_tpr(std::span<const double> id_scores, std::span<const double> ood_scores, double tpr_target) {
  require_nonempty(id_scores, ood_scores, "fpr_at_tpr");
  if (!(tpr_target > 0.0 && tpr_target <= 1.0)) throw std::invalid_argument("fpr_at_tpr: tpr_target in (0, 1]");
  std::vector<double> sorted(id_scores.begin(), id_scores.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  // ceil of a product like 0.95 * 20 must not drift up to 20 by rounding.
  const double want = tpr_target * double(sorted.size());
  auto rank = static_cast<std::size_t>(std::ceil(want - 1e-9 * want));
  rank = std::clamp<std::size_t>(rank, 1, sorted.size());
  const double threshold = sorted[rank - 1];
  const auto hits = std::count_if(ood_scores.begin(), ood_scores.end(),
                                  [threshold](double s) { return s >= threshold; });
  return double(hits) / double(ood_scores.size());
}

double auroc(std::span<const double> id_scores, std::span<const double> ood_scores) {
  require_nonempty(id_scores, ood_scores, "auroc");
  struct Item {
    double score;
    bool is_id;
  };
  std::vector<Item> items;
  items.reserve(id_scores.size() + ood_scores.size());
  for (double s : id_scores) items.push_back({s, true});
  for (double s : ood_scores) items.push_back({s, false});
  std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.score < b.score; });

  // Sum of 1-based mid-ranks of the ID scores.
  double id_rank_sum = 0.0;
  for (std::size_t i = 0; i < items.size();) {
    std::size_t j = i;
    std::size_t id_in_group = 0;
    while (j < items.size() && items[j].score == items[i].score) {
      id_in_group += items[j].is_id ? 1 : 0;
      ++j;
    }
    const double mid_rank = 0.5 * double(i + 1 + j);
    id_rank_sum += mid_rank * double(id_in_group);
    i = j;
  }
  const double n_id = double(id_scores.size());
  const double n_ood = double(ood_scores.size());
  const double u = id_rank_sum - n_id * (n_id + 1.0) / 2.0;
  return u / (n_id * n_ood);
}

double auroc_pairwise(std::span<const double> id_scores, std::span<const double> ood_scores) {
  require_nonempty(id_scores, ood_scores, "auroc_pairwise");
  double credit = 0.0;
  for (double a : id_scores) {
    for (double b : ood_scores) {
      if (a > b) credit += 1.0;
      else if (a == b) credit += 0.5;
    }
  }
  return credit / (double(id_scores.size()) * double(ood_scores.size()));
}

double id_accuracy(std::span<const ProbVector> posteriors, std::span<const std::uint32_t> labels) {
  if (posteriors.empty()) throw std::invalid_argument("id_accuracy: empty set");
  if (posteriors.size() != labels.size()) throw std::invalid_argument("id_accuracy: misaligned labels");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < posteriors.size(); ++i) {
    if (labels[i] == kOodLabel) throw std::invalid_argument("id_accuracy: OOD sample in the ID set");
    if (argmax(posteriors[i]) == labels[i]) ++correct;
  }
  return double(correct) / double(posteriors.size());
}

EvalReport evaluate(const PrototypeBank& bank, const EmbeddingSet& test_id, const EmbeddingSet& test_ood,
                    ScoreKind kind) {
  if (!test_id.has_labels()) throw std::invalid_argument("evaluate: ID test set needs labels");
  if (test_id.dim != bank.dim || test_ood.dim != bank.dim)
    throw std::invalid_argument("evaluate: feature dim does not match the bank");
  const auto id_scores = set_scores(test_id, bank, kind);
  const auto ood_scores = set_scores(test_ood, bank, kind);

  EvalReport r;
  r.fpr95 = fpr_at_tpr(id_scores, ood_scores, 0.95);
  r.auroc = auroc(id_scores, ood_scores);
  r.id_accuracy = id_accuracy(set_posteriors(test_id, bank), test_id.labels);
  r.score_kind = kind;
  r.n_id = test_id.n_samples;
  r.n_ood = test_ood.n_samples;
  return r;
}

std::string to_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["fpr95"] = report.fpr95;
  j["auroc"] = report.auroc;
  j["id_accuracy"] = report.id_accuracy;
  j["score_kind"] = to_string(report.score_kind);
  j["n_id"] = report.n_id;
  j["n_ood"] = report.n_ood;
  return j.dump(2);
}

}  // namespace good

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "good/scoring.hpp"

namespace good {

/// FPR of OOD at the threshold reaching `tpr_target` on ID (ID positive,
/// higher score = more ID). Threshold is the ceil(tpr_target * n_id)-th largest
/// ID score; returns the fraction of OOD scores >= threshold. No interpolation.
double fpr_at_tpr(std::span<const double> id_scores, std::span<const double> ood_scores,
                  double tpr_target = 0.95);

/// Mann-Whitney AUROC with half credit for ties, via sorted mid-ranks.
double auroc(std::span<const double> id_scores, std::span<const double> ood_scores);

/// Same quantity by exhaustive pair counting; O(n_id * n_ood).
double auroc_pairwise(std::span<const double> id_scores, std::span<const double> ood_scores);

/// Fraction of samples whose argmax posterior equals the label.
double id_accuracy(std::span<const ProbVector> posteriors, std::span<const std::uint32_t> labels);

struct EvalReport {
  double fpr95 = 0.0;
  double auroc = 0.0;
  double id_accuracy = 0.0;
  ScoreKind score_kind = ScoreKind::kMcm;
  std::size_t n_id = 0;
  std::size_t n_ood = 0;
};

/// Scores both test splits under `bank`; accuracy is measured on the ID split.
EvalReport evaluate(const PrototypeBank& bank, const EmbeddingSet& test_id, const EmbeddingSet& test_ood,
                    ScoreKind kind);

std::string to_json(const EvalReport& report);

}  // namespace good

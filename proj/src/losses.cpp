#include "good/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace good {
namespace {

double clamped_log(double p, bool* clamped) {
  if (p < kProbFloor) {
    if (clamped) *clamped = true;
    p = kProbFloor;
  }
  return std::log(p);
}

void check_batch(std::size_t n, std::size_t n_gkm, std::size_t n_targets, const ObjectiveWeights& w) {
  if (n != n_targets) throw std::invalid_argument("objective: posteriors/targets misaligned");
  if (n_gkm != 0 && n_gkm != n) throw std::invalid_argument("objective: GKM posteriors misaligned");
  if (n_gkm == 0 && n != 0 && w.mode != Mode::kBaseline)
    throw std::invalid_argument(std::string("objective: mode ") + to_string(w.mode) +
                                " needs GKM posteriors");
  if (w.alpha < 0 || w.lambda < 0) throw std::invalid_argument("objective: alpha and lambda must be >= 0");
}

struct SampleWeights {
  double train;
  double reg;
};

SampleWeights mode_weights(const ObjectiveWeights& w, double u) {
  switch (w.mode) {
    case Mode::kBaseline: return {1.0, 0.0};
    case Mode::kReg: return {1.0, w.lambda};
    case Mode::kKde: return {1.0 - u, w.lambda * u};
  }
  return {1.0, 0.0};
}

}  // namespace

const char* to_string(Mode mode) {
  switch (mode) {
    case Mode::kBaseline: return "baseline";
    case Mode::kReg: return "reg";
    case Mode::kKde: return "kde";
  }
  return "?";
}

Mode parse_mode(const std::string& text) {
  if (text == "baseline") return Mode::kBaseline;
  if (text == "reg") return Mode::kReg;
  if (text == "kde") return Mode::kKde;
  throw std::invalid_argument("mode must be baseline, reg or kde, got '" + text + "'");
}

double ce_loss(std::span<const double> p, std::uint32_t y, bool* clamped) {
  if (y >= p.size()) throw std::invalid_argument("ce_loss: label out of range");
  return -clamped_log(p[y], clamped);
}

double uniform_ood_loss(std::span<const double> p, bool* clamped) {
  if (p.empty()) throw std::invalid_argument("uniform_ood_loss: empty posterior");
  double sum = 0.0;
  for (double v : p) sum += clamped_log(v, clamped);
  return -sum / double(p.size());
}

double reg_loss(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw std::invalid_argument("reg_loss: length mismatch");
  double sum = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) sum += std::abs(p[j] - q[j]);
  return sum / double(p.size());
}

double train_loss(std::span<const double> p, std::uint32_t target, double alpha, bool* clamped) {
  if (alpha < 0) throw std::invalid_argument("train_loss: alpha must be >= 0");
  if (target == kOodLabel) return alpha * uniform_ood_loss(p, clamped);
  return ce_loss(p, target, clamped);
}

LossBreakdown kde_objective(std::span<const ProbVector> p, std::span<const ProbVector> q,
                            std::span<const std::uint32_t> targets, const ObjectiveWeights& weights,
                            std::span<const double> belief_override) {
  check_batch(p.size(), q.size(), targets.size(), weights);
  if (!belief_override.empty() && belief_override.size() != p.size())
    throw std::invalid_argument("objective: belief override misaligned");

  LossBreakdown out;
  const std::size_t n = p.size();
  if (n == 0) return out;
  out.per_sample_u.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    double u = 0.0;
    if (!belief_override.empty()) {
      u = belief_override[i];
    } else if (!q.empty()) {
      u = g_belief(q[i]);
    }
    out.per_sample_u.push_back(u);

    double train = 0.0;
    if (targets[i] == kOodLabel) {
      const double raw = uniform_ood_loss(p[i], &out.clamped);
      out.ood_uniform += raw;
      train = weights.alpha * raw;
    } else {
      train = ce_loss(p[i], targets[i], &out.clamped);
      out.ce += train;
    }
    const double reg = q.empty() ? 0.0 : reg_loss(p[i], q[i]);
    out.reg += reg;
    const auto sw = mode_weights(weights, u);
    out.total += sw.train * train + sw.reg * reg;
  }
  const double inv_n = 1.0 / double(n);
  out.ce *= inv_n;
  out.ood_uniform *= inv_n;
  out.reg *= inv_n;
  out.total *= inv_n;
  return out;
}

LossBreakdown evaluate_objective(const TrainBatch& batch, const PrototypeBank& bank,
                                 const ObjectiveWeights& weights) {
  std::vector<ProbVector> p;
  p.reserve(batch.size());
  for (const auto& z : batch.features) p.push_back(class_posteriors(z, bank));
  return kde_objective(p, batch.gkm, batch.targets, weights);
}

Gradient objective_gradient(const TrainBatch& batch, const PrototypeBank& bank,
                            const ObjectiveWeights& weights) {
  const std::size_t n = batch.size();
  check_batch(n, batch.gkm.size(), batch.targets.size(), weights);

  Gradient grad{bank.n_classes, bank.dim, std::vector<double>(bank.prototypes.size(), 0.0)};
  if (n == 0) return grad;
  const std::uint32_t C = bank.n_classes;
  const double inv_c = 1.0 / double(C);
  const double scale = 1.0 / (double(n) * bank.tau);
  std::vector<double> dlogit(C);

  for (std::size_t i = 0; i < n; ++i) {
    const auto p = class_posteriors(batch.features[i], bank);
    const std::uint32_t target = batch.targets[i];
    const double u = batch.gkm.empty() ? 0.0 : g_belief(batch.gkm[i]);
    const auto sw = mode_weights(weights, u);

    for (std::uint32_t k = 0; k < C; ++k) {
      dlogit[k] = target == kOodLabel ? weights.alpha * (p[k] - inv_c)
                                      : p[k] - (k == target ? 1.0 : 0.0);
      dlogit[k] *= sw.train;
    }
    if (sw.reg != 0.0) {
      const auto& q = batch.gkm[i];
      double signed_mass = 0.0;  // sum_j sign(p_j - q_j) p_j
      std::vector<double> sign(C);
      for (std::uint32_t j = 0; j < C; ++j) {
        sign[j] = p[j] > q[j] ? 1.0 : (p[j] < q[j] ? -1.0 : 0.0);
        signed_mass += sign[j] * p[j];
      }
      for (std::uint32_t k = 0; k < C; ++k)
        dlogit[k] += sw.reg * inv_c * p[k] * (sign[k] - signed_mass);
    }

    const auto z = batch.features[i];
    for (std::uint32_t k = 0; k < C; ++k) {
      const double coeff = dlogit[k] * scale;
      if (coeff == 0.0) continue;
      double* row = grad.values.data() + std::size_t(k) * bank.dim;
      for (std::uint32_t d = 0; d < bank.dim; ++d) row[d] += coeff * z[d];
    }
  }
  return grad;
}

}  // namespace good

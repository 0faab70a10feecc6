#include <cmath>
#include <string>

#include "good/embedkit.hpp"
#include "good/rng.hpp"
#include "good/scoring.hpp"

namespace good {
namespace {

void require(bool ok, const std::string& field, const std::string& why) {
  if (!ok) throw std::invalid_argument("generator spec: " + field + " " + why);
}

std::vector<double> unit_normal_direction(SplitMix64& rng, std::uint32_t dim) {
  std::vector<double> v(dim);
  double sq = 0.0;
  for (auto& x : v) {
    x = rng.normal();
    sq += x * x;
  }
  const double inv = 1.0 / std::sqrt(sq);
  for (auto& x : v) x *= inv;
  return v;
}

// Appends center + sigma*eps, then the sample's patches (w*center + sigma*eps).
void emit_sample(EmbeddingSet& set, SplitMix64& rng, std::span<const double> center, double sigma) {
  for (double c : center) set.globals.push_back(static_cast<float>(c + sigma * rng.normal()));
  for (std::uint32_t p = 0; p < set.n_patches; ++p) {
    const double w = rng.uniform();
    for (double c : center) set.locals.push_back(static_cast<float>(w * c + sigma * rng.normal()));
  }
}

EmbeddingSet empty_split(const GeneratorSpec& spec, std::size_t n) {
  EmbeddingSet set;
  set.n_samples = n;
  set.dim = spec.dim;
  set.n_classes = spec.classes;
  set.n_patches = spec.n_patches;
  set.globals.reserve(n * spec.dim);
  set.locals.reserve(n * spec.n_patches * spec.dim);
  set.labels.reserve(n);
  return set;
}

}  // namespace

void GeneratorSpec::validate() const {
  require(std::isfinite(radius) && radius > 0, "radius", "must be finite and > 0");
  require(std::isfinite(sigma) && sigma > 0, "sigma", "must be finite and > 0");
  require(std::isfinite(shift) && shift >= 0, "shift", "must be finite and >= 0");
  require(std::isfinite(gkm_noise) && gkm_noise >= 0, "gkm_noise", "must be finite and >= 0");
  require(std::isfinite(gkm_temperature) && gkm_temperature > 0, "gkm_temperature", "must be finite and > 0");
  require(classes >= 2, "classes", "must be >= 2");
  require(dim >= 2, "dim", "must be >= 2");
  require(samples_per_class >= 1, "samples_per_class",
          "must be >= 1 (classes exceed the sample budget)");
}

std::vector<double> class_means(const GeneratorSpec& spec) {
  spec.validate();
  SplitMix64 rng(derive_seed(spec.seed, streams::kClassMeans));
  std::vector<double> means;
  means.reserve(std::size_t(spec.classes) * spec.dim);
  for (std::uint32_t c = 0; c < spec.classes; ++c) {
    for (double x : unit_normal_direction(rng, spec.dim)) means.push_back(spec.radius * x);
  }
  return means;
}

SyntheticBenchmark synth_generate(const GeneratorSpec& spec) {
  spec.validate();
  SyntheticBenchmark out;
  out.means = class_means(spec);
  {
    SplitMix64 rng(derive_seed(spec.seed, streams::kShiftDirection));
    out.shift_direction = unit_normal_direction(rng, spec.dim);
  }
  const std::size_t per_class = spec.samples_per_class;
  const std::size_t n_id = per_class * spec.classes;
  auto mean = [&](std::uint32_t c) {
    return std::span<const double>(out.means.data() + std::size_t(c) * spec.dim, spec.dim);
  };

  out.train = empty_split(spec, n_id);
  {
    SplitMix64 rng(derive_seed(spec.seed, streams::kTrain));
    for (std::uint32_t c = 0; c < spec.classes; ++c) {
      for (std::size_t i = 0; i < per_class; ++i) {
        emit_sample(out.train, rng, mean(c), spec.sigma);
        out.train.labels.push_back(c);
      }
    }
  }

  out.test_id = empty_split(spec, n_id);
  {
    SplitMix64 rng(derive_seed(spec.seed, streams::kTestId));
    std::vector<double> center(spec.dim);
    for (std::uint32_t c = 0; c < spec.classes; ++c) {
      auto mu = mean(c);
      for (std::uint32_t k = 0; k < spec.dim; ++k) center[k] = mu[k] + spec.shift * out.shift_direction[k];
      for (std::size_t i = 0; i < per_class; ++i) {
        emit_sample(out.test_id, rng, center, spec.sigma);
        out.test_id.labels.push_back(c);
      }
    }
  }

  out.test_ood = empty_split(spec, n_id);
  {
    SplitMix64 rng(derive_seed(spec.seed, streams::kTestOod));
    std::vector<double> center(spec.dim, 0.0);
    for (std::size_t i = 0; i < n_id; ++i) {
      if (spec.ood_family == OodFamily::kNear) {
        const auto a = static_cast<std::uint32_t>(rng.below(spec.classes));
        auto b = static_cast<std::uint32_t>(rng.below(spec.classes - 1));
        if (b >= a) ++b;
        auto ma = mean(a), mb = mean(b);
        for (std::uint32_t k = 0; k < spec.dim; ++k) center[k] = 0.5 * (ma[k] + mb[k]);
      }
      emit_sample(out.test_ood, rng, center, spec.sigma);
      out.test_ood.labels.push_back(kOodLabel);
    }
  }
  return out;
}

namespace {

template <class T>
std::vector<double> analytic_posterior_impl(std::span<const T> x, const GeneratorSpec& spec,
                                            std::span<const double> means) {
  if (x.size() != spec.dim || means.size() != std::size_t(spec.classes) * spec.dim)
    throw std::invalid_argument("analytic_posterior: dimension mismatch");
  std::vector<double> logits(spec.classes);
  const double inv_var = 1.0 / (spec.sigma * spec.sigma);
  for (std::uint32_t c = 0; c < spec.classes; ++c) {
    double dot = 0.0;
    for (std::uint32_t k = 0; k < spec.dim; ++k) dot += double(x[k]) * means[std::size_t(c) * spec.dim + k];
    logits[c] = dot * inv_var;
  }
  return softmax(logits);
}

}  // namespace

std::vector<double> analytic_posterior(std::span<const double> x, const GeneratorSpec& spec,
                                       std::span<const double> means) {
  return analytic_posterior_impl(x, spec, means);
}

std::vector<double> analytic_posterior(std::span<const float> x, const GeneratorSpec& spec,
                                       std::span<const double> means) {
  return analytic_posterior_impl(x, spec, means);
}

PrototypeBank synthetic_gkm(const GeneratorSpec& spec, std::span<const double> means) {
  spec.validate();
  SplitMix64 rng(derive_seed(spec.seed, streams::kGkm));
  const double inv_var = 1.0 / (spec.sigma * spec.sigma * spec.gkm_temperature);
  const double noise_sd = spec.gkm_noise * spec.radius / std::sqrt(double(spec.dim));
  PrototypeBank bank(spec.classes, spec.dim, 1.0);
  for (std::size_t i = 0; i < bank.prototypes.size(); ++i) {
    const double perturbed = means[i] + noise_sd * rng.normal();
    bank.prototypes[i] = static_cast<float>(perturbed * inv_var);
  }
  return bank;
}

}  // namespace good

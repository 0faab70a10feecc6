#include <gtest/gtest.h>
#include <unistd.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "good/embedkit.hpp"
#include "good/scoring.hpp"
#include "oracles.hpp"

using namespace good;

namespace {

EmbeddingSet tiny_set() {
  EmbeddingSet s;
  s.n_samples = 2;
  s.dim = 3;
  s.n_classes = 4;
  s.globals = {1, 2, 3, -1, -2, -3};
  s.labels = {0, kOodLabel};
  return s;
}

std::vector<std::uint8_t> slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void put_u32(std::vector<std::uint8_t>& b, std::size_t off, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b[off + i] = std::uint8_t(v >> (8 * i));
}

FormatErrorCode code_of(const std::vector<std::uint8_t>& bytes) {
  try {
    deserialize(bytes);
  } catch (const FormatError& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error";
  return FormatErrorCode::kIo;
}

GeneratorSpec small_spec() {
  GeneratorSpec s;
  s.classes = 4;
  s.dim = 6;
  s.samples_per_class = 20;
  s.seed = 11;
  return s;
}

}  // namespace

TEST(Format, ByteCountOfTwoSampleSet) {
  const auto bytes = serialize(tiny_set());
  EXPECT_EQ(bytes.size(), std::size_t(4 + 4 + 4 + 8 + 4 + 4 + 4 + 24 + 8));
  EXPECT_EQ(serialized_size(tiny_set()), bytes.size());
  EXPECT_EQ(std::memcmp(bytes.data(), "GOOD", 4), 0);
  // labels trail the globals; the sentinel is all ones
  EXPECT_EQ(bytes[32 + 24 + 4], 0xFF);
  EXPECT_EQ(bytes[32 + 24 + 7], 0xFF);
}

TEST(Format, LittleEndianHeaderFields) {
  const auto b = serialize(tiny_set());
  EXPECT_EQ(b[4], 1);  // version
  EXPECT_EQ(b[8], 1);  // labels flag only
  EXPECT_EQ(b[12], 2);
  EXPECT_EQ(b[20], 3);
  EXPECT_EQ(b[24], 4);
  float first;
  std::memcpy(&first, b.data() + 32, 4);
  EXPECT_EQ(first, 1.0f);
}

TEST(Format, RoundTripMemoryAndDisk) {
  auto s = tiny_set();
  EXPECT_EQ(deserialize(serialize(s)), s);

  s.n_patches = 2;
  s.locals.assign(2 * 2 * 3, 0.25f);
  oracle::TempDir dir("embed");
  save_embeddings(s, dir / "a.good");
  auto loaded = load_embeddings(dir / "a.good");
  EXPECT_EQ(loaded, s);
  save_embeddings(loaded, dir / "b.good");
  EXPECT_EQ(slurp(dir / "a.good"), slurp(dir / "b.good"));
}

TEST(Format, UnlabeledSetHasNoLabelBlock) {
  auto s = tiny_set();
  s.labels.clear();
  EXPECT_EQ(serialize(s).size(), 32u + 24u);
  EXPECT_EQ(deserialize(serialize(s)), s);
}

TEST(Format, BadMagic) {
  auto b = serialize(tiny_set());
  b[3] = 'x';
  EXPECT_EQ(code_of(b), FormatErrorCode::kBadMagic);
}

TEST(Format, DistinctHeaderErrors) {
  const auto good_bytes = serialize(tiny_set());
  auto b = good_bytes;
  put_u32(b, 4, 2);
  EXPECT_EQ(code_of(b), FormatErrorCode::kBadVersion);
  b = good_bytes;
  put_u32(b, 8, 1u | 8u);
  EXPECT_EQ(code_of(b), FormatErrorCode::kUnknownFlags);
  b = good_bytes;
  put_u32(b, 8, 1u | 2u);  // locals flag without patches
  EXPECT_EQ(code_of(b), FormatErrorCode::kFlagMismatch);
  b = good_bytes;
  put_u32(b, 20, 0);
  EXPECT_EQ(code_of(b), FormatErrorCode::kBadShape);
  b.assign(good_bytes.begin(), good_bytes.begin() + 20);
  EXPECT_EQ(code_of(b), FormatErrorCode::kTruncatedHeader);
  b.assign(good_bytes.begin(), good_bytes.end() - 1);
  EXPECT_EQ(code_of(b), FormatErrorCode::kTruncatedPayload);
  b = good_bytes;
  b.push_back(0);
  EXPECT_EQ(code_of(b), FormatErrorCode::kTrailingBytes);
}

TEST(Format, HugeSampleCountDoesNotOverflow) {
  auto b = serialize(tiny_set());
  for (int i = 0; i < 8; ++i) b[12 + i] = 0xFF;
  EXPECT_EQ(code_of(b), FormatErrorCode::kTruncatedPayload);
}

TEST(Format, PayloadChecks) {
  auto s = tiny_set();
  auto b = serialize(s);
  const float nan = std::nanf("");
  std::memcpy(b.data() + 32 + 4, &nan, 4);
  EXPECT_EQ(code_of(b), FormatErrorCode::kNonFinite);

  b = serialize(s);
  put_u32(b, 32 + 24, 7);  // label 7 with 4 classes
  EXPECT_EQ(code_of(b), FormatErrorCode::kLabelOutOfRange);

  s.normalized = true;
  EXPECT_THROW(serialize(s), FormatError);
  s.globals = {1, 0, 0, 0, 0.6f, 0.8f};
  EXPECT_EQ(deserialize(serialize(s)), s);
}

TEST(Format, MissingFileIsIoError) {
  try {
    load_embeddings("/nonexistent/dir/x.good");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.code(), FormatErrorCode::kIo);
  }
}

TEST(Manifest, RoundTripWithGenerator) {
  oracle::TempDir dir("manifest");
  SetManifest m{"train", {"a", "b"}, small_spec()};
  save_manifest(m, dir / "t.good");
  EXPECT_TRUE(std::filesystem::exists(dir / "t.good.manifest.json"));
  auto back = load_manifest(dir / "t.good");
  ASSERT_TRUE(back.has_value());
  EXPECT_EQ(back->split, "train");
  EXPECT_EQ(back->class_names, m.class_names);
  ASSERT_TRUE(back->generator.has_value());
  EXPECT_EQ(*back->generator, *m.generator);
  EXPECT_FALSE(load_manifest(dir / "absent.good").has_value());
}

TEST(Generator, ValidationNamesField) {
  auto s = small_spec();
  s.classes = 1;
  try {
    s.validate();
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("classes"), std::string::npos);
  }
  s = small_spec();
  s.sigma = std::nan("");
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = small_spec();
  s.radius = 0;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = small_spec();
  s.shift = -1;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = small_spec();
  s.dim = 1;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = small_spec();
  s.samples_per_class = 0;
  EXPECT_THROW(s.validate(), std::invalid_argument);
}

TEST(Generator, Deterministic) {
  auto a = synth_generate(small_spec());
  auto b = synth_generate(small_spec());
  EXPECT_EQ(serialize(a.train), serialize(b.train));
  EXPECT_EQ(serialize(a.test_id), serialize(b.test_id));
  EXPECT_EQ(serialize(a.test_ood), serialize(b.test_ood));
  auto other = small_spec();
  other.seed = 12;
  EXPECT_NE(serialize(synth_generate(other).train), serialize(a.train));
}

TEST(Generator, ShapesAndLabels) {
  auto spec = small_spec();
  spec.n_patches = 3;
  auto b = synth_generate(spec);
  EXPECT_EQ(b.train.n_samples, 80u);
  EXPECT_EQ(b.test_ood.n_samples, 80u);
  EXPECT_EQ(b.train.locals.size(), 80u * 3 * 6);
  EXPECT_EQ(b.train.labels[0], 0u);
  EXPECT_EQ(b.train.labels[79], 3u);
  for (auto y : b.test_ood.labels) EXPECT_EQ(y, kOodLabel);
  for (std::uint32_t c = 0; c < spec.classes; ++c) {
    double sq = 0;
    for (std::uint32_t k = 0; k < spec.dim; ++k) sq += b.means[c * spec.dim + k] * b.means[c * spec.dim + k];
    EXPECT_NEAR(std::sqrt(sq), spec.radius, 1e-12);
  }
}

TEST(Generator, ZeroShiftKeepsTestMeans) {
  auto spec = small_spec();
  spec.samples_per_class = 4000;
  spec.sigma = 0.1;
  spec.shift = 0.0;
  auto b = synth_generate(spec);
  for (std::uint32_t c = 0; c < spec.classes; ++c) {
    for (std::uint32_t k = 0; k < spec.dim; ++k) {
      double m = 0;
      for (std::size_t i = 0; i < spec.samples_per_class; ++i)
        m += b.test_id.global(c * spec.samples_per_class + i)[k];
      m /= spec.samples_per_class;
      EXPECT_NEAR(m, b.means[c * spec.dim + k], 5 * spec.sigma / std::sqrt(4000.0));
    }
  }
}

TEST(Generator, ShiftMovesTestMeansAlongDirection) {
  auto spec = small_spec();
  spec.samples_per_class = 4000;
  spec.sigma = 0.1;
  spec.shift = 2.0;
  auto b = synth_generate(spec);
  for (std::uint32_t k = 0; k < spec.dim; ++k) {
    double m = 0;
    for (std::size_t i = 0; i < spec.samples_per_class; ++i) m += b.test_id.global(i)[k];
    m /= spec.samples_per_class;
    EXPECT_NEAR(m, b.means[k] + 2.0 * b.shift_direction[k], 5 * spec.sigma / std::sqrt(4000.0));
  }
}

TEST(Generator, MonteCarloClassMeans) {
  GeneratorSpec spec;
  spec.classes = 10;
  spec.dim = 32;
  spec.sigma = 0.5;
  spec.samples_per_class = 10000;
  auto b = synth_generate(spec);
  const double tol = 3 * spec.sigma / std::sqrt(10000.0);
  int outside = 0;
  for (std::uint32_t c = 0; c < spec.classes; ++c) {
    for (std::uint32_t k = 0; k < spec.dim; ++k) {
      double m = 0;
      for (std::size_t i = 0; i < spec.samples_per_class; ++i)
        m += b.train.global(c * spec.samples_per_class + i)[k];
      m /= spec.samples_per_class;
      if (std::fabs(m - b.means[c * spec.dim + k]) > tol) ++outside;
    }
  }
  EXPECT_EQ(outside, 0);
}

TEST(Generator, MonteCarloMeanDeviationsLookGaussian) {
  // z-scores of the sample means should be standard normal: few beyond 3, none far out
  GeneratorSpec spec;
  spec.classes = 10;
  spec.dim = 32;
  spec.sigma = 0.5;
  spec.samples_per_class = 10000;
  auto b = synth_generate(spec);
  const double se = spec.sigma / std::sqrt(10000.0);
  int beyond3 = 0;
  double max_z = 0;
  for (std::uint32_t c = 0; c < spec.classes; ++c) {
    for (std::uint32_t k = 0; k < spec.dim; ++k) {
      double m = 0;
      for (std::size_t i = 0; i < spec.samples_per_class; ++i)
        m += b.train.global(c * spec.samples_per_class + i)[k];
      const double z = std::fabs(m / spec.samples_per_class - b.means[c * spec.dim + k]) / se;
      beyond3 += z > 3;
      max_z = std::max(max_z, z);
    }
  }
  EXPECT_LE(beyond3, 5);  // Binomial(320, 0.0027) tail beyond 5 is ~1e-4
  EXPECT_LT(max_z, 4.5);
}

TEST(Generator, FarOodCentredAtOrigin) {
  auto spec = small_spec();
  spec.ood_family = OodFamily::kFar;
  spec.samples_per_class = 2000;
  auto b = synth_generate(spec);
  for (std::uint32_t k = 0; k < spec.dim; ++k) {
    double m = 0;
    for (std::size_t i = 0; i < b.test_ood.n_samples; ++i) m += b.test_ood.global(i)[k];
    m /= double(b.test_ood.n_samples);
    EXPECT_NEAR(m, 0.0, 5 * spec.sigma / std::sqrt(double(b.test_ood.n_samples)));
  }
}

TEST(Posterior, EquidistantPointIsUniform) {
  auto spec = small_spec();
  auto means = class_means(spec);
  std::vector<double> x(spec.dim, 0.0);
  for (double p : analytic_posterior(std::span<const double>(x), spec, means)) EXPECT_NEAR(p, 0.25, 1e-15);
}

TEST(Posterior, OwnMeanWithSmallNoise) {
  auto spec = small_spec();
  spec.sigma = 0.05;
  auto means = class_means(spec);
  std::span<const double> mu1(means.data() + spec.dim, spec.dim);
  auto p = analytic_posterior(mu1, spec, means);
  EXPECT_GE(p[1], 0.99);
}

TEST(Posterior, MatchesDensityRatioBayesRule) {
  GeneratorSpec spec;
  spec.classes = 3;
  spec.dim = 4;
  spec.radius = 1.0;
  spec.sigma = 0.8;
  spec.seed = 5;
  auto means = class_means(spec);
  std::mt19937_64 gen(99);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> x(spec.dim);
    for (auto& v : x) v = nd(gen);
    // p(c|x) proportional to the Gaussian density at x with equal priors
    std::vector<long double> dens(3);
    long double total = 0;
    for (int c = 0; c < 3; ++c) {
      long double sq = 0;
      for (std::uint32_t k = 0; k < spec.dim; ++k) {
        const long double d = x[k] - means[c * spec.dim + k];
        sq += d * d;
      }
      const long double var = spec.sigma * spec.sigma;
      dens[c] = std::exp(-sq / (2 * var)) / std::pow(2 * 3.14159265358979323846L * var, spec.dim / 2.0L);
      total += dens[c];
    }
    auto p = analytic_posterior(std::span<const double>(x), spec, means);
    double sum = 0;
    for (int c = 0; c < 3; ++c) {
      EXPECT_NEAR(p[c], double(dens[c] / total), 1e-10);
      EXPECT_GE(p[c], 0.0);
      sum += p[c];
    }
    EXPECT_NEAR(sum, 1.0, 1e-9);
  }
}

TEST(Posterior, DimensionMismatchThrows) {
  auto spec = small_spec();
  auto means = class_means(spec);
  std::vector<double> x(spec.dim + 1, 0.0);
  EXPECT_THROW(analytic_posterior(std::span<const double>(x), spec, means), std::invalid_argument);
}

TEST(Posterior, MeanBankReproducesBayesPosterior) {
  auto spec = small_spec();
  spec.shift = 0.3;
  auto b = synth_generate(spec);
  PrototypeBank bank(spec.classes, spec.dim, spec.sigma * spec.sigma);
  bank.prototypes = b.means;
  for (std::size_t i = 0; i < b.test_id.n_samples; ++i) {
    auto x = b.test_id.global(i);
    auto p = class_posteriors(x, bank);
    auto q = analytic_posterior(x, spec, b.means);
    for (std::uint32_t c = 0; c < spec.classes; ++c) EXPECT_NEAR(p[c], q[c], 1e-10);
  }
}

TEST(Posterior, SyntheticGkmWithoutNoiseIsBayes) {
  auto spec = small_spec();
  auto b = synth_generate(spec);
  auto gkm = synthetic_gkm(spec, b.means);
  for (std::size_t i = 0; i < b.test_id.n_samples; i += 7) {
    auto x = b.test_id.global(i);
    auto p = class_posteriors(x, gkm);
    auto q = analytic_posterior(x, spec, b.means);
    // prototypes are stored as float32
    for (std::uint32_t c = 0; c < spec.classes; ++c) EXPECT_NEAR(p[c], q[c], 1e-5);
  }
}

TEST(Sets, ConcatAndSelect) {
  auto b = synth_generate(small_spec());
  auto joint = concat(b.test_id, b.test_ood);
  EXPECT_EQ(joint.n_samples, 160u);
  EXPECT_TRUE(joint.is_ood(80));
  EXPECT_FALSE(joint.is_ood(79));
  std::vector<std::size_t> rows = {5, 2};
  auto sel = select_rows(b.train, rows);
  EXPECT_EQ(sel.n_samples, 2u);
  EXPECT_TRUE(std::equal(sel.global(0).begin(), sel.global(0).end(), b.train.global(5).begin()));
  EXPECT_EQ(sel.labels[1], b.train.labels[2]);
  std::vector<std::size_t> bad = {1000};
  EXPECT_THROW(select_rows(b.train, bad), std::out_of_range);
  auto other = b.train;
  other.dim = 5;
  EXPECT_THROW(concat(b.train, other), std::invalid_argument);
}

#include "good/scoring.hpp"

#include <algorithm>
#include <cstring>

#include "binio.hpp"
#include "good/parallel.hpp"

namespace good {
namespace {

constexpr char kBankMagic[4] = {'G', 'P', 'T', 'B'};
constexpr std::uint32_t kBankVersion = 1;
constexpr std::size_t kBankHeaderBytes = 4 + 4 + 4 + 4 + 4;

}  // namespace

void PrototypeBank::validate() const {
  if (n_classes < 2) throw std::invalid_argument("prototype bank: need at least 2 classes");
  if (dim == 0) throw std::invalid_argument("prototype bank: dim must be positive");
  if (!(std::isfinite(tau) && tau > 0)) throw std::invalid_argument("prototype bank: tau must be > 0");
  if (prototypes.size() != std::size_t(n_classes) * dim)
    throw std::invalid_argument("prototype bank: prototype storage does not match C x dim");
  for (double v : prototypes)
    if (!std::isfinite(v)) throw std::invalid_argument("prototype bank: non-finite prototype entry");
}

PrototypeBank PrototypeBank::storage_rounded() const {
  PrototypeBank out = *this;
  out.tau = static_cast<float>(tau);
  for (auto& v : out.prototypes) v = static_cast<float>(v);
  return out;
}

std::vector<std::uint8_t> serialize_bank(const PrototypeBank& bank) {
  bank.validate();
  binio::Writer w;
  w.bytes(kBankMagic, sizeof kBankMagic);
  w.u32(kBankVersion);
  w.u32(bank.n_classes);
  w.u32(bank.dim);
  w.f32(static_cast<float>(bank.tau));
  for (double v : bank.prototypes) w.f32(static_cast<float>(v));
  return w.take();
}

PrototypeBank deserialize_bank(std::span<const std::uint8_t> bytes) {
  binio::Reader r(bytes);
  if (!r.can_read(kBankHeaderBytes))
    throw FormatError(FormatErrorCode::kTruncatedHeader, "bank header shorter than 20 bytes");
  char magic[4];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kBankMagic, sizeof kBankMagic) != 0)
    throw FormatError(FormatErrorCode::kBadMagic, "expected \"GPTB\"");
  const std::uint32_t version = r.u32();
  if (version != kBankVersion)
    throw FormatError(FormatErrorCode::kBadVersion, "bank version " + std::to_string(version));
  PrototypeBank bank;
  bank.n_classes = r.u32();
  bank.dim = r.u32();
  bank.tau = r.f32();
  const unsigned __int128 expected =
      static_cast<unsigned __int128>(bank.n_classes) * bank.dim * sizeof(float);
  if (expected > r.remaining()) throw FormatError(FormatErrorCode::kTruncatedPayload, "bank rows");
  if (expected < r.remaining()) throw FormatError(FormatErrorCode::kTrailingBytes, "bank rows");
  bank.prototypes.resize(std::size_t(bank.n_classes) * bank.dim);
  for (auto& v : bank.prototypes) v = r.f32();
  try {
    bank.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(FormatErrorCode::kBadShape, e.what());
  }
  return bank;
}

void save_bank(const PrototypeBank& bank, const std::filesystem::path& path) {
  binio::write_file(path, serialize_bank(bank));
}

PrototypeBank load_bank(const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = binio::read_file(path);
  } catch (const std::runtime_error& e) {
    throw FormatError(FormatErrorCode::kIo, e.what());
  }
  return deserialize_bank(bytes);
}

ProbVector softmax(std::span<const double> logits) {
  if (logits.empty()) throw std::invalid_argument("softmax: empty input");
  const double top = logits[argmax(logits)];
  ProbVector p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - top);
    sum += p[i];
  }
  for (auto& v : p) v /= sum;
  return p;
}

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("argmax: empty input");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

std::vector<ProbVector> set_posteriors(const EmbeddingSet& set, const PrototypeBank& bank) {
  std::vector<ProbVector> out(set.n_samples);
  parallel_for(set.n_samples, [&](std::size_t i) { out[i] = class_posteriors(set.global(i), bank); });
  return out;
}

std::vector<ProbVector> local_posteriors(const EmbeddingSet& set, std::size_t i,
                                         const PrototypeBank& bank) {
  std::vector<ProbVector> out;
  out.reserve(set.n_patches);
  for (std::uint32_t p = 0; p < set.n_patches; ++p) out.push_back(class_posteriors(set.local(i, p), bank));
  return out;
}

const char* to_string(ScoreKind kind) { return kind == ScoreKind::kMcm ? "mcm" : "glmcm"; }

ScoreKind parse_score_kind(const std::string& text) {
  if (text == "mcm") return ScoreKind::kMcm;
  if (text == "glmcm") return ScoreKind::kGlmcm;
  throw std::invalid_argument("score kind must be mcm or glmcm, got '" + text + "'");
}

Score mcm_score(std::span<const double> p) {
  if (p.empty()) throw std::invalid_argument("mcm_score: empty posterior");
  return {p[argmax(p)], ScoreKind::kMcm};
}

Score glmcm_score(std::span<const double> p_global, std::span<const ProbVector> p_locals) {
  if (p_locals.empty()) throw std::invalid_argument("glmcm_score: no local posteriors");
  double best_local = 0.0;
  for (const auto& local : p_locals) {
    if (local.size() != p_global.size())
      throw std::invalid_argument("glmcm_score: local/global class count mismatch");
    best_local = std::max(best_local, *std::max_element(local.begin(), local.end()));
  }
  return {best_local + mcm_score(p_global).value, ScoreKind::kGlmcm};
}

Decision decide(const Score& s, double threshold) {
  return s.value >= threshold ? Decision::kId : Decision::kOod;
}

double g_belief(std::span<const double> p_gkm) { return mcm_score(p_gkm).value; }

std::vector<double> set_scores(const EmbeddingSet& set, const PrototypeBank& bank, ScoreKind kind) {
  if (kind == ScoreKind::kGlmcm && !set.has_locals())
    throw std::invalid_argument("glmcm score needs local features; the set has none");
  std::vector<double> scores(set.n_samples);
  parallel_for(set.n_samples, [&](std::size_t i) {
    const auto global = class_posteriors(set.global(i), bank);
    scores[i] = kind == ScoreKind::kMcm ? mcm_score(global).value
                                        : glmcm_score(global, local_posteriors(set, i, bank)).value;
  });
  return scores;
}

}  // namespace good

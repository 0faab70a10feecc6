#include "good/embedkit.hpp"

#include <cmath>
#include <fstream>

#include "binio.hpp"
#include "json.hpp"

namespace good {
namespace {

constexpr char kMagic[4] = {'G', 'O', 'O', 'D'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kFlagLabels = 1u << 0;
constexpr std::uint32_t kFlagLocals = 1u << 1;
constexpr std::uint32_t kFlagNormalized = 1u << 2;
constexpr std::uint32_t kKnownFlags = kFlagLabels | kFlagLocals | kFlagNormalized;
constexpr std::size_t kHeaderBytes = 4 + 4 + 4 + 8 + 4 + 4 + 4;
constexpr double kNormTolerance = 1e-3;

void check_rows_normalized(std::span<const float> values, std::uint32_t dim, const char* what) {
  for (std::size_t off = 0; off + dim <= values.size(); off += dim) {
    double sq = 0.0;
    for (std::uint32_t k = 0; k < dim; ++k) sq += double(values[off + k]) * values[off + k];
    if (std::abs(std::sqrt(sq) - 1.0) > kNormTolerance) {
      throw FormatError(FormatErrorCode::kNotNormalized,
                        std::string(what) + " row " + std::to_string(off / dim) +
                            " has norm " + std::to_string(std::sqrt(sq)));
    }
  }
}

}  // namespace

const char* to_string(FormatErrorCode code) {
  switch (code) {
    case FormatErrorCode::kBadMagic: return "bad magic";
    case FormatErrorCode::kBadVersion: return "unsupported version";
    case FormatErrorCode::kUnknownFlags: return "unknown flag bits";
    case FormatErrorCode::kFlagMismatch: return "flag/payload inconsistency";
    case FormatErrorCode::kBadShape: return "bad shape";
    case FormatErrorCode::kTruncatedHeader: return "truncated header";
    case FormatErrorCode::kTruncatedPayload: return "truncated payload";
    case FormatErrorCode::kTrailingBytes: return "trailing bytes";
    case FormatErrorCode::kNonFinite: return "non-finite entry";
    case FormatErrorCode::kLabelOutOfRange: return "label out of range";
    case FormatErrorCode::kNotNormalized: return "row not normalized";
    case FormatErrorCode::kIo: return "io error";
  }
  return "format error";
}

void EmbeddingSet::validate() const {
  if (dim == 0) throw FormatError(FormatErrorCode::kBadShape, "dim must be positive");
  if (globals.size() != n_samples * dim)
    throw FormatError(FormatErrorCode::kBadShape, "globals size does not match n_samples*dim");
  if (locals.size() != n_samples * n_patches * dim)
    throw FormatError(FormatErrorCode::kBadShape, "locals size does not match n_samples*n_patches*dim");
  if (has_labels() && labels.size() != n_samples)
    throw FormatError(FormatErrorCode::kBadShape, "labels size does not match n_samples");
  for (float v : globals)
    if (!std::isfinite(v)) throw FormatError(FormatErrorCode::kNonFinite, "global feature");
  for (float v : locals)
    if (!std::isfinite(v)) throw FormatError(FormatErrorCode::kNonFinite, "local feature");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != kOodLabel && labels[i] >= n_classes)
      throw FormatError(FormatErrorCode::kLabelOutOfRange,
                        "sample " + std::to_string(i) + " label " + std::to_string(labels[i]));
  }
  if (normalized) {
    check_rows_normalized(globals, dim, "global");
    check_rows_normalized(locals, dim, "local");
  }
}

EmbeddingSet concat(const EmbeddingSet& a, const EmbeddingSet& b) {
  if (a.dim != b.dim || a.n_patches != b.n_patches || a.has_labels() != b.has_labels() ||
      a.n_classes != b.n_classes || a.normalized != b.normalized) {
    throw std::invalid_argument("concat: incompatible embedding sets");
  }
  EmbeddingSet out = a;
  out.n_samples += b.n_samples;
  out.globals.insert(out.globals.end(), b.globals.begin(), b.globals.end());
  out.locals.insert(out.locals.end(), b.locals.begin(), b.locals.end());
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  return out;
}

EmbeddingSet select_rows(const EmbeddingSet& set, std::span<const std::size_t> rows) {
  EmbeddingSet out;
  out.n_samples = rows.size();
  out.dim = set.dim;
  out.n_classes = set.n_classes;
  out.n_patches = set.n_patches;
  out.normalized = set.normalized;
  out.globals.reserve(rows.size() * set.dim);
  const std::size_t local_stride = std::size_t(set.n_patches) * set.dim;
  for (std::size_t r : rows) {
    if (r >= set.n_samples) throw std::out_of_range("select_rows: row index");
    auto g = set.global(r);
    out.globals.insert(out.globals.end(), g.begin(), g.end());
    if (set.has_locals()) {
      auto first = set.locals.begin() + static_cast<std::ptrdiff_t>(r * local_stride);
      out.locals.insert(out.locals.end(), first, first + static_cast<std::ptrdiff_t>(local_stride));
    }
    if (set.has_labels()) out.labels.push_back(set.labels[r]);
  }
  return out;
}

std::size_t serialized_size(const EmbeddingSet& set) {
  std::size_t bytes = kHeaderBytes + set.globals.size() * sizeof(float);
  if (set.has_labels()) bytes += set.n_samples * sizeof(std::uint32_t);
  if (set.has_locals()) bytes += set.locals.size() * sizeof(float);
  return bytes;
}

std::vector<std::uint8_t> serialize(const EmbeddingSet& set) {
  set.validate();
  std::uint32_t flags = 0;
  if (set.has_labels()) flags |= kFlagLabels;
  if (set.has_locals()) flags |= kFlagLocals;
  if (set.normalized) flags |= kFlagNormalized;

  binio::Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.u32(kVersion);
  w.u32(flags);
  w.u64(set.n_samples);
  w.u32(set.dim);
  w.u32(set.n_classes);
  w.u32(set.n_patches);
  w.bytes(set.globals.data(), set.globals.size() * sizeof(float));
  if (set.has_labels()) w.bytes(set.labels.data(), set.labels.size() * sizeof(std::uint32_t));
  if (set.has_locals()) w.bytes(set.locals.data(), set.locals.size() * sizeof(float));
  return w.take();
}

EmbeddingSet deserialize(std::span<const std::uint8_t> bytes) {
  binio::Reader r(bytes);
  if (!r.can_read(sizeof kMagic))
    throw FormatError(FormatErrorCode::kTruncatedHeader, "file shorter than magic");
  char magic[4];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw FormatError(FormatErrorCode::kBadMagic, "expected \"GOOD\"");
  if (!r.can_read(kHeaderBytes - sizeof kMagic))
    throw FormatError(FormatErrorCode::kTruncatedHeader, "header shorter than 32 bytes");

  const std::uint32_t version = r.u32();
  if (version != kVersion)
    throw FormatError(FormatErrorCode::kBadVersion, "version " + std::to_string(version));
  const std::uint32_t flags = r.u32();
  if (flags & ~kKnownFlags)
    throw FormatError(FormatErrorCode::kUnknownFlags, "flags " + std::to_string(flags));

  EmbeddingSet set;
  set.n_samples = r.u64();
  set.dim = r.u32();
  set.n_classes = r.u32();
  set.n_patches = r.u32();
  set.normalized = (flags & kFlagNormalized) != 0;
  const bool has_labels = (flags & kFlagLabels) != 0;
  const bool has_locals = (flags & kFlagLocals) != 0;

  if (has_locals != (set.n_patches > 0))
    throw FormatError(FormatErrorCode::kFlagMismatch,
                      "locals flag disagrees with n_patches=" + std::to_string(set.n_patches));
  if (set.dim == 0) throw FormatError(FormatErrorCode::kBadShape, "dim is zero");
  if (has_labels && set.n_classes == 0)
    throw FormatError(FormatErrorCode::kBadShape, "labeled set with zero classes");

  // Payload size in 128-bit arithmetic so absurd headers cannot overflow.
  using u128 = unsigned __int128;
  const u128 rows = set.n_samples;
  u128 expected = rows * set.dim * sizeof(float);
  if (has_labels) expected += rows * sizeof(std::uint32_t);
  if (has_locals) expected += rows * set.n_patches * set.dim * sizeof(float);
  if (expected > r.remaining())
    throw FormatError(FormatErrorCode::kTruncatedPayload, "payload shorter than header implies");
  if (expected < r.remaining())
    throw FormatError(FormatErrorCode::kTrailingBytes, "payload longer than header implies");

  set.globals.resize(set.n_samples * set.dim);
  r.bytes(set.globals.data(), set.globals.size() * sizeof(float));
  if (has_labels) {
    set.labels.resize(set.n_samples);
    r.bytes(set.labels.data(), set.labels.size() * sizeof(std::uint32_t));
  }
  if (has_locals) {
    set.locals.resize(set.n_samples * set.n_patches * set.dim);
    r.bytes(set.locals.data(), set.locals.size() * sizeof(float));
  }
  set.validate();
  return set;
}

void save_embeddings(const EmbeddingSet& set, const std::filesystem::path& path) {
  const auto bytes = serialize(set);
  try {
    binio::write_file(path, bytes);
  } catch (const std::runtime_error& e) {
    throw FormatError(FormatErrorCode::kIo, e.what());
  }
}

EmbeddingSet load_embeddings(const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = binio::read_file(path);
  } catch (const std::runtime_error& e) {
    throw FormatError(FormatErrorCode::kIo, e.what());
  }
  return deserialize(bytes);
}

// ---------------------------------------------------------------------------

const char* to_string(OodFamily family) {
  return family == OodFamily::kNear ? "near" : "far";
}

OodFamily parse_ood_family(const std::string& text) {
  if (text == "near") return OodFamily::kNear;
  if (text == "far") return OodFamily::kFar;
  throw std::invalid_argument("ood family must be near or far, got '" + text + "'");
}

namespace {

nlohmann::json to_json(const GeneratorSpec& s) {
  return {{"classes", s.classes},
          {"dim", s.dim},
          {"radius", s.radius},
          {"sigma", s.sigma},
          {"samples_per_class", s.samples_per_class},
          {"shift", s.shift},
          {"ood_family", to_string(s.ood_family)},
          {"seed", s.seed},
          {"n_patches", s.n_patches},
          {"gkm_noise", s.gkm_noise},
          {"gkm_temperature", s.gkm_temperature}};
}

GeneratorSpec spec_from_json(const nlohmann::json& j) {
  GeneratorSpec s;
  s.classes = j.at("classes").get<std::uint32_t>();
  s.dim = j.at("dim").get<std::uint32_t>();
  s.radius = j.at("radius").get<double>();
  s.sigma = j.at("sigma").get<double>();
  s.samples_per_class = j.at("samples_per_class").get<std::uint32_t>();
  s.shift = j.at("shift").get<double>();
  s.ood_family = parse_ood_family(j.at("ood_family").get<std::string>());
  s.seed = j.at("seed").get<std::uint64_t>();
  s.n_patches = j.value("n_patches", 0u);
  s.gkm_noise = j.value("gkm_noise", 0.0);
  s.gkm_temperature = j.value("gkm_temperature", 1.0);
  return s;
}

}  // namespace

std::filesystem::path manifest_path(const std::filesystem::path& data_path) {
  return std::filesystem::path(data_path.string() + ".manifest.json");
}

void save_manifest(const SetManifest& manifest, const std::filesystem::path& data_path) {
  nlohmann::json j;
  j["split"] = manifest.split;
  j["class_names"] = manifest.class_names;
  j["generator"] = manifest.generator ? to_json(*manifest.generator) : nlohmann::json(nullptr);
  std::ofstream out(manifest_path(data_path), std::ios::trunc);
  if (!out) throw FormatError(FormatErrorCode::kIo, "cannot write manifest for " + data_path.string());
  out << j.dump(2) << '\n';
}

std::optional<SetManifest> load_manifest(const std::filesystem::path& data_path) {
  const auto path = manifest_path(data_path);
  if (!std::filesystem::exists(path)) return std::nullopt;
  std::ifstream in(path);
  const auto j = nlohmann::json::parse(in);
  SetManifest m;
  m.split = j.value("split", "");
  m.class_names = j.value("class_names", std::vector<std::string>{});
  if (j.contains("generator") && !j["generator"].is_null()) m.generator = spec_from_json(j["generator"]);
  return m;
}

}  // namespace good

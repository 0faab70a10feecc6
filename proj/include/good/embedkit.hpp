#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace good {

/// Label value marking an out-of-distribution sample.
inline constexpr std::uint32_t kOodLabel = 0xFFFFFFFFu;

enum class FormatErrorCode {
  kBadMagic,
  kBadVersion,
  kUnknownFlags,
  kFlagMismatch,
  kBadShape,
  kTruncatedHeader,
  kTruncatedPayload,
  kTrailingBytes,
  kNonFinite,
  kLabelOutOfRange,
  kNotNormalized,
  kIo,
};

const char* to_string(FormatErrorCode code);

class FormatError : public std::runtime_error {
 public:
  FormatError(FormatErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}
  FormatErrorCode code() const noexcept { return code_; }

 private:
  FormatErrorCode code_;
};

/// Feature matrices for one split. Globals are row-major n_samples x dim;
/// locals (optional) are n_samples x n_patches x dim.
struct EmbeddingSet {
  std::size_t n_samples = 0;
  std::uint32_t dim = 0;
  std::uint32_t n_classes = 0;
  std::uint32_t n_patches = 0;
  std::vector<float> globals;
  std::vector<float> locals;
  std::vector<std::uint32_t> labels;  // empty when the split is unlabeled
  bool normalized = false;

  bool has_labels() const { return !labels.empty(); }
  bool has_locals() const { return n_patches > 0; }
  bool is_ood(std::size_t i) const { return has_labels() && labels[i] == kOodLabel; }

  std::span<const float> global(std::size_t i) const {
    return {globals.data() + i * dim, dim};
  }
  std::span<const float> local(std::size_t i, std::size_t patch) const {
    return {locals.data() + (i * n_patches + patch) * dim, dim};
  }

  /// Throws FormatError if any invariant (shape, finiteness, labels, norms) fails.
  void validate() const;

  friend bool operator==(const EmbeddingSet&, const EmbeddingSet&) = default;
};

/// Rows of `a` followed by rows of `b`. Shapes and flags must agree.
EmbeddingSet concat(const EmbeddingSet& a, const EmbeddingSet& b);

/// Subset of rows in the given order.
EmbeddingSet select_rows(const EmbeddingSet& set, std::span<const std::size_t> rows);

/// Exact byte count of a serialized set, header included.
std::size_t serialized_size(const EmbeddingSet& set);

std::vector<std::uint8_t> serialize(const EmbeddingSet& set);
EmbeddingSet deserialize(std::span<const std::uint8_t> bytes);

void save_embeddings(const EmbeddingSet& set, const std::filesystem::path& path);
EmbeddingSet load_embeddings(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Synthetic benchmark

enum class OodFamily { kNear, kFar };

const char* to_string(OodFamily family);
OodFamily parse_ood_family(const std::string& text);

struct GeneratorSpec {
  std::uint32_t classes = 10;
  std::uint32_t dim = 32;
  double radius = 12.0;
  double sigma = 4.0;
  std::uint32_t samples_per_class = 1000;
  double shift = 0.0;
  OodFamily ood_family = OodFamily::kNear;
  std::uint64_t seed = 0;
  /// Per-sample local patches in "patched" mode; 0 disables locals.
  std::uint32_t n_patches = 0;
  /// Relative perturbation of the emitted general-knowledge prototypes.
  double gkm_noise = 0.0;
  /// GKM logits are <x, mu_c> / (sigma^2 * gkm_temperature); 1 reproduces the Bayes posterior.
  double gkm_temperature = 1.0;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;

  friend bool operator==(const GeneratorSpec&, const GeneratorSpec&) = default;
};

struct SyntheticBenchmark {
  EmbeddingSet train;
  EmbeddingSet test_id;
  EmbeddingSet test_ood;
  std::vector<double> means;            // classes x dim, all of norm `radius`
  std::vector<double> shift_direction;  // unit vector of length dim
};

/// Class means drawn uniformly on the radius-r sphere (SplitMix64 stream).
std::vector<double> class_means(const GeneratorSpec& spec);

SyntheticBenchmark synth_generate(const GeneratorSpec& spec);

/// Bayes posterior softmax(<x, mu_c> / sigma^2) for equal-norm isotropic classes.
std::vector<double> analytic_posterior(std::span<const double> x, const GeneratorSpec& spec,
                                       std::span<const double> means);
std::vector<double> analytic_posterior(std::span<const float> x, const GeneratorSpec& spec,
                                       std::span<const double> means);

// ---------------------------------------------------------------------------
// JSON sidecar "<path>.manifest.json"

struct SetManifest {
  std::string split;
  std::vector<std::string> class_names;
  std::optional<GeneratorSpec> generator;
};

std::filesystem::path manifest_path(const std::filesystem::path& data_path);
void save_manifest(const SetManifest& manifest, const std::filesystem::path& data_path);
/// Returns nullopt when no sidecar exists next to `data_path`.
std::optional<SetManifest> load_manifest(const std::filesystem::path& data_path);

}  // namespace good

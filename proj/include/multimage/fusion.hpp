#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "multimage/corpus.hpp"

namespace multimage {

// Caption weight c >= 0 (0.2 by default, a dataset-dependent choice);
// reduced_dim unset means "no reduction".
struct FusionConfig {
  double c = 0.2;
  bool normalize_inputs = false;
  std::optional<std::size_t> reduced_dim;
};

enum class Stage { kFused, kReduced };

std::string to_string(Stage stage);
Stage stage_from_string(const std::string& s);

struct FusedEmbedding {
  std::string id;
  std::vector<double> vector;
  Stage stage = Stage::kFused;

  bool operator==(const FusedEmbedding&) const = default;
};

// vector = image + c * caption, componentwise. With normalize_inputs each
// input is first scaled to unit L2 norm (zero vectors are left as they are).
FusedEmbedding fuse_embedding(const EmbeddingRecord& rec, const FusionConfig& cfg);
std::vector<FusedEmbedding> fuse_all(const std::vector<EmbeddingRecord>& records, const FusionConfig& cfg);

struct ReductionInfo {
  std::string method;  // "pca", "import" or "none"
  std::size_t input_dim = 0;
  std::size_t output_dim = 0;
  std::vector<double> explained_variance_ratio;  // per retained component

  json to_json() const;
};

struct Reduction {
  std::vector<FusedEmbedding> points;
  ReductionInfo info;
};

// Principal component projection onto cfg.reduced_dim axes, computed by an
// exact symmetric eigendecomposition (of the covariance, or of the Gram
// matrix when there are fewer points than dimensions). Axis signs are fixed so
// the largest-magnitude score on each axis is positive, which makes the output
// a deterministic function of the input. Throws ConfigError when
// reduced_dim >= d or fewer than two points are given.
Reduction reduce_dimensions(const std::vector<FusedEmbedding>& embeddings, const FusionConfig& cfg);

// Loads externally computed coordinates ({"id", "vector"} lines). The file must
// cover exactly `ids`; missing and extra ids are both reported by name. Output
// follows the order of `ids`.
std::vector<FusedEmbedding> import_reduction(const std::filesystem::path& path,
                                             const std::vector<std::string>& ids);

double l2_distance(std::span<const double> a, std::span<const double> b);

// Euclidean distance; throws DomainError on a dimension mismatch.
double pairwise_distance(const FusedEmbedding& a, const FusedEmbedding& b);

// Row-major n x d copy of a point collection.
struct PointMatrix {
  std::size_t n = 0;
  std::size_t d = 0;
  std::vector<double> data;

  // ValidationError if dimensions are inconsistent.
  static PointMatrix from(const std::vector<FusedEmbedding>& points);
  std::span<const double> row(std::size_t i) const { return {data.data() + i * d, d}; }
  double distance(std::size_t i, std::size_t j) const { return l2_distance(row(i), row(j)); }
};

// Vector files: {"id", "vector", "stage"} per line.
std::vector<FusedEmbedding> read_vectors(const std::filesystem::path& path);
void write_vectors(const std::vector<FusedEmbedding>& points, const std::filesystem::path& path);

}  // namespace multimage

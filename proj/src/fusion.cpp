#include "multimage/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>
#include <unordered_set>

#include <Eigen/Dense>

#include "multimage/error.hpp"

namespace multimage {

std::string to_string(Stage stage) { return stage == Stage::kFused ? "fused" : "reduced"; }

Stage stage_from_string(const std::string& s) {
  if (s == "fused") return Stage::kFused;
  if (s == "reduced") return Stage::kReduced;
  throw ParseError("unknown stage \"" + s + "\"");
}

namespace {

std::vector<double> unit(const std::vector<double>& v) {
  double sq = 0.0;
  for (double x : v) sq += x * x;
  if (sq == 0.0) return v;
  const double norm = std::sqrt(sq);
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / norm;
  return out;
}

}  // namespace

FusedEmbedding fuse_embedding(const EmbeddingRecord& rec, const FusionConfig& cfg) {
  if (!(cfg.c >= 0.0) || !std::isfinite(cfg.c)) throw ConfigError("caption weight c must be finite and >= 0");
  if (rec.image_embedding.size() != rec.caption_embedding.size()) {
    throw Error("internal: unequal embedding dimensions for id \"" + rec.id + "\"");
  }
  const auto image = cfg.normalize_inputs ? unit(rec.image_embedding) : rec.image_embedding;
  const auto caption = cfg.normalize_inputs ? unit(rec.caption_embedding) : rec.caption_embedding;
  FusedEmbedding out{rec.id, std::vector<double>(image.size()), Stage::kFused};
  for (std::size_t i = 0; i < image.size(); ++i) out.vector[i] = image[i] + cfg.c * caption[i];
  return out;
}

std::vector<FusedEmbedding> fuse_all(const std::vector<EmbeddingRecord>& records, const FusionConfig& cfg) {
  std::vector<FusedEmbedding> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(fuse_embedding(r, cfg));
  return out;
}

json ReductionInfo::to_json() const {
  return {{"method", method},
          {"input_dim", input_dim},
          {"output_dim", output_dim},
          {"explained_variance_ratio", explained_variance_ratio}};
}

Reduction reduce_dimensions(const std::vector<FusedEmbedding>& embeddings, const FusionConfig& cfg) {
  if (!cfg.reduced_dim) {
    const std::size_t d = embeddings.empty() ? 0 : embeddings.front().vector.size();
    return {embeddings, {"none", d, d, {}}};
  }
  if (embeddings.size() < 2) throw ConfigError("dimensionality reduction needs at least 2 points");
  const std::size_t n = embeddings.size();
  const std::size_t d = embeddings.front().vector.size();
  const std::size_t k = *cfg.reduced_dim;
  if (k == 0) throw ConfigError("reduced_dim must be positive");
  if (k >= d) {
    throw ConfigError("reduced_dim (" + std::to_string(k) + ") must be smaller than the input dimension (" +
                      std::to_string(d) + ")");
  }

  Eigen::MatrixXd x(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    if (embeddings[i].vector.size() != d) {
      throw ValidationError("inconsistent dimension for id \"" + embeddings[i].id + "\"", {embeddings[i].id});
    }
    for (std::size_t j = 0; j < d; ++j) x(i, j) = embeddings[i].vector[j];
  }
  const Eigen::RowVectorXd mean = x.colwise().mean();
  x.rowwise() -= mean;

  // Eigen returns eigenvalues in ascending order.
  Eigen::MatrixXd scores(n, k);
  Eigen::VectorXd eigenvalues;
  if (n >= d) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(x.transpose() * x);
    if (solver.info() != Eigen::Success) throw Error("covariance eigendecomposition failed");
    eigenvalues = solver.eigenvalues();
    const Eigen::MatrixXd axes = solver.eigenvectors().rightCols(k).rowwise().reverse();
    scores = x * axes;
  } else {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(x * x.transpose());
    if (solver.info() != Eigen::Success) throw Error("Gram eigendecomposition failed");
    eigenvalues = solver.eigenvalues();
    const std::size_t available = std::min<std::size_t>(k, n);
    scores.setZero();
    for (std::size_t c = 0; c < available; ++c) {
      const Eigen::Index src = static_cast<Eigen::Index>(n - 1 - c);
      const double lambda = std::max(0.0, eigenvalues(src));
      scores.col(static_cast<Eigen::Index>(c)) = solver.eigenvectors().col(src) * std::sqrt(lambda);
    }
  }

  for (Eigen::Index c = 0; c < scores.cols(); ++c) {
    Eigen::Index arg = 0;
    for (Eigen::Index r = 1; r < scores.rows(); ++r) {
      if (std::abs(scores(r, c)) > std::abs(scores(arg, c))) arg = r;
    }
    if (scores(arg, c) < 0.0) scores.col(c) *= -1.0;
  }

  double total = 0.0;
  for (Eigen::Index i = 0; i < eigenvalues.size(); ++i) total += std::max(0.0, eigenvalues(i));
  ReductionInfo info{"pca", d, k, {}};
  for (std::size_t c = 0; c < k; ++c) {
    const Eigen::Index src = eigenvalues.size() - 1 - static_cast<Eigen::Index>(c);
    const double lambda = src >= 0 ? std::max(0.0, eigenvalues(src)) : 0.0;
    info.explained_variance_ratio.push_back(total > 0.0 ? lambda / total : 0.0);
  }

  Reduction out{{}, std::move(info)};
  out.points.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    FusedEmbedding p{embeddings[i].id, std::vector<double>(k), Stage::kReduced};
    for (std::size_t c = 0; c < k; ++c) {
      p.vector[c] = scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c));
    }
    out.points.push_back(std::move(p));
  }
  return out;
}

std::vector<FusedEmbedding> import_reduction(const std::filesystem::path& path,
                                             const std::vector<std::string>& ids) {
  std::unordered_map<std::string, std::vector<double>> by_id;
  std::vector<std::string> extra;
  const std::unordered_set<std::string> wanted(ids.begin(), ids.end());
  std::size_t dim = 0;
  read_jsonl(path, [&](const json& r, std::size_t line) {
    auto id = require_string(r, "id", line);
    auto v = read_finite_vector(r, "vector", line, id);
    if (v.empty()) throw ValidationError("empty vector for id \"" + id + "\"", {id});
    if (dim == 0) dim = v.size();
    if (v.size() != dim) throw ValidationError("inconsistent dimension for id \"" + id + "\"", {id});
    if (!wanted.contains(id)) {
      extra.push_back(id);
      return;
    }
    if (!by_id.emplace(id, std::move(v)).second) throw ValidationError("duplicate id \"" + id + "\"", {id});
  });
  std::vector<std::string> missing;
  for (const auto& id : ids) {
    if (!by_id.contains(id)) missing.push_back(id);
  }
  if (!missing.empty() || !extra.empty()) {
    std::string msg = "reduction file coverage mismatch:";
    auto list = [&](const char* label, const std::vector<std::string>& v) {
      if (v.empty()) return;
      msg += std::string(" ") + label + " [";
      for (std::size_t i = 0; i < v.size(); ++i) msg += (i ? ", \"" : "\"") + v[i] + "\"";
      msg += "]";
    };
    list("missing", missing);
    list("extra", extra);
    auto offenders = missing;
    offenders.insert(offenders.end(), extra.begin(), extra.end());
    throw ValidationError(msg, std::move(offenders));
  }
  std::vector<FusedEmbedding> out;
  out.reserve(ids.size());
  for (const auto& id : ids) out.push_back({id, by_id.at(id), Stage::kReduced});
  return out;
}

double l2_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw DomainError("distance between vectors of dimension " + std::to_string(a.size()) + " and " +
                      std::to_string(b.size()));
  }
  double sq = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = a[i] - b[i];
    sq += diff * diff;
  }
  return std::sqrt(sq);
}

double pairwise_distance(const FusedEmbedding& a, const FusedEmbedding& b) {
  return l2_distance(a.vector, b.vector);
}

PointMatrix PointMatrix::from(const std::vector<FusedEmbedding>& points) {
  PointMatrix m;
  m.n = points.size();
  m.d = points.empty() ? 0 : points.front().vector.size();
  m.data.reserve(m.n * m.d);
  for (const auto& p : points) {
    if (p.vector.size() != m.d) throw ValidationError("inconsistent dimension for id \"" + p.id + "\"", {p.id});
    m.data.insert(m.data.end(), p.vector.begin(), p.vector.end());
  }
  return m;
}

std::vector<FusedEmbedding> read_vectors(const std::filesystem::path& path) {
  std::vector<FusedEmbedding> out;
  std::unordered_set<std::string> seen;
  read_jsonl(path, [&](const json& r, std::size_t line) {
    FusedEmbedding p;
    p.id = require_string(r, "id", line);
    p.vector = read_finite_vector(r, "vector", line, p.id);
    p.stage = r.contains("stage") ? stage_from_string(require_string(r, "stage", line)) : Stage::kReduced;
    if (p.vector.empty()) throw ValidationError("empty vector for id \"" + p.id + "\"", {p.id});
    if (!out.empty() && p.vector.size() != out.front().vector.size()) {
      throw ValidationError("inconsistent dimension for id \"" + p.id + "\"", {p.id});
    }
    if (!seen.insert(p.id).second) throw ValidationError("duplicate id \"" + p.id + "\"", {p.id});
    out.push_back(std::move(p));
  });
  return out;
}

void write_vectors(const std::vector<FusedEmbedding>& points, const std::filesystem::path& path) {
  std::vector<json> lines;
  lines.reserve(points.size());
  for (const auto& p : points) lines.push_back({{"id", p.id}, {"vector", p.vector}, {"stage", to_string(p.stage)}});
  write_jsonl(path, lines);
}

}  // namespace multimage

#pragma once

// Per-node anomaly scores.
//
//   score1(i) = sum_a ||x_i^a - x̂_i^a||^2                       reconstruction
//   score2(i) = min_k sum_a (z_i^a - mu_k^a)^T (Sigma_k^a)^{-1} (z_i^a - mu_k^a)
//   combined  = (1 - beta) norm(score1) + beta norm(score2)

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Cholesky>

#include "sigil/error.hpp"
#include "sigil/graph.hpp"
#include "sigil/losses.hpp"
#include "sigil/model.hpp"
#include "sigil/tensor.hpp"

namespace sigil {

enum class ScoreNormalizer { zscore, minmax, none };

inline std::string to_string(ScoreNormalizer n) {
  switch (n) {
    case ScoreNormalizer::zscore: return "zscore";
    case ScoreNormalizer::minmax: return "minmax";
    case ScoreNormalizer::none: return "none";
  }
  return "none";
}

inline ScoreNormalizer parse_score_normalizer(const std::string& s) {
  if (s == "zscore") return ScoreNormalizer::zscore;
  if (s == "minmax") return ScoreNormalizer::minmax;
  if (s == "none") return ScoreNormalizer::none;
  throw InvalidArgument("unknown score normalizer '" + s + "' (zscore|minmax|none)");
}

struct ScoreReport {
  Vector score1;
  Vector score2;
  Vector combined;
  double beta = 0.0;
  ScoreNormalizer normalizer = ScoreNormalizer::zscore;
  std::vector<std::size_t> ranking;             // node indices, highest combined first
  std::vector<std::size_t> cluster_assignment;  // argmax of M per node
  std::vector<std::string> warnings;

  std::size_t size() const { return static_cast<std::size_t>(combined.size()); }

  /// 1-based position of every node in `ranking`.
  std::vector<std::size_t> ranks() const {
    std::vector<std::size_t> out(ranking.size());
    for (std::size_t r = 0; r < ranking.size(); ++r) out[ranking[r]] = r + 1;
    return out;
  }
};

/// Indices sorted by score descending, ties by index ascending.
inline std::vector<std::size_t> rank_descending(const Vector& scores) {
  std::vector<std::size_t> order(static_cast<std::size_t>(scores.size()));
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores(static_cast<Eigen::Index>(a)) > scores(static_cast<Eigen::Index>(b));
  });
  return order;
}

// ---------------------------------------------------------------------------
// score1

inline Vector reconstruction_scores(std::span<const Matrix> features, std::span<const Matrix> reconstructions) {
  if (features.size() != reconstructions.size() || features.empty()) {
    throw ShapeError("reconstruction_scores: view count mismatch");
  }
  Vector scores = Vector::Zero(features.front().rows());
  for (std::size_t a = 0; a < features.size(); ++a) {
    if (features[a].rows() != reconstructions[a].rows() || features[a].cols() != reconstructions[a].cols() ||
        features[a].rows() != scores.size()) {
      throw ShapeError("reconstruction_scores: view " + std::to_string(a) + " shape mismatch");
    }
    scores += (features[a] - reconstructions[a]).rowwise().squaredNorm();
  }
  return scores;
}

inline Vector reconstruction_scores(const MultiViewGraph& graph, const SigilModel& model) {
  const DecodeTrace decoded = decode(model, encode(model, graph));
  std::vector<Matrix> features;
  for (const View& v : graph.views()) features.push_back(v.features());
  return reconstruction_scores(features, decoded.reconstructions);
}

// ---------------------------------------------------------------------------
// score2

struct ClusterStats {
  struct Entry {
    Vector mean;
    Matrix covariance;  // ridge already added; identity when the fallback fired
    Eigen::LLT<Matrix> factor;
  };
  std::vector<std::size_t> member_count;  // per cluster
  std::vector<std::vector<Entry>> views;  // [view][cluster]; empty clusters have no entry data
  std::vector<std::string> warnings;
};

struct MahalanobisOptions {
  /// Diagonal ridge. Unset: 1e-4 * trace(Sigma) / d per cluster and view.
  std::optional<double> ridge;
  /// sum_a min_k instead of min_k sum_a.
  bool min_per_view = false;
};

inline ClusterStats cluster_stats(std::span<const Matrix> embeddings, std::span<const std::size_t> clusters,
                                  const MahalanobisOptions& options = {}) {
  if (embeddings.empty()) throw InvalidArgument("cluster_stats: no views");
  const auto n = static_cast<std::size_t>(embeddings.front().rows());
  if (clusters.size() != n) throw ShapeError("cluster_stats: one cluster id per node required");
  if (options.ridge && !(*options.ridge >= 0.0)) throw InvalidArgument("ridge must be >= 0");
  for (const Matrix& z : embeddings) {
    if (static_cast<std::size_t>(z.rows()) != n) throw ShapeError("cluster_stats: views differ in row count");
  }
  const std::size_t k = clusters.empty() ? 0 : *std::max_element(clusters.begin(), clusters.end()) + 1;
  ClusterStats stats;
  stats.member_count.assign(k, 0);
  for (std::size_t c : clusters) ++stats.member_count[c];
  if (std::none_of(stats.member_count.begin(), stats.member_count.end(), [](std::size_t c) { return c >= 2; })) {
    throw InvalidArgument("mahalanobis scoring needs at least one cluster with two or more members");
  }

  stats.views.resize(embeddings.size());
  for (std::size_t a = 0; a < embeddings.size(); ++a) {
    const Matrix& z = embeddings[a];
    const Eigen::Index d = z.cols();
    stats.views[a].resize(k);
    for (std::size_t c = 0; c < k; ++c) {
      const std::size_t count = stats.member_count[c];
      if (count == 0) continue;
      ClusterStats::Entry& entry = stats.views[a][c];
      entry.mean = Vector::Zero(d);
      for (std::size_t i = 0; i < n; ++i) {
        if (clusters[i] == c) entry.mean += z.row(static_cast<Eigen::Index>(i)).transpose();
      }
      entry.mean /= static_cast<double>(count);

      bool fallback = count < 2;
      if (fallback) {
        stats.warnings.push_back("cluster " + std::to_string(c) + " view " + std::to_string(a) + " has " +
                                 std::to_string(count) + " member; using identity covariance");
      } else {
        Matrix cov = Matrix::Zero(d, d);
        for (std::size_t i = 0; i < n; ++i) {
          if (clusters[i] != c) continue;
          const Vector dev = z.row(static_cast<Eigen::Index>(i)).transpose() - entry.mean;
          cov.noalias() += dev * dev.transpose();
        }
        cov /= static_cast<double>(count - 1);
        const double ridge = options.ridge ? *options.ridge : 1e-4 * cov.trace() / static_cast<double>(d);
        cov.diagonal().array() += ridge;
        entry.factor.compute(cov);
        if (entry.factor.info() != Eigen::Success) {
          fallback = true;
          stats.warnings.push_back("cluster " + std::to_string(c) + " view " + std::to_string(a) +
                                   " covariance is singular; using identity covariance");
        } else {
          entry.covariance = std::move(cov);
        }
      }
      if (fallback) {
        entry.covariance = Matrix::Identity(d, d);
        entry.factor.compute(entry.covariance);
      }
    }
  }
  return stats;
}

struct MahalanobisResult {
  Vector scores;
  std::vector<std::string> warnings;
};

inline MahalanobisResult mahalanobis_scores(std::span<const Matrix> embeddings, std::span<const std::size_t> clusters,
                                            const MahalanobisOptions& options = {}) {
  ClusterStats stats = cluster_stats(embeddings, clusters, options);
  const auto n = static_cast<std::size_t>(embeddings.front().rows());
  const std::size_t k = stats.member_count.size();
  const std::size_t views = embeddings.size();
  constexpr double inf = std::numeric_limits<double>::infinity();

  // distance[a](i, c)
  std::vector<Matrix> distance(views, Matrix::Constant(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k), inf));
  for (std::size_t a = 0; a < views; ++a) {
    for (std::size_t c = 0; c < k; ++c) {
      if (stats.member_count[c] == 0) continue;
      const ClusterStats::Entry& entry = stats.views[a][c];
      Matrix dev = embeddings[a].transpose();
      dev.colwise() -= entry.mean;
      const Matrix solved = entry.factor.matrixL().solve(dev);
      distance[a].col(static_cast<Eigen::Index>(c)) = solved.colwise().squaredNorm().transpose();
    }
  }

  MahalanobisResult result;
  result.warnings = std::move(stats.warnings);
  result.scores = Vector::Zero(static_cast<Eigen::Index>(n));
  if (options.min_per_view) {
    for (std::size_t a = 0; a < views; ++a) result.scores += distance[a].rowwise().minCoeff();
  } else {
    Matrix total = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
    for (const Matrix& d : distance) total += d;
    result.scores = total.rowwise().minCoeff();
  }
  return result;
}

// ---------------------------------------------------------------------------
// Combination

inline Vector normalize_scores(const Vector& scores, ScoreNormalizer normalizer) {
  if (normalizer == ScoreNormalizer::none || scores.size() == 0) return scores;
  if (normalizer == ScoreNormalizer::minmax) {
    const double lo = scores.minCoeff();
    const double span = scores.maxCoeff() - lo;
    if (span == 0.0) return Vector::Zero(scores.size());
    return (scores.array() - lo) / span;
  }
  const double mean = scores.mean();
  const double sd = std::sqrt((scores.array() - mean).square().sum() / static_cast<double>(scores.size()));
  if (sd == 0.0) return Vector::Zero(scores.size());
  return (scores.array() - mean) / sd;
}

inline ScoreReport combine_scores(const Vector& score1, const Vector& score2, double beta,
                                  ScoreNormalizer normalizer = ScoreNormalizer::zscore) {
  if (!(beta >= 0.0 && beta <= 1.0)) throw InvalidArgument("beta must lie in [0, 1]");
  if (score1.size() != score2.size()) throw ShapeError("combine_scores: score vectors differ in length");
  ScoreReport report;
  report.score1 = score1;
  report.score2 = score2;
  report.beta = beta;
  report.normalizer = normalizer;
  // The degenerate mixes skip the zero-weighted term so that ties and
  // rankings match the surviving score exactly.
  if (beta == 0.0) {
    report.combined = normalize_scores(score1, normalizer);
  } else if (beta == 1.0) {
    report.combined = normalize_scores(score2, normalizer);
  } else {
    report.combined = (1.0 - beta) * normalize_scores(score1, normalizer) + beta * normalize_scores(score2, normalizer);
  }
  report.ranking = rank_descending(report.combined);
  return report;
}

struct ScoreConfig {
  double beta = 0.0;
  ScoreNormalizer normalizer = ScoreNormalizer::zscore;
  MahalanobisOptions mahalanobis;
};

/// Full-graph forward, then both scores from the same pass.
inline ScoreReport score_graph(const SigilModel& model, const MultiViewGraph& graph, const ScoreConfig& config = {}) {
  const EncodeTrace trace = encode(model, graph);
  const DecodeTrace decoded = decode(model, trace);
  std::vector<Matrix> features;
  for (const View& v : graph.views()) features.push_back(v.features());
  const Vector s1 = reconstruction_scores(features, decoded.reconstructions);
  const std::vector<std::size_t> clusters = hard_clusters(trace.composed);
  const MahalanobisResult s2 = mahalanobis_scores(trace.fine_embeddings(), clusters, config.mahalanobis);
  ScoreReport report = combine_scores(s1, s2.scores, config.beta, config.normalizer);
  report.cluster_assignment = clusters;
  report.warnings = s2.warnings;
  return report;
}

// ---------------------------------------------------------------------------
// Report file: comment header, column header, one line per node.

inline std::string format_significant(double value, int digits = 12) {
  char buffer[64];
  std::snprintf(buffer, sizeof buffer, "%.*g", digits, value);
  return buffer;
}

inline void write_score_report(const std::filesystem::path& path, const ScoreReport& report) {
  std::ofstream out = detail::open_output(path);
  out << "# beta " << format_significant(report.beta) << " normalizer " << to_string(report.normalizer) << '\n';
  for (const std::string& w : report.warnings) out << "# warning " << w << '\n';
  out << "index score1 score2 combined rank cluster\n";
  const std::vector<std::size_t> ranks = report.ranks();
  for (std::size_t i = 0; i < report.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    out << i << ' ' << format_significant(report.score1(r)) << ' ' << format_significant(report.score2(r)) << ' '
        << format_significant(report.combined(r)) << ' ' << ranks[i] << ' '
        << (report.cluster_assignment.empty() ? 0 : report.cluster_assignment[i]) << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

inline ScoreReport read_score_report(const std::filesystem::path& path) {
  std::ifstream in = detail::open_input(path);
  ScoreReport report;
  std::vector<double> s1, s2, combined;
  std::vector<std::size_t> ranks;
  std::string line;
  bool header_seen = false;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& what) {
    return IoError(path.string() + ":" + std::to_string(line_no) + ": " + what);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.rfind("# beta ", 0) == 0) {
      const auto fields = detail::split_fields(line);
      if (fields.size() != 5) throw fail("malformed beta header");
      report.beta = detail::parse_number<double>(fields[2], path.string());
      report.normalizer = parse_score_normalizer(std::string(fields[4]));
      continue;
    }
    if (line.rfind("# warning ", 0) == 0) {
      report.warnings.push_back(line.substr(10));
      continue;
    }
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      if (line != "index score1 score2 combined rank cluster") throw fail("missing column header");
      header_seen = true;
      continue;
    }
    const auto fields = detail::split_fields(line);
    if (fields.size() != 6) throw fail("expected 6 columns");
    const auto index = detail::parse_number<std::size_t>(fields[0], path.string());
    if (index != s1.size()) throw fail("node indices must be consecutive from 0");
    s1.push_back(detail::parse_number<double>(fields[1], path.string()));
    s2.push_back(detail::parse_number<double>(fields[2], path.string()));
    combined.push_back(detail::parse_number<double>(fields[3], path.string()));
    ranks.push_back(detail::parse_number<std::size_t>(fields[4], path.string()));
    report.cluster_assignment.push_back(detail::parse_number<std::size_t>(fields[5], path.string()));
  }
  if (!header_seen) throw IoError(path.string() + ": missing column header");
  const auto n = static_cast<Eigen::Index>(s1.size());
  report.score1 = Eigen::Map<const Vector>(s1.data(), n);
  report.score2 = Eigen::Map<const Vector>(s2.data(), n);
  report.combined = Eigen::Map<const Vector>(combined.data(), n);
  report.ranking.assign(s1.size(), s1.size());
  for (std::size_t i = 0; i < ranks.size(); ++i) {
    if (ranks[i] < 1 || ranks[i] > ranks.size() || report.ranking[ranks[i] - 1] != ranks.size()) {
      throw IoError(path.string() + ": rank column is not a permutation of 1..n");
    }
    report.ranking[ranks[i] - 1] = i;
  }
  return report;
}

}  // namespace sigil

#pragma once

// Multi-view attributed graphs: one node set, per-view sparse adjacency and
// dense features, optional anomaly labels. Graphs are immutable once built.

#include <algorithm>
#include <charconv>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <vector>

#include "sigil/error.hpp"
#include "sigil/tensor.hpp"

namespace sigil {

struct Edge {
  std::size_t src = 0;
  std::size_t dst = 0;
  double weight = 1.0;
};

/// One view: symmetric CSR adjacency with zero diagonal, dense features and
/// the degree vector (row sums of the adjacency).
class View {
 public:
  View() = default;

  /// Builds a view from an undirected edge list. Reverse edges are added,
  /// duplicates keep their first weight, self-loops are dropped.
  View(std::size_t num_nodes, std::span<const Edge> edges, Matrix features) : features_(std::move(features)) {
    if (static_cast<std::size_t>(features_.rows()) != num_nodes) {
      throw InvalidArgument("feature row count " + std::to_string(features_.rows()) + " != n " +
                            std::to_string(num_nodes));
    }
    std::vector<Eigen::Triplet<double>> triplets;
    triplets.reserve(edges.size() * 2);
    std::vector<std::pair<std::size_t, std::size_t>> seen;
    seen.reserve(edges.size());
    for (const Edge& e : edges) {
      if (e.src >= num_nodes || e.dst >= num_nodes) {
        throw InvalidArgument("node index out of range: edge (" + std::to_string(e.src) + ", " +
                              std::to_string(e.dst) + ") with n = " + std::to_string(num_nodes));
      }
      if (!(e.weight >= 0.0) || !std::isfinite(e.weight)) {
        throw InvalidArgument("edge weight must be finite and non-negative");
      }
      if (e.src == e.dst) continue;
      seen.emplace_back(std::min(e.src, e.dst), std::max(e.src, e.dst));
      triplets.emplace_back(static_cast<int>(e.src), static_cast<int>(e.dst), e.weight);
    }
    // Stable first-occurrence dedup on the unordered pair.
    std::vector<std::size_t> order(seen.size());
    for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return seen[a] < seen[b]; });
    std::vector<Eigen::Triplet<double>> unique;
    unique.reserve(order.size() * 2);
    for (std::size_t k = 0; k < order.size(); ++k) {
      if (k > 0 && seen[order[k]] == seen[order[k - 1]]) continue;
      const auto& [a, b] = seen[order[k]];
      const double w = triplets[order[k]].value();
      unique.emplace_back(static_cast<int>(a), static_cast<int>(b), w);
      unique.emplace_back(static_cast<int>(b), static_cast<int>(a), w);
    }
    const auto n = static_cast<Eigen::Index>(num_nodes);
    adjacency_.resize(n, n);
    adjacency_.setFromTriplets(unique.begin(), unique.end());
    adjacency_.makeCompressed();
    degree_ = Vector::Zero(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (SparseMatrix::InnerIterator it(adjacency_, i); it; ++it) degree_(i) += it.value();
    }
  }

  std::size_t num_nodes() const { return static_cast<std::size_t>(adjacency_.rows()); }
  const SparseMatrix& adjacency() const { return adjacency_; }
  const Matrix& features() const { return features_; }
  const Vector& degree() const { return degree_; }
  std::size_t feature_dim() const { return static_cast<std::size_t>(features_.cols()); }

  /// Undirected edge count.
  std::size_t edge_count() const { return static_cast<std::size_t>(adjacency_.nonZeros()) / 2; }

  /// Each undirected edge once, with src < dst, in row-major order.
  std::vector<Edge> edges() const {
    std::vector<Edge> out;
    out.reserve(edge_count());
    for (Eigen::Index i = 0; i < adjacency_.outerSize(); ++i) {
      for (SparseMatrix::InnerIterator it(adjacency_, i); it; ++it) {
        if (it.col() > i) {
          out.push_back({static_cast<std::size_t>(i), static_cast<std::size_t>(it.col()), it.value()});
        }
      }
    }
    return out;
  }

  bool has_edge(std::size_t a, std::size_t b) const {
    return adjacency_.coeff(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) != 0.0;
  }

 private:
  SparseMatrix adjacency_;
  Matrix features_;
  Vector degree_;
};

struct AnomalyLabels {
  std::vector<bool> flags;
  std::size_t count = 0;

  static AnomalyLabels none(std::size_t n) { return AnomalyLabels{std::vector<bool>(n, false), 0}; }

  static AnomalyLabels from_indices(std::size_t n, std::span<const std::size_t> indices) {
    AnomalyLabels labels = none(n);
    for (std::size_t i : indices) {
      if (i >= n) throw InvalidArgument("node index out of range: label " + std::to_string(i));
      if (!labels.flags[i]) {
        labels.flags[i] = true;
        ++labels.count;
      }
    }
    return labels;
  }

  std::vector<std::size_t> indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < flags.size(); ++i) {
      if (flags[i]) out.push_back(i);
    }
    return out;
  }

  void mark(std::size_t i) {
    if (!flags.at(i)) {
      flags[i] = true;
      ++count;
    }
  }
};

class MultiViewGraph {
 public:
  MultiViewGraph() = default;

  explicit MultiViewGraph(std::vector<View> views, std::optional<AnomalyLabels> labels = std::nullopt)
      : views_(std::move(views)), labels_(std::move(labels)) {
    if (views_.empty()) throw InvalidArgument("a graph needs at least one view");
    const std::size_t n = views_.front().num_nodes();
    for (const View& v : views_) {
      if (v.num_nodes() != n) throw InvalidArgument("views disagree on node count");
    }
    if (labels_ && labels_->flags.size() != n) throw InvalidArgument("label vector length != n");
  }

  std::size_t num_nodes() const { return views_.empty() ? 0 : views_.front().num_nodes(); }
  std::size_t num_views() const { return views_.size(); }
  const View& view(std::size_t a) const { return views_.at(a); }
  const std::vector<View>& views() const { return views_; }
  const std::optional<AnomalyLabels>& labels() const { return labels_; }

  std::vector<std::size_t> feature_dims() const {
    std::vector<std::size_t> dims;
    for (const View& v : views_) dims.push_back(v.feature_dim());
    return dims;
  }

  MultiViewGraph with_labels(AnomalyLabels labels) const { return MultiViewGraph(views_, std::move(labels)); }

 private:
  std::vector<View> views_;
  std::optional<AnomalyLabels> labels_;
};

// ---------------------------------------------------------------------------
// Text formats
//
// Edge file:    one edge per line, "src<TAB>dst[<TAB>weight]", 0-based, '#' comments.
// Feature file: header "n d", then n lines of d space-separated decimals.
// Label file:   one anomalous node index per line.

namespace detail {

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    if (i > start) fields.push_back(line.substr(start, i - start));
  }
  return fields;
}

inline std::string_view strip_comment(std::string_view line) {
  const auto hash = line.find('#');
  return hash == std::string_view::npos ? line : line.substr(0, hash);
}

template <typename T>
T parse_number(std::string_view token, const std::string& where) {
  T value{};
  const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc() || ptr != token.data() + token.size()) {
    throw IoError(where + ": cannot parse '" + std::string(token) + "'");
  }
  return value;
}

inline std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return in;
}

inline std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

/// Shortest decimal that parses back to the same double.
inline std::string format_exact(double value) {
  char buffer[64];
  const auto [ptr, ec] = std::to_chars(buffer, buffer + sizeof buffer, value);
  return std::string(buffer, ptr);
}

}  // namespace detail

inline std::vector<Edge> read_edge_file(const std::filesystem::path& path) {
  auto in = detail::open_input(path);
  std::vector<Edge> edges;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto fields = detail::split_fields(detail::strip_comment(line));
    if (fields.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    if (fields.size() != 2 && fields.size() != 3) throw IoError(where + ": expected 'src dst [weight]'");
    Edge e;
    e.src = detail::parse_number<std::size_t>(fields[0], where);
    e.dst = detail::parse_number<std::size_t>(fields[1], where);
    if (fields.size() == 3) e.weight = detail::parse_number<double>(fields[2], where);
    edges.push_back(e);
  }
  return edges;
}

inline Matrix read_feature_file(const std::filesystem::path& path) {
  auto in = detail::open_input(path);
  std::string line;
  std::size_t line_no = 0;
  auto next_content_line = [&]() -> std::optional<std::vector<std::string_view>> {
    while (std::getline(in, line)) {
      ++line_no;
      auto fields = detail::split_fields(detail::strip_comment(line));
      if (!fields.empty()) return fields;
    }
    return std::nullopt;
  };
  auto header = next_content_line();
  if (!header || header->size() != 2) throw IoError(path.string() + ": missing 'n d' header");
  const std::string where = path.string() + ":" + std::to_string(line_no);
  const auto n = detail::parse_number<std::size_t>((*header)[0], where);
  const auto d = detail::parse_number<std::size_t>((*header)[1], where);
  Matrix features(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < n; ++i) {
    auto row = next_content_line();
    if (!row) throw IoError(path.string() + ": feature row count " + std::to_string(i) + " != n " + std::to_string(n));
    if (row->size() != d) {
      throw IoError(path.string() + ":" + std::to_string(line_no) + ": expected " + std::to_string(d) + " values");
    }
    for (std::size_t j = 0; j < d; ++j) {
      features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          detail::parse_number<double>((*row)[j], path.string() + ":" + std::to_string(line_no));
    }
  }
  if (next_content_line()) throw IoError(path.string() + ": more feature rows than n " + std::to_string(n));
  return features;
}

inline std::vector<std::size_t> read_label_file(const std::filesystem::path& path) {
  auto in = detail::open_input(path);
  std::vector<std::size_t> indices;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto fields = detail::split_fields(detail::strip_comment(line));
    if (fields.empty()) continue;
    if (fields.size() != 1) throw IoError(path.string() + ":" + std::to_string(line_no) + ": expected one index");
    indices.push_back(detail::parse_number<std::size_t>(fields[0], path.string() + ":" + std::to_string(line_no)));
  }
  return indices;
}

inline void write_edge_file(const std::filesystem::path& path, const View& view) {
  auto out = detail::open_output(path);
  for (const Edge& e : view.edges()) {
    out << e.src << '\t' << e.dst;
    if (e.weight != 1.0) out << '\t' << detail::format_exact(e.weight);
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

inline void write_feature_file(const std::filesystem::path& path, const Matrix& features) {
  auto out = detail::open_output(path);
  out << features.rows() << ' ' << features.cols() << '\n';
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    for (Eigen::Index j = 0; j < features.cols(); ++j) {
      if (j > 0) out << ' ';
      out << detail::format_exact(features(i, j));
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

inline void write_label_file(const std::filesystem::path& path, const AnomalyLabels& labels) {
  auto out = detail::open_output(path);
  for (std::size_t i : labels.indices()) out << i << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

/// Loads one edge file and one feature file per view, plus optional labels.
inline MultiViewGraph load_graph(std::span<const std::filesystem::path> edge_files,
                                 std::span<const std::filesystem::path> feature_files,
                                 const std::optional<std::filesystem::path>& label_file = std::nullopt) {
  if (edge_files.empty() || edge_files.size() != feature_files.size()) {
    throw InvalidArgument("need one edge file and one feature file per view");
  }
  std::vector<View> views;
  std::size_t n = 0;
  for (std::size_t a = 0; a < edge_files.size(); ++a) {
    Matrix features = read_feature_file(feature_files[a]);
    if (a == 0) n = static_cast<std::size_t>(features.rows());
    if (static_cast<std::size_t>(features.rows()) != n) {
      throw InvalidArgument(feature_files[a].string() + ": feature row count " + std::to_string(features.rows()) +
                    " != n " + std::to_string(n));
    }
    const auto edges = read_edge_file(edge_files[a]);
    try {
      views.emplace_back(n, edges, std::move(features));
    } catch (const InvalidArgument& e) {
      throw InvalidArgument(edge_files[a].string() + ": " + e.what());
    }
  }
  std::optional<AnomalyLabels> labels;
  if (label_file) {
    const auto indices = read_label_file(*label_file);
    labels = AnomalyLabels::from_indices(n, indices);
  }
  return MultiViewGraph(std::move(views), std::move(labels));
}

/// Copies the adjacency into `num_views` views and zeroes each feature entry
/// independently with probability `mask_prob`.
inline MultiViewGraph synthesize_views(const View& single_view, std::size_t num_views, double mask_prob,
                                       std::uint64_t seed, std::optional<AnomalyLabels> labels = std::nullopt) {
  if (!(mask_prob >= 0.0 && mask_prob < 1.0)) throw InvalidArgument("mask_prob must lie in [0, 1)");
  if (num_views < 2) throw InvalidArgument("synthesize_views needs num_views >= 2");
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution masked(mask_prob);
  const auto edges = single_view.edges();
  std::vector<View> views;
  for (std::size_t a = 0; a < num_views; ++a) {
    Matrix features = single_view.features();
    if (mask_prob > 0.0) {
      for (Eigen::Index i = 0; i < features.rows(); ++i) {
        for (Eigen::Index j = 0; j < features.cols(); ++j) {
          if (masked(rng)) features(i, j) = 0.0;
        }
      }
    }
    views.emplace_back(single_view.num_nodes(), edges, std::move(features));
  }
  return MultiViewGraph(std::move(views), std::move(labels));
}

}  // namespace sigil

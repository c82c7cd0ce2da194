#pragma once

// Anomaly injection, synthetic graphs, and ranking metrics.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sigil/error.hpp"
#include "sigil/graph.hpp"
#include "sigil/losses.hpp"
#include "sigil/scoring.hpp"

namespace sigil {

// ---------------------------------------------------------------------------
// Injection

struct InjectionPlan {
  std::size_t clique_size = 15;         // m
  std::size_t clique_count = 0;
  std::size_t attr_candidate_count = 50;  // k
  std::size_t attr_anomaly_count = 0;
  std::uint64_t seed = 0;

  void validate() const {
    if (clique_count > 0 && clique_size < 2) throw InvalidArgument("clique size m must be >= 2");
    if (attr_anomaly_count > 0 && attr_candidate_count < 1) throw InvalidArgument("candidate count k must be >= 1");
  }
};

struct InjectionResult {
  MultiViewGraph graph;
  std::vector<std::vector<std::size_t>> cliques;  // structural anomaly sets
  std::vector<std::size_t> attribute_nodes;
  std::vector<std::vector<std::size_t>> donors;   // [view][t] donor of attribute_nodes[t]

  std::vector<std::size_t> structural_nodes() const {
    std::vector<std::size_t> out;
    for (const auto& c : cliques) out.insert(out.end(), c.begin(), c.end());
    return out;
  }
};

namespace detail {

inline AnomalyLabels labels_or_none(const MultiViewGraph& graph) {
  return graph.labels() ? *graph.labels() : AnomalyLabels::none(graph.num_nodes());
}

inline std::vector<std::size_t> unlabeled_nodes(const AnomalyLabels& labels) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < labels.flags.size(); ++i) {
    if (!labels.flags[i]) out.push_back(i);
  }
  return out;
}

/// `count` distinct entries of `pool`, in draw order.
template <typename Rng>
std::vector<std::size_t> draw_without_replacement(std::vector<std::size_t> pool, std::size_t count, Rng& rng) {
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(count);
  return pool;
}

}  // namespace detail

/// Fully connects `clique_count` disjoint sets of `clique_size` previously
/// unlabeled nodes in every view and labels them.
inline InjectionResult inject_structural(const MultiViewGraph& graph, std::size_t clique_size,
                                         std::size_t clique_count, std::uint64_t seed) {
  if (clique_count > 0 && clique_size < 2) throw InvalidArgument("clique size m must be >= 2");
  AnomalyLabels labels = detail::labels_or_none(graph);
  const std::vector<std::size_t> pool = detail::unlabeled_nodes(labels);
  if (clique_size * clique_count > pool.size()) {
    throw InvalidArgument("clique budget m * cliques = " + std::to_string(clique_size * clique_count) +
                          " exceeds the " + std::to_string(pool.size()) + " unlabeled nodes");
  }
  std::mt19937_64 rng(seed);
  const std::vector<std::size_t> chosen = detail::draw_without_replacement(pool, clique_size * clique_count, rng);

  InjectionResult result{graph, {}, {}, {}};
  std::vector<Edge> added;
  for (std::size_t c = 0; c < clique_count; ++c) {
    std::vector<std::size_t> members(chosen.begin() + static_cast<std::ptrdiff_t>(c * clique_size),
                                     chosen.begin() + static_cast<std::ptrdiff_t>((c + 1) * clique_size));
    std::sort(members.begin(), members.end());
    for (std::size_t x = 0; x < members.size(); ++x) {
      labels.mark(members[x]);
      for (std::size_t y = x + 1; y < members.size(); ++y) added.push_back({members[x], members[y], 1.0});
    }
    result.cliques.push_back(std::move(members));
  }

  std::vector<View> views;
  for (const View& v : graph.views()) {
    std::vector<Edge> edges = v.edges();
    edges.insert(edges.end(), added.begin(), added.end());
    views.emplace_back(v.num_nodes(), edges, v.features());
  }
  result.graph = MultiViewGraph(std::move(views), std::move(labels));
  return result;
}

/// Replaces the features of each target with those of the farthest of `k`
/// sampled candidates, per view with view-local distances. Candidates are
/// drawn from non-target nodes, so donors are never themselves modified.
inline InjectionResult perturb_attributes(const MultiViewGraph& graph, std::span<const std::size_t> targets,
                                          std::size_t k, std::uint64_t seed) {
  const std::size_t n = graph.num_nodes();
  if (k < 1) throw InvalidArgument("candidate count k must be >= 1");
  std::vector<bool> is_target(n, false);
  for (std::size_t t : targets) {
    if (t >= n) throw InvalidArgument("attribute target " + std::to_string(t) + " out of range");
    if (is_target[t]) throw InvalidArgument("attribute target " + std::to_string(t) + " listed twice");
    is_target[t] = true;
  }
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < n; ++i) {
    if (!is_target[i]) pool.push_back(i);
  }
  if (!targets.empty() && k > pool.size()) {
    throw InvalidArgument("candidate count k = " + std::to_string(k) + " exceeds the " + std::to_string(pool.size()) +
                          " non-target nodes");
  }

  std::mt19937_64 rng(seed);
  std::vector<std::vector<std::size_t>> candidates;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    candidates.push_back(detail::draw_without_replacement(pool, k, rng));
  }

  AnomalyLabels labels = detail::labels_or_none(graph);
  InjectionResult result{graph, {}, {targets.begin(), targets.end()}, {}};
  std::vector<View> views;
  for (const View& v : graph.views()) {
    const Matrix& original = v.features();
    Matrix features = original;
    std::vector<std::size_t> donors;
    for (std::size_t t = 0; t < targets.size(); ++t) {
      const auto i = static_cast<Eigen::Index>(targets[t]);
      std::size_t best = candidates[t].front();
      double best_distance = -1.0;
      for (std::size_t j : candidates[t]) {
        const double d = (original.row(i) - original.row(static_cast<Eigen::Index>(j))).squaredNorm();
        if (d > best_distance) {
          best_distance = d;
          best = j;
        }
      }
      features.row(i) = original.row(static_cast<Eigen::Index>(best));
      donors.push_back(best);
    }
    result.donors.push_back(std::move(donors));
    views.emplace_back(v.num_nodes(), v.edges(), std::move(features));
  }
  for (std::size_t t : targets) labels.mark(t);
  result.graph = MultiViewGraph(std::move(views), std::move(labels));
  return result;
}

/// Picks `count` previously unlabeled nodes and perturbs them.
inline InjectionResult inject_attribute(const MultiViewGraph& graph, std::size_t count, std::size_t k,
                                        std::uint64_t seed) {
  const std::vector<std::size_t> pool = detail::unlabeled_nodes(detail::labels_or_none(graph));
  if (count > pool.size()) {
    throw InvalidArgument("attribute anomaly count " + std::to_string(count) + " exceeds the " +
                          std::to_string(pool.size()) + " unlabeled nodes");
  }
  if (count > 0 && k + count > graph.num_nodes()) {
    throw InvalidArgument("candidate count k = " + std::to_string(k) + " plus " + std::to_string(count) +
                          " targets exceeds n = " + std::to_string(graph.num_nodes()));
  }
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> targets = detail::draw_without_replacement(pool, count, rng);
  std::sort(targets.begin(), targets.end());
  return perturb_attributes(graph, targets, k, rng());
}

/// Structural injection followed by attribute injection on the remaining nodes.
inline InjectionResult inject(const MultiViewGraph& graph, const InjectionPlan& plan) {
  plan.validate();
  const std::size_t unlabeled = detail::unlabeled_nodes(detail::labels_or_none(graph)).size();
  if (plan.clique_size * plan.clique_count + plan.attr_anomaly_count > unlabeled) {
    throw InvalidArgument("m * cliques + attribute anomalies = " +
                          std::to_string(plan.clique_size * plan.clique_count + plan.attr_anomaly_count) +
                          " exceeds the " + std::to_string(unlabeled) + " unlabeled nodes");
  }
  std::mt19937_64 seeds(plan.seed);
  const std::uint64_t structural_seed = seeds();
  const std::uint64_t attribute_seed = seeds();
  InjectionResult structural = inject_structural(graph, plan.clique_size, plan.clique_count, structural_seed);
  InjectionResult attribute =
      inject_attribute(structural.graph, plan.attr_anomaly_count, plan.attr_candidate_count, attribute_seed);
  attribute.cliques = std::move(structural.cliques);
  return attribute;
}

// ---------------------------------------------------------------------------
// Synthetic graphs: stochastic block model with Gaussian community features.

struct SyntheticSpec {
  std::size_t n = 300;
  std::size_t communities = 3;
  double intra_prob = 0.1;
  double inter_prob = 0.01;
  std::size_t feature_dim = 16;
  double separation = 4.0;  // expected distance between community means
  std::size_t views = 2;
  double mask_prob = 0.05;
  std::uint64_t seed = 0;

  void validate() const {
    if (communities < 2) throw InvalidArgument("synthetic graph needs >= 2 communities");
    if (n < communities) throw InvalidArgument("synthetic graph needs n >= communities");
    if (!(intra_prob >= 0.0 && intra_prob <= 1.0)) throw InvalidArgument("intra probability must lie in [0, 1]");
    if (!(inter_prob >= 0.0 && inter_prob <= 1.0)) throw InvalidArgument("inter probability must lie in [0, 1]");
    if (feature_dim < 1) throw InvalidArgument("feature dimension must be >= 1");
    if (!(separation >= 0.0)) throw InvalidArgument("separation must be >= 0");
    if (views < 2) throw InvalidArgument("synthetic graph needs >= 2 views");
    if (!(mask_prob >= 0.0 && mask_prob < 1.0)) throw InvalidArgument("mask_prob must lie in [0, 1)");
  }
};

/// Balanced contiguous blocks.
inline std::size_t community_of(const SyntheticSpec& spec, std::size_t node) {
  return node * spec.communities / spec.n;
}

inline MultiViewGraph generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 seeds(spec.seed);
  std::mt19937_64 edge_rng(seeds());
  std::mt19937_64 feature_rng(seeds());
  const std::uint64_t mask_seed = seeds();

  std::vector<Edge> edges;
  std::bernoulli_distribution intra(spec.intra_prob);
  std::bernoulli_distribution inter(spec.inter_prob);
  for (std::size_t i = 0; i < spec.n; ++i) {
    for (std::size_t j = i + 1; j < spec.n; ++j) {
      const bool same = community_of(spec, i) == community_of(spec, j);
      if (same ? intra(edge_rng) : inter(edge_rng)) edges.push_back({i, j, 1.0});
    }
  }

  const auto d = static_cast<Eigen::Index>(spec.feature_dim);
  // Per-coordinate spread chosen so E||mu_a - mu_b||^2 = separation^2.
  std::normal_distribution<double> mean_dist(0.0, spec.separation / std::sqrt(2.0 * static_cast<double>(d)));
  std::normal_distribution<double> noise(0.0, 1.0);
  Matrix means(static_cast<Eigen::Index>(spec.communities), d);
  for (Eigen::Index c = 0; c < means.rows(); ++c) {
    for (Eigen::Index j = 0; j < d; ++j) means(c, j) = mean_dist(feature_rng);
  }
  Matrix features(static_cast<Eigen::Index>(spec.n), d);
  for (std::size_t i = 0; i < spec.n; ++i) {
    const auto c = static_cast<Eigen::Index>(community_of(spec, i));
    for (Eigen::Index j = 0; j < d; ++j) features(static_cast<Eigen::Index>(i), j) = means(c, j) + noise(feature_rng);
  }
  const View base(spec.n, edges, std::move(features));
  return synthesize_views(base, spec.views, spec.mask_prob, mask_seed, AnomalyLabels::none(spec.n));
}

// ---------------------------------------------------------------------------
// Metrics

namespace detail {

inline std::size_t count_positives(const Vector& scores, const AnomalyLabels& labels) {
  if (static_cast<std::size_t>(scores.size()) != labels.flags.size()) {
    throw ShapeError("metric: " + std::to_string(scores.size()) + " scores but " +
                     std::to_string(labels.flags.size()) + " labels");
  }
  return labels.count;
}

}  // namespace detail

/// Mann-Whitney AUC with midranks (ties count one half).
inline double auc(const Vector& scores, const AnomalyLabels& labels) {
  const std::size_t positives = detail::count_positives(scores, labels);
  const std::size_t n = labels.flags.size();
  const std::size_t negatives = n - positives;
  if (positives == 0 || negatives == 0) throw InvalidArgument("auc needs both anomalous and normal nodes");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores(static_cast<Eigen::Index>(a)) < scores(static_cast<Eigen::Index>(b));
  });
  double positive_rank_sum = 0.0;
  for (std::size_t start = 0; start < n;) {
    std::size_t end = start + 1;
    while (end < n && scores(static_cast<Eigen::Index>(order[end])) == scores(static_cast<Eigen::Index>(order[start]))) {
      ++end;
    }
    const double midrank = 0.5 * static_cast<double>(start + 1 + end);
    for (std::size_t r = start; r < end; ++r) {
      if (labels.flags[order[r]]) positive_rank_sum += midrank;
    }
    start = end;
  }
  const double p = static_cast<double>(positives);
  return (positive_rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(negatives));
}

/// Share of all anomalies ranked in the top K (descending score, ties by index).
inline double recall_at_k(const Vector& scores, const AnomalyLabels& labels, std::size_t k) {
  const std::size_t positives = detail::count_positives(scores, labels);
  if (k < 1 || k > labels.flags.size()) {
    throw InvalidArgument("K = " + std::to_string(k) + " outside [1, " + std::to_string(labels.flags.size()) + "]");
  }
  if (positives == 0) throw InvalidArgument("recall needs at least one anomalous node");
  const std::vector<std::size_t> ranking = rank_descending(scores);
  std::size_t hits = 0;
  for (std::size_t r = 0; r < k; ++r) hits += labels.flags[ranking[r]] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(positives);
}

struct MetricReport {
  double auc = 0.0;
  std::map<std::size_t, double> recall_at_k;
  std::size_t n = 0;
  std::size_t anomaly_count = 0;
};

inline MetricReport evaluate(const Vector& scores, const AnomalyLabels& labels, std::span<const std::size_t> ks) {
  MetricReport report;
  report.auc = auc(scores, labels);
  report.n = labels.flags.size();
  report.anomaly_count = labels.count;
  for (std::size_t k : ks) report.recall_at_k[k] = recall_at_k(scores, labels, k);
  return report;
}

/// Value rounded to 12 significant digits, as written to reports.
inline double round_significant(double value) {
  return detail::parse_number<double>(format_significant(value), "round_significant");
}

inline std::string metric_report_text(const MetricReport& report) {
  std::string out;
  out += "n = " + std::to_string(report.n) + "\n";
  out += "anomaly_count = " + std::to_string(report.anomaly_count) + "\n";
  out += "auc = " + format_significant(report.auc) + "\n";
  for (const auto& [k, r] : report.recall_at_k) {
    out += "recall_at_" + std::to_string(k) + " = " + format_significant(r) + "\n";
  }
  return out;
}

inline nlohmann::ordered_json metric_report_json(const MetricReport& report) {
  nlohmann::ordered_json j;
  j["n"] = report.n;
  j["anomaly_count"] = report.anomaly_count;
  j["auc"] = round_significant(report.auc);
  nlohmann::ordered_json recalls = nlohmann::ordered_json::object();
  for (const auto& [k, r] : report.recall_at_k) recalls[std::to_string(k)] = round_significant(r);
  j["recall_at_k"] = recalls;
  return j;
}

inline void write_metric_report(const std::filesystem::path& text_path, const std::filesystem::path& json_path,
                                const MetricReport& report) {
  {
    std::ofstream out = detail::open_output(text_path);
    out << metric_report_text(report);
    if (!out) throw IoError("failed writing " + text_path.string());
  }
  std::ofstream out = detail::open_output(json_path);
  out << metric_report_json(report).dump(2) << '\n';
  if (!out) throw IoError("failed writing " + json_path.string());
}

}  // namespace sigil

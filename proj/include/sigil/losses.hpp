#pragma once

// Training losses.
//
//   reconstruction   L_r = sum_a ( sum_i ||x_i^a - x̂_i^a||_2 )^2
//   similarity map   K = alpha M M^T + (1 - alpha) (1/v) sum_a A^a,  D_ii = sum_j K_ij
//                    O = D^{-1/2} K D^{-1/2}  (symmetric)  or  D^{-1} K  (row)
//   guided loss      L_c = || O - Ẑ Ẑ^T / tau ||_F^2
//   clustering loss  L_1 = -sum_i sum_{j in C(i), j != i} log( s_ij / (s_ij + sum_{k not in C(i)} s_ik) ),
//                    s_ij = exp(ẑ_i · ẑ_j / tau)
//   objective        J = L_r + lambda L_c

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "sigil/error.hpp"
#include "sigil/tensor.hpp"

namespace sigil {

enum class Normalization { symmetric, row };
enum class LossVariant { similarity_guided, clustering_l1, plain_l2, none };

inline std::string to_string(Normalization n) { return n == Normalization::symmetric ? "symmetric" : "row"; }

inline std::string to_string(LossVariant v) {
  switch (v) {
    case LossVariant::similarity_guided: return "similarity_guided";
    case LossVariant::clustering_l1: return "clustering_l1";
    case LossVariant::plain_l2: return "plain_l2";
    case LossVariant::none: return "none";
  }
  return "none";
}

inline Normalization parse_normalization(const std::string& s) {
  if (s == "symmetric") return Normalization::symmetric;
  if (s == "row") return Normalization::row;
  throw InvalidArgument("unknown normalization '" + s + "' (symmetric|row)");
}

inline LossVariant parse_loss_variant(const std::string& s) {
  if (s == "similarity_guided") return LossVariant::similarity_guided;
  if (s == "clustering_l1") return LossVariant::clustering_l1;
  if (s == "plain_l2") return LossVariant::plain_l2;
  if (s == "none") return LossVariant::none;
  throw InvalidArgument("unknown loss variant '" + s + "' (similarity_guided|clustering_l1|plain_l2|none)");
}

struct LossConfig {
  double lambda = 10.0;
  double alpha = 0.9;
  double tau = 1.0;
  std::size_t pair_sample_size = 512;
  LossVariant variant = LossVariant::similarity_guided;

  void validate() const {
    if (!(lambda >= 0.0)) throw InvalidArgument("lambda must be >= 0");
    if (!(tau > 0.0)) throw InvalidArgument("tau must be > 0");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidArgument("alpha must lie in [0, 1]");
    if (pair_sample_size < 2) throw InvalidArgument("pair sample size must be >= 2");
  }
};

/// Normalized similarity map, or its principal submatrix on `indices`.
struct SimilarityMap {
  Matrix O;
  Vector D;  // full-graph normalizer, length n
  double alpha = 1.0;
  Normalization normalization = Normalization::symmetric;
  std::vector<std::size_t> indices;  // empty: O covers every node
};

// ---------------------------------------------------------------------------
// Reconstruction

inline ad::Var reconstruction_loss(std::span<const ad::Var> features, std::span<const ad::Var> reconstructions) {
  if (features.size() != reconstructions.size() || features.empty()) {
    throw ShapeError("reconstruction_loss: view count mismatch");
  }
  ad::Var total;
  for (std::size_t a = 0; a < features.size(); ++a) {
    ad::Var norm21 = ad::sum(ad::row_l2_norm(ad::sub(features[a], reconstructions[a])));
    ad::Var term = ad::hadamard(norm21, norm21);
    total = a == 0 ? term : ad::add(total, term);
  }
  return total;
}

inline double reconstruction_loss(std::span<const Matrix> features, std::span<const Matrix> reconstructions) {
  if (features.size() != reconstructions.size()) throw ShapeError("reconstruction_loss: view count mismatch");
  double total = 0.0;
  for (std::size_t a = 0; a < features.size(); ++a) {
    if (features[a].rows() != reconstructions[a].rows() || features[a].cols() != reconstructions[a].cols()) {
      throw ShapeError("reconstruction_loss: view " + std::to_string(a) + " shape mismatch");
    }
    const double norm21 = (features[a] - reconstructions[a]).rowwise().norm().sum();
    total += norm21 * norm21;
  }
  return total;
}

// ---------------------------------------------------------------------------
// Similarity map

namespace detail {

inline void check_similarity_inputs(const Matrix& assignment, std::span<const SparseMatrix> adjacencies, double alpha) {
  if (adjacencies.empty()) throw InvalidArgument("similarity map needs at least one adjacency");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidArgument("alpha must lie in [0, 1]");
  for (const SparseMatrix& a : adjacencies) {
    if (a.rows() != assignment.rows() || a.cols() != assignment.rows()) {
      throw ShapeError("similarity map: adjacency is not n x n for n = " + std::to_string(assignment.rows()));
    }
  }
}

/// Row sums of K without forming it: alpha M (M^T 1) + (1 - alpha) mean_a deg^a.
inline Vector similarity_degree(const Matrix& assignment, std::span<const SparseMatrix> adjacencies, double alpha) {
  const Vector column_mass = assignment.colwise().sum().transpose();
  Vector degree = alpha * (assignment * column_mass);
  const double weight = (1.0 - alpha) / static_cast<double>(adjacencies.size());
  for (const SparseMatrix& a : adjacencies) {
    for (Eigen::Index i = 0; i < a.outerSize(); ++i) {
      double row = 0.0;
      for (SparseMatrix::InnerIterator it(a, i); it; ++it) row += it.value();
      degree(i) += weight * row;
    }
  }
  for (Eigen::Index i = 0; i < degree.size(); ++i) {
    if (!(degree(i) > 0.0)) {
      throw InvalidArgument("similarity map: node " + std::to_string(i) +
                            " has an all-zero similarity row (isolated with alpha = 0?)");
    }
  }
  return degree;
}

inline void normalize_similarity(Matrix& k, const Vector& degree, std::span<const std::size_t> rows,
                                 Normalization normalization) {
  for (Eigen::Index r = 0; r < k.rows(); ++r) {
    const double di = degree(static_cast<Eigen::Index>(rows[static_cast<std::size_t>(r)]));
    for (Eigen::Index c = 0; c < k.cols(); ++c) {
      const double dj = degree(static_cast<Eigen::Index>(rows[static_cast<std::size_t>(c)]));
      k(r, c) = normalization == Normalization::symmetric ? k(r, c) / std::sqrt(di * dj) : k(r, c) / di;
    }
  }
}

}  // namespace detail

/// Full n x n similarity map.
inline SimilarityMap build_similarity_map(const Matrix& assignment, std::span<const SparseMatrix> adjacencies,
                                          double alpha, Normalization normalization) {
  detail::check_similarity_inputs(assignment, adjacencies, alpha);
  SimilarityMap map;
  map.alpha = alpha;
  map.normalization = normalization;
  map.D = detail::similarity_degree(assignment, adjacencies, alpha);
  Matrix k = alpha * (assignment * assignment.transpose());
  const double weight = (1.0 - alpha) / static_cast<double>(adjacencies.size());
  for (const SparseMatrix& a : adjacencies) k += weight * Matrix(a);
  std::vector<std::size_t> all(static_cast<std::size_t>(assignment.rows()));
  std::iota(all.begin(), all.end(), std::size_t{0});
  detail::normalize_similarity(k, map.D, all, normalization);
  map.O = std::move(k);
  return map;
}

/// Principal submatrix of the similarity map on `indices`, in O(p^2 k + n k + |E|).
/// The normalizer still uses full-graph row sums.
inline SimilarityMap build_similarity_submap(const Matrix& assignment, std::span<const SparseMatrix> adjacencies,
                                             double alpha, Normalization normalization,
                                             std::span<const std::size_t> indices) {
  detail::check_similarity_inputs(assignment, adjacencies, alpha);
  const auto n = static_cast<std::size_t>(assignment.rows());
  SimilarityMap map;
  map.alpha = alpha;
  map.normalization = normalization;
  map.indices.assign(indices.begin(), indices.end());
  map.D = detail::similarity_degree(assignment, adjacencies, alpha);

  const auto p = static_cast<Eigen::Index>(indices.size());
  Matrix rows(p, assignment.cols());
  std::vector<Eigen::Index> position(n, -1);
  for (Eigen::Index r = 0; r < p; ++r) {
    const std::size_t i = indices[static_cast<std::size_t>(r)];
    if (i >= n) throw ShapeError("similarity submap: index out of range");
    rows.row(r) = assignment.row(static_cast<Eigen::Index>(i));
    position[i] = r;
  }
  Matrix k = alpha * (rows * rows.transpose());
  const double weight = (1.0 - alpha) / static_cast<double>(adjacencies.size());
  if (weight != 0.0) {
    for (const SparseMatrix& a : adjacencies) {
      for (Eigen::Index r = 0; r < p; ++r) {
        for (SparseMatrix::InnerIterator it(a, static_cast<Eigen::Index>(indices[static_cast<std::size_t>(r)])); it;
             ++it) {
          const Eigen::Index c = position[static_cast<std::size_t>(it.col())];
          if (c >= 0) k(r, c) += weight * it.value();
        }
      }
    }
  }
  detail::normalize_similarity(k, map.D, indices, normalization);
  map.O = std::move(k);
  return map;
}

/// Differentiable similarity map (gradients flow into M).
inline ad::Var similarity_map(ad::Var assignment, std::span<const SparseMatrix> adjacencies, double alpha,
                              Normalization normalization) {
  detail::check_similarity_inputs(assignment.value(), adjacencies, alpha);
  ad::Tape& tape = assignment.tape();
  Matrix mean_adjacency = Matrix::Zero(assignment.rows(), assignment.rows());
  for (const SparseMatrix& a : adjacencies) mean_adjacency += Matrix(a);
  mean_adjacency *= (1.0 - alpha) / static_cast<double>(adjacencies.size());
  ad::Var k = ad::add(ad::scale(ad::matmul(assignment, ad::transpose(assignment)), alpha),
                      tape.constant(std::move(mean_adjacency)));
  ad::Var degree = ad::row_sums(k);
  if ((degree.value().array() <= 0.0).any()) throw InvalidArgument("similarity map: all-zero similarity row");
  if (normalization == Normalization::row) return ad::scale_rows(k, ad::pow_scalar(degree, -1.0));
  ad::Var inv_sqrt = ad::pow_scalar(degree, -0.5);
  return ad::scale_rows(ad::scale_cols(k, inv_sqrt), inv_sqrt);
}

/// M M^T restricted to `indices` (all rows when empty): the target of the plain L_2 variant.
inline Matrix assignment_similarity(const Matrix& assignment, std::span<const std::size_t> indices = {}) {
  if (indices.empty()) return assignment * assignment.transpose();
  Matrix rows(static_cast<Eigen::Index>(indices.size()), assignment.cols());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    rows.row(static_cast<Eigen::Index>(r)) = assignment.row(static_cast<Eigen::Index>(indices[r]));
  }
  return rows * rows.transpose();
}

// ---------------------------------------------------------------------------
// Contrastive terms

/// || O - Ẑ Ẑ^T / tau ||_F^2 with O already matched to the rows of Ẑ.
inline ad::Var similarity_guided_loss(ad::Var target, ad::Var embeddings, double tau) {
  if (!(tau > 0.0)) throw InvalidArgument("tau must be > 0");
  if (target.rows() != embeddings.rows() || target.cols() != embeddings.rows()) {
    throw ShapeError("similarity_guided_loss: target " + shape_string(target.rows(), target.cols()) +
                     " does not match " + std::to_string(embeddings.rows()) + " embeddings");
  }
  ad::Var gram = ad::scale(ad::matmul(embeddings, ad::transpose(embeddings)), 1.0 / tau);
  return ad::frobenius_sq(ad::sub(target, gram));
}

/// Value form. With `sample` non-empty the loss is restricted to the
/// principal submatrix of both O and Ẑ Ẑ^T on those nodes.
inline double similarity_guided_loss(const Matrix& target, const Matrix& embeddings, double tau,
                                     std::span<const std::size_t> sample = {}) {
  if (!(tau > 0.0)) throw InvalidArgument("tau must be > 0");
  if (target.rows() != embeddings.rows() || target.cols() != embeddings.rows()) {
    throw ShapeError("similarity_guided_loss: O must be n x n for n embeddings");
  }
  if (sample.empty()) return (target - embeddings * embeddings.transpose() / tau).squaredNorm();
  const auto p = static_cast<Eigen::Index>(sample.size());
  Matrix z(p, embeddings.cols());
  Matrix o(p, p);
  for (Eigen::Index r = 0; r < p; ++r) {
    const auto i = static_cast<Eigen::Index>(sample[static_cast<std::size_t>(r)]);
    z.row(r) = embeddings.row(i);
    for (Eigen::Index c = 0; c < p; ++c) o(r, c) = target(i, static_cast<Eigen::Index>(sample[static_cast<std::size_t>(c)]));
  }
  return (o - z * z.transpose() / tau).squaredNorm();
}

/// Cluster id of each row: argmax, ties to the lowest index.
inline std::vector<std::size_t> hard_clusters(const Matrix& assignment) {
  std::vector<std::size_t> clusters(static_cast<std::size_t>(assignment.rows()));
  for (Eigen::Index i = 0; i < assignment.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < assignment.cols(); ++k) {
      if (assignment(i, k) > assignment(i, best)) best = k;
    }
    clusters[static_cast<std::size_t>(i)] = static_cast<std::size_t>(best);
  }
  return clusters;
}

/// Clustering-based contrastive loss over hard clusters; singleton clusters
/// contribute no positives.
inline ad::Var clustering_contrastive_loss(ad::Var embeddings, std::span<const std::size_t> clusters, double tau) {
  if (!(tau > 0.0)) throw InvalidArgument("tau must be > 0");
  const auto n = static_cast<std::size_t>(embeddings.rows());
  if (clusters.size() != n) throw ShapeError("clustering_contrastive_loss: one cluster id per row required");
  if (n > 0 && std::all_of(clusters.begin(), clusters.end(), [&](std::size_t c) { return c == clusters[0]; })) {
    throw InvalidArgument("clustering_contrastive_loss: a single cluster leaves no negative pairs");
  }
  ad::Tape& tape = embeddings.tape();
  Matrix positive = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  Matrix negative = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const auto r = static_cast<Eigen::Index>(i);
      const auto c = static_cast<Eigen::Index>(j);
      if (clusters[i] != clusters[j]) {
        negative(r, c) = 1.0;
      } else if (i != j) {
        positive(r, c) = 1.0;
      }
    }
  }
  ad::Var logits = ad::scale(ad::matmul(embeddings, ad::transpose(embeddings)), 1.0 / tau);
  ad::Var sims = ad::exp(logits);
  ad::Var negative_mass = ad::row_sums(ad::hadamard(sims, tape.constant(std::move(negative))));
  ad::Var per_pair = ad::sub(ad::log(ad::add_column(sims, negative_mass)), logits);
  return ad::sum(ad::hadamard(per_pair, tape.constant(std::move(positive))));
}

inline double clustering_contrastive_loss(const Matrix& embeddings, std::span<const std::size_t> clusters,
                                          double tau) {
  ad::Tape tape;
  return clustering_contrastive_loss(tape.constant(embeddings), clusters, tau).scalar();
}

struct AlignUniform {
  double align = 0.0;
  double uniform = 0.0;
};

/// Alignment/uniformity split of the guided loss over all (i, j) pairs:
///   align   = -sum_ij 2 o_ij ẑ_i·ẑ_j / tau
///   uniform =  sum_ij log( prod_k exp((ẑ_i·ẑ_k / tau)^2) )^{1/n}
/// Their sum differs from L_c by sum_ij o_ij^2, independent of Ẑ.
inline AlignUniform align_uniform_decomposition(const Matrix& target, const Matrix& embeddings, double tau) {
  if (!(tau > 0.0)) throw InvalidArgument("tau must be > 0");
  if (target.rows() != embeddings.rows() || target.cols() != embeddings.rows()) {
    throw ShapeError("align_uniform_decomposition: O must be n x n for n embeddings");
  }
  const Matrix scaled = embeddings * embeddings.transpose() / tau;
  const auto n = static_cast<double>(embeddings.rows());
  AlignUniform out;
  out.align = -2.0 * target.cwiseProduct(scaled).sum();
  // log of the geometric mean is the mean of the exponents; identical for every j.
  const Vector log_geometric_mean = scaled.cwiseProduct(scaled).rowwise().sum() / n;
  out.uniform = n * log_geometric_mean.sum();
  return out;
}

inline ad::Var total_objective(ad::Var reconstruction, ad::Var contrastive, double lambda) {
  if (!(lambda >= 0.0)) throw InvalidArgument("lambda must be >= 0");
  return ad::add(reconstruction, ad::scale(contrastive, lambda));
}

inline double total_objective(double reconstruction, double contrastive, double lambda) {
  if (!(lambda >= 0.0)) throw InvalidArgument("lambda must be >= 0");
  return reconstruction + lambda * contrastive;
}

/// Uniform sample of min(n, p) distinct node indices, sorted.
template <typename Rng>
std::vector<std::size_t> sample_nodes(std::size_t n, std::size_t p, Rng& rng) {
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), std::size_t{0});
  if (p >= n) return all;
  // Partial Fisher-Yates.
  for (std::size_t i = 0; i < p; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(all[i], all[pick(rng)]);
  }
  all.resize(p);
  std::sort(all.begin(), all.end());
  return all;
}

}  // namespace sigil

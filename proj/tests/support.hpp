#pragma once

// Shared helpers for the test suites: random inputs and an independent
// central-difference gradient.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>

#include "sigil/graph.hpp"
#include "sigil/tensor.hpp"

namespace sigil::testing {

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = normal(rng);
  }
  return m;
}

inline Matrix random_stochastic(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  Matrix m = random_matrix(rows, cols, rng).array().exp();
  for (Eigen::Index i = 0; i < rows; ++i) m.row(i) /= m.row(i).sum();
  return m;
}

inline Matrix unit_rows(Matrix m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) m.row(i) /= m.row(i).norm();
  return m;
}

/// Central differences of a scalar function of one matrix.
inline Matrix numeric_gradient(const std::function<double(const Matrix&)>& f, Matrix x, double h = 1e-5) {
  Matrix g(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double saved = x(i, j);
      x(i, j) = saved + h;
      const double up = f(x);
      x(i, j) = saved - h;
      const double down = f(x);
      x(i, j) = saved;
      g(i, j) = (up - down) / (2.0 * h);
    }
  }
  return g;
}

/// Largest relative error, ignoring entries whose absolute error is below `floor`.
inline double max_relative_error(const Matrix& a, const Matrix& b, double floor = 1e-7) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      const double err = std::abs(a(i, j) - b(i, j));
      if (err <= floor) continue;
      worst = std::max(worst, err / std::max(std::abs(a(i, j)), std::abs(b(i, j))));
    }
  }
  return worst;
}

/// Random symmetric 0/1 adjacency with a ring so no node is isolated.
inline std::vector<Edge> random_edges(std::size_t n, double p, std::mt19937_64& rng) {
  std::bernoulli_distribution edge(p);
  std::vector<Edge> edges;
  for (std::size_t i = 0; i < n; ++i) {
    edges.push_back({i, (i + 1) % n, 1.0});
    for (std::size_t j = i + 2; j < n; ++j) {
      if (edge(rng)) edges.push_back({i, j, 1.0});
    }
  }
  return edges;
}

inline MultiViewGraph random_graph(std::size_t n, std::size_t views, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto edges = random_edges(n, 0.2, rng);
  std::vector<View> out;
  for (std::size_t a = 0; a < views; ++a) {
    out.emplace_back(n, edges, random_matrix(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d + a), rng));
  }
  return MultiViewGraph(std::move(out));
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("sigil_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace sigil::testing

#pragma once

// Executable checks of the loss identities, gradients, and running time.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sigil/bench.hpp"
#include "sigil/error.hpp"
#include "sigil/losses.hpp"
#include "sigil/model.hpp"
#include "sigil/tensor.hpp"
#include "sigil/trainer.hpp"

namespace sigil {

struct DiagnosticCheck {
  std::string name;
  bool passed = false;
  double measured = 0.0;
  double tolerance = 0.0;
  std::string instance;  // what was run, including the seed
  std::uint64_t seed = 0;
};

struct DiagnosticReport {
  std::vector<DiagnosticCheck> checks;

  bool passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const DiagnosticCheck& c) { return c.passed; });
  }

  void add(DiagnosticCheck check) { checks.push_back(std::move(check)); }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json out = nlohmann::ordered_json::array();
    for (const DiagnosticCheck& c : checks) {
      nlohmann::ordered_json j;
      j["name"] = c.name;
      j["passed"] = c.passed;
      j["measured"] = round_significant(c.measured);
      j["tolerance"] = c.tolerance;
      j["instance"] = c.instance;
      j["seed"] = c.seed;
      out.push_back(std::move(j));
    }
    return nlohmann::ordered_json{{"passed", passed()}, {"checks", out}};
  }
};

namespace detail {

template <typename Rng>
Matrix random_gaussian(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = normal(rng);
  }
  return m;
}

template <typename Rng>
Matrix random_stochastic(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Matrix m = random_gaussian(rows, cols, rng).array().exp();
  for (Eigen::Index i = 0; i < rows; ++i) m.row(i) /= m.row(i).sum();
  return m;
}

inline Matrix unit_rows(Matrix m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) m.row(i).normalize();
  return m;
}

/// Erdős–Rényi adjacency with every node given at least one edge.
template <typename Rng>
SparseMatrix random_adjacency(std::size_t n, double p, Rng& rng) {
  std::bernoulli_distribution edge(p);
  std::vector<Edge> edges;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (edge(rng)) edges.push_back({i, j, 1.0});
    }
    edges.push_back({i, (i + 1) % n, 1.0});
  }
  return View(n, edges, Matrix::Zero(static_cast<Eigen::Index>(n), 1)).adjacency();
}

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Contrastive-loss identities

struct Lemma1Options {
  bool normalize_rows = true;  // false: rows scaled by 2 instead of normalized
  bool perturb_assignment = false;  // negative control: new M every trial
  std::size_t embedding_dim = 8;
};

/// L_c - (align + uniform) must not depend on Ẑ for a fixed similarity map.
inline DiagnosticCheck verify_lemma1(std::size_t n, std::size_t clusters, std::size_t trials, std::uint64_t seed,
                                     const Lemma1Options& options = {}) {
  if (n > 200) throw InvalidArgument("verify_lemma1 is desk scale: n <= 200");
  if (trials < 2) throw InvalidArgument("verify_lemma1 needs >= 2 trials");
  std::mt19937_64 rng(seed);
  const auto rows = static_cast<Eigen::Index>(n);
  const std::vector<SparseMatrix> adjacency{detail::random_adjacency(n, 0.1, rng)};
  Matrix m = detail::random_stochastic(rows, static_cast<Eigen::Index>(clusters), rng);
  const double tau = 1.0;

  std::vector<double> gaps;
  for (std::size_t t = 0; t < trials; ++t) {
    if (options.perturb_assignment) m = detail::random_stochastic(rows, static_cast<Eigen::Index>(clusters), rng);
    const Matrix o = build_similarity_map(m, adjacency, 0.9, Normalization::symmetric).O;
    Matrix z = detail::random_gaussian(rows, static_cast<Eigen::Index>(options.embedding_dim), rng);
    z = options.normalize_rows ? detail::unit_rows(z) : Matrix(2.0 * detail::unit_rows(z));
    const AlignUniform au = align_uniform_decomposition(o, z, tau);
    gaps.push_back(similarity_guided_loss(o, z, tau) - (au.align + au.uniform));
  }
  const double mid = detail::median(gaps);
  double spread = 0.0;
  for (double g : gaps) spread = std::max(spread, std::abs(g - mid) / std::abs(mid));

  DiagnosticCheck check;
  check.name = options.perturb_assignment ? "lemma1_perturbed_assignment" : "lemma1";
  check.tolerance = 1e-8;
  check.measured = spread;
  check.passed = spread < check.tolerance;
  check.seed = seed;
  check.instance = "n=" + std::to_string(n) + " clusters=" + std::to_string(clusters) +
                   " trials=" + std::to_string(trials) + (options.normalize_rows ? " unit rows" : " rows scaled by 2") +
                   (options.perturb_assignment ? " M redrawn per trial" : " fixed M");
  return check;
}

/// Terms of the Laplacian form of L_c for one instance.
struct LaplacianForm {
  double loss = 0.0;             // ||O - ẐẐ^T/tau||_F^2
  double constant = 0.0;         // sum o_ij^2 - 2n/tau
  double laplacian = 0.0;        // (1/tau) sum_ij o_ij ||ẑ_i - ẑ_j||^2
  double trace_laplacian = 0.0;  // (2/tau) Tr(Ẑ^T (I - O) Ẑ)
  double gram = 0.0;             // ||ẐẐ^T||_F^2 / tau^2
};

inline LaplacianForm laplacian_form(const Matrix& o, const Matrix& z, double tau) {
  const auto n = static_cast<double>(o.rows());
  const Matrix gram = z * z.transpose();
  const Vector sq = z.rowwise().squaredNorm();
  LaplacianForm f;
  f.loss = (o - gram / tau).squaredNorm();
  f.constant = o.squaredNorm() - 2.0 * n / tau;
  // ||ẑ_i - ẑ_j||^2 = |ẑ_i|^2 + |ẑ_j|^2 - 2 ẑ_i·ẑ_j
  Matrix distance = (-2.0 * gram).colwise() + sq;
  distance.rowwise() += sq.transpose();
  f.laplacian = o.cwiseProduct(distance).sum() / tau;
  const Matrix laplacian = Matrix::Identity(o.rows(), o.cols()) - o;
  f.trace_laplacian = 2.0 / tau * (z.transpose() * laplacian * z).trace();
  f.gram = gram.squaredNorm() / (tau * tau);
  return f;
}

/// L_c = C + Laplacian term + gram term, with the Laplacian quadratic form
/// written pairwise. The pairwise form equals (2/tau) Tr(Ẑ^T L Ẑ) only when
/// the entries of O sum to n, which row normalization guarantees.
inline DiagnosticCheck verify_lemma2(std::size_t n, std::size_t trials, double tau, std::uint64_t seed,
                                     Normalization normalization = Normalization::row) {
  if (n > 200) throw InvalidArgument("verify_lemma2 is desk scale: n <= 200");
  std::mt19937_64 rng(seed);
  const auto rows = static_cast<Eigen::Index>(n);
  double worst = 0.0;
  double worst_trace = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    const std::vector<SparseMatrix> adjacency{detail::random_adjacency(n, 0.15, rng)};
    const Matrix m = detail::random_stochastic(rows, 4, rng);
    const Matrix o = build_similarity_map(m, adjacency, 0.9, normalization).O;
    const Matrix z = detail::unit_rows(detail::random_gaussian(rows, 6, rng));
    const LaplacianForm f = laplacian_form(o, z, tau);
    worst = std::max(worst, std::abs(f.loss - (f.constant + f.laplacian + f.gram)));
    worst_trace = std::max(worst_trace, std::abs(f.loss - (f.constant + f.trace_laplacian + f.gram)));
  }
  DiagnosticCheck check;
  check.name = normalization == Normalization::row ? "lemma2" : "lemma2_symmetric_normalization";
  check.tolerance = 1e-8;
  check.measured = worst;
  check.passed = worst < check.tolerance;
  check.seed = seed;
  check.instance = "n=" + std::to_string(n) + " trials=" + std::to_string(trials) + " tau=" +
                   format_significant(tau) + " normalization=" + to_string(normalization) +
                   " trace-form residual=" + format_significant(worst_trace, 3);
  return check;
}

// ---------------------------------------------------------------------------
// Gradient checks

struct GradientCheckResult {
  bool passed = true;
  double worst_relative = 0.0;  // excused entries count as 0
  double worst_absolute = 0.0;
  std::string worst_parameter;
  Eigen::Index worst_row = 0;
  Eigen::Index worst_col = 0;
  std::size_t entries = 0;
  std::size_t below_floor = 0;
};

struct NamedMatrix {
  std::string name;
  Matrix value;
};

using Objective = std::function<ad::Var(ad::Tape&, std::span<const ad::Var>)>;

/// Autodiff gradient of `objective` against central differences, entry by entry.
inline GradientCheckResult check_gradients(std::vector<NamedMatrix> params, const Objective& objective,
                                           double h = 1e-5, double relative_tolerance = 1e-4,
                                           double absolute_floor = 1e-7) {
  std::vector<Matrix> analytic;
  {
    ad::Tape tape;
    std::vector<ad::Var> leaves;
    for (const NamedMatrix& p : params) leaves.push_back(tape.parameter(p.value));
    const ad::Gradients grads = tape.backward(objective(tape, leaves));
    for (const ad::Var& v : leaves) analytic.push_back(grads[v]);
  }
  auto evaluate = [&]() {
    ad::Tape tape;
    std::vector<ad::Var> leaves;
    for (const NamedMatrix& p : params) leaves.push_back(tape.constant(p.value));
    return objective(tape, leaves).scalar();
  };

  GradientCheckResult result;
  double worst_score = -1.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Matrix& value = params[k].value;
    for (Eigen::Index i = 0; i < value.rows(); ++i) {
      for (Eigen::Index j = 0; j < value.cols(); ++j) {
        const double saved = value(i, j);
        const double a = analytic[k](i, j);
        // Relative error of the central difference with step `step`. A miss
        // smaller than the absolute floor or the rounding noise of the quotient
        // is not measurable and is excused (reported as 0, counted in below_floor).
        auto compare = [&](double step, double& abs_err, bool& excused) {
          value(i, j) = saved + step;
          const double up = evaluate();
          value(i, j) = saved - step;
          const double down = evaluate();
          value(i, j) = saved;
          const double numeric = (up - down) / (2.0 * step);
          abs_err = std::abs(a - numeric);
          const double scale = std::max(std::abs(a), std::abs(numeric));
          const double rel = scale > 0.0 ? abs_err / scale : 0.0;
          const double noise =
              4.0 * std::numeric_limits<double>::epsilon() * std::max(std::abs(up), std::abs(down)) / step;
          excused = rel >= relative_tolerance && abs_err <= std::max(absolute_floor, noise);
          return excused ? 0.0 : rel;
        };
        double abs_err = 0.0;
        bool excused = false;
        double rel_err = compare(h, abs_err, excused);
        // A ReLU kink inside [x - h, x + h] breaks the central difference; a
        // wrong backward rule disagrees at every step, so retry once closer in.
        if (rel_err >= relative_tolerance) {
          double retry_abs = 0.0;
          bool retry_excused = false;
          const double retry = compare(h / 10.0, retry_abs, retry_excused);
          if (retry < rel_err) {
            rel_err = retry;
            abs_err = retry_abs;
            excused = retry_excused;
          }
        }
        result.worst_absolute = std::max(result.worst_absolute, abs_err);
        ++result.entries;
        if (excused) ++result.below_floor;
        if (rel_err > worst_score) {
          worst_score = rel_err;
          result.worst_relative = rel_err;
          result.worst_parameter = params[k].name;
          result.worst_row = i;
          result.worst_col = j;
        }
        if (rel_err >= relative_tolerance) result.passed = false;
      }
    }
  }
  return result;
}

struct GradientAuditOptions {
  std::size_t nodes = 20;
  std::size_t views = 2;
  std::size_t feature_dim = 4;
  std::size_t hidden = 6;
  std::vector<std::size_t> clusters{3};
  TrainConfig config;  // loss settings; model widths come from the fields above
  /// Applied to J before differentiation; test fixtures use it to plant a
  /// broken backward rule.
  std::function<ad::Var(ad::Var)> wrap_objective;
};

/// Every parameter gradient of J on a tiny synthetic instance against
/// central differences. In the default detached mode the contrastive target
/// is frozen at its value for the base parameters, as in training.
inline DiagnosticCheck gradient_audit(const GradientAuditOptions& options, std::uint64_t seed) {
  if (options.nodes > 30) throw InvalidArgument("gradient_audit needs n <= 30");
  SyntheticSpec spec;
  spec.n = options.nodes;
  spec.communities = 2;
  spec.intra_prob = 0.4;
  spec.inter_prob = 0.05;
  spec.feature_dim = options.feature_dim;
  spec.separation = 2.0;
  spec.views = options.views;
  spec.mask_prob = 0.05;
  spec.seed = seed;
  const MultiViewGraph graph = generate_synthetic(spec);
  const GraphInputs inputs(graph);

  TrainConfig config = options.config;
  config.hidden = options.hidden;
  config.clusters = options.clusters;
  config.layers = options.clusters.size();
  config.pair_sample = std::max<std::size_t>(config.pair_sample, 2);
  const SigilModel model = initialize_model(config.model_spec(graph), seed);

  std::mt19937_64 rng(seed ^ 0x5bd1e995ULL);
  const std::vector<std::size_t> sample = sample_nodes(graph.num_nodes(), config.pair_sample, rng);
  std::optional<ContrastiveTarget> frozen;
  if (!config.differentiable_similarity && config.loss_variant != LossVariant::none) {
    ad::Tape tape;
    const ForwardPass pass = forward(tape, bind(tape, model, false), inputs);
    frozen = contrastive_target(pass.encoded.composed.value(), inputs, config, sample);
  }

  std::vector<NamedMatrix> params;
  for_each_parameter(model, [&](const std::string& name, const Matrix& m, bool) { params.push_back({name, m}); });
  const Objective objective = [&](ad::Tape& tape, std::span<const ad::Var> leaves) {
    SigilModel shell = model;
    BoundModel bound = bind(tape, shell, false);
    // Swap the bound leaves for the checker's leaves, in canonical order.
    std::size_t k = 0;
    auto take = [&]() { return leaves[k++]; };
    for (std::size_t a = 0; a < bound.spec.num_views(); ++a) {
      for (std::size_t l = 0; l < bound.spec.num_layers(); ++l) {
        bound.encoders[a][l].weight = take();
        bound.encoders[a][l].bias = take();
        bound.pool_projections[a][l] = take();
      }
    }
    for (auto& pool : bound.pools) {
      pool.weight = take();
      pool.bias = take();
    }
    for (std::size_t a = 0; a < bound.spec.num_views(); ++a) {
      for (auto& decoder : bound.decoders[a]) {
        decoder.weight = take();
        decoder.bias = take();
      }
    }
    for (auto& unpool : bound.unpools) {
      unpool.weight = take();
      unpool.bias = take();
    }
    const ForwardPass pass = forward(tape, bound, inputs);
    ad::Var j = build_objective(tape, pass, inputs, config, sample, frozen ? &*frozen : nullptr).objective;
    return options.wrap_objective ? options.wrap_objective(j) : j;
  };
  const GradientCheckResult result = check_gradients(std::move(params), objective);

  DiagnosticCheck check;
  check.name = "gradient_audit";
  check.tolerance = 1e-4;
  check.measured = result.worst_relative;
  check.passed = result.passed;
  check.seed = seed;
  check.instance = "n=" + std::to_string(options.nodes) + " views=" + std::to_string(options.views) +
                   " layers=" + std::to_string(config.layers) + " lambda=" + format_significant(config.lambda) +
                   " variant=" + to_string(config.loss_variant) +
                   (config.differentiable_similarity ? " differentiable O" : " detached O") +
                   " worst=" + result.worst_parameter + "[" + std::to_string(result.worst_row) + "," +
                   std::to_string(result.worst_col) + "] floored=" + std::to_string(result.below_floor) + "/" +
                   std::to_string(result.entries);
  return check;
}

// ---------------------------------------------------------------------------
// Timing

struct ComplexityProbeOptions {
  std::vector<std::size_t> sizes{250, 500, 1000, 2000};
  std::optional<std::size_t> pair_sample;  // unset: full n x n similarity map
  double average_degree = 10.0;
  std::size_t communities = 3;
  std::size_t feature_dim = 16;
  std::size_t hidden = 100;
  std::vector<std::size_t> clusters{3};
  std::size_t repetitions = 5;
  std::size_t warmup = 1;
  double slope_low = 1.6;
  double slope_high = 2.4;
  std::uint64_t seed = 0;
};

struct ComplexityMeasurement {
  std::size_t n = 0;
  double seconds = 0.0;  // median per-iteration time
};

struct ComplexityResult {
  std::vector<ComplexityMeasurement> measurements;
  double slope = 0.0;
  DiagnosticCheck check;
};

/// Least-squares slope of log(y) against log(x).
inline double log_log_slope(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw InvalidArgument("slope fit needs >= 2 points");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(y.size());
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

/// Synthetic graph of size n with the expected degree held fixed.
inline MultiViewGraph probe_graph(std::size_t n, const ComplexityProbeOptions& options) {
  SyntheticSpec spec;
  spec.n = n;
  spec.communities = options.communities;
  const double block = static_cast<double>(n) / static_cast<double>(options.communities);
  // Three quarters of the expected degree inside the community.
  spec.intra_prob = std::min(1.0, 0.75 * options.average_degree / block);
  spec.inter_prob = std::min(1.0, 0.25 * options.average_degree / (static_cast<double>(n) - block));
  spec.feature_dim = options.feature_dim;
  spec.views = 2;
  spec.seed = options.seed;
  return generate_synthetic(spec);
}

/// Median wall time of one training iteration.
inline double time_iteration(const MultiViewGraph& graph, const TrainConfig& config, std::size_t repetitions,
                             std::size_t warmup) {
  TrainConfig c = config;
  c.iterations = warmup + repetitions;
  c.log_interval = c.iterations;
  TrainSession session(graph, c);
  for (std::size_t w = 0; w < warmup; ++w) session.step();
  std::vector<double> times;
  for (std::size_t r = 0; r < repetitions; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    session.step();
    times.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  return detail::median(times);
}

inline TrainConfig probe_config(const ComplexityProbeOptions& options, std::size_t n) {
  TrainConfig config;
  config.hidden = options.hidden;
  config.clusters = options.clusters;
  config.layers = options.clusters.size();
  config.pair_sample = options.pair_sample ? *options.pair_sample : n;
  config.seed = options.seed;
  return config;
}

inline ComplexityResult complexity_probe(const ComplexityProbeOptions& options) {
  if (!std::is_sorted(options.sizes.begin(), options.sizes.end()) || options.sizes.size() < 2) {
    throw InvalidArgument("complexity probe needs >= 2 ascending sizes");
  }
  ComplexityResult result;
  std::vector<double> xs, ys;
  for (std::size_t n : options.sizes) {
    const MultiViewGraph graph = probe_graph(n, options);
    const double seconds = time_iteration(graph, probe_config(options, n), options.repetitions, options.warmup);
    result.measurements.push_back({n, seconds});
    xs.push_back(static_cast<double>(n));
    ys.push_back(seconds);
  }
  result.slope = log_log_slope(xs, ys);
  DiagnosticCheck& check = result.check;
  check.name = options.pair_sample ? "complexity_sampled" : "complexity_full";
  check.measured = result.slope;
  check.tolerance = options.slope_high - options.slope_low;
  check.passed = result.slope >= options.slope_low && result.slope <= options.slope_high;
  check.seed = options.seed;
  std::string sizes;
  for (const ComplexityMeasurement& m : result.measurements) {
    sizes += " n=" + std::to_string(m.n) + ":" + format_significant(m.seconds, 4) + "s";
  }
  check.instance = "slope window [" + format_significant(options.slope_low) + ", " +
                   format_significant(options.slope_high) + "]" +
                   (options.pair_sample ? " p=" + std::to_string(*options.pair_sample) : " full O") + sizes;
  return result;
}

/// Per-iteration time ratio of a model with one extra pooling layer.
inline DiagnosticCheck layer_scaling_probe(std::size_t n, const ComplexityProbeOptions& options) {
  const MultiViewGraph graph = probe_graph(n, options);
  TrainConfig shallow = probe_config(options, n);
  TrainConfig deep = shallow;
  deep.clusters.push_back(std::max<std::size_t>(2, deep.clusters.back() / 2));
  if (deep.clusters.back() >= deep.clusters[deep.clusters.size() - 2]) deep.clusters.back() = 2;
  deep.layers = deep.clusters.size();
  const double t1 = time_iteration(graph, shallow, options.repetitions, options.warmup);
  const double t2 = time_iteration(graph, deep, options.repetitions, options.warmup);
  DiagnosticCheck check;
  check.name = "complexity_layers";
  check.measured = t2 / t1;
  check.tolerance = 2.0;
  check.passed = check.measured >= 1.0 && check.measured <= 3.0;
  check.seed = options.seed;
  check.instance = "n=" + std::to_string(n) + " ratio window [1, 3] L=" + std::to_string(shallow.layers) + ":" +
                   format_significant(t1, 4) + "s L=" + std::to_string(deep.layers) + ":" + format_significant(t2, 4) +
                   "s";
  return check;
}

}  // namespace sigil

#pragma once

// Full-graph training: forward, J = L_r + lambda L_c, backward, Adam.

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "sigil/error.hpp"
#include "sigil/graph.hpp"
#include "sigil/keyvalue.hpp"
#include "sigil/losses.hpp"
#include "sigil/model.hpp"
#include "sigil/scoring.hpp"
#include "sigil/tensor.hpp"

namespace sigil {

struct TrainConfig {
  std::size_t iterations = 10000;
  double learning_rate = 1e-3;
  double weight_decay = 5e-4;
  std::size_t hidden = 100;
  std::size_t layers = 1;
  std::vector<std::size_t> clusters{10};
  bool augment_adjacency = true;
  double lambda = 10.0;
  double alpha = 0.9;
  double beta = 0.0;
  double tau = 1.0;
  std::size_t pair_sample = 512;
  std::uint64_t seed = 0;
  LossVariant loss_variant = LossVariant::similarity_guided;
  Normalization normalization = Normalization::symmetric;
  bool differentiable_similarity = false;
  std::size_t log_interval = 100;
  std::size_t checkpoint_interval = 0;  // 0: only the final checkpoint
  ScoreNormalizer score_normalizer = ScoreNormalizer::zscore;
  std::optional<double> ridge;
  bool min_per_view = false;

  LossConfig loss_config() const { return {lambda, alpha, tau, pair_sample, loss_variant}; }

  ScoreConfig score_config() const { return {beta, score_normalizer, {ridge, min_per_view}}; }

  ModelSpec model_spec(const MultiViewGraph& graph) const {
    return ModelSpec{graph.num_nodes(), graph.feature_dims(), hidden, clusters, augment_adjacency};
  }

  void validate() const {
    if (iterations < 1) throw InvalidArgument("iterations must be >= 1");
    if (!(learning_rate > 0.0)) throw InvalidArgument("learning_rate must be > 0");
    if (!(weight_decay >= 0.0)) throw InvalidArgument("weight_decay must be >= 0");
    if (hidden < 1) throw InvalidArgument("hidden must be >= 1");
    if (layers < 1) throw InvalidArgument("layers must be >= 1");
    if (clusters.size() != layers) {
      throw InvalidArgument("clusters lists " + std::to_string(clusters.size()) + " counts for " +
                            std::to_string(layers) + " layers");
    }
    if (!(beta >= 0.0 && beta <= 1.0)) throw InvalidArgument("beta must lie in [0, 1]");
    if (log_interval < 1) throw InvalidArgument("log_interval must be >= 1");
    if (ridge && !(*ridge >= 0.0)) throw InvalidArgument("ridge must be >= 0");
    loss_config().validate();
  }
};

// ---------------------------------------------------------------------------
// Config keys (file, environment, manifest)

namespace detail {

inline bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw InvalidArgument(key + ": expected true or false, got '" + value + "'");
}

template <typename T>
T parse_config_number(const std::string& key, const std::string& value) {
  try {
    return parse_number<T>(trim(value), key);
  } catch (const IoError&) {
    throw InvalidArgument(key + ": cannot parse '" + value + "'");
  }
}

inline std::vector<std::size_t> parse_size_list(const std::string& key, const std::string& value) {
  std::vector<std::size_t> out;
  std::stringstream in(value);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(parse_config_number<std::size_t>(key, item));
  if (out.empty()) throw InvalidArgument(key + ": empty list");
  return out;
}

inline std::string join_sizes(const std::vector<std::size_t>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) out += (i ? "," : "") + std::to_string(values[i]);
  return out;
}

}  // namespace detail

inline const std::vector<std::string>& train_config_keys() {
  static const std::vector<std::string> keys{
      "iterations",  "learning_rate", "weight_decay",     "hidden",       "layers",       "clusters",
      "augment_adjacency", "lambda",  "alpha",            "beta",         "tau",          "pair_sample",
      "seed",        "loss_variant",  "normalization",    "differentiable_similarity",    "log_interval",
      "checkpoint_interval", "score_normalizer", "ridge", "min_per_view"};
  return keys;
}

/// Returns false for unknown keys.
inline bool set_config_value(TrainConfig& c, const std::string& key, const std::string& value) {
  using detail::parse_bool;
  using detail::parse_config_number;
  if (key == "iterations") c.iterations = parse_config_number<std::size_t>(key, value);
  else if (key == "learning_rate") c.learning_rate = parse_config_number<double>(key, value);
  else if (key == "weight_decay") c.weight_decay = parse_config_number<double>(key, value);
  else if (key == "hidden") c.hidden = parse_config_number<std::size_t>(key, value);
  else if (key == "layers") c.layers = parse_config_number<std::size_t>(key, value);
  else if (key == "clusters") c.clusters = detail::parse_size_list(key, value);
  else if (key == "augment_adjacency") c.augment_adjacency = parse_bool(key, value);
  else if (key == "lambda") c.lambda = parse_config_number<double>(key, value);
  else if (key == "alpha") c.alpha = parse_config_number<double>(key, value);
  else if (key == "beta") c.beta = parse_config_number<double>(key, value);
  else if (key == "tau") c.tau = parse_config_number<double>(key, value);
  else if (key == "pair_sample") c.pair_sample = parse_config_number<std::size_t>(key, value);
  else if (key == "seed") c.seed = parse_config_number<std::uint64_t>(key, value);
  else if (key == "loss_variant") c.loss_variant = parse_loss_variant(value);
  else if (key == "normalization") c.normalization = parse_normalization(value);
  else if (key == "differentiable_similarity") c.differentiable_similarity = parse_bool(key, value);
  else if (key == "log_interval") c.log_interval = parse_config_number<std::size_t>(key, value);
  else if (key == "checkpoint_interval") c.checkpoint_interval = parse_config_number<std::size_t>(key, value);
  else if (key == "score_normalizer") c.score_normalizer = parse_score_normalizer(value);
  else if (key == "ridge") c.ridge = value == "auto" ? std::nullopt : std::optional(parse_config_number<double>(key, value));
  else if (key == "min_per_view") c.min_per_view = parse_bool(key, value);
  else return false;
  return true;
}

inline void apply_key_values(TrainConfig& c, const KeyValues& entries, const std::string& source) {
  for (const auto& [key, value] : entries) {
    if (!set_config_value(c, key, value)) throw InvalidArgument(source + ": unknown config key '" + key + "'");
  }
}

inline std::string env_name(const std::string& key) {
  std::string out = "SIGIL_";
  for (char ch : key) out += static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  return out;
}

/// Applies SIGIL_<KEY> variables. `lookup` defaults to std::getenv.
inline void apply_environment(TrainConfig& c,
                              const std::function<const char*(const char*)>& lookup = [](const char* n) {
                                return std::getenv(n);
                              }) {
  for (const std::string& key : train_config_keys()) {
    if (const char* value = lookup(env_name(key).c_str())) set_config_value(c, key, value);
  }
}

/// Every key with its resolved value, in documentation order.
inline KeyValues config_to_key_values(const TrainConfig& c) {
  return {
      {"iterations", std::to_string(c.iterations)},
      {"learning_rate", detail::format_exact(c.learning_rate)},
      {"weight_decay", detail::format_exact(c.weight_decay)},
      {"hidden", std::to_string(c.hidden)},
      {"layers", std::to_string(c.layers)},
      {"clusters", detail::join_sizes(c.clusters)},
      {"augment_adjacency", c.augment_adjacency ? "true" : "false"},
      {"lambda", detail::format_exact(c.lambda)},
      {"alpha", detail::format_exact(c.alpha)},
      {"beta", detail::format_exact(c.beta)},
      {"tau", detail::format_exact(c.tau)},
      {"pair_sample", std::to_string(c.pair_sample)},
      {"seed", std::to_string(c.seed)},
      {"loss_variant", to_string(c.loss_variant)},
      {"normalization", to_string(c.normalization)},
      {"differentiable_similarity", c.differentiable_similarity ? "true" : "false"},
      {"log_interval", std::to_string(c.log_interval)},
      {"checkpoint_interval", std::to_string(c.checkpoint_interval)},
      {"score_normalizer", to_string(c.score_normalizer)},
      {"ridge", c.ridge ? detail::format_exact(*c.ridge) : "auto"},
      {"min_per_view", c.min_per_view ? "true" : "false"},
  };
}

// ---------------------------------------------------------------------------
// Objective

/// Contrastive target held fixed for one backward pass.
struct ContrastiveTarget {
  Matrix similarity;                  // O (or M M^T for plain_l2) on the sampled nodes
  std::vector<std::size_t> clusters;  // hard clusters of the sampled nodes (clustering_l1)
};

inline ContrastiveTarget contrastive_target(const Matrix& assignment, const GraphInputs& inputs,
                                            const TrainConfig& config, std::span<const std::size_t> sample) {
  ContrastiveTarget target;
  switch (config.loss_variant) {
    case LossVariant::similarity_guided:
      target.similarity =
          build_similarity_submap(assignment, inputs.adjacency, config.alpha, config.normalization, sample).O;
      break;
    case LossVariant::plain_l2:
      target.similarity = assignment_similarity(assignment, sample);
      break;
    case LossVariant::clustering_l1: {
      const std::vector<std::size_t> all = hard_clusters(assignment);
      for (std::size_t i : sample) target.clusters.push_back(all[i]);
      break;
    }
    case LossVariant::none:
      break;
  }
  return target;
}

struct ObjectiveTerms {
  ad::Var objective;
  ad::Var reconstruction;
  std::optional<ad::Var> contrastive;  // unset for the `none` variant or a degenerate L_1 sample
};

namespace detail {

inline ad::Var gather_square(ad::Var m, std::span<const std::size_t> sample) {
  return ad::transpose(ad::gather_rows(ad::transpose(ad::gather_rows(m, sample)), sample));
}

inline bool single_cluster(std::span<const std::size_t> clusters) {
  for (std::size_t c : clusters) {
    if (c != clusters.front()) return false;
  }
  return true;
}

}  // namespace detail

/// Builds J on the tape from a forward pass. With `fixed` unset the target is
/// derived from the pass: detached from M unless differentiable_similarity.
inline ObjectiveTerms build_objective(ad::Tape& tape, const ForwardPass& pass, const GraphInputs& inputs,
                                      const TrainConfig& config, std::span<const std::size_t> sample,
                                      const ContrastiveTarget* fixed = nullptr) {
  std::vector<ad::Var> features;
  for (const Matrix& x : inputs.features) features.push_back(tape.constant(x));
  ObjectiveTerms terms;
  terms.reconstruction = reconstruction_loss(features, pass.decoded.reconstructions);
  terms.objective = terms.reconstruction;
  if (config.loss_variant == LossVariant::none) return terms;

  const std::size_t views = inputs.num_views();
  ad::Var aggregate = pass.encoded.embeddings[0][0];
  for (std::size_t a = 1; a < views; ++a) aggregate = ad::add(aggregate, pass.encoded.embeddings[a][0]);
  const bool full = sample.size() == inputs.num_nodes();
  ad::Var zhat = ad::row_normalize(full ? aggregate : ad::gather_rows(aggregate, sample));

  const ad::Var m = pass.encoded.composed;
  ad::Var contrastive;
  if (config.loss_variant == LossVariant::clustering_l1) {
    const ContrastiveTarget derived = fixed ? ContrastiveTarget{} : contrastive_target(m.value(), inputs, config, sample);
    const std::vector<std::size_t>& clusters = fixed ? fixed->clusters : derived.clusters;
    if (detail::single_cluster(clusters)) return terms;
    contrastive = clustering_contrastive_loss(zhat, clusters, config.tau);
  } else {
    ad::Var target;
    if (fixed) {
      target = tape.constant(fixed->similarity);
    } else if (config.differentiable_similarity) {
      if (config.loss_variant == LossVariant::similarity_guided) {
        ad::Var o = similarity_map(m, inputs.adjacency, config.alpha, config.normalization);
        target = full ? o : detail::gather_square(o, sample);
      } else {
        ad::Var rows = full ? m : ad::gather_rows(m, sample);
        target = ad::matmul(rows, ad::transpose(rows));
      }
    } else {
      target = tape.constant(contrastive_target(m.value(), inputs, config, sample).similarity);
    }
    contrastive = similarity_guided_loss(target, zhat, config.tau);
  }
  terms.contrastive = contrastive;
  terms.objective = total_objective(terms.reconstruction, contrastive, config.lambda);
  return terms;
}

// ---------------------------------------------------------------------------
// Training log

struct TrainLogRecord {
  std::size_t iteration = 0;
  double objective = 0.0;
  double reconstruction = 0.0;
  double contrastive = 0.0;
  double gradient_norm = 0.0;
  double wall_seconds = 0.0;  // since the start of training
};

struct TrainLog {
  std::vector<TrainLogRecord> records;
};

/// Deterministic part of the log: everything except wall time.
inline void write_train_log(const std::filesystem::path& path, const TrainLog& log) {
  std::ofstream out = detail::open_output(path);
  out << "# iteration objective reconstruction contrastive gradient_norm\n";
  for (const TrainLogRecord& r : log.records) {
    out << r.iteration << ' ' << detail::format_exact(r.objective) << ' ' << detail::format_exact(r.reconstruction)
        << ' ' << detail::format_exact(r.contrastive) << ' ' << detail::format_exact(r.gradient_norm) << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

inline void write_timings(const std::filesystem::path& path, const TrainLog& log) {
  std::ofstream out = detail::open_output(path);
  out << "# iteration wall_seconds\n";
  for (const TrainLogRecord& r : log.records) out << r.iteration << ' ' << detail::format_exact(r.wall_seconds) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

// ---------------------------------------------------------------------------
// Checkpoints: versioned text, hex floats for bit-exact round trips.

inline constexpr int checkpoint_version = 1;

namespace detail {

inline std::string hex_double(double value) {
  char buffer[64];
  const auto [ptr, ec] = std::to_chars(buffer, buffer + sizeof buffer, value, std::chars_format::hex);
  return std::string(buffer, ptr);
}

inline double parse_hex_double(std::string_view token) {
  double value = 0.0;
  const char* begin = token.data();
  const char* end = token.data() + token.size();
  bool negative = false;
  if (begin != end && *begin == '-') {
    negative = true;
    ++begin;
  }
  const auto [ptr, ec] = std::from_chars(begin, end, value, std::chars_format::hex);
  if (ec != std::errc() || ptr != end) throw CheckpointError("checkpoint: bad number '" + std::string(token) + "'");
  return negative ? -value : value;
}

inline std::string spec_line(const ModelSpec& spec) {
  std::string out = "nodes " + std::to_string(spec.num_nodes) + " feature_dims " + join_sizes(spec.feature_dims) +
                    " hidden " + std::to_string(spec.hidden) + " clusters " + join_sizes(spec.cluster_counts) +
                    " augment " + (spec.augment_adjacency ? "1" : "0");
  return out;
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const SigilModel& model) {
  // Written beside the target and renamed so an interrupted write never
  // replaces the previous checkpoint.
  std::filesystem::path temp = path;
  temp += ".partial";
  {
    std::ofstream out = detail::open_output(temp);
    out << "sigil-checkpoint " << checkpoint_version << '\n';
    out << "architecture " << detail::spec_line(model.spec) << '\n';
    out << "parameters " << parameter_count(model) << '\n';
    for_each_parameter(model, [&](const std::string& name, const Matrix& m, bool) {
      out << "tensor " << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
      for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) out << (j ? " " : "") << detail::hex_double(m(i, j));
        out << '\n';
      }
    });
    out << "end\n";
    if (!out) throw IoError("failed writing " + temp.string());
  }
  std::filesystem::rename(temp, path);
}

/// Reads a checkpoint; with `expected` set the architecture must match it.
inline SigilModel load_checkpoint(const std::filesystem::path& path,
                                  const std::optional<ModelSpec>& expected = std::nullopt) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  auto next_line = [&](const char* what) -> const std::string& {
    if (!std::getline(in, line)) throw CheckpointError(path.string() + ": truncated before " + what);
    return line;
  };

  std::istringstream header(next_line("header"));
  std::string magic;
  int version = 0;
  header >> magic >> version;
  if (magic != "sigil-checkpoint") throw CheckpointError(path.string() + ": not a checkpoint file");
  if (version != checkpoint_version) {
    throw CheckpointError(path.string() + ": checkpoint version " + std::to_string(version) + ", expected " +
                          std::to_string(checkpoint_version));
  }

  ModelSpec spec;
  {
    const auto fields = detail::split_fields(next_line("architecture"));
    if (fields.size() != 11 || fields[0] != "architecture" || fields[1] != "nodes" || fields[3] != "feature_dims" ||
        fields[5] != "hidden" || fields[7] != "clusters" || fields[9] != "augment") {
      throw CheckpointError(path.string() + ": malformed architecture line");
    }
    try {
      spec.num_nodes = detail::parse_number<std::size_t>(fields[2], path.string());
      spec.feature_dims = detail::parse_size_list("feature_dims", std::string(fields[4]));
      spec.hidden = detail::parse_number<std::size_t>(fields[6], path.string());
      spec.cluster_counts = detail::parse_size_list("clusters", std::string(fields[8]));
      spec.augment_adjacency = fields[10] == "1";
      spec.validate();
    } catch (const CheckpointError&) {
      throw;
    } catch (const Error& e) {
      throw CheckpointError(path.string() + ": bad architecture: " + e.what());
    }
  }
  if (expected && !(*expected == spec)) {
    throw CheckpointError(path.string() + ": architecture mismatch: checkpoint has [" + detail::spec_line(spec) +
                          "], expected [" + detail::spec_line(*expected) + "]");
  }

  SigilModel model = initialize_model(spec, 0);
  next_line("parameter count");
  if (line != "parameters " + std::to_string(parameter_count(model))) {
    throw CheckpointError(path.string() + ": parameter count does not match the architecture");
  }
  for_each_parameter(model, [&](const std::string& name, Matrix& m, bool) {
    const std::string expected_header =
        "tensor " + name + " " + std::to_string(m.rows()) + " " + std::to_string(m.cols());
    if (next_line(name.c_str()) != expected_header) {
      throw CheckpointError(path.string() + ": expected '" + expected_header + "', got '" + line + "'");
    }
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      const auto fields = detail::split_fields(next_line(name.c_str()));
      if (fields.size() != static_cast<std::size_t>(m.cols())) {
        throw CheckpointError(path.string() + ": row " + std::to_string(i) + " of " + name + " has " +
                              std::to_string(fields.size()) + " values");
      }
      for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = detail::parse_hex_double(fields[static_cast<std::size_t>(j)]);
    }
  });
  if (next_line("end marker") != "end") throw CheckpointError(path.string() + ": missing end marker");
  return model;
}

/// Order-sensitive FNV-1a over the bit patterns of every parameter.
inline std::uint64_t parameter_checksum(const SigilModel& model) {
  std::uint64_t hash = 1469598103934665603ULL;
  for_each_parameter(model, [&](const std::string&, const Matrix& m, bool) {
    for (Eigen::Index k = 0; k < m.size(); ++k) {
      std::uint64_t bits;
      const double v = m.data()[k];
      std::memcpy(&bits, &v, sizeof bits);
      for (int b = 0; b < 8; ++b) {
        hash ^= (bits >> (8 * b)) & 0xffU;
        hash *= 1099511628211ULL;
      }
    }
  });
  return hash;
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainHooks {
  /// Called after every forward pass, before the parameter update.
  std::function<void(std::size_t iteration, const ForwardPass&)> on_forward;
  /// Written every checkpoint_interval iterations (when non-zero) and at the end.
  std::optional<std::filesystem::path> checkpoint_path;
};

struct TrainResult {
  SigilModel model;
  TrainLog log;
};

namespace detail {

inline void check_row_stochastic(const Matrix& m, const std::string& what, std::size_t iteration) {
  const double worst = (m.rowwise().sum().array() - 1.0).abs().maxCoeff();
  if (!(worst <= 1e-10)) {
    throw NumericalError("iteration " + std::to_string(iteration) + ": " + what + " rows deviate from 1 by " +
                         std::to_string(worst));
  }
}

}  // namespace detail

/// One model being trained on one graph. `train` drives it to completion;
/// callers that need per-iteration control (timing probes) use step().
class TrainSession {
 public:
  TrainSession(const MultiViewGraph& graph, const TrainConfig& config) : config_(config), inputs_(graph) {
    config_.validate();
    for (const View& v : graph.views()) {
      if (!v.features().allFinite()) throw InvalidArgument("graph features must be finite");
    }
    std::mt19937_64 seeds(config_.seed);
    const std::uint64_t init_seed = seeds();
    sample_rng_.seed(seeds());
    model_ = initialize_model(config_.model_spec(graph), init_seed);
    adam_.config = {config_.learning_rate, 0.9, 0.999, 1e-8, config_.weight_decay};
    params_ = parameters(model_);
    start_ = std::chrono::steady_clock::now();
  }

  TrainSession(const TrainSession&) = delete;
  TrainSession& operator=(const TrainSession&) = delete;

  /// Runs one iteration and returns its record (wall time since construction).
  TrainLogRecord step(const std::function<void(std::size_t, const ForwardPass&)>& on_forward = {}) {
    const std::size_t it = iteration_;
    ad::Tape tape;
    const BoundModel bound = bind(tape, model_, true);
    ObjectiveTerms terms;
    ForwardPass pass;
    try {
      pass = forward(tape, bound, inputs_);
      const std::vector<std::size_t> sample = config_.loss_variant == LossVariant::none
                                                  ? std::vector<std::size_t>{}
                                                  : sample_nodes(inputs_.num_nodes(), config_.pair_sample, sample_rng_);
      terms = build_objective(tape, pass, inputs_, config_, sample);
    } catch (const NumericalError& e) {
      throw NumericalError("training diverged at iteration " + std::to_string(it) + ": " + e.what());
    }
    if (on_forward) on_forward(it, pass);

    const ad::Gradients grads = tape.backward(terms.objective);
    std::vector<Matrix> grad_values;
    double grad_sq = 0.0;
    for (const ad::Var& p : bound.flat) {
      grad_values.push_back(grads[p]);
      grad_sq += grad_values.back().squaredNorm();
    }
    if (it % config_.log_interval == 0 || it + 1 == config_.iterations) {
      for (const ad::Var& s : pass.encoded.assignments) detail::check_row_stochastic(s.value(), "S", it);
      for (const ad::Var& s : pass.decoded.assignments) detail::check_row_stochastic(s.value(), "S_dec", it);
      detail::check_row_stochastic(pass.encoded.composed.value(), "M", it);
    }
    try {
      ad::adam_step(adam_, params_, grad_values);
    } catch (const NumericalError& e) {
      throw NumericalError("training diverged at iteration " + std::to_string(it) + ": " + e.what());
    }
    ++iteration_;
    return {it,
            terms.objective.scalar(),
            terms.reconstruction.scalar(),
            terms.contrastive ? terms.contrastive->scalar() : 0.0,
            std::sqrt(grad_sq),
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count()};
  }

  std::size_t iteration() const { return iteration_; }
  const SigilModel& model() const { return model_; }
  SigilModel& model() { return model_; }
  const TrainConfig& config() const { return config_; }

 private:
  TrainConfig config_;
  GraphInputs inputs_;
  SigilModel model_;
  ad::AdamState adam_;
  std::vector<ad::ParamRef> params_;
  std::mt19937_64 sample_rng_;
  std::size_t iteration_ = 0;
  std::chrono::steady_clock::time_point start_;
};

inline TrainResult train(const MultiViewGraph& graph, const TrainConfig& config, const TrainHooks& hooks = {}) {
  TrainSession session(graph, config);
  TrainLog log;
  for (std::size_t it = 0; it < config.iterations; ++it) {
    const TrainLogRecord record = session.step(hooks.on_forward);
    if (it % config.log_interval == 0 || it + 1 == config.iterations) log.records.push_back(record);
    if (hooks.checkpoint_path && config.checkpoint_interval > 0 && (it + 1) % config.checkpoint_interval == 0) {
      save_checkpoint(*hooks.checkpoint_path, session.model());
    }
  }
  if (hooks.checkpoint_path) save_checkpoint(*hooks.checkpoint_path, session.model());
  return {std::move(session.model()), std::move(log)};
}

/// Objective terms of a model on a graph, all nodes, target from the current M.
inline TrainLogRecord evaluate_objective(const SigilModel& model, const MultiViewGraph& graph,
                                         const TrainConfig& config) {
  const GraphInputs inputs(graph);
  ad::Tape tape;
  const BoundModel bound = bind(tape, model, false);
  const ForwardPass pass = forward(tape, bound, inputs);
  std::vector<std::size_t> all(graph.num_nodes());
  std::iota(all.begin(), all.end(), std::size_t{0});
  const ObjectiveTerms terms = build_objective(tape, pass, inputs, config, all);
  return {0, terms.objective.scalar(), terms.reconstruction.scalar(),
          terms.contrastive ? terms.contrastive->scalar() : 0.0, 0.0, 0.0};
}

}  // namespace sigil

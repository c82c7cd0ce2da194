#pragma once

// Multi-view hierarchical graph autoencoder.
//
// Encoder, per level l and view a:
//   Z^{a,l+1} = f_enc^{a,l}(A^{a,l}, X^{a,l})
//   S^{l+1}   = row_softmax( sum_a f_pool^l(A^{a,l}, X^{a,l} P^{a,l}) )   shared by all views
//   X^{a,l+1} = S^T Z^{a,l+1}
//   A^{a,l+1} = S^T (A^{a,l} + sigmoid(S S^T - 1/2)) S
// and M = S^1 ... S^L.
//
// Decoder, per step l, starting from Y^{a,0} = X^{a,L}, B^{a,0} = A^{a,L}:
//   S_dec^{l+1} = row_softmax( sum_a f_unpool^l(B^{a,l}, Y^{a,l}) )        (n_{L-l} x n_{L-l-1})
//   H^{a,l+1}   = f_dec^{a,l}(B^{a,l}, Y^{a,l})
//   Y^{a,l+1}   = S_dec^T H^{a,l+1}
//   B^{a,l+1}   = S_dec^T B^{a,l} S_dec
// and the reconstruction is Y^{a,L}.
//
// P^{a,l} is a per-view linear projection to the hidden width so the shared
// pooling GCN is well-typed when views have different feature widths.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "sigil/graph.hpp"
#include "sigil/tensor.hpp"

namespace sigil {

enum class Activation { relu, linear };

struct GcnLayer {
  Matrix weight;  // d_in x d_out
  Matrix bias;    // 1 x d_out
  Activation activation = Activation::relu;
};

/// Architecture descriptor.
struct ModelSpec {
  std::size_t num_nodes = 0;
  std::vector<std::size_t> feature_dims;    // d_v per view
  std::size_t hidden = 100;
  std::vector<std::size_t> cluster_counts;  // n_1 .. n_L
  bool augment_adjacency = true;

  std::size_t num_views() const { return feature_dims.size(); }
  std::size_t num_layers() const { return cluster_counts.size(); }

  /// n_l with n_0 = num_nodes.
  std::size_t level_size(std::size_t l) const { return l == 0 ? num_nodes : cluster_counts.at(l - 1); }

  void validate() const {
    if (feature_dims.empty()) throw InvalidArgument("model needs at least one view");
    for (std::size_t d : feature_dims) {
      if (d == 0) throw InvalidArgument("zero-width feature view");
    }
    if (hidden == 0) throw InvalidArgument("zero-width hidden layer");
    if (cluster_counts.empty()) throw InvalidArgument("model needs at least one pooling layer");
    std::size_t previous = num_nodes;
    for (std::size_t c : cluster_counts) {
      if (c < 2) throw InvalidArgument("cluster counts must be >= 2");
      if (c >= previous) throw InvalidArgument("cluster counts must strictly decrease from n");
      previous = c;
    }
  }

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

struct SigilModel {
  ModelSpec spec;
  std::vector<std::vector<GcnLayer>> encoders;        // [view][level]
  std::vector<std::vector<Matrix>> pool_projections;  // [view][level]
  std::vector<GcnLayer> pools;                        // [level]
  std::vector<std::vector<GcnLayer>> decoders;        // [view][step]
  std::vector<GcnLayer> unpools;                      // [step]
};

/// Visits every trainable matrix in a fixed canonical order as
/// fn(name, matrix, decays). Works for const and mutable models.
template <typename Model, typename Fn>
void for_each_parameter(Model& model, Fn&& fn) {
  const std::size_t views = model.spec.num_views();
  const std::size_t layers = model.spec.num_layers();
  auto layer = [&](const std::string& name, auto& gcn) {
    fn(name + ".weight", gcn.weight, true);
    fn(name + ".bias", gcn.bias, false);
  };
  for (std::size_t a = 0; a < views; ++a) {
    for (std::size_t l = 0; l < layers; ++l) {
      layer("encoder." + std::to_string(a) + "." + std::to_string(l), model.encoders[a][l]);
      fn("pool_projection." + std::to_string(a) + "." + std::to_string(l), model.pool_projections[a][l], true);
    }
  }
  for (std::size_t l = 0; l < layers; ++l) layer("pool." + std::to_string(l), model.pools[l]);
  for (std::size_t a = 0; a < views; ++a) {
    for (std::size_t l = 0; l < layers; ++l) {
      layer("decoder." + std::to_string(a) + "." + std::to_string(l), model.decoders[a][l]);
    }
  }
  for (std::size_t l = 0; l < layers; ++l) layer("unpool." + std::to_string(l), model.unpools[l]);
}

inline std::vector<ad::ParamRef> parameters(SigilModel& model) {
  std::vector<ad::ParamRef> refs;
  for_each_parameter(model, [&](const std::string& name, Matrix& m, bool decay) { refs.push_back({name, &m, decay}); });
  return refs;
}

inline std::size_t parameter_count(const SigilModel& model) {
  std::size_t total = 0;
  for_each_parameter(model, [&](const std::string&, const Matrix& m, bool) { total += static_cast<std::size_t>(m.size()); });
  return total;
}

/// Glorot-uniform weights, zero biases, deterministic under `seed`.
inline SigilModel initialize_model(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  const std::size_t views = spec.num_views();
  const std::size_t layers = spec.num_layers();
  const std::size_t h = spec.hidden;
  auto shaped = [](std::size_t in, std::size_t out, Activation act) {
    return GcnLayer{Matrix::Zero(static_cast<Eigen::Index>(in), static_cast<Eigen::Index>(out)),
                    Matrix::Zero(1, static_cast<Eigen::Index>(out)), act};
  };

  SigilModel model;
  model.spec = spec;
  model.encoders.resize(views);
  model.pool_projections.resize(views);
  model.decoders.resize(views);
  for (std::size_t a = 0; a < views; ++a) {
    for (std::size_t l = 0; l < layers; ++l) {
      const std::size_t in = l == 0 ? spec.feature_dims[a] : h;
      model.encoders[a].push_back(shaped(in, h, Activation::relu));
      model.pool_projections[a].push_back(Matrix::Zero(static_cast<Eigen::Index>(in), static_cast<Eigen::Index>(h)));
      const bool last = l + 1 == layers;
      model.decoders[a].push_back(shaped(h, last ? spec.feature_dims[a] : h, last ? Activation::linear : Activation::relu));
    }
  }
  for (std::size_t l = 0; l < layers; ++l) {
    model.pools.push_back(shaped(h, spec.level_size(l + 1), Activation::linear));
    model.unpools.push_back(shaped(h, spec.level_size(layers - l - 1), Activation::linear));
  }

  std::mt19937_64 rng(seed);
  for_each_parameter(model, [&](const std::string&, Matrix& m, bool is_weight) {
    if (!is_weight) return;
    const double limit = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = dist(rng);
    }
  });
  return model;
}

// ---------------------------------------------------------------------------
// GCN propagation

/// D̃^{-1/2}(A + I)D̃^{-1/2} for a sparse non-negative adjacency.
inline SparseMatrix gcn_propagation(const SparseMatrix& adjacency) {
  const Eigen::Index n = adjacency.rows();
  SparseMatrix identity(n, n);
  identity.setIdentity();
  SparseMatrix augmented = adjacency + identity;
  Vector inv_sqrt(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double degree = 0.0;
    for (SparseMatrix::InnerIterator it(augmented, i); it; ++it) degree += it.value();
    inv_sqrt(i) = 1.0 / std::sqrt(degree);
  }
  SparseMatrix out = inv_sqrt.asDiagonal() * augmented * inv_sqrt.asDiagonal();
  out.makeCompressed();
  return out;
}

/// Tape version for dense (coarse) adjacencies; differentiable in A.
inline ad::Var gcn_propagation(ad::Var adjacency) {
  ad::Tape& tape = adjacency.tape();
  const Eigen::Index n = adjacency.rows();
  ad::Var augmented = ad::add(adjacency, tape.constant(Matrix::Identity(n, n)));
  ad::Var inv_sqrt = ad::pow_scalar(ad::row_sums(augmented), -0.5);
  return ad::scale_rows(ad::scale_cols(augmented, inv_sqrt), inv_sqrt);
}

struct BoundGcn {
  ad::Var weight;
  ad::Var bias;
  Activation activation = Activation::relu;
};

namespace detail {

inline ad::Var activate(ad::Var x, Activation activation) {
  return activation == Activation::relu ? ad::relu(x) : x;
}

}  // namespace detail

/// One GCN layer over a precomputed sparse propagation matrix.
inline ad::Var gcn_apply(const BoundGcn& layer, const SparseMatrix& propagation, ad::Var x) {
  ad::Var xw = ad::matmul(x, layer.weight);
  return detail::activate(ad::add(ad::spmm(propagation, xw), layer.bias), layer.activation);
}

/// One GCN layer over a dense propagation matrix on the tape.
inline ad::Var gcn_apply(const BoundGcn& layer, ad::Var propagation, ad::Var x) {
  ad::Var xw = ad::matmul(x, layer.weight);
  return detail::activate(ad::add(ad::matmul(propagation, xw), layer.bias), layer.activation);
}

/// Evaluates one GCN layer on a dense adjacency (self-loops added internally).
inline Matrix gcn_forward(const GcnLayer& layer, const Matrix& adjacency, const Matrix& features) {
  if (adjacency.rows() != adjacency.cols() || adjacency.rows() != features.rows()) {
    throw ShapeError("gcn_forward: adjacency " + shape_string(adjacency.rows(), adjacency.cols()) + " vs features " +
                     shape_string(features.rows(), features.cols()));
  }
  if (features.cols() != layer.weight.rows()) throw ShapeError("gcn_forward: feature width != weight rows");
  if ((adjacency.array() < 0.0).any()) throw InvalidArgument("gcn_forward: adjacency must be non-negative");
  ad::Tape tape;
  BoundGcn bound{tape.constant(layer.weight), tape.constant(layer.bias), layer.activation};
  return gcn_apply(bound, gcn_propagation(tape.constant(adjacency)), tape.constant(features)).value();
}

// ---------------------------------------------------------------------------
// Binding a model to a tape

struct BoundModel {
  std::vector<std::vector<BoundGcn>> encoders;
  std::vector<std::vector<ad::Var>> pool_projections;
  std::vector<BoundGcn> pools;
  std::vector<std::vector<BoundGcn>> decoders;
  std::vector<BoundGcn> unpools;
  std::vector<ad::Var> flat;  // canonical parameter order
  ModelSpec spec;
};

/// Registers every parameter as a tape leaf. With `trainable` false the
/// parameters become constants (no gradients).
inline BoundModel bind(ad::Tape& tape, const SigilModel& model, bool trainable = true) {
  BoundModel bound;
  bound.spec = model.spec;
  auto leaf = [&](const Matrix& m) {
    ad::Var v = trainable ? tape.parameter(m) : tape.constant(m);
    bound.flat.push_back(v);
    return v;
  };
  auto gcn = [&](const GcnLayer& layer) {
    ad::Var w = leaf(layer.weight);
    ad::Var b = leaf(layer.bias);
    return BoundGcn{w, b, layer.activation};
  };
  const std::size_t views = model.spec.num_views();
  const std::size_t layers = model.spec.num_layers();
  bound.encoders.resize(views);
  bound.pool_projections.resize(views);
  bound.decoders.resize(views);
  // Same order as for_each_parameter.
  for (std::size_t a = 0; a < views; ++a) {
    for (std::size_t l = 0; l < layers; ++l) {
      bound.encoders[a].push_back(gcn(model.encoders[a][l]));
      bound.pool_projections[a].push_back(leaf(model.pool_projections[a][l]));
    }
  }
  for (std::size_t l = 0; l < layers; ++l) bound.pools.push_back(gcn(model.pools[l]));
  for (std::size_t a = 0; a < views; ++a) {
    for (std::size_t l = 0; l < layers; ++l) bound.decoders[a].push_back(gcn(model.decoders[a][l]));
  }
  for (std::size_t l = 0; l < layers; ++l) bound.unpools.push_back(gcn(model.unpools[l]));
  return bound;
}

/// Per-view constants derived once from a graph. Must outlive any tape that
/// uses it (sparse operands are referenced, not copied).
struct GraphInputs {
  std::vector<SparseMatrix> adjacency;
  std::vector<SparseMatrix> propagation;
  std::vector<Matrix> features;

  GraphInputs() = default;
  explicit GraphInputs(const MultiViewGraph& graph) {
    for (const View& v : graph.views()) {
      adjacency.push_back(v.adjacency());
      propagation.push_back(gcn_propagation(v.adjacency()));
      features.push_back(v.features());
    }
  }

  std::size_t num_views() const { return features.size(); }
  std::size_t num_nodes() const { return features.empty() ? 0 : static_cast<std::size_t>(features.front().rows()); }
};

/// S^T sigmoid(S S^T - 1/2) S, the augmentation added to every coarse
/// adjacency. Row blocks keep the working set at block x n instead of n x n.
namespace detail {

inline constexpr Eigen::Index augmentation_block = 128;

/// Rows [r, r + b) of sigmoid(S S^T - 1/2).
inline Matrix augmentation_rows(const Matrix& s, Eigen::Index r, Eigen::Index b) {
  return (s.middleRows(r, b) * s.transpose()).array().unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(0.5 - x)); });
}

}  // namespace detail

inline ad::Var assignment_augmentation(ad::Var s) {
  constexpr Eigen::Index block = detail::augmentation_block;
  const Matrix sv = s.value();
  const Eigen::Index n = sv.rows();
  Matrix out = Matrix::Zero(sv.cols(), sv.cols());
  for (Eigen::Index r = 0; r < n; r += block) {
    const Eigen::Index b = std::min(block, n - r);
    out.noalias() += sv.middleRows(r, b).transpose() * (detail::augmentation_rows(sv, r, b) * sv);
  }
  // With A = sigmoid(S S^T - 1/2) and upstream U:
  // dS = A S (U + U^T) + (P + P^T) S,  P = A (1 - A) o (S U S^T).
  return s.tape().record(
      "assignment_augmentation", std::move(out), {s},
      [id = s.id(), sv](const Matrix&, const Matrix& u, ad::GradSink& sink) {
        constexpr Eigen::Index block = detail::augmentation_block;
        const Eigen::Index n = sv.rows();
        const Matrix su_sym = sv * (u + u.transpose());
        const Matrix su = sv * u;
        Matrix grad = Matrix::Zero(n, sv.cols());
        for (Eigen::Index r = 0; r < n; r += block) {
          const Eigen::Index b = std::min(block, n - r);
          const Matrix a = detail::augmentation_rows(sv, r, b);
          const Matrix p = (a.array() * (1.0 - a.array()) * (su.middleRows(r, b) * sv.transpose()).array()).matrix();
          grad.middleRows(r, b).noalias() += a * su_sym + p * sv;
          grad.noalias() += p.transpose() * sv.middleRows(r, b);
        }
        sink.add(id, grad);
      });
}

struct EncodeVars {
  std::vector<ad::Var> assignments;                    // S^1 .. S^L
  ad::Var composed;                                    // M
  std::vector<std::vector<ad::Var>> embeddings;        // [view][level] Z^{a,l+1}
  std::vector<std::vector<ad::Var>> coarse_features;   // [view][level] X^{a,l+1}
  std::vector<std::vector<ad::Var>> coarse_adjacency;  // [view][level] A^{a,l+1}
};

struct DecodeVars {
  std::vector<ad::Var> assignments;            // S_dec^1 .. S_dec^L
  std::vector<std::vector<ad::Var>> adjacency;  // [view][step] B^{a,l+1}
  std::vector<ad::Var> reconstructions;        // X̂^a
};

inline void check_compatible(const ModelSpec& spec, const GraphInputs& inputs) {
  if (inputs.num_views() != spec.num_views()) {
    throw ShapeError("model has " + std::to_string(spec.num_views()) + " views, graph has " +
                     std::to_string(inputs.num_views()));
  }
  if (inputs.num_nodes() != spec.num_nodes) {
    throw ShapeError("model expects " + std::to_string(spec.num_nodes) + " nodes, graph has " +
                     std::to_string(inputs.num_nodes()));
  }
  for (std::size_t a = 0; a < spec.num_views(); ++a) {
    if (static_cast<std::size_t>(inputs.features[a].cols()) != spec.feature_dims[a]) {
      throw ShapeError("view " + std::to_string(a) + " feature width " + std::to_string(inputs.features[a].cols()) +
                       " != model width " + std::to_string(spec.feature_dims[a]));
    }
  }
}

inline EncodeVars encode_on_tape(ad::Tape& tape, const BoundModel& model, const GraphInputs& inputs) {
  const ModelSpec& spec = model.spec;
  check_compatible(spec, inputs);
  const std::size_t views = spec.num_views();
  EncodeVars out;
  out.embeddings.resize(views);
  out.coarse_features.resize(views);
  out.coarse_adjacency.resize(views);

  std::vector<ad::Var> features(views);
  std::vector<ad::Var> adjacency(views);  // dense, levels >= 1
  for (std::size_t a = 0; a < views; ++a) features[a] = tape.constant(inputs.features[a]);

  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    std::vector<ad::Var> propagation(views);
    if (l > 0) {
      for (std::size_t a = 0; a < views; ++a) propagation[a] = gcn_propagation(adjacency[a]);
    }
    auto apply = [&](const BoundGcn& layer, std::size_t a, ad::Var x) {
      return l == 0 ? gcn_apply(layer, inputs.propagation[a], x) : gcn_apply(layer, propagation[a], x);
    };

    ad::Var logits;
    std::vector<ad::Var> z(views);
    for (std::size_t a = 0; a < views; ++a) {
      z[a] = apply(model.encoders[a][l], a, features[a]);
      ad::Var projected = ad::matmul(features[a], model.pool_projections[a][l]);
      ad::Var pooled = apply(model.pools[l], a, projected);
      logits = a == 0 ? pooled : ad::add(logits, pooled);
    }
    ad::Var s = ad::row_softmax(logits);
    ad::Var st = ad::transpose(s);
    out.assignments.push_back(s);
    out.composed = l == 0 ? s : ad::matmul(out.composed, s);

    ad::Var augmented_part;
    if (spec.augment_adjacency) augmented_part = assignment_augmentation(s);

    for (std::size_t a = 0; a < views; ++a) {
      ad::Var coarse_x = ad::matmul(st, z[a]);
      ad::Var as = l == 0 ? ad::spmm(inputs.adjacency[a], s) : ad::matmul(adjacency[a], s);
      ad::Var coarse_a = ad::matmul(st, as);
      if (spec.augment_adjacency) coarse_a = ad::add(coarse_a, augmented_part);
      out.embeddings[a].push_back(z[a]);
      out.coarse_features[a].push_back(coarse_x);
      out.coarse_adjacency[a].push_back(coarse_a);
      features[a] = coarse_x;
      adjacency[a] = coarse_a;
    }
  }
  return out;
}

/// Runs the unpooling decoder from coarse features and adjacencies. The
/// final B^{a,L} (n x n) is only formed when `final_adjacency` is set.
inline DecodeVars decode_on_tape(const BoundModel& model, std::span<const ad::Var> coarse_features,
                                 std::span<const ad::Var> coarse_adjacency, bool final_adjacency = false) {
  const ModelSpec& spec = model.spec;
  const std::size_t views = spec.num_views();
  const std::size_t layers = spec.num_layers();
  if (coarse_features.size() != views || coarse_adjacency.size() != views) {
    throw ShapeError("decode: expected one coarse feature/adjacency pair per view");
  }
  DecodeVars out;
  out.adjacency.resize(views);
  std::vector<ad::Var> y(coarse_features.begin(), coarse_features.end());
  std::vector<ad::Var> b(coarse_adjacency.begin(), coarse_adjacency.end());
  for (std::size_t l = 0; l < layers; ++l) {
    std::vector<ad::Var> propagation(views);
    for (std::size_t a = 0; a < views; ++a) propagation[a] = gcn_propagation(b[a]);
    ad::Var logits;
    for (std::size_t a = 0; a < views; ++a) {
      ad::Var unpooled = gcn_apply(model.unpools[l], propagation[a], y[a]);
      logits = a == 0 ? unpooled : ad::add(logits, unpooled);
    }
    ad::Var s = ad::row_softmax(logits);
    ad::Var st = ad::transpose(s);
    out.assignments.push_back(s);
    const bool last = l + 1 == layers;
    for (std::size_t a = 0; a < views; ++a) {
      ad::Var h = gcn_apply(model.decoders[a][l], propagation[a], y[a]);
      ad::Var next_y = ad::matmul(st, h);
      if (!last || final_adjacency) {
        b[a] = ad::matmul(st, ad::matmul(b[a], s));
        out.adjacency[a].push_back(b[a]);
      }
      y[a] = next_y;
    }
  }
  out.reconstructions = std::move(y);
  return out;
}

struct ForwardPass {
  EncodeVars encoded;
  DecodeVars decoded;
};

inline ForwardPass forward(ad::Tape& tape, const BoundModel& model, const GraphInputs& inputs,
                           bool final_adjacency = false) {
  ForwardPass pass;
  pass.encoded = encode_on_tape(tape, model, inputs);
  std::vector<ad::Var> xs, as;
  for (std::size_t a = 0; a < model.spec.num_views(); ++a) {
    xs.push_back(pass.encoded.coarse_features[a].back());
    as.push_back(pass.encoded.coarse_adjacency[a].back());
  }
  pass.decoded = decode_on_tape(model, xs, as, final_adjacency);
  return pass;
}

// ---------------------------------------------------------------------------
// Value-level traces

struct EncodeTrace {
  std::vector<Matrix> assignments;                    // S^l, n_{l-1} x n_l
  Matrix composed;                                    // M, n x n_L
  std::vector<std::vector<Matrix>> embeddings;        // [view][level] Z^{a,l+1}
  std::vector<std::vector<Matrix>> coarse_features;   // [view][level] X^{a,l+1}
  std::vector<std::vector<Matrix>> coarse_adjacency;  // [view][level] A^{a,l+1}
  std::vector<std::vector<Matrix>> plain_adjacency;   // [view][level] S^T A^{a,l} S, no augmentation

  /// Z^{a,1}: the n-row embeddings per view.
  std::vector<Matrix> fine_embeddings() const {
    std::vector<Matrix> out;
    for (const auto& per_view : embeddings) out.push_back(per_view.front());
    return out;
  }
};

struct DecodeTrace {
  std::vector<Matrix> assignments;                    // S_dec^l
  std::vector<std::vector<Matrix>> adjacency;         // [view][step] B^{a,l+1}
  std::vector<Matrix> reconstructions;                // X̂^a
};

inline EncodeTrace encode(const SigilModel& model, const MultiViewGraph& graph) {
  const GraphInputs inputs(graph);
  ad::Tape tape;
  const BoundModel bound = bind(tape, model, false);
  const EncodeVars vars = encode_on_tape(tape, bound, inputs);
  EncodeTrace trace;
  for (const ad::Var& s : vars.assignments) trace.assignments.push_back(s.value());
  trace.composed = vars.composed.value();
  const std::size_t views = model.spec.num_views();
  trace.embeddings.resize(views);
  trace.coarse_features.resize(views);
  trace.coarse_adjacency.resize(views);
  trace.plain_adjacency.resize(views);
  for (std::size_t a = 0; a < views; ++a) {
    for (std::size_t l = 0; l < model.spec.num_layers(); ++l) {
      const Matrix& s = trace.assignments[l];
      trace.embeddings[a].push_back(vars.embeddings[a][l].value());
      trace.coarse_features[a].push_back(vars.coarse_features[a][l].value());
      trace.coarse_adjacency[a].push_back(vars.coarse_adjacency[a][l].value());
      const Matrix as = l == 0 ? Matrix(inputs.adjacency[a] * s) : Matrix(trace.coarse_adjacency[a][l - 1] * s);
      trace.plain_adjacency[a].push_back(s.transpose() * as);
    }
  }
  return trace;
}

inline DecodeTrace decode(const SigilModel& model, const EncodeTrace& trace) {
  const std::size_t views = model.spec.num_views();
  if (trace.coarse_features.size() != views) throw ShapeError("decode: trace has a different view count");
  ad::Tape tape;
  const BoundModel bound = bind(tape, model, false);
  std::vector<ad::Var> xs, as;
  for (std::size_t a = 0; a < views; ++a) {
    xs.push_back(tape.constant(trace.coarse_features[a].back()));
    as.push_back(tape.constant(trace.coarse_adjacency[a].back()));
  }
  const DecodeVars vars = decode_on_tape(bound, xs, as, true);
  DecodeTrace out;
  for (const ad::Var& s : vars.assignments) out.assignments.push_back(s.value());
  out.adjacency.resize(views);
  for (std::size_t a = 0; a < views; ++a) {
    for (const ad::Var& b : vars.adjacency[a]) out.adjacency[a].push_back(b.value());
    out.reconstructions.push_back(vars.reconstructions[a].value());
  }
  return out;
}

}  // namespace sigil

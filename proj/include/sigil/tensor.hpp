#pragma once

// Dense reverse-mode automatic differentiation over row-major matrices.
//
// A Tape records every operation applied to its Vars together with a rule
// that maps the output gradient onto the inputs. Nodes are appended in
// evaluation order, so a single reverse sweep is a valid topological pass.
// Values live in a deque and keep stable addresses for the tape's lifetime;
// backward rules capture pointers to the values they need.

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sigil/error.hpp"

namespace sigil {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

inline std::string shape_string(Eigen::Index rows, Eigen::Index cols) {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

namespace ad {

class Tape;

/// Handle to a matrix recorded on a Tape. Cheap to copy.
class Var {
 public:
  Var() = default;

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }
  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape;

/// Receives gradient contributions during the reverse sweep.
class GradSink {
 public:
  template <typename Expr>
  void add(std::size_t id, const Expr& contribution);
  bool wants(std::size_t id) const;

 private:
  friend class Tape;
  GradSink(const Tape& tape, std::vector<Matrix>& grads) : tape_(tape), grads_(grads) {}

  const Tape& tape_;
  std::vector<Matrix>& grads_;
};

/// Gradients of a scalar loss with respect to every parameter leaf.
class Gradients {
 public:
  const Matrix& operator[](Var param) const { return grads_.at(param.id()); }

 private:
  friend class Tape;
  std::vector<Matrix> grads_;
};

class Tape {
 public:
  /// Called with (output value, output gradient, sink).
  using Backward = std::function<void(const Matrix&, const Matrix&, GradSink&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that receives a gradient.
  Var parameter(Matrix value) { return push("parameter", std::move(value), true, true, {}); }
  /// Leaf without gradient.
  Var constant(Matrix value) { return push("constant", std::move(value), false, false, {}); }

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Records an operation output. The backward rule is dropped when no
  /// parent requires a gradient.
  Var record(const char* op, Matrix value, std::initializer_list<Var> parents, Backward backward) {
    bool needs = false;
    for (const Var& p : parents) {
      if (p.tape_ != this) throw InvalidArgument(std::string(op) + ": operands from different tapes");
      needs = needs || nodes_[p.id_].requires_grad;
    }
    if (!value.allFinite()) throw NumericalError(std::string("non-finite output from ") + op);
    return push(op, std::move(value), needs, false, needs ? std::move(backward) : Backward{});
  }

  /// Reverse sweep from a 1x1 loss.
  Gradients backward(Var loss) const {
    if (loss.tape_ != this) throw InvalidArgument("backward: loss belongs to another tape");
    if (loss.rows() != 1 || loss.cols() != 1) {
      throw ShapeError("backward: loss must be 1x1, got " + shape_string(loss.rows(), loss.cols()));
    }
    std::vector<Matrix> grads(nodes_.size());
    if (nodes_[loss.id_].requires_grad) grads[loss.id_] = Matrix::Ones(1, 1);
    GradSink sink(*this, grads);
    for (std::size_t id = loss.id_ + 1; id-- > 0;) {
      const Node& node = nodes_[id];
      if (grads[id].size() == 0 || !node.backward) continue;
      node.backward(node.value, grads[id], sink);
      if (!node.is_parameter) grads[id] = Matrix();
    }
    Gradients out;
    out.grads_.resize(nodes_.size());
    for (std::size_t id = 0; id < nodes_.size(); ++id) {
      if (!nodes_[id].is_parameter) continue;
      out.grads_[id] = grads[id].size() != 0
                           ? std::move(grads[id])
                           : Matrix::Zero(nodes_[id].value.rows(), nodes_[id].value.cols());
    }
    return out;
  }

 private:
  struct Node {
    const char* op;
    Matrix value;
    bool requires_grad;
    bool is_parameter;
    Backward backward;
  };

  Var push(const char* op, Matrix value, bool requires_grad, bool is_parameter, Backward backward) {
    nodes_.push_back(Node{op, std::move(value), requires_grad, is_parameter, std::move(backward)});
    return Var(this, nodes_.size() - 1);
  }

  std::deque<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape_->value(id_); }

inline bool GradSink::wants(std::size_t id) const { return tape_.requires_grad(id); }

template <typename Expr>
void GradSink::add(std::size_t id, const Expr& contribution) {
  if (!wants(id)) return;
  Matrix& slot = grads_[id];
  if (slot.size() == 0) {
    slot = contribution;
  } else {
    slot += contribution;
  }
}

namespace detail {

inline void require_same_shape(const char* op, Var a, Var b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.rows(), a.cols()) + " vs " +
                     shape_string(b.rows(), b.cols()));
  }
}

inline void require_column(const char* op, Var v, Eigen::Index length) {
  if (v.cols() != 1 || v.rows() != length) {
    throw ShapeError(std::string(op) + ": expected " + shape_string(length, 1) + " vector, got " +
                     shape_string(v.rows(), v.cols()));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

inline Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + shape_string(a.rows(), a.cols()) + " * " + shape_string(b.rows(), b.cols()));
  }
  Matrix out = a.value() * b.value();
  return a.tape().record("matmul", std::move(out), {a, b},
                         [pa = &a.value(), pb = &b.value(), ia = a.id(), ib = b.id()](
                             const Matrix&, const Matrix& g, GradSink& s) {
                           if (s.wants(ia)) s.add(ia, g * pb->transpose());
                           if (s.wants(ib)) s.add(ib, pa->transpose() * g);
                         });
}

/// Constant sparse matrix times a dense Var. The sparse operand must outlive
/// the backward sweep.
inline Var spmm(const SparseMatrix& a, Var b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("spmm: " + shape_string(a.rows(), a.cols()) + " * " + shape_string(b.rows(), b.cols()));
  }
  Matrix out = a * b.value();
  return b.tape().record("spmm", std::move(out), {b},
                         [pa = &a, ib = b.id()](const Matrix&, const Matrix& g, GradSink& s) {
                           s.add(ib, Matrix(pa->transpose() * g));
                         });
}

inline Var transpose(Var a) {
  Matrix out = a.value().transpose();
  return a.tape().record("transpose", std::move(out), {a},
                         [ia = a.id()](const Matrix&, const Matrix& g, GradSink& s) { s.add(ia, g.transpose()); });
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic

/// a + b for equal shapes, or a + 1·b when b is a 1xcols row (bias).
inline Var add(Var a, Var b) {
  const bool row_broadcast = b.rows() == 1 && a.rows() != 1 && b.cols() == a.cols();
  if (!row_broadcast) detail::require_same_shape("add", a, b);
  Matrix out = a.value();
  if (row_broadcast) {
    out.rowwise() += b.value().row(0);
  } else {
    out += b.value();
  }
  return a.tape().record("add", std::move(out), {a, b},
                         [ia = a.id(), ib = b.id(), row_broadcast](const Matrix&, const Matrix& g, GradSink& s) {
                           s.add(ia, g);
                           if (row_broadcast) {
                             s.add(ib, g.colwise().sum());
                           } else {
                             s.add(ib, g);
                           }
                         });
}

/// a + v·1ᵀ for a rows x 1 column v.
inline Var add_column(Var a, Var v) {
  detail::require_column("add_column", v, a.rows());
  Matrix out = a.value();
  out.colwise() += v.value().col(0);
  return a.tape().record("add_column", std::move(out), {a, v},
                         [ia = a.id(), iv = v.id()](const Matrix&, const Matrix& g, GradSink& s) {
                           s.add(ia, g);
                           s.add(iv, g.rowwise().sum());
                         });
}

inline Var sub(Var a, Var b) {
  detail::require_same_shape("sub", a, b);
  Matrix out = a.value() - b.value();
  return a.tape().record("sub", std::move(out), {a, b},
                         [ia = a.id(), ib = b.id()](const Matrix&, const Matrix& g, GradSink& s) {
                           s.add(ia, g);
                           s.add(ib, -g);
                         });
}

inline Var hadamard(Var a, Var b) {
  detail::require_same_shape("hadamard", a, b);
  Matrix out = a.value().cwiseProduct(b.value());
  return a.tape().record("hadamard", std::move(out), {a, b},
                         [pa = &a.value(), pb = &b.value(), ia = a.id(), ib = b.id()](
                             const Matrix&, const Matrix& g, GradSink& s) {
                           if (s.wants(ia)) s.add(ia, g.cwiseProduct(*pb));
                           if (s.wants(ib)) s.add(ib, g.cwiseProduct(*pa));
                         });
}

inline Var scale(Var a, double factor) {
  Matrix out = a.value() * factor;
  return a.tape().record("scale", std::move(out), {a},
                         [ia = a.id(), factor](const Matrix&, const Matrix& g, GradSink& s) { s.add(ia, g * factor); });
}

inline Var shift(Var a, double offset) {
  Matrix out = a.value().array() + offset;
  return a.tape().record("shift", std::move(out), {a},
                         [ia = a.id()](const Matrix&, const Matrix& g, GradSink& s) { s.add(ia, g); });
}

/// Elementwise power; entries must keep the result finite.
inline Var pow_scalar(Var a, double exponent) {
  Matrix out = a.value().array().pow(exponent);
  return a.tape().record("pow_scalar", std::move(out), {a},
                         [pa = &a.value(), ia = a.id(), exponent](const Matrix&, const Matrix& g, GradSink& s) {
                           s.add(ia, Matrix(g.array() * exponent * pa->array().pow(exponent - 1.0)));
                         });
}

/// y_ij = a_ij * v_i for a rows x 1 column v.
inline Var scale_rows(Var a, Var v) {
  detail::require_column("scale_rows", v, a.rows());
  Matrix out = v.value().col(0).asDiagonal() * a.value();
  return a.tape().record("scale_rows", std::move(out), {a, v},
                         [pa = &a.value(), pv = &v.value(), ia = a.id(), iv = v.id()](
                             const Matrix&, const Matrix& g, GradSink& s) {
                           if (s.wants(ia)) s.add(ia, Matrix(pv->col(0).asDiagonal() * g));
                           if (s.wants(iv)) s.add(iv, g.cwiseProduct(*pa).rowwise().sum());
                         });
}

/// y_ij = a_ij * v_j for a cols x 1 column v.
inline Var scale_cols(Var a, Var v) {
  detail::require_column("scale_cols", v, a.cols());
  Matrix out = a.value() * v.value().col(0).asDiagonal();
  return a.tape().record("scale_cols", std::move(out), {a, v},
                         [pa = &a.value(), pv = &v.value(), ia = a.id(), iv = v.id()](
                             const Matrix&, const Matrix& g, GradSink& s) {
                           if (s.wants(ia)) s.add(ia, Matrix(g * pv->col(0).asDiagonal()));
                           if (s.wants(iv)) s.add(iv, g.cwiseProduct(*pa).colwise().sum().transpose());
                         });
}

// ---------------------------------------------------------------------------
// Nonlinearities

inline Var relu(Var a) {
  Matrix out = a.value().cwiseMax(0.0);
  return a.tape().record("relu", std::move(out), {a},
                         [pa = &a.value(), ia = a.id()](const Matrix&, const Matrix& g, GradSink& s) {
                           s.add(ia, Matrix((pa->array() > 0.0).select(g.array(), 0.0)));
                         });
}

inline Var sigmoid(Var a) {
  Matrix out = a.value().unaryExpr([](double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  });
  return a.tape().record("sigmoid", std::move(out), {a},
                         [ia = a.id()](const Matrix& y, const Matrix& g, GradSink& s) {
                           s.add(ia, Matrix(g.array() * y.array() * (1.0 - y.array())));
                         });
}

inline Var exp(Var a) {
  Matrix out = a.value().array().exp();
  return a.tape().record("exp", std::move(out), {a}, [ia = a.id()](const Matrix& y, const Matrix& g, GradSink& s) {
    s.add(ia, g.cwiseProduct(y));
  });
}

inline Var log(Var a) {
  Matrix out = a.value().array().log();
  return a.tape().record("log", std::move(out), {a},
                         [pa = &a.value(), ia = a.id()](const Matrix&, const Matrix& g, GradSink& s) {
                           s.add(ia, g.cwiseQuotient(*pa));
                         });
}

/// Softmax across each row, with the row maximum subtracted first.
inline Var row_softmax(Var a) {
  Matrix out = a.value();
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    auto row = out.row(i);
    row.array() -= row.maxCoeff();
    row = row.array().exp();
    row /= row.sum();
  }
  return a.tape().record("row_softmax", std::move(out), {a},
                         [ia = a.id()](const Matrix& y, const Matrix& g, GradSink& s) {
                           const Vector inner = g.cwiseProduct(y).rowwise().sum();
                           Matrix dx = g;
                           dx.colwise() -= inner;
                           s.add(ia, dx.cwiseProduct(y));
                         });
}

// ---------------------------------------------------------------------------
// Reductions and row-wise operations

/// Euclidean norm of each row, as a rows x 1 column. Zero rows get a zero subgradient.
inline Var row_l2_norm(Var a) {
  Matrix out = a.value().rowwise().norm();
  return a.tape().record("row_l2_norm", std::move(out), {a},
                         [pa = &a.value(), ia = a.id()](const Matrix& y, const Matrix& g, GradSink& s) {
                           Matrix dx(pa->rows(), pa->cols());
                           for (Eigen::Index i = 0; i < pa->rows(); ++i) {
                             const double r = y(i, 0);
                             if (r > 0.0) {
                               dx.row(i) = (g(i, 0) / r) * pa->row(i);
                             } else {
                               dx.row(i).setZero();
                             }
                           }
                           s.add(ia, dx);
                         });
}

/// Each row divided by its Euclidean norm; zero rows stay zero.
inline Var row_normalize(Var a) {
  const Vector norms = a.value().rowwise().norm();
  Matrix out = a.value();
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    if (norms(i) > 0.0) out.row(i) /= norms(i);
  }
  return a.tape().record("row_normalize", std::move(out), {a},
                         [norms, ia = a.id()](const Matrix& y, const Matrix& g, GradSink& s) {
                           Matrix dx = Matrix::Zero(y.rows(), y.cols());
                           for (Eigen::Index i = 0; i < y.rows(); ++i) {
                             if (norms(i) <= 0.0) continue;
                             const double along = g.row(i).dot(y.row(i));
                             dx.row(i) = (g.row(i) - along * y.row(i)) / norms(i);
                           }
                           s.add(ia, dx);
                         });
}

/// Squared Frobenius norm, 1x1.
inline Var frobenius_sq(Var a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().squaredNorm();
  return a.tape().record("frobenius_sq", std::move(out), {a},
                         [pa = &a.value(), ia = a.id()](const Matrix&, const Matrix& g, GradSink& s) {
                           s.add(ia, (2.0 * g(0, 0)) * *pa);
                         });
}

/// Sum over rows: 1 x cols.
inline Var sum_rows(Var a) {
  Matrix out = a.value().colwise().sum();
  return a.tape().record("sum_rows", std::move(out), {a},
                         [ia = a.id(), rows = a.rows()](const Matrix&, const Matrix& g, GradSink& s) {
                           s.add(ia, g.replicate(rows, 1));
                         });
}

/// Sum within each row: rows x 1.
inline Var row_sums(Var a) {
  Matrix out = a.value().rowwise().sum();
  return a.tape().record("row_sums", std::move(out), {a},
                         [ia = a.id(), cols = a.cols()](const Matrix&, const Matrix& g, GradSink& s) {
                           s.add(ia, g.replicate(1, cols));
                         });
}

/// Sum of all entries, 1x1.
inline Var sum(Var a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape().record("sum", std::move(out), {a},
                         [ia = a.id(), rows = a.rows(), cols = a.cols()](const Matrix&, const Matrix& g,
                                                                         GradSink& s) {
                           s.add(ia, Matrix::Constant(rows, cols, g(0, 0)));
                         });
}

/// Rows of `a` selected by `indices`, in order.
inline Var gather_rows(Var a, std::span<const std::size_t> indices) {
  Matrix out(static_cast<Eigen::Index>(indices.size()), a.cols());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= static_cast<std::size_t>(a.rows())) throw ShapeError("gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(r)) = a.value().row(static_cast<Eigen::Index>(indices[r]));
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return a.tape().record("gather_rows", std::move(out), {a},
                         [idx = std::move(idx), ia = a.id(), rows = a.rows()](const Matrix&, const Matrix& g,
                                                                              GradSink& s) {
                           Matrix dx = Matrix::Zero(rows, g.cols());
                           for (std::size_t r = 0; r < idx.size(); ++r) {
                             dx.row(static_cast<Eigen::Index>(idx[r])) += g.row(static_cast<Eigen::Index>(r));
                           }
                           s.add(ia, dx);
                         });
}

// ---------------------------------------------------------------------------
// Adam

/// Mutable view of one trainable matrix.
struct ParamRef {
  std::string name;
  Matrix* value;
  bool decay;  // weight decay applies (weights yes, biases no)
};

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
};

struct AdamState {
  AdamConfig config;
  std::size_t step = 0;
  std::vector<Matrix> first_moment;
  std::vector<Matrix> second_moment;
};

/// One bias-corrected Adam update. Weight decay enters as wd·p added to the
/// gradient of decayed parameters. Throws before mutating anything if a
/// gradient is non-finite or shapes disagree.
inline void adam_step(AdamState& state, std::span<const ParamRef> params, std::span<const Matrix> grads) {
  if (params.size() != grads.size()) throw ShapeError("adam_step: parameter/gradient count mismatch");
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Matrix& p = *params[k].value;
    if (grads[k].rows() != p.rows() || grads[k].cols() != p.cols()) {
      throw ShapeError("adam_step: gradient shape mismatch for " + params[k].name);
    }
    if (!grads[k].allFinite()) throw NumericalError("adam_step: non-finite gradient for " + params[k].name);
  }
  if (state.first_moment.empty()) {
    for (const ParamRef& p : params) {
      state.first_moment.push_back(Matrix::Zero(p.value->rows(), p.value->cols()));
      state.second_moment.push_back(Matrix::Zero(p.value->rows(), p.value->cols()));
    }
  }
  if (state.first_moment.size() != params.size()) throw ShapeError("adam_step: state tracks a different model");

  const AdamConfig& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Matrix& p = *params[k].value;
    Matrix g = grads[k];
    if (params[k].decay && c.weight_decay != 0.0) g += c.weight_decay * p;
    Matrix& m = state.first_moment[k];
    Matrix& v = state.second_moment[k];
    m = c.beta1 * m + (1.0 - c.beta1) * g;
    v = c.beta2 * v + (1.0 - c.beta2) * g.cwiseProduct(g);
    p.array() -= c.learning_rate * (m.array() / correction1) / ((v.array() / correction2).sqrt() + c.epsilon);
  }
}

}  // namespace ad
}  // namespace sigil

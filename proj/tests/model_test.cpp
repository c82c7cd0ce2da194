#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "sigil/losses.hpp"
#include "sigil/model.hpp"
#include "support.hpp"

namespace sigil {
namespace {

ModelSpec spec_for(const MultiViewGraph& g, std::vector<std::size_t> clusters, std::size_t hidden = 8) {
  return ModelSpec{g.num_nodes(), g.feature_dims(), hidden, std::move(clusters), true};
}

double row_sum_error(const Matrix& m) { return (m.rowwise().sum().array() - 1.0).abs().maxCoeff(); }

double asymmetry(const Matrix& m) { return (m - m.transpose()).cwiseAbs().maxCoeff(); }

TEST(Gcn, EdgelessIdentityLayerReturnsInput) {
  std::mt19937_64 rng(1);
  const Matrix x = testing::random_matrix(5, 3, rng);
  const GcnLayer layer{Matrix::Identity(3, 3), Matrix::Zero(1, 3), Activation::linear};
  const Matrix y = gcn_forward(layer, Matrix::Zero(5, 5), x);
  EXPECT_LT((y - x).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Gcn, TwoNodeSingleEdgeMatchesExplicitNormalizer) {
  Matrix a(2, 2);
  a << 0, 1, 1, 0;
  Matrix x(2, 1);
  x << 1, 0;
  const GcnLayer layer{Matrix::Ones(1, 1), Matrix::Zero(1, 1), Activation::linear};
  // Oracle: D̃^{-1/2} (A + I) D̃^{-1/2} X by explicit 2x2 products.
  const Matrix augmented = a + Matrix::Identity(2, 2);
  Matrix d_inv_sqrt = Matrix::Zero(2, 2);
  for (int i = 0; i < 2; ++i) d_inv_sqrt(i, i) = 1.0 / std::sqrt(augmented.row(i).sum());
  const Matrix expected = d_inv_sqrt * augmented * d_inv_sqrt * x;
  EXPECT_DOUBLE_EQ(expected(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(expected(1, 0), 0.5);
  const Matrix y = gcn_forward(layer, a, x);
  EXPECT_NEAR(y(0, 0), expected(0, 0), 1e-15);
  EXPECT_NEAR(y(1, 0), expected(1, 0), 1e-15);
}

TEST(Gcn, ReluClampsNegativePreActivations) {
  const GcnLayer layer{Matrix::Constant(2, 3, -1.0), Matrix::Constant(1, 3, -0.5), Activation::relu};
  const Matrix x = Matrix::Ones(4, 2);
  Matrix a = Matrix::Zero(4, 4);
  a(0, 1) = a(1, 0) = 1.0;
  EXPECT_TRUE(gcn_forward(layer, a, x).isZero());
}

TEST(Gcn, SparseAndDensePropagationAgree) {
  const MultiViewGraph g = testing::random_graph(12, 1, 3, 4);
  const Matrix dense = Matrix(gcn_propagation(g.view(0).adjacency()));
  ad::Tape tape;
  const Matrix via_tape = gcn_propagation(tape.constant(Matrix(g.view(0).adjacency()))).value();
  EXPECT_LT((dense - via_tape).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(ModelSpec, Validation) {
  ModelSpec spec{10, {3, 4}, 100, {4}, true};
  EXPECT_NO_THROW(spec.validate());
  EXPECT_EQ(ModelSpec{}.hidden, 100u);
  ModelSpec zero = spec;
  zero.hidden = 0;
  EXPECT_THROW(zero.validate(), InvalidArgument);
  ModelSpec zero_view = spec;
  zero_view.feature_dims = {3, 0};
  EXPECT_THROW(zero_view.validate(), InvalidArgument);
  ModelSpec grow = spec;
  grow.cluster_counts = {4, 5};
  EXPECT_THROW(grow.validate(), InvalidArgument);
  ModelSpec one = spec;
  one.cluster_counts = {1};
  EXPECT_THROW(one.validate(), InvalidArgument);
}

TEST(Initialize, DeterministicGlorotWithZeroBiases) {
  const ModelSpec spec{20, {5, 7}, 16, {4, 2}, true};
  const SigilModel a = initialize_model(spec, 9);
  const SigilModel b = initialize_model(spec, 9);
  const SigilModel c = initialize_model(spec, 10);
  std::vector<Matrix> pa, pb, pc;
  for_each_parameter(a, [&](const std::string&, const Matrix& m, bool) { pa.push_back(m); });
  for_each_parameter(b, [&](const std::string&, const Matrix& m, bool) { pb.push_back(m); });
  for_each_parameter(c, [&](const std::string&, const Matrix& m, bool) { pc.push_back(m); });
  bool any_different = false;
  for (std::size_t k = 0; k < pa.size(); ++k) {
    EXPECT_TRUE((pa[k].array() == pb[k].array()).all());
    any_different |= !(pa[k].array() == pc[k].array()).all();
  }
  EXPECT_TRUE(any_different);
  for_each_parameter(a, [&](const std::string& name, const Matrix& m, bool is_weight) {
    if (!is_weight) {
      EXPECT_TRUE(m.isZero()) << name;
      return;
    }
    const double limit = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
    EXPECT_LE(m.cwiseAbs().maxCoeff(), limit) << name;
  });
  EXPECT_EQ(a.unpools[0].weight.cols(), 4);   // coarse-to-middle step
  EXPECT_EQ(a.unpools[1].weight.cols(), 20);  // middle-to-fine step
}

TEST(Encode, SingleLayerShapes) {
  const MultiViewGraph g = testing::random_graph(6, 2, 3, 2);
  const SigilModel model = initialize_model(spec_for(g, {2}), 3);
  const EncodeTrace trace = encode(model, g);
  ASSERT_EQ(trace.assignments.size(), 1u);
  EXPECT_EQ(trace.assignments[0].rows(), 6);
  EXPECT_EQ(trace.assignments[0].cols(), 2);
  EXPECT_LT(row_sum_error(trace.assignments[0]), 1e-12);
  EXPECT_TRUE((trace.composed.array() == trace.assignments[0].array()).all());
  for (std::size_t a = 0; a < 2; ++a) {
    const Matrix& coarse = trace.coarse_adjacency[a][0];
    EXPECT_EQ(coarse.rows(), 2);
    EXPECT_LT(asymmetry(coarse), 1e-12);
    EXPECT_EQ(trace.coarse_features[a][0].rows(), 2);
    EXPECT_EQ(trace.embeddings[a][0].rows(), 6);
  }
}

TEST(Encode, UniformAssignmentGivesConstantCoarseAdjacency) {
  const MultiViewGraph g = testing::random_graph(9, 1, 3, 5);
  SigilModel model = initialize_model(spec_for(g, {3}), 1);
  model.pools[0].weight.setZero();  // zero logits -> S = 1/3 everywhere
  const EncodeTrace trace = encode(model, g);
  EXPECT_TRUE(trace.assignments[0].isApproxToConstant(1.0 / 3.0, 1e-15));
  // Closed form: S^T (A + Â) S with S = J/k and Â = sigmoid(1/k - 1/2) J.
  const double k = 3.0, n = 9.0;
  const double aug = 1.0 / (1.0 + std::exp(-(1.0 / k - 0.5)));
  const double total = Matrix(g.view(0).adjacency()).sum();
  const double expected = (total + n * n * aug) / (k * k);
  EXPECT_LT((trace.coarse_adjacency[0][0].array() - expected).abs().maxCoeff(), 1e-12);
}

TEST(Encode, AugmentationDominatesPlainCoarsening) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const MultiViewGraph g = testing::random_graph(15, 2, 4, seed);
    const SigilModel model = initialize_model(spec_for(g, {6, 3}), seed);
    const EncodeTrace trace = encode(model, g);
    for (std::size_t a = 0; a < 2; ++a) {
      for (std::size_t l = 0; l < 2; ++l) {
        EXPECT_TRUE((trace.coarse_adjacency[a][l].array() >= trace.plain_adjacency[a][l].array()).all());
      }
    }
  }
}

TEST(Encode, DisablingAugmentationMatchesPlainCoarsening) {
  const MultiViewGraph g = testing::random_graph(12, 2, 3, 6);
  ModelSpec spec = spec_for(g, {4});
  spec.augment_adjacency = false;
  const EncodeTrace trace = encode(initialize_model(spec, 2), g);
  EXPECT_LT((trace.coarse_adjacency[0][0] - trace.plain_adjacency[0][0]).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Encode, WidthMismatchRejected) {
  const MultiViewGraph g = testing::random_graph(10, 2, 3, 1);
  ModelSpec spec = spec_for(g, {3});
  spec.feature_dims = {3, 9};
  EXPECT_THROW(encode(initialize_model(spec, 0), g), ShapeError);
}

TEST(Decode, ShapesAndDeterminism) {
  const MultiViewGraph g = testing::random_graph(10, 2, 3, 7);
  const SigilModel model = initialize_model(spec_for(g, {4}), 7);
  const DecodeTrace a = decode(model, encode(model, g));
  const DecodeTrace b = decode(model, encode(model, g));
  ASSERT_EQ(a.assignments.size(), 1u);
  EXPECT_EQ(a.assignments[0].rows(), 4);
  EXPECT_EQ(a.assignments[0].cols(), 10);
  for (std::size_t v = 0; v < 2; ++v) {
    EXPECT_EQ(a.reconstructions[v].rows(), 10);
    EXPECT_EQ(a.reconstructions[v].cols(), g.view(v).features().cols());
    EXPECT_TRUE((a.reconstructions[v].array() == b.reconstructions[v].array()).all());
  }
}

TEST(Augmentation, BlockedOpMatchesDenseFormula) {
  std::mt19937_64 rng(21);
  // 300 rows spans several row blocks, including a ragged last one.
  for (Eigen::Index n : {7, 300}) {
    const Matrix s = testing::random_stochastic(n, 4, rng);
    const Matrix a = ((s * s.transpose()).array() - 0.5).unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
    const Matrix dense = s.transpose() * a * s;
    ad::Tape tape;
    EXPECT_LT((assignment_augmentation(tape.constant(s)).value() - dense).cwiseAbs().maxCoeff(), 1e-10 * dense.norm());
  }
}

TEST(Augmentation, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(22);
  for (Eigen::Index n : {6, 150}) {
    const Matrix s0 = testing::random_stochastic(n, 3, rng);
    const Matrix weights = testing::random_matrix(3, 3, rng);  // asymmetric upstream
    auto value = [&](const Matrix& s) {
      ad::Tape tape;
      return (assignment_augmentation(tape.constant(s)).value().array() * weights.array()).sum();
    };
    ad::Tape tape;
    const ad::Var s = tape.parameter(s0);
    const ad::Var out = ad::sum(ad::hadamard(assignment_augmentation(s), tape.constant(weights)));
    const Matrix analytic = tape.backward(out)[s];
    EXPECT_LT(testing::max_relative_error(analytic, testing::numeric_gradient(value, s0)), 1e-6) << n;
  }
}

TEST(Invariants, StochasticAndSymmetricAcrossRandomModels) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const MultiViewGraph g = testing::random_graph(18, 2, 3, seed + 100);
    const SigilModel model = initialize_model(spec_for(g, {7, 3}), seed);
    const EncodeTrace trace = encode(model, g);
    const DecodeTrace decoded = decode(model, trace);
    for (const Matrix& s : trace.assignments) EXPECT_LT(row_sum_error(s), 1e-10);
    for (const Matrix& s : decoded.assignments) EXPECT_LT(row_sum_error(s), 1e-10);
    EXPECT_LT(row_sum_error(trace.composed), 1e-10);
    for (std::size_t a = 0; a < 2; ++a) {
      for (const Matrix& c : trace.coarse_adjacency[a]) EXPECT_LT(asymmetry(c), 1e-10);
      for (const Matrix& b : decoded.adjacency[a]) EXPECT_LT(asymmetry(b), 1e-10);
      EXPECT_TRUE((trace.coarse_adjacency[a].back().array() >= 0.0).all());
    }
  }
}

TEST(Invariants, AssignmentIndependentOfViewOrder) {
  const MultiViewGraph g = testing::random_graph(14, 3, 3, 12);
  const SigilModel model = initialize_model(spec_for(g, {5}), 12);
  // Same model and graph with views listed in reverse.
  std::vector<View> reversed_views(g.views().rbegin(), g.views().rend());
  const MultiViewGraph reversed(reversed_views);
  SigilModel flipped = model;
  const auto dims = g.feature_dims();
  flipped.spec.feature_dims.assign(dims.rbegin(), dims.rend());
  std::reverse(flipped.encoders.begin(), flipped.encoders.end());
  std::reverse(flipped.pool_projections.begin(), flipped.pool_projections.end());
  std::reverse(flipped.decoders.begin(), flipped.decoders.end());
  const Matrix s1 = encode(model, g).assignments[0];
  const Matrix s2 = encode(flipped, reversed).assignments[0];
  // Three summands: equal up to floating-point reassociation.
  EXPECT_LT((s1 - s2).cwiseAbs().maxCoeff(), 1e-14);

  const MultiViewGraph two = testing::random_graph(14, 2, 3, 13);
  const SigilModel m2 = initialize_model(spec_for(two, {5}), 13);
  SigilModel f2 = m2;
  const auto dims2 = two.feature_dims();
  f2.spec.feature_dims.assign(dims2.rbegin(), dims2.rend());
  std::reverse(f2.encoders.begin(), f2.encoders.end());
  std::reverse(f2.pool_projections.begin(), f2.pool_projections.end());
  std::reverse(f2.decoders.begin(), f2.decoders.end());
  std::vector<View> rev2(two.views().rbegin(), two.views().rend());
  EXPECT_TRUE((encode(m2, two).assignments[0].array() == encode(f2, MultiViewGraph(rev2)).assignments[0].array()).all());
}

TEST(Gradients, ReconstructionThroughEncoderAndDecoder) {
  const MultiViewGraph g = testing::random_graph(10, 2, 3, 21);
  const SigilModel model = initialize_model(spec_for(g, {4, 2}, 5), 21);
  const GraphInputs inputs(g);
  // Check a few parameter matrices spanning encoder, pooling, decoder, unpooling.
  for (const std::string target : {"encoder.1.0.weight", "pool_projection.0.1", "pool.0.weight", "pool.1.bias",
                                   "decoder.0.1.weight", "unpool.0.weight", "unpool.1.bias"}) {
    auto loss_with = [&](const Matrix& value, ad::Tape& tape, bool as_parameter, ad::Var* leaf) {
      SigilModel m = model;
      for_each_parameter(m, [&](const std::string& name, Matrix& p, bool) {
        if (name == target) p = value;
      });
      BoundModel bound = bind(tape, m, false);
      // Re-register the targeted matrix as a parameter.
      ad::Var replacement = as_parameter ? tape.parameter(value) : tape.constant(value);
      if (leaf) *leaf = replacement;
      std::size_t k = 0;
      for_each_parameter(m, [&](const std::string& name, Matrix&, bool) {
        if (name == target) {
          ad::Var old = bound.flat[k];
          for (auto& per_view : bound.encoders)
            for (auto& layer : per_view) {
              if (layer.weight.id() == old.id()) layer.weight = replacement;
              if (layer.bias.id() == old.id()) layer.bias = replacement;
            }
          for (auto& per_view : bound.pool_projections)
            for (auto& p : per_view)
              if (p.id() == old.id()) p = replacement;
          for (auto* group : {&bound.pools, &bound.unpools})
            for (auto& layer : *group) {
              if (layer.weight.id() == old.id()) layer.weight = replacement;
              if (layer.bias.id() == old.id()) layer.bias = replacement;
            }
          for (auto& per_view : bound.decoders)
            for (auto& layer : per_view) {
              if (layer.weight.id() == old.id()) layer.weight = replacement;
              if (layer.bias.id() == old.id()) layer.bias = replacement;
            }
        }
        ++k;
      });
      const ForwardPass pass = forward(tape, bound, inputs);
      std::vector<ad::Var> xs;
      for (const Matrix& x : inputs.features) xs.push_back(tape.constant(x));
      return reconstruction_loss(xs, pass.decoded.reconstructions);
    };
    Matrix start;
    for_each_parameter(model, [&](const std::string& name, const Matrix& p, bool) {
      if (name == target) start = p;
    });
    ASSERT_GT(start.size(), 0) << target;
    ad::Tape tape;
    ad::Var leaf;
    const ad::Var loss = loss_with(start, tape, true, &leaf);
    const Matrix analytic = tape.backward(loss)[leaf];
    const Matrix numeric = testing::numeric_gradient(
        [&](const Matrix& v) {
          ad::Tape t;
          return loss_with(v, t, false, nullptr).scalar();
        },
        start);
    EXPECT_LT(testing::max_relative_error(analytic, numeric), 1e-4) << target;
  }
}

}  // namespace
}  // namespace sigil

#include <gtest/gtest.h>

#include <fstream>
#include <map>
#include <sstream>

#include "sigil/bench.hpp"
#include "sigil/trainer.hpp"
#include "support.hpp"

namespace sigil {
namespace {

TrainConfig small_config(std::uint64_t seed = 0) {
  TrainConfig c;
  c.iterations = 20;
  c.hidden = 12;
  c.clusters = {3};
  c.pair_sample = 24;
  c.log_interval = 5;
  c.seed = seed;
  return c;
}

MultiViewGraph small_graph(std::size_t n = 40, std::uint64_t seed = 1) {
  SyntheticSpec spec;
  spec.n = n;
  spec.feature_dim = 6;
  spec.intra_prob = 0.3;
  spec.inter_prob = 0.03;
  spec.seed = seed;
  return generate_synthetic(spec);
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<Matrix> objective_gradients(const SigilModel& model, const GraphInputs& inputs, const TrainConfig& config,
                                        std::span<const std::size_t> sample, const ContrastiveTarget* fixed = nullptr) {
  ad::Tape tape;
  const BoundModel bound = bind(tape, model, true);
  const ForwardPass pass = forward(tape, bound, inputs);
  const ObjectiveTerms terms = build_objective(tape, pass, inputs, config, sample, fixed);
  const ad::Gradients grads = tape.backward(terms.objective);
  std::vector<Matrix> out;
  for (const ad::Var& p : bound.flat) out.push_back(grads[p]);
  return out;
}

bool all_equal(const std::vector<Matrix>& a, const std::vector<Matrix>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (!(a[k].array() == b[k].array()).all()) return false;
  }
  return true;
}

std::vector<std::size_t> all_nodes(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

TEST(Objective, ZeroLambdaLeavesOnlyReconstructionGradients) {
  const MultiViewGraph g = small_graph();
  const GraphInputs inputs(g);
  TrainConfig config = small_config();
  const SigilModel model = initialize_model(config.model_spec(g), 4);
  config.lambda = 0.0;
  TrainConfig plain = config;
  plain.loss_variant = LossVariant::none;
  const auto sample = all_nodes(g.num_nodes());
  EXPECT_TRUE(all_equal(objective_gradients(model, inputs, config, sample), objective_gradients(model, inputs, plain, sample)));
  config.lambda = 10.0;
  EXPECT_FALSE(all_equal(objective_gradients(model, inputs, config, sample), objective_gradients(model, inputs, plain, sample)));
}

TEST(Objective, TargetIsDetachedFromAssignments) {
  const MultiViewGraph g = small_graph();
  const GraphInputs inputs(g);
  const TrainConfig config = small_config();
  const SigilModel model = initialize_model(config.model_spec(g), 5);
  std::mt19937_64 rng(3);
  const auto sample = sample_nodes(g.num_nodes(), 16, rng);
  // Frozen copy of O computed outside the tape.
  const ContrastiveTarget frozen = contrastive_target(encode(model, g).composed, inputs, config, sample);
  EXPECT_TRUE(all_equal(objective_gradients(model, inputs, config, sample),
                        objective_gradients(model, inputs, config, sample, &frozen)));
  TrainConfig differentiable = config;
  differentiable.differentiable_similarity = true;
  EXPECT_FALSE(all_equal(objective_gradients(model, inputs, differentiable, sample),
                         objective_gradients(model, inputs, config, sample, &frozen)));
}

TEST(Objective, TermsMatchValueLosses) {
  const MultiViewGraph g = small_graph();
  const TrainConfig config = small_config();
  const SigilModel model = initialize_model(config.model_spec(g), 6);
  const TrainLogRecord record = evaluate_objective(model, g, config);
  const EncodeTrace trace = encode(model, g);
  const DecodeTrace decoded = decode(model, trace);
  std::vector<Matrix> features;
  for (const View& v : g.views()) features.push_back(v.features());
  const double lr = reconstruction_loss(features, decoded.reconstructions);
  Matrix zhat = trace.embeddings[0][0] + trace.embeddings[1][0];
  zhat = testing::unit_rows(zhat);
  const GraphInputs inputs(g);
  const Matrix o = build_similarity_map(trace.composed, inputs.adjacency, config.alpha, config.normalization).O;
  const double lc = similarity_guided_loss(o, zhat, config.tau);
  EXPECT_NEAR(record.reconstruction, lr, 1e-9 * lr);
  EXPECT_NEAR(record.contrastive, lc, 1e-9 * lc);
  EXPECT_NEAR(record.objective, lr + config.lambda * lc, 1e-9 * record.objective);
}

TEST(Train, ReconstructionDecreasesOnSmallSynthetic) {
  for (std::uint64_t seed : {1, 2, 3}) {
    const MultiViewGraph g = small_graph(60, seed);
    TrainConfig config = small_config(seed);
    config.iterations = 200;
    config.hidden = 16;
    config.log_interval = 50;
    const TrainResult result = train(g, config);
    const double before = evaluate_objective(initialize_model(config.model_spec(g), std::mt19937_64(seed)()), g, config)
                              .reconstruction;
    const double after = evaluate_objective(result.model, g, config).reconstruction;
    EXPECT_LT(after, before) << "seed " << seed;
    EXPECT_LT(result.log.records.back().reconstruction, result.log.records.front().reconstruction);
    EXPECT_EQ(result.log.records.size(), 5u);  // 0, 50, 100, 150, 199
  }
}

TEST(Train, DeterministicParametersAndLog) {
  const MultiViewGraph g = small_graph();
  const TrainConfig config = small_config(9);
  const TrainResult a = train(g, config);
  const TrainResult b = train(g, config);
  EXPECT_EQ(parameter_checksum(a.model), parameter_checksum(b.model));
  const auto dir = testing::scratch_dir("trainer_log");
  write_train_log(dir / "a.log", a.log);
  write_train_log(dir / "b.log", b.log);
  EXPECT_EQ(slurp(dir / "a.log"), slurp(dir / "b.log"));
  EXPECT_EQ(slurp(dir / "a.log").find("wall"), std::string::npos);
  TrainConfig other = config;
  other.seed = 10;
  EXPECT_NE(parameter_checksum(train(g, other).model), parameter_checksum(a.model));
}

TEST(Train, VariantsRunAndStayFinite) {
  const MultiViewGraph g = small_graph();
  for (LossVariant v : {LossVariant::clustering_l1, LossVariant::plain_l2, LossVariant::none}) {
    TrainConfig config = small_config();
    config.loss_variant = v;
    const TrainResult r = train(g, config);
    for (const auto& rec : r.log.records) EXPECT_TRUE(std::isfinite(rec.objective)) << to_string(v);
    if (v == LossVariant::none) {
      EXPECT_EQ(r.log.records.back().contrastive, 0.0);
    }
  }
  TrainConfig deep = small_config();
  deep.layers = 2;
  deep.clusters = {6, 3};
  deep.normalization = Normalization::row;
  EXPECT_NO_THROW(train(g, deep));
}

TEST(Train, DivergenceIsReported) {
  const MultiViewGraph g = small_graph();
  TrainConfig config = small_config();
  config.learning_rate = 1e300;
  EXPECT_THROW(train(g, config), NumericalError);
  Matrix bad = g.view(0).features();
  bad(0, 0) = std::numeric_limits<double>::quiet_NaN();
  const MultiViewGraph broken({View(g.num_nodes(), g.view(0).edges(), bad), g.view(1)});
  EXPECT_THROW(train(broken, small_config()), InvalidArgument);
}

TEST(Train, InvalidConfigRejected) {
  const MultiViewGraph g = small_graph();
  TrainConfig config = small_config();
  config.clusters = {3, 2};
  EXPECT_THROW(train(g, config), InvalidArgument);
  config = small_config();
  config.clusters = {50};
  EXPECT_THROW(train(g, config), InvalidArgument);
  config = small_config();
  config.beta = 2.0;
  EXPECT_THROW(config.validate(), InvalidArgument);
}

TEST(Checkpoint, RoundTripIsBitwise) {
  const MultiViewGraph g = small_graph();
  TrainConfig config = small_config();
  config.layers = 2;
  config.clusters = {5, 2};
  const SigilModel model = train(g, config).model;
  const auto dir = testing::scratch_dir("checkpoint");
  save_checkpoint(dir / "m.ckpt", model);
  EXPECT_FALSE(std::filesystem::exists(dir / "m.ckpt.partial"));
  const SigilModel back = load_checkpoint(dir / "m.ckpt", model.spec);
  EXPECT_TRUE(back.spec == model.spec);
  std::vector<Matrix> a, b;
  for_each_parameter(model, [&](const std::string&, const Matrix& m, bool) { a.push_back(m); });
  for_each_parameter(back, [&](const std::string&, const Matrix& m, bool) { b.push_back(m); });
  EXPECT_TRUE(all_equal(a, b));
  EXPECT_EQ(parameter_checksum(model), parameter_checksum(back));
  // Special values survive too.
  SigilModel odd = model;
  odd.pools[0].weight(0, 0) = -0.0;
  odd.pools[0].weight(0, 1) = std::numeric_limits<double>::denorm_min();
  odd.pools[0].weight(1, 0) = -std::numeric_limits<double>::max();
  save_checkpoint(dir / "odd.ckpt", odd);
  EXPECT_EQ(parameter_checksum(load_checkpoint(dir / "odd.ckpt")), parameter_checksum(odd));
}

TEST(Checkpoint, TypedErrors) {
  const MultiViewGraph g = small_graph();
  const SigilModel model = initialize_model(small_config().model_spec(g), 1);
  const auto dir = testing::scratch_dir("checkpoint_errors");
  save_checkpoint(dir / "m.ckpt", model);
  ModelSpec other = model.spec;
  other.hidden = 13;
  EXPECT_THROW(load_checkpoint(dir / "m.ckpt", other), CheckpointError);

  const std::string text = slurp(dir / "m.ckpt");
  {
    std::ofstream(dir / "cut.ckpt") << text.substr(0, text.size() / 2);
  }
  EXPECT_THROW(load_checkpoint(dir / "cut.ckpt"), CheckpointError);
  {
    std::ofstream(dir / "noend.ckpt") << text.substr(0, text.size() - 4);
  }
  EXPECT_THROW(load_checkpoint(dir / "noend.ckpt"), CheckpointError);
  {
    std::string v2 = text;
    v2.replace(0, std::string("sigil-checkpoint 1").size(), "sigil-checkpoint 2");
    std::ofstream(dir / "v2.ckpt") << v2;
  }
  EXPECT_THROW(load_checkpoint(dir / "v2.ckpt"), CheckpointError);
  {
    std::ofstream(dir / "junk.ckpt") << "hello\n";
  }
  EXPECT_THROW(load_checkpoint(dir / "junk.ckpt"), CheckpointError);
  EXPECT_THROW(load_checkpoint(dir / "absent.ckpt"), IoError);
}

TEST(Checkpoint, InterruptedRunKeepsLastCheckpoint) {
  const MultiViewGraph g = small_graph();
  TrainConfig config = small_config(2);
  config.iterations = 20;
  config.checkpoint_interval = 5;
  const auto dir = testing::scratch_dir("checkpoint_interrupt");
  TrainHooks hooks;
  hooks.checkpoint_path = dir / "m.ckpt";
  hooks.on_forward = [](std::size_t it, const ForwardPass&) {
    if (it == 12) throw std::runtime_error("interrupted");
  };
  EXPECT_THROW(train(g, config, hooks), std::runtime_error);
  TrainConfig ten = config;
  ten.iterations = 10;
  EXPECT_EQ(parameter_checksum(load_checkpoint(dir / "m.ckpt")), parameter_checksum(train(g, ten).model));
}

TEST(Config, FileEnvironmentAndFlagPrecedence) {
  std::istringstream file("# run settings\niterations = 300\nlambda = 1\nclusters = 6,3\nlayers = 2\nridge = auto\n");
  TrainConfig c;
  apply_key_values(c, parse_key_values(file, "cfg"), "cfg");
  EXPECT_EQ(c.iterations, 300u);
  EXPECT_EQ(c.lambda, 1.0);
  EXPECT_EQ(c.clusters, (std::vector<std::size_t>{6, 3}));
  EXPECT_FALSE(c.ridge.has_value());

  const std::map<std::string, std::string> env{{"SIGIL_LAMBDA", "10"}, {"SIGIL_TAU", "0.5"}, {"SIGIL_RIDGE", "0.01"}};
  apply_environment(c, [&](const char* name) -> const char* {
    const auto it = env.find(name);
    return it == env.end() ? nullptr : it->second.c_str();
  });
  EXPECT_EQ(c.lambda, 10.0);  // environment beats file
  EXPECT_EQ(c.tau, 0.5);
  EXPECT_EQ(c.iterations, 300u);
  ASSERT_TRUE(c.ridge.has_value());
  EXPECT_EQ(*c.ridge, 0.01);
  EXPECT_TRUE(set_config_value(c, "lambda", "3"));  // flags applied last
  EXPECT_EQ(c.lambda, 3.0);
  EXPECT_FALSE(set_config_value(c, "lamda", "3"));

  std::istringstream unknown("lamda = 1\n");
  EXPECT_THROW(apply_key_values(c, parse_key_values(unknown, "cfg"), "cfg"), InvalidArgument);
  std::istringstream malformed("iterations 300\n");
  EXPECT_THROW(parse_key_values(malformed, "cfg"), InvalidArgument);
  EXPECT_THROW(set_config_value(c, "iterations", "many"), InvalidArgument);
}

TEST(Config, KeyValuesRoundTrip) {
  TrainConfig c;
  c.lambda = 0.1;
  c.clusters = {7, 2};
  c.layers = 2;
  c.ridge = 1e-3;
  c.loss_variant = LossVariant::plain_l2;
  TrainConfig back;
  apply_key_values(back, config_to_key_values(c), "round trip");
  EXPECT_EQ(config_to_key_values(back), config_to_key_values(c));
  EXPECT_EQ(back.lambda, 0.1);
  EXPECT_EQ(config_to_key_values(c).size(), train_config_keys().size());
}

}  // namespace
}  // namespace sigil

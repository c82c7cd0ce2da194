// sigil: command-line front end for the anomaly detection pipeline.
//
// Every command writes DIR/run.manifest.json (fully resolved arguments, input
// digests, seed, expected outputs) before it computes anything. `sigil replay`
// re-executes a manifest into a new directory and byte-compares the outputs.
//
// Exit codes: 0 success, 1 failed check / divergence / replay mismatch,
// 2 usage error, 3 I/O error.
#include <openssl/evp.h>

#include <CLI11.hpp>
#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "sigil/bench.hpp"
#include "sigil/bundle.hpp"
#include "sigil/diagnostics.hpp"
#include "sigil/scoring.hpp"
#include "sigil/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr const char* tool_version = "0.1.0";
constexpr const char* manifest_name = "run.manifest.json";

enum Exit { ok = 0, check_failed = 1, usage = 2, io = 3 };

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw sigil::IoError("cannot open " + path.string());
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw sigil::IoError("sha256 init failed");
  std::array<char, 1 << 16> buffer;
  while (in) {
    in.read(buffer.data(), static_cast<std::streamsize>(buffer.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buffer.data(), static_cast<std::size_t>(in.gcount()));
  }
  if (in.bad()) throw sigil::IoError("read failed: " + path.string());
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int length = 0;
  EVP_DigestFinal_ex(ctx.get(), digest.data(), &length);
  std::string hex;
  char byte[3];
  for (unsigned int i = 0; i < length; ++i) {
    std::snprintf(byte, sizeof byte, "%02x", digest[i]);
    hex += byte;
  }
  return hex;
}

bool same_bytes(const fs::path& a, const fs::path& b) {
  std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
  if (!fa || !fb) return false;
  return std::string(std::istreambuf_iterator<char>(fa), {}) == std::string(std::istreambuf_iterator<char>(fb), {});
}

std::uint64_t entropy_seed() {
  std::random_device device;
  return (static_cast<std::uint64_t>(device()) << 32) ^ device();
}

std::string absolute_path(const fs::path& p) { return fs::absolute(p).lexically_normal().string(); }

std::string dashed(std::string key) {
  for (char& c : key)
    if (c == '_') c = '-';
  return key;
}

// ---------------------------------------------------------------------------
// Inputs and outputs of a resolved command

struct Input {
  std::string role;
  fs::path path;
};

struct Output {
  std::string name;
  bool deterministic = true;
};

void add_bundle_inputs(std::vector<Input>& inputs, const fs::path& manifest) {
  inputs.push_back({"bundle", manifest});
  const sigil::BundleFiles files = sigil::read_bundle_manifest(manifest);
  for (std::size_t a = 0; a < files.edges.size(); ++a) {
    inputs.push_back({"bundle.view." + std::to_string(a) + ".edges", files.edges[a]});
    inputs.push_back({"bundle.view." + std::to_string(a) + ".features", files.features[a]});
  }
  if (files.labels) inputs.push_back({"bundle.labels", *files.labels});
}

std::vector<Input> inputs_of(const std::string& command, const json& args) {
  std::vector<Input> inputs;
  if (command == "inject" || command == "train" || command == "score") {
    add_bundle_inputs(inputs, args.at("bundle").get<std::string>());
  }
  if (command == "score") inputs.push_back({"checkpoint", args.at("checkpoint").get<std::string>()});
  if (command == "evaluate") {
    inputs.push_back({"scores", args.at("scores").get<std::string>()});
    if (!args.at("labels").is_null()) inputs.push_back({"labels", args.at("labels").get<std::string>()});
    if (!args.at("bundle").is_null()) add_bundle_inputs(inputs, args.at("bundle").get<std::string>());
  }
  return inputs;
}

std::vector<Output> bundle_outputs(std::size_t views) {
  std::vector<Output> out;
  for (std::size_t a = 0; a < views; ++a) {
    out.push_back({"view" + std::to_string(a) + ".edges"});
    out.push_back({"view" + std::to_string(a) + ".features"});
  }
  out.push_back({"labels.txt"});
  out.push_back({"bundle.manifest"});
  return out;
}

std::vector<Output> outputs_of(const std::string& command, const json& args) {
  if (command == "synth") return bundle_outputs(args.at("views").get<std::size_t>());
  if (command == "inject") {
    auto out = bundle_outputs(sigil::read_bundle_manifest(args.at("bundle").get<std::string>()).edges.size());
    out.push_back({"injection.json"});
    return out;
  }
  if (command == "train") return {{"model.ckpt"}, {"train.log"}, {"timings.tsv", false}};
  if (command == "score") return {{"scores.txt"}};
  if (command == "evaluate") return {{"metrics.txt"}, {"metrics.json"}};
  if (command == "diagnose") {
    bool timed = false;
    for (const auto& s : args.at("suites")) timed = timed || s == "complexity";
    return {{"diagnostics.json", !timed}};
  }
  throw sigil::InvalidArgument("unknown command '" + command + "'");
}

json make_manifest(const std::string& command, const json& args, const fs::path& out_dir) {
  json m;
  m["tool"] = "sigil";
  m["version"] = tool_version;
  m["command"] = command;
  m["seed"] = args.contains("seed") ? args["seed"] : json(nullptr);
  m["args"] = args;
  json inputs = json::array();
  for (const Input& in : inputs_of(command, args)) {
    inputs.push_back({{"role", in.role}, {"path", absolute_path(in.path)}, {"sha256", sha256_file(in.path)}});
  }
  m["inputs"] = inputs;
  json outputs = json::array();
  for (const Output& o : outputs_of(command, args)) {
    outputs.push_back({{"name", o.name}, {"path", absolute_path(out_dir / o.name)}, {"deterministic", o.deterministic}});
  }
  m["outputs"] = outputs;
  return m;
}

void write_manifest(const fs::path& out_dir, const json& manifest) {
  std::ofstream out = sigil::detail::open_output(out_dir / manifest_name);
  out << manifest.dump(2) << '\n';
  if (!out) throw sigil::IoError("failed writing " + (out_dir / manifest_name).string());
}

// ---------------------------------------------------------------------------
// Execution from resolved arguments

sigil::TrainConfig config_from(const json& entries) {
  sigil::TrainConfig c;
  for (const auto& [key, value] : entries.items()) {
    if (!sigil::set_config_value(c, key, value.get<std::string>())) {
      throw sigil::InvalidArgument("manifest: unknown config key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

json config_json(const sigil::TrainConfig& c) {
  json out;
  for (const auto& [key, value] : sigil::config_to_key_values(c)) out[key] = value;
  return out;
}

int run_synth(const json& args, const fs::path& out) {
  sigil::SyntheticSpec spec;
  spec.n = args.at("nodes");
  spec.communities = args.at("communities");
  spec.intra_prob = args.at("intra");
  spec.inter_prob = args.at("inter");
  spec.feature_dim = args.at("feature_dim");
  spec.separation = args.at("separation");
  spec.views = args.at("views");
  spec.mask_prob = args.at("mask");
  spec.seed = args.at("seed");
  const sigil::MultiViewGraph graph = sigil::generate_synthetic(spec);
  const fs::path manifest = sigil::write_bundle(out, graph);
  std::cout << "synth: " << graph.num_nodes() << " nodes, " << graph.num_views() << " views, "
            << graph.view(0).edges().size() << " edges per view -> " << manifest.string() << '\n';
  return ok;
}

int run_inject(const json& args, const fs::path& out) {
  const sigil::MultiViewGraph graph = sigil::load_bundle(args.at("bundle").get<std::string>());
  sigil::InjectionPlan plan;
  plan.clique_size = args.at("clique_size");
  plan.clique_count = args.at("cliques");
  plan.attr_anomaly_count = args.at("attr");
  plan.attr_candidate_count = args.at("k");
  plan.seed = args.at("seed");
  const sigil::InjectionResult result = sigil::inject(graph, plan);
  const fs::path manifest = sigil::write_bundle(out, result.graph);
  json record;
  record["cliques"] = result.cliques;
  record["attribute_nodes"] = result.attribute_nodes;
  record["donors"] = result.donors;
  std::ofstream file = sigil::detail::open_output(out / "injection.json");
  file << record.dump(2) << '\n';
  if (!file) throw sigil::IoError("failed writing injection.json");
  std::cout << "inject: " << result.structural_nodes().size() << " structural + " << result.attribute_nodes.size()
            << " attribute anomalies -> " << manifest.string() << '\n';
  return ok;
}

int run_train(const json& args, const fs::path& out) {
  const sigil::MultiViewGraph graph = sigil::load_bundle(args.at("bundle").get<std::string>());
  const sigil::TrainConfig config = config_from(args.at("config"));
  sigil::TrainHooks hooks;
  hooks.checkpoint_path = out / "model.ckpt";
  const sigil::TrainResult result = sigil::train(graph, config, hooks);
  sigil::write_train_log(out / "train.log", result.log);
  sigil::write_timings(out / "timings.tsv", result.log);
  const sigil::TrainLogRecord& last = result.log.records.back();
  std::cout << "train: " << config.iterations << " iterations, objective "
            << sigil::format_significant(last.objective) << " (reconstruction "
            << sigil::format_significant(last.reconstruction) << ", contrastive "
            << sigil::format_significant(last.contrastive) << ")\n";
  return ok;
}

int run_score(const json& args, const fs::path& out) {
  const sigil::MultiViewGraph graph = sigil::load_bundle(args.at("bundle").get<std::string>());
  const sigil::SigilModel model = sigil::load_checkpoint(args.at("checkpoint").get<std::string>());
  if (model.spec.num_nodes != graph.num_nodes() || model.spec.feature_dims != graph.feature_dims()) {
    throw sigil::InvalidArgument("checkpoint was trained on a graph with " + std::to_string(model.spec.num_nodes) +
                                 " nodes and feature dims " + sigil::detail::join_sizes(model.spec.feature_dims) +
                                 "; bundle has " + std::to_string(graph.num_nodes()) + " nodes and dims " +
                                 sigil::detail::join_sizes(graph.feature_dims()));
  }
  sigil::ScoreConfig config;
  config.beta = args.at("beta");
  config.normalizer = sigil::parse_score_normalizer(args.at("score_normalizer"));
  if (!args.at("ridge").is_null()) config.mahalanobis.ridge = args.at("ridge").get<double>();
  config.mahalanobis.min_per_view = args.at("min_per_view");
  const sigil::ScoreReport report = sigil::score_graph(model, graph, config);
  for (const std::string& w : report.warnings) std::cerr << "warning: " << w << '\n';
  sigil::write_score_report(out / "scores.txt", report);
  std::cout << "score: " << report.size() << " nodes, top node " << report.ranking.front() << '\n';
  return ok;
}

int run_evaluate(const json& args, const fs::path& out) {
  const sigil::ScoreReport report = sigil::read_score_report(args.at("scores").get<std::string>());
  sigil::AnomalyLabels labels;
  if (!args.at("bundle").is_null()) {
    const sigil::MultiViewGraph graph = sigil::load_bundle(args.at("bundle").get<std::string>());
    if (graph.num_nodes() != report.size()) {
      throw sigil::InvalidArgument("score report has " + std::to_string(report.size()) + " nodes but the bundle has " +
                                   std::to_string(graph.num_nodes()));
    }
    if (!graph.labels()) throw sigil::InvalidArgument("bundle has no labels");
    labels = *graph.labels();
  } else {
    const auto indices = sigil::read_label_file(args.at("labels").get<std::string>());
    labels = sigil::AnomalyLabels::from_indices(report.size(), indices);
  }
  const auto ks = args.at("k").get<std::vector<std::size_t>>();
  const sigil::MetricReport metrics = sigil::evaluate(report.combined, labels, ks);
  sigil::write_metric_report(out / "metrics.txt", out / "metrics.json", metrics);
  std::cout << sigil::metric_report_text(metrics);
  return ok;
}

sigil::DiagnosticCheck negative_control(sigil::DiagnosticCheck check) {
  check.passed = !check.passed;
  check.name = "negative_control_" + check.name;
  check.instance += " (must fail)";
  return check;
}

int run_diagnose(const json& args, const fs::path& out) {
  const std::uint64_t seed = args.at("seed");
  sigil::DiagnosticReport report;
  auto announce = [](const sigil::DiagnosticCheck& c) {
    std::cout << (c.passed ? "PASS " : "FAIL ") << c.name << " measured=" << sigil::format_significant(c.measured)
              << " tolerance=" << sigil::format_significant(c.tolerance) << '\n';
  };
  auto add = [&](sigil::DiagnosticCheck c) {
    announce(c);
    report.add(std::move(c));
  };
  for (const auto& suite : args.at("suites")) {
    if (suite == "lemma1") {
      for (std::uint64_t s = 0; s < 5; ++s) add(sigil::verify_lemma1(30, 5, 100, seed + s));
      sigil::Lemma1Options perturbed;
      perturbed.perturb_assignment = true;
      add(negative_control(sigil::verify_lemma1(30, 5, 100, seed, perturbed)));
    } else if (suite == "lemma2") {
      const auto normalization = sigil::parse_normalization(args.at("lemma2_normalization"));
      add(sigil::verify_lemma2(20, 50, 1.0, seed, normalization));
      add(negative_control(sigil::verify_lemma2(20, 50, 1.0, seed, sigil::Normalization::symmetric)));
    } else if (suite == "gradient") {
      add(sigil::gradient_audit({}, seed));
    } else if (suite == "complexity") {
      sigil::ComplexityProbeOptions options;
      options.sizes = args.at("complexity_sizes").get<std::vector<std::size_t>>();
      options.repetitions = args.at("complexity_repetitions");
      options.seed = seed;
      add(sigil::complexity_probe(options).check);
      options.pair_sample = args.at("sampled_pairs").get<std::size_t>();
      options.slope_low = 0.8;
      options.slope_high = 1.6;
      add(sigil::complexity_probe(options).check);
    }
  }
  std::ofstream file = sigil::detail::open_output(out / "diagnostics.json");
  file << report.to_json().dump(2) << '\n';
  if (!file) throw sigil::IoError("failed writing diagnostics.json");
  std::cout << (report.passed() ? "all checks passed\n" : "some checks failed\n");
  return report.passed() ? ok : check_failed;
}

int execute(const std::string& command, const json& args, const fs::path& out) {
  if (command == "synth") return run_synth(args, out);
  if (command == "inject") return run_inject(args, out);
  if (command == "train") return run_train(args, out);
  if (command == "score") return run_score(args, out);
  if (command == "evaluate") return run_evaluate(args, out);
  if (command == "diagnose") return run_diagnose(args, out);
  throw sigil::InvalidArgument("unknown command '" + command + "'");
}

int run(const std::string& command, const json& args, const fs::path& out) {
  fs::create_directories(out);
  write_manifest(out, make_manifest(command, args, out));
  return execute(command, args, out);
}

int replay(const fs::path& manifest_path, const fs::path& out) {
  std::ifstream in = sigil::detail::open_input(manifest_path);
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const json::exception& e) {
    throw sigil::IoError(manifest_path.string() + ": " + e.what());
  }
  if (manifest.value("tool", "") != "sigil") throw sigil::IoError(manifest_path.string() + ": not a sigil run manifest");
  const std::string command = manifest.at("command");
  const json& args = manifest.at("args");
  const fs::path original = manifest_path.parent_path();
  if (fs::exists(out) && fs::equivalent(out, original)) {
    throw sigil::InvalidArgument("replay needs a fresh output directory, not the original run's");
  }
  bool inputs_match = true;
  for (const auto& recorded : manifest.at("inputs")) {
    const fs::path path = recorded.at("path").get<std::string>();
    if (!fs::exists(path) || sha256_file(path) != recorded.at("sha256")) {
      std::cerr << "replay: input " << recorded.at("role").get<std::string>() << " (" << path.string()
                << ") differs from the recorded digest\n";
      inputs_match = false;
    }
  }
  if (!inputs_match) return check_failed;
  const int code = run(command, args, out);
  bool identical = true;
  std::size_t compared = 0;
  for (const auto& o : manifest.at("outputs")) {
    if (!o.at("deterministic").get<bool>()) continue;
    const std::string name = o.at("name");
    ++compared;
    if (!same_bytes(original / name, out / name)) {
      std::cerr << "replay: " << name << " differs from the original run\n";
      identical = false;
    }
  }
  if (!identical) return check_failed;
  std::cout << "replay: " << compared << " outputs bit-identical\n";
  return code;
}

// ---------------------------------------------------------------------------
// Command line

const std::map<std::string, std::string>& config_help() {
  static const std::map<std::string, std::string> help{
      {"iterations", "training iterations"},
      {"learning_rate", "Adam learning rate"},
      {"weight_decay", "L2 weight decay"},
      {"hidden", "embedding width"},
      {"layers", "pooling layers (default: number of --clusters entries)"},
      {"clusters", "comma list of cluster counts, one per layer"},
      {"augment_adjacency", "add S^T S to coarse adjacencies (true|false)"},
      {"lambda", "contrastive loss weight"},
      {"alpha", "similarity map mix of M M^T against mean adjacency"},
      {"beta", "weight of the Mahalanobis score"},
      {"tau", "contrastive temperature"},
      {"pair_sample", "nodes sampled per iteration for the contrastive loss"},
      {"seed", "random seed (default: drawn from entropy)"},
      {"loss_variant", "similarity_guided|clustering_l1|plain_l2|none"},
      {"normalization", "similarity map normalization: symmetric|row"},
      {"differentiable_similarity", "backpropagate through the similarity map (true|false)"},
      {"log_interval", "iterations between log records"},
      {"checkpoint_interval", "iterations between checkpoints (0: final only)"},
      {"score_normalizer", "zscore|minmax|none"},
      {"ridge", "covariance ridge or auto"},
      {"min_per_view", "take the minimum distance per view, then sum (true|false)"},
  };
  return help;
}

struct ConfigLayers {
  std::string file;
  std::map<std::string, std::string> flags;
  std::map<std::string, CLI::Option*> options;
};

/// Defaults, then the config file, then SIGIL_* variables, then flags.
sigil::TrainConfig resolve_config(const ConfigLayers& layers, std::map<std::string, bool>& explicitly_set) {
  sigil::TrainConfig c;
  if (!layers.file.empty()) {
    const sigil::KeyValues entries = sigil::read_key_values(layers.file);
    sigil::apply_key_values(c, entries, layers.file);
    for (const auto& [key, value] : entries) explicitly_set[key] = true;
  }
  for (const std::string& key : sigil::train_config_keys()) {
    if (const char* value = std::getenv(sigil::env_name(key).c_str())) {
      sigil::set_config_value(c, key, value);
      explicitly_set[key] = true;
    }
  }
  for (const auto& [key, option] : layers.options) {
    if (option->count() > 0) {
      sigil::set_config_value(c, key, layers.flags.at(key));
      explicitly_set[key] = true;
    }
  }
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sigil: multi-view graph anomaly detection"};
  app.require_subcommand(1);
  app.set_version_flag("--version", tool_version);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic multi-view graph bundle");
  sigil::SyntheticSpec sspec;
  std::optional<std::uint64_t> synth_seed;
  std::string synth_out;
  synth->add_option("--nodes", sspec.n, "number of nodes")->capture_default_str();
  synth->add_option("--communities", sspec.communities, "planted communities")->capture_default_str();
  synth->add_option("--intra", sspec.intra_prob, "edge probability within a community")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  synth->add_option("--inter", sspec.inter_prob, "edge probability across communities")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  synth->add_option("--feature-dim", sspec.feature_dim, "feature width")->capture_default_str();
  synth->add_option("--separation", sspec.separation, "distance between community feature means")
      ->capture_default_str();
  synth->add_option("--views", sspec.views, "number of views")->capture_default_str();
  synth->add_option("--mask", sspec.mask_prob, "per-view feature/edge masking probability")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  synth->add_option("--seed", synth_seed, "random seed (default: drawn from entropy)");
  synth->add_option("--out", synth_out, "output directory")->required();

  // inject
  auto* inject = app.add_subcommand("inject", "inject structural and attribute anomalies into a bundle");
  std::string inject_bundle, inject_out;
  sigil::InjectionPlan plan;
  std::optional<std::uint64_t> inject_seed;
  inject->add_option("--bundle", inject_bundle, "input bundle manifest")->required()->check(CLI::ExistingFile);
  inject->add_option("--clique-size", plan.clique_size, "nodes per clique")->capture_default_str();
  inject->add_option("--cliques", plan.clique_count, "number of cliques")->capture_default_str();
  inject->add_option("--attr", plan.attr_anomaly_count, "attribute anomalies")->capture_default_str();
  inject->add_option("--k", plan.attr_candidate_count, "candidates per attribute anomaly")->capture_default_str();
  inject->add_option("--seed", inject_seed, "random seed (default: drawn from entropy)");
  inject->add_option("--out", inject_out, "output directory")->required();

  // train
  auto* train = app.add_subcommand("train", "train a model on a bundle");
  std::string train_bundle, train_out;
  ConfigLayers train_layers;
  train->add_option("--bundle", train_bundle, "bundle manifest")->required()->check(CLI::ExistingFile);
  train->add_option("--config", train_layers.file, "key = value config file")->check(CLI::ExistingFile);
  for (const std::string& key : sigil::train_config_keys()) {
    train_layers.options[key] =
        train->add_option("--" + dashed(key), train_layers.flags[key], config_help().at(key) + " [env " +
                                                                            sigil::env_name(key) + "]");
  }
  train->add_option("--out", train_out, "output directory")->required();

  // score
  auto* score = app.add_subcommand("score", "score every node with a trained checkpoint");
  std::string score_bundle, score_checkpoint, score_out;
  ConfigLayers score_layers;
  score->add_option("--bundle", score_bundle, "bundle manifest")->required()->check(CLI::ExistingFile);
  score->add_option("--checkpoint", score_checkpoint, "model checkpoint")->required()->check(CLI::ExistingFile);
  score->add_option("--config", score_layers.file, "key = value config file")->check(CLI::ExistingFile);
  score_layers.options["beta"] = score->add_option("--beta", score_layers.flags["beta"], config_help().at("beta"))
                                     ->check(CLI::Range(0.0, 1.0));
  score_layers.options["score_normalizer"] =
      score->add_option("--normalizer", score_layers.flags["score_normalizer"], config_help().at("score_normalizer"))
          ->check(CLI::IsMember({"zscore", "minmax", "none"}));
  score_layers.options["ridge"] = score->add_option("--ridge", score_layers.flags["ridge"], config_help().at("ridge"));
  score_layers.options["min_per_view"] =
      score->add_option("--min-per-view", score_layers.flags["min_per_view"], config_help().at("min_per_view"));
  score->add_option("--out", score_out, "output directory")->required();

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "AUC and Recall@K of a score report");
  std::string eval_scores, eval_labels, eval_bundle, eval_out;
  std::vector<std::size_t> eval_k{50};
  evaluate->add_option("--scores", eval_scores, "score report")->required()->check(CLI::ExistingFile);
  auto* labels_opt =
      evaluate->add_option("--labels", eval_labels, "label file (one anomalous node index per line)")
          ->check(CLI::ExistingFile);
  evaluate->add_option("--bundle", eval_bundle, "bundle whose labels to use")
      ->check(CLI::ExistingFile)
      ->excludes(labels_opt);
  evaluate->add_option("--k", eval_k, "comma list of K for Recall@K")->delimiter(',')->capture_default_str();
  evaluate->add_option("--out", eval_out, "output directory")->required();

  // diagnose
  auto* diagnose = app.add_subcommand("diagnose", "run oracle checks; exit 1 if any fails");
  bool diag_all = false;
  std::vector<std::string> diag_only;
  std::optional<std::uint64_t> diag_seed;
  std::string diag_normalization = "row", diag_out;
  std::vector<std::size_t> diag_sizes{250, 500, 1000, 2000};
  std::size_t diag_reps = 5, diag_pairs = 256;
  const std::vector<std::string> suites{"lemma1", "lemma2", "gradient", "complexity"};
  auto* all_opt = diagnose->add_flag("--all", diag_all, "run every suite (default)");
  diagnose->add_option("--only", diag_only, "comma list of suites: lemma1,lemma2,gradient,complexity")
      ->delimiter(',')
      ->check(CLI::IsMember(suites))
      ->excludes(all_opt);
  diagnose->add_option("--seed", diag_seed, "random seed (default: drawn from entropy)");
  diagnose->add_option("--lemma2-normalization", diag_normalization, "similarity normalization for the lemma2 check")
      ->check(CLI::IsMember({"row", "symmetric"}))
      ->capture_default_str();
  diagnose->add_option("--complexity-sizes", diag_sizes, "node counts for the scaling probe")
      ->delimiter(',')
      ->capture_default_str();
  diagnose->add_option("--complexity-repetitions", diag_reps, "timed iterations per size")->capture_default_str();
  diagnose->add_option("--sampled-pairs", diag_pairs, "pair sample for the sampled scaling probe")
      ->capture_default_str();
  diagnose->add_option("--out", diag_out, "output directory")->required();

  // replay
  auto* replay_cmd = app.add_subcommand("replay", "re-run a recorded manifest and compare outputs");
  std::string replay_manifest, replay_out;
  replay_cmd->add_option("manifest", replay_manifest, "run.manifest.json of the original run")
      ->required()
      ->check(CLI::ExistingFile);
  replay_cmd->add_option("--out", replay_out, "output directory for the re-run")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? ok : usage;
  }

  try {
    if (*replay_cmd) return replay(replay_manifest, replay_out);
    json args;
    if (*synth) {
      args["nodes"] = sspec.n;
      args["communities"] = sspec.communities;
      args["intra"] = sspec.intra_prob;
      args["inter"] = sspec.inter_prob;
      args["feature_dim"] = sspec.feature_dim;
      args["separation"] = sspec.separation;
      args["views"] = sspec.views;
      args["mask"] = sspec.mask_prob;
      args["seed"] = synth_seed.value_or(entropy_seed());
      sigil::SyntheticSpec check = sspec;
      check.validate();
      return run("synth", args, synth_out);
    }
    if (*inject) {
      args["bundle"] = absolute_path(inject_bundle);
      args["clique_size"] = plan.clique_size;
      args["cliques"] = plan.clique_count;
      args["attr"] = plan.attr_anomaly_count;
      args["k"] = plan.attr_candidate_count;
      args["seed"] = inject_seed.value_or(entropy_seed());
      plan.validate();
      return run("inject", args, inject_out);
    }
    if (*train) {
      std::map<std::string, bool> set;
      sigil::TrainConfig config = resolve_config(train_layers, set);
      if (!set["layers"]) config.layers = config.clusters.size();
      if (!set["seed"]) config.seed = entropy_seed();
      config.validate();
      args["bundle"] = absolute_path(train_bundle);
      args["seed"] = config.seed;
      args["config"] = config_json(config);
      return run("train", args, train_out);
    }
    if (*score) {
      std::map<std::string, bool> set;
      const sigil::TrainConfig config = resolve_config(score_layers, set);
      if (!(config.beta >= 0.0 && config.beta <= 1.0)) throw sigil::InvalidArgument("beta must lie in [0, 1]");
      if (config.ridge && !(*config.ridge >= 0.0)) throw sigil::InvalidArgument("ridge must be >= 0");
      args["bundle"] = absolute_path(score_bundle);
      args["checkpoint"] = absolute_path(score_checkpoint);
      args["beta"] = config.beta;
      args["score_normalizer"] = sigil::to_string(config.score_normalizer);
      args["ridge"] = config.ridge ? json(*config.ridge) : json(nullptr);
      args["min_per_view"] = config.min_per_view;
      return run("score", args, score_out);
    }
    if (*evaluate) {
      if (eval_labels.empty() && eval_bundle.empty()) {
        throw sigil::InvalidArgument("evaluate needs --labels or --bundle");
      }
      args["scores"] = absolute_path(eval_scores);
      args["labels"] = eval_labels.empty() ? json(nullptr) : json(absolute_path(eval_labels));
      args["bundle"] = eval_bundle.empty() ? json(nullptr) : json(absolute_path(eval_bundle));
      args["k"] = eval_k;
      return run("evaluate", args, eval_out);
    }
    if (*diagnose) {
      args["suites"] = diag_only.empty() ? suites : diag_only;
      args["seed"] = diag_seed.value_or(entropy_seed());
      args["lemma2_normalization"] = diag_normalization;
      args["complexity_sizes"] = diag_sizes;
      args["complexity_repetitions"] = diag_reps;
      args["sampled_pairs"] = diag_pairs;
      return run("diagnose", args, diag_out);
    }
  } catch (const sigil::NumericalError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return check_failed;
  } catch (const sigil::IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return io;
  } catch (const sigil::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return usage;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return io;
  } catch (const json::exception& e) {
    std::cerr << "error: malformed manifest: " << e.what() << '\n';
    return io;
  }
  return usage;
}

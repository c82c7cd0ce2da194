#pragma once

// Graph bundle: a key-value manifest naming per-view edge and feature files
// plus an optional label file. Paths are relative to the manifest.
//
//   views = 2
//   view.0.edges = view0.edges
//   view.0.features = view0.features
//   view.1.edges = view1.edges
//   view.1.features = view1.features
//   labels = labels.txt

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sigil/error.hpp"
#include "sigil/graph.hpp"
#include "sigil/keyvalue.hpp"

namespace sigil {

struct BundleFiles {
  std::vector<std::filesystem::path> edges;
  std::vector<std::filesystem::path> features;
  std::optional<std::filesystem::path> labels;

  std::vector<std::filesystem::path> all() const {
    std::vector<std::filesystem::path> out;
    for (std::size_t a = 0; a < edges.size(); ++a) {
      out.push_back(edges[a]);
      out.push_back(features[a]);
    }
    if (labels) out.push_back(*labels);
    return out;
  }
};

inline BundleFiles read_bundle_manifest(const std::filesystem::path& manifest) {
  std::map<std::string, std::string> entries;
  for (auto& [k, v] : read_key_values(manifest)) {
    if (!entries.emplace(k, v).second) throw InvalidArgument(manifest.string() + ": duplicate key '" + k + "'");
  }
  auto take = [&](const std::string& key) {
    const auto it = entries.find(key);
    if (it == entries.end()) throw InvalidArgument(manifest.string() + ": missing key '" + key + "'");
    std::string value = it->second;
    entries.erase(it);
    return value;
  };
  const std::filesystem::path base = manifest.parent_path();
  const std::string views_text = take("views");
  const auto views = detail::parse_number<std::size_t>(views_text, manifest.string());
  if (views == 0) throw InvalidArgument(manifest.string() + ": views must be >= 1");
  BundleFiles files;
  for (std::size_t a = 0; a < views; ++a) {
    files.edges.push_back(base / take("view." + std::to_string(a) + ".edges"));
    files.features.push_back(base / take("view." + std::to_string(a) + ".features"));
  }
  if (entries.count("labels")) files.labels = base / take("labels");
  if (!entries.empty()) {
    throw InvalidArgument(manifest.string() + ": unknown key '" + entries.begin()->first + "'");
  }
  return files;
}

inline MultiViewGraph load_bundle(const std::filesystem::path& manifest) {
  const BundleFiles files = read_bundle_manifest(manifest);
  return load_graph(files.edges, files.features, files.labels);
}

/// Writes every view, the labels (empty file when unlabeled), and the manifest
/// into `directory`. Returns the manifest path.
inline std::filesystem::path write_bundle(const std::filesystem::path& directory, const MultiViewGraph& graph) {
  std::filesystem::create_directories(directory);
  KeyValues manifest{{"views", std::to_string(graph.num_views())}};
  for (std::size_t a = 0; a < graph.num_views(); ++a) {
    const std::string edges = "view" + std::to_string(a) + ".edges";
    const std::string features = "view" + std::to_string(a) + ".features";
    write_edge_file(directory / edges, graph.view(a));
    write_feature_file(directory / features, graph.view(a).features());
    manifest.emplace_back("view." + std::to_string(a) + ".edges", edges);
    manifest.emplace_back("view." + std::to_string(a) + ".features", features);
  }
  write_label_file(directory / "labels.txt",
                   graph.labels() ? *graph.labels() : AnomalyLabels::none(graph.num_nodes()));
  manifest.emplace_back("labels", "labels.txt");
  const std::filesystem::path path = directory / "bundle.manifest";
  std::ofstream out = detail::open_output(path);
  out << format_key_values(manifest);
  if (!out) throw IoError("failed writing " + path.string());
  return path;
}

}  // namespace sigil

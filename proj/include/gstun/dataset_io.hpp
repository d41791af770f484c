#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "gstun/graph.hpp"

namespace gstun {

// Loader for the plain-text graph-classification directory layout:
//
//   A.txt               edge list, one "i,j" pair per line, node ids 1-based
//                       and global across the whole directory
//   graph_indicator.txt line k holds the 1-based graph id of node k
//   graph_labels.txt    one integer class label per graph
//   node_attributes.txt optional, one scalar signal value per node (extra
//                       comma-separated columns are ignored)
//
// Files may also carry a dataset prefix ("<name>_A.txt" etc.); the bare names
// win when both exist. Edge lists may name each undirected edge once or in
// both directions, but mixing the styles is rejected: as soon as one mirrored
// pair appears, every edge must have its mirror.
//
// Graphs with no attribute file get degree-derived signals. Every signal is
// rescaled per graph by its max absolute value.

namespace detail {

inline std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

inline bool blank(const std::string& s) {
  return s.find_first_not_of(" \t") == std::string::npos;
}

inline long parse_long(const std::string& file, long line_no, const std::string& token) {
  const char* begin = token.c_str();
  char* end = nullptr;
  const long value = std::strtol(begin, &end, 10);
  while (end && (*end == ' ' || *end == '\t')) ++end;
  if (end == begin || (end && *end != '\0'))
    throw ParseError(file, line_no, "expected an integer, got '" + token + "'");
  return value;
}

inline double parse_double(const std::string& file, long line_no, const std::string& token) {
  const char* begin = token.c_str();
  char* end = nullptr;
  const double value = std::strtod(begin, &end);
  while (end && (*end == ' ' || *end == '\t')) ++end;
  if (end == begin || (end && *end != '\0'))
    throw ParseError(file, line_no, "expected a number, got '" + token + "'");
  return value;
}

inline std::string strip(const std::string& s) {
  const auto a = s.find_first_not_of(" \t");
  const auto b = s.find_last_not_of(" \t");
  if (a == std::string::npos) return "";
  return s.substr(a, b - a + 1);
}

// Finds "A.txt" or "<prefix>_A.txt" in dir; returns the resolved path.
inline std::string resolve_file(const std::string& dir, const std::string& bare, bool required) {
  namespace fs = std::filesystem;
  const fs::path direct = fs::path(dir) / bare;
  if (fs::exists(direct)) return direct.string();
  const std::string suffix = "_" + bare;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string name = entry.path().filename().string();
    if (name.size() > suffix.size() &&
        name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0)
      return entry.path().string();
  }
  if (required) throw ArgumentError("dataset directory " + dir + " is missing " + bare);
  return "";
}

}  // namespace detail

inline Dataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw ArgumentError(dir + " is not a directory");

  const std::string indicator_path = detail::resolve_file(dir, "graph_indicator.txt", true);
  const std::string edges_path = detail::resolve_file(dir, "A.txt", true);
  const std::string labels_path = detail::resolve_file(dir, "graph_labels.txt", true);
  const std::string attrs_path = detail::resolve_file(dir, "node_attributes.txt", false);

  // Node -> graph map. Ids must be 1-based, start at 1, and stay grouped so
  // each graph occupies one contiguous block of node ids.
  const auto indicator_lines = detail::read_lines(indicator_path);
  std::vector<int> graph_of_node;  // 0-based graph index per node
  int graph_count = 0;
  for (long ln = 1; ln <= static_cast<long>(indicator_lines.size()); ++ln) {
    const std::string& raw = indicator_lines[static_cast<std::size_t>(ln - 1)];
    if (detail::blank(raw)) continue;
    const long id = detail::parse_long(indicator_path, ln, detail::strip(raw));
    if (id < 1)
      throw StructuralError(indicator_path + ":" + std::to_string(ln) +
                            ": graph id must be >= 1, got " + std::to_string(id));
    if (id > graph_count + 1)
      throw StructuralError(indicator_path + ":" + std::to_string(ln) + ": graph id " +
                            std::to_string(id) + " skips ahead (ids must be grouped 1,1,...,2,...)");
    if (id == graph_count + 1) ++graph_count;
    if (id < graph_count)
      throw StructuralError(indicator_path + ":" + std::to_string(ln) + ": graph id " +
                            std::to_string(id) + " appears after graph " +
                            std::to_string(graph_count) + " (ids must be grouped)");
    graph_of_node.push_back(static_cast<int>(id) - 1);
  }
  const int total_nodes = static_cast<int>(graph_of_node.size());
  if (total_nodes == 0) throw StructuralError(indicator_path + ": no nodes declared");

  // Node id offsets per graph, so global 1-based ids map to local 0-based.
  std::vector<int> graph_size(static_cast<std::size_t>(graph_count), 0);
  for (int g : graph_of_node) ++graph_size[static_cast<std::size_t>(g)];
  std::vector<int> first_node(static_cast<std::size_t>(graph_count), 0);
  for (int g = 1; g < graph_count; ++g)
    first_node[static_cast<std::size_t>(g)] =
        first_node[static_cast<std::size_t>(g - 1)] + graph_size[static_cast<std::size_t>(g - 1)];

  // Labels.
  const auto label_lines = detail::read_lines(labels_path);
  std::vector<int> labels;
  for (long ln = 1; ln <= static_cast<long>(label_lines.size()); ++ln) {
    const std::string& raw = label_lines[static_cast<std::size_t>(ln - 1)];
    if (detail::blank(raw)) continue;
    labels.push_back(static_cast<int>(detail::parse_long(labels_path, ln, detail::strip(raw))));
  }
  if (static_cast<int>(labels.size()) != graph_count)
    throw StructuralError(labels_path + ": " + std::to_string(labels.size()) +
                          " labels for " + std::to_string(graph_count) + " graphs");

  // Optional scalar attributes.
  std::vector<double> attrs;
  const bool have_attrs = !attrs_path.empty();
  if (have_attrs) {
    const auto attr_lines = detail::read_lines(attrs_path);
    for (long ln = 1; ln <= static_cast<long>(attr_lines.size()); ++ln) {
      const std::string& raw = attr_lines[static_cast<std::size_t>(ln - 1)];
      if (detail::blank(raw)) continue;
      const auto comma = raw.find(',');
      const std::string first = detail::strip(comma == std::string::npos ? raw : raw.substr(0, comma));
      attrs.push_back(detail::parse_double(attrs_path, ln, first));
    }
    if (static_cast<int>(attrs.size()) != total_nodes)
      throw StructuralError(attrs_path + ": " + std::to_string(attrs.size()) +
                            " attribute rows for " + std::to_string(total_nodes) + " nodes");
  }

  // Graph shells.
  Dataset ds;
  ds.graphs.reserve(static_cast<std::size_t>(graph_count));
  for (int g = 0; g < graph_count; ++g) {
    const int n = graph_size[static_cast<std::size_t>(g)];
    Graph gr;
    gr.adjacency = Eigen::MatrixXd::Zero(n, n);
    gr.features = Eigen::VectorXd::Zero(n);
    gr.label = labels[static_cast<std::size_t>(g)];
    gr.graph_id = g + 1;
    gr.active_count = n;
    ds.graphs.push_back(std::move(gr));
  }

  // Edges.
  const auto edge_lines = detail::read_lines(edges_path);
  std::set<std::pair<int, int>> seen;  // directed pairs, global 0-based
  bool mirrored_style = false;
  for (long ln = 1; ln <= static_cast<long>(edge_lines.size()); ++ln) {
    const std::string& raw = edge_lines[static_cast<std::size_t>(ln - 1)];
    if (detail::blank(raw)) continue;
    const auto comma = raw.find(',');
    if (comma == std::string::npos)
      throw ParseError(edges_path, ln, "expected 'i,j', got '" + raw + "'");
    const long i1 = detail::parse_long(edges_path, ln, detail::strip(raw.substr(0, comma)));
    const long j1 = detail::parse_long(edges_path, ln, detail::strip(raw.substr(comma + 1)));
    if (i1 < 1 || i1 > total_nodes || j1 < 1 || j1 > total_nodes)
      throw StructuralError(edges_path + ":" + std::to_string(ln) + ": node id out of range (" +
                            std::to_string(i1) + "," + std::to_string(j1) + "), " +
                            std::to_string(total_nodes) + " nodes declared");
    const int i = static_cast<int>(i1) - 1;
    const int j = static_cast<int>(j1) - 1;
    if (i == j)
      throw StructuralError(edges_path + ":" + std::to_string(ln) + ": self-loop at node " +
                            std::to_string(i1));
    if (graph_of_node[static_cast<std::size_t>(i)] != graph_of_node[static_cast<std::size_t>(j)])
      throw StructuralError(edges_path + ":" + std::to_string(ln) + ": edge (" +
                            std::to_string(i1) + "," + std::to_string(j1) +
                            ") crosses graph boundaries");
    if (!seen.insert({i, j}).second)
      throw StructuralError(edges_path + ":" + std::to_string(ln) + ": duplicate edge (" +
                            std::to_string(i1) + "," + std::to_string(j1) + ")");
    if (seen.count({j, i})) mirrored_style = true;
    const int g = graph_of_node[static_cast<std::size_t>(i)];
    const int off = first_node[static_cast<std::size_t>(g)];
    ds.graphs[static_cast<std::size_t>(g)].adjacency(i - off, j - off) = 1.0;
    ds.graphs[static_cast<std::size_t>(g)].adjacency(j - off, i - off) = 1.0;
  }
  // Mixed-style check: once any mirrored pair shows up, demand all of them.
  if (mirrored_style) {
    for (const auto& [i, j] : seen) {
      if (!seen.count({j, i}))
        throw StructuralError(edges_path + ": edge list is asymmetric: (" +
                              std::to_string(i + 1) + "," + std::to_string(j + 1) +
                              ") has no mirrored pair while other edges do");
    }
  }

  // Signals.
  for (int g = 0; g < graph_count; ++g) {
    Graph& gr = ds.graphs[static_cast<std::size_t>(g)];
    if (have_attrs) {
      const int off = first_node[static_cast<std::size_t>(g)];
      for (int v = 0; v < gr.size(); ++v)
        gr.features[v] = attrs[static_cast<std::size_t>(off + v)];
    } else {
      gr.features = degree_features(gr.adjacency);
    }
    normalize_features(gr);
    validate_graph(gr);
  }

  // Default split: everything is training data until a split is assigned.
  ds.split.train.resize(static_cast<std::size_t>(graph_count));
  for (int g = 0; g < graph_count; ++g) ds.split.train[static_cast<std::size_t>(g)] = g;
  return ds;
}

// Writes a dataset in the same directory layout (both edge directions).
// Only unweighted graphs round-trip; nonzero weights must be 1.
inline void save_dataset(const Dataset& ds, const std::string& dir,
                         bool write_attributes = true) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ofstream a(fs::path(dir) / "A.txt");
  std::ofstream ind(fs::path(dir) / "graph_indicator.txt");
  std::ofstream lab(fs::path(dir) / "graph_labels.txt");
  std::ofstream att;
  if (write_attributes) att.open(fs::path(dir) / "node_attributes.txt");

  int base = 0;
  for (std::size_t g = 0; g < ds.graphs.size(); ++g) {
    const Graph& gr = ds.graphs[g];
    for (int i = 0; i < gr.size(); ++i) {
      ind << (g + 1) << "\n";
      if (write_attributes) att << gr.features[i] << "\n";
      for (int j = 0; j < gr.size(); ++j) {
        const double w = gr.adjacency(i, j);
        if (w == 0.0) continue;
        if (w != 1.0)
          throw ArgumentError("save_dataset: directory format is unweighted, got weight " +
                              std::to_string(w));
        a << (base + i + 1) << "," << (base + j + 1) << "\n";
      }
    }
    lab << gr.label << "\n";
    base += gr.size();
  }
}

}  // namespace gstun

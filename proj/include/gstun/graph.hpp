#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gstun/errors.hpp"

namespace gstun {

// One graph with a scalar signal on its nodes.
//
// adjacency is symmetric with an all-zero diagonal and nonnegative weights.
// features holds one value per node, normalized to [-1, 1] by the loaders.
// active_count tracks in-place ("masked") node removals: a masked node keeps
// its row/column and feature slot but they are zeroed and it no longer counts
// toward averaging denominators. Freshly built graphs have active_count == g.
struct Graph {
  Eigen::MatrixXd adjacency;
  Eigen::VectorXd features;
  int label = 0;
  int graph_id = 0;
  int active_count = 0;

  int size() const { return static_cast<int>(adjacency.rows()); }

  Eigen::VectorXd degrees() const { return adjacency.rowwise().sum(); }
};

inline Graph make_graph(Eigen::MatrixXd adjacency, Eigen::VectorXd features, int label = 0,
                        int graph_id = 0) {
  Graph g;
  g.adjacency = std::move(adjacency);
  g.features = std::move(features);
  g.label = label;
  g.graph_id = graph_id;
  g.active_count = g.size();
  return g;
}

// Checks the structural invariants; throws on the first violation.
inline void validate_graph(const Graph& g, double tol = 1e-12) {
  const int n = g.size();
  if (n < 1) throw StructuralError("graph must have at least one node");
  if (g.adjacency.cols() != n)
    throw StructuralError("adjacency matrix is not square");
  if (g.features.size() != n)
    throw StructuralError("feature vector length " + std::to_string(g.features.size()) +
                          " does not match node count " + std::to_string(n));
  if (g.active_count < 1 || g.active_count > n)
    throw StructuralError("active node count out of range");
  for (int i = 0; i < n; ++i) {
    if (g.adjacency(i, i) != 0.0)
      throw StructuralError("nonzero diagonal entry at node " + std::to_string(i));
    for (int j = i + 1; j < n; ++j) {
      if (std::abs(g.adjacency(i, j) - g.adjacency(j, i)) > tol)
        throw StructuralError("adjacency not symmetric at (" + std::to_string(i) + "," +
                              std::to_string(j) + ")");
      if (g.adjacency(i, j) < 0.0)
        throw StructuralError("negative edge weight at (" + std::to_string(i) + "," +
                              std::to_string(j) + ")");
    }
  }
}

// Rescales features into [-1, 1] by the max absolute value. A graph whose
// signal is identically zero is left alone.
inline void normalize_features(Graph& g) {
  const double m = g.features.cwiseAbs().maxCoeff();
  if (m > 0.0) g.features /= m;
}

// Degree-derived signal for datasets that ship no node attributes.
// Raw degrees, handed to normalize_features by the callers.
inline Eigen::VectorXd degree_features(const Eigen::MatrixXd& adjacency) {
  return adjacency.rowwise().sum();
}

inline void check_node_index(const Graph& g, int v, const char* op) {
  if (v < 0 || v >= g.size())
    throw ArgumentError(std::string(op) + ": node index " + std::to_string(v) +
                        " out of range for graph of size " + std::to_string(g.size()));
}

// Zeroes one node's feature entry. Topology and dimensions are untouched.
inline Graph zero_feature(const Graph& g, int v) {
  check_node_index(g, v, "zero_feature");
  Graph out = g;
  out.features[v] = 0.0;
  return out;
}

// Removes node v by deleting its row/column and feature slot (the "shrink"
// representation). Refuses to empty the graph; callers that want to drop the
// final node should remove the whole graph from the dataset instead.
inline Graph remove_node(const Graph& g, int v) {
  check_node_index(g, v, "remove_node");
  const int n = g.size();
  if (n == 1)
    throw DegenerateGraphError(
        "remove_node: removing the last node would leave an empty graph; "
        "remove the whole graph instead");
  Graph out;
  out.label = g.label;
  out.graph_id = g.graph_id;
  out.adjacency.resize(n - 1, n - 1);
  out.features.resize(n - 1);
  for (int i = 0, ii = 0; i < n; ++i) {
    if (i == v) continue;
    out.features[ii] = g.features[i];
    for (int j = 0, jj = 0; j < n; ++j) {
      if (j == v) continue;
      out.adjacency(ii, jj) = g.adjacency(i, j);
      ++jj;
    }
    ++ii;
  }
  out.active_count = g.active_count - 1;
  return out;
}

// Removes node v in place: zero its feature and incident edges, keep the
// dimension, and shrink the averaging denominator. Equivalent to remove_node
// for every embedding this library produces; useful when cached operator
// powers should keep their size.
inline Graph remove_node_masked(const Graph& g, int v) {
  check_node_index(g, v, "remove_node_masked");
  if (g.active_count == 1)
    throw DegenerateGraphError(
        "remove_node_masked: removing the last active node would leave an empty graph; "
        "remove the whole graph instead");
  Graph out = g;
  out.adjacency.row(v).setZero();
  out.adjacency.col(v).setZero();
  out.features[v] = 0.0;
  out.active_count = g.active_count - 1;
  return out;
}

// Index lists into Dataset::graphs. Graphs not mentioned anywhere default to
// the training side when a split is built from ratios.
struct Split {
  std::vector<int> train;
  std::vector<int> validation;
  std::vector<int> test;
};

struct Dataset {
  std::vector<Graph> graphs;
  Split split;

  int size() const { return static_cast<int>(graphs.size()); }
};

}  // namespace gstun

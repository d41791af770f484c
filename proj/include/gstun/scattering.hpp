#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "gstun/flops.hpp"
#include "gstun/graph.hpp"
#include "gstun/wavelets.hpp"

namespace gstun {

// Scattering-tree configuration. The tree has `layers` levels of signals:
// level 0 is the raw node signal, each deeper level applies every band filter
// followed by an entrywise modulus. Every tree node emits `family.moments`
// coefficients: the low-pass average (q = 1) and higher moments of the
// modulus (q >= 2).
struct ScatteringConfig {
  WaveletFamily family;
  int layers = 2;  // L >= 1; L = 1 keeps only the level-0 coefficients

  int branching() const { return family.bank_size(); }

  // Number of tree paths: sum_{l=0}^{L-1} branching^l.
  int tree_node_count() const {
    int count = 0;
    int level = 1;
    for (int l = 0; l < layers; ++l) {
      count += level;
      level *= branching();
    }
    return count;
  }

  // Embedding width: moments per tree path.
  int dimension() const { return family.moments * tree_node_count(); }
};

inline void validate_config(const ScatteringConfig& cfg) {
  validate_family(cfg.family);
  if (cfg.layers < 1) throw ArgumentError("scattering config needs layers >= 1");
}

// Which tree path and moment order a coordinate belongs to. path holds the
// band indices from the root down (empty for the root signal).
struct PathKey {
  std::vector<int> path;
  int moment = 1;

  std::string label() const {
    std::string s;
    if (path.empty()) {
      s = "root";
    } else {
      for (std::size_t i = 0; i < path.size(); ++i) {
        if (i) s += '.';
        s += std::to_string(path[i]);
      }
    }
    s += ".m" + std::to_string(moment);
    return s;
  }
};

inline std::vector<PathKey> coordinate_keys(const ScatteringConfig& cfg) {
  std::vector<PathKey> keys;
  keys.reserve(static_cast<std::size_t>(cfg.dimension()));
  std::vector<std::vector<int>> frontier = {{}};
  const int bands = cfg.branching();
  const bool lazy = cfg.family.kind == WaveletKind::Diffusion ||
                    cfg.family.kind == WaveletKind::Geometric;
  const int first_band = lazy ? 0 : 1;
  for (int l = 0; l < cfg.layers; ++l) {
    for (const auto& p : frontier)
      for (int q = 1; q <= cfg.family.moments; ++q) keys.push_back({p, q});
    if (l + 1 == cfg.layers) break;
    std::vector<std::vector<int>> next;
    next.reserve(frontier.size() * static_cast<std::size_t>(bands));
    for (const auto& p : frontier) {
      for (int b = 0; b < bands; ++b) {
        auto child = p;
        child.push_back(first_band + b);
        next.push_back(std::move(child));
      }
    }
    frontier = std::move(next);
  }
  return keys;
}

struct Embedding {
  Eigen::VectorXd values;
  std::vector<PathKey> paths;  // one key per coordinate, same order
};

namespace detail {

// Coefficients for one tree signal: low-pass average, then higher moduli
// moments averaged over the active nodes.
inline void emit_coefficients(const Eigen::VectorXd& u, const Eigen::VectorXd& low_pass,
                              int moments, int active_count, std::vector<double>& out) {
  out.push_back(low_pass.dot(u));
  if (moments == 1) return;
  Eigen::VectorXd a = u.cwiseAbs();
  Eigen::VectorXd p = a;
  for (int q = 2; q <= moments; ++q) {
    p = p.cwiseProduct(a);
    out.push_back(p.sum() / active_count);
  }
}

}  // namespace detail

// Embeds one graph by materializing its filter bank. Works for every family.
inline Embedding embed(const Graph& g, const ScatteringConfig& cfg) {
  validate_config(cfg);
  const FilterBank bank = build_filter_bank(g, cfg.family);
  if (bank.graph_size != g.size())
    throw InternalError("filter bank size does not match the graph");
  std::vector<double> coeffs;
  coeffs.reserve(static_cast<std::size_t>(cfg.dimension()));
  std::vector<Eigen::VectorXd> frontier = {g.features};
  for (int l = 0; l < cfg.layers; ++l) {
    for (const auto& u : frontier)
      detail::emit_coefficients(u, bank.low_pass, cfg.family.moments, g.active_count, coeffs);
    if (l + 1 == cfg.layers) break;
    std::vector<Eigen::VectorXd> next;
    next.reserve(frontier.size() * bank.filters.size());
    for (const auto& u : frontier)
      for (const auto& h : bank.filters) next.push_back((h * u).cwiseAbs());
    frontier = std::move(next);
  }
  Embedding e;
  e.values = Eigen::Map<Eigen::VectorXd>(coeffs.data(), static_cast<Eigen::Index>(coeffs.size()));
  e.paths = coordinate_keys(cfg);
  return e;
}

// ---------------------------------------------------------------------------
// Cached operator powers for the polynomial families.
//
// The cache keeps every consecutive power shift^1 .. shift^(2^J) of the lazy
// operator. Band filters then reduce to two cached matvecs, and a node
// removal can patch all powers in O(K^2 s g^2) instead of rebuilding them
// cubically (s = degree of the removed node + 1).

struct PowerCache {
  WaveletKind kind = WaveletKind::Geometric;
  Eigen::MatrixXd shift;                 // current lazy operator
  std::vector<Eigen::MatrixXd> powers;   // powers[k-1] = shift^k, k = 1..max_degree
  int max_degree = 0;                    // 2^J

  int graph_size() const { return static_cast<int>(shift.rows()); }
};

inline bool is_polynomial_family(WaveletKind k) {
  return k == WaveletKind::Diffusion || k == WaveletKind::Geometric;
}

inline Eigen::MatrixXd lazy_operator(const Graph& g, WaveletKind kind) {
  if (kind == WaveletKind::Diffusion) return lazy_diffusion_operator(g);
  if (kind == WaveletKind::Geometric) return lazy_walk_operator(g);
  throw ArgumentError("lazy_operator: " + std::string(wavelet_kind_name(kind)) +
                      " is not a polynomial family");
}

inline PowerCache build_power_cache(const Graph& g, const WaveletFamily& family) {
  validate_family(family);
  if (!is_polynomial_family(family.kind))
    throw ArgumentError("power caches only exist for the diffusion/geometric families; "
                        "use embed() for spectral banks");
  PowerCache cache;
  cache.kind = family.kind;
  cache.shift = lazy_operator(g, family.kind);
  cache.max_degree = 1 << family.scales;
  cache.powers.reserve(static_cast<std::size_t>(cache.max_degree));
  cache.powers.push_back(cache.shift);
  for (int k = 2; k <= cache.max_degree; ++k)
    cache.powers.push_back(cache.powers.back() * cache.shift);
  return cache;
}

namespace detail {

inline void check_cache(const PowerCache& cache, const Graph& g, const ScatteringConfig& cfg) {
  if (!is_polynomial_family(cfg.family.kind))
    throw ArgumentError("cached embedding paths only support the diffusion/geometric families; "
                        "use embed() for spectral banks");
  if (cache.kind != cfg.family.kind)
    throw ArgumentError("power cache was built for a different wavelet family");
  if (cache.graph_size() != g.size())
    throw InternalError("power cache size " + std::to_string(cache.graph_size()) +
                        " does not match graph size " + std::to_string(g.size()));
  const int need = 1 << cfg.family.scales;
  if (cache.max_degree < need)
    throw ArgumentError("power cache degree " + std::to_string(cache.max_degree) +
                        " is too small for scales = " + std::to_string(cfg.family.scales) +
                        " (need " + std::to_string(need) + ")");
}

inline Eigen::VectorXd cached_power_matvec(const PowerCache& cache, int power,
                                           const Eigen::VectorXd& u) {
  if (power == 0) return u;
  return flops::matvec(cache.powers[static_cast<std::size_t>(power - 1)], u);
}

// Low-pass functional without materializing a bank.
inline Eigen::VectorXd low_pass_vector(const Graph& g, WaveletKind kind) {
  if (kind == WaveletKind::Diffusion) {
    const Eigen::VectorXd d = g.degrees();
    const double total = d.sum();
    if (total > 0.0) return d / total;
  }
  return Eigen::VectorXd::Constant(g.size(), 1.0 / g.active_count);
}

// Tree walk over cached powers; all matvecs are flop-counted.
inline Embedding embed_from_powers(const Graph& g, const PowerCache& cache,
                                   const ScatteringConfig& cfg) {
  const int scales = cfg.family.scales;
  const Eigen::VectorXd low_pass = low_pass_vector(g, cfg.family.kind);
  std::vector<double> coeffs;
  coeffs.reserve(static_cast<std::size_t>(cfg.dimension()));
  std::vector<Eigen::VectorXd> frontier = {g.features};
  for (int l = 0; l < cfg.layers; ++l) {
    for (const auto& u : frontier) {
      flops::add(2ull * static_cast<std::uint64_t>(g.size()) *
                 static_cast<std::uint64_t>(cfg.family.moments));
      emit_coefficients(u, low_pass, cfg.family.moments, g.active_count, coeffs);
    }
    if (l + 1 == cfg.layers) break;
    std::vector<Eigen::VectorXd> next;
    next.reserve(frontier.size() * static_cast<std::size_t>(scales + 1));
    for (const auto& u : frontier) {
      // Dyadic matvecs shift^(2^j) u once each, bands are their differences.
      std::vector<Eigen::VectorXd> pu(static_cast<std::size_t>(scales) + 1);
      for (int j = 0; j <= scales; ++j) pu[static_cast<std::size_t>(j)] =
          cached_power_matvec(cache, 1 << j, u);
      next.push_back((u - pu[0]).cwiseAbs());
      for (int j = 1; j <= scales; ++j)
        next.push_back((pu[static_cast<std::size_t>(j - 1)] - pu[static_cast<std::size_t>(j)])
                           .cwiseAbs());
    }
    frontier = std::move(next);
  }
  Embedding e;
  e.values = Eigen::Map<Eigen::VectorXd>(coeffs.data(), static_cast<Eigen::Index>(coeffs.size()));
  e.paths = coordinate_keys(cfg);
  return e;
}

}  // namespace detail

// Embeds a graph through an existing power cache (no operator rebuild). This
// is the cheap path after a feature edit, where the topology and therefore
// the cache are unchanged.
inline Embedding embed_with_cache(const Graph& g, const PowerCache& cache,
                                  const ScatteringConfig& cfg) {
  validate_config(cfg);
  detail::check_cache(cache, g, cfg);
  return detail::embed_from_powers(g, cache, cfg);
}

// Reference arm for cost comparisons: rebuilds the consecutive powers from
// scratch with dense (cubic, flop-counted) matrix products and then runs the
// same tree walk. Matches embed_with_cache output on an up-to-date cache.
inline Embedding embed_rebuild_counted(const Graph& g, const ScatteringConfig& cfg,
                                       PowerCache* rebuilt = nullptr) {
  validate_config(cfg);
  if (!is_polynomial_family(cfg.family.kind))
    throw ArgumentError("embed_rebuild_counted only supports the polynomial families");
  PowerCache cache;
  cache.kind = cfg.family.kind;
  cache.shift = lazy_operator(g, cfg.family.kind);
  flops::add(3ull * static_cast<std::uint64_t>(g.size()) * static_cast<std::uint64_t>(g.size()));
  cache.max_degree = 1 << cfg.family.scales;
  cache.powers.push_back(cache.shift);
  for (int k = 2; k <= cache.max_degree; ++k)
    cache.powers.push_back(flops::matmul(cache.powers.back(), cache.shift));
  Embedding e = detail::embed_from_powers(g, cache, cfg);
  if (rebuilt) *rebuilt = std::move(cache);
  return e;
}

// ---------------------------------------------------------------------------
// Incremental removal update.
//
// Removing node v re-normalizes every neighbor's degree, so the new lazy
// operator P' is not a low-rank perturbation of P. It is column-sparse,
// though: P' - P is supported on the columns (and, for the symmetric
// diffusion operator, rows) touched by v. Writing Delta = P' - P as a short
// list of rank-one terms, the power differences
//
//   G_k := P'^k - P^k  =  P^(k-1) Delta + G_(k-1) P'
//
// stay factored with O(s k) terms and only need matvecs against the cached
// old powers. Patching the cache costs O(K^2 s g^2) total, exact to roundoff
// including all degree renormalization.

struct IncrementalResult {
  Embedding embedding;
  Graph graph;  // masked post-removal graph
};

inline IncrementalResult embed_incremental(const Graph& g, int removed_node, PowerCache& cache,
                                           const ScatteringConfig& cfg) {
  validate_config(cfg);
  detail::check_cache(cache, g, cfg);
  check_node_index(g, removed_node, "embed_incremental");
  if (g.active_count <= 1)
    throw DegenerateGraphError(
        "embed_incremental: removing the last active node would leave an empty graph; "
        "remove the whole graph instead");

  const int n = g.size();
  const std::uint64_t n2 = static_cast<std::uint64_t>(n) * static_cast<std::uint64_t>(n);

  // Nodes whose operator entries can change: v and its current neighbors.
  std::vector<int> touched;
  touched.push_back(removed_node);
  for (int u = 0; u < n; ++u)
    if (u != removed_node && g.adjacency(u, removed_node) > 0.0) touched.push_back(u);

  Graph masked = remove_node_masked(g, removed_node);
  flops::charge_copy(static_cast<std::uint64_t>(n), static_cast<std::uint64_t>(n));

  const Eigen::MatrixXd shifted = lazy_operator(masked, cache.kind);
  flops::add(3ull * n2);
  Eigen::MatrixXd diff = shifted - cache.shift;
  flops::add(n2);

  // Factor diff into rank-one terms: full touched columns first, then the
  // residual of the touched rows (already-covered columns zeroed out).
  std::vector<std::pair<Eigen::VectorXd, Eigen::VectorXd>> terms;
  for (int c : touched) {
    if (diff.col(c).isZero(0.0)) continue;
    Eigen::VectorXd col = diff.col(c);
    Eigen::VectorXd basis = Eigen::VectorXd::Zero(n);
    basis[c] = 1.0;
    terms.emplace_back(std::move(col), std::move(basis));
    diff.col(c).setZero();
  }
  for (int r : touched) {
    if (diff.row(r).isZero(0.0)) continue;
    Eigen::VectorXd row = diff.row(r).transpose();
    Eigen::VectorXd basis = Eigen::VectorXd::Zero(n);
    basis[r] = 1.0;
    terms.emplace_back(std::move(basis), std::move(row));
    diff.row(r).setZero();
  }
  if (!diff.isZero(0.0))
    throw InternalError("operator update support leaked outside the touched rows/columns");

  // G_k in factored form for every k. layer[k-1] holds the terms of G_k.
  std::vector<std::vector<std::pair<Eigen::VectorXd, Eigen::VectorXd>>> layers(
      static_cast<std::size_t>(cache.max_degree));
  layers[0] = terms;
  for (int k = 2; k <= cache.max_degree; ++k) {
    auto& gk = layers[static_cast<std::size_t>(k - 1)];
    const Eigen::MatrixXd& old_power = cache.powers[static_cast<std::size_t>(k - 2)];
    for (const auto& [u, w] : terms) gk.emplace_back(flops::matvec(old_power, u), w);
    for (const auto& [u, w] : layers[static_cast<std::size_t>(k - 2)])
      gk.emplace_back(u, flops::matvec_t(shifted, w));
  }

  // Patch the cache only after every G_k stopped needing the old powers.
  for (int k = 1; k <= cache.max_degree; ++k)
    for (const auto& [u, w] : layers[static_cast<std::size_t>(k - 1)])
      flops::rank1_accumulate(cache.powers[static_cast<std::size_t>(k - 1)], u, w);
  cache.shift = shifted;

  IncrementalResult result;
  result.embedding = detail::embed_from_powers(masked, cache, cfg);
  result.graph = std::move(masked);
  return result;
}

// Whether the factored update beats rebuilding the powers outright for this
// removal. Per extra power the factored path does one matvec per diff term
// plus one per inherited G term and later a rank-one patch per term, about
// 2 n^2 m (K^2 + K - 1) flops for m touched columns, while the rebuild pays
// (K - 1) dense products, about 2 n^3 (K - 1). The break-even point is
// n ~ 10 m, so small or dense graphs should just rebuild.
inline bool incremental_update_pays_off(const Graph& g, int removed_node,
                                        const PowerCache& cache) {
  check_node_index(g, removed_node, "incremental_update_pays_off");
  const int n = g.size();
  int touched = 1;
  for (int u = 0; u < n; ++u)
    if (u != removed_node && g.adjacency(u, removed_node) > 0.0) ++touched;
  const std::int64_t k = cache.max_degree;
  const std::int64_t lhs = static_cast<std::int64_t>(touched) * (k * k + k - 1);
  const std::int64_t rhs = static_cast<std::int64_t>(n) * (k - 1);
  return lhs < rhs;
}

// ---------------------------------------------------------------------------
// Dataset embedding and export.

struct EmbeddedDataset {
  Eigen::MatrixXd z;             // one row per graph
  std::vector<int> labels;       // raw class labels, dataset order
  std::vector<int> graph_ids;
  std::vector<PathKey> paths;    // column keys
};

inline EmbeddedDataset embed_dataset(const Dataset& ds, const ScatteringConfig& cfg) {
  validate_config(cfg);
  EmbeddedDataset out;
  out.z.resize(ds.size(), cfg.dimension());
  out.labels.reserve(ds.graphs.size());
  out.graph_ids.reserve(ds.graphs.size());
  for (int i = 0; i < ds.size(); ++i) {
    const Graph& g = ds.graphs[static_cast<std::size_t>(i)];
    out.z.row(i) = embed(g, cfg).values.transpose();
    out.labels.push_back(g.label);
    out.graph_ids.push_back(g.graph_id);
  }
  out.paths = coordinate_keys(cfg);
  return out;
}

// CSV with one row per graph and path labels as header columns.
inline void write_embeddings_csv(std::ostream& os, const EmbeddedDataset& data) {
  os << "graph_id,label";
  for (const auto& key : data.paths) os << ',' << key.label();
  os << '\n';
  os.precision(17);
  for (Eigen::Index i = 0; i < data.z.rows(); ++i) {
    os << data.graph_ids[static_cast<std::size_t>(i)] << ','
       << data.labels[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < data.z.cols(); ++j) os << ',' << data.z(i, j);
    os << '\n';
  }
}

}  // namespace gstun

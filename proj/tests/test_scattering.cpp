#include <catch_amalgamated.hpp>

#include <cmath>
#include <map>
#include <sstream>

#include "gstun/scattering.hpp"
#include "oracles.hpp"

using namespace gstun;

namespace {

constexpr WaveletKind kAllFamilies[] = {WaveletKind::MonicCubic, WaveletKind::Itersine,
                                        WaveletKind::Diffusion, WaveletKind::Geometric};

// Look up every library coordinate in the oracle's path-indexed map.
void compare_with_oracle(const Graph& g, const ScatteringConfig& cfg, double tol) {
  const Embedding e = embed(g, cfg);
  const auto ref = oracle::scattering_coefficients(g, cfg);
  REQUIRE(e.values.size() == cfg.dimension());
  REQUIRE(e.paths.size() == static_cast<std::size_t>(cfg.dimension()));
  for (std::size_t i = 0; i < e.paths.size(); ++i) {
    std::vector<int> key;
    for (int component : e.paths[i].path)
      key.push_back(oracle::path_component_to_filter(cfg.family, component));
    const auto it = ref.find(key);
    REQUIRE(it != ref.end());
    const double want = it->second[static_cast<std::size_t>(e.paths[i].moment - 1)];
    REQUIRE(e.values[static_cast<Eigen::Index>(i)] == Catch::Approx(want).margin(tol));
  }
}

Graph permuted(const Graph& g, const std::vector<int>& perm) {
  const int n = g.size();
  Eigen::MatrixXd a(n, n);
  Eigen::VectorXd x(n);
  for (int i = 0; i < n; ++i) {
    x[perm[static_cast<std::size_t>(i)]] = g.features[i];
    for (int j = 0; j < n; ++j)
      a(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]) =
          g.adjacency(i, j);
  }
  return make_graph(std::move(a), std::move(x), g.label, g.graph_id);
}

}  // namespace

TEST_CASE("coordinate keys enumerate the tree breadth first") {
  const ScatteringConfig cfg{WaveletFamily{WaveletKind::MonicCubic, 3, 1}, 2};
  REQUIRE(cfg.branching() == 3);
  REQUIRE(cfg.tree_node_count() == 4);
  REQUIRE(cfg.dimension() == 4);
  const auto keys = coordinate_keys(cfg);
  REQUIRE(keys.size() == 4);
  REQUIRE(keys[0].label() == "root.m1");
  REQUIRE(keys[1].label() == "1.m1");
  REQUIRE(keys[2].label() == "2.m1");
  REQUIRE(keys[3].label() == "3.m1");

  // Lazy banks get the extra complement filter and start at band 0.
  const ScatteringConfig lazy{WaveletFamily{WaveletKind::Geometric, 3, 2}, 3};
  REQUIRE(lazy.branching() == 4);
  REQUIRE(lazy.tree_node_count() == 1 + 4 + 16);
  REQUIRE(lazy.dimension() == 42);
  const auto lk = coordinate_keys(lazy);
  REQUIRE(lk.size() == 42);
  REQUIRE(lk[0].label() == "root.m1");
  REQUIRE(lk[1].label() == "root.m2");
  REQUIRE(lk[2].label() == "0.m1");
  REQUIRE(lk[3].label() == "0.m2");
  REQUIRE(lk[10].label() == "0.0.m1");  // layer-2 paths follow all of layer 1
  REQUIRE(lk[10].path.size() == 2);
  // Moments innermost, then bands lexicographic.
  REQUIRE(lk[11].label() == "0.0.m2");
  REQUIRE(lk[12].label() == "0.1.m1");
}

TEST_CASE("embedding dimension follows the path-count formula") {
  // Spectral bank, three scales, two layers, one moment: 1 + 3 = 4.
  const ScatteringConfig cfg{WaveletFamily{WaveletKind::MonicCubic, 3, 1}, 2};
  Rng rng(2);
  const Graph g = oracle::random_graph(6, 0.5, rng);
  REQUIRE(embed(g, cfg).values.size() == 4);
}

TEST_CASE("embeddings match the independent tree walk") {
  Rng rng(101);
  for (const WaveletKind kind : kAllFamilies) {
    for (const int layers : {1, 2, 3}) {
      for (const int moments : {1, 2}) {
        const ScatteringConfig cfg{WaveletFamily{kind, 2, moments}, layers};
        const Graph g = oracle::random_graph(7, 0.4, rng);
        compare_with_oracle(g, cfg, 1e-11);
      }
    }
  }
  // Larger instance, deeper scales.
  for (const WaveletKind kind : kAllFamilies) {
    const ScatteringConfig cfg{WaveletFamily{kind, 3, 2}, 2};
    const Graph g = oracle::random_graph(13, 0.3, rng, true);
    compare_with_oracle(g, cfg, 1e-11);
  }
}

TEST_CASE("embeddings include isolated nodes gracefully") {
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(4, 4);
  a(0, 1) = a(1, 0) = 1.0;  // nodes 2 and 3 isolated
  Eigen::VectorXd x(4);
  x << 0.5, -0.25, 1.0, 0.0;
  const Graph g = make_graph(a, x);
  for (const WaveletKind kind : kAllFamilies) {
    const ScatteringConfig cfg{WaveletFamily{kind, 2, 2}, 2};
    const Embedding e = embed(g, cfg);
    REQUIRE(e.values.allFinite());
    compare_with_oracle(g, cfg, 1e-11);
  }
}

TEST_CASE("single-node graph keeps only the root coefficient") {
  const Graph g = make_graph(Eigen::MatrixXd::Zero(1, 1),
                             Eigen::VectorXd::Constant(1, 0.7));
  const ScatteringConfig cfg{WaveletFamily{WaveletKind::Diffusion, 2, 1}, 2};
  const Embedding e = embed(g, cfg);
  REQUIRE(e.values.size() == 4);
  REQUIRE(e.values[0] == Catch::Approx(0.7));
  for (int i = 1; i < 4; ++i)
    REQUIRE(e.values[i] == Catch::Approx(0.0).margin(1e-15));
}

TEST_CASE("embeddings are permutation invariant") {
  Rng rng(7);
  for (const WaveletKind kind : kAllFamilies) {
    const ScatteringConfig cfg{WaveletFamily{kind, 3, 2}, 2};
    const Graph g = oracle::random_graph(10, 0.35, rng);
    std::vector<int> perm(10);
    for (int i = 0; i < 10; ++i) perm[static_cast<std::size_t>(i)] = i;
    Rng shuffler(rng.next_u64());
    shuffler.shuffle(perm);
    const Graph h = permuted(g, perm);
    const Embedding eg = embed(g, cfg);
    const Embedding eh = embed(h, cfg);
    REQUIRE((eg.values - eh.values).lpNorm<Eigen::Infinity>() < 1e-10);
  }
}

TEST_CASE("deeper layers stay nonnegative") {
  Rng rng(19);
  for (const WaveletKind kind : kAllFamilies) {
    const ScatteringConfig cfg{WaveletFamily{kind, 2, 2}, 3};
    const Graph g = oracle::random_graph(9, 0.4, rng);
    const Embedding e = embed(g, cfg);
    for (std::size_t i = 0; i < e.paths.size(); ++i) {
      // Only the root mean sees the raw signed signal; every other
      // coefficient averages a modulus or an absolute moment.
      if (e.paths[i].path.empty() && e.paths[i].moment == 1) continue;
      REQUIRE(e.values[static_cast<Eigen::Index>(i)] >= -1e-12);
    }
  }
}

TEST_CASE("masked removal equals shrinking removal") {
  Rng rng(29);
  for (const WaveletKind kind : kAllFamilies) {
    const ScatteringConfig cfg{WaveletFamily{kind, 3, 2}, 2};
    const Graph g = oracle::random_graph(8, 0.45, rng);
    for (int v = 0; v < g.size(); v += 3) {
      const Embedding masked = embed(remove_node_masked(g, v), cfg);
      const Embedding shrunk = embed(remove_node(g, v), cfg);
      REQUIRE((masked.values - shrunk.values).lpNorm<Eigen::Infinity>() < 1e-11);
    }
  }
}

TEST_CASE("embedding energy respects the frame constant") {
  Rng rng(37);
  for (const WaveletKind kind :
       {WaveletKind::Itersine, WaveletKind::Geometric, WaveletKind::MonicCubic}) {
    for (int rep = 0; rep < 8; ++rep) {
      Graph g = oracle::random_graph(9, 0.4, rng);
      normalize_features(g);
      const ScatteringConfig cfg{WaveletFamily{kind, 3, 1}, 2};
      const auto [a, b] = certified_frame_bounds(build_filter_bank(g, cfg.family));
      const double f = frame_energy_constant(b, cfg.layers);
      const Embedding e = embed(g, cfg);
      REQUIRE(e.values.norm() <= f + 1e-10);
    }
  }
}

TEST_CASE("feature perturbations move the embedding at most F over sqrt g") {
  Rng rng(41);
  const ScatteringConfig cfg{WaveletFamily{WaveletKind::Geometric, 3, 1}, 2};
  for (int rep = 0; rep < 10; ++rep) {
    Graph g = oracle::random_graph(8 + rep, 0.4, rng);
    normalize_features(g);
    Graph h = g;
    for (int i = 0; i < h.size(); ++i)
      h.features[i] += 0.1 * (2.0 * rng.next_double() - 1.0);
    const auto [a, b] = certified_frame_bounds(build_filter_bank(g, cfg.family));
    const double f = frame_energy_constant(b, cfg.layers);
    const double lhs = (embed(g, cfg).values - embed(h, cfg).values).norm();
    const double rhs = f / std::sqrt(static_cast<double>(g.size())) *
                       (g.features - h.features).norm();
    REQUIRE(lhs <= rhs + 1e-10);
  }
}

TEST_CASE("cached-power embeddings agree with the materialized bank") {
  Rng rng(43);
  for (const WaveletKind kind : {WaveletKind::Diffusion, WaveletKind::Geometric}) {
    const ScatteringConfig cfg{WaveletFamily{kind, 3, 2}, 3};
    const Graph g = oracle::random_graph(11, 0.35, rng);
    const PowerCache cache = build_power_cache(g, cfg.family);
    REQUIRE(cache.max_degree == 8);
    REQUIRE(static_cast<int>(cache.powers.size()) == 8);
    const Embedding via_cache = embed_with_cache(g, cache, cfg);
    const Embedding direct = embed(g, cfg);
    REQUIRE((via_cache.values - direct.values).lpNorm<Eigen::Infinity>() < 1e-12);
  }
}

TEST_CASE("cache misuse is rejected") {
  Rng rng(47);
  const Graph g = oracle::random_graph(6, 0.5, rng);
  REQUIRE_THROWS_AS(build_power_cache(g, WaveletFamily{WaveletKind::MonicCubic, 2, 1}),
                    ArgumentError);

  const PowerCache small = build_power_cache(g, WaveletFamily{WaveletKind::Geometric, 2, 1});
  const ScatteringConfig deeper{WaveletFamily{WaveletKind::Geometric, 3, 1}, 2};
  REQUIRE_THROWS_AS(embed_with_cache(g, small, deeper), ArgumentError);

  const ScatteringConfig other{WaveletFamily{WaveletKind::Diffusion, 2, 1}, 2};
  REQUIRE_THROWS_AS(embed_with_cache(g, small, other), ArgumentError);
}

TEST_CASE("counted rebuild matches and reports its work") {
  Rng rng(53);
  const ScatteringConfig cfg{WaveletFamily{WaveletKind::Geometric, 3, 1}, 2};
  const Graph g = oracle::random_graph(10, 0.4, rng);
  flops::reset();
  PowerCache rebuilt;
  const Embedding e = embed_rebuild_counted(g, cfg, &rebuilt);
  const std::uint64_t work = flops::count();
  REQUIRE(work > 0);
  REQUIRE((e.values - embed(g, cfg).values).lpNorm<Eigen::Infinity>() < 1e-12);
  const PowerCache fresh = build_power_cache(g, cfg.family);
  REQUIRE(rebuilt.powers.size() == fresh.powers.size());
  for (std::size_t k = 0; k < fresh.powers.size(); ++k)
    REQUIRE((rebuilt.powers[k] - fresh.powers[k]).norm() < 1e-11);
}

TEST_CASE("incremental removal updates are exact") {
  Rng rng(59);
  for (const WaveletKind kind : {WaveletKind::Diffusion, WaveletKind::Geometric}) {
    const ScatteringConfig cfg{WaveletFamily{kind, 3, 2}, 2};
    Graph g = oracle::random_graph(24, 0.25, rng, true);
    PowerCache cache = build_power_cache(g, cfg.family);
    Rng picker(61);
    for (int step = 0; step < 12; ++step) {
      const int v = picker.next_int(g.size());
      if (g.active_count <= 1) break;
      // Skip already-masked slots.
      if (g.adjacency.row(v).isZero(0.0) && g.features[v] == 0.0 &&
          g.active_count < g.size())
        continue;
      const IncrementalResult inc = embed_incremental(g, v, cache, cfg);
      const Embedding direct = embed(inc.graph, cfg);
      REQUIRE((inc.embedding.values - direct.values).lpNorm<Eigen::Infinity>() < 1e-10);

      // The patched cache must agree with one built from scratch.
      const PowerCache fresh = build_power_cache(inc.graph, cfg.family);
      for (std::size_t k = 0; k < fresh.powers.size(); ++k)
        REQUIRE((cache.powers[k] - fresh.powers[k]).lpNorm<Eigen::Infinity>() < 1e-12);
      g = inc.graph;
    }
  }
}

TEST_CASE("incremental updates scale quadratically and beat rebuilds at scale") {
  // One removal costs O(s K^2 g^2) incrementally versus O(K g^3) for the
  // power rebuild, so the incremental path wins only once g clears the
  // touched-set constant. Check the growth rates and the crossover.
  // Averaging over a few removals keeps the slope estimate from tracking the
  // degree of any single removed node.
  Rng rng(67);
  const ScatteringConfig cfg{WaveletFamily{WaveletKind::Geometric, 3, 1}, 2};
  const int reps = 8;
  std::map<int, std::uint64_t> inc_cost, reb_cost;
  for (const int n : {64, 160}) {
    Graph g = oracle::random_graph(n, 8.0 / n, rng, true);
    PowerCache cache = build_power_cache(g, cfg.family);
    std::vector<int> alive(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) alive[static_cast<std::size_t>(i)] = i;

    for (int rep = 0; rep < reps; ++rep) {
      const int pick = rng.next_int(static_cast<int>(alive.size()));
      const int node = alive[static_cast<std::size_t>(pick)];
      alive.erase(alive.begin() + pick);

      flops::reset();
      const IncrementalResult step = embed_incremental(g, node, cache, cfg);
      inc_cost[n] += flops::count();

      flops::reset();
      embed_rebuild_counted(step.graph, cfg);
      reb_cost[n] += flops::count();

      g = step.graph;
    }
    REQUIRE(inc_cost[n] > 0);
  }

  const double scale = std::log(160.0 / 64.0);
  const double inc_slope =
      std::log(static_cast<double>(inc_cost[160]) / static_cast<double>(inc_cost[64])) / scale;
  const double reb_slope =
      std::log(static_cast<double>(reb_cost[160]) / static_cast<double>(reb_cost[64])) / scale;
  REQUIRE(inc_slope < 2.5);
  REQUIRE(reb_slope > 2.8);
  REQUIRE(inc_cost[160] < reb_cost[160]);
}

TEST_CASE("embedding csv format") {
  Dataset ds;
  Eigen::MatrixXd a(2, 2);
  a << 0, 1, 1, 0;
  Eigen::VectorXd x(2);
  x << 1.0, -0.5;
  ds.graphs.push_back(make_graph(a, x, 1, 11));
  ds.graphs.push_back(make_graph(Eigen::MatrixXd::Zero(1, 1), Eigen::VectorXd::Ones(1), -1, 12));
  const ScatteringConfig cfg{WaveletFamily{WaveletKind::Diffusion, 1, 2}, 1};
  const EmbeddedDataset e = embed_dataset(ds, cfg);
  REQUIRE(e.z.rows() == 2);
  REQUIRE(e.z.cols() == 2);
  std::ostringstream os;
  write_embeddings_csv(os, e);
  std::istringstream is(os.str());
  std::string header, row1, row2;
  std::getline(is, header);
  std::getline(is, row1);
  std::getline(is, row2);
  REQUIRE(header == "graph_id,label,root.m1,root.m2");
  REQUIRE(row1.substr(0, 5) == "11,1,");
  REQUIRE(row2.substr(0, 6) == "12,-1,");
}

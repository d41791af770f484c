#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "gstun/experiment.hpp"

using namespace gstun;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("gstun_exp_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

ExperimentConfig tiny_config() {
  ExperimentConfig cfg;
  cfg.synthetic.graphs = 16;
  cfg.synthetic.min_nodes = 5;
  cfg.synthetic.max_nodes = 9;
  cfg.synthetic.seed = 3;
  cfg.scattering = ScatteringConfig{WaveletFamily{WaveletKind::Geometric, 2, 1}, 2};
  cfg.lambda = 0.05;
  cfg.alpha = 0.1;
  cfg.seeds = {1, 2};
  cfg.removal_fraction = 0.25;
  cfg.removal_kind = RemovalKind::NodeRemoval;
  cfg.timings = false;
  return cfg;
}

}  // namespace

TEST_CASE("synthetic datasets are deterministic and well formed") {
  SyntheticSpec spec;
  spec.graphs = 24;
  spec.min_nodes = 6;
  spec.max_nodes = 12;
  spec.seed = 9;
  const Dataset a = generate_synthetic(spec);
  const Dataset b = generate_synthetic(spec);
  REQUIRE(a.size() == 24);
  int pos = 0;
  for (int i = 0; i < 24; ++i) {
    const Graph& g = a.graphs[static_cast<std::size_t>(i)];
    REQUIRE(g.size() >= 6);
    REQUIRE(g.size() <= 12);
    REQUIRE_NOTHROW(validate_graph(g));
    if (g.label == 1) ++pos;
    const double top = g.features.cwiseAbs().maxCoeff();
    REQUIRE((top == 0.0 || top == Catch::Approx(1.0)));
    REQUIRE((g.adjacency - b.graphs[static_cast<std::size_t>(i)].adjacency).norm() == 0.0);
  }
  REQUIRE(pos == 12);

  SyntheticSpec bad = spec;
  bad.min_nodes = 1;
  REQUIRE_THROWS_AS(generate_synthetic(bad), ArgumentError);
  bad = spec;
  bad.p_in = 1.5;
  REQUIRE_THROWS_AS(generate_synthetic(bad), ArgumentError);
}

TEST_CASE("splits cover the dataset without overlap") {
  const Split s = make_split(20, 0.7, 0.1, 0.2, 5);
  REQUIRE(s.train.size() == 14);
  REQUIRE(s.validation.size() == 2);
  REQUIRE(s.test.size() == 4);
  std::vector<int> all;
  all.insert(all.end(), s.train.begin(), s.train.end());
  all.insert(all.end(), s.validation.begin(), s.validation.end());
  all.insert(all.end(), s.test.begin(), s.test.end());
  std::sort(all.begin(), all.end());
  for (int i = 0; i < 20; ++i) REQUIRE(all[static_cast<std::size_t>(i)] == i);

  const Split again = make_split(20, 0.7, 0.1, 0.2, 5);
  REQUIRE(again.train == s.train);
  const Split other = make_split(20, 0.7, 0.1, 0.2, 6);
  REQUIRE(other.train != s.train);

  REQUIRE_THROWS_AS(make_split(10, 0.5, 0.1, 0.1, 1), ArgumentError);
  REQUIRE_THROWS_AS(make_split(10, -0.2, 0.6, 0.6, 1), ArgumentError);
}

TEST_CASE("label maps handle binary and one-vs-all targets") {
  const LabelMap binary = LabelMap::from_labels({3, 7, 3, 7});
  REQUIRE(binary.head_count() == 1);
  REQUIRE(binary.target(0, 7) == 1.0);
  REQUIRE(binary.target(0, 3) == -1.0);
  REQUIRE(binary.predict({0.2}) == 7);
  REQUIRE(binary.predict({-0.2}) == 3);
  REQUIRE(binary.predict({0.0}) == 7);  // ties go to the higher class

  const LabelMap multi = LabelMap::from_labels({0, 1, 2, 1});
  REQUIRE(multi.head_count() == 3);
  REQUIRE(multi.target(1, 1) == 1.0);
  REQUIRE(multi.target(1, 2) == -1.0);
  REQUIRE(multi.predict({0.1, 0.5, -0.3}) == 1);
  REQUIRE(multi.predict({2.0, 0.5, -0.3}) == 0);

  REQUIRE_THROWS_AS(LabelMap::from_labels({4, 4, 4}), ArgumentError);
}

TEST_CASE("experiment config json round trip") {
  ExperimentConfig c;
  c.dataset_path = "data/somewhere";
  c.synthetic.graphs = 77;
  c.synthetic.p_out = 0.22;
  c.scattering = ScatteringConfig{WaveletFamily{WaveletKind::Itersine, 5, 2}, 3};
  c.train_ratio = 0.6;
  c.validation_ratio = 0.2;
  c.test_ratio = 0.2;
  c.loss = LossKind::Linear;
  c.lambda = 0.123;
  c.alpha = 0.05;
  c.epsilon = 2.5;
  c.delta = 1e-5;
  c.train_tol = 1e-9;
  c.seeds = {4, 5, 6};
  c.removal_fraction = 0.4;
  c.removal_kind = RemovalKind::FeatureZero;
  c.protocol_seed = 99;
  c.validation_requests = 123;
  c.requests_path = "reqs.jsonl";
  c.retrain_arm = false;
  c.timings = false;
  c.diagnostics = true;
  c.output_dir = "out/here";

  const ExperimentConfig d = config_from_json(config_to_json(c));
  REQUIRE(d.dataset_path == c.dataset_path);
  REQUIRE(d.synthetic.graphs == 77);
  REQUIRE(d.synthetic.p_out == 0.22);
  REQUIRE(d.scattering.family.kind == WaveletKind::Itersine);
  REQUIRE(d.scattering.family.scales == 5);
  REQUIRE(d.scattering.family.moments == 2);
  REQUIRE(d.scattering.layers == 3);
  REQUIRE(d.train_ratio == 0.6);
  REQUIRE(d.loss == LossKind::Linear);
  REQUIRE(d.lambda == 0.123);
  REQUIRE(d.alpha == 0.05);
  REQUIRE(d.epsilon == 2.5);
  REQUIRE(d.delta == 1e-5);
  REQUIRE(d.train_tol == 1e-9);
  REQUIRE(d.seeds == std::vector<std::uint64_t>{4, 5, 6});
  REQUIRE(d.removal_fraction == 0.4);
  REQUIRE(d.removal_kind == RemovalKind::FeatureZero);
  REQUIRE(d.protocol_seed == 99);
  REQUIRE(d.validation_requests == 123);
  REQUIRE(d.requests_path == "reqs.jsonl");
  REQUIRE(d.retrain_arm == false);
  REQUIRE(d.timings == false);
  REQUIRE(d.diagnostics == true);
  REQUIRE(d.output_dir == "out/here");

  // Defaults survive a sparse document.
  const ExperimentConfig sparse = config_from_json(nlohmann::json::object());
  REQUIRE(sparse.lambda == ExperimentConfig{}.lambda);
  REQUIRE(sparse.scattering.family.kind == WaveletKind::Geometric);
}

TEST_CASE("request streams round trip as json lines") {
  std::vector<RemovalRequest> reqs(3);
  reqs[0].kind = RemovalKind::FeatureZero;
  reqs[0].graph = 4;
  reqs[0].node = 2;
  reqs[1].kind = RemovalKind::NodeRemoval;
  reqs[1].graph = 0;
  reqs[1].node = 1;
  reqs[2].kind = RemovalKind::WholeGraph;
  reqs[2].graph = 7;

  std::ostringstream os;
  write_requests(os, reqs);
  std::istringstream is(os.str());
  const auto back = parse_requests(is);
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    REQUIRE(back[i].kind == reqs[i].kind);
    REQUIRE(back[i].graph == reqs[i].graph);
    REQUIRE(back[i].node == reqs[i].node);
  }

  std::istringstream bad1("{\"kind\": \"node\", \"graph\": 1, \"node\": 0}\nnot json\n");
  REQUIRE_THROWS_AS(parse_requests(bad1), ParseError);
  std::istringstream bad2("{\"kind\": \"node\", \"graph\": 1}\n");
  REQUIRE_THROWS_AS(parse_requests(bad2), ParseError);
  std::istringstream bad3("{\"kind\": \"pruning\", \"graph\": 1, \"node\": 0}\n");
  REQUIRE_THROWS_AS(parse_requests(bad3), ArgumentError);
  std::istringstream blanks("\n  \n{\"kind\": \"graph\", \"graph\": 0}\n\n");
  REQUIRE(parse_requests(blanks).size() == 1);
}

TEST_CASE("removal protocols touch distinct graphs and avoid no-ops") {
  SyntheticSpec spec;
  spec.graphs = 30;
  spec.seed = 13;
  const Dataset ds = generate_synthetic(spec);
  const auto reqs = build_removal_protocol(ds.graphs, 0.5, RemovalKind::FeatureZero, 7);
  REQUIRE(reqs.size() == 15);
  std::set<int> graphs;
  for (const auto& r : reqs) {
    graphs.insert(r.graph);
    if (r.kind == RemovalKind::FeatureZero) {
      const Graph& g = ds.graphs[static_cast<std::size_t>(r.graph)];
      REQUIRE(std::abs(g.features[r.node]) > 0.0);
    }
  }
  REQUIRE(graphs.size() == 15);

  // Single-node graphs turn into whole-graph requests.
  std::vector<Graph> tiny;
  tiny.push_back(make_graph(Eigen::MatrixXd::Zero(1, 1), Eigen::VectorXd::Ones(1), 1, 1));
  const auto t = build_removal_protocol(tiny, 1.0, RemovalKind::NodeRemoval, 3);
  REQUIRE(t.size() == 1);
  REQUIRE(t[0].kind == RemovalKind::WholeGraph);

  REQUIRE_THROWS_AS(build_removal_protocol(tiny, 1.5, RemovalKind::NodeRemoval, 3),
                    ArgumentError);
}

TEST_CASE("unlearning experiment produces a coherent report") {
  const ExperimentConfig cfg = tiny_config();
  const RunReport report = run_unlearning_experiment(cfg);

  REQUIRE(report.seeds.size() == 2);
  const int train_n = static_cast<int>(std::llround(0.8 * 16));
  const int expect_steps = static_cast<int>(std::llround(0.25 * train_n));
  for (const auto& s : report.seeds) {
    REQUIRE(s.steps == expect_steps);
    REQUIRE(s.initial_test_acc.has_value());
    REQUIRE(*s.initial_test_acc >= 0.0);
    REQUIRE(*s.initial_test_acc <= 1.0);
    REQUIRE(s.final_test_acc.has_value());
    REQUIRE(s.final_retrain_acc.has_value());
  }
  REQUIRE(report.steps.size() == static_cast<std::size_t>(2 * expect_steps));
  for (const auto& st : report.steps) {
    REQUIRE(st.test_acc.has_value());
    REQUIRE(st.retrain_test_acc.has_value());
    REQUIRE(st.bound >= 0.0);
    REQUIRE(st.threshold == Catch::Approx(budget_threshold(cfg.epsilon, cfg.delta, cfg.alpha)));
  }
}

TEST_CASE("reports are emitted with the pinned csv schema") {
  const ExperimentConfig cfg = tiny_config();
  const RunReport report = run_unlearning_experiment(cfg);
  TempDir dir("report");
  emit_report(report, cfg, dir.str());

  const std::string outcomes = slurp(dir.path / "outcomes_seed1.csv");
  REQUIRE(outcomes.substr(0, outcomes.find('\n')) ==
          "step,kind,action,bound,beta,threshold,wall_ms,test_acc");
  // Timings are disabled: wall_ms must be zero so reruns are byte-identical.
  std::istringstream rows(outcomes);
  std::string line;
  std::getline(rows, line);
  int data_rows = 0;
  while (std::getline(rows, line)) {
    if (line.empty()) continue;
    ++data_rows;
    REQUIRE(line.find(",node,") != std::string::npos);
  }
  REQUIRE(data_rows == 3);  // 0.25 * 13 rounds to 3

  REQUIRE(fs::exists(dir.path / "outcomes_seed2.csv"));
  const std::string longcsv = slurp(dir.path / "long.csv");
  REQUIRE(longcsv.substr(0, longcsv.find('\n')) == "seed,step,arm,metric,value");
  REQUIRE(longcsv.find(",retrain,test_acc,") != std::string::npos);

  const nlohmann::json summary = nlohmann::json::parse(slurp(dir.path / "summary.json"));
  REQUIRE(summary.at("seeds").size() == 2);
  REQUIRE(summary.at("per_step").size() == 3);
  REQUIRE(summary.at("per_step")[0].contains("mean_test_acc"));
  REQUIRE(summary.at("per_step")[0].contains("std_test_acc"));
  REQUIRE(summary.at("config").at("lambda").get<double>() == cfg.lambda);

  // Determinism: a rerun emits byte-identical files when timings are off.
  TempDir dir2("report2");
  const RunReport again = run_unlearning_experiment(cfg);
  emit_report(again, cfg, dir2.str());
  REQUIRE(slurp(dir2.path / "outcomes_seed1.csv") == outcomes);
  REQUIRE(slurp(dir2.path / "long.csv") == longcsv);
  REQUIRE(slurp(dir2.path / "summary.json") == slurp(dir.path / "summary.json"));
}

TEST_CASE("zero removal fraction degenerates to train and evaluate") {
  ExperimentConfig cfg = tiny_config();
  cfg.removal_fraction = 0.0;
  cfg.seeds = {4};
  const RunReport report = run_unlearning_experiment(cfg);
  REQUIRE(report.steps.empty());
  REQUIRE(report.seeds.size() == 1);
  REQUIRE(report.seeds[0].steps == 0);
  REQUIRE(report.seeds[0].initial_test_acc == report.seeds[0].final_test_acc);

  TempDir dir("empty");
  emit_report(report, cfg, dir.str());
  const std::string outcomes = slurp(dir.path / "outcomes_seed4.csv");
  REQUIRE(outcomes == "step,kind,action,bound,beta,threshold,wall_ms,test_acc\n");
}

TEST_CASE("explicit request streams are replayed in order") {
  ExperimentConfig cfg = tiny_config();
  cfg.seeds = {1};
  TempDir dir("replay");
  {
    std::ofstream os(dir.path / "reqs.jsonl");
    os << R"({"kind": "feature", "graph": 0, "node": 0})" << "\n";
    os << R"({"kind": "graph", "graph": 3})" << "\n";
  }
  cfg.requests_path = (dir.path / "reqs.jsonl").string();
  const RunReport report = run_unlearning_experiment(cfg);
  REQUIRE(report.steps.size() == 2);
  REQUIRE(report.steps[0].kind == RemovalKind::FeatureZero);
  REQUIRE(report.steps[1].kind == RemovalKind::WholeGraph);
}

TEST_CASE("bound validation runs clean on a small workload") {
  ExperimentConfig cfg;
  cfg.synthetic.graphs = 20;
  cfg.synthetic.min_nodes = 4;
  cfg.synthetic.max_nodes = 10;
  cfg.synthetic.seed = 11;
  cfg.scattering = ScatteringConfig{WaveletFamily{WaveletKind::Geometric, 2, 1}, 2};
  cfg.loss = LossKind::Logistic;
  cfg.lambda = 0.02;
  cfg.train_tol = 1e-11;
  cfg.validation_requests = 60;
  cfg.seeds = {2};

  const BoundValidationReport report = run_bound_validation(cfg);
  REQUIRE(report.rows.size() == 60);
  REQUIRE(report.violations == 0);
  REQUIRE(report.min_data_margin >= 0.0);
  REQUIRE(report.min_worst_margin >= 0.0);
  bool saw_feature = false, saw_node = false;
  for (const auto& row : report.rows) {
    saw_feature = saw_feature || row.kind == RemovalKind::FeatureZero;
    saw_node = saw_node || row.kind == RemovalKind::NodeRemoval;
    REQUIRE(row.true_residual <= row.data_bound);
    REQUIRE(row.true_residual <= row.worst_bound);
  }
  REQUIRE(saw_feature);
  REQUIRE(saw_node);

  std::ostringstream os;
  write_bound_csv(os, report);
  const std::string csv = os.str();
  REQUIRE(csv.substr(0, csv.find('\n')) == "step,kind,true_residual,data_bound,worst_bound");

  ExperimentConfig linear = cfg;
  linear.loss = LossKind::Linear;
  REQUIRE_THROWS_AS(run_bound_validation(linear), ArgumentError);
}

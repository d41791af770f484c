#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "gstun/dataset_io.hpp"
#include "gstun/unlearn.hpp"

namespace gstun {

// ---------------------------------------------------------------------------
// Synthetic fallback data: class +1 graphs have two dense communities with
// sparse cross links, class -1 graphs are uniform random graphs. Signals are
// degree-derived and rescaled, same as the dataset loader's fallback.

struct SyntheticSpec {
  int graphs = 200;
  int min_nodes = 8;
  int max_nodes = 16;
  double p_in = 0.7;   // within-community edge probability (class +1)
  double p_out = 0.1;  // cross-community edge probability (class +1)
  double p_er = 0.4;   // edge probability for class -1
  std::uint64_t seed = 1;
};

inline Dataset generate_synthetic(const SyntheticSpec& spec) {
  if (spec.graphs < 1) throw ArgumentError("synthetic spec needs at least one graph");
  if (spec.min_nodes < 2 || spec.max_nodes < spec.min_nodes)
    throw ArgumentError("synthetic spec needs 2 <= min_nodes <= max_nodes");
  for (double p : {spec.p_in, spec.p_out, spec.p_er})
    if (p < 0.0 || p > 1.0) throw ArgumentError("synthetic edge probabilities must be in [0,1]");
  Rng rng(spec.seed);
  Dataset ds;
  ds.graphs.reserve(static_cast<std::size_t>(spec.graphs));
  for (int i = 0; i < spec.graphs; ++i) {
    const int n = spec.min_nodes + rng.next_int(spec.max_nodes - spec.min_nodes + 1);
    const int label = (i % 2 == 0) ? 1 : -1;
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
    const int half = n / 2;
    for (int u = 0; u < n; ++u) {
      for (int v = u + 1; v < n; ++v) {
        double p;
        if (label == 1)
          p = ((u < half) == (v < half)) ? spec.p_in : spec.p_out;
        else
          p = spec.p_er;
        if (rng.next_double() < p) {
          a(u, v) = 1.0;
          a(v, u) = 1.0;
        }
      }
    }
    Eigen::VectorXd x = degree_features(a);
    Graph g = make_graph(std::move(a), std::move(x), label, i + 1);
    normalize_features(g);
    validate_graph(g);
    ds.graphs.push_back(std::move(g));
  }
  ds.split.train.resize(static_cast<std::size_t>(spec.graphs));
  for (int i = 0; i < spec.graphs; ++i) ds.split.train[static_cast<std::size_t>(i)] = i;
  return ds;
}

// Seeded shuffle split by ratios (train, validation, test must sum to 1).
inline Split make_split(int n, double train_ratio, double validation_ratio, double test_ratio,
                        std::uint64_t seed) {
  if (train_ratio < 0 || validation_ratio < 0 || test_ratio < 0 ||
      std::abs(train_ratio + validation_ratio + test_ratio - 1.0) > 1e-9)
    throw ArgumentError("split ratios must be nonnegative and sum to 1");
  std::vector<int> idx(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  Rng rng(seed);
  rng.shuffle(idx);
  const int n_train = static_cast<int>(std::llround(train_ratio * n));
  const int n_val = std::min(static_cast<int>(std::llround(validation_ratio * n)), n - n_train);
  Split s;
  s.train.assign(idx.begin(), idx.begin() + n_train);
  s.validation.assign(idx.begin() + n_train, idx.begin() + n_train + n_val);
  s.test.assign(idx.begin() + n_train + n_val, idx.end());
  return s;
}

// ---------------------------------------------------------------------------
// Label handling. Binary datasets map (low, high) -> (-1, +1); anything with
// more classes runs one-vs-all with the privacy budget split evenly across
// the heads, and two-class data collapses back to the single binary model.

struct LabelMap {
  std::vector<int> classes;  // sorted distinct labels

  static LabelMap from_labels(const std::vector<int>& labels) {
    std::set<int> s(labels.begin(), labels.end());
    if (s.size() < 2) throw ArgumentError("need at least two classes to classify");
    LabelMap m;
    m.classes.assign(s.begin(), s.end());
    return m;
  }

  int head_count() const { return classes.size() == 2 ? 1 : static_cast<int>(classes.size()); }

  // +-1 target of one head: binary maps the higher label to +1; one-vs-all
  // head h marks its own class +1.
  double target(int head, int label) const {
    if (classes.size() == 2) return label == classes[1] ? 1.0 : -1.0;
    return label == classes[static_cast<std::size_t>(head)] ? 1.0 : -1.0;
  }

  int predict(const std::vector<double>& head_scores) const {
    if (classes.size() == 2) return head_scores[0] >= 0.0 ? classes[1] : classes[0];
    int best = 0;
    for (std::size_t h = 1; h < head_scores.size(); ++h)
      if (head_scores[h] > head_scores[static_cast<std::size_t>(best)])
        best = static_cast<int>(h);
    return classes[static_cast<std::size_t>(best)];
  }
};

inline std::optional<double> accuracy(const std::vector<const ModelState*>& heads,
                                      const LabelMap& map, const Eigen::MatrixXd& z,
                                      const std::vector<int>& labels) {
  if (z.rows() == 0) return std::nullopt;
  int hits = 0;
  std::vector<double> scores(heads.size());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    for (std::size_t h = 0; h < heads.size(); ++h)
      scores[h] = z.row(i).dot(heads[h]->weights);
    if (map.predict(scores) == labels[static_cast<std::size_t>(i)]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(z.rows());
}

// ---------------------------------------------------------------------------
// Experiment configuration, JSON round-trippable, CLI-overridable.

struct ExperimentConfig {
  std::string dataset_path;  // empty -> synthetic fallback
  SyntheticSpec synthetic;
  ScatteringConfig scattering{WaveletFamily{WaveletKind::Geometric, 3, 1}, 2};
  double train_ratio = 0.8;
  double validation_ratio = 0.0;
  double test_ratio = 0.2;
  LossKind loss = LossKind::Logistic;
  double lambda = 1e-3;
  double alpha = 0.1;
  double epsilon = 1.0;
  double delta = 1e-4;
  double train_tol = 1e-8;
  std::vector<std::uint64_t> seeds{1};
  double removal_fraction = 0.1;
  RemovalKind removal_kind = RemovalKind::NodeRemoval;
  std::uint64_t protocol_seed = 7;
  int validation_requests = 500;
  std::string requests_path;  // optional explicit request stream (JSON lines)
  bool retrain_arm = true;
  bool timings = true;
  bool diagnostics = false;
  std::string output_dir;

  LossModel loss_model() const {
    return loss == LossKind::Logistic ? LossModel::logistic() : LossModel::linear();
  }
};

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["dataset"] = c.dataset_path;
  j["synthetic"] = {{"graphs", c.synthetic.graphs},     {"min_nodes", c.synthetic.min_nodes},
                    {"max_nodes", c.synthetic.max_nodes}, {"p_in", c.synthetic.p_in},
                    {"p_out", c.synthetic.p_out},       {"p_er", c.synthetic.p_er},
                    {"seed", c.synthetic.seed}};
  j["scattering"] = {{"family", wavelet_kind_name(c.scattering.family.kind)},
                     {"scales", c.scattering.family.scales},
                     {"moments", c.scattering.family.moments},
                     {"layers", c.scattering.layers}};
  j["train_ratio"] = c.train_ratio;
  j["validation_ratio"] = c.validation_ratio;
  j["test_ratio"] = c.test_ratio;
  j["loss"] = c.loss == LossKind::Logistic ? "logistic" : "linear";
  j["lambda"] = c.lambda;
  j["alpha"] = c.alpha;
  j["epsilon"] = c.epsilon;
  j["delta"] = c.delta;
  j["train_tol"] = c.train_tol;
  j["seeds"] = c.seeds;
  j["removal_fraction"] = c.removal_fraction;
  j["removal_kind"] = removal_kind_name(c.removal_kind);
  j["protocol_seed"] = c.protocol_seed;
  j["validation_requests"] = c.validation_requests;
  j["requests"] = c.requests_path;
  j["retrain_arm"] = c.retrain_arm;
  j["timings"] = c.timings;
  j["diagnostics"] = c.diagnostics;
  j["output_dir"] = c.output_dir;
  return j;
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  c.dataset_path = j.value("dataset", c.dataset_path);
  if (j.contains("synthetic")) {
    const auto& s = j.at("synthetic");
    c.synthetic.graphs = s.value("graphs", c.synthetic.graphs);
    c.synthetic.min_nodes = s.value("min_nodes", c.synthetic.min_nodes);
    c.synthetic.max_nodes = s.value("max_nodes", c.synthetic.max_nodes);
    c.synthetic.p_in = s.value("p_in", c.synthetic.p_in);
    c.synthetic.p_out = s.value("p_out", c.synthetic.p_out);
    c.synthetic.p_er = s.value("p_er", c.synthetic.p_er);
    c.synthetic.seed = s.value("seed", c.synthetic.seed);
  }
  if (j.contains("scattering")) {
    const auto& s = j.at("scattering");
    c.scattering.family.kind =
        wavelet_kind_from_name(s.value("family", std::string(wavelet_kind_name(
                                                     c.scattering.family.kind))));
    c.scattering.family.scales = s.value("scales", c.scattering.family.scales);
    c.scattering.family.moments = s.value("moments", c.scattering.family.moments);
    c.scattering.layers = s.value("layers", c.scattering.layers);
  }
  c.train_ratio = j.value("train_ratio", c.train_ratio);
  c.validation_ratio = j.value("validation_ratio", c.validation_ratio);
  c.test_ratio = j.value("test_ratio", c.test_ratio);
  if (j.contains("loss")) c.loss = LossModel::from_name(j.at("loss").get<std::string>()).kind;
  c.lambda = j.value("lambda", c.lambda);
  c.alpha = j.value("alpha", c.alpha);
  c.epsilon = j.value("epsilon", c.epsilon);
  c.delta = j.value("delta", c.delta);
  c.train_tol = j.value("train_tol", c.train_tol);
  if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  c.removal_fraction = j.value("removal_fraction", c.removal_fraction);
  if (j.contains("removal_kind"))
    c.removal_kind = removal_kind_from_name(j.at("removal_kind").get<std::string>());
  c.protocol_seed = j.value("protocol_seed", c.protocol_seed);
  c.validation_requests = j.value("validation_requests", c.validation_requests);
  c.requests_path = j.value("requests", c.requests_path);
  c.retrain_arm = j.value("retrain_arm", c.retrain_arm);
  c.timings = j.value("timings", c.timings);
  c.diagnostics = j.value("diagnostics", c.diagnostics);
  c.output_dir = j.value("output_dir", c.output_dir);
  return c;
}

// ---------------------------------------------------------------------------
// Removal request streams (JSON lines).

inline std::vector<RemovalRequest> parse_requests(std::istream& in) {
  std::vector<RemovalRequest> reqs;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError("request stream", line_no, e.what());
    }
    RemovalRequest r;
    r.kind = removal_kind_from_name(j.at("kind").get<std::string>());
    r.graph = j.at("graph").get<int>();
    if (r.kind != RemovalKind::WholeGraph) {
      if (!j.contains("node"))
        throw ParseError("request stream", line_no,
                         "feature/node requests need a 'node' field");
      r.node = j.at("node").get<int>();
    }
    reqs.push_back(r);
  }
  return reqs;
}

inline void write_requests(std::ostream& os, const std::vector<RemovalRequest>& reqs) {
  for (const auto& r : reqs) {
    nlohmann::json j;
    j["kind"] = removal_kind_name(r.kind);
    j["graph"] = r.graph;
    if (r.kind != RemovalKind::WholeGraph) j["node"] = r.node;
    os << j.dump() << '\n';
  }
}

// One removal per distinct training graph, covering `fraction` of the
// training set. Node picks prefer nodes carrying signal so requests are
// never exact no-ops; single-node graphs fall back to whole-graph removal.
inline std::vector<RemovalRequest> build_removal_protocol(const std::vector<Graph>& train_graphs,
                                                          double fraction, RemovalKind kind,
                                                          std::uint64_t seed) {
  if (fraction < 0.0 || fraction > 1.0)
    throw ArgumentError("removal fraction must be in [0, 1]");
  const int n = static_cast<int>(train_graphs.size());
  const int m = static_cast<int>(std::llround(fraction * n));
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  Rng rng(seed);
  rng.shuffle(order);
  std::vector<RemovalRequest> reqs;
  reqs.reserve(static_cast<std::size_t>(m));
  for (int t = 0; t < m; ++t) {
    const int gi = order[static_cast<std::size_t>(t)];
    const Graph& g = train_graphs[static_cast<std::size_t>(gi)];
    RemovalRequest r;
    r.graph = gi;
    if (kind == RemovalKind::WholeGraph || g.size() == 1) {
      r.kind = RemovalKind::WholeGraph;
    } else {
      r.kind = kind;
      std::vector<int> carriers;
      for (int v = 0; v < g.size(); ++v)
        if (std::abs(g.features[v]) > 1e-12) carriers.push_back(v);
      if (kind == RemovalKind::FeatureZero && !carriers.empty())
        r.node = carriers[static_cast<std::size_t>(rng.next_int(
            static_cast<int>(carriers.size())))];
      else
        r.node = rng.next_int(g.size());
    }
    reqs.push_back(r);
  }
  return reqs;
}

// ---------------------------------------------------------------------------
// Reports.

struct StepRecord {
  std::uint64_t seed = 0;
  int step = 0;
  RemovalKind kind = RemovalKind::NodeRemoval;
  UnlearnAction action = UnlearnAction::NewtonUpdate;
  double bound = 0.0;
  double beta = 0.0;
  double threshold = 0.0;
  double wall_ms = 0.0;           // unlearning arm, this step
  double retrain_wall_ms = 0.0;   // retrain arm, this step
  double cum_wall_ms = 0.0;
  double cum_retrain_wall_ms = 0.0;
  std::optional<double> test_acc;
  std::optional<double> retrain_test_acc;
  std::optional<double> true_residual;
};

struct SeedSummary {
  std::uint64_t seed = 0;
  int steps = 0;
  int retrain_count = 0;
  std::optional<double> initial_test_acc;
  std::optional<double> final_test_acc;
  std::optional<double> final_retrain_acc;
  double cum_wall_ms = 0.0;
  double cum_retrain_wall_ms = 0.0;
};

struct RunReport {
  std::vector<StepRecord> steps;
  std::vector<SeedSummary> seeds;
};

namespace detail {

inline std::string fmt_opt(const std::optional<double>& v) {
  if (!v) return "";
  std::ostringstream os;
  os << std::setprecision(17) << *v;
  return os.str();
}

inline std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace detail

// Per-seed outcome log, exactly one row per request:
// step,kind,action,bound,beta,threshold,wall_ms,test_acc
inline void write_outcomes_csv(std::ostream& os, const RunReport& report, std::uint64_t seed,
                               bool timings) {
  os << "step,kind,action,bound,beta,threshold,wall_ms,test_acc\n";
  for (const auto& s : report.steps) {
    if (s.seed != seed) continue;
    os << s.step << ',' << removal_kind_name(s.kind) << ',' << unlearn_action_name(s.action)
       << ',' << detail::fmt(s.bound) << ',' << detail::fmt(s.beta) << ','
       << detail::fmt(s.threshold) << ',' << detail::fmt(timings ? s.wall_ms : 0.0) << ','
       << detail::fmt_opt(s.test_acc) << '\n';
  }
}

// Long-format table for downstream plotting: seed,step,arm,metric,value.
inline void write_long_csv(std::ostream& os, const RunReport& report, bool timings) {
  os << "seed,step,arm,metric,value\n";
  const auto row = [&os](std::uint64_t seed, int step, const char* arm, const char* metric,
                         const std::string& value) {
    if (value.empty()) return;
    os << seed << ',' << step << ',' << arm << ',' << metric << ',' << value << '\n';
  };
  for (const auto& s : report.steps) {
    row(s.seed, s.step, "unlearn", "bound", detail::fmt(s.bound));
    row(s.seed, s.step, "unlearn", "beta", detail::fmt(s.beta));
    row(s.seed, s.step, "unlearn", "test_acc", detail::fmt_opt(s.test_acc));
    row(s.seed, s.step, "unlearn", "cum_wall_ms",
        detail::fmt(timings ? s.cum_wall_ms : 0.0));
    if (s.true_residual)
      row(s.seed, s.step, "unlearn", "true_residual", detail::fmt_opt(s.true_residual));
    row(s.seed, s.step, "retrain", "test_acc", detail::fmt_opt(s.retrain_test_acc));
    row(s.seed, s.step, "retrain", "cum_wall_ms",
        detail::fmt(timings ? s.cum_retrain_wall_ms : 0.0));
  }
}

inline nlohmann::json summary_to_json(const RunReport& report, const ExperimentConfig& config) {
  nlohmann::json j;
  j["config"] = config_to_json(config);
  auto& seeds = j["seeds"] = nlohmann::json::array();
  for (const auto& s : report.seeds) {
    nlohmann::json e;
    e["seed"] = s.seed;
    e["steps"] = s.steps;
    e["retrain_count"] = s.retrain_count;
    if (s.initial_test_acc) e["initial_test_acc"] = *s.initial_test_acc;
    if (s.final_test_acc) e["final_test_acc"] = *s.final_test_acc;
    if (s.final_retrain_acc) e["final_retrain_acc"] = *s.final_retrain_acc;
    if (config.timings) {
      e["cum_wall_ms"] = s.cum_wall_ms;
      e["cum_retrain_wall_ms"] = s.cum_retrain_wall_ms;
    }
    seeds.push_back(std::move(e));
  }
  // Across-seed per-step accuracy aggregates (mean and sample std).
  int max_step = 0;
  for (const auto& s : report.steps) max_step = std::max(max_step, s.step);
  auto& per_step = j["per_step"] = nlohmann::json::array();
  for (int t = 1; t <= max_step; ++t) {
    std::vector<double> accs, raccs;
    for (const auto& s : report.steps) {
      if (s.step != t) continue;
      if (s.test_acc) accs.push_back(*s.test_acc);
      if (s.retrain_test_acc) raccs.push_back(*s.retrain_test_acc);
    }
    const auto stats = [](const std::vector<double>& v) -> std::pair<double, double> {
      if (v.empty()) return {0.0, 0.0};
      double mean = 0.0;
      for (double x : v) mean += x;
      mean /= static_cast<double>(v.size());
      double var = 0.0;
      for (double x : v) var += (x - mean) * (x - mean);
      var = v.size() > 1 ? var / static_cast<double>(v.size() - 1) : 0.0;
      return {mean, std::sqrt(var)};
    };
    nlohmann::json e;
    e["step"] = t;
    if (!accs.empty()) {
      const auto [m, sd] = stats(accs);
      e["mean_test_acc"] = m;
      e["std_test_acc"] = sd;
    }
    if (!raccs.empty()) {
      const auto [m, sd] = stats(raccs);
      e["mean_retrain_acc"] = m;
      e["std_retrain_acc"] = sd;
    }
    per_step.push_back(std::move(e));
  }
  return j;
}

// Writes outcomes_seed<seed>.csv per seed, long.csv, and summary.json.
inline void emit_report(const RunReport& report, const ExperimentConfig& config,
                        const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  for (const auto& s : report.seeds) {
    std::ofstream os(fs::path(dir) / ("outcomes_seed" + std::to_string(s.seed) + ".csv"));
    write_outcomes_csv(os, report, s.seed, config.timings);
  }
  {
    std::ofstream os(fs::path(dir) / "long.csv");
    write_long_csv(os, report, config.timings);
  }
  {
    std::ofstream os(fs::path(dir) / "summary.json");
    os << summary_to_json(report, config).dump(2) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Experiment drivers.

inline Dataset load_or_generate(const ExperimentConfig& config) {
  if (!config.dataset_path.empty()) return load_dataset(config.dataset_path);
  return generate_synthetic(config.synthetic);
}

namespace detail {

struct ArmState {
  // Retrain arm: independent copy of the training data, retrained from
  // scratch after every removal with a fresh noise draw.
  std::vector<Graph> graphs;
  Eigen::MatrixXd z;
  std::vector<ModelState> heads;
};

inline double ms(double seconds) { return 1e3 * seconds; }

}  // namespace detail

// Sequential unlearning with an optional full-retrain comparison arm.
inline RunReport run_unlearning_experiment(const ExperimentConfig& config) {
  const Dataset ds = load_or_generate(config);
  const ScatteringConfig& sc = config.scattering;
  validate_config(sc);
  std::vector<int> all_labels;
  all_labels.reserve(ds.graphs.size());
  for (const auto& g : ds.graphs) all_labels.push_back(g.label);
  const LabelMap map = LabelMap::from_labels(all_labels);
  const int heads = map.head_count();

  std::vector<RemovalRequest> fixed_requests;
  if (!config.requests_path.empty()) {
    std::ifstream in(config.requests_path);
    if (!in) throw ArgumentError("cannot open request stream " + config.requests_path);
    fixed_requests = parse_requests(in);
  }

  RunReport report;
  for (const std::uint64_t seed : config.seeds) {
    const Split split =
        make_split(ds.size(), config.train_ratio, config.validation_ratio, config.test_ratio,
                   seed);
    std::vector<Graph> train_graphs;
    train_graphs.reserve(split.train.size());
    for (int i : split.train) train_graphs.push_back(ds.graphs[static_cast<std::size_t>(i)]);
    if (train_graphs.empty()) throw ArgumentError("empty training split");

    // Static test-set embeddings.
    Eigen::MatrixXd z_test(static_cast<Eigen::Index>(split.test.size()), sc.dimension());
    std::vector<int> y_test;
    for (std::size_t k = 0; k < split.test.size(); ++k) {
      const Graph& g = ds.graphs[static_cast<std::size_t>(split.test[k])];
      z_test.row(static_cast<Eigen::Index>(k)) = embed(g, sc).values.transpose();
      y_test.push_back(g.label);
    }

    // Unlearning engines, one per head, each with its share of the budget.
    std::vector<UnlearnEngine> engines;
    engines.reserve(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
      Eigen::VectorXd y(static_cast<Eigen::Index>(train_graphs.size()));
      for (std::size_t i = 0; i < train_graphs.size(); ++i)
        y[static_cast<Eigen::Index>(i)] = map.target(h, train_graphs[i].label);
      EngineConfig ec;
      ec.scattering = sc;
      ec.loss = config.loss_model();
      ec.lambda = config.lambda;
      ec.alpha = config.alpha;
      ec.epsilon = config.epsilon / heads;
      ec.delta = config.delta / heads;
      ec.seed = seed + static_cast<std::uint64_t>(h);
      ec.train_tol = config.train_tol;
      ec.diagnostics = config.diagnostics;
      engines.emplace_back(train_graphs, std::move(y), ec);
    }

    // Retrain arm starts from the same data and weights of its own.
    detail::ArmState arm;
    std::uint64_t arm_seed = seed ^ 0xa5a5a5a5a5a5a5a5ull;
    if (config.retrain_arm) {
      arm.graphs = train_graphs;
      arm.z.resize(static_cast<Eigen::Index>(train_graphs.size()), sc.dimension());
      for (std::size_t i = 0; i < train_graphs.size(); ++i)
        arm.z.row(static_cast<Eigen::Index>(i)) = embed(train_graphs[i], sc).values.transpose();
      for (int h = 0; h < heads; ++h) {
        Eigen::VectorXd y(static_cast<Eigen::Index>(train_graphs.size()));
        for (std::size_t i = 0; i < train_graphs.size(); ++i)
          y[static_cast<Eigen::Index>(i)] = map.target(h, train_graphs[i].label);
        arm.heads.push_back(train(arm.z, y, config.lambda, config.alpha, ++arm_seed,
                                  config.loss_model(), config.train_tol));
      }
    }

    const auto requests =
        !fixed_requests.empty()
            ? fixed_requests
            : build_removal_protocol(train_graphs, config.removal_fraction,
                                     config.removal_kind, config.protocol_seed + seed);

    SeedSummary summary;
    summary.seed = seed;
    {
      std::vector<const ModelState*> hp;
      for (const auto& e : engines) hp.push_back(&e.model());
      summary.initial_test_acc = accuracy(hp, map, z_test, y_test);
    }

    // Alive bookkeeping for the retrain arm (whole-graph removals).
    std::vector<int> arm_row(train_graphs.size());
    for (std::size_t i = 0; i < train_graphs.size(); ++i) arm_row[i] = static_cast<int>(i);

    double cum_unlearn = 0.0, cum_retrain = 0.0;
    int step_no = 0;
    for (const auto& req : requests) {
      ++step_no;
      StepRecord rec;
      rec.seed = seed;
      rec.step = step_no;
      rec.kind = req.kind;

      // Unlearning arm: every head services the request.
      bool any_retrain = false;
      double bound = 0.0, beta = 0.0, threshold = 0.0, wall = 0.0;
      std::optional<double> residual;
      for (auto& engine : engines) {
        const UnlearnOutcome out = engine.process_request(req);
        any_retrain = any_retrain || out.action == UnlearnAction::Retrain;
        bound = std::max(bound, out.bound);
        beta = std::max(beta, out.beta);
        threshold = out.threshold;
        wall += out.wall_seconds;
        if (out.true_residual)
          residual = std::max(residual.value_or(0.0), *out.true_residual);
      }
      rec.action = any_retrain ? UnlearnAction::Retrain : UnlearnAction::NewtonUpdate;
      rec.bound = bound;
      rec.beta = beta;
      rec.threshold = threshold;
      rec.wall_ms = detail::ms(wall);
      rec.true_residual = residual;
      cum_unlearn += rec.wall_ms;
      rec.cum_wall_ms = cum_unlearn;
      {
        std::vector<const ModelState*> hp;
        for (const auto& e : engines) hp.push_back(&e.model());
        rec.test_acc = accuracy(hp, map, z_test, y_test);
      }

      // Retrain arm: apply the same removal, re-embed the touched graph,
      // retrain every head from scratch.
      if (config.retrain_arm) {
        const auto t0 = std::chrono::steady_clock::now();
        const int row = arm_row[static_cast<std::size_t>(req.graph)];
        if (row < 0) throw ArgumentError("retrain arm: graph was already removed");
        if (req.kind == RemovalKind::WholeGraph) {
          arm.graphs.erase(arm.graphs.begin() + row);
          Eigen::MatrixXd z2(arm.z.rows() - 1, arm.z.cols());
          z2.topRows(row) = arm.z.topRows(row);
          z2.bottomRows(arm.z.rows() - 1 - row) = arm.z.bottomRows(arm.z.rows() - 1 - row);
          arm.z = std::move(z2);
          arm_row[static_cast<std::size_t>(req.graph)] = -1;
          for (auto& r : arm_row)
            if (r > row) --r;
        } else {
          Graph& g = arm.graphs[static_cast<std::size_t>(row)];
          g = req.kind == RemovalKind::FeatureZero ? zero_feature(g, req.node)
                                                   : remove_node(g, req.node);
          arm.z.row(row) = embed(g, sc).values.transpose();
        }
        arm.heads.clear();
        for (int h = 0; h < heads; ++h) {
          Eigen::VectorXd y(static_cast<Eigen::Index>(arm.graphs.size()));
          for (std::size_t i = 0; i < arm.graphs.size(); ++i)
            y[static_cast<Eigen::Index>(i)] = map.target(h, arm.graphs[i].label);
          arm.heads.push_back(train(arm.z, y, config.lambda, config.alpha, ++arm_seed,
                                    config.loss_model(), config.train_tol));
        }
        rec.retrain_wall_ms = detail::ms(
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
        cum_retrain += rec.retrain_wall_ms;
        rec.cum_retrain_wall_ms = cum_retrain;
        std::vector<const ModelState*> hp;
        for (const auto& m : arm.heads) hp.push_back(&m);
        rec.retrain_test_acc = accuracy(hp, map, z_test, y_test);
      }

      report.steps.push_back(std::move(rec));
    }

    summary.steps = step_no;
    for (const auto& e : engines) summary.retrain_count += e.ledger().retrain_count;
    {
      std::vector<const ModelState*> hp;
      for (const auto& e : engines) hp.push_back(&e.model());
      summary.final_test_acc = accuracy(hp, map, z_test, y_test);
    }
    if (config.retrain_arm) {
      std::vector<const ModelState*> hp;
      for (const auto& m : arm.heads) hp.push_back(&m);
      summary.final_retrain_acc = accuracy(hp, map, z_test, y_test);
    }
    summary.cum_wall_ms = cum_unlearn;
    summary.cum_retrain_wall_ms = cum_retrain;
    report.seeds.push_back(std::move(summary));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Bound validation: alpha = 0, so the engine retrains after every request and
// each Newton step starts from a freshly certified optimum. Every request
// records the data-dependent bound, the matching worst-case bound and the
// actual post-step gradient residual.

struct BoundRow {
  int step = 0;
  RemovalKind kind = RemovalKind::FeatureZero;
  double true_residual = 0.0;
  double data_bound = 0.0;
  double worst_bound = 0.0;
};

struct BoundValidationReport {
  std::vector<BoundRow> rows;
  int violations = 0;          // rows where a bound fell below the residual
  double min_data_margin = 0.0;   // min(data_bound - residual)
  double min_worst_margin = 0.0;  // min(worst_bound - residual)
};

inline void write_bound_csv(std::ostream& os, const BoundValidationReport& r) {
  os << "step,kind,true_residual,data_bound,worst_bound\n";
  for (const auto& row : r.rows)
    os << row.step << ',' << removal_kind_name(row.kind) << ','
       << detail::fmt(row.true_residual) << ',' << detail::fmt(row.data_bound) << ','
       << detail::fmt(row.worst_bound) << '\n';
}

inline BoundValidationReport run_bound_validation(const ExperimentConfig& config) {
  const LossModel loss = config.loss_model();
  if (loss.gamma2 <= 0.0)
    throw ArgumentError(
        "bound validation needs a loss with curvature variation (gamma2 > 0); the linear "
        "loss yields exact updates and degenerate zero bounds");
  const Dataset ds = load_or_generate(config);
  const std::uint64_t seed = config.seeds.empty() ? 1 : config.seeds.front();

  std::vector<int> all_labels;
  for (const auto& g : ds.graphs) all_labels.push_back(g.label);
  const LabelMap map = LabelMap::from_labels(all_labels);

  // The whole dataset is the training set here; there is nothing to test.
  std::vector<Graph> graphs = ds.graphs;
  Eigen::VectorXd y(static_cast<Eigen::Index>(graphs.size()));
  for (std::size_t i = 0; i < graphs.size(); ++i)
    y[static_cast<Eigen::Index>(i)] = map.target(0, graphs[i].label);

  EngineConfig ec;
  ec.scattering = config.scattering;
  ec.loss = loss;
  ec.lambda = config.lambda;
  ec.alpha = 0.0;  // forces a retrain after every request and exact residual reporting
  ec.epsilon = config.epsilon;
  ec.delta = config.delta;
  ec.seed = seed;
  ec.train_tol = config.train_tol;
  UnlearnEngine engine(graphs, y, ec);

  Rng rng(config.protocol_seed + seed);
  BoundValidationReport report;
  report.min_data_margin = std::numeric_limits<double>::infinity();
  report.min_worst_margin = std::numeric_limits<double>::infinity();
  const int total = static_cast<int>(graphs.size());
  for (int step = 1; step <= config.validation_requests; ++step) {
    // Draw a request against the engine's current state. Feature requests
    // only target nodes that still carry signal, node removals only graphs
    // with at least two active nodes; exact no-ops prove nothing.
    bool want_feature = rng.next_double() < 0.5;
    RemovalRequest req;
    bool found = false;
    for (int attempt = 0; attempt < 2 && !found; ++attempt, want_feature = !want_feature) {
      std::vector<std::pair<int, int>> candidates;  // (graph, node)
      for (int gi = 0; gi < total; ++gi) {
        if (!engine.graph_alive(gi)) continue;
        const Graph& g = engine.graph_state(gi);
        if (want_feature) {
          for (int v = 0; v < g.size(); ++v)
            if (std::abs(g.features[v]) > 1e-12) candidates.emplace_back(gi, v);
        } else if (g.active_count >= 2) {
          // Skip slots with no edges and no signal: they are either masked
          // remnants of earlier removals or degenerate no-op targets.
          for (int v = 0; v < g.size(); ++v)
            if (!g.adjacency.row(v).isZero(0.0) || g.features[v] != 0.0)
              candidates.emplace_back(gi, v);
        }
      }
      if (candidates.empty()) continue;
      const auto [gi, v] = candidates[static_cast<std::size_t>(
          rng.next_int(static_cast<int>(candidates.size())))];
      req.kind = want_feature ? RemovalKind::FeatureZero : RemovalKind::NodeRemoval;
      req.graph = gi;
      req.node = v;
      found = true;
    }
    if (!found) break;  // dataset exhausted

    const int pre_nodes = engine.graph_state(req.graph).active_count;
    const int pre_samples = engine.remaining_samples();
    const UnlearnOutcome out = engine.process_request(req);
    if (!out.true_residual)
      throw InternalError("bound validation expected residual diagnostics");

    WorstCaseParams wp;
    wp.lambda = config.lambda;
    wp.samples = pre_samples;
    wp.frame_f = engine.frame_constant();
    wp.loss = loss;
    wp.graph_size = pre_nodes;
    const double worst =
        worst_case_bound(req.kind == RemovalKind::FeatureZero ? BoundKind::FeatureSingle
                                                              : BoundKind::NodeSingle,
                         wp);

    BoundRow row;
    row.step = step;
    row.kind = req.kind;
    row.true_residual = *out.true_residual;
    row.data_bound = out.bound;
    row.worst_bound = worst;
    report.min_data_margin = std::min(report.min_data_margin, row.data_bound - row.true_residual);
    report.min_worst_margin =
        std::min(report.min_worst_margin, row.worst_bound - row.true_residual);
    if (row.true_residual > row.data_bound || row.true_residual > row.worst_bound)
      ++report.violations;
    report.rows.push_back(row);
  }
  return report;
}

}  // namespace gstun

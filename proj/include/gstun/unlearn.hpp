#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "gstun/classifier.hpp"
#include "gstun/scattering.hpp"

namespace gstun {

// ---------------------------------------------------------------------------
// Removal requests.

enum class RemovalKind { FeatureZero, NodeRemoval, WholeGraph };

inline const char* removal_kind_name(RemovalKind k) {
  switch (k) {
    case RemovalKind::FeatureZero: return "feature";
    case RemovalKind::NodeRemoval: return "node";
    case RemovalKind::WholeGraph: return "graph";
  }
  return "?";
}

inline RemovalKind removal_kind_from_name(const std::string& name) {
  if (name == "feature") return RemovalKind::FeatureZero;
  if (name == "node") return RemovalKind::NodeRemoval;
  if (name == "graph") return RemovalKind::WholeGraph;
  throw ArgumentError("unknown removal kind '" + name + "' (expected feature, node or graph)");
}

struct RemovalRequest {
  RemovalKind kind = RemovalKind::NodeRemoval;
  int graph = 0;      // index into the engine's training set
  int node = -1;      // node index for feature/node kinds
};

// ---------------------------------------------------------------------------
// Newton removal step.
//
// With w* (approximately) stationary for the perturbed objective on D, the
// one-step correction toward the objective on D' is w' = w* + H^{-1} Delta,
// where H is the unperturbed Hessian on D' at w* and Delta cancels the terms
// of the gradient that the removal changed.

// Delta for an in-place change z -> z' of one sample's embedding.
inline Eigen::VectorXd compute_delta_reembed(const LossModel& loss, const Eigen::VectorXd& w,
                                             const Eigen::VectorXd& z_old, double label,
                                             const Eigen::VectorXd& z_new) {
  return loss.d1(w.dot(z_old), label) * z_old - loss.d1(w.dot(z_new), label) * z_new;
}

// Delta for dropping a whole sample (its loss term and its share of the
// regularizer).
inline Eigen::VectorXd compute_delta_drop(const LossModel& loss, const Eigen::VectorXd& w,
                                          const Eigen::VectorXd& z_old, double label,
                                          double lambda) {
  return lambda * w + loss.d1(w.dot(z_old), label) * z_old;
}

struct NewtonResult {
  Eigen::VectorXd weights;     // w* + H^{-1} Delta
  Eigen::VectorXd correction;  // H^{-1} Delta
};

inline NewtonResult newton_update(const Eigen::VectorXd& w, const Eigen::MatrixXd& z_after,
                                  const Eigen::VectorXd& y_after, double lambda,
                                  const Eigen::VectorXd& delta, const LossModel& loss) {
  if (z_after.rows() == 0)
    throw DegenerateGraphError("newton_update: no samples remain after the removal");
  const Eigen::MatrixXd h = loss_hessian(w, z_after, y_after, lambda, loss);
  NewtonResult r;
  r.correction = Eigen::LLT<Eigen::MatrixXd>(h).solve(delta);
  r.weights = w + r.correction;
  return r;
}

// ---------------------------------------------------------------------------
// Gradient-residual bounds.

// Warm-startable power iteration for the largest singular value of Z.
struct SpectralNormCache {
  Eigen::VectorXd v;  // current right singular vector estimate
  double value = 0.0;
  bool warm = false;
};

inline double spectral_norm(const Eigen::MatrixXd& z, SpectralNormCache* cache = nullptr,
                            double tol = 1e-6, int max_iterations = 500) {
  if (z.rows() == 0 || z.cols() == 0) return 0.0;
  Eigen::VectorXd v;
  if (cache && cache->warm && cache->v.size() == z.cols())
    v = cache->v;
  else
    v = Eigen::VectorXd::Constant(z.cols(), 1.0 / std::sqrt(static_cast<double>(z.cols())));
  // Power iteration on Z^T Z; with v kept unit, |Z^T Z v| converges to the
  // top eigenvalue sigma^2.
  double sigma = 0.0;
  for (int it = 0; it < max_iterations; ++it) {
    const Eigen::VectorXd mv = z.transpose() * (z * v);
    const double nrm = mv.norm();
    if (nrm == 0.0) {
      // v fell into the null space; restart from a basis vector.
      v = Eigen::VectorXd::Zero(z.cols());
      v[it % z.cols()] = 1.0;
      sigma = 0.0;
      continue;
    }
    const double estimate = std::sqrt(nrm);
    v = mv / nrm;
    if (std::abs(estimate - sigma) <= tol * std::max(estimate, 1.0)) {
      sigma = estimate;
      break;
    }
    sigma = estimate;
  }
  if (cache) {
    cache->v = v;
    cache->value = sigma;
    cache->warm = true;
  }
  return sigma;
}

// Data-dependent residual bound gamma2 * F * |Z'| * |H^{-1}Delta| * |Z' H^{-1}Delta|.
// Collapses to 0 for the linear loss (gamma2 = 0), matching its exact step.
inline double data_dependent_bound(const Eigen::MatrixXd& z_after,
                                   const Eigen::VectorXd& correction, double gamma2,
                                   double frame_f, SpectralNormCache* cache = nullptr,
                                   double tol = 1e-6) {
  if (gamma2 == 0.0) return 0.0;
  const double znorm = spectral_norm(z_after, cache, tol);
  return gamma2 * frame_f * znorm * correction.norm() * (z_after * correction).norm();
}

// Worst-case (data-independent) residual bounds.
enum class BoundKind { FeatureSingle, NodeSingle, FeatureBatch, NodeBatch };

struct WorstCaseParams {
  double lambda = 0.0;
  int samples = 0;        // n, training-set size the model was fitted on
  double frame_f = 0.0;   // F, scattering energy constant
  LossModel loss;
  int graph_size = 0;     // g_n: node count of the touched graph (feature bounds)
  int batch_size = 1;     // m, only for the batch kinds
  int min_graph_size = 0; // min node count over the touched graphs (batch kinds)
};

inline double worst_case_bound(BoundKind kind, const WorstCaseParams& p) {
  if (p.lambda <= 0.0) throw ArgumentError("worst_case_bound: lambda must be positive");
  if (p.samples <= 0) throw ArgumentError("worst_case_bound: sample count must be positive");
  if (p.frame_f <= 0.0) throw ArgumentError("worst_case_bound: frame constant must be positive");
  const double f = p.frame_f;
  const double f3 = f * f * f;
  const double lam2n = p.lambda * p.lambda * static_cast<double>(p.samples);
  const double c1 = p.loss.c1, c2 = p.loss.c2, g1 = p.loss.gamma1, g2 = p.loss.gamma2;

  const auto feature_core = [&](int graph_size) {
    if (graph_size <= 0)
      throw ArgumentError("worst_case_bound: feature bounds need the touched graph's size");
    const double mixed = g1 * c1 * f * f + p.lambda * c2 * f;
    return (g2 * f3 / lam2n) *
           std::min(4.0 * c1 * c1,
                    mixed * mixed / (p.lambda * p.lambda * static_cast<double>(graph_size)));
  };

  switch (kind) {
    case BoundKind::FeatureSingle:
      return feature_core(p.graph_size);
    case BoundKind::NodeSingle:
      return 4.0 * g2 * c1 * c1 * f3 / lam2n;
    case BoundKind::FeatureBatch:
    case BoundKind::NodeBatch: {
      if (p.batch_size < 1) throw ArgumentError("worst_case_bound: batch size must be >= 1");
      if (p.batch_size >= p.min_graph_size)
        throw ArgumentError(
            "worst_case_bound: batch bounds require the batch size to stay below every "
            "touched graph's node count (" + std::to_string(p.batch_size) + " >= " +
            std::to_string(p.min_graph_size) +
            "); split the request into whole-graph removals instead");
      const double m2 = static_cast<double>(p.batch_size) * static_cast<double>(p.batch_size);
      if (kind == BoundKind::FeatureBatch) return m2 * feature_core(p.min_graph_size);
      return m2 * 4.0 * g2 * c1 * c1 * f3 / lam2n;
    }
  }
  throw ArgumentError("unknown bound kind");
}

// ---------------------------------------------------------------------------
// Privacy budget accounting.
//
// The Gaussian-perturbation argument turns a gradient-residual budget
// epsilon' into an (epsilon, delta) guarantee with noise scale
// sigma = epsilon' * sqrt(2 ln(1.5/delta)) / epsilon. Running the budget
// backwards, a deployment with noise scale alpha can absorb accumulated
// residual bounds up to alpha * epsilon / sqrt(2 ln(1.5/delta)) before a
// retrain is due.

inline double gaussian_mechanism_constant(double delta) {
  if (delta <= 0.0 || delta >= 1.5)
    throw ArgumentError("delta must lie in (0, 1.5) for the Gaussian mechanism constant");
  return std::sqrt(2.0 * std::log(1.5 / delta));
}

inline double calibrate_noise(double epsilon, double delta, double residual_budget) {
  if (epsilon <= 0.0) throw ArgumentError("epsilon must be positive");
  if (residual_budget < 0.0) throw ArgumentError("residual budget must be nonnegative");
  return residual_budget * gaussian_mechanism_constant(delta) / epsilon;
}

inline double budget_threshold(double epsilon, double delta, double alpha) {
  if (epsilon <= 0.0) throw ArgumentError("epsilon must be positive");
  if (alpha < 0.0) throw ArgumentError("alpha must be nonnegative");
  return alpha * epsilon / gaussian_mechanism_constant(delta);
}

// Running accountant. record() adds one request's residual bound and says
// whether the accumulated budget forces a retrain; the trip resets beta.
struct BudgetLedger {
  double epsilon = 1.0;
  double delta = 1e-4;
  double alpha = 0.0;
  double threshold = 0.0;
  double beta = 0.0;
  int retrain_count = 0;

  static BudgetLedger create(double epsilon, double delta, double alpha) {
    BudgetLedger l;
    l.epsilon = epsilon;
    l.delta = delta;
    l.alpha = alpha;
    l.threshold = budget_threshold(epsilon, delta, alpha);
    return l;
  }

  bool record(double bound) {
    if (bound < 0.0) throw ArgumentError("BudgetLedger::record: bound must be nonnegative");
    beta += bound;
    if (beta > threshold) {
      beta = 0.0;
      ++retrain_count;
      return true;
    }
    return false;
  }
};

// ---------------------------------------------------------------------------
// Unlearning engine: owns the training graphs, their embeddings, the model
// and the budget, and services removal requests end to end.

enum class UnlearnAction { NewtonUpdate, Retrain };

inline const char* unlearn_action_name(UnlearnAction a) {
  return a == UnlearnAction::NewtonUpdate ? "newton" : "retrain";
}

struct UnlearnOutcome {
  UnlearnAction action = UnlearnAction::NewtonUpdate;
  RemovalKind kind = RemovalKind::NodeRemoval;
  double bound = 0.0;        // data-dependent residual bound for this request
  double beta = 0.0;         // accumulated budget after this request
  double threshold = 0.0;
  double wall_seconds = 0.0; // removal processing only (no diagnostics)
  std::optional<double> true_residual;  // |grad| at the Newton-updated weights
};

struct EngineConfig {
  ScatteringConfig scattering;
  LossModel loss;
  double lambda = 1e-3;
  double alpha = 0.0;      // noise scale used for training/retraining
  double epsilon = 1.0;
  double delta = 1e-4;
  std::uint64_t seed = 1;
  double train_tol = 1e-8;
  int frame_trials = 64;   // randomized fallback when certification is too big
  int certified_max_size = 64;
  bool diagnostics = false;  // force true-residual reporting even with alpha > 0
};

class UnlearnEngine {
 public:
  UnlearnEngine(std::vector<Graph> graphs, Eigen::VectorXd labels, const EngineConfig& cfg)
      : cfg_(cfg), graphs_(std::move(graphs)), y_(std::move(labels)) {
    validate_config(cfg_.scattering);
    if (graphs_.empty()) throw ArgumentError("UnlearnEngine needs at least one graph");
    if (static_cast<Eigen::Index>(graphs_.size()) != y_.size())
      throw ArgumentError("UnlearnEngine: one label per graph required");
    const int n = static_cast<int>(graphs_.size());
    alive_.assign(static_cast<std::size_t>(n), 1);
    row_.resize(static_cast<std::size_t>(n));
    polynomial_ = is_polynomial_family(cfg_.scattering.family.kind);

    // Initial embeddings. Polynomial families go through the cache path so
    // later incremental updates reuse the exact same arithmetic.
    z_.resize(n, cfg_.scattering.dimension());
    if (polynomial_) caches_.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      row_[static_cast<std::size_t>(i)] = i;
      Graph& g = graphs_[static_cast<std::size_t>(i)];
      if (polynomial_) {
        caches_[static_cast<std::size_t>(i)] = build_power_cache(g, cfg_.scattering.family);
        z_.row(i) =
            embed_with_cache(g, caches_[static_cast<std::size_t>(i)], cfg_.scattering)
                .values.transpose();
      } else {
        z_.row(i) = embed(g, cfg_.scattering).values.transpose();
      }
    }

    frame_f_ = compute_frame_constant();
    model_ = train(z_, y_, cfg_.lambda, cfg_.alpha, cfg_.seed, cfg_.loss, cfg_.train_tol);
    ledger_ = BudgetLedger::create(cfg_.epsilon, cfg_.delta, cfg_.alpha);
  }

  UnlearnOutcome process_request(const RemovalRequest& req) {
    validate_request(req);
    const auto t0 = std::chrono::steady_clock::now();

    Eigen::VectorXd delta;
    if (req.kind == RemovalKind::WholeGraph) {
      const int r = row_[static_cast<std::size_t>(req.graph)];
      delta = compute_delta_drop(cfg_.loss, model_.weights, z_.row(r).transpose(), y_[r],
                                 cfg_.lambda);
      drop_row(req.graph);
    } else {
      const int r = row_[static_cast<std::size_t>(req.graph)];
      const Eigen::VectorXd z_old = z_.row(r).transpose();
      const Eigen::VectorXd z_new = apply_graph_edit(req);
      delta = compute_delta_reembed(cfg_.loss, model_.weights, z_old, y_[r], z_new);
      z_.row(r) = z_new.transpose();
    }

    NewtonResult newton = newton_update(model_.weights, z_, y_, cfg_.lambda, delta, cfg_.loss);
    const double bound = data_dependent_bound(z_, newton.correction, cfg_.loss.gamma2, frame_f_,
                                              &norm_cache_);
    UnlearnOutcome out;
    out.kind = req.kind;
    out.bound = bound;
    out.threshold = ledger_.threshold;
    if (ledger_.record(bound)) {
      out.action = UnlearnAction::Retrain;
      model_ = train(z_, y_, cfg_.lambda, cfg_.alpha, retrain_seed(), cfg_.loss, cfg_.train_tol);
    } else {
      out.action = UnlearnAction::NewtonUpdate;
      model_.weights = newton.weights;
    }
    out.beta = ledger_.beta;
    out.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    // Diagnostics are deliberately outside the timed window: they evaluate
    // the Newton step's unperturbed residual whether or not it was kept.
    if (cfg_.alpha == 0.0 || cfg_.diagnostics) {
      out.true_residual =
          loss_grad(newton.weights, z_, y_, Eigen::VectorXd(), cfg_.lambda, cfg_.loss).norm();
    }
    return out;
  }

  // Removes a batch in one Newton step: the deltas add, the budget records a
  // single data-dependent bound for the combined correction.
  UnlearnOutcome process_batch(const std::vector<RemovalRequest>& batch) {
    if (batch.empty()) throw ArgumentError("process_batch: empty batch");
    for (const auto& r : batch) validate_request(r);
    for (std::size_t a = 0; a < batch.size(); ++a)
      for (std::size_t b = a + 1; b < batch.size(); ++b)
        if (batch[a].graph == batch[b].graph)
          throw ArgumentError("process_batch: one request per graph and batch");
    const auto t0 = std::chrono::steady_clock::now();

    Eigen::VectorXd delta = Eigen::VectorXd::Zero(z_.cols());
    std::vector<int> drops;
    for (const auto& req : batch) {
      const int r = row_[static_cast<std::size_t>(req.graph)];
      if (req.kind == RemovalKind::WholeGraph) {
        delta += compute_delta_drop(cfg_.loss, model_.weights, z_.row(r).transpose(), y_[r],
                                    cfg_.lambda);
        drops.push_back(req.graph);
      } else {
        const Eigen::VectorXd z_old = z_.row(r).transpose();
        const Eigen::VectorXd z_new = apply_graph_edit(req);
        delta += compute_delta_reembed(cfg_.loss, model_.weights, z_old, y_[r], z_new);
        z_.row(r) = z_new.transpose();
      }
    }
    for (int g : drops) drop_row(g);

    NewtonResult newton = newton_update(model_.weights, z_, y_, cfg_.lambda, delta, cfg_.loss);
    const double bound = data_dependent_bound(z_, newton.correction, cfg_.loss.gamma2, frame_f_,
                                              &norm_cache_);
    UnlearnOutcome out;
    out.kind = batch.front().kind;
    out.bound = bound;
    out.threshold = ledger_.threshold;
    if (ledger_.record(bound)) {
      out.action = UnlearnAction::Retrain;
      model_ = train(z_, y_, cfg_.lambda, cfg_.alpha, retrain_seed(), cfg_.loss, cfg_.train_tol);
    } else {
      out.action = UnlearnAction::NewtonUpdate;
      model_.weights = newton.weights;
    }
    out.beta = ledger_.beta;
    out.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (cfg_.alpha == 0.0 || cfg_.diagnostics) {
      out.true_residual =
          loss_grad(newton.weights, z_, y_, Eigen::VectorXd(), cfg_.lambda, cfg_.loss).norm();
    }
    return out;
  }

  const ModelState& model() const { return model_; }
  const BudgetLedger& ledger() const { return ledger_; }
  const Eigen::MatrixXd& embeddings() const { return z_; }
  const Eigen::VectorXd& labels() const { return y_; }
  double frame_constant() const { return frame_f_; }
  int remaining_samples() const { return static_cast<int>(z_.rows()); }
  bool graph_alive(int graph) const {
    return graph >= 0 && graph < static_cast<int>(alive_.size()) &&
           alive_[static_cast<std::size_t>(graph)] != 0;
  }
  const Graph& graph_state(int graph) const {
    if (!graph_alive(graph)) throw ArgumentError("graph_state: graph is not alive");
    return graphs_[static_cast<std::size_t>(graph)];
  }

 private:
  void validate_request(const RemovalRequest& req) const {
    if (req.graph < 0 || req.graph >= static_cast<int>(graphs_.size()))
      throw ArgumentError("removal request names graph " + std::to_string(req.graph) +
                          " outside the training set");
    if (!alive_[static_cast<std::size_t>(req.graph)])
      throw ArgumentError("removal request names graph " + std::to_string(req.graph) +
                          ", which was already removed");
    const Graph& g = graphs_[static_cast<std::size_t>(req.graph)];
    if (req.kind != RemovalKind::WholeGraph) {
      check_node_index(g, req.node, "removal request");
      if (req.kind == RemovalKind::NodeRemoval && g.active_count <= 1)
        throw DegenerateGraphError(
            "removing the last active node of graph " + std::to_string(req.graph) +
            " is not a node removal; issue a whole-graph request instead");
    }
    if (req.kind == RemovalKind::WholeGraph && z_.rows() <= 1)
      throw DegenerateGraphError("removing the last training graph leaves nothing to fit");
  }

  // Applies a feature/node edit to the stored graph and returns the fresh
  // embedding. Node removals keep the polynomial power caches patched.
  Eigen::VectorXd apply_graph_edit(const RemovalRequest& req) {
    Graph& g = graphs_[static_cast<std::size_t>(req.graph)];
    if (req.kind == RemovalKind::FeatureZero) {
      g = zero_feature(g, req.node);
      if (polynomial_)
        return embed_with_cache(g, caches_[static_cast<std::size_t>(req.graph)], cfg_.scattering)
            .values;
      return embed(g, cfg_.scattering).values;
    }
    if (polynomial_) {
      PowerCache& cache = caches_[static_cast<std::size_t>(req.graph)];
      if (incremental_update_pays_off(g, req.node, cache)) {
        IncrementalResult r = embed_incremental(g, req.node, cache, cfg_.scattering);
        g = std::move(r.graph);
        return r.embedding.values;
      }
      // Below the crossover a straight rebuild is cheaper than patching.
      g = remove_node_masked(g, req.node);
      return embed_rebuild_counted(g, cfg_.scattering, &cache).values;
    }
    g = remove_node(g, req.node);
    return embed(g, cfg_.scattering).values;
  }

  void drop_row(int graph) {
    const int r = row_[static_cast<std::size_t>(graph)];
    const Eigen::Index n = z_.rows();
    Eigen::MatrixXd z2(n - 1, z_.cols());
    Eigen::VectorXd y2(n - 1);
    z2.topRows(r) = z_.topRows(r);
    y2.head(r) = y_.head(r);
    z2.bottomRows(n - 1 - r) = z_.bottomRows(n - 1 - r);
    y2.tail(n - 1 - r) = y_.tail(n - 1 - r);
    z_ = std::move(z2);
    y_ = std::move(y2);
    alive_[static_cast<std::size_t>(graph)] = 0;
    row_[static_cast<std::size_t>(graph)] = -1;
    for (std::size_t i = 0; i < row_.size(); ++i)
      if (row_[i] > r) --row_[i];
  }

  std::uint64_t retrain_seed() { return cfg_.seed + 0x9e3779b9ull * static_cast<std::uint64_t>(++retrains_issued_); }

  // Uniform bound on every embedding norm the model can see: the scattering
  // energy constant from the worst upper frame bound across the training
  // graphs, floored by the largest embedding norm actually observed.
  double compute_frame_constant() const {
    double b_max = 0.0;
    for (const auto& g : graphs_) {
      const FilterBank bank = build_filter_bank(g, cfg_.scattering.family);
      const auto [lo, hi] = g.size() <= cfg_.certified_max_size
                                ? certified_frame_bounds(bank)
                                : estimate_frame_bounds(bank, cfg_.frame_trials, cfg_.seed);
      (void)lo;
      b_max = std::max(b_max, hi);
    }
    double f = frame_energy_constant(b_max, cfg_.scattering.layers);
    for (Eigen::Index i = 0; i < z_.rows(); ++i) f = std::max(f, z_.row(i).norm());
    return f;
  }

  EngineConfig cfg_;
  std::vector<Graph> graphs_;
  std::vector<PowerCache> caches_;
  std::vector<char> alive_;
  std::vector<int> row_;
  Eigen::MatrixXd z_;
  Eigen::VectorXd y_;
  ModelState model_;
  BudgetLedger ledger_;
  SpectralNormCache norm_cache_;
  double frame_f_ = 0.0;
  bool polynomial_ = false;
  int retrains_issued_ = 0;
};

}  // namespace gstun

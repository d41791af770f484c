#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <json.hpp>

#include "gstun/errors.hpp"
#include "gstun/rng.hpp"

namespace gstun {

// Margin losses with the curvature constants the removal bounds consume:
//   c1     bound on |l'|
//   c2     bound on |l'| used by the mixed feature-bound term
//   gamma1 bound on l''
//   gamma2 Lipschitz constant of l''
// Linear regression has constant curvature, so gamma2 = 0 and its Newton
// step is exact; the other constants never enter any linear-loss bound.
enum class LossKind { Logistic, Linear };

struct LossModel {
  LossKind kind = LossKind::Logistic;
  double c1 = 1.0, c2 = 1.0, gamma1 = 0.25, gamma2 = 0.25;

  static LossModel logistic() { return LossModel{LossKind::Logistic, 1.0, 1.0, 0.25, 0.25}; }
  static LossModel linear() { return LossModel{LossKind::Linear, 0.0, 0.0, 0.0, 0.0}; }

  static LossModel from_name(const std::string& name) {
    if (name == "logistic") return logistic();
    if (name == "linear") return linear();
    throw ArgumentError("unknown loss '" + name + "' (expected logistic or linear)");
  }

  const char* name() const { return kind == LossKind::Logistic ? "logistic" : "linear"; }

  // l(s, y) for a score s and label y in {-1, +1}.
  double value(double score, double label) const {
    if (kind == LossKind::Linear) {
      const double r = score - label;
      return r * r;
    }
    const double m = label * score;
    return m >= 0.0 ? std::log1p(std::exp(-m)) : -m + std::log1p(std::exp(m));
  }

  double d1(double score, double label) const {
    if (kind == LossKind::Linear) return 2.0 * (score - label);
    return label * (sigmoid(label * score) - 1.0);
  }

  double d2(double score, double label) const {
    if (kind == LossKind::Linear) return 2.0;
    const double s = sigmoid(label * score);
    return s * (1.0 - s);
  }

  static double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  }
};

inline void check_training_inputs(const Eigen::MatrixXd& z, const Eigen::VectorXd& y,
                                  double lambda) {
  if (z.rows() != y.size())
    throw ArgumentError("feature matrix has " + std::to_string(z.rows()) + " rows but " +
                        std::to_string(y.size()) + " labels");
  if (z.rows() == 0) throw ArgumentError("cannot fit a model to an empty dataset");
  if (lambda <= 0.0) throw ArgumentError("regularization strength must be positive");
  for (Eigen::Index i = 0; i < y.size(); ++i)
    if (y[i] != 1.0 && y[i] != -1.0)
      throw ArgumentError("labels must be +1 or -1, row " + std::to_string(i) + " has " +
                          std::to_string(y[i]));
}

// Gradient of the (optionally noise-perturbed) objective
//   sum_i l(w^T z_i, y_i) + (lambda n / 2) |w|^2 + b^T w.
inline Eigen::VectorXd loss_grad(const Eigen::VectorXd& w, const Eigen::MatrixXd& z,
                                 const Eigen::VectorXd& y, const Eigen::VectorXd& b,
                                 double lambda, const LossModel& loss) {
  const Eigen::VectorXd scores = z * w;
  Eigen::VectorXd coeff(scores.size());
  for (Eigen::Index i = 0; i < scores.size(); ++i) coeff[i] = loss.d1(scores[i], y[i]);
  Eigen::VectorXd g = z.transpose() * coeff + lambda * static_cast<double>(z.rows()) * w;
  if (b.size() != 0) {
    if (b.size() != w.size()) throw ArgumentError("noise vector dimension mismatch");
    g += b;
  }
  return g;
}

// Hessian Z^T diag(l'') Z + lambda n I. The noise term is linear, so the
// Hessian is noise-free; lambda n I makes it positive definite outright.
inline Eigen::MatrixXd loss_hessian(const Eigen::VectorXd& w, const Eigen::MatrixXd& z,
                                    const Eigen::VectorXd& y, double lambda,
                                    const LossModel& loss) {
  const Eigen::VectorXd scores = z * w;
  Eigen::VectorXd curv(scores.size());
  for (Eigen::Index i = 0; i < scores.size(); ++i) curv[i] = loss.d2(scores[i], y[i]);
  Eigen::MatrixXd h = z.transpose() * curv.asDiagonal() * z;
  h += lambda * static_cast<double>(z.rows()) *
       Eigen::MatrixXd::Identity(z.cols(), z.cols());
  return h;
}

inline double objective_value(const Eigen::VectorXd& w, const Eigen::MatrixXd& z,
                              const Eigen::VectorXd& y, const Eigen::VectorXd& b,
                              double lambda, const LossModel& loss) {
  const Eigen::VectorXd scores = z * w;
  double v = 0.0;
  for (Eigen::Index i = 0; i < scores.size(); ++i) v += loss.value(scores[i], y[i]);
  v += 0.5 * lambda * static_cast<double>(z.rows()) * w.squaredNorm();
  if (b.size() != 0) v += b.dot(w);
  return v;
}

struct Prediction {
  double score = 0.0;
  int label = 1;  // sign of the score, ties go to +1
};

inline Prediction predict(const Eigen::VectorXd& w, const Eigen::VectorXd& z) {
  if (w.size() != z.size()) throw ArgumentError("weight/embedding dimension mismatch");
  Prediction p;
  p.score = w.dot(z);
  p.label = p.score >= 0.0 ? 1 : -1;
  return p;
}

// Trained model plus everything needed to reproduce or resume it.
struct ModelState {
  Eigen::VectorXd weights;
  Eigen::VectorXd noise;  // the linear perturbation b actually used
  double lambda = 0.0;
  double noise_scale = 0.0;  // per-coordinate standard deviation of b
  std::uint64_t seed = 0;
  LossModel loss;
  double grad_norm = 0.0;  // perturbed-objective residual at the returned weights
};

inline Eigen::VectorXd sample_noise(int dim, double scale, std::uint64_t seed) {
  Eigen::VectorXd b = Eigen::VectorXd::Zero(dim);
  if (scale > 0.0) {
    Rng rng(seed);
    for (int i = 0; i < dim; ++i) b[i] = scale * rng.next_gaussian();
  }
  return b;
}

// Damped Newton on the perturbed objective. The objective is lambda *
// n-strongly convex, so the Cholesky solve never fails and Armijo
// backtracking guarantees global convergence; quadratic objectives finish in
// one step.
inline ModelState train(const Eigen::MatrixXd& z, const Eigen::VectorXd& y, double lambda,
                        double noise_scale, std::uint64_t seed, const LossModel& loss,
                        double tol = 1e-8, int max_iterations = 200) {
  check_training_inputs(z, y, lambda);
  if (noise_scale < 0.0) throw ArgumentError("noise scale must be nonnegative");

  ModelState model;
  model.lambda = lambda;
  model.noise_scale = noise_scale;
  model.seed = seed;
  model.loss = loss;
  model.noise = sample_noise(static_cast<int>(z.cols()), noise_scale, seed);

  Eigen::VectorXd w = Eigen::VectorXd::Zero(z.cols());
  double fw = objective_value(w, z, y, model.noise, lambda, loss);
  for (int iter = 0; iter < max_iterations; ++iter) {
    const Eigen::VectorXd g = loss_grad(w, z, y, model.noise, lambda, loss);
    if (g.norm() <= tol) break;
    const Eigen::MatrixXd h = loss_hessian(w, z, y, lambda, loss);
    const Eigen::VectorXd step = Eigen::LLT<Eigen::MatrixXd>(h).solve(g);
    double t = 1.0;
    const double slope = g.dot(step);
    const double f_before = fw;
    bool moved = false;
    for (int back = 0; back < 60; ++back) {
      const Eigen::VectorXd cand = w - t * step;
      const double fc = objective_value(cand, z, y, model.noise, lambda, loss);
      if (fc <= fw - 1e-4 * t * slope) {
        w = cand;
        fw = fc;
        moved = true;
        break;
      }
      t *= 0.5;
    }
    // Stop once the accepted step moves the objective by at most a few ulps:
    // the iterate has hit the precision floor, and with a tol below that
    // floor further passes would only burn line-search evaluations on the
    // same state.
    if (!moved || f_before - fw <= 1e-15 * (1.0 + std::abs(f_before))) break;
  }
  model.weights = w;
  model.grad_norm = loss_grad(w, z, y, model.noise, lambda, loss).norm();
  return model;
}

// ---------------------------------------------------------------------------
// Snapshots.

inline nlohmann::json model_to_json(const ModelState& m) {
  nlohmann::json j;
  j["version"] = 1;
  j["loss"] = m.loss.name();
  j["lambda"] = m.lambda;
  j["noise_scale"] = m.noise_scale;
  j["seed"] = m.seed;
  j["grad_norm"] = m.grad_norm;
  j["weights"] = std::vector<double>(m.weights.data(), m.weights.data() + m.weights.size());
  j["noise"] = std::vector<double>(m.noise.data(), m.noise.data() + m.noise.size());
  return j;
}

inline ModelState model_from_json(const nlohmann::json& j) {
  if (!j.contains("version") || j.at("version").get<int>() != 1)
    throw ArgumentError("unsupported model snapshot version");
  ModelState m;
  m.loss = LossModel::from_name(j.at("loss").get<std::string>());
  m.lambda = j.at("lambda").get<double>();
  m.noise_scale = j.at("noise_scale").get<double>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.grad_norm = j.at("grad_norm").get<double>();
  const auto wv = j.at("weights").get<std::vector<double>>();
  const auto nv = j.at("noise").get<std::vector<double>>();
  m.weights = Eigen::Map<const Eigen::VectorXd>(wv.data(), static_cast<Eigen::Index>(wv.size()));
  m.noise = Eigen::Map<const Eigen::VectorXd>(nv.data(), static_cast<Eigen::Index>(nv.size()));
  return m;
}

}  // namespace gstun

#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "gstun/graph.hpp"
#include "gstun/rng.hpp"

namespace gstun {

// Wavelet families for the scattering transform.
//
// MonicCubic and Itersine are spectral designs evaluated on the normalized
// Laplacian through an eigendecomposition. Diffusion and Geometric are
// polynomial designs built from powers of a lazy averaging operator, which is
// what makes cached-power updates possible after node removals.
enum class WaveletKind { MonicCubic, Itersine, Diffusion, Geometric };

inline const char* wavelet_kind_name(WaveletKind k) {
  switch (k) {
    case WaveletKind::MonicCubic: return "monic_cubic";
    case WaveletKind::Itersine: return "itersine";
    case WaveletKind::Diffusion: return "diffusion";
    case WaveletKind::Geometric: return "geometric";
  }
  return "?";
}

inline WaveletKind wavelet_kind_from_name(const std::string& name) {
  if (name == "monic_cubic") return WaveletKind::MonicCubic;
  if (name == "itersine") return WaveletKind::Itersine;
  if (name == "diffusion") return WaveletKind::Diffusion;
  if (name == "geometric") return WaveletKind::Geometric;
  throw ArgumentError("unknown wavelet family '" + name +
                      "' (expected monic_cubic, itersine, diffusion or geometric)");
}

struct WaveletFamily {
  WaveletKind kind = WaveletKind::Geometric;
  int scales = 3;   // J
  int moments = 1;  // Q, moment orders 1..Q appended per tree path

  // Filters per bank: the polynomial families carry band 0 (the complement
  // I - T) on top of the J dyadic bands.
  int bank_size() const {
    return (kind == WaveletKind::Diffusion || kind == WaveletKind::Geometric) ? scales + 1
                                                                              : scales;
  }
};

inline void validate_family(const WaveletFamily& f) {
  if (f.scales < 1) throw ArgumentError("wavelet family needs scales >= 1");
  if (f.moments < 1) throw ArgumentError("wavelet family needs moments >= 1");
}

// ---------------------------------------------------------------------------
// Scalar kernels.

// Monic cubic base band: linear ramp up to 1, cubic bump on [1,2], 2/x tail.
inline double monic_cubic_kernel(double lambda) {
  if (lambda < 0.0) return 0.0;
  if (lambda < 1.0) return lambda;
  if (lambda <= 2.0) return -5.0 + 11.0 * lambda - 6.0 * lambda * lambda +
                            lambda * lambda * lambda;
  return 2.0 / lambda;
}

// Itersine window j (1-based): sin(pi/2 * cos^2(pi(x - (j-1)/2))) supported on
// [j/2 - 1, j/2]. Adjacent windows overlap by half a unit and satisfy
// sum_j h_j^2 = 1 wherever exactly two windows cover x.
inline double itersine_kernel(int j, double lambda) {
  const double lo = 0.5 * j - 1.0;
  const double hi = 0.5 * j;
  if (lambda < lo || lambda > hi) return 0.0;
  const double c = std::cos(M_PI * (lambda - 0.5 * (j - 1)));
  return std::sin(0.5 * M_PI * c * c);
}

// Dyadic band for the lazy-operator families, as a function of the operator's
// eigenvalue: band 0 is 1 - t, band j >= 1 is t^(2^(j-1)) - t^(2^j).
inline double lazy_band_kernel(int j, double t) {
  if (j == 0) return 1.0 - t;
  const double a = std::pow(t, static_cast<double>(1ll << (j - 1)));
  const double b = std::pow(t, static_cast<double>(1ll << j));
  return a - b;
}

// Kernel value for scale j of a family, on that family's spectral domain
// (normalized-Laplacian eigenvalues for the spectral designs, lazy-operator
// eigenvalues for the polynomial ones). MonicCubic scales dyadically so band
// J is the base kernel and lower bands stretch toward 0; Itersine is the raw
// window (the bank maps the spectrum onto the tight region, see below).
inline double eval_kernel(const WaveletFamily& family, int j, double lambda) {
  switch (family.kind) {
    case WaveletKind::MonicCubic:
      if (j < 1 || j > family.scales) throw ArgumentError("monic cubic scale out of range");
      return monic_cubic_kernel(std::ldexp(lambda, family.scales - j));
    case WaveletKind::Itersine:
      if (j < 1 || j > family.scales) throw ArgumentError("itersine scale out of range");
      return itersine_kernel(j, lambda);
    case WaveletKind::Diffusion:
    case WaveletKind::Geometric:
      if (j < 0 || j > family.scales) throw ArgumentError("dyadic band index out of range");
      return lazy_band_kernel(j, lambda);
  }
  throw ArgumentError("unknown wavelet kind");
}

// ---------------------------------------------------------------------------
// Graph operators. Zero-degree nodes are absorbing: wherever a degree is 0
// the normalization leaves a unit diagonal entry instead of dropping mass,
// so an isolated node keeps its own signal and masked removals behave exactly
// like shrink removals.

// Symmetric normalization D^(-1/2) A D^(-1/2), unit diagonal on isolated nodes.
inline Eigen::MatrixXd normalized_adjacency(const Graph& g) {
  const int n = g.size();
  const Eigen::VectorXd d = g.degrees();
  Eigen::VectorXd dinv_sqrt(n);
  for (int i = 0; i < n; ++i) dinv_sqrt[i] = d[i] > 0.0 ? 1.0 / std::sqrt(d[i]) : 0.0;
  Eigen::MatrixXd nrm = dinv_sqrt.asDiagonal() * g.adjacency * dinv_sqrt.asDiagonal();
  for (int i = 0; i < n; ++i)
    if (d[i] == 0.0) nrm(i, i) = 1.0;
  return nrm;
}

// Lazy diffusion operator T = (I + D^(-1/2) A D^(-1/2)) / 2. Symmetric,
// spectrum in [0, 1], eigenvalue 1 on every connected component.
inline Eigen::MatrixXd lazy_diffusion_operator(const Graph& g) {
  const int n = g.size();
  return 0.5 * (Eigen::MatrixXd::Identity(n, n) + normalized_adjacency(g));
}

// Lazy random-walk operator P = (I + A D^(-1)) / 2. Column-stochastic.
inline Eigen::MatrixXd lazy_walk_operator(const Graph& g) {
  const int n = g.size();
  const Eigen::VectorXd d = g.degrees();
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(n, n);
  for (int j = 0; j < n; ++j) {
    if (d[j] > 0.0)
      w.col(j) = g.adjacency.col(j) / d[j];
    else
      w(j, j) = 1.0;
  }
  return 0.5 * (Eigen::MatrixXd::Identity(n, n) + w);
}

// Normalized Laplacian I - D^(-1/2) A D^(-1/2) (= 2(I - T)); isolated nodes
// sit at eigenvalue 0. Spectrum is contained in [0, 2].
inline Eigen::MatrixXd normalized_laplacian(const Graph& g) {
  const int n = g.size();
  return Eigen::MatrixXd::Identity(n, n) - normalized_adjacency(g);
}

// ---------------------------------------------------------------------------
// Filter banks.

struct FilterBank {
  WaveletFamily family;
  std::vector<Eigen::MatrixXd> filters;  // bank_size() matrices, g x g
  Eigen::VectorXd low_pass;              // averaging functional U, length g
  int graph_size = 0;
};

namespace detail {

// Consecutive squarings t, t^2, t^4, ..., t^(2^J).
inline std::vector<Eigen::MatrixXd> dyadic_powers(const Eigen::MatrixXd& t, int scales) {
  std::vector<Eigen::MatrixXd> p;
  p.reserve(static_cast<std::size_t>(scales) + 1);
  p.push_back(t);
  for (int j = 1; j <= scales; ++j) p.push_back(p.back() * p.back());
  return p;
}

inline void build_lazy_bank(FilterBank& bank, const Eigen::MatrixXd& t, int scales) {
  const auto pw = dyadic_powers(t, scales);
  const int n = static_cast<int>(t.rows());
  bank.filters.clear();
  bank.filters.push_back(Eigen::MatrixXd::Identity(n, n) - t);
  for (int j = 1; j <= scales; ++j)
    bank.filters.push_back(pw[static_cast<std::size_t>(j - 1)] - pw[static_cast<std::size_t>(j)]);
}

inline void build_spectral_bank(FilterBank& bank, const Graph& g, const WaveletFamily& family) {
  const Eigen::MatrixXd lap = normalized_laplacian(g);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(lap);
  if (eig.info() != Eigen::Success)
    throw InternalError("normalized Laplacian eigendecomposition failed");
  const Eigen::VectorXd& ev = eig.eigenvalues();
  const Eigen::MatrixXd& v = eig.eigenvectors();
  // Itersine windows tile [0, (J-1)/2] with a perfect squared-sum partition;
  // squeeze the Laplacian spectrum [0, 2] onto that region. J = 1 collapses
  // everything to the DC window (a legal but trivial identity bank).
  const double spectrum_scale =
      family.kind == WaveletKind::Itersine ? 0.25 * (family.scales - 1) : 1.0;
  bank.filters.clear();
  for (int j = 1; j <= family.scales; ++j) {
    Eigen::VectorXd h(ev.size());
    for (int i = 0; i < ev.size(); ++i)
      h[i] = eval_kernel(family, j, spectrum_scale * ev[i]);
    bank.filters.push_back(v * h.asDiagonal() * v.transpose());
  }
}

}  // namespace detail

// Materializes the filter bank for one graph. Polynomial families never touch
// an eigensolver; they are assembled from repeated squarings of the lazy
// operator. The low-pass functional is degree-weighted for Diffusion and
// uniform over active nodes otherwise.
inline FilterBank build_filter_bank(const Graph& g, const WaveletFamily& family) {
  validate_family(family);
  validate_graph(g);
  FilterBank bank;
  bank.family = family;
  bank.graph_size = g.size();
  switch (family.kind) {
    case WaveletKind::Diffusion:
      detail::build_lazy_bank(bank, lazy_diffusion_operator(g), family.scales);
      break;
    case WaveletKind::Geometric:
      detail::build_lazy_bank(bank, lazy_walk_operator(g), family.scales);
      break;
    case WaveletKind::MonicCubic:
    case WaveletKind::Itersine:
      detail::build_spectral_bank(bank, g, family);
      break;
  }
  if (family.kind == WaveletKind::Diffusion) {
    const Eigen::VectorXd d = g.degrees();
    const double total = d.sum();
    // Edgeless graphs have no stationary degree profile; fall back to the
    // uniform average so the root coefficient stays the plain mean.
    bank.low_pass = total > 0.0 ? Eigen::VectorXd(d / total)
                                : Eigen::VectorXd(Eigen::VectorXd::Constant(
                                      g.size(), 1.0 / g.active_count));
  } else {
    bank.low_pass = Eigen::VectorXd::Constant(g.size(), 1.0 / g.active_count);
  }
  return bank;
}

// ---------------------------------------------------------------------------
// Frame bounds. The bank behaves as a frame when
//   A^2 |x|^2 <= sum_j |H_j x|^2 <= B^2 |x|^2.

// Randomized estimate: extremes of the energy ratio over `trials` random unit
// vectors. Almost surely positive on both sides, but only certifies vectors
// it happened to draw.
inline std::pair<double, double> estimate_frame_bounds(const FilterBank& bank, int trials,
                                                       std::uint64_t seed) {
  if (trials < 1) throw ArgumentError("estimate_frame_bounds needs trials >= 1");
  if (bank.filters.empty()) throw ArgumentError("empty filter bank");
  Rng rng(seed);
  const int n = bank.graph_size;
  double lo = std::numeric_limits<double>::infinity();
  double hi = 0.0;
  for (int t = 0; t < trials; ++t) {
    Eigen::VectorXd x(n);
    for (int i = 0; i < n; ++i) x[i] = rng.next_gaussian();
    const double nrm = x.norm();
    if (nrm == 0.0) continue;
    x /= nrm;
    double energy = 0.0;
    for (const auto& h : bank.filters) energy += (h * x).squaredNorm();
    lo = std::min(lo, energy);
    hi = std::max(hi, energy);
  }
  return {std::sqrt(lo), std::sqrt(hi)};
}

// Exact bounds via the extreme eigenvalues of sum_j H_j^T H_j. Cubic in the
// graph size; intended for graphs up to a few hundred nodes. Note that pure
// band-pass banks annihilate the flat component (the diffusion bands all
// vanish at eigenvalue 1, the monic cubic bands at Laplacian eigenvalue 0),
// so their certified lower bound is exactly 0 even though randomized
// estimates come out positive.
inline std::pair<double, double> certified_frame_bounds(const FilterBank& bank) {
  if (bank.filters.empty()) throw ArgumentError("empty filter bank");
  const int n = bank.graph_size;
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(n, n);
  for (const auto& h : bank.filters) gram.noalias() += h.transpose() * h;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
  if (eig.info() != Eigen::Success) throw InternalError("frame Gram eigendecomposition failed");
  const double lo = std::max(eig.eigenvalues().minCoeff(), 0.0);
  const double hi = std::max(eig.eigenvalues().maxCoeff(), 0.0);
  return {std::sqrt(lo), std::sqrt(hi)};
}

// Energy growth constant of an L-layer scattering tree under an upper frame
// bound B: F = sqrt(sum_{l=0}^{L-1} B^(2l)). Tight banks (B = 1) give sqrt(L).
inline double frame_energy_constant(double upper_bound, int layers) {
  if (layers < 1) throw ArgumentError("frame_energy_constant needs layers >= 1");
  if (upper_bound < 0.0) throw ArgumentError("frame bound must be nonnegative");
  double sum = 0.0;
  double term = 1.0;
  const double b2 = upper_bound * upper_bound;
  for (int l = 0; l < layers; ++l) {
    sum += term;
    term *= b2;
  }
  return std::sqrt(sum);
}

}  // namespace gstun

#pragma once

#include <cstdint>

#include <Eigen/Dense>

namespace gstun::flops {

// Thread-local floating-point operation tally. Only the instrumented
// embedding-update paths feed it; ordinary library calls do not, so a
// reset()/count() pair brackets exactly one measured section.
inline thread_local std::uint64_t tally = 0;

inline void add(std::uint64_t n) { tally += n; }
inline void reset() { tally = 0; }
inline std::uint64_t count() { return tally; }

// Counted Eigen wrappers. Cost model: a dense m x n by n x k product is
// 2mnk, a matvec 2mn, a rank-1 accumulate 2mn, a plain copy or add mn.

inline Eigen::VectorXd matvec(const Eigen::MatrixXd& m, const Eigen::VectorXd& v) {
  add(2ull * static_cast<std::uint64_t>(m.rows()) * static_cast<std::uint64_t>(m.cols()));
  return m * v;
}

inline Eigen::VectorXd matvec_t(const Eigen::MatrixXd& m, const Eigen::VectorXd& v) {
  add(2ull * static_cast<std::uint64_t>(m.rows()) * static_cast<std::uint64_t>(m.cols()));
  return m.transpose() * v;
}

inline Eigen::MatrixXd matmul(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  add(2ull * static_cast<std::uint64_t>(a.rows()) * static_cast<std::uint64_t>(a.cols()) *
      static_cast<std::uint64_t>(b.cols()));
  return a * b;
}

inline void rank1_accumulate(Eigen::MatrixXd& m, const Eigen::VectorXd& u,
                             const Eigen::VectorXd& v) {
  add(2ull * static_cast<std::uint64_t>(u.size()) * static_cast<std::uint64_t>(v.size()));
  m.noalias() += u * v.transpose();
}

inline void charge_copy(std::uint64_t rows, std::uint64_t cols) { add(rows * cols); }

}  // namespace gstun::flops

#pragma once

// Lifted form of the flag objective.  With M_i = I/m - g~_i g~_i^T and an
// orthonormal Y, tr(Y^T M_i Y) = 1 - ||Y^T g~_i||^2, so
//
//   L(Y) = sum_i sqrt(tr(Y^T M_i Y) + kappa)
//
// matches the data term when kappa = 0.  tr(Y^T M Y) equals
// vec(Y)^T (I (x) M) vec(Y), the objective of the lifted program over
// Z = vec(Y) vec(Y)^T; only the factored form in Y is optimized here.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <utility>
#include <vector>

#include "flagagg/error.hpp"
#include "flagagg/linalg.hpp"
#include "flagagg/rng.hpp"

namespace flagagg::relax {

struct LiftedInstance {
  std::vector<Matrix> terms;  // symmetric n x n M_i
  std::size_t m = 1;
  double kappa = 0.0;
};

/// kappa = |min_i min(lambda_min(M_i), 0)|; the smallest eigenvalue of
/// I (x) M_i equals that of M_i.
inline double auto_kappa(const std::vector<Matrix>& terms) {
  double lo = 0.0;
  for (const auto& mi : terms) lo = std::min(lo, linalg::sym_eig(mi).values.back());
  return std::abs(lo);
}

/// Builds M_i = I/m - g~ g~^T from the columns of G; kappa < 0 selects auto.
inline LiftedInstance make_instance(const Matrix& g, std::size_t m, double kappa = -1.0) {
  require(m >= 1 && m <= g.rows(), Errc::InvalidArgument, "lifted instance needs 1 <= m <= n");
  LiftedInstance inst;
  inst.m = m;
  const std::size_t n = g.rows();
  for (std::size_t i = 0; i < g.cols(); ++i) {
    const double nrm = norm2(g.col(i));
    require(nrm > 0.0, Errc::ZeroGradient, "lifted instance: zero gradient column");
    Matrix mi = scale(Matrix::identity(n), 1.0 / static_cast<double>(m));
    for (std::size_t c = 0; c < n; ++c)
      for (std::size_t r = 0; r < n; ++r) mi(r, c) -= g(r, i) * g(c, i) / (nrm * nrm);
    inst.terms.push_back(std::move(mi));
  }
  inst.kappa = kappa < 0.0 ? auto_kappa(inst.terms) : kappa;
  return inst;
}

/// ||(I - g~ g~^T)^(1/2) y||.  The matrix is a projector, so its square root
/// is itself and the term is the norm of y's component orthogonal to g.
inline double socp_term_m1(std::span<const double> y, std::span<const double> g) {
  require(y.size() == g.size(), Errc::DimensionMismatch, "socp_term_m1");
  const double gn = norm2(g);
  require(gn > 0.0, Errc::ZeroGradient, "socp_term_m1: zero gradient");
  const double c = dot(y, g) / gn;
  Vector r(y.begin(), y.end());
  for (std::size_t k = 0; k < r.size(); ++k) r[k] -= c * g[k] / gn;
  return norm2(r);
}

/// Explicit I_m (x) M_{n x n}.
inline Matrix kron_identity(std::size_t m, const Matrix& mat) {
  const std::size_t n = mat.rows();
  Matrix out(n * m, n * m);
  for (std::size_t b = 0; b < m; ++b)
    for (std::size_t c = 0; c < n; ++c)
      for (std::size_t r = 0; r < n; ++r) out(b * n + r, b * n + c) = mat(r, c);
  return out;
}

/// |tr(Y^T M Y) - vec(Y)^T (I (x) M) vec(Y)|.  The Kronecker matrix is
/// materialized when nm <= 64 and applied blockwise otherwise.
inline double kron_identity_check(const Matrix& y, const Matrix& mat) {
  require(mat.rows() == mat.cols() && mat.rows() == y.rows(), Errc::DimensionMismatch, "kron_identity_check");
  const std::size_t n = y.rows();
  const std::size_t m = y.cols();
  const double direct = trace(matmul_tn(y, matmul(mat, y)));
  double lifted = 0.0;
  const auto vec = y.data();  // column-major storage is vec(Y)
  if (n * m <= 64) {
    const Matrix big = kron_identity(m, mat);
    lifted = dot(vec, matvec(big, vec));
  } else {
    for (std::size_t b = 0; b < m; ++b) {
      const Vector blk = matvec(mat, y.col(b));
      lifted += dot(y.col(b), blk);
    }
  }
  return std::abs(direct - lifted);
}

inline double lifted_term(const Matrix& y, const Matrix& mi, double kappa) {
  const double tr = trace(matmul_tn(y, matmul(mi, y)));
  return std::sqrt(std::max(tr, 0.0) + kappa);
}

inline double lifted_objective(const Matrix& y, const LiftedInstance& inst) {
  double s = 0.0;
  for (const auto& mi : inst.terms) s += lifted_term(y, mi, inst.kappa);
  return s;
}

/// dL/dY = sum_i M_i Y / sqrt(tr(Y^T M_i Y) + kappa)  (M_i symmetric).
/// A term whose argument is exactly 0 sits at the kink of the square root
/// and contributes the zero subgradient.
inline Matrix lifted_gradient(const Matrix& y, const LiftedInstance& inst) {
  Matrix out(y.rows(), y.cols());
  for (const auto& mi : inst.terms) {
    const Matrix my = matmul(mi, y);
    const double arg = std::max(trace(matmul_tn(y, my)), 0.0) + inst.kappa;
    if (arg <= 0.0) continue;
    out = add(out, my, 1.0 / std::sqrt(arg));
  }
  return out;
}

struct PgdResult {
  Subspace subspace;
  std::vector<double> trace;  // objective of each accepted iterate
  std::size_t rejected_steps = 0;
};

/// Projected gradient descent on the Stiefel manifold with QR retraction.
/// A step that raises the objective is retried at half the step size; the
/// step never drops below 1e-8.
inline PgdResult factored_pgd(const LiftedInstance& inst, std::size_t m, double step, std::size_t iters,
                              std::uint64_t seed, const Matrix* init = nullptr) {
  require(step > 0.0, Errc::InvalidArgument, "step must be > 0");
  require(!inst.terms.empty(), Errc::InvalidArgument, "empty lifted instance");
  const std::size_t n = inst.terms.front().rows();
  require(m >= 1 && m <= n, Errc::InvalidArgument, "factored_pgd needs 1 <= m <= n");

  Matrix y;
  if (init) {
    y = linalg::orthonormalize(*init);
  } else {
    Rng rng(seed);
    y = Matrix(n, m);
    for (auto& v : y.data()) v = rng.normal();
    y = linalg::orthonormalize(y);
  }
  PgdResult res{Subspace(y, 1e-9), {}, 0};
  double obj = lifted_objective(y, inst);
  res.trace.push_back(obj);
  double eta = step;
  bool progressed = false;
  for (std::size_t it = 0; it < iters; ++it) {
    const Matrix grad = lifted_gradient(y, inst);
    bool accepted = false;
    while (eta >= 1e-8) {
      Matrix cand;
      try {
        cand = linalg::orthonormalize(add(y, grad, -eta));
      } catch (const Error&) {
        eta *= 0.5;
        ++res.rejected_steps;
        continue;
      }
      const double cobj = lifted_objective(cand, inst);
      if (cobj <= obj) {
        y = std::move(cand);
        obj = cobj;
        accepted = true;
        progressed = true;
        break;
      }
      eta *= 0.5;
      ++res.rejected_steps;
    }
    if (!accepted) {
      if (!progressed) fail(Errc::StepTooSmall, "backtracking reached the 1e-8 floor before any progress");
      break;
    }
    res.trace.push_back(obj);
    eta = std::min(step, 2.0 * eta);
  }
  res.subspace = Subspace(y, 1e-9);
  return res;
}

/// M / ||M||_*; the result has spectral radius <= 1, so I - M/||M||_* is PSD.
inline Matrix nuclear_normalize(const Matrix& mat) {
  const auto eig = linalg::sym_eig(mat);
  double nuc = 0.0;
  for (double v : eig.values) nuc += std::abs(v);
  require(nuc > 0.0, Errc::ZeroMatrix, "nuclear_normalize: zero matrix");
  Matrix out = scale(mat, 1.0 / nuc);
  Matrix shifted = scale(out, -1.0);
  for (std::size_t i = 0; i < shifted.rows(); ++i) shifted(i, i) += 1.0;
  require(linalg::sym_eig(symmetrize(shifted)).values.back() >= -1e-10, Errc::DomainError,
          "I - M/||M||_* is not PSD");
  return out;
}

/// Max entrywise error of lifted_gradient against central differences with
/// step h, relative to max(1e-3 * ||grad||_inf, |entry|).
inline double gradient_fd_check(const LiftedInstance& inst, const Matrix& y, double h) {
  const Matrix analytic = lifted_gradient(y, inst);
  const double scale_ref = max_abs(analytic);
  double worst = 0.0;
  Matrix probe = y;
  for (std::size_t k = 0; k < y.data().size(); ++k) {
    const double orig = probe.data()[k];
    probe.data()[k] = orig + h;
    const double fp = lifted_objective(probe, inst);
    probe.data()[k] = orig - h;
    const double fm = lifted_objective(probe, inst);
    probe.data()[k] = orig;
    const double fd = (fp - fm) / (2.0 * h);
    const double a = analytic.data()[k];
    const double denom = std::max({std::abs(a), 1e-3 * scale_ref, std::numeric_limits<double>::min()});
    worst = std::max(worst, std::abs(a - fd) / denom);
  }
  return worst;
}

}  // namespace flagagg::relax

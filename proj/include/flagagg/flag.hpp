#pragma once

// Flag Aggregator: subspace maximum-likelihood aggregation of worker
// gradients, solved by iteratively reweighted least squares (IRLS).
//
// With unit gradients g~_i and an orthonormal frame Y (n x m), the worker
// value is v_i = ||Y^T g~_i||^2 and the objective is
//
//   A(Y) = sum_i sqrt(1 - v_i) + lambda * R(Y)
//
// Each IRLS step majorizes every sqrt(u) term at the current point by its
// tangent line, which turns the problem into a weighted PCA whose solution
// is the top-m left singular subspace of [ sqrt(w_i) g~_i | ... ].  Weights
// use max(u, guard_eps) so a gradient lying in span(Y) keeps a finite
// weight; the trace records the matching guarded objective, for which the
// iteration is a true majorize-minimize scheme and therefore monotone.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "flagagg/error.hpp"
#include "flagagg/linalg.hpp"

namespace flagagg::flag {

enum class Regularizer { None, ElementwiseL1, PairwiseChordal };

struct BetaShape {
  double alpha = 1.0;
  double beta = 0.5;
};

struct FlagConfig {
  std::size_t m = 0;  // 0 selects ceil((p + 1) / 2)
  double lambda = 0.0;
  Regularizer regularizer = Regularizer::None;
  double l1_smoothing = 1e-2;  // delta in sum sqrt(Y_ij^2 + delta^2)
  std::size_t max_iters = 5;
  double tol = 1e-10;
  double guard_eps = 1e-12;
  double taylor_a = 2.0;
  BetaShape beta_shape{};
  bool uniform_weights = false;  // freeze data weights at 1 (plain PCA step)

  void validate() const {
    require(taylor_a > 1.0, Errc::InvalidArgument, "taylor_a must be > 1");
    require(lambda >= 0.0, Errc::InvalidArgument, "lambda must be >= 0");
    require(tol > 0.0, Errc::InvalidArgument, "tol must be > 0");
    require(guard_eps > 0.0, Errc::InvalidArgument, "guard_eps must be > 0");
    require(beta_shape.alpha > 0.0 && beta_shape.beta > 0.0, Errc::InvalidArgument, "Beta shapes must be > 0");
    require(regularizer != Regularizer::ElementwiseL1 || l1_smoothing > 0.0, Errc::InvalidArgument,
            "l1_smoothing must be > 0");
  }

  std::size_t resolved_m(std::size_t p) const { return m != 0 ? m : (p + 2) / 2; }
};

inline std::string to_string(Regularizer r) {
  switch (r) {
    case Regularizer::None: return "none";
    case Regularizer::ElementwiseL1: return "l1";
    case Regularizer::PairwiseChordal: return "pairwise";
  }
  return "none";
}

inline Regularizer parse_regularizer(const std::string& s) {
  if (s == "none") return Regularizer::None;
  if (s == "l1" || s == "elementwise-l1") return Regularizer::ElementwiseL1;
  if (s == "pairwise" || s == "pairwise-chordal") return Regularizer::PairwiseChordal;
  fail(Errc::InvalidArgument, "unknown regularizer '" + s + "' (none|l1|pairwise)");
}

/// Column-stacked worker gradients, n x p.
class GradientMatrix {
 public:
  explicit GradientMatrix(Matrix g, std::vector<std::string> worker_ids = {})
      : g_(std::move(g)), ids_(std::move(worker_ids)) {
    require(g_.rows() >= 1, Errc::InvalidArgument, "gradient matrix needs n >= 1");
    require(g_.cols() >= 2, Errc::InvalidArgument, "gradient matrix needs p >= 2 workers");
    require(g_.all_finite(), Errc::InvalidArgument, "gradient matrix has non-finite entries");
    if (ids_.empty())
      for (std::size_t i = 0; i < g_.cols(); ++i) ids_.push_back("w" + std::to_string(i));
    require(ids_.size() == g_.cols(), Errc::DimensionMismatch, "worker id count != p");
  }

  const Matrix& matrix() const noexcept { return g_; }
  std::size_t n() const noexcept { return g_.rows(); }
  std::size_t p() const noexcept { return g_.cols(); }
  const std::vector<std::string>& worker_ids() const noexcept { return ids_; }

 private:
  Matrix g_;
  std::vector<std::string> ids_;
};

struct IrlsTrace {
  std::vector<double> objectives;      // [0] at the initial frame, [k] after step k
  std::vector<Vector> weights;         // data weight per worker, one vector per step
  std::size_t iterations_run = 0;
  bool converged = false;
};

// ---------------------------------------------------------------------------
// Likelihood pieces

/// ||Y^T g||^2 / ||g||^2 clamped to [0, 1].
inline double explained_variance(const Subspace& y, std::span<const double> g, double guard_eps = 1e-12) {
  require(g.size() == y.ambient(), Errc::DimensionMismatch, "explained_variance");
  const double gn2 = dot(g, g);
  require(std::sqrt(gn2) > guard_eps, Errc::ZeroGradient, "explained_variance of a zero gradient");
  const Vector z = matvec_t(y.basis(), g);
  return std::clamp(dot(z, z) / gn2, 0.0, 1.0);
}

/// -sum[(alpha-1) log v + (beta-1) log(1-v)], normalization constant dropped.
inline double beta_neg_loglik(std::span<const double> v, double alpha = 1.0, double beta = 0.5) {
  require(alpha > 0.0 && beta > 0.0, Errc::InvalidArgument, "Beta shapes must be > 0");
  double s = 0.0;
  for (double vi : v) {
    require(vi >= 0.0, Errc::DomainError, "worker value below 0");
    require(vi < 1.0, Errc::DomainError, "worker value >= 1 makes log(1 - v) singular");
    if (alpha != 1.0) {
      require(vi > 0.0, Errc::DomainError, "worker value 0 makes log v singular");
      s -= (alpha - 1.0) * std::log(vi);
    }
    if (beta != 1.0) s -= (beta - 1.0) * std::log1p(-vi);
  }
  return s;
}

/// Taylor surrogate of the Beta(1, 1/2) negative log-likelihood:
/// (1/2) sum (a (1 - v)^(1/a) - a).
inline double taylor_neg_loglik(std::span<const double> v, double a = 2.0) {
  require(a > 1.0, Errc::InvalidArgument, "Taylor constant a must be > 1");
  double s = 0.0;
  for (double vi : v) {
    require(vi >= 0.0 && vi <= 1.0, Errc::DomainError, "worker value outside [0, 1]");
    s += a * std::pow(1.0 - vi, 1.0 / a) - a;
  }
  return 0.5 * s;
}

/// General Beta shapes: one Taylor term per shape parameter,
/// (1-alpha)(a v^(1/a) - a) + (1-beta)(a (1-v)^(1/a) - a).
inline double taylor_neg_loglik(std::span<const double> v, double a, BetaShape shape) {
  require(a > 1.0, Errc::InvalidArgument, "Taylor constant a must be > 1");
  double s = 0.0;
  for (double vi : v) {
    require(vi >= 0.0 && vi <= 1.0, Errc::DomainError, "worker value outside [0, 1]");
    s += (1.0 - shape.alpha) * (a * std::pow(vi, 1.0 / a) - a);
    s += (1.0 - shape.beta) * (a * std::pow(1.0 - vi, 1.0 / a) - a);
  }
  return s;
}

namespace detail {

/// Unit directions of the non-zero workers plus the regularizer's pair list.
struct Problem {
  std::size_t n = 0;
  std::size_t p = 0;                 // all workers, including zero columns
  std::vector<std::size_t> active;   // workers with ||g_i|| > guard_eps
  Vector norms;                      // per worker (0 for excluded)
  Matrix unit;                       // n x |active|
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // indexes into `active`
  Matrix pair_unit;                  // n x |pairs|
  double pair_scale = 0.0;           // lambda / (|active| - 1)
};

inline Problem prepare(const Matrix& g, const FlagConfig& cfg) {
  Problem pb;
  pb.n = g.rows();
  pb.p = g.cols();
  pb.norms.assign(pb.p, 0.0);
  for (std::size_t i = 0; i < pb.p; ++i) {
    pb.norms[i] = norm2(g.col(i));
    if (pb.norms[i] > cfg.guard_eps) pb.active.push_back(i);
  }
  pb.unit = Matrix(pb.n, pb.active.size());
  for (std::size_t k = 0; k < pb.active.size(); ++k) {
    const std::size_t i = pb.active[k];
    auto dst = pb.unit.col(k);
    auto src = g.col(i);
    for (std::size_t r = 0; r < pb.n; ++r) dst[r] = src[r] / pb.norms[i];
  }
  if (cfg.regularizer == Regularizer::PairwiseChordal && cfg.lambda > 0.0 && pb.active.size() >= 2) {
    std::vector<Vector> diffs;
    for (std::size_t a = 0; a < pb.active.size(); ++a) {
      for (std::size_t b = a + 1; b < pb.active.size(); ++b) {
        Vector d = sub(g.col(pb.active[a]), g.col(pb.active[b]));
        const double dn = norm2(d);
        if (dn <= cfg.guard_eps) continue;
        for (auto& v : d) v /= dn;
        diffs.push_back(std::move(d));
        pb.pairs.emplace_back(a, b);
      }
    }
    pb.pair_unit = diffs.empty() ? Matrix(pb.n, 0) : Matrix::from_columns(diffs);
    pb.pair_scale = cfg.lambda / static_cast<double>(pb.active.size() - 1);
  } else {
    pb.pair_unit = Matrix(pb.n, 0);
  }
  return pb;
}

/// 1 - ||Y^T x||^2 for every column x of `unit`, clamped at 0.
inline Vector residuals(const Matrix& y, const Matrix& unit) {
  const Matrix z = matmul_tn(y, unit);
  Vector u(unit.cols());
  for (std::size_t k = 0; k < unit.cols(); ++k) u[k] = std::clamp(1.0 - dot(z.col(k), z.col(k)), 0.0, 1.0);
  return u;
}

/// u^(1/a), continued below guard_eps by its tangent line so the IRLS weight
/// max(u, eps)^(1/a - 1) / a is exactly its derivative.
inline double guarded_root(double u, double a, double eps) {
  if (u >= eps) return std::pow(u, 1.0 / a);
  return std::pow(eps, 1.0 / a) + std::pow(eps, 1.0 / a - 1.0) * (u - eps) / a;
}

inline double guarded_root_slope(double u, double a, double eps) {
  return std::pow(std::max(u, eps), 1.0 / a - 1.0) / a;
}

inline double l1_value(const Matrix& y, double delta) {
  double s = 0.0;
  for (double v : y.data()) s += std::sqrt(v * v + delta * delta);
  return s;
}

inline Matrix l1_gradient(const Matrix& y, double delta) {
  Matrix out = y;
  for (auto& v : out.data()) v = v / std::sqrt(v * v + delta * delta);
  return out;
}

struct Terms {
  Vector data_u;  // per active worker
  Vector pair_u;  // per pair
};

inline Terms evaluate_terms(const Problem& pb, const Matrix& y) {
  return {residuals(y, pb.unit), residuals(y, pb.pair_unit)};
}

inline double objective(const Problem& pb, const Matrix& y, const FlagConfig& cfg, bool guarded) {
  const Terms t = evaluate_terms(pb, y);
  const double a = cfg.taylor_a;
  const double c_beta = (1.0 - cfg.beta_shape.beta) * a;
  const double c_alpha = (1.0 - cfg.beta_shape.alpha) * a;
  double s = 0.0;
  for (double u : t.data_u) {
    s += c_beta * (guarded ? guarded_root(u, a, cfg.guard_eps) : std::pow(u, 1.0 / a));
    if (c_alpha != 0.0) s += c_alpha * std::pow(1.0 - u, 1.0 / a);
  }
  double reg = 0.0;
  for (double u : t.pair_u) reg += guarded ? guarded_root(u, 2.0, cfg.guard_eps) : std::sqrt(u);
  s += pb.pair_scale * reg;
  if (cfg.regularizer == Regularizer::ElementwiseL1 && cfg.lambda > 0.0)
    s += cfg.lambda * l1_value(y, cfg.l1_smoothing);
  return s;
}

struct Weights {
  Vector data;  // per active worker
  Vector pair;  // per pair
};

/// Tangent slopes of the guarded terms at Y (the IRLS reweighting).
inline Weights weights_at(const Problem& pb, const Matrix& y, const FlagConfig& cfg) {
  const Terms t = evaluate_terms(pb, y);
  const double c_beta = (1.0 - cfg.beta_shape.beta) * cfg.taylor_a;
  Weights w{Vector(t.data_u.size()), Vector(t.pair_u.size())};
  for (std::size_t k = 0; k < t.data_u.size(); ++k)
    w.data[k] = cfg.uniform_weights ? 1.0 : c_beta * guarded_root_slope(t.data_u[k], cfg.taylor_a, cfg.guard_eps);
  for (std::size_t k = 0; k < t.pair_u.size(); ++k)
    w.pair[k] = pb.pair_scale * guarded_root_slope(t.pair_u[k], 2.0, cfg.guard_eps);
  return w;
}

/// [ sqrt(w_i) g~_i | sqrt(w_ij) d~_ij ], zero-padded to at least m columns.
inline Matrix weighted_columns(const Problem& pb, const Weights& w, std::size_t m) {
  const std::size_t q = pb.unit.cols() + pb.pair_unit.cols();
  Matrix b(pb.n, std::max(q, m));
  std::size_t c = 0;
  for (std::size_t k = 0; k < pb.unit.cols(); ++k, ++c) {
    const double s = std::sqrt(w.data[k]);
    auto dst = b.col(c);
    auto src = pb.unit.col(k);
    for (std::size_t r = 0; r < pb.n; ++r) dst[r] = s * src[r];
  }
  for (std::size_t k = 0; k < pb.pair_unit.cols(); ++k, ++c) {
    const double s = std::sqrt(w.pair[k]);
    auto dst = b.col(c);
    auto src = pb.pair_unit.col(k);
    for (std::size_t r = 0; r < pb.n; ++r) dst[r] = s * src[r];
  }
  return b;
}

/// Euclidean gradient of the guarded objective with respect to Y, split into
/// the data part G D G^T Y and the regularizer part lambda * grad R(Y).
struct GradientParts {
  Matrix data;
  Matrix reg;
  Vector d_diag;  // D entries per worker (all p), zero for excluded workers
};

inline GradientParts gradient_parts(const Problem& pb, const Matrix& y, const FlagConfig& cfg) {
  FlagConfig exact = cfg;
  exact.uniform_weights = false;
  const Weights w = weights_at(pb, y, exact);
  GradientParts out{Matrix(pb.n, y.cols()), Matrix(pb.n, y.cols()), Vector(pb.p, 0.0)};
  const Matrix zd = matmul_tn(pb.unit, y);  // |active| x m
  for (std::size_t k = 0; k < pb.unit.cols(); ++k) {
    const std::size_t i = pb.active[k];
    out.d_diag[i] = -2.0 * w.data[k] / (pb.norms[i] * pb.norms[i]);
    for (std::size_t j = 0; j < y.cols(); ++j) axpy(-2.0 * w.data[k] * zd(k, j), pb.unit.col(k), out.data.col(j));
  }
  if (pb.pair_unit.cols() > 0) {
    const Matrix zp = matmul_tn(pb.pair_unit, y);
    for (std::size_t k = 0; k < pb.pair_unit.cols(); ++k)
      for (std::size_t j = 0; j < y.cols(); ++j) axpy(-2.0 * w.pair[k] * zp(k, j), pb.pair_unit.col(k), out.reg.col(j));
  }
  if (cfg.regularizer == Regularizer::ElementwiseL1 && cfg.lambda > 0.0)
    out.reg = add(out.reg, l1_gradient(y, cfg.l1_smoothing), cfg.lambda);
  return out;
}

/// One majorize-minimize step from Y.
inline Matrix irls_step(const Problem& pb, const Matrix& y, const FlagConfig& cfg, Vector* data_weights) {
  const std::size_t m = y.cols();
  const Weights w = weights_at(pb, y, cfg);
  if (data_weights) {
    data_weights->assign(pb.p, 0.0);
    for (std::size_t k = 0; k < pb.active.size(); ++k) (*data_weights)[pb.active[k]] = w.data[k];
  }
  const Matrix b = weighted_columns(pb, w, m);
  if (cfg.regularizer != Regularizer::ElementwiseL1 || cfg.lambda == 0.0)
    return linalg::thin_svd_left(b, m).basis;

  // The entrywise term is not rotation invariant, so the data surrogate is
  // linearized as well and the step becomes a Procrustes problem: maximize
  // <2 A Y + (lambda / delta) Y - lambda grad R(Y), Y'> with A = B B^T,
  // using the 1/delta curvature bound of sqrt(x^2 + delta^2).
  Matrix k = scale(matmul(b, matmul_tn(b, y)), 2.0);
  k = add(k, y, cfg.lambda / cfg.l1_smoothing);
  k = add(k, l1_gradient(y, cfg.l1_smoothing), -cfg.lambda);
  return linalg::polar(k);
}

}  // namespace detail

/// Exact objective; every column must be non-zero.
inline double fa_objective(const Subspace& y, const GradientMatrix& g, const FlagConfig& cfg) {
  cfg.validate();
  require(y.ambient() == g.n(), Errc::DimensionMismatch, "fa_objective: Y rows != n");
  const detail::Problem pb = detail::prepare(g.matrix(), cfg);
  require(pb.active.size() == g.p(), Errc::ZeroGradient, "fa_objective: zero gradient column");
  return detail::objective(pb, y.basis(), cfg, false);
}

/// Objective with each root continued linearly below guard_eps; this is the
/// quantity IRLS decreases monotonically and that its trace records.
inline double fa_objective_guarded(const Subspace& y, const GradientMatrix& g, const FlagConfig& cfg) {
  cfg.validate();
  require(y.ambient() == g.n(), Errc::DimensionMismatch, "fa_objective_guarded: Y rows != n");
  return detail::objective(detail::prepare(g.matrix(), cfg), y.basis(), cfg, true);
}

/// Top-m PCA of the column-normalized non-zero gradients.
inline Subspace pca_init(const GradientMatrix& g, std::size_t m, double guard_eps = 1e-12) {
  FlagConfig cfg;
  cfg.guard_eps = guard_eps;
  const detail::Problem pb = detail::prepare(g.matrix(), cfg);
  require(!pb.active.empty(), Errc::DegenerateInput, "all gradients are zero");
  require(m >= 1 && m <= g.n(), Errc::InvalidArgument, "subspace dimension must satisfy 1 <= m <= n");
  Matrix b = pb.unit;
  if (b.cols() < m) {
    Matrix padded(b.rows(), m);
    for (std::size_t j = 0; j < b.cols(); ++j) std::copy(b.col(j).begin(), b.col(j).end(), padded.col(j).begin());
    b = std::move(padded);
  }
  return Subspace(linalg::thin_svd_left(b, m).basis);
}

inline std::pair<Subspace, IrlsTrace> irls_solve(const GradientMatrix& g, const FlagConfig& cfg,
                                                 const std::optional<Subspace>& init = std::nullopt) {
  cfg.validate();
  require(cfg.beta_shape.alpha == 1.0, Errc::InvalidArgument, "IRLS supports alpha = 1 only");
  require(cfg.beta_shape.beta < 1.0, Errc::InvalidArgument, "IRLS needs beta < 1");
  const detail::Problem pb = detail::prepare(g.matrix(), cfg);
  require(!pb.active.empty(), Errc::DegenerateInput, "all gradients are zero");
  const std::size_t m = cfg.resolved_m(g.p());
  require(m >= 1 && m <= g.n(), Errc::InvalidArgument, "subspace dimension must satisfy 1 <= m <= n");

  Matrix y;
  if (init) {
    require(init->ambient() == g.n() && init->dim() == m, Errc::DimensionMismatch, "init subspace shape");
    y = init->basis();
  } else {
    y = pca_init(g, m, cfg.guard_eps).basis();
  }

  IrlsTrace trace;
  double prev = detail::objective(pb, y, cfg, true);
  trace.objectives.push_back(prev);
  for (std::size_t k = 0; k < cfg.max_iters; ++k) {
    Vector w;
    y = detail::irls_step(pb, y, cfg, &w);
    const double obj = detail::objective(pb, y, cfg, true);
    trace.objectives.push_back(obj);
    trace.weights.push_back(std::move(w));
    trace.iterations_run = k + 1;
    if (std::abs(obj - prev) < cfg.tol) {
      trace.converged = true;
      break;
    }
    prev = obj;
  }
  return {Subspace(y, 1e-9), std::move(trace)};
}

struct FaResult {
  Vector direction;
  Subspace subspace;
  IrlsTrace trace;
  std::size_t workers_used = 0;
};

/// (1/p) Y Y^T G 1 over the non-zero workers.
inline FaResult fa_aggregate_detailed(const GradientMatrix& g, const FlagConfig& cfg) {
  auto [y, trace] = irls_solve(g, cfg);
  const detail::Problem pb = detail::prepare(g.matrix(), cfg);
  Vector sum(g.n(), 0.0);
  for (std::size_t i : pb.active) axpy(1.0, g.matrix().col(i), sum);
  Vector d = y.project(sum);
  for (auto& v : d) v /= static_cast<double>(pb.active.size());
  return {std::move(d), std::move(y), std::move(trace), pb.active.size()};
}

inline Vector fa_aggregate(const GradientMatrix& g, const FlagConfig& cfg) {
  return fa_aggregate_detailed(g, cfg).direction;
}

/// ||grad + 2 Y Gamma||_F / max(1, ||grad||_F) with Gamma = -1/2 sym(Y^T grad),
/// evaluated on the guarded objective.
inline double kkt_residual(const Subspace& y, const GradientMatrix& g, const FlagConfig& cfg) {
  cfg.validate();
  require(y.ambient() == g.n(), Errc::DimensionMismatch, "kkt_residual: Y rows != n");
  const detail::Problem pb = detail::prepare(g.matrix(), cfg);
  require(!pb.active.empty(), Errc::ZeroGradient, "kkt_residual: all gradients are zero");
  const auto parts = detail::gradient_parts(pb, y.basis(), cfg);
  const Matrix grad = add(parts.data, parts.reg);
  const Matrix gamma = scale(symmetrize(matmul_tn(y.basis(), grad)), -0.5);
  const Matrix r = add(grad, matmul(y.basis(), gamma), 2.0);
  return frobenius(r) / std::max(1.0, frobenius(grad));
}

struct SelectionResult {
  Matrix s_fa;            // p x p, G S_FA is the data part of the update
  Matrix multiplier_map;  // m x p
  Matrix reg_gradient;    // lambda * grad R(Y), n x m
  Matrix gamma;           // m x m Lagrange multipliers
  double reconstruction_residual = 0.0;  // relative to ||G||_F
  bool singular_multipliers = false;
};

/// Selection-matrix form of the stationary update:
/// Y Y^T G = (G S_FA + lambda grad R(Y) M) / 4.
inline SelectionResult selection_matrix(const Subspace& y, const GradientMatrix& g, const FlagConfig& cfg) {
  cfg.validate();
  require(y.ambient() == g.n(), Errc::DimensionMismatch, "selection_matrix: Y rows != n");
  const Matrix& gm = g.matrix();
  const Matrix& ym = y.basis();
  const detail::Problem pb = detail::prepare(gm, cfg);
  require(!pb.active.empty(), Errc::ZeroGradient, "selection_matrix: all gradients are zero");
  const auto parts = detail::gradient_parts(pb, ym, cfg);
  const Matrix grad = add(parts.data, parts.reg);

  SelectionResult out;
  out.reg_gradient = parts.reg;
  out.gamma = scale(symmetrize(matmul_tn(ym, grad)), -0.5);
  double smallest = 0.0;
  const Matrix gamma_pinv = linalg::sym_pinv(out.gamma, 1e-10, &smallest);
  double largest = 0.0;
  for (double v : linalg::sym_eig(out.gamma).values) largest = std::max(largest, std::abs(v));
  out.singular_multipliers = smallest < 1e-10 * largest || largest == 0.0;

  // D G^T Y  (p x m)
  Matrix gty = matmul_tn(gm, ym);
  for (std::size_t j = 0; j < gty.cols(); ++j)
    for (std::size_t i = 0; i < gty.rows(); ++i) gty(i, j) *= parts.d_diag[i];
  const Matrix& s_prime = gty;

  // (Y^T G D G^T + lambda grad R^T) G  =  (grad^T) G  (m x p)
  const Matrix inner = matmul_tn(grad, gm);
  out.multiplier_map = matmul(matmul(gamma_pinv, gamma_pinv), inner);
  out.s_fa = matmul(s_prime, out.multiplier_map);

  const Matrix lhs = matmul(ym, matmul_tn(ym, gm));
  Matrix rhs = add(matmul(gm, out.s_fa), matmul(out.reg_gradient, out.multiplier_map));
  rhs = scale(std::move(rhs), 0.25);
  out.reconstruction_residual = frobenius(add(lhs, rhs, -1.0)) / std::max(frobenius(gm), 1e-300);
  return out;
}

}  // namespace flagagg::flag

#pragma once

// Dense column-major kernels sized for tall matrices with few columns:
// cyclic Jacobi eigensolver, thin SVD through the small Gram matrix, and
// modified Gram-Schmidt orthonormalization.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>
#include <span>
#include <string>
#include <vector>

#include "flagagg/error.hpp"
#include "flagagg/rng.hpp"

namespace flagagg {

using Vector = std::vector<double>;

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> column_major)
      : rows_(rows), cols_(cols), data_(std::move(column_major)) {
    require(data_.size() == rows_ * cols_, Errc::DimensionMismatch, "matrix data length != rows*cols");
  }

  static Matrix identity(std::size_t n) {
    Matrix out(n, n);
    for (std::size_t i = 0; i < n; ++i) out(i, i) = 1.0;
    return out;
  }

  /// Builds from row-major nested lists; convenient for literals in tests.
  static Matrix from_rows(const std::vector<std::vector<double>>& rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.front().size();
    Matrix out(r, c);
    for (std::size_t i = 0; i < r; ++i) {
      require(rows[i].size() == c, Errc::DimensionMismatch, "ragged rows");
      for (std::size_t j = 0; j < c; ++j) out(i, j) = rows[i][j];
    }
    return out;
  }

  static Matrix from_columns(const std::vector<Vector>& cols) {
    const std::size_t c = cols.size();
    const std::size_t r = c == 0 ? 0 : cols.front().size();
    Matrix out(r, c);
    for (std::size_t j = 0; j < c; ++j) {
      require(cols[j].size() == r, Errc::DimensionMismatch, "ragged columns");
      std::copy(cols[j].begin(), cols[j].end(), out.col(j).begin());
    }
    return out;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t i, std::size_t j) noexcept { return data_[j * rows_ + i]; }
  double operator()(std::size_t i, std::size_t j) const noexcept { return data_[j * rows_ + i]; }

  std::span<double> col(std::size_t j) noexcept { return {data_.data() + j * rows_, rows_}; }
  std::span<const double> col(std::size_t j) const noexcept { return {data_.data() + j * rows_, rows_}; }

  Vector column(std::size_t j) const { return {col(j).begin(), col(j).end()}; }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// ---------------------------------------------------------------------------
// Vector helpers

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline Vector scaled(std::span<const double> x, double alpha) {
  Vector out(x.begin(), x.end());
  for (auto& v : out) v *= alpha;
  return out;
}

inline Vector sub(std::span<const double> a, std::span<const double> b) {
  Vector out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

inline double cosine(std::span<const double> a, std::span<const double> b) {
  const double na = norm2(a);
  const double nb = norm2(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot(a, b) / (na * nb);
}

// ---------------------------------------------------------------------------
// Matrix helpers

inline Matrix transpose(const Matrix& a) {
  Matrix out(a.cols(), a.rows());
  for (std::size_t j = 0; j < a.cols(); ++j)
    for (std::size_t i = 0; i < a.rows(); ++i) out(j, i) = a(i, j);
  return out;
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.rows(), Errc::DimensionMismatch, "matmul inner dimensions");
  Matrix out(a.rows(), b.cols());
  for (std::size_t j = 0; j < b.cols(); ++j) {
    auto oc = out.col(j);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double bkj = b(k, j);
      if (bkj != 0.0) axpy(bkj, a.col(k), oc);
    }
  }
  return out;
}

/// a^T b without forming the transpose.
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  require(a.rows() == b.rows(), Errc::DimensionMismatch, "matmul_tn row counts");
  Matrix out(a.cols(), b.cols());
  for (std::size_t j = 0; j < b.cols(); ++j)
    for (std::size_t i = 0; i < a.cols(); ++i) out(i, j) = dot(a.col(i), b.col(j));
  return out;
}

/// a b^T.
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) { return matmul(a, transpose(b)); }

inline Vector matvec(const Matrix& a, std::span<const double> x) {
  require(a.cols() == x.size(), Errc::DimensionMismatch, "matvec");
  Vector out(a.rows(), 0.0);
  for (std::size_t j = 0; j < a.cols(); ++j) axpy(x[j], a.col(j), out);
  return out;
}

inline Vector matvec_t(const Matrix& a, std::span<const double> x) {
  require(a.rows() == x.size(), Errc::DimensionMismatch, "matvec_t");
  Vector out(a.cols());
  for (std::size_t j = 0; j < a.cols(); ++j) out[j] = dot(a.col(j), x);
  return out;
}

inline Matrix add(const Matrix& a, const Matrix& b, double beta = 1.0) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), Errc::DimensionMismatch, "add");
  Matrix out = a;
  auto od = out.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] += beta * bd[i];
  return out;
}

inline Matrix scale(Matrix a, double alpha) {
  for (auto& v : a.data()) v *= alpha;
  return a;
}

inline double frobenius(const Matrix& a) { return norm2(a.data()); }

inline double max_abs(const Matrix& a) {
  double m = 0.0;
  for (double v : a.data()) m = std::max(m, std::abs(v));
  return m;
}

inline double trace(const Matrix& a) {
  double t = 0.0;
  for (std::size_t i = 0; i < std::min(a.rows(), a.cols()); ++i) t += a(i, i);
  return t;
}

inline Matrix symmetrize(const Matrix& a) { return scale(add(a, transpose(a)), 0.5); }

/// Sum of columns, G 1.
inline Vector column_sum(const Matrix& g) {
  Vector out(g.rows(), 0.0);
  for (std::size_t j = 0; j < g.cols(); ++j) axpy(1.0, g.col(j), out);
  return out;
}

inline Matrix columns(const Matrix& a, std::size_t first, std::size_t count) {
  Matrix out(a.rows(), count);
  for (std::size_t j = 0; j < count; ++j) std::copy(a.col(first + j).begin(), a.col(first + j).end(), out.col(j).begin());
  return out;
}

/// Y Y^T over the column span; used to compare subspaces independent of basis.
inline Matrix projector(const Matrix& y) { return matmul_nt(y, y); }

inline double projector_distance(const Matrix& a, const Matrix& b) {
  return frobenius(add(projector(a), projector(b), -1.0));
}

/// ||Y^T Y - I||_F.
inline double orthonormality_error(const Matrix& y) {
  Matrix gram = matmul_tn(y, y);
  for (std::size_t i = 0; i < gram.rows(); ++i) gram(i, i) -= 1.0;
  return frobenius(gram);
}

namespace linalg {

namespace detail {
/// Test-only fault injection: when set, sym_eig perturbs its eigenvectors.
inline std::atomic<bool> corrupt_eigensolver{false};
}  // namespace detail

struct SymEig {
  Vector values;   // descending
  Matrix vectors;  // columns match values
};

inline constexpr std::size_t kMaxEigDim = 512;

/// Cyclic Jacobi with a fixed (p, q) sweep order, so results are bit-stable.
inline SymEig sym_eig(const Matrix& a_in) {
  const std::size_t n = a_in.rows();
  require(a_in.cols() == n, Errc::DimensionMismatch, "sym_eig needs a square matrix");
  require(n <= kMaxEigDim, Errc::InvalidArgument, "sym_eig dimension exceeds 512");
  require(a_in.all_finite(), Errc::InvalidArgument, "sym_eig input has non-finite entries");

  const double scale_ref = std::max(1.0, max_abs(a_in));
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t i = 0; i < j; ++i)
      if (std::abs(a_in(i, j) - a_in(j, i)) > 1e-12 * scale_ref)
        fail(Errc::NonSymmetric, "asymmetry exceeds 1e-12 at (" + std::to_string(i) + "," + std::to_string(j) + ")");

  Matrix a = symmetrize(a_in);
  Matrix v = Matrix::identity(n);
  const double fro = frobenius(a);

  auto off_norm = [&] {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t i = 0; i < j; ++i) s += 2.0 * a(i, j) * a(i, j);
    return std::sqrt(s);
  };

  const double target = 1e-14 * fro;
  bool converged = off_norm() <= target;
  for (int sweep = 0; sweep < 100 && !converged; ++sweep) {
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double app = a(p, p);
        const double aqq = a(q, q);
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = std::copysign(1.0, theta) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        auto cp = a.col(p);
        auto cq = a.col(q);
        for (std::size_t k = 0; k < n; ++k) {
          if (k == p || k == q) continue;
          const double akp = cp[k];
          const double akq = cq[k];
          cp[k] = c * akp - s * akq;
          cq[k] = s * akp + c * akq;
          a(p, k) = cp[k];
          a(q, k) = cq[k];
        }
        a(p, p) = app - t * apq;
        a(q, q) = aqq + t * apq;
        a(p, q) = a(q, p) = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
    converged = off_norm() <= target;
  }
  if (!converged) fail(Errc::NoConvergence, "Jacobi did not converge within 100 sweeps");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return a(x, x) > a(y, y); });

  SymEig out{Vector(n), Matrix(n, n)};
  for (std::size_t k = 0; k < n; ++k) {
    out.values[k] = a(order[k], order[k]);
    std::copy(v.col(order[k]).begin(), v.col(order[k]).end(), out.vectors.col(k).begin());
  }
  if (detail::corrupt_eigensolver.load(std::memory_order_relaxed) && n > 1) {
    for (std::size_t k = 0; k < n; ++k) out.vectors(k, 0) += 0.05 * static_cast<double>(k + 1);
  }
  return out;
}

/// Modified Gram-Schmidt with one reorthogonalization pass.
inline Matrix orthonormalize(const Matrix& y) {
  Matrix q = y;
  for (std::size_t j = 0; j < q.cols(); ++j) {
    auto cj = q.col(j);
    const double original = norm2(cj);
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t k = 0; k < j; ++k) {
        const double r = dot(q.col(k), cj);
        axpy(-r, q.col(k), cj);
      }
    }
    const double nrm = norm2(cj);
    if (!(nrm >= 1e-12 * std::max(original, std::numeric_limits<double>::min())) || nrm == 0.0)
      fail(Errc::DependentColumns, "column " + std::to_string(j) + " is linearly dependent on earlier columns");
    for (auto& v : cj) v /= nrm;
  }
  return q;
}

struct ThinSvd {
  Matrix basis;             // n x m, orthonormal columns
  Vector singular_values;   // top-m, descending (0 for completed directions)
  std::size_t rank = 0;     // directions above the 1e-12 relative cutoff
  bool rank_deficient = false;
};

namespace detail {

/// Extends the orthonormal columns [0, filled) of `basis` to a full frame with
/// vectors drawn from a fixed-seed stream, so outputs stay deterministic.
inline void complete_frame(Matrix& basis, std::size_t filled) {
  const std::size_t n = basis.rows();
  Rng rng(0xF1A6A66ULL);
  std::size_t j = filled;
  std::size_t attempts = 0;
  while (j < basis.cols()) {
    require(++attempts < 64 * (basis.cols() + 1), Errc::NoConvergence, "could not complete orthonormal frame");
    auto cj = basis.col(j);
    for (std::size_t i = 0; i < n; ++i) cj[i] = rng.normal();
    for (int pass = 0; pass < 2; ++pass)
      for (std::size_t k = 0; k < j; ++k) axpy(-dot(basis.col(k), cj), basis.col(k), cj);
    const double nrm = norm2(cj);
    if (nrm < 1e-8) continue;
    for (auto& v : cj) v /= nrm;
    ++j;
  }
}

}  // namespace detail

/// Top-m left singular vectors of B (n x q) from the small Gram matrix:
/// B^T B (q x q) when q <= n, else B B^T (n x n).  Directions with sigma
/// below 1e-12 * sigma_max are replaced by a seeded orthonormal completion
/// and flagged through `rank_deficient`.
inline ThinSvd thin_svd_left(const Matrix& b, std::size_t m) {
  const std::size_t n = b.rows();
  const std::size_t q = b.cols();
  require(std::min(n, q) <= kMaxEigDim, Errc::InvalidArgument, "thin_svd_left: Gram dimension exceeds 512");
  require(m >= 1 && m <= std::min(n, q), Errc::InvalidArgument, "thin_svd_left: need 1 <= m <= min(n, q)");

  const bool wide = q > n;
  const SymEig eig = sym_eig(wide ? matmul_nt(b, b) : matmul_tn(b, b));
  const double sigma_max = std::sqrt(std::max(eig.values.front(), 0.0));

  ThinSvd out{Matrix(n, m), Vector(m, 0.0), 0, false};
  std::size_t filled = 0;
  for (std::size_t k = 0; k < m; ++k) {
    const double sigma = std::sqrt(std::max(eig.values[k], 0.0));
    if (sigma_max == 0.0 || sigma < 1e-12 * sigma_max) break;
    if (wide) {
      std::copy(eig.vectors.col(k).begin(), eig.vectors.col(k).end(), out.basis.col(k).begin());
    } else {
      Vector u = matvec(b, eig.vectors.col(k));
      for (auto& v : u) v /= sigma;
      std::copy(u.begin(), u.end(), out.basis.col(k).begin());
    }
    out.singular_values[k] = sigma;
    ++filled;
  }
  out.rank = filled;
  out.rank_deficient = filled < m;

  // U = B V / sigma loses orthogonality on small singular values; two
  // Gram-Schmidt passes restore it without changing the span.
  for (std::size_t j = 0; j < filled; ++j) {
    auto cj = out.basis.col(j);
    for (int pass = 0; pass < 2; ++pass)
      for (std::size_t k = 0; k < j; ++k) axpy(-dot(out.basis.col(k), cj), out.basis.col(k), cj);
    const double nrm = norm2(cj);
    if (nrm < 1e-8) {
      out.rank = j;
      out.rank_deficient = true;
      filled = j;
      break;
    }
    for (auto& v : cj) v /= nrm;
  }
  if (filled < m) detail::complete_frame(out.basis, filled);
  return out;
}

/// Orthogonal polar factor U V^T of a full-column-rank n x m matrix.
inline Matrix polar(const Matrix& k) {
  const SymEig eig = sym_eig(matmul_tn(k, k));
  const double top = std::max(eig.values.front(), 0.0);
  const std::size_t m = k.cols();
  // (K^T K)^{-1/2} = V diag(1/sigma) V^T
  Matrix inv_sqrt(m, m);
  for (std::size_t r = 0; r < m; ++r) {
    const double lam = eig.values[r];
    if (!(lam > 1e-24 * top) || lam <= 0.0)
      fail(Errc::DependentColumns, "polar: matrix is rank deficient");
    const double w = 1.0 / std::sqrt(lam);
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t i = 0; i < m; ++i) inv_sqrt(i, j) += w * eig.vectors(i, r) * eig.vectors(j, r);
  }
  return orthonormalize(matmul(k, inv_sqrt));
}

/// Moore-Penrose pseudo-inverse of a symmetric matrix with relative cutoff.
inline Matrix sym_pinv(const Matrix& a, double rel_cutoff, double* smallest_abs_eig = nullptr) {
  const SymEig eig = sym_eig(a);
  const std::size_t n = a.rows();
  double amax = 0.0;
  double amin = std::numeric_limits<double>::infinity();
  for (double v : eig.values) {
    amax = std::max(amax, std::abs(v));
    amin = std::min(amin, std::abs(v));
  }
  if (smallest_abs_eig) *smallest_abs_eig = n == 0 ? 0.0 : amin;
  Matrix out(n, n);
  for (std::size_t r = 0; r < n; ++r) {
    const double lam = eig.values[r];
    if (std::abs(lam) <= rel_cutoff * amax || lam == 0.0) continue;
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t i = 0; i < n; ++i) out(i, j) += eig.vectors(i, r) * eig.vectors(j, r) / lam;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Matrix CSV: one row per line, comma-separated decimal floats, no header.

inline Matrix parse_matrix_csv(std::istream& in) {
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      const auto first = cell.find_first_not_of(" \t");
      const auto last = cell.find_last_not_of(" \t");
      if (first == std::string::npos) fail(Errc::ParseError, "empty cell on line " + std::to_string(lineno));
      cell = cell.substr(first, last - first + 1);
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(cell, &used);
      } catch (const std::exception&) {
        fail(Errc::ParseError, "bad number '" + cell + "' on line " + std::to_string(lineno));
      }
      if (used != cell.size()) fail(Errc::ParseError, "bad number '" + cell + "' on line " + std::to_string(lineno));
      if (!std::isfinite(v)) fail(Errc::ParseError, "non-finite value on line " + std::to_string(lineno));
      row.push_back(v);
    }
    if (!line.empty() && line.back() == ',') fail(Errc::ParseError, "trailing comma on line " + std::to_string(lineno));
    if (!rows.empty() && row.size() != rows.front().size())
      fail(Errc::ParseError, "line " + std::to_string(lineno) + " has " + std::to_string(row.size()) +
                                 " columns, expected " + std::to_string(rows.front().size()));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) fail(Errc::ParseError, "empty matrix");
  return Matrix::from_rows(rows);
}

inline Matrix read_matrix_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::IoError, "cannot open " + path);
  return parse_matrix_csv(in);
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

inline void write_matrix_csv(std::ostream& out, const Matrix& a) {
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) {
      if (j) out << ',';
      out << format_double(a(i, j));
    }
    out << '\n';
  }
}

}  // namespace linalg

/// Orthonormal n x m frame; the FA decision variable.
class Subspace {
 public:
  Subspace() = default;

  /// Wraps an already-orthonormal basis; throws if Y^T Y != I within tol.
  explicit Subspace(Matrix basis, double tol = 1e-10) : y_(std::move(basis)) {
    require(y_.cols() >= 1 && y_.cols() <= y_.rows(), Errc::InvalidArgument, "Subspace needs 1 <= m <= n");
    require(orthonormality_error(y_) <= tol, Errc::InvalidArgument, "Subspace basis is not orthonormal");
  }

  static Subspace from_any(const Matrix& y) { return Subspace(linalg::orthonormalize(y)); }

  const Matrix& basis() const noexcept { return y_; }
  std::size_t dim() const noexcept { return y_.cols(); }
  std::size_t ambient() const noexcept { return y_.rows(); }

  Matrix projector() const { return flagagg::projector(y_); }

  /// Y Y^T x
  Vector project(std::span<const double> x) const { return matvec(y_, matvec_t(y_, x)); }

 private:
  Matrix y_;
};

}  // namespace flagagg

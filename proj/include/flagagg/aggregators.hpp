#pragma once

// Baseline robust aggregation rules.  Every rule maps an n x p gradient
// matrix (one column per worker) to an n-vector.  Ties are resolved by
// (value, worker index) and every average accumulates in worker-index
// order, so results are reproducible bit for bit.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "flagagg/error.hpp"
#include "flagagg/flag.hpp"
#include "flagagg/linalg.hpp"

namespace flagagg::agg {

enum class Kind { Mean, Median, TrimmedMean, MeaMed, Phocas, MultiKrum, Bulyan, PcaBaseline, Flag };

inline std::string to_string(Kind k) {
  switch (k) {
    case Kind::Mean: return "mean";
    case Kind::Median: return "median";
    case Kind::TrimmedMean: return "trimmed-mean";
    case Kind::MeaMed: return "meamed";
    case Kind::Phocas: return "phocas";
    case Kind::MultiKrum: return "multi-krum";
    case Kind::Bulyan: return "bulyan";
    case Kind::PcaBaseline: return "pca";
    case Kind::Flag: return "flag";
  }
  return "mean";
}

inline Kind parse_kind(const std::string& s) {
  if (s == "mean") return Kind::Mean;
  if (s == "median") return Kind::Median;
  if (s == "trimmed-mean" || s == "trimmed" || s == "tm") return Kind::TrimmedMean;
  if (s == "meamed") return Kind::MeaMed;
  if (s == "phocas") return Kind::Phocas;
  if (s == "multi-krum" || s == "krum" || s == "multikrum") return Kind::MultiKrum;
  if (s == "bulyan") return Kind::Bulyan;
  if (s == "pca") return Kind::PcaBaseline;
  if (s == "flag" || s == "fa") return Kind::Flag;
  fail(Errc::InvalidArgument,
       "unknown aggregator '" + s + "' (mean|median|trimmed-mean|meamed|phocas|multi-krum|bulyan|pca|flag)");
}

inline const std::vector<Kind>& all_kinds() {
  static const std::vector<Kind> kinds{Kind::Mean,      Kind::Median, Kind::TrimmedMean,
                                       Kind::MeaMed,    Kind::Phocas, Kind::MultiKrum,
                                       Kind::Bulyan,    Kind::PcaBaseline, Kind::Flag};
  return kinds;
}

struct AggregatorSpec {
  Kind kind = Kind::Mean;
  std::size_t f = 0;
  std::size_t m = 0;  // Multi-Krum: 0 selects p - f - 2; PCA: 0 selects ceil((p + 1) / 2)
  flag::FlagConfig flag{};
};

namespace detail {

/// Averages the entries of `values` flagged in `keep`, in index order.
inline double masked_mean(std::span<const double> values, const std::vector<char>& keep) {
  double s = 0.0;
  std::size_t c = 0;
  for (std::size_t i = 0; i < values.size(); ++i)
    if (keep[i]) {
      s += values[i];
      ++c;
    }
  return s / static_cast<double>(c);
}

/// Worker indices sorted by (value, index).
inline std::vector<std::size_t> value_order(std::span<const double> values) {
  std::vector<std::size_t> idx(values.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return values[a] < values[b] || (values[a] == values[b] && a < b);
  });
  return idx;
}

inline double median_of(std::span<const double> values) {
  const auto idx = value_order(values);
  const std::size_t k = values.size();
  if (k % 2 == 1) return values[idx[k / 2]];
  return 0.5 * (values[idx[k / 2 - 1]] + values[idx[k / 2]]);
}

inline double trimmed_mean_of(std::span<const double> values, std::size_t f) {
  const auto idx = value_order(values);
  std::vector<char> keep(values.size(), 0);
  for (std::size_t r = f; r + f < values.size(); ++r) keep[idx[r]] = 1;
  return masked_mean(values, keep);
}

/// Mean of the `count` values closest to `center`, ties by (value, index).
inline double mean_around(std::span<const double> values, double center, std::size_t count) {
  std::vector<std::size_t> idx(values.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    const double da = std::abs(values[a] - center);
    const double db = std::abs(values[b] - center);
    if (da != db) return da < db;
    if (values[a] != values[b]) return values[a] < values[b];
    return a < b;
  });
  std::vector<char> keep(values.size(), 0);
  for (std::size_t r = 0; r < count; ++r) keep[idx[r]] = 1;
  return masked_mean(values, keep);
}

template <class Fn>
Vector per_coordinate(const Matrix& g, Fn&& fn) {
  Vector out(g.rows());
  std::vector<double> row(g.cols());
  for (std::size_t r = 0; r < g.rows(); ++r) {
    for (std::size_t i = 0; i < g.cols(); ++i) row[i] = g(r, i);
    out[r] = fn(std::span<const double>(row));
  }
  return out;
}

inline Matrix squared_distances(const Matrix& g) {
  const std::size_t p = g.cols();
  Matrix d(p, p);
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = i + 1; j < p; ++j) {
      double s = 0.0;
      auto a = g.col(i);
      auto b = g.col(j);
      for (std::size_t r = 0; r < g.rows(); ++r) s += (a[r] - b[r]) * (a[r] - b[r]);
      d(i, j) = d(j, i) = s;
    }
  return d;
}

/// Krum scores of `candidates` against each other: sum of the squared
/// distances to the |candidates| - f - 2 nearest other candidates.
inline Vector krum_scores(const Matrix& dist, std::span<const std::size_t> candidates, std::size_t f) {
  const std::size_t r = candidates.size();
  const std::size_t k = r > f + 2 ? r - f - 2 : 0;
  Vector scores(r, 0.0);
  std::vector<double> ds;
  for (std::size_t a = 0; a < r; ++a) {
    ds.clear();
    for (std::size_t b = 0; b < r; ++b)
      if (b != a) ds.push_back(dist(candidates[a], candidates[b]));
    std::sort(ds.begin(), ds.end());
    for (std::size_t t = 0; t < k; ++t) scores[a] += ds[t];
  }
  return scores;
}

inline Vector mean_of_columns(const Matrix& g, const std::vector<char>& keep) {
  Vector out(g.rows(), 0.0);
  std::size_t c = 0;
  for (std::size_t i = 0; i < g.cols(); ++i)
    if (keep[i]) {
      axpy(1.0, g.col(i), out);
      ++c;
    }
  for (auto& v : out) v /= static_cast<double>(c);
  return out;
}

}  // namespace detail

inline Vector mean(const Matrix& g) {
  require(g.cols() >= 1, Errc::TooFewWorkers, "mean needs p >= 1");
  return detail::mean_of_columns(g, std::vector<char>(g.cols(), 1));
}

inline Vector coordinate_median(const Matrix& g) {
  require(g.cols() >= 1, Errc::TooFewWorkers, "median needs p >= 1");
  return detail::per_coordinate(g, [](std::span<const double> v) { return detail::median_of(v); });
}

inline Vector trimmed_mean(const Matrix& g, std::size_t f) {
  require(g.cols() > 2 * f, Errc::TooFewWorkers, "trimmed mean needs p > 2f");
  return detail::per_coordinate(g, [f](std::span<const double> v) { return detail::trimmed_mean_of(v, f); });
}

/// Mean of the p - f values nearest the coordinate median.
inline Vector meamed(const Matrix& g, std::size_t f) {
  require(g.cols() > f, Errc::TooFewWorkers, "MeaMed needs p > f");
  const std::size_t keep = g.cols() - f;
  return detail::per_coordinate(
      g, [keep](std::span<const double> v) { return detail::mean_around(v, detail::median_of(v), keep); });
}

/// Mean of the p - f values nearest the coordinate trimmed mean.
inline Vector phocas(const Matrix& g, std::size_t f) {
  require(g.cols() > 2 * f, Errc::TooFewWorkers, "Phocas needs p > 2f");
  const std::size_t keep = g.cols() - f;
  return detail::per_coordinate(g, [f, keep](std::span<const double> v) {
    return detail::mean_around(v, detail::trimmed_mean_of(v, f), keep);
  });
}

/// Indices of the m best Krum scores, ties by worker index.
inline std::vector<std::size_t> multi_krum_selection(const Matrix& g, std::size_t f, std::size_t m) {
  const std::size_t p = g.cols();
  require(p >= 2 * f + 3, Errc::TooFewWorkers, "Multi-Krum needs p >= 2f + 3");
  require(m >= 1 && m <= p, Errc::InvalidArgument, "Multi-Krum needs 1 <= m <= p");
  std::vector<std::size_t> all(p);
  std::iota(all.begin(), all.end(), std::size_t{0});
  const Vector scores = detail::krum_scores(detail::squared_distances(g), all, f);
  std::stable_sort(all.begin(), all.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  all.resize(m);
  std::sort(all.begin(), all.end());
  return all;
}

inline Vector multi_krum(const Matrix& g, std::size_t f, std::size_t m) {
  const auto sel = multi_krum_selection(g, f, m);
  std::vector<char> keep(g.cols(), 0);
  for (std::size_t i : sel) keep[i] = 1;
  return detail::mean_of_columns(g, keep);
}

/// Picks one worker out of `candidates`; Bulyan's first stage applies it
/// repeatedly.  Receives the full pairwise squared-distance matrix.
using SelectionRule =
    std::function<std::size_t(const Matrix& g, const Matrix& dist, std::span<const std::size_t> candidates, std::size_t f)>;

inline std::size_t krum_select(const Matrix&, const Matrix& dist, std::span<const std::size_t> candidates,
                               std::size_t f) {
  const Vector scores = detail::krum_scores(dist, candidates, f);
  std::size_t best = 0;
  for (std::size_t a = 1; a < candidates.size(); ++a)
    if (scores[a] < scores[best]) best = a;
  return best;
}

/// Bulyan's selection set: theta = p - 2f rounds of the inner rule, each
/// removing its pick from the pool.  Returned in selection order.
inline std::vector<std::size_t> bulyan_selection(const Matrix& g, std::size_t f, const SelectionRule& rule = krum_select) {
  const std::size_t p = g.cols();
  require(p >= 4 * f + 3, Errc::TooFewWorkers, "Bulyan needs p >= 4f + 3");
  const Matrix dist = detail::squared_distances(g);
  std::vector<std::size_t> pool(p);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  std::vector<std::size_t> selected;
  const std::size_t theta = p - 2 * f;
  while (selected.size() < theta) {
    const std::size_t k = rule(g, dist, pool, f);
    selected.push_back(pool[k]);
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(k));
  }
  return selected;
}

inline Vector bulyan(const Matrix& g, std::size_t f, const SelectionRule& rule = krum_select) {
  auto sel = bulyan_selection(g, f, rule);
  std::sort(sel.begin(), sel.end());
  const std::size_t beta = sel.size() - 2 * f;
  Vector out(g.rows());
  std::vector<double> vals(sel.size());
  for (std::size_t r = 0; r < g.rows(); ++r) {
    for (std::size_t k = 0; k < sel.size(); ++k) vals[k] = g(r, sel[k]);
    out[r] = detail::mean_around(vals, detail::median_of(vals), beta);
  }
  return out;
}

/// (1/p) Y Y^T G 1 with Y the top-m principal subspace of the normalized
/// non-zero columns; p counts the non-zero columns.
inline Vector pca_baseline(const Matrix& g, std::size_t m) {
  require(m >= 1 && m <= g.cols(), Errc::InvalidArgument, "PCA baseline needs 1 <= m <= p");
  std::vector<Vector> unit;
  Vector sum(g.rows(), 0.0);
  for (std::size_t i = 0; i < g.cols(); ++i) {
    const double nrm = norm2(g.col(i));
    if (nrm <= 1e-12) continue;
    unit.push_back(scaled(g.col(i), 1.0 / nrm));
    axpy(1.0, g.col(i), sum);
  }
  require(!unit.empty(), Errc::DegenerateInput, "all gradients are zero");
  Matrix b = Matrix::from_columns(unit);
  require(m <= g.rows(), Errc::InvalidArgument, "PCA baseline needs m <= n");
  if (b.cols() < m) {
    Matrix padded(b.rows(), m);
    for (std::size_t j = 0; j < b.cols(); ++j) std::copy(b.col(j).begin(), b.col(j).end(), padded.col(j).begin());
    b = std::move(padded);
  }
  const Subspace y(linalg::thin_svd_left(b, m).basis);
  Vector d = y.project(sum);
  for (auto& v : d) v /= static_cast<double>(unit.size());
  return d;
}

struct AggregateResult {
  Vector direction;
  std::size_t irls_iterations = 0;
};

/// Dispatches on the spec; the common signature A(g_1, ..., g_p).
class Aggregator {
 public:
  explicit Aggregator(AggregatorSpec spec) : spec_(std::move(spec)) {}

  const AggregatorSpec& spec() const noexcept { return spec_; }
  std::string name() const { return to_string(spec_.kind); }

  /// Throws TooFewWorkers (or InvalidArgument) when p violates the rule's precondition.
  void check(std::size_t p) const {
    const std::size_t f = spec_.f;
    switch (spec_.kind) {
      case Kind::Mean:
      case Kind::Median: require(p >= 1, Errc::TooFewWorkers, "need p >= 1"); break;
      case Kind::TrimmedMean:
      case Kind::Phocas: require(p > 2 * f, Errc::TooFewWorkers, name() + " needs p > 2f"); break;
      case Kind::MeaMed: require(p > f, Errc::TooFewWorkers, "MeaMed needs p > f"); break;
      case Kind::MultiKrum: require(p >= 2 * f + 3, Errc::TooFewWorkers, "Multi-Krum needs p >= 2f + 3"); break;
      case Kind::Bulyan: require(p >= 4 * f + 3, Errc::TooFewWorkers, "Bulyan needs p >= 4f + 3"); break;
      case Kind::PcaBaseline: require(p >= 1, Errc::TooFewWorkers, "need p >= 1"); break;
      case Kind::Flag: require(p >= 2, Errc::TooFewWorkers, "Flag needs p >= 2"); break;
    }
  }

  AggregateResult operator()(const Matrix& g) const {
    const std::size_t p = g.cols();
    check(p);
    switch (spec_.kind) {
      case Kind::Mean: return {mean(g), 0};
      case Kind::Median: return {coordinate_median(g), 0};
      case Kind::TrimmedMean: return {trimmed_mean(g, spec_.f), 0};
      case Kind::MeaMed: return {meamed(g, spec_.f), 0};
      case Kind::Phocas: return {phocas(g, spec_.f), 0};
      case Kind::MultiKrum: return {multi_krum(g, spec_.f, spec_.m != 0 ? spec_.m : p - spec_.f - 2), 0};
      case Kind::Bulyan: return {bulyan(g, spec_.f), 0};
      case Kind::PcaBaseline: return {pca_baseline(g, spec_.m != 0 ? spec_.m : (p + 2) / 2), 0};
      case Kind::Flag: {
        const auto res = flag::fa_aggregate_detailed(flag::GradientMatrix(g), spec_.flag);
        return {res.direction, res.trace.iterations_run};
      }
    }
    return {mean(g), 0};
  }

 private:
  AggregatorSpec spec_;
};

}  // namespace flagagg::agg

#include <gtest/gtest.h>

#include <numbers>

#include "flagagg/aggregators.hpp"
#include "flagagg/flag.hpp"
#include "oracles.hpp"

using namespace flagagg;
using flag::FlagConfig;
using flag::GradientMatrix;

namespace {

const Vector e1{1, 0, 0}, e2{0, 1, 0}, e3{0, 0, 1};

Subspace span_of(const Vector& v) { return Subspace::from_any(Matrix::from_columns({v})); }

FlagConfig cfg_m(std::size_t m, double lambda = 0.0, flag::Regularizer r = flag::Regularizer::None) {
  FlagConfig c;
  c.m = m;
  c.lambda = lambda;
  c.regularizer = r;
  return c;
}

// Sum of sqrt(1 - v_i) written directly from the definition.
double data_objective(const Matrix& y, const Matrix& g) {
  double s = 0.0;
  for (std::size_t i = 0; i < g.cols(); ++i) {
    const Vector z = matvec_t(y, g.col(i));
    s += std::sqrt(std::max(0.0, 1.0 - dot(z, z) / dot(g.col(i), g.col(i))));
  }
  return s;
}

Matrix normalized_columns(const Matrix& g) {
  Matrix out = g;
  for (std::size_t j = 0; j < g.cols(); ++j) {
    const double n = norm2(g.col(j));
    for (auto& v : out.col(j)) v /= n;
  }
  return out;
}

}  // namespace

TEST(ExplainedVariance, Examples) {
  const Subspace y = span_of(e1);
  EXPECT_DOUBLE_EQ(flag::explained_variance(y, Vector{5, 0, 0}), 1.0);
  EXPECT_DOUBLE_EQ(flag::explained_variance(y, Vector{0, 3, 0}), 0.0);
  EXPECT_NEAR(flag::explained_variance(y, Vector{1, 1, 0}), 0.5, 1e-15);
}

TEST(ExplainedVariance, ZeroGradientThrows) {
  try {
    flag::explained_variance(span_of(e1), Vector{0, 0, 0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::ZeroGradient);
  }
}

TEST(BetaNegLogLik, Examples) {
  EXPECT_DOUBLE_EQ(flag::beta_neg_loglik(Vector{0.0}), 0.0);
  // -log P(v) with P(v) proportional to (1 - v)^(-1/2) is (1/2) log(1 - v).
  EXPECT_NEAR(flag::beta_neg_loglik(Vector{1.0 - std::exp(-2.0)}), -1.0, 1e-14);
  EXPECT_NEAR(flag::beta_neg_loglik(Vector{0.5, 0.5}), -std::log(2.0), 1e-14);
}

TEST(BetaNegLogLik, TaylorFormApproximatesIt) {
  for (double v : {0.0, 0.1, 0.3}) {
    const double exact = flag::beta_neg_loglik(Vector{v});
    const double approx = flag::taylor_neg_loglik(Vector{v}, 50.0);
    EXPECT_NEAR(approx, exact, 0.01) << v;
  }
}

TEST(BetaNegLogLik, SingularAtOne) {
  try {
    flag::beta_neg_loglik(Vector{0.2, 1.0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::DomainError);
  }
}

TEST(TaylorNegLogLik, Examples) {
  EXPECT_DOUBLE_EQ(flag::taylor_neg_loglik(Vector{0.0}, 2.0), 0.0);
  EXPECT_DOUBLE_EQ(flag::taylor_neg_loglik(Vector{1.0}, 2.0), -1.0);
  EXPECT_NEAR(flag::taylor_neg_loglik(Vector{0.75}, 2.0), -0.5, 1e-15);
  EXPECT_THROW(flag::taylor_neg_loglik(Vector{0.5}, 1.0), Error);
}

TEST(FaObjective, Examples) {
  const Vector g{0.6, 0.8, 0};
  const GradientMatrix same(Matrix::from_columns({g, g, g, g}));
  EXPECT_NEAR(flag::fa_objective(span_of(g), same, {}), 0.0, 1e-7);

  const GradientMatrix two(Matrix::from_columns({{1, 0}, {0, 1}}));
  EXPECT_NEAR(flag::fa_objective(Subspace(Matrix::from_columns({{1, 0}})), two, {}), 1.0, 1e-15);
  const double s = 1.0 / std::sqrt(2.0);
  EXPECT_NEAR(flag::fa_objective(Subspace(Matrix::from_columns({{s, s}})), two, {}), std::sqrt(2.0), 1e-12);
}

TEST(FaObjective, PairwiseTermMatchesDefinition) {
  Rng rng(3);
  const Matrix g = oracle::random_matrix(6, 4, rng);
  const Subspace y = Subspace::from_any(oracle::random_matrix(6, 2, rng));
  const double lambda = 0.7;
  double reg = 0.0;
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      if (i == j) continue;
      const Vector d = sub(g.col(i), g.col(j));
      const Vector z = matvec_t(y.basis(), d);
      reg += std::sqrt(1.0 - dot(z, z) / dot(d, d));
    }
  // i != j visits each unordered pair twice; the solver counts each once.
  const double expect = data_objective(y.basis(), g) + lambda / 3.0 * reg / 2.0;
  const double got =
      flag::fa_objective(y, GradientMatrix(g), cfg_m(2, lambda, flag::Regularizer::PairwiseChordal));
  EXPECT_NEAR(got, expect, 1e-12);
}

TEST(FaObjective, ElementwiseL1MatchesDefinition) {
  Rng rng(4);
  const Matrix g = oracle::random_matrix(5, 3, rng);
  const Subspace y = Subspace::from_any(oracle::random_matrix(5, 2, rng));
  FlagConfig c = cfg_m(2, 0.3, flag::Regularizer::ElementwiseL1);
  c.l1_smoothing = 0.05;
  double reg = 0.0;
  for (double v : y.basis().data()) reg += std::sqrt(v * v + 0.0025);
  EXPECT_NEAR(flag::fa_objective(y, GradientMatrix(g), c), data_objective(y.basis(), g) + 0.3 * reg, 1e-12);
}

TEST(FaObjective, ScaleInvariantDataTerm) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix g = oracle::random_matrix(8, 5, rng);
    const Subspace y = Subspace::from_any(oracle::random_matrix(8, 3, rng));
    const double base = flag::fa_objective(y, GradientMatrix(g), {});
    for (double c : {-3.0, 1e-4, 250.0})
      EXPECT_NEAR(flag::fa_objective(y, GradientMatrix(scale(g, c)), {}), base, 1e-12);
  }
}

TEST(GradientMatrixType, RejectsBadShapes) {
  EXPECT_THROW(GradientMatrix(Matrix(3, 1, 1.0)), Error);
  EXPECT_THROW(GradientMatrix(Matrix(0, 3)), Error);
  Matrix bad(2, 2, 1.0);
  bad(0, 0) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(GradientMatrix{bad}, Error);
  EXPECT_THROW(GradientMatrix(Matrix(2, 2, 1.0), {"a"}), Error);
}

TEST(FlagConfigType, DefaultsAndValidation) {
  const FlagConfig c;
  EXPECT_EQ(c.max_iters, 5u);
  EXPECT_DOUBLE_EQ(c.tol, 1e-10);
  EXPECT_DOUBLE_EQ(c.guard_eps, 1e-12);
  EXPECT_DOUBLE_EQ(c.taylor_a, 2.0);
  EXPECT_DOUBLE_EQ(c.beta_shape.alpha, 1.0);
  EXPECT_DOUBLE_EQ(c.beta_shape.beta, 0.5);
  for (std::size_t p : {2u, 3u, 8u, 15u})
    EXPECT_EQ(c.resolved_m(p), static_cast<std::size_t>(std::ceil((p + 1) / 2.0)));
  FlagConfig bad;
  bad.taylor_a = 1.0;
  EXPECT_THROW(bad.validate(), Error);
  bad = {};
  bad.lambda = -1;
  EXPECT_THROW(bad.validate(), Error);
  bad = {};
  bad.tol = 0;
  EXPECT_THROW(bad.validate(), Error);
}

TEST(IrlsSolve, IdenticalColumnsSpanG) {
  const Vector g{0.6, 0, 0.8};
  const auto [y, trace] = flag::irls_solve(GradientMatrix(Matrix::from_columns({g, g, g})), cfg_m(1));
  EXPECT_NEAR(std::abs(dot(y.basis().col(0), g)), 1.0, 1e-12);
  ASSERT_GE(trace.objectives.size(), 2u);
  EXPECT_NEAR(trace.objectives[1], 0.0, 1e-5);
}

TEST(IrlsSolve, MajorityDirectionAgainstGreatCircleSweep) {
  const Matrix g = Matrix::from_columns({e1, e1, e2});
  FlagConfig c = cfg_m(1);
  c.max_iters = 50;
  const auto [y, trace] = flag::irls_solve(GradientMatrix(g), c);
  // 0.1 degree sweep of the objective over the e1-e2 great circle.
  double best = 1e300, best_theta = 0;
  for (int k = 0; k < 1800; ++k) {
    const double th = k * std::numbers::pi / 1800.0;
    const double v = data_objective(Matrix::from_columns({{std::cos(th), std::sin(th), 0}}), g);
    if (v < best) best = v, best_theta = th;
  }
  EXPECT_NEAR(best_theta, 0.0, 1e-12);
  EXPECT_NEAR(best, 1.0, 1e-12);
  EXPECT_NEAR(std::abs(y.basis()(0, 0)), 1.0, 1e-9);
  EXPECT_NEAR(flag::fa_objective(y, GradientMatrix(g), c), 1.0, 1e-6);
}

TEST(IrlsSolve, PairwiseRandomIsMonotoneAndStationary) {
  Rng rng(7);
  const Matrix g = oracle::random_matrix(20, 6, rng);
  FlagConfig c = cfg_m(3, 1.0, flag::Regularizer::PairwiseChordal);
  c.max_iters = 3000;
  c.tol = 1e-15;
  const auto [y, trace] = flag::irls_solve(GradientMatrix(g), c);
  for (std::size_t k = 1; k < trace.objectives.size(); ++k)
    EXPECT_LE(trace.objectives[k], trace.objectives[k - 1] + 1e-8);
  EXPECT_LT(trace.objectives.back(), trace.objectives.front());
  EXPECT_LE(flag::kkt_residual(y, GradientMatrix(g), c), 1e-4);
}

TEST(IrlsSolve, MonotoneAcrossRandomInstances) {
  Rng rng(8);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t n = trial % 2 ? 10 : 40;
    const std::size_t p = trial % 3 ? 5 : 9;
    const double lambda = trial % 4 < 2 ? 0.0 : 1.0;
    const Matrix g = oracle::random_matrix(n, p, rng);
    FlagConfig c = cfg_m(0, lambda, flag::Regularizer::PairwiseChordal);
    c.max_iters = 25;
    const auto [y, trace] = flag::irls_solve(GradientMatrix(g), c);
    for (std::size_t k = 1; k < trace.objectives.size(); ++k)
      ASSERT_LE(trace.objectives[k], trace.objectives[k - 1] + 1e-8) << "trial " << trial;
    EXPECT_EQ(trace.weights.size(), trace.iterations_run);
    for (const auto& w : trace.weights)
      for (double d : w) EXPECT_TRUE(std::isfinite(d) && d >= 0.0);
  }
}

TEST(IrlsSolve, ElementwiseL1IsMonotone) {
  Rng rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix g = oracle::random_matrix(12, 6, rng);
    FlagConfig c = cfg_m(3, 0.5, flag::Regularizer::ElementwiseL1);
    c.max_iters = 30;
    const auto [y, trace] = flag::irls_solve(GradientMatrix(g), c);
    for (std::size_t k = 1; k < trace.objectives.size(); ++k)
      ASSERT_LE(trace.objectives[k], trace.objectives[k - 1] + 1e-8);
  }
}

TEST(IrlsSolve, StopsAtDefaultIterationCap) {
  Rng rng(10);
  const auto [y, trace] = flag::irls_solve(GradientMatrix(oracle::random_matrix(30, 9, rng)), {});
  EXPECT_LE(trace.iterations_run, 5u);
  EXPECT_EQ(trace.objectives.size(), trace.iterations_run + 1);
  EXPECT_EQ(y.dim(), 5u);
}

TEST(IrlsSolve, ObjectiveIsFiniteOnExactFits) {
  // Columns lying exactly in the initial span drive 1 - v to 0.
  const Matrix g = Matrix::from_columns({e1, e2, scaled(e1, 3.0), Vector{1, 1, 0}});
  FlagConfig c = cfg_m(2);
  c.max_iters = 10;
  const auto [y, trace] = flag::irls_solve(GradientMatrix(g), c);
  for (double o : trace.objectives) EXPECT_TRUE(std::isfinite(o));
  for (const auto& w : trace.weights)
    for (double d : w) EXPECT_TRUE(std::isfinite(d));
}

TEST(IrlsSolve, AllZeroGradientsAreDegenerate) {
  try {
    flag::irls_solve(GradientMatrix(Matrix(4, 3)), cfg_m(1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::DegenerateInput);
  }
}

TEST(IrlsSolve, UniformSingleStepIsPca) {
  Rng rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    const Matrix g = oracle::random_matrix(15, 7, rng);
    FlagConfig c = cfg_m(3);
    c.uniform_weights = true;
    c.max_iters = 1;
    const Subspace init = Subspace::from_any(oracle::random_matrix(15, 3, rng));
    const auto [y, trace] = flag::irls_solve(GradientMatrix(g), c, init);
    EXPECT_LT(oracle::projector_gap(y.basis(), oracle::top_left_singular(normalized_columns(g), 3)), 1e-8);
  }
}

TEST(FaAggregate, IdenticalColumnsReturnG) {
  const Vector g{0.3, -1.2, 2.0};
  const Vector out = flag::fa_aggregate(GradientMatrix(Matrix::from_columns({g, g, g, g})), {});
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(out[i], g[i], 1e-12);
}

TEST(FaAggregate, MajorityExample) {
  FlagConfig c = cfg_m(1);
  c.max_iters = 50;
  const Vector out = flag::fa_aggregate(GradientMatrix(Matrix::from_columns({e1, e1, e2})), c);
  EXPECT_NEAR(out[0], 2.0 / 3.0, 1e-9);
  EXPECT_NEAR(out[1], 0.0, 1e-9);
  EXPECT_NEAR(out[2], 0.0, 1e-12);
}

namespace {

Matrix honest_plus_uniform(std::uint64_t seed, std::size_t n, std::size_t p, std::size_t f, Vector& h) {
  Rng rng(derive_seed(seed, 0xFA));
  h.assign(n, 0.0);
  for (auto& v : h) v = rng.normal();
  Matrix g(n, p);
  for (std::size_t j = 0; j < p; ++j)
    for (std::size_t i = 0; i < n; ++i) g(i, j) = j < p - f ? h[i] + 0.1 * rng.normal() : rng.uniform(-1.0, 1.0);
  return g;
}

}  // namespace

TEST(FaAggregate, OneDimensionalSubspaceBeatsMeanUnderUniformNoise) {
  int wins = 0;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    Vector h;
    const Matrix g = honest_plus_uniform(seed, 50, 15, 3, h);
    if (cosine(flag::fa_aggregate(GradientMatrix(g), cfg_m(1)), h) >= cosine(agg::mean(g), h)) ++wins;
  }
  EXPECT_GE(wins, 90);
}

TEST(FaAggregate, DefaultSubspaceFitsFewByzantineColumns) {
  // With m = ceil((p + 1) / 2) there is room for all f outliers next to the
  // honest direction, so each is explained exactly and FA tracks the mean.
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Vector h;
    const Matrix g = honest_plus_uniform(seed, 50, 15, 3, h);
    const auto res = flag::fa_aggregate_detailed(GradientMatrix(g), {});
    for (std::size_t j = 12; j < 15; ++j) EXPECT_GT(flag::explained_variance(res.subspace, g.col(j)), 0.999);
    EXPECT_NEAR(cosine(res.direction, h), cosine(agg::mean(g), h), 1e-3);
  }
}

TEST(FaAggregate, PermutationEquivariant) {
  Rng rng(12);
  const Matrix g = oracle::random_matrix(10, 6, rng);
  Matrix h(10, 6);
  const std::size_t perm[6] = {5, 2, 0, 4, 1, 3};
  for (std::size_t j = 0; j < 6; ++j)
    for (std::size_t i = 0; i < 10; ++i) h(i, j) = g(i, perm[j]);
  FlagConfig c = cfg_m(3);
  c.max_iters = 200;
  c.tol = 1e-14;
  const Vector a = flag::fa_aggregate(GradientMatrix(g), c);
  const Vector b = flag::fa_aggregate(GradientMatrix(h), c);
  EXPECT_LT(norm2(sub(a, b)), 1e-6 * norm2(a));
}

TEST(FaAggregate, OutputLiesInSubspace) {
  Rng rng(13);
  for (int trial = 0; trial < 10; ++trial) {
    const auto res = flag::fa_aggregate_detailed(GradientMatrix(oracle::random_matrix(12, 7, rng)), {});
    const Vector off = sub(res.direction, res.subspace.project(res.direction));
    EXPECT_LE(norm2(off), 1e-10 * norm2(res.direction));
  }
}

TEST(FaAggregate, TinyLambdaMatchesUnregularized) {
  Rng rng(14);
  for (int trial = 0; trial < 10; ++trial) {
    const GradientMatrix g(oracle::random_matrix(12, 6, rng));
    const auto a = flag::fa_aggregate_detailed(g, cfg_m(3, 0.0, flag::Regularizer::PairwiseChordal));
    const auto b = flag::fa_aggregate_detailed(g, cfg_m(3, 1e-12, flag::Regularizer::PairwiseChordal));
    EXPECT_LT(projector_distance(a.subspace.basis(), b.subspace.basis()), 1e-6);
  }
}

TEST(FaAggregate, ZeroColumnsAreExcludedFromAverage) {
  const Vector g{1, 2, 2};
  const auto res =
      flag::fa_aggregate_detailed(GradientMatrix(Matrix::from_columns({g, Vector(3, 0.0), g, g})), cfg_m(1));
  EXPECT_EQ(res.workers_used, 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(res.direction[i], g[i], 1e-12);
}

TEST(FaAggregate, MatchesPcaBaselineWithUniformWeights) {
  Rng rng(15);
  const Matrix g = oracle::random_matrix(9, 5, rng);
  FlagConfig c = cfg_m(3);
  c.uniform_weights = true;
  c.max_iters = 1;
  const Vector fa = flag::fa_aggregate(GradientMatrix(g), c);
  const Vector pca = agg::pca_baseline(g, 3);
  EXPECT_LT(norm2(sub(fa, pca)), 1e-9 * norm2(pca));
}

TEST(KktResidual, StationaryRankOne) {
  const GradientMatrix g(Matrix::from_columns({e1, e1, e1}));
  EXPECT_LE(flag::kkt_residual(span_of(e1), g, {}), 1e-10);
}

TEST(KktResidual, DecreasesAfterOneStep) {
  Rng rng(16);
  for (int trial = 0; trial < 10; ++trial) {
    const GradientMatrix g(oracle::random_matrix(10, 5, rng));
    const Subspace y0 = Subspace::from_any(oracle::random_matrix(10, 3, rng));
    FlagConfig c = cfg_m(3);
    const double before = flag::kkt_residual(y0, g, c);
    EXPECT_GT(before, 0.01);
    c.max_iters = 1;
    const auto [y1, trace] = flag::irls_solve(g, c, y0);
    EXPECT_LT(flag::kkt_residual(y1, g, c), before);
  }
}

TEST(KktResidual, IrlsOutputIsStationary) {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const GradientMatrix g(oracle::random_matrix(trial % 2 ? 8 : 20, 5, rng));
    FlagConfig c = cfg_m(2, trial % 3 ? 0.0 : 0.5, flag::Regularizer::PairwiseChordal);
    c.max_iters = 2000;
    c.tol = 1e-15;
    const auto [y, trace] = flag::irls_solve(g, c);
    EXPECT_LE(flag::kkt_residual(y, g, c), 1e-4) << "trial " << trial;
  }
}

TEST(SelectionMatrix, RankOneReconstruction) {
  const Vector g{0, 0.6, 0.8};
  const GradientMatrix gm(Matrix::from_columns({g, g, g}));
  const auto s = flag::selection_matrix(span_of(g), gm, cfg_m(1));
  EXPECT_LE(s.reconstruction_residual, 1e-8);
  EXPECT_EQ(s.s_fa.rows(), 3u);
  EXPECT_EQ(s.s_fa.cols(), 3u);
}

TEST(SelectionMatrix, StationaryInstances) {
  Rng rng(18);
  for (double lambda : {0.0, 1.0}) {
    const GradientMatrix g(oracle::random_matrix(8, 4, rng));
    FlagConfig c = cfg_m(2, lambda, flag::Regularizer::PairwiseChordal);
    c.max_iters = 5000;
    c.tol = 1e-16;
    const auto [y, trace] = flag::irls_solve(g, c);
    ASSERT_LE(flag::kkt_residual(y, g, c), 1e-3);
    const auto s = flag::selection_matrix(y, g, c);
    EXPECT_FALSE(s.singular_multipliers);
    EXPECT_LE(s.reconstruction_residual, lambda == 0.0 ? 1e-6 : 1e-5) << "lambda " << lambda;
  }
}

#pragma once

// Deterministic parameter-server training: p simulated workers compute
// minibatch gradients in parallel, Byzantine columns are rewritten by the
// attack, the aggregator produces one direction d_t, and the shared model
// steps w_t = w_{t-1} - lr_t d_t.

#include <algorithm>
#include <chrono>
#include <exception>
#include <istream>
#include <limits>
#include <numeric>
#include <span>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "flagagg/aggregators.hpp"
#include "flagagg/attacks.hpp"
#include "flagagg/augment.hpp"
#include "flagagg/error.hpp"
#include "flagagg/linalg.hpp"
#include "flagagg/rng.hpp"

namespace flagagg::sim {

// ---------------------------------------------------------------------------
// Threads

/// Worker thread cap: FLAGAGG_THREADS when set to a positive integer,
/// otherwise the hardware count.
inline std::size_t thread_count() {
  if (const char* env = std::getenv("FLAGAGG_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

/// Runs fn(i) for i in [0, count) on up to `threads` threads.  Each index is
/// handled exactly once and results go to caller-owned slots, so the outcome
/// does not depend on scheduling.
template <class Fn>
void parallel_for(std::size_t count, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, count));
  if (threads == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (std::size_t t = 0; t < threads; ++t)
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < count; i += threads) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// ---------------------------------------------------------------------------
// Data

struct Dataset {
  Matrix features;                  // samples x dim
  std::vector<std::size_t> labels;  // class index per sample
  Vector targets;                   // regression targets (Linear model); empty otherwise
  std::size_t classes = 2;
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;

  std::size_t dim() const { return features.cols(); }
  std::size_t samples() const { return features.rows(); }
};

namespace detail {

inline void split_80_20(Dataset& ds, std::uint64_t seed) {
  std::vector<std::size_t> idx(ds.samples());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(derive_seed(seed, 0x5B1));
  for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
  const std::size_t n_train = (idx.size() * 8) / 10;
  ds.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  ds.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
}

}  // namespace detail

/// Gaussian class clusters around seeded N(0, I) centers.
inline Dataset make_blobs(std::size_t dim, std::size_t classes, std::size_t samples_per_class, double spread,
                          std::uint64_t seed) {
  require(dim >= 2, Errc::InvalidArgument, "make_blobs needs dim >= 2");
  require(classes >= 2, Errc::InvalidArgument, "make_blobs needs >= 2 classes");
  require(samples_per_class >= 1, Errc::InvalidArgument, "make_blobs needs samples");
  require(spread >= 0.0, Errc::InvalidArgument, "spread must be >= 0");
  Dataset ds;
  ds.classes = classes;
  ds.features = Matrix(classes * samples_per_class, dim);
  Rng centers_rng(derive_seed(seed, 0xCE));
  Matrix centers(classes, dim);
  for (auto& v : centers.data()) v = centers_rng.normal();
  Rng rng(derive_seed(seed, 0x5A));
  for (std::size_t c = 0; c < classes; ++c)
    for (std::size_t s = 0; s < samples_per_class; ++s) {
      const std::size_t row = c * samples_per_class + s;
      for (std::size_t d = 0; d < dim; ++d) ds.features(row, d) = centers(c, d) + spread * rng.normal();
      ds.labels.push_back(c);
    }
  detail::split_80_20(ds, seed);
  return ds;
}

/// y = w* . x + b* exactly, with seeded w*, b* and x ~ N(0, I).
inline Dataset make_linear_data(std::size_t dim, std::size_t samples, std::uint64_t seed) {
  require(dim >= 1 && samples >= 2, Errc::InvalidArgument, "make_linear_data needs dim >= 1, samples >= 2");
  Dataset ds;
  ds.classes = 1;
  ds.features = Matrix(samples, dim);
  Rng rng(derive_seed(seed, 0x11E));
  Vector w(dim);
  for (auto& v : w) v = rng.normal();
  const double b = rng.normal();
  for (std::size_t s = 0; s < samples; ++s) {
    double y = b;
    for (std::size_t d = 0; d < dim; ++d) {
      ds.features(s, d) = rng.normal();
      y += w[d] * ds.features(s, d);
    }
    ds.targets.push_back(y);
    ds.labels.push_back(0);
  }
  detail::split_80_20(ds, seed);
  return ds;
}

inline void write_dataset_csv(std::ostream& features, std::ostream& labels, const Dataset& ds) {
  linalg::write_matrix_csv(features, ds.features);
  for (std::size_t s = 0; s < ds.samples(); ++s) {
    labels << ds.labels[s];
    if (!ds.targets.empty()) labels << ',' << linalg::format_double(ds.targets[s]);
    labels << '\n';
  }
}

/// Reads the matrix CSV plus a labels file (one label, optionally
/// `label,target`, per line) and applies a seeded 80/20 split.
inline Dataset read_dataset_csv(std::istream& features, std::istream& labels, std::uint64_t seed) {
  Dataset ds;
  ds.features = linalg::parse_matrix_csv(features);
  std::string line;
  std::size_t max_label = 0;
  while (std::getline(labels, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    try {
      const auto lbl = static_cast<std::size_t>(std::stoul(line.substr(0, comma)));
      ds.labels.push_back(lbl);
      max_label = std::max(max_label, lbl);
      if (comma != std::string::npos) ds.targets.push_back(std::stod(line.substr(comma + 1)));
    } catch (const std::exception&) {
      fail(Errc::ParseError, "bad label line '" + line + "'");
    }
  }
  require(ds.labels.size() == ds.samples(), Errc::ParseError, "label count != sample count");
  require(ds.targets.empty() || ds.targets.size() == ds.samples(), Errc::ParseError, "targets must cover every sample");
  ds.classes = std::max<std::size_t>(2, max_label + 1);
  detail::split_80_20(ds, seed);
  return ds;
}

// ---------------------------------------------------------------------------
// Models

enum class ModelKind { Linear, Logistic, Mlp };

inline ModelKind parse_model(const std::string& s) {
  if (s == "linear") return ModelKind::Linear;
  if (s == "logistic") return ModelKind::Logistic;
  if (s == "mlp") return ModelKind::Mlp;
  fail(Errc::InvalidArgument, "unknown model '" + s + "' (linear|logistic|mlp)");
}

inline std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::Linear: return "linear";
    case ModelKind::Logistic: return "logistic";
    case ModelKind::Mlp: return "mlp";
  }
  return "logistic";
}

/// Linear: 1/2 (w.x + b - y)^2.  Logistic: softmax regression, mean
/// cross-entropy.  Mlp: one tanh hidden layer then softmax.  Parameters are
/// flat; per-class blocks are [weights..., bias].
struct Model {
  ModelKind kind = ModelKind::Logistic;
  std::size_t dim = 0;
  std::size_t classes = 2;
  std::size_t hidden = 16;
  Vector params;

  std::size_t parameter_count() const {
    switch (kind) {
      case ModelKind::Linear: return dim + 1;
      case ModelKind::Logistic: return classes * (dim + 1);
      case ModelKind::Mlp: return hidden * (dim + 1) + classes * (hidden + 1);
    }
    return 0;
  }
};

inline Model make_model(ModelKind kind, std::size_t dim, std::size_t classes, std::size_t hidden, std::uint64_t seed) {
  Model m{kind, dim, kind == ModelKind::Linear ? 1 : classes, hidden, {}};
  m.params.assign(m.parameter_count(), 0.0);
  if (kind == ModelKind::Mlp) {
    Rng rng(derive_seed(seed, 0x3A9));
    const double s1 = 1.0 / std::sqrt(static_cast<double>(dim));
    const double s2 = 1.0 / std::sqrt(static_cast<double>(hidden));
    for (std::size_t h = 0; h < hidden; ++h)
      for (std::size_t d = 0; d < dim; ++d) m.params[h * (dim + 1) + d] = s1 * rng.normal();
    const std::size_t off = hidden * (dim + 1);
    for (std::size_t c = 0; c < m.classes; ++c)
      for (std::size_t h = 0; h < hidden; ++h) m.params[off + c * (hidden + 1) + h] = s2 * rng.normal();
  }
  return m;
}

namespace detail {

inline void softmax(Vector& z) {
  const double mx = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (auto& v : z) {
    v = std::exp(v - mx);
    s += v;
  }
  for (auto& v : z) v /= s;
}

/// Logits of one sample (Logistic, Mlp); `hidden` receives the tanh
/// activations for Mlp.
inline Vector logits(const Model& model, std::span<const double> w, const Dataset& ds, std::size_t s,
                     Vector* hidden = nullptr) {
  const std::size_t d = model.dim;
  auto affine = [&](const double* wr, std::span<const double> in) {
    double v = wr[in.size()];
    for (std::size_t k = 0; k < in.size(); ++k) v += wr[k] * in[k];
    return v;
  };
  Vector x(d);
  for (std::size_t k = 0; k < d; ++k) x[k] = ds.features(s, k);
  Vector z(model.classes);
  if (model.kind == ModelKind::Logistic) {
    for (std::size_t c = 0; c < model.classes; ++c) z[c] = affine(w.data() + c * (d + 1), x);
    return z;
  }
  Vector a(model.hidden);
  for (std::size_t h = 0; h < model.hidden; ++h) a[h] = std::tanh(affine(w.data() + h * (d + 1), x));
  const std::size_t off = model.hidden * (d + 1);
  for (std::size_t c = 0; c < model.classes; ++c) z[c] = affine(w.data() + off + c * (model.hidden + 1), a);
  if (hidden) *hidden = std::move(a);
  return z;
}

/// Loss of one sample; accumulates its gradient into `grad` when non-null.
inline double sample_loss(const Model& model, std::span<const double> w, const Dataset& ds, std::size_t s,
                          double* grad) {
  const std::size_t d = model.dim;
  if (model.kind == ModelKind::Linear) {
    double pred = w[d];
    for (std::size_t k = 0; k < d; ++k) pred += w[k] * ds.features(s, k);
    const double r = pred - ds.targets[s];
    if (grad) {
      for (std::size_t k = 0; k < d; ++k) grad[k] += r * ds.features(s, k);
      grad[d] += r;
    }
    return 0.5 * r * r;
  }
  Vector a;
  const Vector z = logits(model, w, ds, s, &a);
  const std::size_t y = ds.labels[s];
  // log-sum-exp form stays finite when the true-class probability underflows
  const double mx = *std::max_element(z.begin(), z.end());
  double lse = 0.0;
  for (double v : z) lse += std::exp(v - mx);
  const double loss = mx + std::log(lse) - z[y];
  if (!grad) return loss;

  Vector prob = z;
  softmax(prob);
  prob[y] -= 1.0;  // dloss/dz
  if (model.kind == ModelKind::Logistic) {
    for (std::size_t c = 0; c < model.classes; ++c) {
      double* gc = grad + c * (d + 1);
      for (std::size_t k = 0; k < d; ++k) gc[k] += prob[c] * ds.features(s, k);
      gc[d] += prob[c];
    }
    return loss;
  }
  const std::size_t hdim = model.hidden;
  const std::size_t off = hdim * (d + 1);
  Vector back(hdim, 0.0);
  for (std::size_t c = 0; c < model.classes; ++c) {
    const double* wc = w.data() + off + c * (hdim + 1);
    double* gc = grad + off + c * (hdim + 1);
    for (std::size_t h = 0; h < hdim; ++h) {
      gc[h] += prob[c] * a[h];
      back[h] += prob[c] * wc[h];
    }
    gc[hdim] += prob[c];
  }
  for (std::size_t h = 0; h < hdim; ++h) {
    const double dz = back[h] * (1.0 - a[h] * a[h]);
    double* gh = grad + h * (d + 1);
    for (std::size_t k = 0; k < d; ++k) gh[k] += dz * ds.features(s, k);
    gh[d] += dz;
  }
  return loss;
}

inline std::size_t predict(const Model& model, std::span<const double> w, const Dataset& ds, std::size_t s) {
  const Vector z = logits(model, w, ds, s);
  return static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
}

}  // namespace detail

/// Mean loss over the given sample indices, with its gradient when requested.
inline double batch_loss(const Model& model, std::span<const double> w, const Dataset& ds,
                         std::span<const std::size_t> samples, Vector* grad = nullptr) {
  if (grad) grad->assign(model.parameter_count(), 0.0);
  double loss = 0.0;
  for (std::size_t s : samples) loss += detail::sample_loss(model, w, ds, s, grad ? grad->data() : nullptr);
  const double inv = 1.0 / static_cast<double>(samples.size());
  if (grad)
    for (auto& v : *grad) v *= inv;
  return loss * inv;
}

/// Fraction of correct predictions; for Linear, the fraction of predictions
/// within 0.5 of the target.
inline double accuracy(const Model& model, std::span<const double> w, const Dataset& ds,
                       std::span<const std::size_t> samples) {
  if (samples.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t s : samples) {
    if (model.kind == ModelKind::Linear) {
      correct += std::sqrt(2.0 * detail::sample_loss(model, w, ds, s, nullptr)) < 0.5 ? 1 : 0;
    } else {
      correct += detail::predict(model, w, ds, s) == ds.labels[s] ? 1 : 0;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

/// Minibatch indices of one worker at one iteration (with replacement).
inline std::vector<std::size_t> minibatch(const Dataset& ds, std::size_t worker_id, std::size_t iter, std::size_t batch,
                                          std::uint64_t seed) {
  require(!ds.train.empty(), Errc::InvalidArgument, "empty training split");
  Rng rng(derive_seed(seed, 0x77 + worker_id, iter));
  std::vector<std::size_t> out(batch);
  for (auto& s : out) s = ds.train[rng.below(ds.train.size())];
  return out;
}

/// (1/B) sum of per-sample loss gradients over the worker's minibatch.
inline Vector worker_gradient(const Model& model, const Dataset& ds, std::size_t worker_id, std::size_t iter,
                              std::size_t batch, std::uint64_t seed) {
  require(batch >= 1, Errc::InvalidArgument, "batch size must be >= 1");
  require(model.params.size() == model.parameter_count(), Errc::DimensionMismatch, "model parameter count");
  require(model.dim == ds.dim(), Errc::DimensionMismatch, "model dim != data dim");
  const auto mb = minibatch(ds, worker_id, iter, batch, seed);
  Vector g;
  batch_loss(model, model.params, ds, mb, &g);
  return g;
}

// ---------------------------------------------------------------------------
// Training

struct DataSpec {
  std::size_t dim = 20;
  std::size_t classes = 2;
  std::size_t samples_per_class = 200;
  double spread = 1.0;
};

struct RunConfig {
  std::size_t p = 8;
  attacks::AttackSpec attack{};
  agg::AggregatorSpec aggregator{};
  std::size_t batch_size = 16;
  double lr = 0.1;
  double lr_decay = 0.2;
  std::size_t lr_interval = 1000;  // iterations between decays
  std::size_t iterations = 100;
  std::uint64_t seed = 1;
  ModelKind model = ModelKind::Logistic;
  std::size_t hidden = 16;
  DataSpec data{};
  /// Byzantine workers draw their minibatches from an augmented copy of the
  /// training data (features reshaped to sqrt(dim) x sqrt(dim) images).
  std::optional<augment::AugmentSpec> byzantine_augment;
  std::uint64_t augment_seed = 7;
  std::size_t threads = 0;  // 0: thread_count()

  void validate() const {
    require(p >= 1, Errc::InvalidArgument, "need p >= 1 workers");
    require(batch_size >= 1, Errc::InvalidArgument, "batch size must be >= 1");
    require(iterations >= 1, Errc::InvalidArgument, "iterations must be >= 1");
    require(lr > 0.0, Errc::InvalidArgument, "learning rate must be > 0");
    require(lr_decay > 0.0, Errc::InvalidArgument, "learning-rate decay must be > 0");
    require(lr_interval >= 1, Errc::InvalidArgument, "learning-rate interval must be >= 1");
    attack.validate(p);
    agg::Aggregator(aggregator).check(p);
  }

  /// lr * decay^floor((t - 1) / interval) for t = 1..T.
  double learning_rate(std::size_t t) const {
    return lr * std::pow(lr_decay, static_cast<double>((t - 1) / lr_interval));
  }
};

struct RunRow {
  std::size_t iter = 0;
  double train_loss = 0.0;
  double test_accuracy = 0.0;
  double agg_wall_ms = 0.0;
  std::size_t irls_iters = 0;
};

struct RunRecord {
  std::vector<RunRow> rows;
  Vector final_params;
};

inline Dataset make_run_data(const RunConfig& cfg) {
  if (cfg.model == ModelKind::Linear)
    return make_linear_data(cfg.data.dim, cfg.data.classes * cfg.data.samples_per_class, derive_seed(cfg.seed, 0xDA7A));
  return make_blobs(cfg.data.dim, cfg.data.classes, cfg.data.samples_per_class, cfg.data.spread,
                    derive_seed(cfg.seed, 0xDA7A));
}

/// Copy of `ds` whose feature rows went through the augmentation pipeline.
inline Dataset augmented_copy(const Dataset& ds, const augment::AugmentSpec& spec, std::uint64_t seed) {
  const auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(ds.dim()))));
  require(side * side == ds.dim() && side >= 2, Errc::InvalidArgument,
          "augmenting features needs dim to be a square number >= 4");
  std::vector<augment::Image> imgs;
  std::vector<std::pair<double, double>> ranges;
  for (std::size_t s = 0; s < ds.samples(); ++s) {
    double lo = ds.features(s, 0), hi = lo;
    for (std::size_t k = 0; k < ds.dim(); ++k) {
      lo = std::min(lo, ds.features(s, k));
      hi = std::max(hi, ds.features(s, k));
    }
    const double span = hi > lo ? hi - lo : 1.0;
    std::vector<double> px(ds.dim());
    for (std::size_t k = 0; k < ds.dim(); ++k) px[k] = (ds.features(s, k) - lo) / span;
    imgs.emplace_back(side, std::move(px));
    ranges.emplace_back(lo, span);
  }
  const auto out_imgs = augment::augment_batch(imgs, spec, seed);
  Dataset out = ds;
  for (std::size_t s = 0; s < ds.samples(); ++s)
    for (std::size_t k = 0; k < ds.dim(); ++k)
      out.features(s, k) = ranges[s].first + ranges[s].second * out_imgs[s].pixels()[k];
  return out;
}

inline RunRecord train(const RunConfig& cfg, const Dataset& data) {
  cfg.validate();
  const std::size_t threads = cfg.threads != 0 ? cfg.threads : thread_count();
  Model model = make_model(cfg.model, data.dim(), data.classes, cfg.hidden, derive_seed(cfg.seed, 0x30D));
  const agg::Aggregator aggregator(cfg.aggregator);

  std::optional<Dataset> poisoned;
  if (cfg.byzantine_augment) poisoned = augmented_copy(data, *cfg.byzantine_augment, cfg.augment_seed);

  const std::size_t n = model.parameter_count();
  RunRecord rec;
  rec.rows.reserve(cfg.iterations);
  for (std::size_t t = 1; t <= cfg.iterations; ++t) {
    // Every worker reads the same parameter snapshot; columns land in
    // worker-index order regardless of completion order.
    Matrix g(n, cfg.p);
    parallel_for(cfg.p, threads, [&](std::size_t w) {
      const bool uses_poison = poisoned && cfg.attack.byzantine_ids.contains(w);
      const Vector gw = worker_gradient(model, uses_poison ? *poisoned : data, w, t, cfg.batch_size, cfg.seed);
      std::copy(gw.begin(), gw.end(), g.col(w).begin());
    });

    attacks::AttackSpec attack = cfg.attack;
    attack.rng_seed = derive_seed(cfg.attack.rng_seed, cfg.seed, t);
    const Matrix attacked = attacks::apply_attack(g, attack);

    const auto start = std::chrono::steady_clock::now();
    agg::AggregateResult d;
    try {
      d = aggregator(attacked);
    } catch (const Error& e) {
      fail(e.code(), "iteration " + std::to_string(t) + ": " + e.what());
    }
    const auto stop = std::chrono::steady_clock::now();

    const double lr = cfg.learning_rate(t);
    for (std::size_t k = 0; k < n; ++k) model.params[k] -= lr * d.direction[k];

    RunRow row;
    row.iter = t;
    row.train_loss = batch_loss(model, model.params, data, data.train);
    row.test_accuracy = accuracy(model, model.params, data, data.test);
    row.agg_wall_ms = std::chrono::duration<double, std::milli>(stop - start).count();
    row.irls_iters = d.irls_iterations;
    if (!std::isfinite(row.train_loss)) fail(Errc::Overflow, "iteration " + std::to_string(t) + ": training diverged");
    rec.rows.push_back(row);
  }
  rec.final_params = model.params;
  return rec;
}

inline RunRecord train(const RunConfig& cfg) { return train(cfg, make_run_data(cfg)); }

/// `iter,train_loss,test_accuracy,agg_wall_ms,irls_iters`; wall time is
/// written as 0 unless `with_timing`, which keeps output byte-stable.
inline void write_run_csv(std::ostream& out, const RunRecord& rec, bool with_timing) {
  out << "iter,train_loss,test_accuracy,agg_wall_ms,irls_iters\n";
  char buf[160];
  for (const auto& r : rec.rows) {
    std::snprintf(buf, sizeof buf, "%zu,%.10g,%.6f,%.4f,%zu\n", r.iter, r.train_loss, r.test_accuracy,
                  with_timing ? r.agg_wall_ms : 0.0, r.irls_iters);
    out << buf;
  }
}

}  // namespace flagagg::sim

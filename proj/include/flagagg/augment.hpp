#pragma once

// Nonlinear image augmentations that inject dependent noise: Lotka-Volterra
// flow, Arnold's cat map (exact and sigmoid-smoothed) and Gaussian noise,
// plus binary PGM I/O for square grayscale images.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "flagagg/error.hpp"
#include "flagagg/rng.hpp"

namespace flagagg::augment {

/// Square grayscale image, row-major, values in [0, 1].
class Image {
 public:
  Image() = default;
  explicit Image(std::size_t size, double fill = 0.0) : n_(size), px_(size * size, fill) {
    require(size >= 2, Errc::InvalidArgument, "image side must be >= 2");
  }
  Image(std::size_t size, std::vector<double> pixels) : n_(size), px_(std::move(pixels)) {
    require(size >= 2, Errc::InvalidArgument, "image side must be >= 2");
    require(px_.size() == n_ * n_, Errc::DimensionMismatch, "pixel count != N*N");
    for (double v : px_) require(std::isfinite(v), Errc::InvalidArgument, "non-finite pixel");
  }

  std::size_t size() const noexcept { return n_; }
  /// x is the column, y the row.
  double& at(std::size_t x, std::size_t y) noexcept { return px_[y * n_ + x]; }
  double at(std::size_t x, std::size_t y) const noexcept { return px_[y * n_ + x]; }
  const std::vector<double>& pixels() const noexcept { return px_; }
  std::vector<double>& pixels() noexcept { return px_; }

  bool operator==(const Image&) const = default;

 private:
  std::size_t n_ = 0;
  std::vector<double> px_;
};

enum class MapKind { None, LotkaVolterra, CatMap, SmoothCatMap };

struct LvParams {
  double alpha = 2.0 / 3.0;
  double beta = 4.0 / 3.0;
  double gamma = -1.0;
  double delta = -1.0;
  double horizon = 1.0;
  double step = 0.01;
};

/// Noise level used when noise is requested without an explicit sigma.
inline constexpr double kDefaultNoiseSigma = 0.05;

struct AugmentSpec {
  MapKind kind = MapKind::None;
  LvParams lv{};
  bool lv_on_coordinates = false;  // flow pixel positions instead of value pairs
  std::size_t iterations = 1;      // cat maps
  double smooth_m = 0.95;
  double noise_sigma = 0.0;
  double fraction = 1.0;

  void validate() const {
    require(lv.step > 0.0, Errc::InvalidArgument, "LV step must be > 0");
    require(lv.horizon >= 0.0, Errc::InvalidArgument, "LV horizon must be >= 0");
    require(smooth_m > 0.0, Errc::InvalidArgument, "smooth cat map degree must be > 0");
    require(noise_sigma >= 0.0, Errc::InvalidArgument, "noise sigma must be >= 0");
    require(fraction >= 0.0 && fraction <= 1.0, Errc::InvalidArgument, "fraction must be in [0, 1]");
  }
};

inline MapKind parse_map(const std::string& s) {
  if (s == "none" || s == "noise") return MapKind::None;
  if (s == "lv" || s == "lotka-volterra") return MapKind::LotkaVolterra;
  if (s == "catmap" || s == "cat") return MapKind::CatMap;
  if (s == "smoothcat" || s == "smooth-catmap") return MapKind::SmoothCatMap;
  fail(Errc::InvalidArgument, "unknown map '" + s + "' (none|lv|catmap|smoothcat)");
}

inline std::string to_string(MapKind k) {
  switch (k) {
    case MapKind::None: return "none";
    case MapKind::LotkaVolterra: return "lv";
    case MapKind::CatMap: return "catmap";
    case MapKind::SmoothCatMap: return "smoothcat";
  }
  return "none";
}

// ---------------------------------------------------------------------------
// Lotka-Volterra

/// Classical RK4 on dx/dt = a x - b x y, dy/dt = d x y - g y over [0, T];
/// the last step is shortened so the horizon is hit exactly.
inline std::pair<double, double> lv_flow(double x0, double y0, const LvParams& prm) {
  require(std::isfinite(x0) && std::isfinite(y0), Errc::InvalidArgument, "non-finite LV initial point");
  require(prm.step > 0.0, Errc::InvalidArgument, "LV step must be > 0");
  auto rhs = [&](double x, double y) {
    return std::pair{prm.alpha * x - prm.beta * x * y, prm.delta * x * y - prm.gamma * y};
  };
  double x = x0;
  double y = y0;
  const auto steps = static_cast<std::size_t>(std::ceil(prm.horizon / prm.step - 1e-9));
  for (std::size_t s = 0; s < steps; ++s) {
    const double h = std::min(prm.step, prm.horizon - static_cast<double>(s) * prm.step);
    const auto [k1x, k1y] = rhs(x, y);
    const auto [k2x, k2y] = rhs(x + 0.5 * h * k1x, y + 0.5 * h * k1y);
    const auto [k3x, k3y] = rhs(x + 0.5 * h * k2x, y + 0.5 * h * k2y);
    const auto [k4x, k4y] = rhs(x + h * k3x, y + h * k3y);
    x += h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
    y += h / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y);
    if (!(std::abs(x) <= 1e12 && std::abs(y) <= 1e12)) fail(Errc::Overflow, "LV trajectory diverged");
  }
  return {x, y};
}

namespace detail {

inline double local_mean(const Image& img, std::size_t x, std::size_t y) {
  const std::size_t n = img.size();
  double s = 0.0;
  int c = 0;
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx) {
      const auto xx = static_cast<std::ptrdiff_t>(x) + dx;
      const auto yy = static_cast<std::ptrdiff_t>(y) + dy;
      if (xx < 0 || yy < 0 || xx >= static_cast<std::ptrdiff_t>(n) || yy >= static_cast<std::ptrdiff_t>(n)) continue;
      s += img.at(static_cast<std::size_t>(xx), static_cast<std::size_t>(yy));
      ++c;
    }
  return s / c;
}

/// Forward-warps every source pixel to a real-valued target position on the
/// periodic grid, spreading it over the four neighbours with bilinear weights.
/// Cells that receive no weight keep their source value.
template <class TargetFn>
Image splat(const Image& img, TargetFn&& target) {
  const std::size_t n = img.size();
  std::vector<double> acc(n * n, 0.0);
  std::vector<double> wsum(n * n, 0.0);
  const auto nn = static_cast<double>(n);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      auto [tx, ty] = target(x, y);
      tx = std::fmod(std::fmod(tx, nn) + nn, nn);
      ty = std::fmod(std::fmod(ty, nn) + nn, nn);
      const double fx = std::floor(tx);
      const double fy = std::floor(ty);
      const double ax = tx - fx;
      const double ay = ty - fy;
      const auto x0 = static_cast<std::size_t>(fx) % n;
      const auto y0 = static_cast<std::size_t>(fy) % n;
      const std::size_t x1 = (x0 + 1) % n;
      const std::size_t y1 = (y0 + 1) % n;
      const double v = img.at(x, y);
      const double w00 = (1 - ax) * (1 - ay), w10 = ax * (1 - ay), w01 = (1 - ax) * ay, w11 = ax * ay;
      acc[y0 * n + x0] += w00 * v;
      wsum[y0 * n + x0] += w00;
      acc[y0 * n + x1] += w10 * v;
      wsum[y0 * n + x1] += w10;
      acc[y1 * n + x0] += w01 * v;
      wsum[y1 * n + x0] += w01;
      acc[y1 * n + x1] += w11 * v;
      wsum[y1 * n + x1] += w11;
    }
  Image out = img;
  for (std::size_t k = 0; k < n * n; ++k)
    if (wsum[k] > 1e-12) out.pixels()[k] = acc[k] / wsum[k];
  return out;
}

}  // namespace detail

/// Lotka-Volterra distortion.  By default each pixel's (intensity, 3x3 local
/// mean) pair is flowed and the first component becomes the new intensity;
/// with `lv_on_coordinates` the normalized pixel position is flowed instead.
inline Image lv_image(const Image& img, const AugmentSpec& spec) {
  const std::size_t n = img.size();
  if (spec.lv_on_coordinates) {
    const auto nn = static_cast<double>(n);
    return detail::splat(img, [&](std::size_t x, std::size_t y) {
      try {
        const auto [fx, fy] = lv_flow((static_cast<double>(x) + 1.0) / nn, (static_cast<double>(y) + 1.0) / nn, spec.lv);
        return std::pair{fx * nn - 1.0, fy * nn - 1.0};
      } catch (const Error&) {
        return std::pair{static_cast<double>(x), static_cast<double>(y)};
      }
    });
  }
  Image out = img;
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      double v = img.at(x, y);
      try {
        v = lv_flow(img.at(x, y), detail::local_mean(img, x, y), spec.lv).first;
      } catch (const Error&) {
        v = 1.0;  // diverged: saturate
      }
      out.at(x, y) = std::clamp(v, 0.0, 1.0);
    }
  return out;
}

// ---------------------------------------------------------------------------
// Arnold's cat map

/// (x, y) -> ((2x + y) mod N, (x + y) mod N), iterated; a pixel permutation.
inline Image cat_map(const Image& img, std::size_t iterations) {
  const std::size_t n = img.size();
  Image cur = img;
  Image next = img;
  for (std::size_t it = 0; it < iterations; ++it) {
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x) next.at((2 * x + y) % n, (x + y) % n) = cur.at(x, y);
    std::swap(cur, next);
  }
  return cur;
}

/// Smooth stand-in for `a mod 1` on a in (0, 3): the floor is replaced by a
/// sum of soft steps 1 / (1 + exp(-m log(a / k))) centred at k = 1, 2.
/// Large m recovers the exact modulus away from integer boundaries.
inline double smooth_mod1(double a, double m) {
  require(a > 0.0, Errc::DomainError, "smooth modulus needs a positive argument");
  double floor_est = 0.0;
  for (int k = 1; k <= 2; ++k) floor_est += 1.0 / (1.0 + std::exp(-m * std::log(a / k)));
  return a - floor_est;
}

/// Target (column, row) of pixel (x, y) under the smoothed map; (0, 0) has
/// a non-positive argument and stays in place.
inline std::pair<double, double> smooth_cat_target(std::size_t x, std::size_t y, std::size_t n, double m) {
  const auto nn = static_cast<double>(n);
  const double a1 = (2.0 * static_cast<double>(x) + static_cast<double>(y)) / nn;
  const double a2 = (static_cast<double>(x) + static_cast<double>(y)) / nn;
  if (a1 <= 0.0 || a2 <= 0.0) return {static_cast<double>(x), static_cast<double>(y)};
  return {nn * smooth_mod1(a1, m), nn * smooth_mod1(a2, m)};
}

inline Image smooth_cat_map(const Image& img, double m, std::size_t iterations = 1) {
  require(m > 0.0, Errc::InvalidArgument, "smooth cat map degree must be > 0");
  Image cur = img;
  for (std::size_t it = 0; it < iterations; ++it)
    cur = detail::splat(cur, [&](std::size_t x, std::size_t y) { return smooth_cat_target(x, y, cur.size(), m); });
  return cur;
}

// ---------------------------------------------------------------------------

inline Image add_noise(const Image& img, double sigma, Rng& rng) {
  Image out = img;
  if (sigma <= 0.0) return out;
  for (auto& v : out.pixels()) v = std::clamp(v + sigma * rng.normal(), 0.0, 1.0);
  return out;
}

inline Image apply_map(const Image& img, const AugmentSpec& spec) {
  switch (spec.kind) {
    case MapKind::None: return img;
    case MapKind::LotkaVolterra: return lv_image(img, spec);
    case MapKind::CatMap: return cat_map(img, spec.iterations);
    case MapKind::SmoothCatMap: return smooth_cat_map(img, spec.smooth_m, spec.iterations);
  }
  return img;
}

/// Indices of the floor(fraction * count) images chosen by a seeded partial
/// Fisher-Yates shuffle, returned sorted.
inline std::vector<std::size_t> select_subset(std::size_t count, double fraction, std::uint64_t seed) {
  require(fraction >= 0.0 && fraction <= 1.0, Errc::InvalidArgument, "fraction must be in [0, 1]");
  const auto k = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(count) + 1e-12));
  std::vector<std::size_t> idx(count);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(derive_seed(seed, 0xA06));
  for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng.below(count - i)]);
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

inline std::vector<Image> augment_batch(const std::vector<Image>& images, const AugmentSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::vector<Image> out = images;
  for (std::size_t i : select_subset(images.size(), spec.fraction, seed)) {
    Image img = apply_map(images[i], spec);
    Rng rng(derive_seed(seed, 0xB07, i));
    img = add_noise(img, spec.noise_sigma, rng);
    for (auto& v : img.pixels()) v = std::clamp(v, 0.0, 1.0);
    out[i] = std::move(img);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Binary PGM (P5, maxval 255)

inline Image read_pgm(std::istream& in) {
  auto token = [&]() {
    std::string t;
    char c = 0;
    while (in.get(c)) {
      if (c == '#') {
        std::string skip;
        std::getline(in, skip);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(c))) {
        if (!t.empty()) break;
        continue;
      }
      t.push_back(c);
    }
    return t;
  };
  if (token() != "P5") fail(Errc::ParseError, "not a binary PGM (P5)");
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(token());
    h = std::stoul(token());
    maxval = std::stoul(token());
  } catch (const std::exception&) {
    fail(Errc::ParseError, "malformed PGM header");
  }
  if (w != h) fail(Errc::ParseError, "PGM image is not square");
  if (maxval == 0 || maxval > 255) fail(Errc::ParseError, "PGM maxval must be in 1..255");
  std::vector<unsigned char> raw(w * h);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size()) fail(Errc::ParseError, "truncated PGM pixel data");
  std::vector<double> px(raw.size());
  for (std::size_t k = 0; k < raw.size(); ++k) px[k] = static_cast<double>(raw[k]) / static_cast<double>(maxval);
  return Image(w, std::move(px));
}

inline Image read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::IoError, "cannot open " + path.string());
  return read_pgm(in);
}

inline void write_pgm(std::ostream& out, const Image& img) {
  out << "P5\n" << img.size() << ' ' << img.size() << "\n255\n";
  for (double v : img.pixels()) {
    const auto b = static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    out.put(static_cast<char>(b));
  }
}

inline void write_pgm(const std::filesystem::path& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(Errc::IoError, "cannot write " + path.string());
  write_pgm(out, img);
}

struct IndexEntry {
  std::string filename;
  std::string label;
};

/// Batch index: one `filename,label` line per image.
inline std::vector<IndexEntry> read_index(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::IoError, "cannot open " + path.string());
  std::vector<IndexEntry> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) fail(Errc::ParseError, "index line without a comma: " + line);
    out.push_back({line.substr(0, comma), line.substr(comma + 1)});
  }
  return out;
}

inline void write_index(const std::filesystem::path& path, const std::vector<IndexEntry>& entries) {
  std::ofstream out(path);
  if (!out) fail(Errc::IoError, "cannot write " + path.string());
  for (const auto& e : entries) out << e.filename << ',' << e.label << '\n';
}

}  // namespace flagagg::augment

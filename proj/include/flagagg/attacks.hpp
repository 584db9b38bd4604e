#pragma once

// Byzantine worker behaviours.  An attack rewrites the columns listed in
// `byzantine_ids` and leaves every honest column untouched.

#include <algorithm>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "flagagg/error.hpp"
#include "flagagg/linalg.hpp"
#include "flagagg/rng.hpp"

namespace flagagg::attacks {

enum class Kind { None, UniformRandom, MeanHijack, SignFlip, FallOfEmpires, PacketLossZero };

inline std::string to_string(Kind k) {
  switch (k) {
    case Kind::None: return "none";
    case Kind::UniformRandom: return "uniform";
    case Kind::MeanHijack: return "hijack";
    case Kind::SignFlip: return "signflip";
    case Kind::FallOfEmpires: return "empire";
    case Kind::PacketLossZero: return "packetloss";
  }
  return "none";
}

inline Kind parse_kind(const std::string& s) {
  if (s == "none") return Kind::None;
  if (s == "uniform" || s == "uniform-random" || s == "random") return Kind::UniformRandom;
  if (s == "hijack" || s == "mean-hijack") return Kind::MeanHijack;
  if (s == "signflip" || s == "sign-flip") return Kind::SignFlip;
  if (s == "empire" || s == "fall-of-empires" || s == "foe") return Kind::FallOfEmpires;
  if (s == "packetloss" || s == "packet-loss") return Kind::PacketLossZero;
  fail(Errc::InvalidArgument, "unknown attack '" + s + "' (none|uniform|hijack|signflip|empire|packetloss)");
}

struct AttackSpec {
  Kind kind = Kind::None;
  std::set<std::size_t> byzantine_ids;
  std::uint64_t rng_seed = 0;
  double lo = -1.0;        // UniformRandom
  double hi = 1.0;
  Vector target;           // MeanHijack; empty means the zero vector
  double scale = 10.0;     // SignFlip
  bool per_worker = false; // SignFlip: flip the worker's own gradient instead of the honest mean
  double epsilon = 0.1;    // FallOfEmpires
  double rate = 0.10;      // PacketLossZero

  void validate(std::size_t p) const {
    for (std::size_t id : byzantine_ids)
      require(id < p, Errc::BadSpec, "byzantine id " + std::to_string(id) + " out of range");
    if (kind == Kind::None) return;
    require(!byzantine_ids.empty(), Errc::BadSpec, "attack " + to_string(kind) + " needs at least one byzantine id");
    require(rate >= 0.0 && rate <= 1.0, Errc::BadSpec, "packet loss rate must be in [0, 1]");
    require(epsilon > 0.0, Errc::BadSpec, "epsilon must be > 0");
    require(lo <= hi, Errc::BadSpec, "uniform bounds need lo <= hi");
    if (kind == Kind::MeanHijack)
      require(byzantine_ids.size() == 1, Errc::BadSpec, "mean hijack needs exactly one byzantine worker");
  }
};

/// Default Byzantine set: the last f workers.
inline std::set<std::size_t> last_workers(std::size_t p, std::size_t f) {
  require(f <= p, Errc::BadSpec, "f exceeds worker count");
  std::set<std::size_t> ids;
  for (std::size_t i = p - f; i < p; ++i) ids.insert(i);
  return ids;
}

namespace detail {

inline Vector honest_mean(const Matrix& g, const std::set<std::size_t>& byz) {
  Vector out(g.rows(), 0.0);
  std::size_t c = 0;
  for (std::size_t i = 0; i < g.cols(); ++i)
    if (!byz.contains(i)) {
      axpy(1.0, g.col(i), out);
      ++c;
    }
  require(c > 0, Errc::BadSpec, "attack needs at least one honest worker");
  for (auto& v : out) v /= static_cast<double>(c);
  return out;
}

inline Vector honest_sum(const Matrix& g, const std::set<std::size_t>& byz) {
  Vector out(g.rows(), 0.0);
  for (std::size_t i = 0; i < g.cols(); ++i)
    if (!byz.contains(i)) axpy(1.0, g.col(i), out);
  return out;
}

}  // namespace detail

inline Matrix apply_attack(const Matrix& honest, const AttackSpec& spec) {
  const std::size_t n = honest.rows();
  const std::size_t p = honest.cols();
  spec.validate(p);
  Matrix g = honest;
  const auto& byz = spec.byzantine_ids;
  switch (spec.kind) {
    case Kind::None: break;
    case Kind::UniformRandom:
      for (std::size_t id : byz) {
        Rng rng(derive_seed(spec.rng_seed, id));
        for (auto& v : g.col(id)) v = rng.uniform(spec.lo, spec.hi);
      }
      break;
    case Kind::MeanHijack: {
      const std::size_t id = *byz.begin();
      Vector t = spec.target.empty() ? Vector(n, 0.0) : spec.target;
      require(t.size() == n, Errc::BadSpec, "hijack target length != n");
      const Vector s = detail::honest_sum(honest, byz);
      auto col = g.col(id);
      for (std::size_t r = 0; r < n; ++r) col[r] = static_cast<double>(p) * t[r] - s[r];
      break;
    }
    case Kind::SignFlip: {
      const Vector mu = detail::honest_mean(honest, byz);
      for (std::size_t id : byz) {
        auto col = g.col(id);
        for (std::size_t r = 0; r < n; ++r) col[r] = -spec.scale * (spec.per_worker ? honest(r, id) : mu[r]);
      }
      break;
    }
    case Kind::FallOfEmpires: {
      const Vector mu = detail::honest_mean(honest, byz);
      for (std::size_t id : byz) {
        auto col = g.col(id);
        for (std::size_t r = 0; r < n; ++r) col[r] = -spec.epsilon * mu[r];
      }
      break;
    }
    case Kind::PacketLossZero:
      for (std::size_t id : byz) {
        Rng rng(derive_seed(spec.rng_seed, id));
        for (auto& v : g.col(id))
          if (rng.uniform() < spec.rate) v = 0.0;
      }
      break;
  }
  return g;
}

}  // namespace flagagg::attacks

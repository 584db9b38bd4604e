#pragma once

// Line-oriented `key = value` run configuration.  Keys are flat and dotted
// (run.p, flag.lambda, ...); a `[section]` header prefixes undotted keys that
// follow it.  `#` starts a comment.  Every accepted key lives in one table
// that also drives `--help`, so the two cannot drift apart.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <istream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "flagagg/error.hpp"
#include "flagagg/sim.hpp"

namespace flagagg::config {

/// Everything `train` needs: the simulator config plus the few settings that
/// are resolved against each other after parsing.
struct TrainSettings {
  sim::RunConfig run{};
  std::size_t attack_f = 0;
  std::string attack_ids;     // comma list; overrides attack_f when set
  std::string attack_target;  // comma list or "zero"
  std::string agg_f = "auto"; // "auto" follows the Byzantine count
  augment::AugmentSpec augment{};
  std::string augment_map = "none";
  std::optional<double> augment_noise;  // unset: 0.05 for the noise map, else 0
  bool timing = false;
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  require(ec == std::errc() && ptr == v.data() + v.size(), Errc::BadSpec,
          "key '" + key + "': expected a non-negative integer, got '" + v + "'");
  return out;
}

inline std::size_t to_size(const std::string& key, const std::string& v) {
  return static_cast<std::size_t>(to_u64(key, v));
}

inline double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  require(ec == std::errc() && ptr == v.data() + v.size() && std::isfinite(out), Errc::BadSpec,
          "key '" + key + "': expected a number, got '" + v + "'");
  return out;
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  fail(Errc::BadSpec, "key '" + key + "': expected true/false, got '" + v + "'");
}

template <class Fn>
auto enum_value(const std::string& key, Fn&& parse) {
  try {
    return parse();
  } catch (const Error& e) {
    fail(Errc::BadSpec, "key '" + key + "': " + e.what());
  }
}

inline std::vector<double> to_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(to_double(key, trim(tok)));
  return out;
}

}  // namespace detail

struct KeyDef {
  std::string name;
  std::string default_value;
  std::string help;
  std::function<void(TrainSettings&, const std::string&)> set;
};

inline const std::vector<KeyDef>& keys() {
  using namespace detail;
  using S = TrainSettings;
  using V = const std::string&;
  static const std::vector<KeyDef> table{
      {"run.p", "8", "worker count", [](S& s, V v) { s.run.p = to_size("run.p", v); }},
      {"run.iterations", "100", "training iterations T", [](S& s, V v) { s.run.iterations = to_size("run.iterations", v); }},
      {"run.batch_size", "16", "per-worker minibatch size B",
       [](S& s, V v) { s.run.batch_size = to_size("run.batch_size", v); }},
      {"run.seed", "1", "master seed", [](S& s, V v) { s.run.seed = to_u64("run.seed", v); }},
      {"run.lr", "0.1", "initial learning rate", [](S& s, V v) { s.run.lr = to_double("run.lr", v); }},
      {"run.lr_decay", "0.2", "multiplicative learning-rate decay",
       [](S& s, V v) { s.run.lr_decay = to_double("run.lr_decay", v); }},
      {"run.lr_interval", "1000", "iterations between decays",
       [](S& s, V v) { s.run.lr_interval = to_size("run.lr_interval", v); }},
      {"run.model", "logistic", "linear | logistic | mlp",
       [](S& s, V v) { s.run.model = enum_value("run.model", [&] { return sim::parse_model(v); }); }},
      {"run.hidden", "16", "mlp hidden width", [](S& s, V v) { s.run.hidden = to_size("run.hidden", v); }},
      {"run.dim", "20", "feature dimension of the synthetic data",
       [](S& s, V v) { s.run.data.dim = to_size("run.dim", v); }},
      {"run.classes", "2", "blob classes", [](S& s, V v) { s.run.data.classes = to_size("run.classes", v); }},
      {"run.samples_per_class", "200", "blob samples per class",
       [](S& s, V v) { s.run.data.samples_per_class = to_size("run.samples_per_class", v); }},
      {"run.spread", "1", "blob standard deviation", [](S& s, V v) { s.run.data.spread = to_double("run.spread", v); }},
      {"run.timing", "false", "record agg_wall_ms (otherwise written as 0)",
       [](S& s, V v) { s.timing = to_bool("run.timing", v); }},
      {"attack.kind", "none", "none | uniform | hijack | signflip | empire | packetloss",
       [](S& s, V v) { s.run.attack.kind = enum_value("attack.kind", [&] { return attacks::parse_kind(v); }); }},
      {"attack.f", "0", "Byzantine count; the last f workers", [](S& s, V v) { s.attack_f = to_size("attack.f", v); }},
      {"attack.ids", "", "explicit comma-separated Byzantine worker ids", [](S& s, V v) { s.attack_ids = v; }},
      {"attack.seed", "0", "attack RNG seed", [](S& s, V v) { s.run.attack.rng_seed = to_u64("attack.seed", v); }},
      {"attack.lo", "-1", "uniform attack lower bound", [](S& s, V v) { s.run.attack.lo = to_double("attack.lo", v); }},
      {"attack.hi", "1", "uniform attack upper bound", [](S& s, V v) { s.run.attack.hi = to_double("attack.hi", v); }},
      {"attack.target", "zero", "hijack target: zero or comma list", [](S& s, V v) { s.attack_target = v; }},
      {"attack.epsilon", "0.1", "fall-of-empires epsilon",
       [](S& s, V v) { s.run.attack.epsilon = to_double("attack.epsilon", v); }},
      {"attack.scale", "10", "sign-flip scale", [](S& s, V v) { s.run.attack.scale = to_double("attack.scale", v); }},
      {"attack.per_worker", "false", "sign-flip the worker's own gradient",
       [](S& s, V v) { s.run.attack.per_worker = to_bool("attack.per_worker", v); }},
      {"attack.rate", "0.1", "packet-loss zero rate", [](S& s, V v) { s.run.attack.rate = to_double("attack.rate", v); }},
      {"agg.kind", "mean", "mean | median | trimmed-mean | meamed | phocas | multi-krum | bulyan | pca | flag",
       [](S& s, V v) { s.run.aggregator.kind = enum_value("agg.kind", [&] { return agg::parse_kind(v); }); }},
      {"agg.f", "auto", "tolerated Byzantine count; auto follows the attack", [](S& s, V v) { s.agg_f = v; }},
      {"agg.m", "0", "multi-krum / pca selection size (0: rule default)",
       [](S& s, V v) { s.run.aggregator.m = to_size("agg.m", v); }},
      {"flag.lambda", "0", "regularization weight", [](S& s, V v) { s.run.aggregator.flag.lambda = to_double("flag.lambda", v); }},
      {"flag.m", "0", "subspace dimension (0: ceil((p+1)/2))",
       [](S& s, V v) { s.run.aggregator.flag.m = to_size("flag.m", v); }},
      {"flag.max_iters", "5", "IRLS iterations", [](S& s, V v) { s.run.aggregator.flag.max_iters = to_size("flag.max_iters", v); }},
      {"flag.tol", "1e-10", "IRLS objective-change stopping tolerance",
       [](S& s, V v) { s.run.aggregator.flag.tol = to_double("flag.tol", v); }},
      {"flag.regularizer", "none", "none | l1 | pairwise",
       [](S& s, V v) {
         s.run.aggregator.flag.regularizer = enum_value("flag.regularizer", [&] { return flag::parse_regularizer(v); });
       }},
      {"flag.guard_eps", "1e-12", "floor under 1 - v inside the square root",
       [](S& s, V v) { s.run.aggregator.flag.guard_eps = to_double("flag.guard_eps", v); }},
      {"flag.taylor_a", "2", "root order a of the likelihood surrogate",
       [](S& s, V v) { s.run.aggregator.flag.taylor_a = to_double("flag.taylor_a", v); }},
      {"flag.l1_smoothing", "0.01", "smoothing delta of the elementwise L1 penalty",
       [](S& s, V v) { s.run.aggregator.flag.l1_smoothing = to_double("flag.l1_smoothing", v); }},
      {"flag.uniform_weights", "false", "freeze IRLS weights at 1 (plain PCA step)",
       [](S& s, V v) { s.run.aggregator.flag.uniform_weights = to_bool("flag.uniform_weights", v); }},
      {"augment.map", "none", "Byzantine data augmentation: none | noise | lv | catmap | smoothcat",
       [](S& s, V v) {
         s.augment.kind = enum_value("augment.map", [&] { return augment::parse_map(v); });
         s.augment_map = v;
       }},
      {"augment.iters", "1", "cat-map iterations", [](S& s, V v) { s.augment.iterations = to_size("augment.iters", v); }},
      {"augment.m", "0.95", "smooth cat map degree", [](S& s, V v) { s.augment.smooth_m = to_double("augment.m", v); }},
      {"augment.noise", "auto", "gaussian noise sigma after the map (auto: 0.05 for map noise, else 0)",
       [](S& s, V v) { s.augment_noise = v == "auto" ? std::nullopt : std::optional(to_double("augment.noise", v)); }},
      {"augment.fraction", "1", "fraction of samples transformed",
       [](S& s, V v) { s.augment.fraction = to_double("augment.fraction", v); }},
      {"augment.seed", "7", "subset and noise seed", [](S& s, V v) { s.run.augment_seed = to_u64("augment.seed", v); }},
      {"augment.lv_alpha", "0.666666666666667", "LV alpha", [](S& s, V v) { s.augment.lv.alpha = to_double("augment.lv_alpha", v); }},
      {"augment.lv_beta", "1.33333333333333", "LV beta", [](S& s, V v) { s.augment.lv.beta = to_double("augment.lv_beta", v); }},
      {"augment.lv_gamma", "-1", "LV gamma", [](S& s, V v) { s.augment.lv.gamma = to_double("augment.lv_gamma", v); }},
      {"augment.lv_delta", "-1", "LV delta", [](S& s, V v) { s.augment.lv.delta = to_double("augment.lv_delta", v); }},
      {"augment.lv_horizon", "1", "LV integration horizon T",
       [](S& s, V v) { s.augment.lv.horizon = to_double("augment.lv_horizon", v); }},
      {"augment.lv_step", "0.01", "LV RK4 step h", [](S& s, V v) { s.augment.lv.step = to_double("augment.lv_step", v); }},
      {"augment.lv_coordinates", "false", "flow pixel coordinates instead of value pairs",
       [](S& s, V v) { s.augment.lv_on_coordinates = to_bool("augment.lv_coordinates", v); }},
  };
  return table;
}

inline const KeyDef* find_key(const std::string& name) {
  for (const auto& k : keys())
    if (k.name == name) return &k;
  return nullptr;
}

/// Applies one `key=value` assignment; unknown keys are errors.
inline void set(TrainSettings& s, const std::string& key, const std::string& value) {
  const KeyDef* def = find_key(key);
  require(def != nullptr, Errc::BadSpec, "unknown config key '" + key + "'");
  def->set(s, value);
}

inline void apply_override(TrainSettings& s, const std::string& assignment) {
  const auto eq = assignment.find('=');
  require(eq != std::string::npos, Errc::BadSpec, "override '" + assignment + "' is not key=value");
  set(s, detail::trim(assignment.substr(0, eq)), detail::trim(assignment.substr(eq + 1)));
}

inline void parse_into(TrainSettings& s, std::istream& in) {
  std::string line;
  std::string section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    if (t.front() == '[') {
      require(t.back() == ']', Errc::BadSpec, "line " + std::to_string(lineno) + ": bad section header");
      section = detail::trim(std::string_view(t).substr(1, t.size() - 2));
      if (section == "aggregator") section = "agg";
      continue;
    }
    const auto eq = t.find('=');
    require(eq != std::string::npos, Errc::BadSpec, "line " + std::to_string(lineno) + ": expected key = value");
    std::string key = detail::trim(std::string_view(t).substr(0, eq));
    if (!section.empty() && key.find('.') == std::string::npos) key = section + "." + key;
    try {
      set(s, key, detail::trim(std::string_view(t).substr(eq + 1)));
    } catch (const Error& e) {
      fail(Errc::BadSpec, "line " + std::to_string(lineno) + ": " + e.what());
    }
  }
}

/// Fills cross-key settings (Byzantine ids, hijack target, agg.f, data
/// augmentation) and validates the result.
inline void finalize(TrainSettings& s) {
  auto& run = s.run;
  if (!s.attack_ids.empty()) {
    run.attack.byzantine_ids.clear();
    for (double v : detail::to_list("attack.ids", s.attack_ids)) {
      require(v >= 0.0 && v == std::floor(v), Errc::BadSpec, "attack.ids must be worker indices");
      run.attack.byzantine_ids.insert(static_cast<std::size_t>(v));
    }
  } else {
    require(s.attack_f <= run.p, Errc::BadSpec, "attack.f exceeds run.p");
    run.attack.byzantine_ids = attacks::last_workers(run.p, s.attack_f);
  }
  // f = 0 is the clean baseline of any attack
  if (run.attack.byzantine_ids.empty()) run.attack.kind = attacks::Kind::None;
  if (run.attack.kind == attacks::Kind::None) run.attack.byzantine_ids.clear();

  if (s.attack_target.empty() || s.attack_target == "zero") {
    run.attack.target.clear();
  } else {
    run.attack.target = detail::to_list("attack.target", s.attack_target);
  }

  run.aggregator.f = s.agg_f == "auto" ? run.attack.byzantine_ids.size() : detail::to_size("agg.f", s.agg_f);

  s.augment.noise_sigma = s.augment_noise.value_or(s.augment_map == "noise" ? augment::kDefaultNoiseSigma : 0.0);
  if (s.augment.kind != augment::MapKind::None || s.augment.noise_sigma > 0.0) {
    run.byzantine_augment = s.augment;
  } else {
    run.byzantine_augment.reset();
  }
  try {
    if (run.byzantine_augment) run.byzantine_augment->validate();
    run.aggregator.flag.validate();
    run.validate();
  } catch (const Error& e) {
    fail(Errc::BadSpec, e.what());
  }
}

inline TrainSettings load(std::istream& in, const std::vector<std::string>& overrides = {}) {
  TrainSettings s;
  parse_into(s, in);
  for (const auto& o : overrides) apply_override(s, o);
  finalize(s);
  return s;
}

inline TrainSettings load_file(const std::string& path, const std::vector<std::string>& overrides = {}) {
  std::ifstream in(path);
  require(static_cast<bool>(in), Errc::BadSpec, "cannot open config '" + path + "'");
  return load(in, overrides);
}

/// `--help` text: one line per key with its default.
inline std::string describe_keys() {
  std::ostringstream out;
  out << "Config keys (key = value; default in brackets):\n";
  for (const auto& k : keys()) {
    out << "  " << k.name << " [" << (k.default_value.empty() ? "unset" : k.default_value) << "]  " << k.help << '\n';
  }
  return out.str();
}

}  // namespace flagagg::config

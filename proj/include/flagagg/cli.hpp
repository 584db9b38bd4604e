#pragma once

// Subcommand bodies of the `flagagg` tool.  Argument parsing lives in
// tools/flagagg.cpp; these functions take parsed options, write to the given
// streams and return the process exit code.

#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "flagagg/aggregators.hpp"
#include "flagagg/augment.hpp"
#include "flagagg/config.hpp"
#include "flagagg/error.hpp"
#include "flagagg/linalg.hpp"
#include "flagagg/sim.hpp"
#include "flagagg/verify.hpp"

namespace flagagg::cli {

enum Exit : int { kOk = 0, kVerifyFailed = 1, kUsage = 2, kRuntime = 3 };

namespace detail {

inline int report(std::ostream& err, int code, const std::string& msg) {
  err << "flagagg: " << msg << '\n';
  return code;
}

inline bool write_file(const std::string& path, const std::string& text, std::ostream& err) {
  std::ofstream f(path, std::ios::binary);
  if (!f || !(f << text)) {
    err << "flagagg: cannot write " << path << '\n';
    return false;
  }
  return true;
}

}  // namespace detail

struct TrainOptions {
  std::string config_path;  // empty: all defaults
  std::vector<std::string> overrides;
  std::string out_path;     // empty: stdout
  std::string plot_path;    // per-aggregator comparison CSV
};

inline int cmd_train(const TrainOptions& opt, std::ostream& out, std::ostream& err) {
  config::TrainSettings settings;
  try {
    if (opt.config_path.empty()) {
      std::istringstream empty;
      settings = config::load(empty, opt.overrides);
    } else {
      settings = config::load_file(opt.config_path, opt.overrides);
    }
  } catch (const Error& e) {
    return detail::report(err, kUsage, e.what());
  }

  std::string csv;
  std::string plot;
  try {
    const sim::Dataset data = sim::make_run_data(settings.run);
    std::ostringstream buf;
    sim::write_run_csv(buf, sim::train(settings.run, data), settings.timing);
    csv = buf.str();
    if (!opt.plot_path.empty()) {
      std::ostringstream pbuf;
      pbuf << "aggregator,iter,train_loss,test_accuracy\n";
      for (agg::Kind kind : agg::all_kinds()) {
        sim::RunConfig cfg = settings.run;
        cfg.aggregator.kind = kind;
        try {
          agg::Aggregator(cfg.aggregator).check(cfg.p);
        } catch (const Error&) {
          continue;  // rule not applicable at this (p, f)
        }
        for (const auto& row : sim::train(cfg, data).rows) {
          char line[128];
          std::snprintf(line, sizeof line, ",%zu,%.10g,%.6f\n", row.iter, row.train_loss, row.test_accuracy);
          pbuf << agg::to_string(kind) << line;
        }
      }
      plot = pbuf.str();
    }
  } catch (const Error& e) {
    return detail::report(err, kRuntime, e.what());
  }

  if (!opt.plot_path.empty() && !detail::write_file(opt.plot_path, plot, err)) return kRuntime;
  if (opt.out_path.empty()) {
    out << csv;
    out.flush();
  } else if (!detail::write_file(opt.out_path, csv, err)) {
    return kRuntime;
  }
  return kOk;
}

struct AggregateOptions {
  std::string matrix_path;
  std::string kind = "mean";
  std::size_t f = 0;
  std::size_t m = 0;
  double lambda = 0.0;
  std::string regularizer = "none";
  std::size_t max_iters = 5;
};

inline int cmd_aggregate(const AggregateOptions& opt, std::ostream& out, std::ostream& err) {
  Matrix g;
  agg::AggregatorSpec spec;
  try {
    g = linalg::read_matrix_csv(opt.matrix_path);
    spec.kind = agg::parse_kind(opt.kind);
    spec.f = opt.f;
    spec.m = opt.m;
    spec.flag.m = opt.m;
    spec.flag.lambda = opt.lambda;
    spec.flag.regularizer = flag::parse_regularizer(opt.regularizer);
    spec.flag.max_iters = opt.max_iters;
    spec.flag.validate();
    agg::Aggregator(spec).check(g.cols());
  } catch (const Error& e) {
    return detail::report(err, kUsage, e.what());
  }
  std::ostringstream buf;
  try {
    for (double v : agg::Aggregator(spec)(g).direction) buf << linalg::format_double(v) << '\n';
  } catch (const Error& e) {
    return detail::report(err, kRuntime, e.what());
  }
  out << buf.str();
  out.flush();
  return kOk;
}

struct VerifyOptions {
  std::string suite = "all";
  bool inject_fault = false;  // test-only: corrupt the eigensolver
};

inline int cmd_verify(const VerifyOptions& opt, std::ostream& out, std::ostream& err) {
  const bool known = opt.suite == "all" || std::find(verify::suite_names().begin(), verify::suite_names().end(),
                                                     opt.suite) != verify::suite_names().end();
  if (!known) return detail::report(err, kUsage, "unknown suite '" + opt.suite + "'");
  linalg::detail::corrupt_eigensolver.store(opt.inject_fault);
  std::vector<verify::SuiteReport> reports;
  try {
    reports = verify::run(opt.suite);
  } catch (const Error& e) {
    linalg::detail::corrupt_eigensolver.store(false);
    return detail::report(err, kRuntime, e.what());
  }
  linalg::detail::corrupt_eigensolver.store(false);
  std::ostringstream buf;
  verify::print_table(buf, reports);
  out << buf.str();
  out.flush();
  for (const auto& r : reports) {
    if (!r.ok()) {
      err << "flagagg: verification failed in suite " << r.name;
      if (r.failing_seed) err << " (seed " << *r.failing_seed << ')';
      err << '\n';
    }
  }
  return std::all_of(reports.begin(), reports.end(), [](const auto& r) { return r.ok(); }) ? kOk : kVerifyFailed;
}

struct AugmentOptions {
  std::string input;   // PGM file or directory of .pgm files
  std::string output;  // file, or directory in directory mode
  augment::AugmentSpec spec{};
  std::uint64_t seed = 7;
};

/// Directory mode writes every image (transformed or copied) plus
/// `augment_index.csv` with one `filename,transformed` line per image.
inline int cmd_augment(const AugmentOptions& opt, std::ostream& out, std::ostream& err) {
  namespace fs = std::filesystem;
  try {
    opt.spec.validate();
  } catch (const Error& e) {
    return detail::report(err, kUsage, e.what());
  }
  std::error_code ec;
  const bool dir_mode = fs::is_directory(opt.input, ec);
  std::vector<fs::path> files;
  std::vector<augment::Image> images;
  try {
    if (dir_mode) {
      for (const auto& entry : fs::directory_iterator(opt.input))
        if (entry.is_regular_file() && entry.path().extension() == ".pgm") files.push_back(entry.path());
      std::sort(files.begin(), files.end());
      if (files.empty()) fail(Errc::IoError, "no .pgm files in " + opt.input);
    } else {
      files.emplace_back(opt.input);
    }
    for (const auto& f : files) images.push_back(augment::read_pgm(f));
  } catch (const Error& e) {
    return detail::report(err, kUsage, e.what());
  }

  try {
    const auto result = augment::augment_batch(images, opt.spec, opt.seed);
    if (!dir_mode) {
      augment::write_pgm(fs::path(opt.output), result.front());
      return kOk;
    }
    fs::create_directories(opt.output);
    const auto chosen = augment::select_subset(images.size(), opt.spec.fraction, opt.seed);
    std::vector<augment::IndexEntry> index;
    for (std::size_t i = 0; i < files.size(); ++i) {
      augment::write_pgm(fs::path(opt.output) / files[i].filename(), result[i]);
      const bool t = std::binary_search(chosen.begin(), chosen.end(), i);
      index.push_back({files[i].filename().string(), t ? "1" : "0"});
    }
    augment::write_index(fs::path(opt.output) / "augment_index.csv", index);
    out << chosen.size() << " of " << files.size() << " images transformed\n";
  } catch (const Error& e) {
    return detail::report(err, kRuntime, e.what());
  } catch (const fs::filesystem_error& e) {
    return detail::report(err, kRuntime, e.what());
  }
  return kOk;
}

}  // namespace flagagg::cli

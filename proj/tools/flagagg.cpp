// flagagg: train / aggregate / verify / augment front end.

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "flagagg/cli.hpp"

int main(int argc, char** argv) {
  using namespace flagagg;

  CLI::App app{"Byzantine-robust gradient aggregation toolkit"};
  app.require_subcommand(1);
  app.footer("Exit codes: 0 ok, 1 verification failure, 2 usage/config error, 3 runtime error.\n"
             "FLAGAGG_THREADS caps worker threads (default: hardware count).\n\n" +
             config::describe_keys());

  cli::TrainOptions train;
  auto* t = app.add_subcommand("train", "run a seeded distributed-SGD experiment, CSV to stdout or --out");
  t->add_option("--config,-c", train.config_path, "key = value config file");
  t->add_option("--set,-s", train.overrides, "override one key (key=value); repeatable");
  t->add_option("--out,-o", train.out_path, "write the run CSV here instead of stdout");
  t->add_option("--plot-data", train.plot_path, "also write a per-aggregator comparison CSV");
  t->footer(config::describe_keys());

  cli::AggregateOptions aggregate;
  auto* a = app.add_subcommand("aggregate", "aggregate the columns of an n x p matrix CSV");
  a->add_option("matrix", aggregate.matrix_path, "matrix CSV, one row per line")->required();
  a->add_option("--agg", aggregate.kind, "mean|median|trimmed-mean|meamed|phocas|multi-krum|bulyan|pca|flag")
      ->capture_default_str();
  a->add_option("--f", aggregate.f, "tolerated Byzantine count")->capture_default_str();
  a->add_option("--m", aggregate.m, "subspace / selection size (0: rule default)")->capture_default_str();
  a->add_option("--lambda", aggregate.lambda, "flag regularization weight")->capture_default_str();
  a->add_option("--regularizer", aggregate.regularizer, "none|l1|pairwise")->capture_default_str();
  a->add_option("--max-iters", aggregate.max_iters, "flag IRLS iterations")->capture_default_str();

  cli::VerifyOptions verify;
  auto* v = app.add_subcommand("verify", "run seeded property suites");
  v->add_option("suite", verify.suite, "kron|pca-equiv|irls-mono|kkt|grad-fd|socp-sweep|all")->capture_default_str();
  v->add_flag("--inject-fault", verify.inject_fault, "corrupt the eigensolver (negative test)")->group("");

  cli::AugmentOptions aug;
  std::string map = "none";
  auto* g = app.add_subcommand("augment", "transform a PGM image or a directory of them");
  g->add_option("input", aug.input, "input .pgm file or directory")->required();
  g->add_option("--out,-o", aug.output, "output file or directory")->required();
  g->add_option("--map", map, "none|noise|lv|catmap|smoothcat")->capture_default_str();
  g->add_option("--iters", aug.spec.iterations, "cat-map iterations")->capture_default_str();
  g->add_option("--m", aug.spec.smooth_m, "smooth cat map degree")->capture_default_str();
  std::optional<double> noise;
  g->add_option("--noise", noise, "gaussian noise sigma (0.05 with --map noise, else 0)");
  g->add_option("--fraction", aug.spec.fraction, "fraction of images transformed")->capture_default_str();
  g->add_option("--seed", aug.seed, "subset and noise seed")->capture_default_str();
  g->add_option("--lv-horizon", aug.spec.lv.horizon, "Lotka-Volterra horizon T")->capture_default_str();
  g->add_option("--lv-step", aug.spec.lv.step, "Lotka-Volterra RK4 step")->capture_default_str();
  g->add_flag("--lv-coordinates", aug.spec.lv_on_coordinates, "flow pixel coordinates instead of values");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : cli::kUsage;
  }

  if (*t) return cli::cmd_train(train, std::cout, std::cerr);
  if (*a) return cli::cmd_aggregate(aggregate, std::cout, std::cerr);
  if (*v) return cli::cmd_verify(verify, std::cout, std::cerr);
  try {
    aug.spec.kind = augment::parse_map(map);
    aug.spec.noise_sigma = noise.value_or(map == "noise" ? augment::kDefaultNoiseSigma : 0.0);
  } catch (const Error& e) {
    std::cerr << "flagagg: " << e.what() << '\n';
    return cli::kUsage;
  }
  return cli::cmd_augment(aug, std::cout, std::cerr);
}

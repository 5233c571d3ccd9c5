#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "ssmpose/commands.hpp"

using namespace ssmpose;

namespace {

struct Flags {
  std::string config;
  std::optional<uint64_t> seed;
  std::optional<std::string> out, variant, weights;
  std::optional<int64_t> batch, iters, warmup;
  bool oracle = false;
};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "JSON run configuration");
  cmd->add_option("--seed", f.seed, "RNG seed");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--variant", f.variant, "small | base | large | custom")
      ->check(CLI::IsMember({"small", "base", "large", "custom"}));
  cmd->add_option("--weights", f.weights, "weights file");
  cmd->add_option("--batch", f.batch, "batch size")->check(CLI::PositiveNumber);
}

RunConfig resolve(const std::string& verb, const Flags& f) {
  RunConfig cfg = f.config.empty() ? RunConfig{} : load_run_config(f.config);
  if (f.seed) cfg.seed = *f.seed;
  if (f.out) cfg.out = *f.out;
  if (f.variant) apply_variant(cfg, *f.variant);
  if (f.weights) cfg.weights = *f.weights;
  if (f.batch) {
    if (verb == "train") cfg.train.batch = *f.batch;
    if (verb == "eval") cfg.eval.batch = *f.batch;
    if (verb == "bench") cfg.bench.batch = *f.batch;
  }
  if (f.iters) (verb == "train" ? cfg.train.steps : cfg.bench.iters) = *f.iters;
  if (f.warmup) cfg.bench.warmup = *f.warmup;
  if (f.oracle) cfg.eval.oracle = true;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Top-down keypoint detection with a selective-scan backbone"};
  app.require_subcommand(1);
  Flags f;
  auto* train = app.add_subcommand("train", "train on a dataset and write checkpoints");
  auto* eval = app.add_subcommand("eval", "evaluate AP / PCK with ground-truth boxes");
  auto* bench = app.add_subcommand("bench", "time forward passes");
  auto* inspect = app.add_subcommand("inspect", "print shapes, parameter and MAC counts; dump stage features");
  auto* synth = app.add_subcommand("synth", "write the synthetic stick-figure dataset");
  for (auto* cmd : {train, eval, bench, inspect, synth}) add_common(cmd, f);
  train->add_option("--iters", f.iters, "optimizer steps")->check(CLI::PositiveNumber);
  bench->add_option("--iters", f.iters, "timed iterations")->check(CLI::PositiveNumber);
  bench->add_option("--warmup", f.warmup, "untimed warmup iterations")->check(CLI::NonNegativeNumber);
  eval->add_flag("--oracle", f.oracle, "score encoded ground truth instead of the network");

  CLI11_PARSE(app, argc, argv);
  const std::string verb = app.get_subcommands().front()->get_name();
  try {
    const RunConfig cfg = resolve(verb, f);
    if (verb == "train") run_train(cfg, std::cout);
    if (verb == "eval") run_eval(cfg, std::cout);
    if (verb == "bench") run_bench(cfg, std::cout);
    if (verb == "inspect") run_inspect(cfg, std::cout);
    if (verb == "synth") run_synth(cfg, std::cout);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

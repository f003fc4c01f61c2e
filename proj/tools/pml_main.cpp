#include <cstddef>
#include <iostream>
#include <string>
#include <vector>

#include <omp.h>

#include <CLI11.hpp>

#include "pml/cli.hpp"
#include "pml/errors.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Reservoir flow and transport toolkit: reference solvers and learned surrogates"};
  app.require_subcommand(1);

  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out_dir;
  int threads = 0;
  app.add_option("--config", config_path, "JSON run configuration");
  app.add_option("--seed", seed, "override the config seed")->each([&](const std::string&) {
    seed_set = true;
  });
  app.add_option("--out", out_dir, "override the output directory");
  app.add_option("--threads", threads, "OpenMP thread count (0 = runtime default)");

  CLI::App* gen = app.add_subcommand("gen-data", "generate a training dataset");
  CLI::App* train = app.add_subcommand("train", "train a network on a dataset");
  std::string dataset_path, model_out;
  train->add_option("dataset", dataset_path, "dataset file")->required();
  train->add_option("model", model_out, "output model file")->required();
  CLI::App* roll = app.add_subcommand("rollout", "roll a trained surrogate forward in time");
  std::vector<std::string> roll_models;
  std::size_t horizon = 0;
  roll->add_option("models", roll_models, "model file(s): saturation, or flow then saturation")
      ->required();
  roll->add_option("--horizon", horizon, "steps to roll out (default: the config n_steps)");
  CLI::App* bench = app.add_subcommand("benchmark", "time the classical solver vs the surrogate");
  std::vector<std::string> bench_models;
  bench->add_option("models", bench_models, "flow model then saturation model")->required();
  CLI::App* verify = app.add_subcommand("verify", "run the built-in correctness suites");

  CLI11_PARSE(app, argc, argv);

  try {
    if (threads > 0) omp_set_num_threads(threads);
    if (verify->parsed()) return pml::cli::cmd_verify();

    pml::cli::RunConfig cfg;
    if (!config_path.empty()) cfg = pml::cli::load_config(config_path);
    if (seed_set) cfg.seed = seed;
    if (!out_dir.empty()) cfg.out_dir = out_dir;

    if (gen->parsed()) return pml::cli::cmd_gen_data(cfg);
    if (train->parsed()) return pml::cli::cmd_train(cfg, dataset_path, model_out);
    if (roll->parsed())
      return pml::cli::cmd_rollout(cfg, roll_models, horizon > 0 ? horizon : cfg.n_steps);
    if (bench->parsed()) return pml::cli::cmd_benchmark(cfg, bench_models);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

#include "mloc/experiments.hpp"

#include <CLI11.hpp>

#include <cstdint>
#include <string>

int main(int argc, char** argv) {
  CLI::App app{"Pathwise optimal control under lognormal diffusion with MC/MLMC estimation"};

  std::string config_path;
  std::uint64_t seed = 0;
  std::string out_dir;
  app.add_option("--config", config_path, "experiment config file (key = value)")
      ->required()
      ->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "override seed.master");
  auto* out_opt = app.add_option("--out", out_dir, "override out_dir");

  CLI11_PARSE(app, argc, argv);

  mloc::RunOptions opts;
  opts.config_path = config_path;
  if (seed_opt->count() > 0) opts.seed_override = seed;
  if (out_opt->count() > 0) opts.out_override = out_dir;
  return mloc::run_experiment(opts);
}

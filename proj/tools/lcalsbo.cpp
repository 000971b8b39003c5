#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "lcalsbo/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Latent-consistency-aware latent space Bayesian optimization"};
  app.require_subcommand(1);

  struct Flags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
  };
  Flags flags;
  const std::pair<const char*, const char*> commands[] = {
      {"pretrain", "Train the vanilla and LCA VAEs of the gamma sweep and the per-dimension models"},
      {"consistency-map", "Score latent consistency on a grid and on Gaussian draws"},
      {"run", "Run every (method, seed) BO cell and summarize"},
      {"convergence-study", "Cycles-to-convergence across latent dimensions"},
      {"diversity", "Fraction of distinct decoded instances"},
  };
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", flags.config, "JSON experiment config")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", flags.seed, "Run only this seed");
    sub->add_option("--out", flags.out, "Output root (overrides the config and LCALSBO_OUTPUT_ROOT)");
  }
  CLI11_PARSE(app, argc, argv);

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    return lcalsbo::cli::run_command(name, {flags.config, flags.seed, flags.out}, std::cerr);
  } catch (const std::exception& e) {
    std::cerr << "lcalsbo " << name << ": error: " << e.what() << "\n";
    return 2;
  }
}

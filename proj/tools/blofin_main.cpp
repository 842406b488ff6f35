#include <CLI11.hpp>
#include <cstdio>
#include <string>
#include <vector>

#include "blofin/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"blofin: bi-level finetuning testbed for promptable segmentation"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::string ablate_which;

  auto add_config_opts = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "key=value config file");
    cmd->add_option("--set", overrides, "override a config key (key=value, repeatable)");
  };

  CLI::App* train = app.add_subcommand("train", "run training and emit metrics");
  add_config_opts(train);
  CLI::App* gradcheck =
      app.add_subcommand("gradcheck", "finite-difference check of all gradients");
  CLI::App* oracle =
      app.add_subcommand("oracle", "hypergradient checks against exact oracles");
  CLI::App* ablate = app.add_subcommand("ablate", "sweep order, lambda, or rank");
  ablate->add_option("which", ablate_which, "order|lambda|rank")->required();
  add_config_opts(ablate);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return blofin::kExitConfigError;
  }

  try {
    if (train->parsed()) {
      return blofin::cmd_train(blofin::load_run_config(config_path, overrides));
    }
    if (gradcheck->parsed()) {
      return blofin::cmd_gradcheck();
    }
    if (oracle->parsed()) {
      return blofin::cmd_oracle();
    }
    if (ablate->parsed()) {
      return blofin::cmd_ablate(ablate_which,
                                blofin::load_run_config(config_path, overrides));
    }
  } catch (const blofin::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return blofin::kExitConfigError;
  } catch (const blofin::NumericalError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return blofin::kExitNumericalFailure;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return blofin::kExitCheckFailure;
  }
  return blofin::kExitOk;
}

#include "tiltkit/commands.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
  CLI::App app{"tiltkit: minimum-divergence posterior updates"};
  app.require_subcommand(1);
  std::string config, out = ".";
  std::optional<std::uint64_t> seed;
  std::optional<double> beta, penalty_t;
  const std::vector<std::pair<std::string, std::string>> cmds = {
      {"calibrate", "fit call-price views, print prior/posterior prices"},
      {"update", "moment or marginal views, print the posterior summary"},
      {"markowitz", "closed-form Gaussian update under a marginal view"},
      {"var", "value-at-risk of a portfolio under the Gaussian update"},
      {"sweep", "attainable (a, b) pairs of the bivariate feasibility sweep"},
      {"diagnose-truncation", "truncated Pareto multipliers and divergences"},
  };
  for (auto& [name, help] : cmds) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config, "run-config JSON")->required();
    sub->add_option("--out", out, "output directory");
    sub->add_option("--seed", seed, "random seed");
    sub->add_option("--beta", beta, "polynomial-divergence beta");
    sub->add_option("--penalty-t", penalty_t, "least-squares penalty t");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return tiltkit::kExitConfig;
  }
  tiltkit::CommandOptions opt;
  opt.out_dir = out;
  opt.seed = seed;
  opt.beta = beta;
  opt.penalty_t = penalty_t;
  return tiltkit::dispatch(app.get_subcommands().front()->get_name(), config, opt, std::cout, std::cerr);
}

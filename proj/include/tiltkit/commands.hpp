#pragma once

#include "tiltkit/runconfig.hpp"

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace tiltkit {

struct CommandOptions {
  std::string out_dir = ".";
  std::optional<std::uint64_t> seed;
  std::optional<double> beta;
  std::optional<double> penalty_t;
};

// exit codes
constexpr int kExitOk = 0;
constexpr int kExitInfeasible = 1;
constexpr int kExitConfig = 2;

// flags override the config; may throw ConfigError
RunConfig apply_overrides(RunConfig rc, const CommandOptions& opt);

struct PriceRow {
  double strike, prior, posterior;
};

struct CalibrateResult {
  json summary;
  std::vector<PriceRow> prices;
  int exit_code = kExitOk;
};

CalibrateResult run_calibrate(const RunConfig& rc);
json run_update(const RunConfig& rc);
json run_markowitz(const RunConfig& rc);
std::vector<std::pair<double, double>> run_var(const RunConfig& rc);

struct SweepPoint {
  double lambda, xi, a, b;
};
// (a, b) = (E~[g1]/E[g1], E~[g2]/E[g2]) under (1 + (lambda g1 + xi g2)/n)^n, lambda, xi on a grid in [0, max]
std::vector<SweepPoint> feasibility_sweep(const Measure& prior, const Func& g1, const Func& g2, const SweepSpec& s,
                                          int* skipped = nullptr);
std::vector<SweepPoint> run_sweep(const RunConfig& rc, int* skipped = nullptr);

// re-evaluates the constraint residuals of a stored summary against its config
Vec reevaluate_summary(const RunConfig& rc, const json& summary);

// writes outputs into opt.out_dir and returns the process exit code
int dispatch(const std::string& command, const std::string& config_path, const CommandOptions& opt, std::ostream& out,
             std::ostream& err);

std::string format_price(double v);  // 4 decimals

}  // namespace tiltkit

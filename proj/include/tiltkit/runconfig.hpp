#pragma once

#include "tiltkit/gaussian.hpp"
#include "tiltkit/measure.hpp"
#include "tiltkit/payoff.hpp"
#include "tiltkit/tilt.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace tiltkit {

using json = nlohmann::json;

constexpr int kConfigVersion = 1;

struct ViewSpec {
  Func g;
  double target = 0;  // as stated in the config (a price for discounted payoffs)
  double tilt_target = 0;  // target on the undiscounted payoff
  Sense sense = Sense::Equality;
  double weight = 0;
  std::string label;
};

struct MarginalSpec {
  int on = 0;  // coordinate that becomes X
  Density g;
  std::vector<std::pair<int, double>> moments;  // (coordinate, target)
};

struct MarkowitzSpec {
  Vec mean;
  Mat cov;
  int kx = 1;
  Measure g;
  Vec targets;
};

struct VarSpec {
  Vec weights;
  double notional = 1;
  std::vector<double> levels;
  std::size_t samples = 100000;
};

struct SweepSpec {
  int n = 1;
  int grid = 50;
  double max = 0;  // 0 means 10 n
};

struct TruncationSpec {
  double alpha = 4, c = 1;
  std::vector<double> M_grid;
};

struct RunConfig {
  json raw;
  std::string base_dir;
  std::optional<Density> prior_density;
  std::optional<SampleCloud> prior_cloud;
  std::vector<ViewSpec> views;
  bool identity = false;
  std::optional<double> beta;  // polynomial divergence when set
  double discount = 1;         // applied to call/put payoffs
  // solver
  double tol = 0;
  int max_iter = 200;
  std::optional<double> penalty_t;
  std::vector<double> t_grid;
  EngineConfig engine;
  std::uint64_t seed = 20240517;
  std::vector<double> strikes;
  std::optional<MarginalSpec> marginal;
  std::optional<MarkowitzSpec> markowitz;
  std::optional<VarSpec> var;
  std::optional<SweepSpec> sweep;
  std::optional<TruncationSpec> truncation;

  Measure prior_measure() const;
  ConstraintSet constraints() const;
};

// throws Error(ConfigError) naming the offending field
RunConfig parse_config(const json& j, const std::string& base_dir = ".");
RunConfig load_config(const std::string& path);

Density parse_density(const json& j, const std::string& field);
Func parse_payoff(const json& j, const std::string& field);

}  // namespace tiltkit

#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <string>

#include "dtrgp/dtr.hpp"

namespace dtrgp {

enum class ScenarioId { Sim1, Sim2 };

std::string to_string(ScenarioId id);
ScenarioId scenario_from_string(const std::string& s);

// Outcome-noise variants. Paper keeps the published mechanism (arm-specific
// noise for Sim1, additive N(0, 0.3^2) for Sim2); the others are documented
// illustrations of the heteroskedasticity sources, not published mechanisms.
enum class NoiseVariant { Paper, Homoskedastic, HeteroByArm, HeteroByRegion };

std::string to_string(NoiseVariant v);
NoiseVariant noise_variant_from_string(const std::string& s);

struct ScenarioSpec {
  ScenarioId id = ScenarioId::Sim1;
  int n = 500;
  NoiseVariant noise = NoiseVariant::Paper;
  std::uint64_t seed = 1;

  void validate() const;
};

Cohort generate_cohort(const ScenarioSpec& spec);

RegimeFamily scenario_family(ScenarioId id);

// Equally spaced initial design: 13 points at 0.25 increments for Sim1,
// a 4 x 4 factorial over the box for Sim2.
Eigen::MatrixXd scenario_initial_points(ScenarioId id);

// Grid-search step used by the corresponding tables.
double scenario_grid_step(ScenarioId id);

// The generating treatment model, exactly representable as a logistic model.
PropensityModel known_propensity_model(ScenarioId id);

struct OracleConfig {
  long draws = 1000000;
  std::uint64_t seed = 99991;
};

struct OracleResult {
  double value = 0.0;
  double mc_se = 0.0;
};

// Closed-form Sim1 value under "treat iff x > psi".
double sim1_value_closed_form(double psi);

// Monte-Carlo oracle: simulate subjects with treatments enforced by the
// regime and average the outcome.
OracleResult enforced_regime_mc(ScenarioId id, const Eigen::VectorXd& psi,
                                const OracleConfig& config = {});

// True value surface: Sim1 via the closed form (se 0), Sim2 via Monte Carlo.
OracleResult true_value(ScenarioId id, const Eigen::VectorXd& psi,
                        const OracleConfig& config = {});

}  // namespace dtrgp

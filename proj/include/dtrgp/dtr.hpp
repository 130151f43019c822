#pragma once

#include <Eigen/Core>

#include <optional>
#include <string>
#include <vector>

#include "dtrgp/rng.hpp"

namespace dtrgp {

// Per-patient record b = (x_bar, z_bar, y) over T stages plus baseline
// covariates.
struct Trajectory {
  std::vector<Eigen::VectorXd> stage_covariates;  // x_t, one vector per stage
  std::vector<int> treatments;                    // z_t in {0, 1}
  Eigen::VectorXd baseline;                       // e.g. u
  double outcome = 0.0;                           // y

  int stages() const { return static_cast<int>(treatments.size()); }
  void validate() const;
};

struct Cohort {
  std::vector<Trajectory> patients;
  std::optional<Eigen::VectorXd> weights;  // pi; nonnegative, sums to 1

  int size() const { return static_cast<int>(patients.size()); }
  double weight(int i) const { return weights ? (*weights)(i) : 1.0; }
  void validate() const;
};

// Families of decision rules indexed by psi.
//  - ThresholdPerStage: treat at stage t iff every thresholded component of
//    x_t exceeds its own entry of psi (components_per_stage entries per stage).
//  - LinearSharedRule: treat at stage k iff psi1 x_k1 + (1-psi1) x_k2 >
//    0.5 - 3 psi3 u; free index (psi1, psi3).
struct RegimeFamily {
  enum class Kind { ThresholdPerStage, LinearSharedRule };

  Kind kind = Kind::ThresholdPerStage;
  int stages = 1;
  std::vector<int> components_per_stage;  // ThresholdPerStage only
  Eigen::VectorXd lo, hi;                 // index box I

  int dims() const { return static_cast<int>(lo.size()); }
  bool contains(const Eigen::VectorXd& psi) const;
  int recommend(const Trajectory& traj, int stage, const Eigen::VectorXd& psi) const;

  static RegimeFamily threshold_per_stage(std::vector<int> components_per_stage,
                                          Eigen::VectorXd lo, Eigen::VectorXd hi);
  static RegimeFamily linear_shared_rule(int stages, Eigen::VectorXd lo, Eigen::VectorXd hi);
};

bool is_adherent(const Trajectory& traj, const RegimeFamily& family, const Eigen::VectorXd& psi);

// Feature layout for the per-stage treatment models. prev_treatment is
// dropped at stage 1.
struct StageFeatures {
  bool intercept = true;
  bool stage_covariates = true;
  bool prev_treatment = true;
  bool baseline_covariates = false;
};

struct PropensityModel {
  std::vector<Eigen::VectorXd> coef;  // one vector per stage
  StageFeatures features;
  double p_min = 0.005;  // predicted probabilities clamped to [p_min, 1 - p_min]

  int stages() const { return static_cast<int>(coef.size()); }
  Eigen::VectorXd feature_vector(const Trajectory& traj, int stage) const;
  double prob_treat(const Trajectory& traj, int stage) const;     // clamped P(z_t = 1 | history)
  double prob_observed(const Trajectory& traj, int stage) const;  // clamped P(z_t = observed)
};

// Per-stage weighted logistic regression by IRLS; converged when the weighted
// score has sup-norm < 1e-8. Throws FitError naming the stage on separation.
PropensityModel fit_propensity(const Cohort& cohort, const StageFeatures& features = {},
                               double p_min = 0.005, int max_iter = 100);

// pi_i = E_i / sum E_j, E_j iid standard exponential (Dirichlet(1,...,1)).
Eigen::VectorXd bayesian_bootstrap_weights(int n, Rng& rng);

// Normalized IPW value of regime psi: sum_i pi_i w_i y_i / sum_i pi_i w_i,
// w_i = adherence / prod_t p(z_t | history). Throws NoAdherentPatients when
// the denominator is empty.
double ipw_value(const Cohort& cohort, const RegimeFamily& family, const Eigen::VectorXd& psi,
                 const PropensityModel& propensity);

// Point-wise surface evaluation; NoAdherentPatients points are flagged
// missing rather than fatal.
std::vector<std::optional<double>> estimation_surface(const Cohort& cohort,
                                                      const RegimeFamily& family,
                                                      const Eigen::MatrixXd& grid,
                                                      const PropensityModel& propensity);

}  // namespace dtrgp

#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dtrgp/bo.hpp"
#include "dtrgp/dtr.hpp"
#include "dtrgp/harness.hpp"

namespace dtrgp {

// Column names default to the public trial dataset's conventional names
// (LongCART's ACTG175 export); arm codes 2 and 1 are the zidovudine +
// zalcitabine and zidovudine + didanosine arms.
struct CsvSchema {
  std::string id = "pidnum";
  std::string arm = "arms";
  std::string weight = "wtkg";
  std::string cd4_baseline = "cd40";
  std::string cd4_week20 = "cd420";
  std::string arm_code_z0 = "2";  // zidovudine + zalcitabine -> z = 0
  std::string arm_code_z1 = "1";  // zidovudine + didanosine -> z = 1
};

// Parses the CSV, keeps the two configured arms, and returns a single-stage
// cohort with stage covariates (weight, baseline CD4) and outcome week-20
// CD4. Throws SchemaError / RowError.
Cohort load_cohort_csv(const std::string& path, const CsvSchema& schema = {});

// Treat with the second therapy iff weight > psi_W and CD4 > psi_CD4;
// psi_W in [50, 100] kg, psi_CD4 in [200, 600] cells/uL.
RegimeFamily case_study_family();

// 16-point initial design: 15 kg x 125 cells/uL increments from the box lower
// corner.
Eigen::MatrixXd case_study_initial_points();

struct UncertaintyConfig {
  int bootstrap_draws = 500;  // B
  int paths_per_draw = 250;   // N
  Eigen::Vector2d path_grid_step{4.0, 7.5};  // kg, cells/uL
  std::vector<int> checkpoints = {1, 5, 15, 25};
  int budget = 25;
  GpType gp_type = GpType::HM;
  KernelFamily family = KernelFamily::Matern52;
  double p_min = 0.005;
  bool pool_draws = true;  // pool B x N argmax draws (else per-draw medians)
  int workers = 0;         // 0 = hardware concurrency

  void validate() const;
};

struct IntervalSummary {
  double median = 0.0;
  double lo = 0.0;   // 2.5% quantile
  double hi = 0.0;   // 97.5% quantile
};

struct CheckpointUncertainty {
  int checkpoint = 0;
  std::vector<IntervalSummary> psi;  // per index dimension
  IntervalSummary value;
  long pooled_draws = 0;
};

struct UncertaintyResult {
  std::vector<CheckpointUncertainty> checkpoints;
  int failed_draws = 0;
  long path_grid_size = 0;
};

// Bootstrap-outer / posterior-path-inner uncertainty for the optimizer: per
// Dirichlet draw, refit propensities, rebuild the initial design, run BO, and
// at each checkpoint draw N f-posterior sample paths over the path grid,
// recording each path's argmax and maximum. Summaries are medians with
// 2.5%/97.5% quantiles over the pooled draws.
UncertaintyResult optimizer_uncertainty(const Cohort& cohort, const RegimeFamily& family,
                                        const UncertaintyConfig& config,
                                        std::uint64_t master_seed);

// Axis-aligned path grid from the box lower corner in fixed increments,
// inclusive while within the box.
Eigen::MatrixXd path_grid(const RegimeFamily& family, const Eigen::VectorXd& step);

// Grid-search (or quadratic MSM) under Bayesian-bootstrap resampling; the
// Table-8-style baselines.
struct BootstrapBaselineResult {
  std::vector<IntervalSummary> psi;
  IntervalSummary value;
  int failed_draws = 0;
};

BootstrapBaselineResult bootstrap_grid_baseline(const Cohort& cohort, const RegimeFamily& family,
                                                const Eigen::VectorXd& grid_step, int draws,
                                                std::uint64_t master_seed, double p_min = 0.005,
                                                int workers = 0);

BootstrapBaselineResult bootstrap_msm_baseline(const Cohort& cohort, const RegimeFamily& family,
                                               const Eigen::VectorXd& grid_step, int draws,
                                               std::uint64_t master_seed, double p_min = 0.005,
                                               int workers = 0);

std::string uncertainty_to_csv(const UncertaintyResult& result);

}  // namespace dtrgp

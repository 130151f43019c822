#pragma once

#include <Eigen/Core>

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dtrgp/bo.hpp"
#include "dtrgp/scenarios.hpp"

namespace dtrgp {

enum class Method { Grid, MSM, Int, HM, HE };

std::string to_string(Method m);
Method method_from_string(const std::string& s);

// Arithmetic grid (lo, hi] per dimension with the given step: the first point
// is lo + step, the last is the largest lo + k step <= hi + eps. Rows in
// lexicographic order. Sim1's 0.01 step over (-1.5, 1.5) gives exactly 300
// points.
Eigen::MatrixXd step_grid(const Eigen::VectorXd& lo, const Eigen::VectorXd& hi,
                          const Eigen::VectorXd& step);

using SurfaceFn = std::function<std::optional<double>(const Eigen::VectorXd&)>;

struct GridSearchResult {
  Eigen::VectorXd psi;
  double value = 0.0;
  int evaluations = 0;
  int missing = 0;
};

// Evaluates every grid point, skipping missing ones; ties go to the
// lexicographically smallest point. Throws std::runtime_error when every
// point is missing.
GridSearchResult grid_search(const SurfaceFn& surface, const Eigen::MatrixXd& grid);

struct MsmResult {
  Eigen::VectorXd coefficients;  // quadratic feature coefficients
  Eigen::VectorXd psi;
  double value = 0.0;  // fitted value at psi
};

// Quadratic features: 1-D (1, p, p^2); 2-D (1, p1, p1^2, p2, p2^2, p1 p2).
Eigen::MatrixXd quadratic_features(const Eigen::MatrixXd& points);

// Least-squares quadratic marginal model; the optimum is the interior
// stationary point when the quadratic is concave and inside the box,
// otherwise a fine grid scan over the box. Throws on rank deficiency.
MsmResult msm_baseline(const Eigen::MatrixXd& points, const Eigen::VectorXd& values,
                       const Eigen::VectorXd& box_lo, const Eigen::VectorXd& box_hi);

struct ReplicateConfig {
  ScenarioSpec scenario;  // seed field ignored; replicate seeds derive from master_seed
  std::vector<Method> methods = {Method::HM};
  int replicates = 100;
  std::uint64_t master_seed = 1;

  int budget = 25;
  std::vector<int> checkpoints = {1, 5, 10, 15, 20, 25};
  KernelFamily family = KernelFamily::Matern52;
  std::optional<double> grid_step;   // defaults to the scenario's table step
  bool estimated_propensity = false;  // known generating model by default
  double failure_budget = 0.10;
  int workers = 0;  // 0 = hardware concurrency

  BoConfig bo_template;  // gp_type/family/budget overwritten per method
};

struct CheckpointResult {
  int checkpoint = 0;  // 0 for one-shot methods (grid, msm)
  Eigen::VectorXd psi;
  double value = 0.0;
};

struct ReplicateResult {
  int replicate = 0;
  std::uint64_t seed = 0;
  Method method = Method::Grid;
  std::vector<CheckpointResult> checkpoints;
  int evaluations = 0;
  bool failed = false;
  std::string error;
};

std::vector<ReplicateResult> run_replicates(const ReplicateConfig& config);

struct SummaryRow {
  Method method;
  int checkpoint = 0;
  std::string quantity;  // "psi1", ..., "value"
  int count = 0;
  double mean = 0.0, sd = 0.0, median = 0.0, iqr = 0.0;
};

// Linear-interpolation quantile rule; permutation-invariant in replicate
// order.
std::vector<SummaryRow> summarize(const std::vector<ReplicateResult>& results);

// CSV emission (schemas documented in the README run-book).
std::string replicates_to_csv(const std::vector<ReplicateResult>& results);
std::string summary_to_csv(const std::vector<SummaryRow>& rows);

}  // namespace dtrgp

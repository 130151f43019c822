#pragma once

#include <Eigen/Core>

#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "dtrgp/gp.hpp"
#include "dtrgp/hetero.hpp"

namespace dtrgp {

enum class GpType { Int, HM, HE };

std::string to_string(GpType t);
GpType gp_type_from_string(const std::string& s);

enum class EiBaseline { ObservedMax, ReinterpolatedMax };

struct BoConfig {
  GpType gp_type = GpType::HM;
  KernelFamily family = KernelFamily::Matern52;
  int budget = 25;

  // Candidate/evaluation grid, points per dimension (inclusive of box ends).
  // Zero entries take the dimension-based default, total capped at 2^14.
  Eigen::VectorXi grid_resolution;

  // Duplicate exclusion as a fraction of the per-dimension range.
  double delta_min_rel = 1e-6;

  // Default: ObservedMax for Int, ReinterpolatedMax for HM/HE.
  std::optional<EiBaseline> baseline;

  // Optional EI-plateau stop: halt after `patience` consecutive proposals
  // with max EI below eps.
  std::optional<double> ei_plateau_eps;
  int ei_plateau_patience = 3;

  // Hyperparameter prior for HM/HE fits. When auto_noise_prior is set and no
  // noise prior was given, a gamma^2 prior is centered on the initial
  // design's second-difference noise estimate.
  HyperPrior prior;
  bool auto_noise_prior = true;

  int hetero_max_iter = 3;
  double hetero_tol = 1e-3;
};

int default_grid_resolution(int dims);

struct BoRecord {
  int iteration = 0;  // 0 for initial design rows, k for the k-th infill
  Eigen::VectorXd psi;
  double response = 0.0;
  double max_ei = std::numeric_limits<double>::quiet_NaN();
  Eigen::VectorXd incumbent_psi;  // posterior-mean argmax after this row's fit
  double incumbent_value = std::numeric_limits<double>::quiet_NaN();
};

struct BoTrace {
  std::vector<BoRecord> records;  // initial design rows then accepted infills
  std::vector<Eigen::VectorXd> failed_points;
  int estimator_evaluations = 0;  // initial + accepted + failed

  // incumbent_by_infill[k] = incumbent after k accepted infills.
  std::vector<Eigen::VectorXd> incumbent_by_infill;
  std::vector<double> incumbent_value_by_infill;

  const Eigen::VectorXd& final_incumbent() const { return incumbent_by_infill.back(); }
  double final_incumbent_value() const { return incumbent_value_by_infill.back(); }
};

// Interpolating refit on the regressive fit's predicted means; kernel
// hyperparameters and prior mean are reused, so the posterior mean is
// unchanged while the variance vanishes at the sample locations. Identity for
// fits that already interpolate.
GpFit reinterpolate(const GpFit& fit, const Design& design);

// (mu - baseline) Phi(z) + sigma phi(z), z = (mu - baseline)/sigma; zero when
// sigma = 0.
double expected_improvement(double mu, double variance, double baseline);

struct Proposal {
  Eigen::VectorXd psi;
  double ei = 0.0;
};

// EI argmax over the candidate grid (lexicographic tie-break) followed by one
// local simplex refinement; candidates within delta_min of any excluded point
// are skipped. Throws SaturationError when nothing remains.
Proposal propose_next(const GpFit& fit_for_ei, double baseline,
                      const std::vector<Eigen::VectorXd>& exclude, const DomainTransform& box,
                      const BoConfig& config);

// Point-wise evaluator; nullopt marks a failed evaluation (the point is
// recorded, excluded, and the next-best candidate tried once).
using Evaluator = std::function<std::optional<double>(const Eigen::VectorXd&)>;

// Observer invoked after each fit with the number of accepted infills so far.
using FitObserver = std::function<void(int infills_done, const GpFit& fit)>;

BoTrace run_bo(const Evaluator& evaluate, const Design& initial_design,
               const DomainTransform& box, const BoConfig& config,
               const FitObserver& observer = {});

}  // namespace dtrgp

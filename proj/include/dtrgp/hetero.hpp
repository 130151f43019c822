#pragma once

#include <Eigen/Core>

#include <memory>

#include "dtrgp/gp.hpp"

namespace dtrgp {

struct NoiseEstimate {
  Eigen::VectorXd gamma_tilde;  // per design point, sd units, >= floor
  std::shared_ptr<const GpFit> residual_fit;  // null when the fallback was taken
  double floor_sd = 0.0;
  bool fallback = false;
};

// Default noise floor: 1e-6 * sample sd of the responses.
double default_noise_floor(const Design& design);

// Moment estimator for input-dependent noise: fit a second GP on |r_i|^q and
// scale its posterior mean by s(q); only q = 1 is supported, s(1) = sqrt(pi/2).
// Falls back to the homoskedastic sample estimate s(1) * mean|r| when the
// residual fit fails.
NoiseEstimate estimate_pointwise_noise(const Design& design, const GpFit& mean_fit, int q = 1);

struct HeteroOptions {
  KernelFamily family = KernelFamily::Matern52;
  int max_iter = 3;
  double tol = 1e-3;      // relative change in gamma_tilde
  HyperPrior mean_prior;  // prior for the mean-GP fits
  // When no noise prior was given, center one on the design's
  // second-difference noise estimate (see difference_noise_estimate).
  bool auto_noise_prior = true;
  std::optional<Eigen::VectorXd> warm_start;
};

// Alternate {fit mean GP | estimate pointwise noise | update S} until the
// noise stabilizes. Returns the mean fit with NoiseSpec::Heteroskedastic.
GpFit fit_hetero_gp(const Design& design, const DomainTransform& transform,
                    const HeteroOptions& options);

}  // namespace dtrgp

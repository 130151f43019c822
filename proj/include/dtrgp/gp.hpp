#pragma once

#include <Eigen/Core>

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dtrgp/kernels.hpp"
#include "dtrgp/rng.hpp"

namespace dtrgp {

// Computer-experiment data: regime indices and estimator responses.
struct Design {
  Eigen::MatrixXd points;     // m x D
  Eigen::VectorXd responses;  // m
  std::vector<bool> infill;   // provenance; false = initial design point

  int size() const { return static_cast<int>(points.rows()); }
  int dims() const { return static_cast<int>(points.cols()); }
  void validate() const;  // finite entries, consistent sizes, m >= 1

  void append(const Eigen::VectorXd& psi, double response, bool is_infill = true);
};

// Affine map of each index dimension onto the unit interval. Hyperparameter
// bounds and priors live on this scale; kernel length scales are reported
// back in index units.
struct DomainTransform {
  Eigen::VectorXd lo, hi;

  static DomainTransform from_box(const Eigen::VectorXd& lo, const Eigen::VectorXd& hi);
  static DomainTransform identity(int dims);

  int dims() const { return static_cast<int>(lo.size()); }
  Eigen::VectorXd range() const { return hi - lo; }
  Eigen::MatrixXd to_unit(const Eigen::MatrixXd& pts) const;
};

enum class NoiseMode { Interpolating, Homoskedastic, Heteroskedastic };

std::string to_string(NoiseMode m);

struct GpFit;

struct NoiseSpec {
  NoiseMode mode = NoiseMode::Interpolating;
  double gamma2 = 0.0;                        // homoskedastic noise variance
  Eigen::VectorXd gamma_tilde;                // heteroskedastic per-point noise sd
  std::shared_ptr<const GpFit> residual_fit;  // GP on |r|^q backing gamma_tilde
  int q = 1;
  double floor_sd = 0.0;
  bool fallback = false;  // residual fit failed; homoskedastic sample estimate used

  static NoiseSpec interpolating() { return {}; }
  static NoiseSpec homoskedastic(double g2);
  static NoiseSpec heteroskedastic(Eigen::VectorXd gamma_tilde_sd, double floor_sd,
                                   std::shared_ptr<const GpFit> residual_fit, int q = 1);

  // Diagonal of S (variances) for an m-point design.
  Eigen::VectorXd diagonal(int m) const;
  void validate(int m) const;
};

struct LogNormalPrior {
  double log_mean = 0.0;
  double log_sd = 1.0;
};

// Optional MAP priors. theta priors act on the unit-cube length-scale,
// variance priors on the original response scale. Empty = empirical Bayes.
struct HyperPrior {
  std::vector<LogNormalPrior> theta;  // size D, or size 1 broadcast to all dims
  std::optional<LogNormalPrior> signal_variance;
  std::optional<LogNormalPrior> noise_variance;

  bool empty() const { return theta.empty() && !signal_variance && !noise_variance; }
};

struct FitStartRecord {
  Eigen::VectorXd z0;  // log-scale start
  double objective0 = 0.0;
  double objective_final = 0.0;
};

struct FitDiagnostics {
  std::vector<FitStartRecord> starts;
  double best_objective = 0.0;  // lml (+ log prior when MAP) at the returned parameters
  bool used_prior = false;
};

struct GpFit {
  KernelSpec kernel;
  NoiseSpec noise;
  double prior_mean = 0.0;  // mu_0
  Design design;
  DomainTransform transform;

  Eigen::MatrixXd chol_lower;    // L with L L^T = K + S + jitter I
  Eigen::VectorXd dual_weights;  // alpha = (K + S + jitter I)^{-1} (v - mu_0)
  double jitter = 0.0;
  double log_marginal_likelihood = 0.0;
  FitDiagnostics diagnostics;
};

struct PosteriorMoments {
  Eigen::VectorXd mean;
  Eigen::VectorXd variance;                     // clamped to >= 0
  std::optional<Eigen::MatrixXd> covariance;  // present when requested
};

// Log density of the responses under N(mu0 1, K + S).
double log_marginal_likelihood(const Design& design, double mu0, const KernelSpec& spec,
                               const NoiseSpec& noise);

// Factorize at fixed hyperparameters. mu_0 is profiled by generalized least
// squares when not supplied.
GpFit make_gp_fit(const Design& design, const KernelSpec& spec, const NoiseSpec& noise,
                  const DomainTransform& transform, std::optional<double> mu0 = std::nullopt);

struct FitOptions {
  KernelFamily family = KernelFamily::Matern52;
  NoiseMode mode = NoiseMode::Homoskedastic;
  HyperPrior prior;                             // empty = empirical Bayes
  std::optional<Eigen::VectorXd> fixed_noise_sd;  // required for Heteroskedastic mode

  int n_starts = 8;
  int max_iter_per_start = 150;
  std::optional<Eigen::VectorXd> warm_start;  // log-scale parameters of a previous fit

  // Search box, log-parameterized. Length scales on the unit-cube scale;
  // variances on the standardized response scale.
  double theta_lo = 1e-3, theta_hi = 10.0;
  double sig2_lo = 1e-6, sig2_hi = 1e3;
  double noise2_lo = 1e-9, noise2_hi = 1e3;
};

// Multi-start simplex maximization of the (possibly prior-weighted) marginal
// likelihood, mu_0 profiled in closed form at each candidate.
GpFit fit_hyperparams(const Design& design, const DomainTransform& transform,
                      const FitOptions& options);

// Log-scale parameter vector of a fit, suitable as FitOptions::warm_start.
Eigen::VectorXd warm_start_from(const GpFit& fit);

// Second-difference noise-variance estimate along the axis-aligned lines of
// a (typically equally spaced) design; nearest-neighbor first differences
// when no line has three points. Returns 0 for degenerate designs. Used to
// center the default noise prior: the marginal likelihood alone cannot
// separate a short-scale surface from observation noise at these design
// sizes.
double difference_noise_estimate(const Design& design);

// Posterior of the latent surface f at query points.
PosteriorMoments posterior_f(const GpFit& fit, const Eigen::MatrixXd& queries,
                             bool want_covariance = false);

// Posterior of a noisy observation: mean as posterior_f, variance plus the
// per-query noise. When absent, the noise defaults per the fit's mode
// (0 / fitted gamma^2 / predicted from the residual fit).
PosteriorMoments posterior_v(const GpFit& fit, const Eigen::MatrixXd& queries,
                             const std::optional<Eigen::VectorXd>& noise2 = std::nullopt);

// Per-query noise sd implied by the fit's noise specification.
Eigen::VectorXd predict_noise_sd(const GpFit& fit, const Eigen::MatrixXd& queries);

// N joint draws from the f-posterior over the grid; row per path.
// Deterministic given the rng state.
Eigen::MatrixXd sample_posterior_paths(const GpFit& fit, const Eigen::MatrixXd& grid, int n_paths,
                                       Rng& rng);

}  // namespace dtrgp

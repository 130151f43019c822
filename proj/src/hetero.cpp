#include "dtrgp/hetero.hpp"

#include <cmath>
#include <stdexcept>

#include "dtrgp/errors.hpp"
#include "dtrgp/stats.hpp"

namespace dtrgp {

namespace {
const double kS1 = std::sqrt(3.14159265358979323846 / 2.0);
}

double default_noise_floor(const Design& design) {
  std::vector<double> y(design.responses.data(), design.responses.data() + design.size());
  return 1e-6 * sample_sd(y);
}

NoiseEstimate estimate_pointwise_noise(const Design& design, const GpFit& mean_fit, int q) {
  if (q != 1) throw std::invalid_argument("estimate_pointwise_noise: only q = 1 is supported");
  if (mean_fit.design.size() != design.size()) {
    throw std::invalid_argument("estimate_pointwise_noise: mean fit is for a different design");
  }
  const int m = design.size();
  NoiseEstimate out;
  out.floor_sd = default_noise_floor(design);

  const Eigen::VectorXd mu = posterior_f(mean_fit, design.points).mean;
  const Eigen::VectorXd e = (design.responses - mu).cwiseAbs();

  if (e.maxCoeff() <= 0.0) {
    out.gamma_tilde = Eigen::VectorXd::Constant(m, out.floor_sd);
    out.fallback = false;
    return out;
  }

  Design residual_design{design.points, e, {}};
  try {
    FitOptions opt;
    opt.family = mean_fit.kernel.family;
    opt.mode = NoiseMode::Homoskedastic;
    // The |r| targets are themselves noisy: under r ~ N(0, gamma^2) the
    // spread of |r| around its mean is Var|r| = (pi/2 - 1) E|r|^2, which
    // fixes the scale of the residual GP's own nugget.
    const double me = e.mean();
    opt.prior.noise_variance =
        LogNormalPrior{std::log(std::max((3.14159265358979323846 / 2.0 - 1.0) * me * me, 1e-300)),
                       0.75};
    GpFit residual_fit = fit_hyperparams(residual_design, mean_fit.transform, opt);
    const Eigen::VectorXd mu_e = posterior_f(residual_fit, design.points).mean;
    out.gamma_tilde = (kS1 * mu_e.array()).max(out.floor_sd).matrix();
    out.residual_fit = std::make_shared<const GpFit>(std::move(residual_fit));
    out.fallback = false;
  } catch (const FitError&) {
    out.gamma_tilde = Eigen::VectorXd::Constant(m, std::max(kS1 * e.mean(), out.floor_sd));
    out.fallback = true;
  } catch (const NumericalError&) {
    out.gamma_tilde = Eigen::VectorXd::Constant(m, std::max(kS1 * e.mean(), out.floor_sd));
    out.fallback = true;
  }
  return out;
}

GpFit fit_hetero_gp(const Design& design, const DomainTransform& transform,
                    const HeteroOptions& options) {
  design.validate();
  if (design.size() < 5) {
    throw std::invalid_argument("fit_hetero_gp: needs at least 5 points");
  }
  if (options.max_iter < 1) throw std::invalid_argument("fit_hetero_gp: max_iter >= 1");

  HyperPrior prior = options.mean_prior;
  if (options.auto_noise_prior && !prior.noise_variance) {
    const double rice = difference_noise_estimate(design);
    if (rice > 0.0) prior.noise_variance = LogNormalPrior{std::log(rice), 0.6};
  }

  FitOptions mean_opt;
  mean_opt.family = options.family;
  mean_opt.mode = NoiseMode::Homoskedastic;
  mean_opt.prior = prior;
  mean_opt.warm_start = options.warm_start;
  GpFit fit = fit_hyperparams(design, transform, mean_opt);

  NoiseEstimate est;
  Eigen::VectorXd prev;
  for (int iter = 0; iter < options.max_iter; ++iter) {
    est = estimate_pointwise_noise(design, fit, 1);

    FitOptions refit_opt;
    refit_opt.family = options.family;
    refit_opt.mode = NoiseMode::Heteroskedastic;
    refit_opt.fixed_noise_sd = est.gamma_tilde;
    refit_opt.prior = prior;
    refit_opt.warm_start = warm_start_from(fit).head(design.dims() + 1);
    fit = fit_hyperparams(design, transform, refit_opt);

    if (prev.size() == est.gamma_tilde.size()) {
      const double rel =
          ((est.gamma_tilde - prev).cwiseAbs().array() / prev.cwiseMax(1e-300).array())
              .maxCoeff();
      if (rel < options.tol) break;
    }
    prev = est.gamma_tilde;
  }

  fit.noise = NoiseSpec::heteroskedastic(est.gamma_tilde, est.floor_sd, est.residual_fit, 1);
  fit.noise.fallback = est.fallback;
  // Refresh the factorization for the annotated noise spec (same S values).
  GpFit out = make_gp_fit(design, fit.kernel, fit.noise, transform, fit.prior_mean);
  out.diagnostics = fit.diagnostics;
  return out;
}

}  // namespace dtrgp

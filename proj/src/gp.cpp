#include "dtrgp/gp.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "dtrgp/errors.hpp"
#include "dtrgp/nelder_mead.hpp"
#include "dtrgp/stats.hpp"

namespace dtrgp {

namespace {
constexpr double kLog2Pi = 1.83787706640934548;
}

void Design::validate() const {
  if (points.rows() < 1) throw std::invalid_argument("Design: needs at least one point");
  if (responses.size() != points.rows()) throw std::invalid_argument("Design: size mismatch");
  if (!points.allFinite() || !responses.allFinite()) {
    throw std::invalid_argument("Design: non-finite entries");
  }
  if (!infill.empty() && infill.size() != static_cast<std::size_t>(points.rows())) {
    throw std::invalid_argument("Design: provenance tag size mismatch");
  }
}

void Design::append(const Eigen::VectorXd& psi, double response, bool is_infill) {
  if (points.rows() > 0 && psi.size() != points.cols()) {
    throw std::invalid_argument("Design::append: dimension mismatch");
  }
  if (infill.empty() && points.rows() > 0) infill.assign(points.rows(), false);
  points.conservativeResize(points.rows() + 1, psi.size());
  points.row(points.rows() - 1) = psi.transpose();
  responses.conservativeResize(responses.size() + 1);
  responses(responses.size() - 1) = response;
  infill.push_back(is_infill);
}

DomainTransform DomainTransform::from_box(const Eigen::VectorXd& lo, const Eigen::VectorXd& hi) {
  if (lo.size() != hi.size() || lo.size() == 0) {
    throw std::invalid_argument("DomainTransform: bad box");
  }
  for (Eigen::Index d = 0; d < lo.size(); ++d) {
    if (!(hi(d) > lo(d))) throw std::invalid_argument("DomainTransform: empty box side");
  }
  return DomainTransform{lo, hi};
}

DomainTransform DomainTransform::identity(int dims) {
  return DomainTransform{Eigen::VectorXd::Zero(dims), Eigen::VectorXd::Ones(dims)};
}

Eigen::MatrixXd DomainTransform::to_unit(const Eigen::MatrixXd& pts) const {
  if (pts.cols() != lo.size()) throw std::invalid_argument("DomainTransform: dimension mismatch");
  return (pts.rowwise() - lo.transpose()).array().rowwise() / range().transpose().array();
}

std::string to_string(NoiseMode m) {
  switch (m) {
    case NoiseMode::Interpolating: return "interpolating";
    case NoiseMode::Homoskedastic: return "homoskedastic";
    case NoiseMode::Heteroskedastic: return "heteroskedastic";
  }
  return "?";
}

NoiseSpec NoiseSpec::homoskedastic(double g2) {
  if (g2 < 0.0) throw std::invalid_argument("NoiseSpec: gamma^2 must be nonnegative");
  NoiseSpec s;
  s.mode = NoiseMode::Homoskedastic;
  s.gamma2 = g2;
  return s;
}

NoiseSpec NoiseSpec::heteroskedastic(Eigen::VectorXd gamma_tilde_sd, double floor_sd,
                                     std::shared_ptr<const GpFit> residual_fit, int q) {
  NoiseSpec s;
  s.mode = NoiseMode::Heteroskedastic;
  s.gamma_tilde = std::move(gamma_tilde_sd);
  s.floor_sd = floor_sd;
  s.residual_fit = std::move(residual_fit);
  s.q = q;
  s.validate(static_cast<int>(s.gamma_tilde.size()));
  return s;
}

Eigen::VectorXd NoiseSpec::diagonal(int m) const {
  switch (mode) {
    case NoiseMode::Interpolating: return Eigen::VectorXd::Zero(m);
    case NoiseMode::Homoskedastic: return Eigen::VectorXd::Constant(m, gamma2);
    case NoiseMode::Heteroskedastic:
      if (gamma_tilde.size() != m) {
        throw std::invalid_argument("NoiseSpec: gamma_tilde size does not match design");
      }
      return gamma_tilde.array().square().matrix();
  }
  throw std::logic_error("NoiseSpec: unknown mode");
}

void NoiseSpec::validate(int m) const {
  if (q < 1) throw std::invalid_argument("NoiseSpec: q must be >= 1");
  if (mode == NoiseMode::Homoskedastic && gamma2 < 0.0) {
    throw std::invalid_argument("NoiseSpec: negative gamma^2");
  }
  if (mode == NoiseMode::Heteroskedastic) {
    if (gamma_tilde.size() != m) throw std::invalid_argument("NoiseSpec: gamma_tilde size");
    for (Eigen::Index i = 0; i < gamma_tilde.size(); ++i) {
      if (gamma_tilde(i) < floor_sd - 1e-15 || gamma_tilde(i) < 0.0) {
        throw std::invalid_argument("NoiseSpec: gamma_tilde below floor");
      }
    }
  }
}

namespace {

struct Factorization {
  Eigen::MatrixXd lower;
  double jitter;
};

Factorization factorize(const Eigen::MatrixXd& k_matrix, const Eigen::VectorXd& s_diag,
                        double signal_variance, const std::string& label) {
  Eigen::MatrixXd a = k_matrix;
  a.diagonal() += s_diag;
  CholeskyResult c = cholesky_with_jitter(a, signal_variance, label);
  return {std::move(c.lower), c.jitter};
}

// Profiled GLS prior mean and the log marginal likelihood given L.
struct ProfiledLml {
  double mu0;
  double lml;
};

ProfiledLml profiled_lml(const Eigen::MatrixXd& lower, const Eigen::VectorXd& responses,
                         std::optional<double> fixed_mu0) {
  const Eigen::Index m = responses.size();
  const Eigen::VectorXd w1 =
      lower.triangularView<Eigen::Lower>().solve(Eigen::VectorXd::Ones(m));
  const Eigen::VectorXd wy = lower.triangularView<Eigen::Lower>().solve(responses);
  const double mu0 = fixed_mu0 ? *fixed_mu0 : (w1.dot(wy) / w1.dot(w1));
  const Eigen::VectorXd r = wy - mu0 * w1;
  const double log_det_half = lower.diagonal().array().log().sum();
  const double lml = -0.5 * r.dot(r) - log_det_half - 0.5 * static_cast<double>(m) * kLog2Pi;
  return {mu0, lml};
}

}  // namespace

double log_marginal_likelihood(const Design& design, double mu0, const KernelSpec& spec,
                               const NoiseSpec& noise) {
  design.validate();
  spec.validate();
  const Eigen::MatrixXd k = kernel_matrix(spec, design.points);
  const Factorization f =
      factorize(k, noise.diagonal(design.size()), spec.signal_variance, "K+S");
  return profiled_lml(f.lower, design.responses, mu0).lml;
}

GpFit make_gp_fit(const Design& design, const KernelSpec& spec, const NoiseSpec& noise,
                  const DomainTransform& transform, std::optional<double> mu0) {
  design.validate();
  spec.validate();
  noise.validate(design.size());
  const Eigen::MatrixXd k = kernel_matrix(spec, design.points);
  Factorization f = factorize(k, noise.diagonal(design.size()), spec.signal_variance, "K+S");
  ProfiledLml p = profiled_lml(f.lower, design.responses, mu0);

  GpFit fit;
  fit.kernel = spec;
  fit.noise = noise;
  fit.prior_mean = p.mu0;
  fit.design = design;
  fit.transform = transform;
  fit.chol_lower = std::move(f.lower);
  fit.jitter = f.jitter;
  fit.log_marginal_likelihood = p.lml;
  const Eigen::VectorXd centered =
      design.responses - Eigen::VectorXd::Constant(design.size(), p.mu0);
  fit.dual_weights = fit.chol_lower.triangularView<Eigen::Lower>().transpose().solve(
      fit.chol_lower.triangularView<Eigen::Lower>().solve(centered));
  return fit;
}

namespace {

struct StandardizedTargets {
  Eigen::VectorXd values;
  double center;
  double scale;
};

StandardizedTargets standardize(const Eigen::VectorXd& y) {
  const double c = y.mean();
  double ss = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) ss += (y(i) - c) * (y(i) - c);
  double s = std::sqrt(ss / static_cast<double>(y.size()));
  if (!(s > 0.0)) s = 1.0;
  return {(y.array() - c).matrix() / s, c, s};
}

double log_lognormal_density(double x, const LogNormalPrior& p) {
  const double z = (std::log(x) - p.log_mean) / p.log_sd;
  return -std::log(x) - std::log(p.log_sd) - 0.5 * std::log(2.0 * 3.14159265358979323846) -
         0.5 * z * z;
}

}  // namespace

GpFit fit_hyperparams(const Design& design, const DomainTransform& transform,
                      const FitOptions& options) {
  design.validate();
  const int dims = design.dims();
  const int m = design.size();
  if (options.prior.empty() && m < 2) {
    throw std::invalid_argument("fit_hyperparams: empirical Bayes needs m >= 2");
  }
  if (options.mode == NoiseMode::Heteroskedastic && !options.fixed_noise_sd) {
    throw std::invalid_argument("fit_hyperparams: heteroskedastic mode needs fixed noise");
  }
  if (!options.prior.theta.empty() && options.prior.theta.size() != 1 &&
      options.prior.theta.size() != static_cast<std::size_t>(dims)) {
    throw std::invalid_argument("fit_hyperparams: theta prior size mismatch");
  }

  const Eigen::MatrixXd unit_points = transform.to_unit(design.points);
  const StandardizedTargets std_y = standardize(design.responses);
  Design unit_design{unit_points, std_y.values, design.infill};

  const bool free_noise = options.mode == NoiseMode::Homoskedastic;
  const int n_params = dims + 1 + (free_noise ? 1 : 0);

  Eigen::VectorXd fixed_s_std;  // heteroskedastic S diagonal on the standardized scale
  if (options.mode == NoiseMode::Heteroskedastic) {
    fixed_s_std = (options.fixed_noise_sd->array() / std_y.scale).square().matrix();
  }

  Eigen::VectorXd lb(n_params), ub(n_params);
  for (int d = 0; d < dims; ++d) {
    lb(d) = std::log(options.theta_lo);
    ub(d) = std::log(options.theta_hi);
  }
  lb(dims) = std::log(options.sig2_lo);
  ub(dims) = std::log(options.sig2_hi);
  if (free_noise) {
    lb(dims + 1) = std::log(options.noise2_lo);
    ub(dims + 1) = std::log(options.noise2_hi);
  }

  // Prior terms are stated on the original response scale; shift them onto
  // the standardized scale (log-normal is closed under scaling).
  const double log_scale2 = 2.0 * std::log(std_y.scale);
  std::vector<LogNormalPrior> theta_prior;
  if (!options.prior.theta.empty()) {
    for (int d = 0; d < dims; ++d) {
      theta_prior.push_back(options.prior.theta.size() == 1 ? options.prior.theta[0]
                                                            : options.prior.theta[d]);
    }
  }
  std::optional<LogNormalPrior> sig2_prior = options.prior.signal_variance;
  if (sig2_prior) sig2_prior->log_mean -= log_scale2;
  std::optional<LogNormalPrior> noise2_prior = options.prior.noise_variance;
  if (noise2_prior) noise2_prior->log_mean -= log_scale2;

  const auto objective = [&](const Eigen::VectorXd& z) -> double {
    Eigen::VectorXd zc = z.cwiseMax(lb).cwiseMin(ub);
    const double penalty = 1e3 * (z - zc).squaredNorm();

    KernelSpec spec;
    spec.family = options.family;
    spec.length_scales = zc.head(dims).array().exp().matrix();
    spec.signal_variance = std::exp(zc(dims));

    Eigen::VectorXd s_diag;
    if (options.mode == NoiseMode::Interpolating) {
      s_diag = Eigen::VectorXd::Zero(m);
    } else if (free_noise) {
      s_diag = Eigen::VectorXd::Constant(m, std::exp(zc(dims + 1)));
    } else {
      s_diag = fixed_s_std;
    }

    double value;
    try {
      const Eigen::MatrixXd k = kernel_matrix(spec, unit_points);
      const Factorization f = factorize(k, s_diag, spec.signal_variance, "K+S");
      value = profiled_lml(f.lower, std_y.values, std::nullopt).lml;
    } catch (const NumericalError&) {
      return 1e100;
    }
    for (int d = 0; d < dims && !theta_prior.empty(); ++d) {
      value += log_lognormal_density(spec.length_scales(d), theta_prior[d]);
    }
    if (sig2_prior) value += log_lognormal_density(spec.signal_variance, *sig2_prior);
    if (free_noise && noise2_prior) {
      value += log_lognormal_density(std::exp(zc(dims + 1)), *noise2_prior);
    }
    return -value + penalty;
  };

  // Start list: warm start, a default center (at prior modes when present),
  // then scrambled log-uniform draws from a fixed internal stream so the fit
  // is a pure function of its inputs.
  std::vector<Eigen::VectorXd> starts;
  if (options.warm_start && options.warm_start->size() == n_params) {
    starts.push_back(*options.warm_start);
  }
  {
    Eigen::VectorXd z0(n_params);
    for (int d = 0; d < dims; ++d) {
      z0(d) = theta_prior.empty() ? std::log(0.25) : theta_prior[d].log_mean;
    }
    z0(dims) = sig2_prior ? sig2_prior->log_mean : 0.0;
    if (free_noise) z0(dims + 1) = noise2_prior ? noise2_prior->log_mean : std::log(0.05);
    starts.push_back(z0.cwiseMax(lb).cwiseMin(ub));
  }
  Rng scramble(0xD7C0FFEEULL);
  while (static_cast<int>(starts.size()) < options.n_starts) {
    Eigen::VectorXd z0(n_params);
    for (int d = 0; d < dims; ++d) z0(d) = scramble.uniform(std::log(5e-3), std::log(2.0));
    z0(dims) = scramble.uniform(std::log(0.05), std::log(20.0));
    if (free_noise) z0(dims + 1) = scramble.uniform(std::log(1e-4), std::log(1.0));
    starts.push_back(z0);
  }

  FitDiagnostics diag;
  diag.used_prior = !options.prior.empty();
  std::optional<Eigen::VectorXd> best_z;
  double best_obj = std::numeric_limits<double>::infinity();
  SimplexOptions nm;
  nm.max_iter = options.max_iter_per_start;
  nm.initial_step = 0.5;
  for (const Eigen::VectorXd& z0 : starts) {
    const double f0 = objective(z0);
    SimplexResult r = nelder_mead(objective, z0, nm);
    diag.starts.push_back({z0, -f0, -r.value});
    if (r.value < best_obj) {
      best_obj = r.value;
      best_z = r.x;
    }
  }
  if (!best_z || !std::isfinite(best_obj) || best_obj >= 1e99) {
    std::ostringstream msg;
    msg << "fit_hyperparams: no start produced a finite objective (m=" << m
        << ", mode=" << to_string(options.mode) << ")";
    if (best_z) {
      msg << "; best-seen log-parameters:";
      for (int i = 0; i < n_params; ++i) msg << ' ' << (*best_z)(i);
    }
    throw FitError(msg.str());
  }

  const Eigen::VectorXd zc = best_z->cwiseMax(lb).cwiseMin(ub);
  KernelSpec spec;
  spec.family = options.family;
  // Report length scales in index units: theta_d = theta_unit_d * range_d.
  spec.length_scales =
      (zc.head(dims).array().exp() * transform.range().array()).matrix();
  spec.signal_variance = std::exp(zc(dims)) * std_y.scale * std_y.scale;

  NoiseSpec noise;
  if (options.mode == NoiseMode::Interpolating) {
    noise = NoiseSpec::interpolating();
  } else if (free_noise) {
    noise = NoiseSpec::homoskedastic(std::exp(zc(dims + 1)) * std_y.scale * std_y.scale);
  } else {
    noise.mode = NoiseMode::Heteroskedastic;
    noise.gamma_tilde = *options.fixed_noise_sd;
  }

  GpFit fit = make_gp_fit(design, spec, noise, transform);
  diag.best_objective = -best_obj;
  fit.diagnostics = std::move(diag);
  return fit;
}

Eigen::VectorXd warm_start_from(const GpFit& fit) {
  const int dims = fit.design.dims();
  const bool free_noise = fit.noise.mode == NoiseMode::Homoskedastic;
  Eigen::VectorXd z(dims + 1 + (free_noise ? 1 : 0));
  const StandardizedTargets std_y = standardize(fit.design.responses);
  const Eigen::VectorXd range = fit.transform.range();
  for (int d = 0; d < dims; ++d) {
    z(d) = std::log(std::max(fit.kernel.length_scales(d) / range(d), 1e-12));
  }
  z(dims) = std::log(std::max(fit.kernel.signal_variance / (std_y.scale * std_y.scale), 1e-12));
  if (free_noise) {
    z(dims + 1) = std::log(std::max(fit.noise.gamma2 / (std_y.scale * std_y.scale), 1e-12));
  }
  return z;
}

double difference_noise_estimate(const Design& design) {
  const int m = design.size();
  const int dims = design.dims();
  if (m < 3) return 0.0;

  double ss = 0.0;
  long n_diffs = 0;
  for (int d = 0; d < dims; ++d) {
    // Group points sharing every coordinate except d into axis lines.
    std::map<std::vector<double>, std::vector<std::pair<double, double>>> lines;
    for (int i = 0; i < m; ++i) {
      std::vector<double> key;
      key.reserve(dims - 1);
      for (int dd = 0; dd < dims; ++dd)
        if (dd != d) key.push_back(design.points(i, dd));
      lines[key].push_back({design.points(i, d), design.responses(i)});
    }
    for (auto& [key, line] : lines) {
      if (line.size() < 3) continue;
      std::sort(line.begin(), line.end());
      for (std::size_t i = 2; i < line.size(); ++i) {
        const double d2 = line[i].second - 2.0 * line[i - 1].second + line[i - 2].second;
        ss += d2 * d2 / 6.0;
        ++n_diffs;
      }
    }
  }
  if (n_diffs == 0) {
    // No axis line long enough: fall back to nearest-neighbor first differences.
    for (int i = 0; i < m; ++i) {
      double best = std::numeric_limits<double>::infinity();
      int jbest = -1;
      for (int j = 0; j < m; ++j) {
        if (j == i) continue;
        const double dist = (design.points.row(i) - design.points.row(j)).squaredNorm();
        if (dist < best) {
          best = dist;
          jbest = j;
        }
      }
      const double d1 = design.responses(i) - design.responses(jbest);
      ss += d1 * d1 / 2.0;
      ++n_diffs;
    }
  }
  return n_diffs > 0 ? ss / static_cast<double>(n_diffs) : 0.0;
}

PosteriorMoments posterior_f(const GpFit& fit, const Eigen::MatrixXd& queries,
                             bool want_covariance) {
  if (queries.cols() != fit.design.dims()) {
    throw std::invalid_argument("posterior_f: query dimension mismatch");
  }
  const Eigen::MatrixXd k_star = cross_kernel_matrix(fit.kernel, queries, fit.design.points);
  PosteriorMoments out;
  out.mean = Eigen::VectorXd::Constant(queries.rows(), fit.prior_mean) +
             k_star * fit.dual_weights;
  const Eigen::MatrixXd w =
      fit.chol_lower.triangularView<Eigen::Lower>().solve(k_star.transpose());
  out.variance = (Eigen::VectorXd::Constant(queries.rows(), fit.kernel.signal_variance) -
                  w.colwise().squaredNorm().transpose())
                     .cwiseMax(0.0);
  if (want_covariance) {
    Eigen::MatrixXd cov = cross_kernel_matrix(fit.kernel, queries, queries) - w.transpose() * w;
    cov = 0.5 * (cov + cov.transpose());  // symmetrize
    out.covariance = std::move(cov);
  }
  return out;
}

Eigen::VectorXd predict_noise_sd(const GpFit& fit, const Eigen::MatrixXd& queries) {
  switch (fit.noise.mode) {
    case NoiseMode::Interpolating: return Eigen::VectorXd::Zero(queries.rows());
    case NoiseMode::Homoskedastic:
      return Eigen::VectorXd::Constant(queries.rows(), std::sqrt(fit.noise.gamma2));
    case NoiseMode::Heteroskedastic: {
      if (fit.noise.fallback || !fit.noise.residual_fit) {
        const double level = fit.noise.gamma_tilde.size() > 0
                                 ? fit.noise.gamma_tilde.mean()
                                 : fit.noise.floor_sd;
        return Eigen::VectorXd::Constant(queries.rows(), std::max(level, fit.noise.floor_sd));
      }
      const double s1 = std::sqrt(3.14159265358979323846 / 2.0);
      const Eigen::VectorXd mu_e = posterior_f(*fit.noise.residual_fit, queries).mean;
      return (s1 * mu_e.array()).max(fit.noise.floor_sd).matrix();
    }
  }
  throw std::logic_error("predict_noise_sd: unknown mode");
}

PosteriorMoments posterior_v(const GpFit& fit, const Eigen::MatrixXd& queries,
                             const std::optional<Eigen::VectorXd>& noise2) {
  Eigen::VectorXd g2;
  if (noise2) {
    if (noise2->size() != queries.rows()) {
      throw std::invalid_argument("posterior_v: noise vector size mismatch");
    }
    if ((noise2->array() < 0.0).any()) {
      throw std::invalid_argument("posterior_v: negative noise variance");
    }
    g2 = *noise2;
  } else {
    g2 = predict_noise_sd(fit, queries).array().square().matrix();
  }
  PosteriorMoments out = posterior_f(fit, queries);
  out.variance += g2;
  return out;
}

Eigen::MatrixXd sample_posterior_paths(const GpFit& fit, const Eigen::MatrixXd& grid, int n_paths,
                                       Rng& rng) {
  if (n_paths < 1) throw std::invalid_argument("sample_posterior_paths: n_paths >= 1");
  const PosteriorMoments post = posterior_f(fit, grid, /*want_covariance=*/true);
  const CholeskyResult c = cholesky_with_jitter(*post.covariance, fit.kernel.signal_variance,
                                                "posterior covariance");
  const Eigen::Index g = grid.rows();
  Eigen::MatrixXd paths(n_paths, g);
  Eigen::VectorXd z(g);
  for (int p = 0; p < n_paths; ++p) {
    for (Eigen::Index i = 0; i < g; ++i) z(i) = rng.normal();
    paths.row(p) = (post.mean + c.lower * z).transpose();
  }
  return paths;
}

}  // namespace dtrgp

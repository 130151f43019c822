#include "dtrgp/bo.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "dtrgp/errors.hpp"
#include "dtrgp/nelder_mead.hpp"
#include "dtrgp/stats.hpp"

namespace dtrgp {

std::string to_string(GpType t) {
  switch (t) {
    case GpType::Int: return "int";
    case GpType::HM: return "hm";
    case GpType::HE: return "he";
  }
  return "?";
}

GpType gp_type_from_string(const std::string& s) {
  if (s == "int" || s == "Int") return GpType::Int;
  if (s == "hm" || s == "HM") return GpType::HM;
  if (s == "he" || s == "HE") return GpType::HE;
  throw std::invalid_argument("unknown gp type: " + s + " (expected int, hm, or he)");
}

int default_grid_resolution(int dims) {
  if (dims <= 1) return 512;
  if (dims == 2) return 101;
  return static_cast<int>(std::floor(std::pow(16384.0, 1.0 / dims)));
}

namespace {

Eigen::VectorXi resolve_grid(const BoConfig& config, int dims) {
  Eigen::VectorXi res = config.grid_resolution;
  if (res.size() == 0) res = Eigen::VectorXi::Zero(dims);
  if (res.size() != dims) throw std::invalid_argument("BoConfig: grid resolution size mismatch");
  long total = 1;
  for (int d = 0; d < dims; ++d) {
    if (res(d) <= 0) res(d) = default_grid_resolution(dims);
    if (res(d) < 2) res(d) = 2;
    total *= res(d);
  }
  while (total > 16384) {  // cap; trim the finest dimension first
    int dmax = 0;
    for (int d = 1; d < dims; ++d)
      if (res(d) > res(dmax)) dmax = d;
    total /= res(dmax);
    res(dmax) = std::max(2, res(dmax) / 2);
    total *= res(dmax);
  }
  return res;
}

// Lexicographically ordered full-factorial grid over the box.
Eigen::MatrixXd make_grid(const DomainTransform& box, const Eigen::VectorXi& res) {
  const int dims = box.dims();
  long total = 1;
  for (int d = 0; d < dims; ++d) total *= res(d);
  Eigen::MatrixXd grid(total, dims);
  std::vector<std::vector<double>> axes(dims);
  for (int d = 0; d < dims; ++d) {
    axes[d].resize(res(d));
    for (int i = 0; i < res(d); ++i) {
      axes[d][i] = box.lo(d) + (box.hi(d) - box.lo(d)) * static_cast<double>(i) /
                                   static_cast<double>(res(d) - 1);
    }
  }
  std::vector<int> idx(dims, 0);
  for (long r = 0; r < total; ++r) {
    for (int d = 0; d < dims; ++d) grid(r, d) = axes[d][idx[d]];
    for (int d = dims - 1; d >= 0; --d) {  // dim 0 slowest: rows come out lex ascending
      if (++idx[d] < res(d)) break;
      idx[d] = 0;
    }
  }
  return grid;
}

bool within_delta(const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                  const Eigen::VectorXd& range, double delta_rel) {
  for (Eigen::Index d = 0; d < a.size(); ++d) {
    if (std::abs(a(d) - b(d)) / range(d) >= delta_rel) return false;
  }
  return true;
}

bool excluded_point(const Eigen::VectorXd& psi, const std::vector<Eigen::VectorXd>& exclude,
                    const Eigen::VectorXd& range, double delta_rel) {
  for (const auto& e : exclude) {
    if (within_delta(psi, e, range, delta_rel)) return true;
  }
  return false;
}

}  // namespace

GpFit reinterpolate(const GpFit& fit, const Design& design) {
  if (fit.noise.mode == NoiseMode::Interpolating) return fit;
  Design predicted = design;
  predicted.responses = posterior_f(fit, design.points).mean;
  return make_gp_fit(predicted, fit.kernel, NoiseSpec::interpolating(), fit.transform,
                     fit.prior_mean);
}

double expected_improvement(double mu, double variance, double baseline) {
  const double sigma = std::sqrt(std::max(variance, 0.0));
  if (!(sigma > 0.0)) return 0.0;
  const double d = mu - baseline;
  const double z = d / sigma;
  return std::max(d * normal_cdf(z) + sigma * normal_pdf(z), 0.0);
}

Proposal propose_next(const GpFit& fit_for_ei, double baseline,
                      const std::vector<Eigen::VectorXd>& exclude, const DomainTransform& box,
                      const BoConfig& config) {
  const int dims = box.dims();
  const Eigen::VectorXi res = resolve_grid(config, dims);
  const Eigen::MatrixXd grid = make_grid(box, res);
  const Eigen::VectorXd range = box.range();

  const PosteriorMoments post = posterior_f(fit_for_ei, grid);

  long best_idx = -1;
  double best_ei = -1.0;
  for (long i = 0; i < grid.rows(); ++i) {
    if (excluded_point(grid.row(i).transpose(), exclude, range, config.delta_min_rel)) continue;
    const double ei = expected_improvement(post.mean(i), post.variance(i), baseline);
    if (ei > best_ei) {
      best_ei = ei;
      best_idx = i;
    }
  }
  if (best_idx < 0) {
    throw SaturationError("propose_next: every candidate lies within delta_min of the design");
  }

  Proposal prop{grid.row(best_idx).transpose(), best_ei};

  // One local refinement in unit coordinates, started at the grid argmax.
  const auto neg_ei = [&](const Eigen::VectorXd& u) -> double {
    Eigen::VectorXd uc = u.cwiseMax(0.0).cwiseMin(1.0);
    const double penalty = 1e3 * (u - uc).squaredNorm();
    Eigen::MatrixXd q(1, dims);
    q.row(0) = (box.lo + uc.cwiseProduct(range)).transpose();
    const PosteriorMoments p = posterior_f(fit_for_ei, q);
    return -expected_improvement(p.mean(0), p.variance(0), baseline) + penalty;
  };
  Eigen::VectorXd u0 = (prop.psi - box.lo).cwiseQuotient(range);
  SimplexOptions opt;
  opt.max_iter = 60;
  opt.initial_step = 0.5 / static_cast<double>(res.maxCoeff());
  const SimplexResult r = nelder_mead(neg_ei, u0, opt);
  if (-r.value > prop.ei) {
    Eigen::VectorXd refined =
        box.lo + r.x.cwiseMax(0.0).cwiseMin(1.0).cwiseProduct(range);
    if (!excluded_point(refined, exclude, range, config.delta_min_rel)) {
      prop.psi = refined;
      prop.ei = -r.value;
    }
  }
  return prop;
}

namespace {

struct LoopFitter {
  const DomainTransform& box;
  const BoConfig& config;
  HyperPrior prior;
  std::optional<Eigen::VectorXd> warm;

  GpFit fit(const Design& design) {
    if (config.gp_type == GpType::Int) {
      FitOptions opt;
      opt.family = config.family;
      opt.mode = NoiseMode::Interpolating;
      opt.prior = prior;
      opt.warm_start = warm;
      GpFit f = fit_hyperparams(design, box, opt);
      warm = warm_start_from(f);
      return f;
    }
    if (config.gp_type == GpType::HM) {
      FitOptions opt;
      opt.family = config.family;
      opt.mode = NoiseMode::Homoskedastic;
      opt.prior = prior;
      opt.warm_start = warm;
      GpFit f = fit_hyperparams(design, box, opt);
      warm = warm_start_from(f);
      return f;
    }
    HeteroOptions opt;
    opt.family = config.family;
    opt.max_iter = config.hetero_max_iter;
    opt.tol = config.hetero_tol;
    opt.mean_prior = prior;
    if (warm) opt.warm_start = warm;
    GpFit f = fit_hetero_gp(design, box, opt);
    warm = warm_start_from(f);
    if (warm->size() == design.dims() + 1) {
      // Hetero warm starts feed the homoskedastic first pass of the next
      // iteration; extend with a neutral nugget entry.
      Eigen::VectorXd w(warm->size() + 1);
      w << *warm, std::log(0.05);
      warm = w;
    }
    return f;
  }
};

struct IncumbentScanner {
  Eigen::MatrixXd grid;

  std::pair<Eigen::VectorXd, double> scan(const GpFit& fit) const {
    const PosteriorMoments post = posterior_f(fit, grid);
    long best = 0;
    for (long i = 1; i < grid.rows(); ++i) {
      if (post.mean(i) > post.mean(best)) best = i;
    }
    return {grid.row(best).transpose(), post.mean(best)};
  }
};

}  // namespace

BoTrace run_bo(const Evaluator& evaluate, const Design& initial_design,
               const DomainTransform& box, const BoConfig& config, const FitObserver& observer) {
  initial_design.validate();
  if (config.budget < 0) throw std::invalid_argument("run_bo: budget must be >= 0");

  Design design = initial_design;
  if (design.infill.empty()) design.infill.assign(design.size(), false);

  BoTrace trace;
  trace.estimator_evaluations = design.size();
  for (int i = 0; i < design.size(); ++i) {
    BoRecord rec;
    rec.iteration = 0;
    rec.psi = design.points.row(i).transpose();
    rec.response = design.responses(i);
    trace.records.push_back(std::move(rec));
  }

  LoopFitter fitter{box, config, config.prior, std::nullopt};
  if (config.gp_type != GpType::Int && config.auto_noise_prior &&
      !fitter.prior.noise_variance) {
    const double rice = difference_noise_estimate(initial_design);
    if (rice > 0.0) {
      // Width matched to the sampling spread of the difference estimator.
      fitter.prior.noise_variance = LogNormalPrior{std::log(rice), 0.6};
    }
  }

  const Eigen::VectorXi res = resolve_grid(config, box.dims());
  const IncumbentScanner scanner{make_grid(box, res)};

  GpFit fit = fitter.fit(design);
  if (observer) observer(0, fit);
  {
    auto [psi, value] = scanner.scan(fit);
    trace.incumbent_by_infill.push_back(psi);
    trace.incumbent_value_by_infill.push_back(value);
    for (auto& rec : trace.records) {
      rec.incumbent_psi = psi;
      rec.incumbent_value = value;
    }
  }

  const EiBaseline baseline_mode = config.baseline.value_or(
      config.gp_type == GpType::Int ? EiBaseline::ObservedMax : EiBaseline::ReinterpolatedMax);

  std::vector<Eigen::VectorXd> exclusion;
  exclusion.reserve(design.size() + config.budget);
  for (int i = 0; i < design.size(); ++i) exclusion.push_back(design.points.row(i).transpose());

  int plateau_run = 0;
  for (int k = 1; k <= config.budget; ++k) {
    const GpFit fit_ei = config.gp_type == GpType::Int ? fit : reinterpolate(fit, design);
    const double baseline = baseline_mode == EiBaseline::ObservedMax
                                ? design.responses.maxCoeff()
                                : fit_ei.design.responses.maxCoeff();

    Proposal prop = propose_next(fit_ei, baseline, exclusion, box, config);
    std::optional<double> value = evaluate(prop.psi);
    ++trace.estimator_evaluations;
    if (!value) {
      trace.failed_points.push_back(prop.psi);
      exclusion.push_back(prop.psi);
      prop = propose_next(fit_ei, baseline, exclusion, box, config);
      value = evaluate(prop.psi);
      ++trace.estimator_evaluations;
      if (!value) {
        trace.failed_points.push_back(prop.psi);
        exclusion.push_back(prop.psi);
        continue;  // iteration consumed; no point accepted
      }
    }

    design.append(prop.psi, *value, /*is_infill=*/true);
    exclusion.push_back(prop.psi);

    fit = fitter.fit(design);
    if (observer) observer(static_cast<int>(trace.incumbent_by_infill.size()), fit);
    auto [psi, incumbent_value] = scanner.scan(fit);
    trace.incumbent_by_infill.push_back(psi);
    trace.incumbent_value_by_infill.push_back(incumbent_value);

    BoRecord rec;
    rec.iteration = k;
    rec.psi = prop.psi;
    rec.response = *value;
    rec.max_ei = prop.ei;
    rec.incumbent_psi = psi;
    rec.incumbent_value = incumbent_value;
    trace.records.push_back(std::move(rec));

    if (config.ei_plateau_eps) {
      plateau_run = prop.ei < *config.ei_plateau_eps ? plateau_run + 1 : 0;
      if (plateau_run >= config.ei_plateau_patience) break;
    }
  }
  return trace;
}

}  // namespace dtrgp

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <set>

#include "dtrgp/errors.hpp"
#include "dtrgp/gp.hpp"
#include "dtrgp/kernels.hpp"

using namespace dtrgp;
using Catch::Approx;

namespace {

Eigen::VectorXd vec1(double x) {
  Eigen::VectorXd v(1);
  v << x;
  return v;
}

Design one_point_design(double psi, double response) {
  Design d;
  d.points.resize(1, 1);
  d.points << psi;
  d.responses.resize(1);
  d.responses << response;
  return d;
}

KernelSpec unit_kernel(double theta = 1.0, double sig2 = 1.0) {
  KernelSpec spec;
  spec.family = KernelFamily::Matern52;
  spec.length_scales = vec1(theta);
  spec.signal_variance = sig2;
  return spec;
}

// Draw a design from a known GP: responses = L z with K = k(theta) + g2 I.
Design simulate_gp(const Eigen::MatrixXd& pts, const KernelSpec& spec, double g2, Rng& rng) {
  Eigen::MatrixXd k = kernel_matrix(spec, pts);
  k.diagonal().array() += g2;
  const CholeskyResult c = cholesky_with_jitter(k, spec.signal_variance, "sim");
  Eigen::VectorXd z(pts.rows());
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = rng.normal();
  Design d;
  d.points = pts;
  d.responses = c.lower * z;
  return d;
}

}  // namespace

TEST_CASE("log marginal likelihood closed forms for a single observation") {
  const Design d = one_point_design(0.3, 0.0);
  const DomainTransform t = DomainTransform::identity(1);
  (void)t;
  CHECK(log_marginal_likelihood(d, 0.0, unit_kernel(), NoiseSpec::interpolating()) ==
        Approx(-0.9189385332046727).margin(1e-8));
  CHECK(log_marginal_likelihood(d, 0.0, unit_kernel(), NoiseSpec::homoskedastic(3.0)) ==
        Approx(-1.612085713764618).margin(1e-8));
}

TEST_CASE("log marginal likelihood is invariant to design permutation") {
  Rng rng(11);
  Eigen::MatrixXd pts(6, 1);
  pts << 0.05, 0.2, 0.4, 0.55, 0.8, 0.95;
  Design d = simulate_gp(pts, unit_kernel(0.3), 0.05, rng);
  const double base = log_marginal_likelihood(d, 0.1, unit_kernel(0.4), NoiseSpec::homoskedastic(0.02));
  // Reverse the rows.
  Design rev = d;
  rev.points = d.points.colwise().reverse().eval();
  rev.responses = d.responses.reverse().eval();
  CHECK(log_marginal_likelihood(rev, 0.1, unit_kernel(0.4), NoiseSpec::homoskedastic(0.02)) ==
        Approx(base).epsilon(1e-10));
}

TEST_CASE("posterior_f single-point closed forms") {
  const DomainTransform t = DomainTransform::identity(1);
  Eigen::MatrixXd query(1, 1);
  query << 0.3;

  SECTION("interpolation at the sample point") {
    const GpFit fit =
        make_gp_fit(one_point_design(0.3, 2.0), unit_kernel(), NoiseSpec::interpolating(), t, 0.0);
    const PosteriorMoments p = posterior_f(fit, query);
    CHECK(p.mean(0) == Approx(2.0).margin(1e-6));
    CHECK(p.variance(0) <= 10.0 * fit.jitter);
  }

  SECTION("noisy single point shrinks halfway") {
    const GpFit fit =
        make_gp_fit(one_point_design(0.3, 2.0), unit_kernel(), NoiseSpec::homoskedastic(1.0), t, 0.0);
    const PosteriorMoments p = posterior_f(fit, query);
    CHECK(p.mean(0) == Approx(1.0).margin(1e-8));
    CHECK(p.variance(0) == Approx(0.5).margin(1e-8));
  }

  SECTION("far queries revert to the prior") {
    const GpFit fit =
        make_gp_fit(one_point_design(0.3, 2.0), unit_kernel(0.05), NoiseSpec::interpolating(), t, -0.7);
    Eigen::MatrixXd far(1, 1);
    far << 0.3 + 50.0;
    const PosteriorMoments p = posterior_f(fit, far);
    CHECK(p.mean(0) == Approx(-0.7).margin(1e-6));
    CHECK(p.variance(0) == Approx(1.0).margin(1e-6));
  }
}

TEST_CASE("posterior_v adds the observation noise exactly") {
  const DomainTransform t = DomainTransform::identity(1);
  Eigen::MatrixXd query(1, 1);
  query << 0.3;

  SECTION("noise-free case reduces to posterior_f") {
    const GpFit fit =
        make_gp_fit(one_point_design(0.3, 2.0), unit_kernel(), NoiseSpec::interpolating(), t, 0.0);
    const PosteriorMoments p = posterior_v(fit, query);
    CHECK(p.mean(0) == Approx(2.0).margin(1e-6));
    CHECK(p.variance(0) <= 10.0 * fit.jitter);
  }

  SECTION("single noisy point with unit query noise") {
    const GpFit fit =
        make_gp_fit(one_point_design(0.3, 2.0), unit_kernel(), NoiseSpec::homoskedastic(1.0), t, 0.0);
    const PosteriorMoments p = posterior_v(fit, query, Eigen::VectorXd::Ones(1));
    CHECK(p.mean(0) == Approx(1.0).margin(1e-8));
    CHECK(p.variance(0) == Approx(1.5).margin(1e-8));
  }

  SECTION("far query: prior reversion plus noise") {
    const GpFit fit =
        make_gp_fit(one_point_design(0.3, 2.0), unit_kernel(0.05), NoiseSpec::interpolating(), t, 0.0);
    Eigen::MatrixXd far(1, 1);
    far << 60.0;
    const PosteriorMoments p = posterior_v(fit, far, vec1(0.2));
    CHECK(p.mean(0) == Approx(0.0).margin(1e-6));
    CHECK(p.variance(0) == Approx(1.2).margin(1e-6));
  }

  SECTION("negative query noise is rejected") {
    const GpFit fit =
        make_gp_fit(one_point_design(0.3, 2.0), unit_kernel(), NoiseSpec::interpolating(), t, 0.0);
    CHECK_THROWS_AS(posterior_v(fit, query, vec1(-0.1)), std::invalid_argument);
  }
}

TEST_CASE("properties: interpolation, shrinkage, variance decomposition") {
  Rng rng(42);
  Eigen::MatrixXd pts(9, 1);
  for (int i = 0; i < 9; ++i) pts(i, 0) = i / 8.0;
  const DomainTransform t = DomainTransform::identity(1);
  Design d = simulate_gp(pts, unit_kernel(0.35, 1.2), 0.0, rng);

  SECTION("interpolating fits reproduce every design response") {
    const GpFit fit = make_gp_fit(d, unit_kernel(0.35, 1.2), NoiseSpec::interpolating(), t);
    const PosteriorMoments p = posterior_f(fit, d.points);
    for (int i = 0; i < d.size(); ++i) {
      CHECK(p.mean(i) == Approx(d.responses(i)).margin(1e-6));
      CHECK(p.variance(i) <= 10.0 * fit.jitter);
    }
  }

  SECTION("huge noise shrinks the posterior mean to mu0") {
    const GpFit fit = make_gp_fit(d, unit_kernel(0.35, 1.2), NoiseSpec::homoskedastic(1e8), t, 0.4);
    Eigen::MatrixXd q(3, 1);
    q << 0.1, 0.5, 0.9;
    const PosteriorMoments p = posterior_f(fit, q);
    for (int i = 0; i < 3; ++i) CHECK(p.mean(i) == Approx(0.4).margin(1e-3));
  }

  SECTION("posterior_v variance minus posterior_f variance equals the query noise") {
    const GpFit fit = make_gp_fit(d, unit_kernel(0.35, 1.2), NoiseSpec::homoskedastic(0.2), t);
    Eigen::MatrixXd q(5, 1);
    q << 0.05, 0.3, 0.55, 0.62, 0.99;
    Eigen::VectorXd g2(5);
    g2 << 0.0, 0.1, 0.2, 0.33, 1.7;
    const PosteriorMoments pf = posterior_f(fit, q);
    const PosteriorMoments pv = posterior_v(fit, q, g2);
    for (int i = 0; i < 5; ++i) {
      CHECK(pv.variance(i) - pf.variance(i) == Approx(g2(i)).margin(1e-15));
      CHECK(pv.mean(i) == pf.mean(i));
    }
  }
}

TEST_CASE("fit_hyperparams beats the generating parameters on simulated data") {
  Rng rng(2024);
  Eigen::MatrixXd pts(60, 1);
  for (int i = 0; i < 60; ++i) pts(i, 0) = rng.uniform(0.0, 1.0);
  const KernelSpec gen = unit_kernel(0.3, 1.0);
  const Design d = simulate_gp(pts, gen, 0.01, rng);
  const DomainTransform t = DomainTransform::identity(1);

  FitOptions opt;
  opt.mode = NoiseMode::Homoskedastic;
  const GpFit fit = fit_hyperparams(d, t, opt);

  const GpFit at_generating = make_gp_fit(d, gen, NoiseSpec::homoskedastic(0.01), t);
  CHECK(fit.log_marginal_likelihood >= at_generating.log_marginal_likelihood - 1e-6);

  // Monotone-likelihood invariant: the returned objective dominates every
  // multi-start seed's initial objective.
  for (const auto& s : fit.diagnostics.starts) {
    CHECK(fit.diagnostics.best_objective >= s.objective0 - 1e-9);
    CHECK(fit.diagnostics.best_objective >= s.objective_final - 1e-9);
  }
}

TEST_CASE("fit_hyperparams profiles a constant response exactly") {
  Design d;
  d.points.resize(4, 1);
  d.points << 0.0, 0.3, 0.6, 1.0;
  d.responses = Eigen::VectorXd::Constant(4, 3.25);
  FitOptions opt;
  opt.mode = NoiseMode::Homoskedastic;
  const GpFit fit = fit_hyperparams(d, DomainTransform::identity(1), opt);
  CHECK(fit.prior_mean == Approx(3.25).margin(1e-9));
}

TEST_CASE("MAP with a degenerate length-scale prior pins theta") {
  Rng rng(5);
  Eigen::MatrixXd pts(12, 1);
  for (int i = 0; i < 12; ++i) pts(i, 0) = i / 11.0;
  const Design d = simulate_gp(pts, unit_kernel(0.25), 0.02, rng);

  FitOptions opt;
  opt.mode = NoiseMode::Homoskedastic;
  opt.prior.theta = {LogNormalPrior{std::log(0.4), 1e-6}};
  const GpFit fit = fit_hyperparams(d, DomainTransform::identity(1), opt);
  CHECK(fit.kernel.length_scales(0) == Approx(0.4).margin(1e-3));
}

TEST_CASE("length scales are reported in index units") {
  // Same data expressed on [0,1] and on [0,10]: theta should scale by 10.
  Rng rng(31);
  Eigen::MatrixXd pts(20, 1);
  for (int i = 0; i < 20; ++i) pts(i, 0) = i / 19.0;
  Design d = simulate_gp(pts, unit_kernel(0.3), 0.01, rng);
  FitOptions opt;
  opt.mode = NoiseMode::Homoskedastic;
  const GpFit narrow = fit_hyperparams(d, DomainTransform::identity(1), opt);

  Design wide = d;
  wide.points *= 10.0;
  const DomainTransform t10 = DomainTransform::from_box(vec1(0.0), vec1(10.0));
  const GpFit scaled = fit_hyperparams(wide, t10, opt);
  CHECK(scaled.kernel.length_scales(0) ==
        Approx(10.0 * narrow.kernel.length_scales(0)).epsilon(1e-6));
  CHECK(scaled.noise.gamma2 == Approx(narrow.noise.gamma2).epsilon(1e-6));
}

TEST_CASE("GpFit factorization and dual weights satisfy their defining systems") {
  Rng rng(77);
  Eigen::MatrixXd pts(15, 1);
  for (int i = 0; i < 15; ++i) pts(i, 0) = rng.uniform(0.0, 1.0);
  const Design d = simulate_gp(pts, unit_kernel(0.4, 2.0), 0.1, rng);
  const GpFit fit = make_gp_fit(d, unit_kernel(0.4, 2.0), NoiseSpec::homoskedastic(0.1),
                                DomainTransform::identity(1));

  Eigen::MatrixXd ks = kernel_matrix(fit.kernel, d.points);
  ks.diagonal().array() += 0.1;
  const Eigen::MatrixXd reconstructed = fit.chol_lower * fit.chol_lower.transpose();
  CHECK((reconstructed - ks).norm() / ks.norm() < 1e-8);

  const Eigen::VectorXd rhs = d.responses.array() - fit.prior_mean;
  const Eigen::VectorXd residual = reconstructed * fit.dual_weights - rhs;
  CHECK(residual.norm() / rhs.norm() < 1e-8);
}

TEST_CASE("posterior paths reproduce the posterior law") {
  Rng rng(99);
  Eigen::MatrixXd pts(6, 1);
  pts << 0.0, 0.2, 0.4, 0.6, 0.8, 1.0;
  const Design d = simulate_gp(pts, unit_kernel(0.4), 0.0, rng);
  const DomainTransform t = DomainTransform::identity(1);

  SECTION("zero-noise paths hit the observed responses at the samples") {
    const GpFit fit = make_gp_fit(d, unit_kernel(0.4), NoiseSpec::interpolating(), t);
    Rng path_rng(1);
    const Eigen::MatrixXd paths = sample_posterior_paths(fit, d.points, 20, path_rng);
    for (int p = 0; p < paths.rows(); ++p) {
      for (int i = 0; i < d.size(); ++i) {
        CHECK(paths(p, i) == Approx(d.responses(i)).margin(1e-3));
      }
    }
  }

  SECTION("Monte-Carlo mean and covariance agree with the posterior") {
    const GpFit fit = make_gp_fit(d, unit_kernel(0.4), NoiseSpec::homoskedastic(0.3), t);
    Eigen::MatrixXd grid(12, 1);
    for (int i = 0; i < 12; ++i) grid(i, 0) = i / 11.0;
    const PosteriorMoments post = posterior_f(fit, grid, /*want_covariance=*/true);

    const int n_paths = 10000;
    Rng path_rng(12345);
    const Eigen::MatrixXd paths = sample_posterior_paths(fit, grid, n_paths, path_rng);

    const Eigen::VectorXd emp_mean = paths.colwise().mean().transpose();
    for (int i = 0; i < 12; ++i) {
      const double mc_se = std::sqrt(post.variance(i) / n_paths);
      CHECK(std::abs(emp_mean(i) - post.mean(i)) <= 3.0 * mc_se + 1e-12);
    }

    Eigen::MatrixXd centered = paths.rowwise() - emp_mean.transpose();
    const Eigen::MatrixXd emp_cov = centered.transpose() * centered / double(n_paths - 1);
    CHECK((emp_cov - *post.covariance).norm() / post.covariance->norm() < 0.10);
  }

  SECTION("path draws are deterministic given the seed") {
    const GpFit fit = make_gp_fit(d, unit_kernel(0.4), NoiseSpec::homoskedastic(0.3), t);
    Rng r1(7), r2(7);
    const Eigen::MatrixXd a = sample_posterior_paths(fit, d.points, 3, r1);
    const Eigen::MatrixXd b = sample_posterior_paths(fit, d.points, 3, r2);
    CHECK(a == b);
  }
}

TEST_CASE("child seeds are pairwise distinct") {
  std::set<std::uint64_t> seen;
  for (int r = 0; r < 1000; ++r) seen.insert(child_seed(123456789ULL, r));
  CHECK(seen.size() == 1000);
}

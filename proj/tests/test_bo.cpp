#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "dtrgp/bo.hpp"
#include "dtrgp/errors.hpp"
#include "dtrgp/stats.hpp"

using namespace dtrgp;
using Catch::Approx;

namespace {

Eigen::VectorXd vec1(double x) {
  Eigen::VectorXd v(1);
  v << x;
  return v;
}

KernelSpec unit_kernel(double theta = 1.0, double sig2 = 1.0) {
  KernelSpec spec;
  spec.family = KernelFamily::Matern52;
  spec.length_scales = vec1(theta);
  spec.signal_variance = sig2;
  return spec;
}

Design line_design(std::initializer_list<double> xs, std::initializer_list<double> ys) {
  Design d;
  d.points.resize(static_cast<long>(xs.size()), 1);
  d.responses.resize(static_cast<long>(ys.size()));
  long i = 0;
  for (double x : xs) d.points(i++, 0) = x;
  i = 0;
  for (double y : ys) d.responses(i++) = y;
  return d;
}

}  // namespace

TEST_CASE("expected improvement closed forms") {
  CHECK(expected_improvement(5.0, 0.0, 0.0) == 0.0);
  CHECK(expected_improvement(-5.0, 0.0, 0.0) == 0.0);
  CHECK(expected_improvement(1.0, 1.0, 1.0) == Approx(0.3989422804014327).epsilon(1e-12));
  CHECK(expected_improvement(1.0, 1e-18, 0.0) == Approx(1.0).margin(1e-6));
}

TEST_CASE("expected improvement properties") {
  Rng rng(6);
  SECTION("nonnegative for random inputs") {
    for (int i = 0; i < 100000; ++i) {
      const double mu = rng.uniform(-10, 10);
      const double var = rng.uniform(0, 9);
      const double baseline = rng.uniform(-10, 10);
      CHECK(expected_improvement(mu, var, baseline) >= 0.0);
    }
  }
  SECTION("strictly increasing in sigma at the baseline") {
    double prev = 0.0;
    for (double sigma : {0.1, 0.2, 0.5, 1.0, 2.0, 5.0}) {
      const double ei = expected_improvement(2.0, sigma * sigma, 2.0);
      CHECK(ei > prev);
      CHECK(ei == Approx(sigma * 0.3989422804014327).epsilon(1e-12));
      prev = ei;
    }
  }
}

TEST_CASE("reinterpolation reproduces the regressive mean with zero sample variance") {
  Rng rng(17);
  Design d;
  d.points.resize(14, 1);
  d.responses.resize(14);
  for (int i = 0; i < 14; ++i) {
    d.points(i, 0) = i / 13.0;
    d.responses(i) = std::sin(4.0 * d.points(i, 0)) + 0.2 * rng.normal();
  }
  const DomainTransform t = DomainTransform::identity(1);
  const GpFit hm = make_gp_fit(d, unit_kernel(0.3), NoiseSpec::homoskedastic(0.04), t);
  const GpFit re = reinterpolate(hm, d);

  Eigen::MatrixXd grid(200, 1);
  for (int i = 0; i < 200; ++i) grid(i, 0) = i / 199.0;
  const Eigen::VectorXd mu_hm = posterior_f(hm, grid).mean;
  const Eigen::VectorXd mu_re = posterior_f(re, grid).mean;
  CHECK((mu_hm - mu_re).lpNorm<Eigen::Infinity>() < 1e-6);

  const PosteriorMoments at_samples = posterior_f(re, d.points);
  for (int i = 0; i < d.size(); ++i) CHECK(at_samples.variance(i) <= 10.0 * re.jitter);

  SECTION("idempotent on interpolating fits") {
    const GpFit re2 = reinterpolate(re, d);
    const PosteriorMoments a = posterior_f(re, grid);
    const PosteriorMoments b = posterior_f(re2, grid);
    CHECK((a.mean - b.mean).lpNorm<Eigen::Infinity>() < 1e-12);
    CHECK((a.variance - b.variance).lpNorm<Eigen::Infinity>() < 1e-12);
  }
}

TEST_CASE("re-interpolation invariants hold across fuzzed regressive fits") {
  Rng rng(5150);
  for (int run = 0; run < 50; ++run) {
    const int m = 8 + static_cast<int>(rng.uniform(0, 10));
    Design d;
    d.points.resize(m, 1);
    d.responses.resize(m);
    for (int i = 0; i < m; ++i) {
      d.points(i, 0) = (i + rng.uniform(0.05, 0.95)) / m;
      d.responses(i) = rng.normal(0.0, 1.0);
    }
    const double theta = rng.uniform(0.05, 1.5);
    const double g2 = rng.uniform(0.001, 0.5);
    const GpFit fit = make_gp_fit(d, unit_kernel(theta), NoiseSpec::homoskedastic(g2),
                                  DomainTransform::identity(1));
    const GpFit re = reinterpolate(fit, d);
    Eigen::MatrixXd grid(50, 1);
    for (int i = 0; i < 50; ++i) grid(i, 0) = i / 49.0;
    CHECK((posterior_f(fit, grid).mean - posterior_f(re, grid).mean).lpNorm<Eigen::Infinity>() <
          1e-6);
    const PosteriorMoments at_samples = posterior_f(re, d.points);
    for (int i = 0; i < m; ++i) CHECK(at_samples.variance(i) <= 10.0 * re.jitter);
  }
}

TEST_CASE("propose_next finds the grid EI argmax on a unimodal surface") {
  const Design d = line_design({0.5}, {1.0});
  const DomainTransform box = DomainTransform::identity(1);
  const GpFit fit = make_gp_fit(d, unit_kernel(0.25), NoiseSpec::interpolating(), box, 0.0);

  BoConfig config;
  config.delta_min_rel = 1e-6;
  std::vector<Eigen::VectorXd> exclude{vec1(0.5)};
  const Proposal prop = propose_next(fit, d.responses.maxCoeff(), exclude, box, config);

  // Exhaustive oracle over the same candidate grid.
  const PosteriorMoments post = posterior_f(fit, [&] {
    Eigen::MatrixXd g(512, 1);
    for (int i = 0; i < 512; ++i) g(i, 0) = i / 511.0;
    return g;
  }());
  double best_ei = -1.0;
  double best_psi = 0.0;
  for (int i = 0; i < 512; ++i) {
    const double psi = i / 511.0;
    if (std::abs(psi - 0.5) < 1e-6) continue;
    const double ei = expected_improvement(post.mean(i), post.variance(i), 1.0);
    if (ei > best_ei) {
      best_ei = ei;
      best_psi = psi;
    }
  }
  CHECK(prop.ei >= best_ei - 1e-12);
  CHECK(std::abs(prop.psi(0) - best_psi) <= 1.0 / 511.0 + 1e-12);
}

TEST_CASE("propose_next respects the exclusion distance") {
  const Design d = line_design({0.2, 0.4, 0.6, 0.8}, {0.0, 0.5, 0.4, 0.1});
  const DomainTransform box = DomainTransform::identity(1);
  const GpFit fit = make_gp_fit(d, unit_kernel(0.2), NoiseSpec::interpolating(), box);
  BoConfig config;
  config.delta_min_rel = 0.01;
  std::vector<Eigen::VectorXd> exclude;
  for (int i = 0; i < d.size(); ++i) exclude.push_back(d.points.row(i).transpose());
  const Proposal prop = propose_next(fit, d.responses.maxCoeff(), exclude, box, config);
  for (const auto& e : exclude) {
    CHECK(std::abs(prop.psi(0) - e(0)) >= 0.01);
  }
}

TEST_CASE("propose_next breaks symmetric ties toward the smaller index") {
  // Symmetric three-point design: EI has mirrored maxima around 0.5.
  const Design d = line_design({0.0, 0.5, 1.0}, {0.0, 1.0, 0.0});
  const DomainTransform box = DomainTransform::identity(1);
  const GpFit fit = make_gp_fit(d, unit_kernel(0.18), NoiseSpec::interpolating(), box, 0.0);
  BoConfig config;
  std::vector<Eigen::VectorXd> exclude{vec1(0.0), vec1(0.5), vec1(1.0)};
  const Proposal prop = propose_next(fit, 1.0, exclude, box, config);
  CHECK(prop.psi(0) < 0.5);
}

TEST_CASE("propose_next reports saturation when everything is excluded") {
  const Design d = line_design({0.5}, {1.0});
  const DomainTransform box = DomainTransform::identity(1);
  const GpFit fit = make_gp_fit(d, unit_kernel(0.25), NoiseSpec::interpolating(), box);
  BoConfig config;
  config.delta_min_rel = 2.0;  // covers the whole box
  std::vector<Eigen::VectorXd> exclude{vec1(0.5)};
  CHECK_THROWS_AS(propose_next(fit, 1.0, exclude, box, config), SaturationError);
}

TEST_CASE("difference noise estimate recovers iid noise on a line") {
  Rng rng(2718);
  double acc = 0.0;
  const int reps = 30;
  for (int r = 0; r < reps; ++r) {
    Design d;
    d.points.resize(25, 1);
    d.responses.resize(25);
    for (int i = 0; i < 25; ++i) {
      d.points(i, 0) = i / 24.0;
      d.responses(i) = 0.5 * d.points(i, 0) + 0.2 * rng.normal();  // linear trend + noise
    }
    acc += difference_noise_estimate(d);
  }
  // Second differences cancel the linear trend; expectation is gamma^2.
  CHECK(acc / reps == Approx(0.04).epsilon(0.25));
}

TEST_CASE("run_bo degenerate budget returns the initial design and incumbent") {
  const Evaluator eval = [](const Eigen::VectorXd& psi) -> std::optional<double> {
    return -(psi(0) - 0.3) * (psi(0) - 0.3);
  };
  Design initial;
  initial.points.resize(10, 1);
  initial.responses.resize(10);
  for (int i = 0; i < 10; ++i) {
    initial.points(i, 0) = i / 9.0;
    initial.responses(i) = -(initial.points(i, 0) - 0.3) * (initial.points(i, 0) - 0.3);
  }
  BoConfig config;
  config.gp_type = GpType::Int;
  config.budget = 0;
  const BoTrace trace = run_bo(eval, initial, DomainTransform::identity(1), config);
  CHECK(trace.records.size() == 10);
  CHECK(trace.estimator_evaluations == 10);
  REQUIRE(trace.incumbent_by_infill.size() == 1);
  CHECK(std::abs(trace.final_incumbent()(0) - 0.3) < 0.05);
}

TEST_CASE("run_bo locates the maximum of a noise-free quadratic") {
  const Evaluator eval = [](const Eigen::VectorXd& psi) -> std::optional<double> {
    return -(psi(0) - 0.3) * (psi(0) - 0.3);
  };
  Design initial;
  initial.points.resize(10, 1);
  initial.responses.resize(10);
  for (int i = 0; i < 10; ++i) {
    initial.points(i, 0) = i / 9.0;
    initial.responses(i) = *eval(initial.points.row(i).transpose());
  }
  BoConfig config;
  config.gp_type = GpType::Int;
  config.budget = 10;
  const BoTrace trace = run_bo(eval, initial, DomainTransform::identity(1), config);
  CHECK(std::abs(trace.final_incumbent()(0) - 0.3) <= 0.02);
  CHECK(trace.records.size() == 20);
  CHECK(trace.estimator_evaluations == 20);
}

TEST_CASE("run_bo handles evaluator failures by retrying the next candidate") {
  int failures_offered = 0;
  const Evaluator eval = [&](const Eigen::VectorXd& psi) -> std::optional<double> {
    if (psi(0) > 0.9) {  // a failing region
      ++failures_offered;
      return std::nullopt;
    }
    return std::sin(3.0 * psi(0));
  };
  Design initial;
  initial.points.resize(8, 1);
  initial.responses.resize(8);
  for (int i = 0; i < 8; ++i) {
    initial.points(i, 0) = 0.05 + 0.8 * i / 7.0;
    initial.responses(i) = std::sin(3.0 * initial.points(i, 0));
  }
  BoConfig config;
  config.gp_type = GpType::HM;
  config.budget = 6;
  const BoTrace trace = run_bo(eval, initial, DomainTransform::identity(1), config);
  const std::size_t accepted = trace.records.size() - 8;
  CHECK(trace.records.size() >= 8);
  CHECK(trace.failed_points.size() == static_cast<std::size_t>(failures_offered));
  CHECK(trace.estimator_evaluations == static_cast<int>(8 + accepted + trace.failed_points.size()));
  for (const auto& f : trace.failed_points) CHECK(f(0) > 0.9);
}

TEST_CASE("run_bo is deterministic given identical inputs") {
  const Evaluator eval = [](const Eigen::VectorXd& psi) -> std::optional<double> {
    return std::sin(5.0 * psi(0)) + 0.3 * psi(0);
  };
  Design initial;
  initial.points.resize(7, 1);
  initial.responses.resize(7);
  for (int i = 0; i < 7; ++i) {
    initial.points(i, 0) = i / 6.0;
    initial.responses(i) = *eval(initial.points.row(i).transpose());
  }
  BoConfig config;
  config.gp_type = GpType::HM;
  config.budget = 5;
  const BoTrace a = run_bo(eval, initial, DomainTransform::identity(1), config);
  const BoTrace b = run_bo(eval, initial, DomainTransform::identity(1), config);
  REQUIRE(a.records.size() == b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    CHECK(a.records[i].psi == b.records[i].psi);
    CHECK(a.records[i].response == b.records[i].response);
    CHECK(a.records[i].incumbent_psi == b.records[i].incumbent_psi);
  }
}

TEST_CASE("EI plateau rule stops the loop early") {
  // Noise-free, fully determined surface: EI collapses quickly once the
  // design brackets the optimum.
  const Evaluator eval = [](const Eigen::VectorXd& psi) -> std::optional<double> {
    return -(psi(0) - 0.5) * (psi(0) - 0.5);
  };
  Design initial;
  initial.points.resize(12, 1);
  initial.responses.resize(12);
  for (int i = 0; i < 12; ++i) {
    initial.points(i, 0) = i / 11.0;
    initial.responses(i) = *eval(initial.points.row(i).transpose());
  }
  BoConfig config;
  config.gp_type = GpType::Int;
  config.budget = 25;
  config.ei_plateau_eps = 1e-4;
  config.ei_plateau_patience = 2;
  const BoTrace trace = run_bo(eval, initial, DomainTransform::identity(1), config);
  CHECK(trace.records.size() < 12 + 25);
  // The last proposals before stopping sat below the plateau threshold.
  CHECK(trace.records.back().max_ei < 1e-4);
}

TEST_CASE("re-interpolation invariants hold for fits produced inside a run") {
  Rng noise(4242);
  const Evaluator eval = [&](const Eigen::VectorXd& psi) -> std::optional<double> {
    return std::sin(4.0 * psi(0)) + 0.1 * noise.normal();
  };
  Design initial;
  initial.points.resize(9, 1);
  initial.responses.resize(9);
  for (int i = 0; i < 9; ++i) {
    initial.points(i, 0) = i / 8.0;
    initial.responses(i) = *eval(initial.points.row(i).transpose());
  }
  BoConfig config;
  config.gp_type = GpType::HM;
  config.budget = 4;

  Eigen::MatrixXd grid(60, 1);
  for (int i = 0; i < 60; ++i) grid(i, 0) = i / 59.0;
  Design current = initial;
  int checked = 0;
  const FitObserver observer = [&](int infills, const GpFit& fit) {
    const GpFit re = reinterpolate(fit, fit.design);
    CHECK((posterior_f(fit, grid).mean - posterior_f(re, grid).mean).lpNorm<Eigen::Infinity>() <
          1e-6);
    const PosteriorMoments at = posterior_f(re, fit.design.points);
    for (int i = 0; i < fit.design.size(); ++i) CHECK(at.variance(i) <= 10.0 * re.jitter);
    ++checked;
    (void)infills;
  };
  run_bo(eval, initial, DomainTransform::identity(1), config, observer);
  CHECK(checked == 5);
  (void)current;
}

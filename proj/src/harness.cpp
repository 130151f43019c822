#include "dtrgp/harness.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "dtrgp/errors.hpp"
#include "dtrgp/stats.hpp"

namespace dtrgp {

std::string to_string(Method m) {
  switch (m) {
    case Method::Grid: return "grid";
    case Method::MSM: return "msm";
    case Method::Int: return "int";
    case Method::HM: return "hm";
    case Method::HE: return "he";
  }
  return "?";
}

Method method_from_string(const std::string& s) {
  if (s == "grid") return Method::Grid;
  if (s == "msm") return Method::MSM;
  if (s == "int") return Method::Int;
  if (s == "hm") return Method::HM;
  if (s == "he") return Method::HE;
  throw std::invalid_argument("unknown method: " + s + " (valid: grid, msm, int, hm, he)");
}

Eigen::MatrixXd step_grid(const Eigen::VectorXd& lo, const Eigen::VectorXd& hi,
                          const Eigen::VectorXd& step) {
  const int dims = static_cast<int>(lo.size());
  if (hi.size() != dims || step.size() != dims) {
    throw std::invalid_argument("step_grid: size mismatch");
  }
  std::vector<std::vector<double>> axes(dims);
  for (int d = 0; d < dims; ++d) {
    if (!(step(d) > 0.0)) throw std::invalid_argument("step_grid: step must be positive");
    const double eps = 1e-9 * step(d);
    for (int k = 1;; ++k) {
      const double v = lo(d) + step(d) * k;
      if (v > hi(d) + eps) break;
      axes[d].push_back(std::min(v, hi(d)));
    }
    if (axes[d].empty()) throw std::invalid_argument("step_grid: empty axis");
  }
  long total = 1;
  for (int d = 0; d < dims; ++d) total *= static_cast<long>(axes[d].size());
  Eigen::MatrixXd grid(total, dims);
  std::vector<std::size_t> idx(dims, 0);
  for (long r = 0; r < total; ++r) {
    for (int d = 0; d < dims; ++d) grid(r, d) = axes[d][idx[d]];
    for (int d = dims - 1; d >= 0; --d) {
      if (++idx[d] < axes[d].size()) break;
      idx[d] = 0;
    }
  }
  return grid;
}

GridSearchResult grid_search(const SurfaceFn& surface, const Eigen::MatrixXd& grid) {
  if (grid.rows() == 0) throw std::invalid_argument("grid_search: empty grid");
  GridSearchResult out;
  out.evaluations = static_cast<int>(grid.rows());
  bool found = false;
  for (Eigen::Index i = 0; i < grid.rows(); ++i) {
    const std::optional<double> v = surface(grid.row(i).transpose());
    if (!v) {
      ++out.missing;
      continue;
    }
    if (!found || *v > out.value) {
      found = true;
      out.value = *v;
      out.psi = grid.row(i).transpose();
    }
  }
  if (!found) throw std::runtime_error("grid_search: every grid point was missing");
  return out;
}

Eigen::MatrixXd quadratic_features(const Eigen::MatrixXd& points) {
  const int dims = static_cast<int>(points.cols());
  const int n = static_cast<int>(points.rows());
  const int p = 1 + 2 * dims + dims * (dims - 1) / 2;
  Eigen::MatrixXd x(n, p);
  for (int i = 0; i < n; ++i) {
    int c = 0;
    x(i, c++) = 1.0;
    for (int d = 0; d < dims; ++d) {
      x(i, c++) = points(i, d);
      x(i, c++) = points(i, d) * points(i, d);
    }
    for (int a = 0; a < dims; ++a) {
      for (int b = a + 1; b < dims; ++b) x(i, c++) = points(i, a) * points(i, b);
    }
  }
  return x;
}

MsmResult msm_baseline(const Eigen::MatrixXd& points, const Eigen::VectorXd& values,
                       const Eigen::VectorXd& box_lo, const Eigen::VectorXd& box_hi) {
  const int dims = static_cast<int>(points.cols());
  const Eigen::MatrixXd x = quadratic_features(points);
  if (points.rows() < x.cols()) {
    throw std::runtime_error("msm_baseline: fewer samples than features");
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  if (qr.rank() < x.cols()) throw std::runtime_error("msm_baseline: rank-deficient design");
  MsmResult out;
  out.coefficients = qr.solve(values);

  const auto fitted = [&](const Eigen::VectorXd& psi) {
    Eigen::MatrixXd one(1, dims);
    one.row(0) = psi.transpose();
    return (quadratic_features(one) * out.coefficients)(0);
  };

  // Stationary point of the quadratic form.
  Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(dims, dims);
  Eigen::VectorXd lin(dims);
  for (int d = 0; d < dims; ++d) {
    lin(d) = out.coefficients(1 + 2 * d);
    hess(d, d) = 2.0 * out.coefficients(2 + 2 * d);
  }
  int c = 1 + 2 * dims;
  for (int a = 0; a < dims; ++a) {
    for (int b = a + 1; b < dims; ++b) {
      hess(a, b) = out.coefficients(c);
      hess(b, a) = out.coefficients(c);
      ++c;
    }
  }
  bool have_opt = false;
  Eigen::LLT<Eigen::MatrixXd> llt(Eigen::MatrixXd(-hess));
  if (llt.info() == Eigen::Success) {  // concave
    const Eigen::VectorXd stat = -hess.ldlt().solve(lin);
    if ((stat.array() >= box_lo.array()).all() && (stat.array() <= box_hi.array()).all()) {
      out.psi = stat;
      out.value = fitted(stat);
      have_opt = true;
    }
  }
  if (!have_opt) {
    // Non-concave or exterior stationary point: scan a fine grid over the box.
    Eigen::VectorXd step = (box_hi - box_lo) / 200.0;
    const Eigen::MatrixXd scan = step_grid(box_lo - step, box_hi, step);
    Eigen::Index best = 0;
    double best_v = fitted(scan.row(0).transpose());
    for (Eigen::Index i = 1; i < scan.rows(); ++i) {
      const double v = fitted(scan.row(i).transpose());
      if (v > best_v) {
        best_v = v;
        best = i;
      }
    }
    out.psi = scan.row(best).transpose();
    out.value = best_v;
  }
  return out;
}

namespace {

ReplicateResult run_one_method(const ReplicateConfig& config, int replicate, std::uint64_t seed,
                               const Cohort& cohort, const PropensityModel& propensity,
                               Method method) {
  ReplicateResult result;
  result.replicate = replicate;
  result.seed = seed;
  result.method = method;

  const RegimeFamily family = scenario_family(config.scenario.id);
  const SurfaceFn surface = [&](const Eigen::VectorXd& psi) -> std::optional<double> {
    try {
      return ipw_value(cohort, family, psi, propensity);
    } catch (const NoAdherentPatients&) {
      return std::nullopt;
    }
  };

  if (method == Method::Grid || method == Method::MSM) {
    const double step = config.grid_step.value_or(scenario_grid_step(config.scenario.id));
    const Eigen::MatrixXd grid =
        step_grid(family.lo, family.hi, Eigen::VectorXd::Constant(family.dims(), step));
    if (method == Method::Grid) {
      const GridSearchResult g = grid_search(surface, grid);
      result.checkpoints.push_back({0, g.psi, g.value});
      result.evaluations = g.evaluations;
      return result;
    }
    std::vector<Eigen::Index> kept;
    std::vector<double> vals;
    for (Eigen::Index i = 0; i < grid.rows(); ++i) {
      if (auto v = surface(grid.row(i).transpose())) {
        kept.push_back(i);
        vals.push_back(*v);
      }
    }
    Eigen::MatrixXd pts(kept.size(), grid.cols());
    Eigen::VectorXd y(kept.size());
    for (std::size_t i = 0; i < kept.size(); ++i) {
      pts.row(i) = grid.row(kept[i]);
      y(i) = vals[i];
    }
    const MsmResult m = msm_baseline(pts, y, family.lo, family.hi);
    result.checkpoints.push_back({0, m.psi, m.value});
    result.evaluations = static_cast<int>(grid.rows());
    return result;
  }

  // GP methods.
  const Eigen::MatrixXd init_pts = scenario_initial_points(config.scenario.id);
  Design initial;
  initial.points.resize(0, init_pts.cols());
  initial.responses.resize(0);
  for (Eigen::Index i = 0; i < init_pts.rows(); ++i) {
    if (auto v = surface(init_pts.row(i).transpose())) {
      initial.append(init_pts.row(i).transpose(), *v, /*is_infill=*/false);
    }
  }
  if (initial.size() < 2) throw FitError("replicate: initial design almost entirely missing");

  BoConfig bo = config.bo_template;
  bo.gp_type = method == Method::Int ? GpType::Int : (method == Method::HM ? GpType::HM : GpType::HE);
  bo.family = config.family;
  bo.budget = config.budget;

  const DomainTransform box = DomainTransform::from_box(family.lo, family.hi);
  const BoTrace trace = run_bo(surface, initial, box, bo);

  const int done = static_cast<int>(trace.incumbent_by_infill.size()) - 1;
  for (int cp : config.checkpoints) {
    if (cp > config.budget) continue;
    const int k = std::min(cp, done);
    result.checkpoints.push_back(
        {cp, trace.incumbent_by_infill[k], trace.incumbent_value_by_infill[k]});
  }
  result.evaluations = trace.estimator_evaluations;
  return result;
}

}  // namespace

std::vector<ReplicateResult> run_replicates(const ReplicateConfig& config) {
  if (config.replicates < 1) throw std::invalid_argument("run_replicates: R >= 1");
  const int tasks = config.replicates;
  std::vector<std::vector<ReplicateResult>> per_replicate(tasks);

  int workers = config.workers > 0 ? config.workers
                                   : static_cast<int>(std::thread::hardware_concurrency());
  workers = std::max(1, std::min(workers, tasks));

  std::atomic<int> next{0};
  const auto worker = [&]() {
    for (int r = next.fetch_add(1); r < tasks; r = next.fetch_add(1)) {
      const std::uint64_t seed = child_seed(config.master_seed, static_cast<std::uint64_t>(r));
      ScenarioSpec spec = config.scenario;
      spec.seed = seed;
      Cohort cohort;
      PropensityModel propensity;
      bool cohort_ok = true;
      std::string cohort_error;
      try {
        cohort = generate_cohort(spec);
        propensity = config.estimated_propensity ? fit_propensity(cohort)
                                                 : known_propensity_model(spec.id);
      } catch (const std::exception& e) {
        cohort_ok = false;
        cohort_error = e.what();
      }
      for (Method m : config.methods) {
        if (!cohort_ok) {
          ReplicateResult bad;
          bad.replicate = r;
          bad.seed = seed;
          bad.method = m;
          bad.failed = true;
          bad.error = cohort_error;
          per_replicate[r].push_back(std::move(bad));
          continue;
        }
        try {
          per_replicate[r].push_back(run_one_method(config, r, seed, cohort, propensity, m));
        } catch (const std::exception& e) {
          ReplicateResult bad;
          bad.replicate = r;
          bad.seed = seed;
          bad.method = m;
          bad.failed = true;
          bad.error = e.what();
          per_replicate[r].push_back(std::move(bad));
        }
      }
    }
  };

  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  std::vector<ReplicateResult> results;
  results.reserve(tasks * config.methods.size());
  long failures = 0;
  for (auto& chunk : per_replicate) {
    for (auto& r : chunk) {
      if (r.failed) ++failures;
      results.push_back(std::move(r));
    }
  }
  const long total = static_cast<long>(results.size());
  if (total > 0 && static_cast<double>(failures) / static_cast<double>(total) >
                       config.failure_budget) {
    throw std::runtime_error("run_replicates: failure rate " + std::to_string(failures) + "/" +
                             std::to_string(total) + " exceeds the budget");
  }
  return results;
}

std::vector<SummaryRow> summarize(const std::vector<ReplicateResult>& results) {
  if (results.empty()) throw std::invalid_argument("summarize: empty results");
  // (method, checkpoint, quantity index) -> values; quantity 0..D-1 = psi, D = value.
  std::map<std::tuple<int, int, int>, std::vector<double>> cells;
  int dims = 0;
  for (const auto& r : results) {
    if (r.failed) continue;
    for (const auto& cp : r.checkpoints) {
      dims = static_cast<int>(cp.psi.size());
      for (int d = 0; d < dims; ++d) {
        cells[{static_cast<int>(r.method), cp.checkpoint, d}].push_back(cp.psi(d));
      }
      cells[{static_cast<int>(r.method), cp.checkpoint, dims}].push_back(cp.value);
    }
  }
  std::vector<SummaryRow> rows;
  for (const auto& [key, values] : cells) {
    const auto [method, checkpoint, q] = key;
    SummaryRow row;
    row.method = static_cast<Method>(method);
    row.checkpoint = checkpoint;
    row.quantity = q == dims ? "value" : "psi" + std::to_string(q + 1);
    row.count = static_cast<int>(values.size());
    row.mean = mean(values);
    row.sd = sample_sd(values);
    row.median = median(values);
    row.iqr = iqr(values);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string replicates_to_csv(const std::vector<ReplicateResult>& results) {
  int dims = 0;
  for (const auto& r : results) {
    for (const auto& cp : r.checkpoints) dims = std::max(dims, static_cast<int>(cp.psi.size()));
  }
  std::ostringstream os;
  os.precision(12);
  os << "replicate,seed,method,checkpoint";
  for (int d = 0; d < dims; ++d) os << ",psi" << (d + 1);
  os << ",value,evaluations,failed,error\n";
  for (const auto& r : results) {
    if (r.failed) {
      os << r.replicate << ',' << r.seed << ',' << to_string(r.method) << ',';
      for (int d = 0; d < dims; ++d) os << ',';
      os << ',' << r.evaluations << ",1," << r.error << '\n';
      continue;
    }
    for (const auto& cp : r.checkpoints) {
      os << r.replicate << ',' << r.seed << ',' << to_string(r.method) << ',' << cp.checkpoint;
      for (int d = 0; d < dims; ++d) {
        os << ',';
        if (d < cp.psi.size()) os << cp.psi(d);
      }
      os << ',' << cp.value << ',' << r.evaluations << ",0,\n";
    }
  }
  return os.str();
}

std::string summary_to_csv(const std::vector<SummaryRow>& rows) {
  std::ostringstream os;
  os.precision(12);
  os << "method,checkpoint,quantity,count,mean,sd,median,iqr\n";
  for (const auto& r : rows) {
    os << to_string(r.method) << ',' << r.checkpoint << ',' << r.quantity << ',' << r.count << ','
       << r.mean << ',' << r.sd << ',' << r.median << ',' << r.iqr << '\n';
  }
  return os.str();
}

}  // namespace dtrgp

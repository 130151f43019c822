#include "dtrgp/case_study.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "dtrgp/errors.hpp"
#include "dtrgp/stats.hpp"

namespace dtrgp {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (char c : line) {
    if (c == '"') {
      quoted = !quoted;
    } else if (c == ',' && !quoted) {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  fields.push_back(cur);
  for (auto& f : fields) {
    while (!f.empty() && (f.back() == '\r' || f.back() == ' ')) f.pop_back();
    while (!f.empty() && f.front() == ' ') f.erase(f.begin());
  }
  return fields;
}

double parse_number(const std::string& s, long line_no, const std::string& column) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw RowError("line " + std::to_string(line_no) + ": cannot parse '" + s + "' in column " +
                   column);
  }
}

}  // namespace

Cohort load_cohort_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open CSV file: " + path);

  std::string header;
  if (!std::getline(in, header)) throw SchemaError("empty CSV file: " + path);
  const std::vector<std::string> columns = split_csv_line(header);

  const auto column_index = [&](const std::string& name) {
    for (std::size_t i = 0; i < columns.size(); ++i) {
      std::string c = columns[i];
      if (!c.empty() && c.front() == '"') c = c.substr(1, c.size() - 2);
      if (c == name) return static_cast<long>(i);
    }
    throw SchemaError("missing required column: " + name);
  };

  const long arm_idx = column_index(schema.arm);
  const long weight_idx = column_index(schema.weight);
  const long cd4b_idx = column_index(schema.cd4_baseline);
  const long cd420_idx = column_index(schema.cd4_week20);
  if (schema.arm_code_z0 == schema.arm_code_z1) {
    throw SchemaError("arm codes must be distinct");
  }

  Cohort cohort;
  std::string line;
  long line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const std::vector<std::string> f = split_csv_line(line);
    const long needed = std::max({arm_idx, weight_idx, cd4b_idx, cd420_idx});
    if (static_cast<long>(f.size()) <= needed) {
      throw RowError("line " + std::to_string(line_no) + ": too few fields");
    }
    std::string arm = f[arm_idx];
    int z;
    if (arm == schema.arm_code_z1) {
      z = 1;
    } else if (arm == schema.arm_code_z0) {
      z = 0;
    } else {
      continue;  // other arms filtered out
    }
    Eigen::VectorXd x(2);
    x(0) = parse_number(f[weight_idx], line_no, schema.weight);
    x(1) = parse_number(f[cd4b_idx], line_no, schema.cd4_baseline);
    Trajectory t;
    t.stage_covariates = {x};
    t.treatments = {z};
    t.outcome = parse_number(f[cd420_idx], line_no, schema.cd4_week20);
    cohort.patients.push_back(std::move(t));
  }
  if (cohort.patients.empty()) {
    throw SchemaError("no rows matched the configured arm codes in " + path);
  }
  return cohort;
}

RegimeFamily case_study_family() {
  Eigen::VectorXd lo(2), hi(2);
  lo << 50.0, 200.0;
  hi << 100.0, 600.0;
  return RegimeFamily::threshold_per_stage({2}, lo, hi);
}

Eigen::MatrixXd case_study_initial_points() {
  Eigen::MatrixXd pts(16, 2);
  int r = 0;
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      pts(r, 0) = 50.0 + 15.0 * i;
      pts(r, 1) = 200.0 + 125.0 * j;
      ++r;
    }
  }
  return pts;
}

void UncertaintyConfig::validate() const {
  if (bootstrap_draws < 1) throw std::invalid_argument("UncertaintyConfig: B >= 1");
  if (paths_per_draw < 1) throw std::invalid_argument("UncertaintyConfig: N >= 1");
  if ((path_grid_step.array() <= 0.0).any()) {
    throw std::invalid_argument("UncertaintyConfig: path grid steps must be positive");
  }
}

Eigen::MatrixXd path_grid(const RegimeFamily& family, const Eigen::VectorXd& step) {
  const int dims = family.dims();
  if (step.size() != dims) throw std::invalid_argument("path_grid: step size mismatch");
  std::vector<std::vector<double>> axes(dims);
  for (int d = 0; d < dims; ++d) {
    const double eps = 1e-9 * step(d);
    for (int k = 0;; ++k) {
      const double v = family.lo(d) + step(d) * k;
      if (v > family.hi(d) + eps) break;
      axes[d].push_back(v);
    }
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

namespace {

struct DrawRecord {
  // One row per (checkpoint, path): argmax coordinates and max value.
  std::vector<std::vector<Eigen::VectorXd>> argmax_per_checkpoint;
  std::vector<std::vector<double>> max_per_checkpoint;
  bool failed = false;
};

IntervalSummary interval(std::vector<double> values) {
  IntervalSummary s;
  s.median = quantile(values, 0.5);
  s.lo = quantile(values, 0.025);
  s.hi = quantile(values, 0.975);
  return s;
}

Eigen::VectorXd uniform_weights(int n) {
  return Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n));
}

template <typename PerDrawFn>
int run_draws_parallel(int draws, int workers, const PerDrawFn& body) {
  workers = workers > 0 ? workers : static_cast<int>(std::thread::hardware_concurrency());
  workers = std::max(1, std::min(workers, draws));
  std::atomic<int> next{0};
  const auto loop = [&]() {
    for (int b = next.fetch_add(1); b < draws; b = next.fetch_add(1)) body(b);
  };
  if (workers == 1) {
    loop();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(loop);
    for (auto& t : pool) t.join();
  }
  return workers;
}

}  // namespace

UncertaintyResult optimizer_uncertainty(const Cohort& cohort, const RegimeFamily& family,
                                        const UncertaintyConfig& config,
                                        std::uint64_t master_seed) {
  cohort.validate();
  config.validate();
  const int n = cohort.size();
  const int dims = family.dims();
  const Eigen::MatrixXd grid = path_grid(family, config.path_grid_step);
  const Eigen::MatrixXd init_pts =
      dims == 2 ? case_study_initial_points() : Eigen::MatrixXd();
  if (init_pts.rows() == 0) {
    throw std::invalid_argument("optimizer_uncertainty: only 2-D threshold families supported");
  }

  std::vector<int> checkpoints = config.checkpoints;
  std::sort(checkpoints.begin(), checkpoints.end());
  checkpoints.erase(std::remove_if(checkpoints.begin(), checkpoints.end(),
                                   [&](int c) { return c < 0 || c > config.budget; }),
                    checkpoints.end());

  std::vector<DrawRecord> records(config.bootstrap_draws);

  run_draws_parallel(config.bootstrap_draws, config.workers, [&](int b) {
    DrawRecord& rec = records[b];
    rec.argmax_per_checkpoint.resize(checkpoints.size());
    rec.max_per_checkpoint.resize(checkpoints.size());
    try {
      Rng rng(child_seed(master_seed, static_cast<std::uint64_t>(b)));
      Cohort draw = cohort;
      draw.weights = config.bootstrap_draws > 1 ? bayesian_bootstrap_weights(n, rng)
                                                : uniform_weights(n);
      const PropensityModel propensity = fit_propensity(draw, StageFeatures{}, config.p_min);

      Design initial;
      initial.points.resize(0, dims);
      initial.responses.resize(0);
      for (Eigen::Index i = 0; i < init_pts.rows(); ++i) {
        try {
          const double v = ipw_value(draw, family, init_pts.row(i).transpose(), propensity);
          initial.append(init_pts.row(i).transpose(), v, /*is_infill=*/false);
        } catch (const NoAdherentPatients&) {
        }
      }
      if (initial.size() < 4) throw FitError("bootstrap draw: initial design mostly missing");

      BoConfig bo;
      bo.gp_type = config.gp_type;
      bo.family = config.family;
      bo.budget = config.budget;

      const Evaluator evaluate = [&](const Eigen::VectorXd& psi) -> std::optional<double> {
        try {
          return ipw_value(draw, family, psi, propensity);
        } catch (const NoAdherentPatients&) {
          return std::nullopt;
        }
      };

      const FitObserver observer = [&](int infills, const GpFit& fit) {
        for (std::size_t c = 0; c < checkpoints.size(); ++c) {
          if (checkpoints[c] != infills) continue;
          const Eigen::MatrixXd paths =
              sample_posterior_paths(fit, grid, config.paths_per_draw, rng);
          for (int p = 0; p < paths.rows(); ++p) {
            Eigen::Index arg = 0;
            const double maxv = paths.row(p).maxCoeff(&arg);
            rec.argmax_per_checkpoint[c].push_back(grid.row(arg).transpose());
            rec.max_per_checkpoint[c].push_back(maxv);
          }
        }
      };

      const DomainTransform box = DomainTransform::from_box(family.lo, family.hi);
      const BoTrace trace = run_bo(evaluate, initial, box, bo, observer);

      // Budget shortfalls (failed evaluations) leave late checkpoints without
      // paths; reuse the final fit's draws only if the loop reached them.
      (void)trace;
      for (std::size_t c = 0; c < checkpoints.size(); ++c) {
        if (rec.argmax_per_checkpoint[c].empty()) {
          rec.failed = true;
        }
      }
    } catch (const std::exception&) {
      rec.failed = true;
    }
  });

  UncertaintyResult result;
  result.path_grid_size = grid.rows();
  for (std::size_t c = 0; c < checkpoints.size(); ++c) {
    CheckpointUncertainty cp;
    cp.checkpoint = checkpoints[c];
    std::vector<std::vector<double>> psi_draws(dims);
    std::vector<double> value_draws;
    for (const auto& rec : records) {
      if (rec.failed) continue;
      if (config.pool_draws) {
        for (std::size_t k = 0; k < rec.max_per_checkpoint[c].size(); ++k) {
          for (int d = 0; d < dims; ++d) {
            psi_draws[d].push_back(rec.argmax_per_checkpoint[c][k](d));
          }
          value_draws.push_back(rec.max_per_checkpoint[c][k]);
        }
      } else {
        // Per-bootstrap medians, then summarize across draws.
        for (int d = 0; d < dims; ++d) {
          std::vector<double> coord;
          for (const auto& v : rec.argmax_per_checkpoint[c]) coord.push_back(v(d));
          psi_draws[d].push_back(median(coord));
        }
        value_draws.push_back(median(rec.max_per_checkpoint[c]));
      }
    }
    if (value_draws.empty()) continue;
    for (int d = 0; d < dims; ++d) cp.psi.push_back(interval(psi_draws[d]));
    cp.value = interval(value_draws);
    cp.pooled_draws = static_cast<long>(value_draws.size());
    result.checkpoints.push_back(std::move(cp));
  }
  for (const auto& rec : records) {
    if (rec.failed) ++result.failed_draws;
  }
  return result;
}

namespace {

BootstrapBaselineResult bootstrap_baseline_impl(const Cohort& cohort, const RegimeFamily& family,
                                                const Eigen::VectorXd& grid_step, int draws,
                                                std::uint64_t master_seed, double p_min,
                                                int workers, bool msm) {
  cohort.validate();
  if (draws < 1) throw std::invalid_argument("bootstrap baseline: draws >= 1");
  // Grid from the box lower corner, inclusive (matches the published coarse
  // grids, e.g. 95 = 50 + 3 x 15).
  Eigen::MatrixXd grid = path_grid(family, grid_step);
  const int dims = family.dims();

  std::vector<std::optional<std::pair<Eigen::VectorXd, double>>> picks(draws);
  run_draws_parallel(draws, workers, [&](int b) {
    try {
      Rng rng(child_seed(master_seed, static_cast<std::uint64_t>(b)));
      Cohort draw = cohort;
      draw.weights =
          draws > 1 ? bayesian_bootstrap_weights(cohort.size(), rng) : uniform_weights(cohort.size());
      const PropensityModel propensity = fit_propensity(draw, StageFeatures{}, p_min);
      const SurfaceFn surface = [&](const Eigen::VectorXd& psi) -> std::optional<double> {
        try {
          return ipw_value(draw, family, psi, propensity);
        } catch (const NoAdherentPatients&) {
          return std::nullopt;
        }
      };
      if (!msm) {
        const GridSearchResult g = grid_search(surface, grid);
        picks[b] = {g.psi, g.value};
        return;
      }
      std::vector<Eigen::Index> kept;
      std::vector<double> vals;
      for (Eigen::Index i = 0; i < grid.rows(); ++i) {
        if (auto v = surface(grid.row(i).transpose())) {
          kept.push_back(i);
          vals.push_back(*v);
        }
      }
      Eigen::MatrixXd pts(kept.size(), dims);
      Eigen::VectorXd y(kept.size());
      for (std::size_t i = 0; i < kept.size(); ++i) {
        pts.row(i) = grid.row(kept[i]);
        y(i) = vals[i];
      }
      const MsmResult m = msm_baseline(pts, y, family.lo, family.hi);
      picks[b] = {m.psi, m.value};
    } catch (const std::exception&) {
      picks[b] = std::nullopt;
    }
  });

  BootstrapBaselineResult out;
  std::vector<std::vector<double>> psi_draws(dims);
  std::vector<double> value_draws;
  for (const auto& p : picks) {
    if (!p) {
      ++out.failed_draws;
      continue;
    }
    for (int d = 0; d < dims; ++d) psi_draws[d].push_back(p->first(d));
    value_draws.push_back(p->second);
  }
  if (value_draws.empty()) throw std::runtime_error("bootstrap baseline: every draw failed");
  for (int d = 0; d < dims; ++d) out.psi.push_back(interval(psi_draws[d]));
  out.value = interval(value_draws);
  return out;
}

}  // namespace

BootstrapBaselineResult bootstrap_grid_baseline(const Cohort& cohort, const RegimeFamily& family,
                                                const Eigen::VectorXd& grid_step, int draws,
                                                std::uint64_t master_seed, double p_min,
                                                int workers) {
  return bootstrap_baseline_impl(cohort, family, grid_step, draws, master_seed, p_min, workers,
                                 /*msm=*/false);
}

BootstrapBaselineResult bootstrap_msm_baseline(const Cohort& cohort, const RegimeFamily& family,
                                               const Eigen::VectorXd& grid_step, int draws,
                                               std::uint64_t master_seed, double p_min,
                                               int workers) {
  return bootstrap_baseline_impl(cohort, family, grid_step, draws, master_seed, p_min, workers,
                                 /*msm=*/true);
}

std::string uncertainty_to_csv(const UncertaintyResult& result) {
  std::ostringstream os;
  os.precision(10);
  os << "checkpoint,quantity,median,q025,q975,draws\n";
  for (const auto& cp : result.checkpoints) {
    for (std::size_t d = 0; d < cp.psi.size(); ++d) {
      os << cp.checkpoint << ",psi" << (d + 1) << ',' << cp.psi[d].median << ',' << cp.psi[d].lo
         << ',' << cp.psi[d].hi << ',' << cp.pooled_draws << '\n';
    }
    os << cp.checkpoint << ",value," << cp.value.median << ',' << cp.value.lo << ','
       << cp.value.hi << ',' << cp.pooled_draws << '\n';
  }
  return os.str();
}

}  // namespace dtrgp

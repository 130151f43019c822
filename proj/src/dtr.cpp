#include "dtrgp/dtr.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

#include "dtrgp/errors.hpp"
#include "dtrgp/stats.hpp"

namespace dtrgp {

void Trajectory::validate() const {
  if (treatments.empty()) throw std::invalid_argument("Trajectory: needs at least one stage");
  if (stage_covariates.size() != treatments.size()) {
    throw std::invalid_argument("Trajectory: stage count mismatch");
  }
  for (int z : treatments) {
    if (z != 0 && z != 1) throw std::invalid_argument("Trajectory: treatments must be 0/1");
  }
  if (!std::isfinite(outcome)) throw std::invalid_argument("Trajectory: non-finite outcome");
  for (const auto& x : stage_covariates) {
    if (!x.allFinite()) throw std::invalid_argument("Trajectory: non-finite covariate");
  }
}

void Cohort::validate() const {
  if (patients.empty()) throw std::invalid_argument("Cohort: empty");
  for (const auto& p : patients) p.validate();
  if (weights) {
    if (weights->size() != size()) throw std::invalid_argument("Cohort: weight size mismatch");
    if ((weights->array() < 0.0).any()) throw std::invalid_argument("Cohort: negative weight");
    if (std::abs(weights->sum() - 1.0) >= 1e-12) {
      throw std::invalid_argument("Cohort: weights must sum to 1");
    }
  }
}

bool RegimeFamily::contains(const Eigen::VectorXd& psi) const {
  if (psi.size() != dims()) return false;
  return (psi.array() >= lo.array()).all() && (psi.array() <= hi.array()).all();
}

RegimeFamily RegimeFamily::threshold_per_stage(std::vector<int> components_per_stage,
                                               Eigen::VectorXd lo, Eigen::VectorXd hi) {
  RegimeFamily f;
  f.kind = Kind::ThresholdPerStage;
  f.stages = static_cast<int>(components_per_stage.size());
  f.components_per_stage = std::move(components_per_stage);
  f.lo = std::move(lo);
  f.hi = std::move(hi);
  int total = 0;
  for (int c : f.components_per_stage) {
    if (c < 1) throw std::invalid_argument("RegimeFamily: component count must be >= 1");
    total += c;
  }
  if (total != f.dims() || f.lo.size() != f.hi.size()) {
    throw std::invalid_argument("RegimeFamily: index dimension mismatch");
  }
  return f;
}

RegimeFamily RegimeFamily::linear_shared_rule(int stages, Eigen::VectorXd lo, Eigen::VectorXd hi) {
  if (lo.size() != 2 || hi.size() != 2) {
    throw std::invalid_argument("RegimeFamily: linear shared rule has a 2-D free index");
  }
  RegimeFamily f;
  f.kind = Kind::LinearSharedRule;
  f.stages = stages;
  f.lo = std::move(lo);
  f.hi = std::move(hi);
  return f;
}

int RegimeFamily::recommend(const Trajectory& traj, int stage, const Eigen::VectorXd& psi) const {
  const Eigen::VectorXd& x = traj.stage_covariates[stage];
  if (kind == Kind::ThresholdPerStage) {
    int offset = 0;
    for (int t = 0; t < stage; ++t) offset += components_per_stage[t];
    const int c = components_per_stage[stage];
    if (x.size() < c) throw std::invalid_argument("RegimeFamily: too few stage covariates");
    for (int j = 0; j < c; ++j) {
      if (!(x(j) > psi(offset + j))) return 0;
    }
    return 1;
  }
  // psi = (psi1, psi3), psi2 = 1 - psi1.
  if (x.size() < 2) throw std::invalid_argument("RegimeFamily: rule needs two stage covariates");
  const double u = traj.baseline.size() > 0 ? traj.baseline(0) : 0.0;
  const double lhs = psi(0) * x(0) + (1.0 - psi(0)) * x(1);
  return lhs > 0.5 - 3.0 * psi(1) * u ? 1 : 0;
}

bool is_adherent(const Trajectory& traj, const RegimeFamily& family, const Eigen::VectorXd& psi) {
  for (int t = 0; t < traj.stages(); ++t) {
    if (traj.treatments[t] != family.recommend(traj, t, psi)) return false;
  }
  return true;
}

Eigen::VectorXd PropensityModel::feature_vector(const Trajectory& traj, int stage) const {
  std::vector<double> f;
  if (features.intercept) f.push_back(1.0);
  if (features.stage_covariates) {
    const Eigen::VectorXd& x = traj.stage_covariates[stage];
    for (Eigen::Index j = 0; j < x.size(); ++j) f.push_back(x(j));
  }
  if (features.prev_treatment && stage > 0) f.push_back(traj.treatments[stage - 1]);
  if (features.baseline_covariates) {
    for (Eigen::Index j = 0; j < traj.baseline.size(); ++j) f.push_back(traj.baseline(j));
  }
  return Eigen::Map<Eigen::VectorXd>(f.data(), static_cast<Eigen::Index>(f.size()));
}

double PropensityModel::prob_treat(const Trajectory& traj, int stage) const {
  const double p = expit(coef[stage].dot(feature_vector(traj, stage)));
  return std::min(std::max(p, p_min), 1.0 - p_min);
}

double PropensityModel::prob_observed(const Trajectory& traj, int stage) const {
  const double p = prob_treat(traj, stage);
  return traj.treatments[stage] == 1 ? p : 1.0 - p;
}

PropensityModel fit_propensity(const Cohort& cohort, const StageFeatures& features, double p_min,
                               int max_iter) {
  cohort.validate();
  const int n = cohort.size();
  const int stages = cohort.patients.front().stages();

  PropensityModel model;
  model.features = features;
  model.p_min = p_min;
  model.coef.resize(stages);

  const double wsum = cohort.weights ? 1.0 : static_cast<double>(n);
  for (int t = 0; t < stages; ++t) {
    model.coef[t] = Eigen::VectorXd::Zero(model.feature_vector(cohort.patients.front(), t).size());
    const int p = static_cast<int>(model.coef[t].size());

    Eigen::MatrixXd x(n, p);
    Eigen::VectorXd z(n), w(n);
    for (int i = 0; i < n; ++i) {
      x.row(i) = model.feature_vector(cohort.patients[i], t).transpose();
      z(i) = cohort.patients[i].treatments[t];
      w(i) = cohort.weight(i) / wsum;  // normalized observation weights
    }

    bool converged = false;
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
    for (int it = 0; it < max_iter; ++it) {
      Eigen::VectorXd eta = x * beta;
      Eigen::VectorXd prob(n), irls(n);
      for (int i = 0; i < n; ++i) {
        prob(i) = expit(eta(i));
        const double pc = std::min(std::max(prob(i), 1e-10), 1.0 - 1e-10);
        irls(i) = w(i) * pc * (1.0 - pc);
      }
      const Eigen::VectorXd score = x.transpose() * (w.array() * (z - prob).array()).matrix();
      if (score.lpNorm<Eigen::Infinity>() < 1e-8) {
        converged = true;
        break;
      }
      const Eigen::MatrixXd h = x.transpose() * irls.asDiagonal() * x;
      const Eigen::LDLT<Eigen::MatrixXd> ldlt(h);
      if (ldlt.info() != Eigen::Success) break;
      const Eigen::VectorXd step = ldlt.solve(score);
      if (!step.allFinite()) break;
      beta += step;
      if (beta.lpNorm<Eigen::Infinity>() > 100.0) break;  // separation runs coefficients out
    }
    if (!converged) {
      throw FitError("fit_propensity: stage " + std::to_string(t + 1) +
                     " did not converge (possible separation)");
    }
    model.coef[t] = beta;
  }
  return model;
}

Eigen::VectorXd bayesian_bootstrap_weights(int n, Rng& rng) {
  if (n < 1) throw std::invalid_argument("bayesian_bootstrap_weights: n >= 1");
  Eigen::VectorXd pi(n);
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    pi(i) = rng.exponential();
    total += pi(i);
  }
  pi /= total;
  return pi;
}

double ipw_value(const Cohort& cohort, const RegimeFamily& family, const Eigen::VectorXd& psi,
                 const PropensityModel& propensity) {
  if (!family.contains(psi)) throw std::invalid_argument("ipw_value: psi outside the index box");
  double num = 0.0, den = 0.0;
  for (int i = 0; i < cohort.size(); ++i) {
    const Trajectory& traj = cohort.patients[i];
    if (!is_adherent(traj, family, psi)) continue;
    double denom = 1.0;
    for (int t = 0; t < traj.stages(); ++t) denom *= propensity.prob_observed(traj, t);
    const double w = cohort.weight(i) / denom;
    num += w * traj.outcome;
    den += w;
  }
  if (!(den > 0.0)) {
    throw NoAdherentPatients("ipw_value: no adherent patients for the requested regime");
  }
  return num / den;
}

std::vector<std::optional<double>> estimation_surface(const Cohort& cohort,
                                                      const RegimeFamily& family,
                                                      const Eigen::MatrixXd& grid,
                                                      const PropensityModel& propensity) {
  std::vector<std::optional<double>> out(grid.rows());
  for (Eigen::Index j = 0; j < grid.rows(); ++j) {
    try {
      out[j] = ipw_value(cohort, family, grid.row(j).transpose(), propensity);
    } catch (const NoAdherentPatients&) {
      out[j] = std::nullopt;
    }
  }
  return out;
}

}  // namespace dtrgp

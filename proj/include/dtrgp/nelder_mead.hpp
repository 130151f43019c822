#pragma once

#include <Eigen/Core>

#include <functional>

namespace dtrgp {

struct SimplexOptions {
  int max_iter = 200;
  double initial_step = 0.5;
  double f_tol = 1e-9;   // spread of simplex values
  double x_tol = 1e-7;   // spread of simplex vertices
};

struct SimplexResult {
  Eigen::VectorXd x;
  double value = 0.0;
  int iterations = 0;
  bool converged = false;
};

// Derivative-free Nelder-Mead simplex minimization. Constraints are the
// caller's business (penalties inside the objective).
SimplexResult nelder_mead(const std::function<double(const Eigen::VectorXd&)>& f,
                          const Eigen::VectorXd& start, const SimplexOptions& opt = {});

}  // namespace dtrgp

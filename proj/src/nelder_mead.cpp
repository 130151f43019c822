#include "dtrgp/nelder_mead.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace dtrgp {

SimplexResult nelder_mead(const std::function<double(const Eigen::VectorXd&)>& f,
                          const Eigen::VectorXd& start, const SimplexOptions& opt) {
  const int n = static_cast<int>(start.size());
  const double alpha = 1.0, gamma = 2.0, rho = 0.5, sigma = 0.5;

  std::vector<Eigen::VectorXd> x(n + 1, start);
  std::vector<double> fx(n + 1);
  for (int i = 0; i < n; ++i) x[i + 1](i) += opt.initial_step;
  for (int i = 0; i <= n; ++i) fx[i] = f(x[i]);

  std::vector<int> ord(n + 1);
  SimplexResult res;
  int it = 0;
  for (; it < opt.max_iter; ++it) {
    std::iota(ord.begin(), ord.end(), 0);
    std::sort(ord.begin(), ord.end(), [&](int a, int b) { return fx[a] < fx[b]; });
    const int best = ord[0], worst = ord[n], second_worst = ord[n - 1];

    double xspread = 0.0;
    for (int i = 1; i <= n; ++i) xspread = std::max(xspread, (x[ord[i]] - x[best]).lpNorm<Eigen::Infinity>());
    if (std::abs(fx[worst] - fx[best]) < opt.f_tol && xspread < opt.x_tol) {
      res.converged = true;
      break;
    }

    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
    for (int i = 0; i <= n; ++i)
      if (i != worst) centroid += x[i];
    centroid /= static_cast<double>(n);

    const Eigen::VectorXd xr = centroid + alpha * (centroid - x[worst]);
    const double fr = f(xr);
    if (fr < fx[best]) {
      const Eigen::VectorXd xe = centroid + gamma * (centroid - x[worst]);
      const double fe = f(xe);
      if (fe < fr) {
        x[worst] = xe;
        fx[worst] = fe;
      } else {
        x[worst] = xr;
        fx[worst] = fr;
      }
    } else if (fr < fx[second_worst]) {
      x[worst] = xr;
      fx[worst] = fr;
    } else {
      const Eigen::VectorXd xc = centroid + rho * (x[worst] - centroid);
      const double fc = f(xc);
      if (fc < fx[worst]) {
        x[worst] = xc;
        fx[worst] = fc;
      } else {
        for (int i = 0; i <= n; ++i) {
          if (i == best) continue;
          x[i] = x[best] + sigma * (x[i] - x[best]);
          fx[i] = f(x[i]);
        }
      }
    }
  }

  int best = 0;
  for (int i = 1; i <= n; ++i)
    if (fx[i] < fx[best]) best = i;
  res.x = x[best];
  res.value = fx[best];
  res.iterations = it;
  return res;
}

}  // namespace dtrgp

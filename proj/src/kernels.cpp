#include "dtrgp/kernels.hpp"

#include <Eigen/Cholesky>

#include <cmath>
#include <stdexcept>

#include "dtrgp/errors.hpp"

namespace dtrgp {

namespace {
constexpr double kSqrt5 = 2.23606797749978969;
constexpr double kSqrt3 = 1.73205080756887729;
}  // namespace

std::string to_string(KernelFamily f) {
  return f == KernelFamily::Matern52 ? "matern52" : "matern32";
}

KernelFamily kernel_family_from_string(const std::string& s) {
  if (s == "matern52" || s == "matern5_2") return KernelFamily::Matern52;
  if (s == "matern32" || s == "matern3_2") return KernelFamily::Matern32;
  throw std::invalid_argument("unknown kernel family: " + s + " (expected matern52 or matern32)");
}

void KernelSpec::validate() const {
  if (length_scales.size() == 0) throw std::invalid_argument("KernelSpec: empty length scales");
  if (!(signal_variance > 0.0)) throw std::invalid_argument("KernelSpec: signal variance must be positive");
  for (Eigen::Index d = 0; d < length_scales.size(); ++d) {
    if (!(length_scales(d) > 0.0)) throw std::invalid_argument("KernelSpec: length scale must be positive");
  }
}

double matern_correlation(KernelFamily family, double r) {
  if (family == KernelFamily::Matern52) {
    const double t = kSqrt5 * r;
    return (1.0 + t + 5.0 * r * r / 3.0) * std::exp(-t);
  }
  const double t = kSqrt3 * r;
  return (1.0 + t) * std::exp(-t);
}

double kernel_eval(const KernelSpec& spec, const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != spec.length_scales.size() || b.size() != spec.length_scales.size()) {
    throw std::invalid_argument("kernel_eval: dimension mismatch");
  }
  double c = 1.0;
  for (Eigen::Index d = 0; d < a.size(); ++d) {
    c *= matern_correlation(spec.family, std::abs(a(d) - b(d)) / spec.length_scales(d));
  }
  return spec.signal_variance * c;
}

namespace {

// The exponential factorizes across dimensions into exp of a summed scaled
// distance; the polynomial part stays a per-dimension product. One exp per
// entry regardless of D.
inline double product_correlation(KernelFamily family, const double* a, const double* b,
                                  const double* inv_theta, int dims) {
  double poly = 1.0;
  double t = 0.0;
  if (family == KernelFamily::Matern52) {
    for (int d = 0; d < dims; ++d) {
      const double r = std::abs(a[d] - b[d]) * inv_theta[d];
      const double u = kSqrt5 * r;
      poly *= 1.0 + u + 5.0 * r * r / 3.0;
      t += u;
    }
  } else {
    for (int d = 0; d < dims; ++d) {
      const double r = std::abs(a[d] - b[d]) * inv_theta[d];
      const double u = kSqrt3 * r;
      poly *= 1.0 + u;
      t += u;
    }
  }
  return poly * std::exp(-t);
}

}  // namespace

Eigen::MatrixXd kernel_matrix(const KernelSpec& spec, const Eigen::MatrixXd& points) {
  const int m = static_cast<int>(points.rows());
  const int dims = spec.dims();
  if (points.cols() != dims) throw std::invalid_argument("kernel_matrix: dimension mismatch");

  Eigen::VectorXd inv_theta = spec.length_scales.cwiseInverse();
  Eigen::MatrixXd pt = points.transpose();  // column-major: one contiguous column per point
  Eigen::MatrixXd k(m, m);
  for (int i = 0; i < m; ++i) {
    k(i, i) = spec.signal_variance;
    for (int j = 0; j < i; ++j) {
      const double v = spec.signal_variance *
                       product_correlation(spec.family, pt.col(i).data(), pt.col(j).data(),
                                           inv_theta.data(), dims);
      k(i, j) = v;
      k(j, i) = v;
    }
  }
  return k;
}

Eigen::MatrixXd cross_kernel_matrix(const KernelSpec& spec, const Eigen::MatrixXd& q,
                                    const Eigen::MatrixXd& p) {
  const int dims = spec.dims();
  if (q.cols() != dims || p.cols() != dims) {
    throw std::invalid_argument("cross_kernel_matrix: dimension mismatch");
  }
  Eigen::VectorXd inv_theta = spec.length_scales.cwiseInverse();
  Eigen::MatrixXd qt = q.transpose();
  Eigen::MatrixXd ptr = p.transpose();
  Eigen::MatrixXd k(q.rows(), p.rows());
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    for (Eigen::Index j = 0; j < p.rows(); ++j) {
      k(i, j) = spec.signal_variance *
                product_correlation(spec.family, qt.col(i).data(), ptr.col(j).data(),
                                    inv_theta.data(), dims);
    }
  }
  return k;
}

CholeskyResult cholesky_with_jitter(const Eigen::MatrixXd& a, double scale,
                                    const std::string& label, const JitterPolicy& policy) {
  const Eigen::Index m = a.rows();
  double jitter = policy.initial_rel * scale;
  const double max_jitter = policy.max_rel * scale;
  Eigen::LLT<Eigen::MatrixXd> llt;
  while (true) {
    Eigen::MatrixXd work = a;
    work.diagonal().array() += jitter;
    llt.compute(work);
    if (llt.info() == Eigen::Success) {
      return CholeskyResult{Eigen::MatrixXd(llt.matrixL()), jitter};
    }
    if (jitter >= max_jitter) break;
    jitter = std::min(jitter * policy.escalation, max_jitter);
  }
  throw NumericalError("Cholesky factorization failed for " + label + " (m=" + std::to_string(m) +
                       ") after jitter escalation to " + std::to_string(max_jitter));
}

}  // namespace dtrgp

#pragma once

#include <Eigen/Core>

#include <string>

namespace dtrgp {

enum class KernelFamily { Matern52, Matern32 };

std::string to_string(KernelFamily f);
KernelFamily kernel_family_from_string(const std::string& s);

// Stationary product-Matern covariance. Length scales are in the same units
// as the regime index (one per dimension).
struct KernelSpec {
  KernelFamily family = KernelFamily::Matern52;
  Eigen::VectorXd length_scales;  // theta_fd > 0
  double signal_variance = 1.0;   // sigma_f^2 > 0

  int dims() const { return static_cast<int>(length_scales.size()); }
  void validate() const;  // throws std::invalid_argument
};

// One-dimensional Matern correlation at scaled distance r = |delta| / theta.
double matern_correlation(KernelFamily family, double r);

// k(a, b) = sigma_f^2 * prod_d c(|a_d - b_d| / theta_d).
double kernel_eval(const KernelSpec& spec, const Eigen::VectorXd& a, const Eigen::VectorXd& b);

// m x m kernel matrix, diagonal exactly sigma_f^2 (no jitter here; the
// factorization layer owns the jitter policy).
Eigen::MatrixXd kernel_matrix(const KernelSpec& spec, const Eigen::MatrixXd& points);

// rows(q) x rows(p) cross-covariance k(q_i, p_j).
Eigen::MatrixXd cross_kernel_matrix(const KernelSpec& spec, const Eigen::MatrixXd& q,
                                    const Eigen::MatrixXd& p);

// Jitter policy: starting at 1e-10 * sigma_f^2, escalate x10 until the
// Cholesky succeeds, giving up past 1e-4 * sigma_f^2.
struct JitterPolicy {
  double initial_rel = 1e-10;
  double max_rel = 1e-4;
  double escalation = 10.0;
};

struct CholeskyResult {
  Eigen::MatrixXd lower;  // L with L L^T = A + jitter * I
  double jitter = 0.0;
};

// Factorize a symmetric PSD matrix with the escalating-jitter policy. `scale`
// is the variance that calibrates the relative jitter (usually sigma_f^2).
// Throws NumericalError naming `label` if the policy is exhausted.
CholeskyResult cholesky_with_jitter(const Eigen::MatrixXd& a, double scale,
                                    const std::string& label,
                                    const JitterPolicy& policy = {});

}  // namespace dtrgp

#pragma once

#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace gpens {

enum class BaseKernelKind { RBF, Laplacian, Matern52 };

std::string to_string(BaseKernelKind kind);
BaseKernelKind parse_base_kernel(const std::string& name);

/// Base kernel on already-scaled inputs. All three have unit amplitude:
///   RBF        exp(-||a-b||_2^2 / 2)
///   Laplacian  exp(-||a-b||_1)
///   Matern52   (1 + sqrt5 r + 5 r^2 / 3) exp(-sqrt5 r),  r = ||a-b||_2
double base_kernel_eval(BaseKernelKind kind, std::span<const double> a, std::span<const double> b);

/// One pre-trained model's kernel: the base kernel applied to l o g(x), with
/// l = exp(log_lengthscales). With `scalar_constraint` every entry of
/// log_lengthscales holds the same value and is tuned as a single parameter.
struct DeepKernelSpec {
  std::string model_id;
  BaseKernelKind kind = BaseKernelKind::RBF;
  Eigen::VectorXd log_lengthscales;
  bool scalar_constraint = false;

  Eigen::Index dim() const { return log_lengthscales.size(); }
  /// Number of free parameters (1 when tied).
  Eigen::Index num_params() const { return scalar_constraint ? 1 : dim(); }
  void validate() const;
};

double deep_kernel_eval(const DeepKernelSpec& spec, std::span<const double> ga, std::span<const double> gb);

/// Gram matrix of one deep kernel between the rows of `a` and `b`.
Eigen::MatrixXd deep_kernel_gram(const DeepKernelSpec& spec, const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

/// Symmetric self-gram; the diagonal is exactly 1.
Eigen::MatrixXd deep_kernel_gram(const DeepKernelSpec& spec, const Eigen::MatrixXd& a);

/// Sum of the K deep-kernel grams, row p from a[i], column q from b[i].
Eigen::MatrixXd ensemble_gram(std::span<const DeepKernelSpec> specs, std::span<const Eigen::MatrixXd> a,
                              std::span<const Eigen::MatrixXd> b);

/// Symmetric self-gram with diagonal exactly K.
Eigen::MatrixXd ensemble_gram(std::span<const DeepKernelSpec> specs, std::span<const Eigen::MatrixXd> a);

/// sum_{p,q} weights(p,q) * d k(x_p, x_q) / d log_lengthscales, for the
/// self-gram of `x`. `weights` must be symmetric. Returns num_params() values.
Eigen::VectorXd deep_kernel_gradient(const DeepKernelSpec& spec, const Eigen::MatrixXd& x,
                                     const Eigen::MatrixXd& weights);

/// Thread count for gram construction, from GPENS_THREADS (default 1).
unsigned worker_threads();

}  // namespace gpens

#pragma once

#include <vector>

#include <Eigen/Core>

#include "gpens/kernels.hpp"
#include "gpens/meanfn.hpp"

namespace gpens {

inline constexpr double kMinNoiseVariance = 1e-8;
inline constexpr double kJitterStart = 1e-8;
inline constexpr double kJitterMax = 1e-3;

/// Features of a set of points: one matrix per kernel model plus the
/// mean-model's features used by the prior mean.
struct FeatureSet {
  std::vector<Eigen::MatrixXd> kernel;
  Eigen::MatrixXd mean;

  Eigen::Index rows() const { return kernel.empty() ? mean.rows() : kernel.front().rows(); }
};

/// Concatenates the rows of two feature sets.
FeatureSet stack(const FeatureSet& top, const FeatureSet& bottom);

/// All tunable quantities: noise variance, K length-scale vectors, and the
/// prior mean's parameters. Everything positive is stored as a log.
struct HyperParams {
  double log_sigma2 = 0.0;
  std::vector<DeepKernelSpec> kernels;
  MeanSpec mean = ZeroMean{};

  /// exp(log_sigma2), floored at kMinNoiseVariance.
  double sigma2() const;
  std::size_t num_models() const { return kernels.size(); }
};

/// Prior mean at the points of `x` (mean features are only read by the
/// zero-shot variant).
Eigen::MatrixXd prior_mean(const HyperParams& hyper, const FeatureSet& x, Eigen::Index num_classes);

struct Cholesky {
  Eigen::MatrixXd lower;
  double jitter = 0.0;  // diagonal increment that made the factorization succeed

  double log_det() const;
  Eigen::MatrixXd solve(const Eigen::MatrixXd& rhs) const;
  /// lower^{-1} rhs
  Eigen::MatrixXd half_solve(const Eigen::MatrixXd& rhs) const;
  Eigen::MatrixXd inverse() const;
};

/// LLT of a symmetric matrix. On failure retries with jitter 1e-8, 2e-8, ...
/// added to the diagonal while jitter <= 1e-3, then throws CholeskyFailure.
Cholesky robust_cholesky(const Eigen::MatrixXd& a);

/// Gaussian log density sum_c log N(residual_c; 0, A) given chol(A).
double gaussian_log_density(const Cholesky& chol, const Eigen::MatrixXd& residual);

struct Prediction {
  Eigen::MatrixXd mean;      // M x C
  Eigen::VectorXd variance;  // M, shared by all C outputs
};

/// Immutable posterior state after conditioning on (X, Y).
class FittedGp {
 public:
  const HyperParams& hyper() const { return hyper_; }
  const Cholesky& chol() const { return chol_; }
  const Eigen::MatrixXd& resid_weights() const { return resid_weights_; }
  const FeatureSet& train() const { return train_; }
  Eigen::Index num_train() const { return train_.rows(); }
  Eigen::Index num_classes() const { return num_classes_; }

 private:
  friend FittedGp gp_condition(const HyperParams&, const FeatureSet&, const Eigen::MatrixXd&);

  HyperParams hyper_;
  Cholesky chol_;
  Eigen::MatrixXd resid_weights_;  // A^{-1} (Y - m_X)
  FeatureSet train_;
  Eigen::Index num_classes_ = 0;
};

/// Conditions the GP prior on N training points; N = 0 gives the prior.
FittedGp gp_condition(const HyperParams& hyper, const FeatureSet& train, const Eigen::MatrixXd& targets);

/// Posterior mean and the diagonal of the posterior covariance, clamped at 0.
Prediction gp_predict(const FittedGp& fit, const FeatureSet& test);

/// Full posterior covariance of f at the test points (without noise).
Eigen::MatrixXd gp_predict_covariance(const FittedGp& fit, const FeatureSet& test);

/// Full normalized Gaussian log marginal likelihood of Y (N >= 1).
double log_marginal_likelihood(const HyperParams& hyper, const FeatureSet& train, const Eigen::MatrixXd& targets);

enum class PredictiveCovariance { Full, Diagonal };

/// log p(Y_val | X_val, X, Y) = sum_c log N(y_c; E[f_c], cov(f) + sigma2 I).
/// Diagonal keeps only the per-point variances of cov(f).
double log_predictive_likelihood(const FittedGp& fit, const FeatureSet& val, const Eigen::MatrixXd& val_targets,
                                 PredictiveCovariance covariance = PredictiveCovariance::Full);

}  // namespace gpens

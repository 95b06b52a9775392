#include "gpens/gpcore.hpp"

#include <cmath>
#include <numbers>
#include <optional>

#include <Eigen/Cholesky>
#include <fmt/core.h>

#include "gpens/error.hpp"

namespace gpens {
namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

void check_features(const HyperParams& hyper, const FeatureSet& x, const char* what) {
  if (x.kernel.size() != hyper.kernels.size())
    throw Error(ErrorKind::ModelCountMismatch,
                fmt::format("{}: {} feature matrices for {} kernels", what, x.kernel.size(), hyper.kernels.size()));
  for (std::size_t i = 0; i < x.kernel.size(); ++i)
    if (x.kernel[i].cols() != hyper.kernels[i].dim() || x.kernel[i].rows() != x.rows())
      throw Error(ErrorKind::DimensionMismatch,
                  fmt::format("{}: model {} features are {}x{}, expected D={}", what, hyper.kernels[i].model_id,
                              x.kernel[i].rows(), x.kernel[i].cols(), hyper.kernels[i].dim()));
  if (x.mean.rows() != x.rows() && mean_kind(hyper.mean) == MeanKind::ZeroShotSoftmax)
    throw Error(ErrorKind::DimensionMismatch, fmt::format("{}: mean features have the wrong row count", what));
}

}  // namespace

Eigen::MatrixXd prior_mean(const HyperParams& hyper, const FeatureSet& x, Eigen::Index num_classes) {
  if (mean_kind(hyper.mean) == MeanKind::ZeroShotSoftmax) return mean_eval(hyper.mean, x.mean, num_classes);
  return mean_eval(hyper.mean, Eigen::MatrixXd(x.rows(), 0), num_classes);
}

namespace {

Eigen::MatrixXd self_covariance(const HyperParams& hyper, const FeatureSet& x) {
  return ensemble_gram(hyper.kernels, x.kernel);
}

Eigen::MatrixXd noisy_covariance(const HyperParams& hyper, const FeatureSet& x) {
  Eigen::MatrixXd a = self_covariance(hyper, x);
  a.diagonal().array() += hyper.sigma2();
  return a;
}

}  // namespace

FeatureSet stack(const FeatureSet& top, const FeatureSet& bottom) {
  if (top.kernel.size() != bottom.kernel.size())
    throw Error(ErrorKind::ModelCountMismatch, "cannot stack feature sets with different model counts");
  FeatureSet out;
  auto vstack = [](const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    if (a.rows() == 0) return b;
    if (b.rows() == 0) return a;
    if (a.cols() != b.cols()) throw Error(ErrorKind::DimensionMismatch, "cannot stack features of different D");
    Eigen::MatrixXd m(a.rows() + b.rows(), a.cols());
    m << a, b;
    return m;
  };
  for (std::size_t i = 0; i < top.kernel.size(); ++i) out.kernel.push_back(vstack(top.kernel[i], bottom.kernel[i]));
  out.mean = vstack(top.mean, bottom.mean);
  return out;
}

double HyperParams::sigma2() const { return std::max(std::exp(log_sigma2), kMinNoiseVariance); }

double Cholesky::log_det() const { return 2.0 * lower.diagonal().array().log().sum(); }

Eigen::MatrixXd Cholesky::half_solve(const Eigen::MatrixXd& rhs) const {
  return lower.triangularView<Eigen::Lower>().solve(rhs);
}

Eigen::MatrixXd Cholesky::solve(const Eigen::MatrixXd& rhs) const {
  return lower.transpose().triangularView<Eigen::Upper>().solve(half_solve(rhs));
}

Eigen::MatrixXd Cholesky::inverse() const {
  return solve(Eigen::MatrixXd::Identity(lower.rows(), lower.rows()));
}

Cholesky robust_cholesky(const Eigen::MatrixXd& a) {
  if (!a.allFinite()) throw Error(ErrorKind::CholeskyFailure, "matrix has non-finite entries");
  auto attempt = [](const Eigen::MatrixXd& m, double jitter) -> std::optional<Cholesky> {
    Eigen::LLT<Eigen::MatrixXd> llt(m);
    if (llt.info() != Eigen::Success) return std::nullopt;
    Eigen::MatrixXd lower = llt.matrixL();
    if (!(lower.diagonal().array() > 0.0).all() || !lower.allFinite()) return std::nullopt;
    return Cholesky{std::move(lower), jitter};
  };
  if (auto c = attempt(a, 0.0)) return std::move(*c);
  for (double jitter = kJitterStart; jitter <= kJitterMax; jitter *= 2.0) {
    Eigen::MatrixXd shifted = a;
    shifted.diagonal().array() += jitter;
    if (auto c = attempt(shifted, jitter)) return std::move(*c);
  }
  throw Error(ErrorKind::CholeskyFailure,
              fmt::format("{}x{} matrix not positive definite after jitter up to {:g}", a.rows(), a.cols(), kJitterMax));
}

double gaussian_log_density(const Cholesky& chol, const Eigen::MatrixXd& residual) {
  const Eigen::MatrixXd half = chol.half_solve(residual);
  const double n = static_cast<double>(residual.rows()), c = static_cast<double>(residual.cols());
  return -0.5 * half.squaredNorm() - 0.5 * c * chol.log_det() - 0.5 * n * c * kLog2Pi;
}

FittedGp gp_condition(const HyperParams& hyper, const FeatureSet& train, const Eigen::MatrixXd& targets) {
  check_features(hyper, train, "training set");
  if (targets.rows() != train.rows())
    throw Error(ErrorKind::DimensionMismatch,
                fmt::format("{} targets for {} training points", targets.rows(), train.rows()));
  FittedGp fit;
  fit.hyper_ = hyper;
  fit.train_ = train;
  fit.num_classes_ = targets.cols();
  if (train.rows() > 0) {
    fit.chol_ = robust_cholesky(noisy_covariance(hyper, train));
    const Eigen::MatrixXd residual = targets - prior_mean(hyper, train, targets.cols());
    fit.resid_weights_ = fit.chol_.solve(residual);
  } else {
    fit.resid_weights_.resize(0, targets.cols());
  }
  return fit;
}

Prediction gp_predict(const FittedGp& fit, const FeatureSet& test) {
  const HyperParams& hyper = fit.hyper();
  check_features(hyper, test, "test set");
  Prediction out;
  out.mean = prior_mean(hyper, test, fit.num_classes());
  out.variance = Eigen::VectorXd::Constant(test.rows(), static_cast<double>(hyper.num_models()));
  if (fit.num_train() == 0) return out;

  const Eigen::MatrixXd cross = ensemble_gram(hyper.kernels, fit.train().kernel, test.kernel);  // N x M
  out.mean += cross.transpose() * fit.resid_weights();
  const Eigen::MatrixXd half = fit.chol().half_solve(cross);
  out.variance -= half.colwise().squaredNorm().transpose();
  out.variance = out.variance.cwiseMax(0.0);
  return out;
}

Eigen::MatrixXd gp_predict_covariance(const FittedGp& fit, const FeatureSet& test) {
  const HyperParams& hyper = fit.hyper();
  check_features(hyper, test, "test set");
  Eigen::MatrixXd cov = self_covariance(hyper, test);
  if (fit.num_train() == 0) return cov;
  const Eigen::MatrixXd cross = ensemble_gram(hyper.kernels, fit.train().kernel, test.kernel);
  const Eigen::MatrixXd half = fit.chol().half_solve(cross);
  cov -= half.transpose() * half;
  return 0.5 * (cov + cov.transpose());
}

double log_marginal_likelihood(const HyperParams& hyper, const FeatureSet& train, const Eigen::MatrixXd& targets) {
  check_features(hyper, train, "training set");
  if (train.rows() == 0) throw Error(ErrorKind::EmptyInput, "marginal likelihood needs at least one point");
  if (targets.rows() != train.rows())
    throw Error(ErrorKind::DimensionMismatch,
                fmt::format("{} targets for {} training points", targets.rows(), train.rows()));
  const Cholesky chol = robust_cholesky(noisy_covariance(hyper, train));
  return gaussian_log_density(chol, targets - prior_mean(hyper, train, targets.cols()));
}

double log_predictive_likelihood(const FittedGp& fit, const FeatureSet& val, const Eigen::MatrixXd& val_targets,
                                 PredictiveCovariance covariance) {
  if (val.rows() == 0) throw Error(ErrorKind::EmptyInput, "predictive likelihood needs validation points");
  if (val_targets.rows() != val.rows() || val_targets.cols() != fit.num_classes())
    throw Error(ErrorKind::DimensionMismatch,
                fmt::format("validation targets are {}x{}, expected {}x{}", val_targets.rows(), val_targets.cols(),
                            val.rows(), fit.num_classes()));
  const Prediction pred = gp_predict(fit, val);
  const Eigen::MatrixXd residual = val_targets - pred.mean;
  const double noise = fit.hyper().sigma2();

  if (covariance == PredictiveCovariance::Diagonal) {
    const Eigen::ArrayXd var = pred.variance.array() + noise;
    const double c = static_cast<double>(residual.cols());
    return -0.5 * (residual.array().square().colwise() / var).sum() - 0.5 * c * var.log().sum() -
           0.5 * static_cast<double>(residual.size()) * kLog2Pi;
  }
  Eigen::MatrixXd cov = gp_predict_covariance(fit, val);
  cov.diagonal().array() += noise;
  return gaussian_log_density(robust_cholesky(cov), residual);
}

}  // namespace gpens

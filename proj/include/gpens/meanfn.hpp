#pragma once

#include <memory>
#include <string>
#include <variant>

#include <Eigen/Core>

namespace gpens {

struct ZeroMean {};

struct ConstantMean {
  Eigen::VectorXd value;  // length C, broadcast to every row
};

/// gamma * softmax(tau * g(x)^T w), with tau and gamma stored in log space.
struct ZeroShotSoftmaxMean {
  double log_tau = 0.0;
  double log_gamma = 0.0;
  std::shared_ptr<const Eigen::MatrixXd> head;  // D x C, unit-norm columns
};

using MeanSpec = std::variant<ZeroMean, ConstantMean, ZeroShotSoftmaxMean>;

enum class MeanKind { Zero, Constant, ZeroShotSoftmax };
MeanKind mean_kind(const MeanSpec& spec);
std::string to_string(MeanKind kind);
MeanKind parse_mean_kind(const std::string& name);

/// Number of tunable parameters: 0, C, or 2 (log_tau, log_gamma).
Eigen::Index mean_num_params(const MeanSpec& spec);

/// M x C prior mean for the rows of `features` (the mean-model's features).
/// `num_classes` sizes the Zero variant's output.
Eigen::MatrixXd mean_eval(const MeanSpec& spec, const Eigen::MatrixXd& features, Eigen::Index num_classes);

/// sum_{n,c} upstream(n,c) * d mean(n,c) / d params, in parameter order
/// (ConstantMean: c_0..c_{C-1}; ZeroShotSoftmax: log_tau, log_gamma).
Eigen::VectorXd mean_gradient(const MeanSpec& spec, const Eigen::MatrixXd& features, const Eigen::MatrixXd& upstream);

}  // namespace gpens

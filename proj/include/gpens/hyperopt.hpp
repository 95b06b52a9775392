#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "gpens/gpcore.hpp"

namespace gpens {

enum class Objective { MarginalLikelihood, PredictiveLikelihood };
enum class RefitOn { Train, TrainVal };

std::string to_string(Objective objective);
Objective parse_objective(const std::string& name);
std::string to_string(RefitOn refit);
RefitOn parse_refit_on(const std::string& name);

struct OptimConfig {
  Objective objective = Objective::PredictiveLikelihood;
  int steps = 100;
  double learning_rate = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
  RefitOn refit_on = RefitOn::TrainVal;

  void validate() const;
};

struct TraceEntry {
  double objective = 0.0;  // value before this step's update
  double grad_norm = 0.0;
  double learning_rate = 0.0;
};

struct OptimTrace {
  std::vector<TraceEntry> steps;
  double final_objective = 0.0;  // value after the last update
  int lr_halvings = 0;
};

/// Training (and optionally validation) data in the form the GP consumes.
struct GpTask {
  FeatureSet train;
  Eigen::MatrixXd train_targets;
  FeatureSet val;
  Eigen::MatrixXd val_targets;
  Eigen::Index num_classes = 0;
};

/// What init_hyperparams needs to know about the models and the mean.
struct HyperParamShape {
  std::vector<std::string> model_ids;
  std::vector<Eigen::Index> dims;
  BaseKernelKind kind = BaseKernelKind::RBF;
  bool scalar_lengthscale = false;
  MeanKind mean = MeanKind::ZeroShotSoftmax;
  Eigen::Index num_classes = 0;
  std::shared_ptr<const Eigen::MatrixXd> head;  // required for ZeroShotSoftmax
};

inline constexpr double kInitNoiseVariance = 0.01;
inline constexpr double kInitTemperature = 100.0;
inline constexpr double kInitScale = 1.0;
inline constexpr double kInitLogLengthscaleStd = 0.5;

/// sigma2 = 0.01, tau = 100, gamma = 1, log length-scales ~ N(0, 0.5^2)
/// (one shared draw per model when tied), constant mean = 0.
HyperParams init_hyperparams(const HyperParamShape& shape, std::uint64_t seed);

/// Flat unconstrained parameter vector:
/// [log_sigma2 | kernel 0 | ... | kernel K-1 | mean parameters].
Eigen::VectorXd flatten(const HyperParams& hyper);
HyperParams unflatten(const HyperParams& like, const Eigen::VectorXd& theta);
Eigen::Index num_params(const HyperParams& hyper);

struct ObjectiveValue {
  double value = 0.0;
  Eigen::VectorXd gradient;  // aligned with flatten()
};

/// Log marginal likelihood and its exact gradient w.r.t. flatten(hyper).
ObjectiveValue log_marginal_likelihood_and_gradient(const HyperParams& hyper, const FeatureSet& train,
                                                    const Eigen::MatrixXd& targets);

/// Value of the selected objective on `task`.
double objective_value(Objective objective, const HyperParams& hyper, const GpTask& task);

/// Value and exact gradient. The predictive gradient uses
/// log p(Y_val | Y) = log p(Y_val, Y) - log p(Y).
ObjectiveValue objective_and_gradient(Objective objective, const HyperParams& hyper, const GpTask& task);

/// lr0 * (1 + cos(pi * step / steps)) / 2 for step in [0, steps).
double cosine_learning_rate(double lr0, int step, int steps);

struct FitResult {
  HyperParams hyper;
  FittedGp gp;
  OptimTrace trace;
};

/// Runs `steps` Adam ascent updates from `init`, then conditions the GP on
/// the training split (or train + val, per config.refit_on, when the
/// objective is the predictive likelihood).
FitResult fit(const OptimConfig& config, const HyperParams& init, const GpTask& task);

/// Conditions on the data the final model should see under `refit_on`.
FittedGp condition_final(Objective objective, RefitOn refit_on, const HyperParams& hyper, const GpTask& task);

}  // namespace gpens

#include "gpens/hyperopt.hpp"

#include <cmath>
#include <numbers>

#include <fmt/core.h>

#include "gpens/error.hpp"
#include "gpens/rng.hpp"

namespace gpens {
namespace {

constexpr std::uint64_t kLengthscaleSalt = 0x6C656E6774687363ULL;

struct AdamState {
  Eigen::VectorXd theta, m, v;
};

}  // namespace

std::string to_string(Objective objective) {
  return objective == Objective::MarginalLikelihood ? "marginal" : "predictive";
}

Objective parse_objective(const std::string& name) {
  if (name == "marginal") return Objective::MarginalLikelihood;
  if (name == "predictive") return Objective::PredictiveLikelihood;
  throw Error(ErrorKind::InvalidArgument, "unknown objective '" + name + "'");
}

std::string to_string(RefitOn refit) { return refit == RefitOn::Train ? "train" : "train+val"; }

RefitOn parse_refit_on(const std::string& name) {
  if (name == "train") return RefitOn::Train;
  if (name == "train+val") return RefitOn::TrainVal;
  throw Error(ErrorKind::InvalidArgument, "unknown refit mode '" + name + "'");
}

void OptimConfig::validate() const {
  if (steps < 1) throw Error(ErrorKind::InvalidArgument, "steps must be at least 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    throw Error(ErrorKind::InvalidArgument, "learning rate must be positive");
}

HyperParams init_hyperparams(const HyperParamShape& shape, std::uint64_t seed) {
  if (shape.model_ids.size() != shape.dims.size())
    throw Error(ErrorKind::ModelCountMismatch, "model ids and dimensions differ in length");
  HyperParams hyper;
  hyper.log_sigma2 = std::log(kInitNoiseVariance);
  for (std::size_t i = 0; i < shape.dims.size(); ++i) {
    SplitMix64 rng = SplitMix64::stream(seed ^ kLengthscaleSalt, i);
    DeepKernelSpec spec;
    spec.model_id = shape.model_ids[i];
    spec.kind = shape.kind;
    spec.scalar_constraint = shape.scalar_lengthscale;
    spec.log_lengthscales.resize(shape.dims[i]);
    if (shape.scalar_lengthscale) {
      spec.log_lengthscales.setConstant(kInitLogLengthscaleStd * rng.normal());
    } else {
      for (Eigen::Index d = 0; d < shape.dims[i]; ++d) spec.log_lengthscales[d] = kInitLogLengthscaleStd * rng.normal();
    }
    hyper.kernels.push_back(std::move(spec));
  }
  switch (shape.mean) {
    case MeanKind::Zero: hyper.mean = ZeroMean{}; break;
    case MeanKind::Constant: hyper.mean = ConstantMean{Eigen::VectorXd::Zero(shape.num_classes)}; break;
    case MeanKind::ZeroShotSoftmax:
      if (!shape.head) throw Error(ErrorKind::InvalidArgument, "zero-shot mean requested without a head");
      hyper.mean = ZeroShotSoftmaxMean{std::log(kInitTemperature), std::log(kInitScale), shape.head};
      break;
  }
  return hyper;
}

Eigen::Index num_params(const HyperParams& hyper) {
  Eigen::Index n = 1;
  for (const auto& k : hyper.kernels) n += k.num_params();
  return n + mean_num_params(hyper.mean);
}

Eigen::VectorXd flatten(const HyperParams& hyper) {
  Eigen::VectorXd theta(num_params(hyper));
  Eigen::Index at = 0;
  theta[at++] = hyper.log_sigma2;
  for (const auto& k : hyper.kernels) {
    if (k.scalar_constraint) {
      theta[at++] = k.log_lengthscales[0];
    } else {
      theta.segment(at, k.dim()) = k.log_lengthscales;
      at += k.dim();
    }
  }
  if (const auto* c = std::get_if<ConstantMean>(&hyper.mean)) {
    theta.segment(at, c->value.size()) = c->value;
  } else if (const auto* z = std::get_if<ZeroShotSoftmaxMean>(&hyper.mean)) {
    theta[at] = z->log_tau;
    theta[at + 1] = z->log_gamma;
  }
  return theta;
}

HyperParams unflatten(const HyperParams& like, const Eigen::VectorXd& theta) {
  if (theta.size() != num_params(like))
    throw Error(ErrorKind::DimensionMismatch,
                fmt::format("parameter vector has {} entries, expected {}", theta.size(), num_params(like)));
  HyperParams out = like;
  Eigen::Index at = 0;
  out.log_sigma2 = theta[at++];
  for (auto& k : out.kernels) {
    if (k.scalar_constraint) {
      k.log_lengthscales.setConstant(theta[at++]);
    } else {
      k.log_lengthscales = theta.segment(at, k.dim());
      at += k.dim();
    }
  }
  if (auto* c = std::get_if<ConstantMean>(&out.mean)) {
    c->value = theta.segment(at, c->value.size());
  } else if (auto* z = std::get_if<ZeroShotSoftmaxMean>(&out.mean)) {
    z->log_tau = theta[at];
    z->log_gamma = theta[at + 1];
  }
  return out;
}

ObjectiveValue log_marginal_likelihood_and_gradient(const HyperParams& hyper, const FeatureSet& train,
                                                    const Eigen::MatrixXd& targets) {
  if (train.rows() == 0) throw Error(ErrorKind::EmptyInput, "marginal likelihood needs at least one point");
  const double noise = hyper.sigma2();
  Eigen::MatrixXd a = ensemble_gram(hyper.kernels, train.kernel);
  a.diagonal().array() += noise;
  const Cholesky chol = robust_cholesky(a);
  const Eigen::MatrixXd residual = targets - prior_mean(hyper, train, targets.cols());

  ObjectiveValue out;
  out.value = gaussian_log_density(chol, residual);

  // dL/dA = (W W^T - C A^{-1}) / 2 with W = A^{-1} R;  dL/dm_X = W.
  const Eigen::MatrixXd w = chol.solve(residual);
  Eigen::MatrixXd g = 0.5 * (w * w.transpose() - static_cast<double>(targets.cols()) * chol.inverse());
  g = 0.5 * (g + g.transpose());

  out.gradient.resize(num_params(hyper));
  Eigen::Index at = 0;
  out.gradient[at++] = std::exp(hyper.log_sigma2) >= kMinNoiseVariance ? noise * g.trace() : 0.0;
  for (std::size_t i = 0; i < hyper.kernels.size(); ++i) {
    const Eigen::VectorXd gk = deep_kernel_gradient(hyper.kernels[i], train.kernel[i], g);
    out.gradient.segment(at, gk.size()) = gk;
    at += gk.size();
  }
  const Eigen::VectorXd gm = mean_gradient(hyper.mean, train.mean, w);
  out.gradient.segment(at, gm.size()) = gm;
  return out;
}

double objective_value(Objective objective, const HyperParams& hyper, const GpTask& task) {
  if (objective == Objective::MarginalLikelihood)
    return log_marginal_likelihood(hyper, task.train, task.train_targets);
  const FittedGp fit = gp_condition(hyper, task.train, task.train_targets);
  return log_predictive_likelihood(fit, task.val, task.val_targets);
}

ObjectiveValue objective_and_gradient(Objective objective, const HyperParams& hyper, const GpTask& task) {
  ObjectiveValue out;
  if (objective == Objective::MarginalLikelihood) {
    out = log_marginal_likelihood_and_gradient(hyper, task.train, task.train_targets);
  } else {
    if (task.val.rows() == 0)
      throw Error(ErrorKind::EmptyInput, "predictive likelihood needs a non-empty validation split");
    const FeatureSet joint = stack(task.train, task.val);
    Eigen::MatrixXd joint_targets(task.train_targets.rows() + task.val_targets.rows(), task.val_targets.cols());
    joint_targets << task.train_targets, task.val_targets;
    out.gradient = log_marginal_likelihood_and_gradient(hyper, joint, joint_targets).gradient;
    if (task.train.rows() > 0)
      out.gradient -= log_marginal_likelihood_and_gradient(hyper, task.train, task.train_targets).gradient;
    out.value = objective_value(objective, hyper, task);
  }
  if (!out.gradient.allFinite())
    throw Error(ErrorKind::NonFiniteGradient, "objective gradient has non-finite entries");
  return out;
}

double cosine_learning_rate(double lr0, int step, int steps) {
  return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(steps)));
}

FittedGp condition_final(Objective objective, RefitOn refit_on, const HyperParams& hyper, const GpTask& task) {
  if (objective == Objective::PredictiveLikelihood && refit_on == RefitOn::TrainVal && task.val.rows() > 0) {
    Eigen::MatrixXd targets(task.train_targets.rows() + task.val_targets.rows(), task.num_classes);
    targets << task.train_targets, task.val_targets;
    return gp_condition(hyper, stack(task.train, task.val), targets);
  }
  return gp_condition(hyper, task.train, task.train_targets);
}

FitResult fit(const OptimConfig& config, const HyperParams& init, const GpTask& task) {
  config.validate();
  if (config.objective == Objective::PredictiveLikelihood && task.val.rows() == 0)
    throw Error(ErrorKind::EmptyInput, "predictive likelihood needs a non-empty validation split");

  const double log_noise_floor = std::log(kMinNoiseVariance);
  const Eigen::Index p = num_params(init);
  AdamState state{flatten(init), Eigen::VectorXd::Zero(p), Eigen::VectorXd::Zero(p)};
  AdamState previous = state;
  ObjectiveValue previous_eval;

  OptimTrace trace;
  double lr_scale = 1.0;

  // Iteration `steps` only evaluates the final objective.
  for (int t = 0; t <= config.steps; ++t) {
    ObjectiveValue eval;
    bool finite = true;
    try {
      eval = objective_and_gradient(config.objective, unflatten(init, state.theta), task);
      finite = std::isfinite(eval.value);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::CholeskyFailure)
        throw Error(e.kind(), fmt::format("{} (optimization step {})", e.what(), t + 1), fmt::format("step={}", t + 1));
      if (e.kind() != ErrorKind::NonFiniteGradient) throw;
      finite = false;
    }

    if (!finite) {
      // Roll back the update that produced these parameters and redo it at
      // half the learning rate; a second failure is fatal.
      if (t == 0 || trace.lr_halvings > 0)
        throw Error(ErrorKind::NonFiniteGradient, fmt::format("non-finite objective at optimization step {}", t + 1),
                    fmt::format("step={}", t + 1));
      ++trace.lr_halvings;
      lr_scale *= 0.5;
      state = previous;
      eval = previous_eval;
      trace.steps.pop_back();
      --t;
    }

    if (t == config.steps) {
      trace.final_objective = eval.value;
      break;
    }

    const double lr = cosine_learning_rate(config.learning_rate, t, config.steps) * lr_scale;
    trace.steps.push_back({eval.value, eval.gradient.norm(), lr});
    previous = state;
    previous_eval = eval;

    const double step = static_cast<double>(t + 1);
    state.m = config.beta1 * state.m + (1.0 - config.beta1) * eval.gradient;
    state.v = config.beta2 * state.v + (1.0 - config.beta2) * eval.gradient.cwiseAbs2();
    const Eigen::VectorXd m_hat = state.m / (1.0 - std::pow(config.beta1, step));
    const Eigen::VectorXd v_hat = state.v / (1.0 - std::pow(config.beta2, step));
    state.theta.array() += lr * m_hat.array() / (v_hat.array().sqrt() + config.epsilon);
    state.theta[0] = std::max(state.theta[0], log_noise_floor);
  }

  HyperParams tuned = unflatten(init, state.theta);
  FittedGp gp = condition_final(config.objective, config.refit_on, tuned, task);
  return FitResult{std::move(tuned), std::move(gp), std::move(trace)};
}

}  // namespace gpens

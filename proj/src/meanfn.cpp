#include "gpens/meanfn.hpp"

#include <cmath>

#include <fmt/core.h>

#include "gpens/error.hpp"

namespace gpens {
namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

// Row-wise softmax of tau * logits with the max subtracted first.
Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits, double tau) {
  Eigen::MatrixXd out = tau * logits;
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    out.row(r).array() -= out.row(r).maxCoeff();
    out.row(r) = out.row(r).array().exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

Eigen::MatrixXd head_logits(const ZeroShotSoftmaxMean& m, const Eigen::MatrixXd& features) {
  if (!m.head) throw Error(ErrorKind::InvalidArgument, "zero-shot mean has no head");
  if (features.cols() != m.head->rows())
    throw Error(ErrorKind::DimensionMismatch,
                fmt::format("mean features have D={} but the head has D={}", features.cols(), m.head->rows()));
  return features * *m.head;
}

}  // namespace

MeanKind mean_kind(const MeanSpec& spec) { return static_cast<MeanKind>(spec.index()); }

std::string to_string(MeanKind kind) {
  switch (kind) {
    case MeanKind::Zero: return "zero";
    case MeanKind::Constant: return "constant";
    case MeanKind::ZeroShotSoftmax: return "zeroshot";
  }
  return "unknown";
}

MeanKind parse_mean_kind(const std::string& name) {
  if (name == "zero") return MeanKind::Zero;
  if (name == "constant") return MeanKind::Constant;
  if (name == "zeroshot") return MeanKind::ZeroShotSoftmax;
  throw Error(ErrorKind::InvalidArgument, "unknown mean variant '" + name + "'");
}

Eigen::Index mean_num_params(const MeanSpec& spec) {
  return std::visit(Overloaded{[](const ZeroMean&) -> Eigen::Index { return 0; },
                               [](const ConstantMean& m) -> Eigen::Index { return m.value.size(); },
                               [](const ZeroShotSoftmaxMean&) -> Eigen::Index { return 2; }},
                    spec);
}

Eigen::MatrixXd mean_eval(const MeanSpec& spec, const Eigen::MatrixXd& features, Eigen::Index num_classes) {
  return std::visit(
      Overloaded{
          [&](const ZeroMean&) -> Eigen::MatrixXd { return Eigen::MatrixXd::Zero(features.rows(), num_classes); },
          [&](const ConstantMean& m) -> Eigen::MatrixXd {
            if (m.value.size() != num_classes)
              throw Error(ErrorKind::DimensionMismatch,
                          fmt::format("constant mean has {} entries for C={}", m.value.size(), num_classes));
            return m.value.transpose().replicate(features.rows(), 1);
          },
          [&](const ZeroShotSoftmaxMean& m) -> Eigen::MatrixXd {
            if (m.head && m.head->cols() != num_classes)
              throw Error(ErrorKind::DimensionMismatch,
                          fmt::format("head has C={} but the task has C={}", m.head->cols(), num_classes));
            return std::exp(m.log_gamma) * softmax_rows(head_logits(m, features), std::exp(m.log_tau));
          }},
      spec);
}

Eigen::VectorXd mean_gradient(const MeanSpec& spec, const Eigen::MatrixXd& features,
                              const Eigen::MatrixXd& upstream) {
  return std::visit(
      Overloaded{[&](const ZeroMean&) -> Eigen::VectorXd { return Eigen::VectorXd(0); },
                 [&](const ConstantMean&) -> Eigen::VectorXd { return upstream.colwise().sum().transpose(); },
                 [&](const ZeroShotSoftmaxMean& m) -> Eigen::VectorXd {
                   const double tau = std::exp(m.log_tau), gamma = std::exp(m.log_gamma);
                   const Eigen::MatrixXd z = head_logits(m, features);
                   const Eigen::MatrixXd p = softmax_rows(z, tau);
                   // d m_c / d log_tau = gamma * tau * p_c * (z_c - sum_j p_j z_j)
                   const Eigen::VectorXd zbar = (p.array() * z.array()).rowwise().sum();
                   const Eigen::MatrixXd centered = z.colwise() - zbar;
                   Eigen::VectorXd g(2);
                   g[0] = gamma * tau * (upstream.array() * p.array() * centered.array()).sum();
                   g[1] = gamma * (upstream.array() * p.array()).sum();
                   return g;
                 }},
      spec);
}

}  // namespace gpens

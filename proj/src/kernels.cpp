#include "gpens/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <thread>

#include <fmt/core.h>

#include "gpens/error.hpp"

namespace gpens {
namespace {

const double kSqrt5 = std::sqrt(5.0);

double from_sq_dist(BaseKernelKind kind, double sq) {
  if (kind == BaseKernelKind::RBF) return std::exp(-0.5 * sq);
  const double r = std::sqrt(sq);
  return (1.0 + kSqrt5 * r + 5.0 / 3.0 * sq) * std::exp(-kSqrt5 * r);
}

// Kernel value between two rows that have already been multiplied by l.
double scaled_pair(BaseKernelKind kind, const double* a, const double* b, Eigen::Index d) {
  double acc = 0.0;
  if (kind == BaseKernelKind::Laplacian) {
    for (Eigen::Index i = 0; i < d; ++i) acc += std::abs(a[i] - b[i]);
    return std::exp(-acc);
  }
  for (Eigen::Index i = 0; i < d; ++i) {
    const double diff = a[i] - b[i];
    acc += diff * diff;
  }
  return from_sq_dist(kind, acc);
}

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

RowMajor scale_rows(const DeepKernelSpec& spec, const Eigen::MatrixXd& x) {
  if (x.cols() != spec.dim())
    throw Error(ErrorKind::DimensionMismatch,
                fmt::format("model {}: features have D={} but kernel has D={}", spec.model_id, x.cols(),
                            spec.dim()));
  const Eigen::RowVectorXd l = spec.log_lengthscales.array().exp().matrix().transpose();
  return x.array().rowwise() * l.array();
}

template <typename Fn>
void parallel_rows(Eigen::Index rows, Fn&& fn) {
  const unsigned threads = std::min<unsigned>(worker_threads(), static_cast<unsigned>(std::max<Eigen::Index>(rows, 1)));
  if (threads <= 1) {
    fn(0, rows);
    return;
  }
  std::vector<std::jthread> pool;
  const Eigen::Index chunk = (rows + threads - 1) / threads;
  for (unsigned t = 0; t < threads; ++t) {
    const Eigen::Index lo = t * chunk, hi = std::min(rows, lo + chunk);
    if (lo < hi) pool.emplace_back([&fn, lo, hi] { fn(lo, hi); });
  }
}

void check_models(std::span<const DeepKernelSpec> specs, std::span<const Eigen::MatrixXd> a,
                  std::span<const Eigen::MatrixXd> b) {
  if (specs.empty()) throw Error(ErrorKind::ModelCountMismatch, "ensemble needs at least one kernel");
  if (a.size() != specs.size() || b.size() != specs.size())
    throw Error(ErrorKind::ModelCountMismatch,
                fmt::format("{} kernels but {} / {} feature matrices", specs.size(), a.size(), b.size()));
  for (std::size_t i = 1; i < specs.size(); ++i)
    if (a[i].rows() != a[0].rows() || b[i].rows() != b[0].rows())
      throw Error(ErrorKind::DimensionMismatch, "feature matrices disagree on the number of rows");
}

}  // namespace

std::string to_string(BaseKernelKind kind) {
  switch (kind) {
    case BaseKernelKind::RBF: return "rbf";
    case BaseKernelKind::Laplacian: return "laplacian";
    case BaseKernelKind::Matern52: return "matern52";
  }
  return "unknown";
}

BaseKernelKind parse_base_kernel(const std::string& name) {
  if (name == "rbf") return BaseKernelKind::RBF;
  if (name == "laplacian") return BaseKernelKind::Laplacian;
  if (name == "matern52") return BaseKernelKind::Matern52;
  throw Error(ErrorKind::InvalidArgument, "unknown base kernel '" + name + "'");
}

double base_kernel_eval(BaseKernelKind kind, std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw Error(ErrorKind::DimensionMismatch, fmt::format("kernel inputs of length {} and {}", a.size(), b.size()));
  return scaled_pair(kind, a.data(), b.data(), static_cast<Eigen::Index>(a.size()));
}

void DeepKernelSpec::validate() const {
  if (log_lengthscales.size() == 0)
    throw Error(ErrorKind::DimensionMismatch, "model " + model_id + ": empty length-scale vector");
  for (Eigen::Index i = 0; i < log_lengthscales.size(); ++i) {
    const double l = std::exp(log_lengthscales[i]);
    if (!std::isfinite(l) || l <= 0.0)
      throw Error(ErrorKind::InvalidArgument, "model " + model_id + ": length-scale not positive and finite");
    if (scalar_constraint && log_lengthscales[i] != log_lengthscales[0])
      throw Error(ErrorKind::InvalidArgument, "model " + model_id + ": tied length-scales differ");
  }
}

double deep_kernel_eval(const DeepKernelSpec& spec, std::span<const double> ga, std::span<const double> gb) {
  if (ga.size() != gb.size() || static_cast<Eigen::Index>(ga.size()) != spec.dim())
    throw Error(ErrorKind::DimensionMismatch,
                fmt::format("model {}: inputs of length {} and {} for D={}", spec.model_id, ga.size(), gb.size(),
                            spec.dim()));
  Eigen::VectorXd sa(spec.dim()), sb(spec.dim());
  for (Eigen::Index i = 0; i < spec.dim(); ++i) {
    const double l = std::exp(spec.log_lengthscales[i]);
    sa[i] = l * ga[static_cast<std::size_t>(i)];
    sb[i] = l * gb[static_cast<std::size_t>(i)];
  }
  return scaled_pair(spec.kind, sa.data(), sb.data(), spec.dim());
}

Eigen::MatrixXd deep_kernel_gram(const DeepKernelSpec& spec, const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const RowMajor sa = scale_rows(spec, a), sb = scale_rows(spec, b);
  Eigen::MatrixXd out(a.rows(), b.rows());
  const Eigen::Index d = spec.dim();
  parallel_rows(a.rows(), [&](Eigen::Index lo, Eigen::Index hi) {
    for (Eigen::Index p = lo; p < hi; ++p)
      for (Eigen::Index q = 0; q < b.rows(); ++q) out(p, q) = scaled_pair(spec.kind, &sa(p, 0), &sb(q, 0), d);
  });
  return out;
}

Eigen::MatrixXd deep_kernel_gram(const DeepKernelSpec& spec, const Eigen::MatrixXd& a) {
  const RowMajor sa = scale_rows(spec, a);
  const Eigen::Index n = a.rows(), d = spec.dim();
  Eigen::MatrixXd out(n, n);
  parallel_rows(n, [&](Eigen::Index lo, Eigen::Index hi) {
    for (Eigen::Index p = lo; p < hi; ++p) {
      out(p, p) = 1.0;
      for (Eigen::Index q = 0; q < p; ++q) out(p, q) = scaled_pair(spec.kind, &sa(p, 0), &sa(q, 0), d);
    }
  });
  out.triangularView<Eigen::StrictlyUpper>() = out.transpose();
  return out;
}

Eigen::MatrixXd ensemble_gram(std::span<const DeepKernelSpec> specs, std::span<const Eigen::MatrixXd> a,
                              std::span<const Eigen::MatrixXd> b) {
  check_models(specs, a, b);
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(a[0].rows(), b[0].rows());
  for (std::size_t i = 0; i < specs.size(); ++i) out += deep_kernel_gram(specs[i], a[i], b[i]);
  return out;
}

Eigen::MatrixXd ensemble_gram(std::span<const DeepKernelSpec> specs, std::span<const Eigen::MatrixXd> a) {
  check_models(specs, a, a);
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(a[0].rows(), a[0].rows());
  for (std::size_t i = 0; i < specs.size(); ++i) out += deep_kernel_gram(specs[i], a[i]);
  return out;
}

Eigen::VectorXd deep_kernel_gradient(const DeepKernelSpec& spec, const Eigen::MatrixXd& x,
                                     const Eigen::MatrixXd& weights) {
  const RowMajor s = scale_rows(spec, x);
  const Eigen::Index n = x.rows(), d = spec.dim();
  Eigen::VectorXd per_dim = Eigen::VectorXd::Zero(d);

  if (spec.kind == BaseKernelKind::Laplacian) {
    // d k / d u_d = -k |s_pd - s_qd|
    for (Eigen::Index p = 0; p < n; ++p)
      for (Eigen::Index q = 0; q < p; ++q) {
        const double w = 2.0 * weights(p, q);
        if (w == 0.0) continue;
        const double k = scaled_pair(spec.kind, &s(p, 0), &s(q, 0), d);
        for (Eigen::Index i = 0; i < d; ++i) per_dim[i] -= w * k * std::abs(s(p, i) - s(q, i));
      }
  } else {
    // Both stationary L2 kernels satisfy d k / d u_d = h(r) (s_pd - s_qd)^2
    // with h = -k (RBF) or h = -(5/3)(1 + sqrt5 r) exp(-sqrt5 r) (Matern52).
    Eigen::MatrixXd h(n, n);
    for (Eigen::Index p = 0; p < n; ++p) {
      h(p, p) = 0.0;
      for (Eigen::Index q = 0; q < p; ++q) {
        double sq = 0.0;
        for (Eigen::Index i = 0; i < d; ++i) {
          const double diff = s(p, i) - s(q, i);
          sq += diff * diff;
        }
        double v;
        if (spec.kind == BaseKernelKind::RBF) {
          v = -std::exp(-0.5 * sq);
        } else {
          const double r = std::sqrt(sq);
          v = -5.0 / 3.0 * (1.0 + kSqrt5 * r) * std::exp(-kSqrt5 * r);
        }
        h(p, q) = h(q, p) = weights(p, q) * v;
      }
    }
    // sum_pq H_pq (s_p - s_q)^2 = 2 sum_p rowsum(H)_p s_p^2 - 2 sum_p s_p (H s)_p
    const Eigen::VectorXd rowsum = h.rowwise().sum();
    const RowMajor hs = h * s;
    for (Eigen::Index i = 0; i < d; ++i)
      per_dim[i] = 2.0 * (rowsum.array() * s.col(i).array().square()).sum() -
                   2.0 * (s.col(i).array() * hs.col(i).array()).sum();
  }

  if (spec.scalar_constraint) return Eigen::VectorXd::Constant(1, per_dim.sum());
  return per_dim;
}

unsigned worker_threads() {
  static const unsigned threads = [] {
    const char* env = std::getenv("GPENS_THREADS");
    if (env == nullptr) return 1u;
    const long v = std::strtol(env, nullptr, 10);
    return v > 0 ? static_cast<unsigned>(std::min<long>(v, 256)) : 1u;
  }();
  return threads;
}

}  // namespace gpens

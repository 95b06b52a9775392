#include <doctest.h>

#include <cmath>
#include <memory>

#include "gpens/error.hpp"
#include "gpens/meanfn.hpp"
#include "oracle.hpp"

using namespace gpens;

namespace {

ZeroShotSoftmaxMean softmax_mean(Eigen::MatrixXd head, double tau, double gamma) {
  return ZeroShotSoftmaxMean{std::log(tau), std::log(gamma), std::make_shared<const Eigen::MatrixXd>(std::move(head))};
}

}  // namespace

TEST_CASE("zero mean is all zeros") {
  const Eigen::MatrixXd x = Eigen::MatrixXd::Random(4, 3);
  const Eigen::MatrixXd m = mean_eval(ZeroMean{}, x, 5);
  CHECK(m.rows() == 4);
  CHECK(m.cols() == 5);
  CHECK(m.isZero(0.0));
}

TEST_CASE("constant mean broadcasts its vector") {
  Eigen::VectorXd c(3);
  c << 0.1, -0.2, 0.3;
  const Eigen::MatrixXd m = mean_eval(ConstantMean{c}, Eigen::MatrixXd::Zero(2, 7), 3);
  CHECK(m.row(0) == c.transpose());
  CHECK(m.row(1) == c.transpose());
  CHECK_THROWS_AS(mean_eval(ConstantMean{c}, Eigen::MatrixXd::Zero(2, 7), 4), Error);
}

TEST_CASE("equal logits give gamma / C everywhere") {
  // A zero feature row makes every logit zero.
  const Eigen::MatrixXd head = Eigen::MatrixXd::Identity(4, 4);
  const Eigen::MatrixXd m = mean_eval(softmax_mean(head, 100.0, 2.0), Eigen::MatrixXd::Zero(3, 4), 4);
  CHECK((m.array() - 0.5).abs().maxCoeff() < 1e-15);
}

TEST_CASE("tau = 100 on logits (0.9, 0.1) does not overflow") {
  // Feature (0.9, sqrt(1 - 0.81)) against head columns e1 and a column whose
  // inner product with it is 0.1.
  const double s = std::sqrt(1.0 - 0.81);
  Eigen::MatrixXd x(1, 2);
  x << 0.9, s;
  // Column w2 = (a, b) with 0.9 a + s b = 0.1 and a^2 + b^2 = 1.
  const double a = (0.09 - s * std::sqrt(s * s + 0.81 - 0.01)) / (0.81 + s * s);
  const double b = std::sqrt(1.0 - a * a);
  Eigen::MatrixXd head(2, 2);
  head << 1.0, a, 0.0, b;
  REQUIRE((x * head)(0, 1) == doctest::Approx(0.1).epsilon(1e-12));
  const Eigen::MatrixXd m = mean_eval(softmax_mean(head, 100.0, 1.0), x, 2);
  CHECK(m(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(m(0, 1) == doctest::Approx(std::exp(-80.0)).epsilon(1e-6));
  CHECK(m(0, 1) == doctest::Approx(1.80e-35).epsilon(1e-2));
}

TEST_CASE("head dimension mismatch is reported") {
  const Eigen::MatrixXd head = Eigen::MatrixXd::Identity(3, 2);
  try {
    mean_eval(softmax_mean(head, 10, 1), Eigen::MatrixXd::Zero(2, 4), 2);
    FAIL("expected DimensionMismatch");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::DimensionMismatch);
  }
}

TEST_CASE("property: softmax rows are positive, sum to gamma, keep the zero-shot argmax, scale with gamma") {
  SplitMix64 rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::Index d = 2 + static_cast<Eigen::Index>(rng.below(6));
    const Eigen::Index c = 2 + static_cast<Eigen::Index>(rng.below(6));
    const Eigen::MatrixXd head = oracle::unit_rows(rng, c, d).transpose();
    const Eigen::MatrixXd x = oracle::unit_rows(rng, 10, d);
    const double tau = std::exp(3.0 * rng.normal());
    const double gamma = std::exp(rng.normal());
    const Eigen::MatrixXd m = mean_eval(softmax_mean(head, tau, gamma), x, c);
    const Eigen::MatrixXd m2 = mean_eval(softmax_mean(head, tau, 2.0 * gamma), x, c);
    const Eigen::MatrixXd logits = x * head;
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      CHECK(m.row(r).sum() == doctest::Approx(gamma).epsilon(1e-6));
      if (tau < 50.0) CHECK((m.row(r).array() > 0.0).all());
      Eigen::Index want, got;
      logits.row(r).maxCoeff(&want);
      m.row(r).maxCoeff(&got);
      CHECK(want == got);
    }
    CHECK((m2 - 2.0 * m).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("mean gradient matches finite differences") {
  SplitMix64 rng(4);
  const Eigen::MatrixXd head = oracle::unit_rows(rng, 3, 5).transpose();
  const Eigen::MatrixXd x = oracle::unit_rows(rng, 6, 5);
  const Eigen::MatrixXd upstream = Eigen::MatrixXd::Random(6, 3);
  for (double tau : {1.0, 20.0, 100.0}) {
    const ZeroShotSoftmaxMean base = softmax_mean(head, tau, 0.8);
    const Eigen::VectorXd analytic = mean_gradient(base, x, upstream);
    Eigen::VectorXd theta(2);
    theta << base.log_tau, base.log_gamma;
    const Eigen::VectorXd numeric = oracle::finite_difference(
        [&](const Eigen::VectorXd& t) {
          ZeroShotSoftmaxMean m = base;
          m.log_tau = t[0];
          m.log_gamma = t[1];
          return (upstream.array() * mean_eval(m, x, 3).array()).sum();
        },
        theta);
    CHECK(oracle::gradient_close(analytic[0], numeric[0]));
    CHECK(oracle::gradient_close(analytic[1], numeric[1]));
  }
  const Eigen::VectorXd gc = mean_gradient(ConstantMean{Eigen::VectorXd::Zero(3)}, x, upstream);
  CHECK(gc.isApprox(upstream.colwise().sum().transpose()));
  CHECK(mean_gradient(ZeroMean{}, x, upstream).size() == 0);
}

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "gpens/error.hpp"
#include "gpens/evalmetrics.hpp"
#include "gpens/rng.hpp"

using namespace gpens;

namespace {

ErrorKind kind_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  return ErrorKind::IoError;
}

double brute_auroc(const std::vector<double>& neg, const std::vector<double>& pos) {
  double total = 0.0;
  for (double p : pos)
    for (double n : neg) total += p > n ? 1.0 : (p == n ? 0.5 : 0.0);
  return total / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

std::vector<double> random_scores(SplitMix64& rng, std::size_t n, std::uint64_t levels) {
  std::vector<double> s(n);
  for (auto& v : s) v = static_cast<double>(rng.below(levels)) * 0.25;
  return s;
}

}  // namespace

TEST_CASE("predict_labels takes the row argmax with ties to the lowest index") {
  Eigen::MatrixXd m(3, 3);
  m << 0.1, 0.7, 0.2,
       0.5, 0.5, 0.0,
       -1.0, -2.0, -0.5;
  CHECK(predict_labels(m) == std::vector<std::uint32_t>{1, 0, 2});
}

TEST_CASE("property: predict_labels ignores positive scaling and constant shifts") {
  SplitMix64 rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    Eigen::MatrixXd m(6, 5);
    for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = rng.normal();
    const double scale = std::exp(rng.normal());
    const double shift = rng.normal();
    CHECK(predict_labels(m) == predict_labels((scale * m).array() + shift));
  }
}

TEST_CASE("accuracy counts matches and validates its inputs") {
  const std::vector<std::uint32_t> p{0, 1, 2, 2}, t{0, 1, 1, 2};
  CHECK(accuracy(p, t) == 0.75);
  const std::vector<std::uint32_t> shorter{0};
  CHECK(kind_of([&] { accuracy(p, shorter); }) == ErrorKind::LengthMismatch);
  const std::vector<std::uint32_t> none;
  CHECK(kind_of([&] { accuracy(none, none); }) == ErrorKind::EmptyInput);
}

TEST_CASE("clip_unit clamps without renormalizing") {
  Eigen::MatrixXd m(1, 3);
  m << -0.2, 0.5, 1.4;
  Eigen::MatrixXd want(1, 3);
  want << 0.0, 0.5, 1.0;
  CHECK(clip_unit(m) == want);
}

TEST_CASE("ECE hand-computed cases") {
  {
    const std::vector<double> c{1.0};
    CHECK(ece(c, {true}).ece == 0.0);
  }
  {
    const std::vector<double> c{0.8};
    const EceResult r = ece(c, {false});
    CHECK(r.ece == 0.8);
    std::size_t occupied = 0;
    for (const auto& b : r.bins) occupied += b.count > 0;
    CHECK(occupied == 1);
    CHECK(r.bins.size() == 15);
  }
  {
    const std::vector<double> c{0.5, 0.5};
    CHECK(ece(c, {true, false}).ece == 0.0);
  }
  {
    // Two bins: {0.1 wrong} and {0.9 right, 0.9 wrong}.
    const std::vector<double> c{0.1, 0.9, 0.9};
    CHECK(ece(c, {false, true, false}, 10).ece == doctest::Approx((0.1 + 2.0 * 0.4) / 3.0).epsilon(1e-15));
  }
  const std::vector<double> none;
  CHECK(kind_of([&] { ece(none, {}); }) == ErrorKind::EmptyInput);
  const std::vector<double> one{0.5};
  CHECK(kind_of([&] { ece(one, {true, false}); }) == ErrorKind::LengthMismatch);
}

TEST_CASE("ECE bin edges and assignment") {
  const std::vector<double> c{0.0, 1.0 / 15.0, 0.999999, 1.0};
  const EceResult r = ece(c, {true, true, true, true});
  CHECK(r.bins.front().lo == 0.0);
  CHECK(r.bins.back().hi == 1.0);
  CHECK(r.bins[0].count == 1);
  CHECK(r.bins[1].count == 1);
  CHECK(r.bins[14].count == 2);
}

TEST_CASE("TACE hand-computed cases") {
  Eigen::MatrixXd p(1, 2);
  p << 1.0, 0.0;
  const std::vector<std::uint32_t> t0{0};
  CHECK(tace(p, t0) == 0.0);
  p << 0.6, 0.4;
  CHECK(tace(p, t0) == doctest::Approx(0.4).epsilon(1e-15));
  p << 0.005, 0.001;
  CHECK(kind_of([&] { tace(p, t0); }) == ErrorKind::AllBelowThreshold);
}

TEST_CASE("property: ECE and TACE lie in [0, 1]; bin counts sum to M") {
  SplitMix64 rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const Eigen::Index m = 1 + static_cast<Eigen::Index>(rng.below(40));
    const Eigen::Index c = 2 + static_cast<Eigen::Index>(rng.below(5));
    Eigen::MatrixXd scores(m, c);
    for (Eigen::Index i = 0; i < scores.size(); ++i) scores(i) = 1.4 * rng.uniform() - 0.2;
    std::vector<std::uint32_t> truth(static_cast<std::size_t>(m));
    for (auto& v : truth) v = static_cast<std::uint32_t>(rng.below(static_cast<std::uint64_t>(c)));
    const CalibrationReport r = calibration_report(scores, truth);
    CHECK(r.ece >= 0.0);
    CHECK(r.ece <= 1.0);
    CHECK(r.tace >= 0.0);
    CHECK(r.tace <= 1.0);
    std::size_t total = 0;
    for (const auto& b : r.reliability_bins) total += b.count;
    CHECK(total == static_cast<std::size_t>(m));
  }
}

TEST_CASE("property: ECE vanishes when every bin is perfectly calibrated") {
  // Each occupied bin holds confidences averaging to k / n with exactly k correct.
  SplitMix64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> c;
    std::vector<bool> ok;
    for (int b = 0; b < 15; ++b) {
      if (rng.below(2) == 0) continue;
      const int n = 4;
      const int k = static_cast<int>(rng.below(5));
      const double conf = static_cast<double>(k) / n;
      if (std::min(static_cast<int>(conf * 15), 14) != b) continue;
      for (int i = 0; i < n; ++i) {
        c.push_back(conf);
        ok.push_back(i < k);
      }
    }
    if (c.empty()) continue;
    CHECK(ece(c, ok).ece == doctest::Approx(0.0));
  }
}

TEST_CASE("AUROC hand-computed cases") {
  const std::vector<double> neg{1, 2}, pos{2, 3};
  CHECK(auroc(neg, pos) == 0.875);
  const std::vector<double> low{0.1, 0.2}, high{0.5, 0.7, 0.9};
  CHECK(auroc(low, high) == 1.0);
  CHECK(auroc(high, low) == 0.0);
  const std::vector<double> same{3, 3, 3};
  CHECK(auroc(same, same) == 0.5);
  const std::vector<double> none;
  CHECK(kind_of([&] { auroc(none, pos); }) == ErrorKind::EmptyInput);
}

TEST_CASE("property: AUROC equals brute-force pair enumeration exactly") {
  SplitMix64 rng(4);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto neg = random_scores(rng, 1 + rng.below(30), 1 + rng.below(12));
    const auto pos = random_scores(rng, 1 + rng.below(30), 1 + rng.below(12));
    CHECK(auroc(neg, pos) == brute_auroc(neg, pos));
  }
}

TEST_CASE("property: AUROC symmetry and monotone invariance") {
  SplitMix64 rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    auto neg = random_scores(rng, 1 + rng.below(25), 8);
    auto pos = random_scores(rng, 1 + rng.below(25), 8);
    CHECK(auroc(neg, pos) + auroc(pos, neg) == 1.0);
    const double before = auroc(neg, pos);
    for (auto* s : {&neg, &pos})
      for (auto& v : *s) v = std::exp(3.0 * v) - 7.0;
    CHECK(auroc(neg, pos) == before);
  }
}

TEST_CASE("AUROC of identical distributions is near one half") {
  SplitMix64 rng(6);
  std::vector<double> a(2000), b(2000);
  for (auto& v : a) v = rng.uniform();
  for (auto& v : b) v = rng.uniform();
  const double v = auroc(a, b);
  CHECK(v >= 0.48);
  CHECK(v <= 0.52);
}

TEST_CASE("histogram of equal values has one occupied bin integrating to one") {
  const std::vector<double> v(17, 0.3);
  const Histogram h = uncertainty_histogram(v, 10, 0.0, 1.0);
  REQUIRE(h.edges.size() == 11);
  std::size_t occupied = 0;
  double integral = 0.0;
  for (std::size_t b = 0; b < 10; ++b) {
    occupied += h.counts[b] > 0;
    integral += h.densities[b] * (h.edges[b + 1] - h.edges[b]);
  }
  CHECK(occupied == 1);
  CHECK(integral == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("histogram of a uniform grid is flat") {
  std::vector<double> v;
  for (int i = 0; i < 1000; ++i) v.push_back((i + 0.5) / 1000.0 * 2.0);
  const Histogram h = uncertainty_histogram(v, 20, 0.0, 2.0);
  for (double d : h.densities) CHECK(d == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("property: histogram matches a direct count and integrates to one") {
  SplitMix64 rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const double hi = 0.5 + 3.0 * rng.uniform();
    const int bins = 1 + static_cast<int>(rng.below(60));
    std::vector<double> v(1 + rng.below(300));
    for (auto& x : v) x = hi * 1.2 * rng.uniform();  // some values beyond hi
    const Histogram h = uncertainty_histogram(v, bins, 0.0, hi);
    std::vector<std::size_t> want(static_cast<std::size_t>(bins), 0);
    for (double x : v) {
      std::size_t b = 0;
      while (b + 1 < want.size() && x >= h.edges[b + 1]) ++b;
      ++want[b];
    }
    CHECK(h.counts == want);
    double integral = 0.0;
    for (int b = 0; b < bins; ++b) {
      CHECK(h.densities[static_cast<std::size_t>(b)] >= 0.0);
      integral += h.densities[static_cast<std::size_t>(b)] * (h.edges[static_cast<std::size_t>(b) + 1] - h.edges[static_cast<std::size_t>(b)]);
    }
    CHECK(integral == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("histogram rejects empty input and bad ranges") {
  const std::vector<double> none, one{1.0};
  CHECK(kind_of([&] { uncertainty_histogram(none, 10, 0.0, 1.0); }) == ErrorKind::EmptyInput);
  CHECK(kind_of([&] { uncertainty_histogram(one, 10, 1.0, 1.0); }) == ErrorKind::InvalidArgument);
  CHECK(kind_of([&] { uncertainty_histogram(one, 0, 0.0, 1.0); }) == ErrorKind::InvalidArgument);
}

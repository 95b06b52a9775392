#include "gpens/evalmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/core.h>

#include "gpens/error.hpp"

namespace gpens {

std::vector<std::uint32_t> predict_labels(const Eigen::MatrixXd& mean) {
  std::vector<std::uint32_t> out(static_cast<std::size_t>(mean.rows()));
  for (Eigen::Index r = 0; r < mean.rows(); ++r) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < mean.cols(); ++c)
      if (mean(r, c) > mean(r, best)) best = c;
    out[static_cast<std::size_t>(r)] = static_cast<std::uint32_t>(best);
  }
  return out;
}

double accuracy(std::span<const std::uint32_t> predicted, std::span<const std::uint32_t> truth) {
  if (predicted.size() != truth.size())
    throw Error(ErrorKind::LengthMismatch,
                fmt::format("{} predictions for {} labels", predicted.size(), truth.size()));
  if (predicted.empty()) throw Error(ErrorKind::EmptyInput, "accuracy of an empty set");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) hits += predicted[i] == truth[i];
  return static_cast<double>(hits) / static_cast<double>(predicted.size());
}

Eigen::MatrixXd clip_unit(const Eigen::MatrixXd& scores) { return scores.cwiseMax(0.0).cwiseMin(1.0); }

EceResult ece(std::span<const double> confidences, const std::vector<bool>& correct, int bins) {
  if (confidences.empty()) throw Error(ErrorKind::EmptyInput, "ECE of an empty set");
  if (confidences.size() != correct.size())
    throw Error(ErrorKind::LengthMismatch, "confidences and correctness flags differ in length");
  if (bins < 1) throw Error(ErrorKind::InvalidArgument, "ECE needs at least one bin");

  std::vector<double> conf_sum(bins, 0.0), hit_sum(bins, 0.0);
  std::vector<std::size_t> count(bins, 0);
  for (std::size_t i = 0; i < confidences.size(); ++i) {
    const double c = std::clamp(confidences[i], 0.0, 1.0);
    const int b = std::min(static_cast<int>(std::floor(c * bins)), bins - 1);
    conf_sum[b] += c;
    hit_sum[b] += correct[i] ? 1.0 : 0.0;
    ++count[b];
  }

  EceResult out;
  const double total = static_cast<double>(confidences.size());
  for (int b = 0; b < bins; ++b) {
    ReliabilityBin bin;
    bin.lo = static_cast<double>(b) / bins;
    bin.hi = static_cast<double>(b + 1) / bins;
    bin.count = count[b];
    if (count[b] > 0) {
      const double n = static_cast<double>(count[b]);
      bin.mean_confidence = conf_sum[b] / n;
      bin.accuracy = hit_sum[b] / n;
      out.ece += n / total * std::abs(bin.accuracy - bin.mean_confidence);
    }
    out.bins.push_back(bin);
  }
  return out;
}

double tace(const Eigen::MatrixXd& probabilities, std::span<const std::uint32_t> truth, double threshold, int bins) {
  if (probabilities.rows() == 0) throw Error(ErrorKind::EmptyInput, "TACE of an empty set");
  if (static_cast<std::size_t>(probabilities.rows()) != truth.size())
    throw Error(ErrorKind::LengthMismatch, "probabilities and labels differ in length");
  if (bins < 1) throw Error(ErrorKind::InvalidArgument, "TACE needs at least one bin");

  struct Entry {
    double p;
    bool hit;
  };
  std::vector<Entry> entries;
  for (Eigen::Index r = 0; r < probabilities.rows(); ++r)
    for (Eigen::Index c = 0; c < probabilities.cols(); ++c) {
      const double p = std::clamp(probabilities(r, c), 0.0, 1.0);
      if (p >= threshold) entries.push_back({p, truth[static_cast<std::size_t>(r)] == static_cast<std::uint32_t>(c)});
    }
  if (entries.empty()) throw Error(ErrorKind::AllBelowThreshold, "no probability reaches the TACE threshold");
  std::stable_sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) { return a.p < b.p; });

  // Bin b holds entries [floor(b n / B), floor((b + 1) n / B)).
  const std::size_t n = entries.size();
  double total = 0.0;
  int occupied = 0;
  for (int b = 0; b < bins; ++b) {
    const std::size_t lo = n * static_cast<std::size_t>(b) / static_cast<std::size_t>(bins);
    const std::size_t hi = n * static_cast<std::size_t>(b + 1) / static_cast<std::size_t>(bins);
    if (lo == hi) continue;
    double conf = 0.0, hits = 0.0;
    for (std::size_t i = lo; i < hi; ++i) {
      conf += entries[i].p;
      hits += entries[i].hit ? 1.0 : 0.0;
    }
    const double m = static_cast<double>(hi - lo);
    total += std::abs(hits / m - conf / m);
    ++occupied;
  }
  return total / occupied;
}

CalibrationReport calibration_report(const Eigen::MatrixXd& mean, std::span<const std::uint32_t> truth, int ece_bins,
                                     int tace_bins, double tace_threshold) {
  const Eigen::MatrixXd probs = clip_unit(mean);
  const auto predicted = predict_labels(mean);
  std::vector<double> confidence(predicted.size());
  std::vector<bool> correct(predicted.size());
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    confidence[i] = probs.row(static_cast<Eigen::Index>(i)).maxCoeff();
    correct[i] = predicted[i] == truth[i];
  }
  EceResult e = ece(confidence, correct, ece_bins);
  return CalibrationReport{e.ece, tace(probs, truth, tace_threshold, tace_bins), std::move(e.bins)};
}

double auroc(std::span<const double> negatives, std::span<const double> positives) {
  if (negatives.empty() || positives.empty()) throw Error(ErrorKind::EmptyInput, "AUROC needs both score sets");
  struct Score {
    double value;
    bool positive;
  };
  std::vector<Score> all;
  all.reserve(negatives.size() + positives.size());
  for (double v : negatives) all.push_back({v, false});
  for (double v : positives) all.push_back({v, true});
  std::sort(all.begin(), all.end(), [](const Score& a, const Score& b) { return a.value < b.value; });

  // Sweep tie groups; every count is a multiple of 1/2, so the sum is exact.
  double wins = 0.0;
  double negatives_below = 0.0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    double pos = 0.0, neg = 0.0;
    while (j < all.size() && all[j].value == all[i].value) {
      (all[j].positive ? pos : neg) += 1.0;
      ++j;
    }
    wins += pos * (negatives_below + 0.5 * neg);
    negatives_below += neg;
    i = j;
  }
  return wins / (static_cast<double>(negatives.size()) * static_cast<double>(positives.size()));
}

Histogram uncertainty_histogram(std::span<const double> values, int bin_count, double lo, double hi) {
  if (values.empty()) throw Error(ErrorKind::EmptyInput, "histogram of an empty set");
  if (bin_count < 1 || !(hi > lo)) throw Error(ErrorKind::InvalidArgument, "histogram needs bins >= 1 and hi > lo");
  Histogram out;
  const double width = (hi - lo) / bin_count;
  out.edges.resize(static_cast<std::size_t>(bin_count) + 1);
  for (int b = 0; b <= bin_count; ++b) out.edges[b] = lo + width * b;
  out.edges.back() = hi;
  out.counts.assign(static_cast<std::size_t>(bin_count), 0);
  for (double v : values) {
    if (!std::isfinite(v)) throw Error(ErrorKind::InvalidArgument, "histogram values must be finite");
    const int b = std::clamp(static_cast<int>(std::floor((v - lo) / width)), 0, bin_count - 1);
    ++out.counts[b];
  }
  const double total = static_cast<double>(values.size());
  out.densities.resize(out.counts.size());
  for (std::size_t b = 0; b < out.counts.size(); ++b)
    out.densities[b] = static_cast<double>(out.counts[b]) / (total * width);
  return out;
}

}  // namespace gpens

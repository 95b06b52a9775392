#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace gpens {

inline constexpr int kDefaultEceBins = 15;
inline constexpr int kDefaultTaceBins = 15;
inline constexpr double kDefaultTaceThreshold = 0.01;
inline constexpr int kDefaultHistogramBins = 50;

struct ReliabilityBin {
  double lo = 0.0;
  double hi = 0.0;
  double mean_confidence = 0.0;  // 0 for empty bins
  double accuracy = 0.0;         // 0 for empty bins
  std::size_t count = 0;
};

struct CalibrationReport {
  double ece = 0.0;
  double tace = 0.0;
  std::vector<ReliabilityBin> reliability_bins;
};

struct EceResult {
  double ece = 0.0;
  std::vector<ReliabilityBin> bins;
};

struct Histogram {
  std::vector<double> edges;      // bin_count + 1
  std::vector<double> densities;  // bin_count, integrates to 1
  std::vector<std::size_t> counts;
};

/// Row-wise argmax; ties go to the lowest class index.
std::vector<std::uint32_t> predict_labels(const Eigen::MatrixXd& mean);

double accuracy(std::span<const std::uint32_t> predicted, std::span<const std::uint32_t> truth);

/// Clips every entry to [0, 1]; rows are not renormalized.
Eigen::MatrixXd clip_unit(const Eigen::MatrixXd& scores);

/// Equal-width bins on [0, 1]; confidence c lands in bin min(floor(c * bins), bins - 1).
EceResult ece(std::span<const double> confidences, const std::vector<bool>& correct, int bins = kDefaultEceBins);

/// Thresholded adaptive calibration error over all (sample, class) entries
/// with probability >= threshold, pooled, sorted, and split into equal-count
/// bins; the unweighted mean of |accuracy - confidence| over occupied bins.
double tace(const Eigen::MatrixXd& probabilities, std::span<const std::uint32_t> truth,
            double threshold = kDefaultTaceThreshold, int bins = kDefaultTaceBins);

/// Confidence = max of the clipped row, correct = argmax matches truth.
CalibrationReport calibration_report(const Eigen::MatrixXd& mean, std::span<const std::uint32_t> truth,
                                     int ece_bins = kDefaultEceBins, int tace_bins = kDefaultTaceBins,
                                     double tace_threshold = kDefaultTaceThreshold);

/// P(positive score > negative score) + P(tie) / 2.
double auroc(std::span<const double> negatives, std::span<const double> positives);

/// Density-normalized histogram over [lo, hi]; values outside are clamped
/// into the end bins so datasets sharing a range stay comparable.
Histogram uncertainty_histogram(std::span<const double> values, int bin_count, double lo, double hi);

}  // namespace gpens

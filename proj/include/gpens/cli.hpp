#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "gpens/embedstore.hpp"
#include "gpens/hyperopt.hpp"
#include "gpens/synth.hpp"

namespace gpens {

struct RunConfig {
  std::filesystem::path manifest_path;
  std::size_t shots = 16;
  std::uint64_t seed = 0;
  Objective objective = Objective::PredictiveLikelihood;
  int steps = 100;
  double learning_rate = 0.01;
  RefitOn refit_on = RefitOn::TrainVal;
  BaseKernelKind base_kernel = BaseKernelKind::RBF;
  MeanKind mean_variant = MeanKind::ZeroShotSoftmax;
  bool scalar_lengthscale = false;
  std::vector<std::filesystem::path> ood_manifest_paths;
  std::filesystem::path output_dir = ".";

  void validate() const;
};

/// Feature set (kernel models + mean-model) for the given rows.
FeatureSet features_of(const TaskBundle& bundle, const IndexList& rows);
/// Train/val features and one-hot targets from the bundle's splits.
GpTask make_task(const TaskBundle& bundle);
HyperParamShape shape_of(const TaskBundle& bundle, const RunConfig& config);

struct FitOutcome {
  std::filesystem::path model_path;
  std::filesystem::path trace_path;
  Objective objective_used = Objective::PredictiveLikelihood;
  bool fell_back = false;
  OptimTrace trace;
};

/// Samples shots, splits train/val when the predictive objective is usable
/// (falling back to the marginal likelihood at 1 shot), tunes, and writes
/// model.gpm plus trace.json into config.output_dir.
FitOutcome cmd_fit(const RunConfig& config, std::ostream& log);

struct EvalOutcome {
  std::filesystem::path report_path;
  double accuracy = 0.0;
  double ece = 0.0;
  double tace = 0.0;
};

/// Re-conditions the stored model and scores the test split; writes
/// eval_report.json and reliability.csv into output_dir.
EvalOutcome cmd_eval(const std::filesystem::path& model_path, const std::filesystem::path& manifest_path,
                     const std::filesystem::path& output_dir);

struct OodOutcome {
  std::filesystem::path report_path;
  std::vector<double> auroc;  // one per OOD manifest
  std::vector<std::filesystem::path> histogram_paths;  // ID first, then each OOD set
};

/// Predictive variance on the ID test split versus each OOD set: AUROC plus
/// density histograms sharing one range ([0, K] by default).
OodOutcome cmd_ood(const std::filesystem::path& model_path, const std::filesystem::path& id_manifest,
                   const std::vector<std::filesystem::path>& ood_manifests, const std::filesystem::path& output_dir,
                   int bins = 50);

/// Prior grams (tuned length-scales) of a seeded sample, per model and summed.
std::vector<std::filesystem::path> cmd_kernel_viz(const std::filesystem::path& model_path,
                                                  const std::filesystem::path& manifest_path, std::size_t sample_count,
                                                  std::uint64_t seed, const std::filesystem::path& output_dir);

/// Full command-line entry point. Errors are reported as one JSON line on
/// `err`; returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace gpens

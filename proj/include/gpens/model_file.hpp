#pragma once

// Model artifact (.gpm):
//   "GPM1" | u32 format_version | u64 header_bytes | JSON header (UTF-8)
//   | u64 n_train | n_train u64 indices | u64 n_val | n_val u64 indices
// The header holds the tuned hyper-parameters, the objective actually used,
// the refit mode, the task shape, and an echo of the run configuration.
// The zero-shot head is not stored; it is re-read from the task manifest.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gpens/embedstore.hpp"
#include "gpens/hyperopt.hpp"

namespace gpens {

inline constexpr std::uint32_t kModelFormatVersion = 1;

struct ModelArtifact {
  std::uint32_t format_version = kModelFormatVersion;
  HyperParams hyper;
  Objective objective = Objective::MarginalLikelihood;  // objective actually optimized
  RefitOn refit_on = RefitOn::TrainVal;
  std::vector<std::string> model_ids;
  std::vector<Eigen::Index> dims;
  std::uint64_t num_samples = 0;
  std::uint32_t num_classes = 0;
  IndexList train;
  IndexList val;
  nlohmann::ordered_json config;  // echo of the run configuration
};

nlohmann::ordered_json hyper_to_json(const HyperParams& hyper);
/// `head` is attached to a zero-shot mean.
HyperParams hyper_from_json(const nlohmann::json& j, std::shared_ptr<const Eigen::MatrixXd> head);

void write_model(const std::filesystem::path& path, const ModelArtifact& model);
/// Throws VersionMismatch for an unknown format version.
ModelArtifact read_model(const std::filesystem::path& path, std::shared_ptr<const Eigen::MatrixXd> head);

/// Reads only the JSON header.
nlohmann::json read_model_header(const std::filesystem::path& path);

}  // namespace gpens

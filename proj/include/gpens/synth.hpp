#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

namespace gpens {

enum class SynthLayout {
  Complementary,  // model i separates only its own contiguous block of classes
  Shared,         // every model separates every class
};

SynthLayout parse_synth_layout(const std::string& name);
std::string to_string(SynthLayout layout);

/// Desk-scale stand-in for real pre-trained embeddings. Each model gets a
/// `dim`-dimensional space; in-distribution samples live in the first
/// dim/2 coordinates and OOD samples in the remaining ones, so the two are
/// exactly orthogonal. Samples are normalize(center + noise * z / sqrt(dim/2)).
struct SynthConfig {
  std::uint32_t classes = 8;
  std::uint32_t per_class = 40;
  std::uint32_t pool_per_class = 20;  // the rest of each class is the test split
  std::uint32_t dim = 16;
  std::uint32_t models = 2;
  double noise = 0.35;
  SynthLayout layout = SynthLayout::Complementary;
  double head_noise = 0.1;  // perturbation of the zero-shot head columns
  std::uint32_t ood_count = 100;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SynthOutput {
  std::filesystem::path manifest;
  std::filesystem::path ood_manifest;  // empty when ood_count == 0
};

/// Writes EMB1/LBL1/HED1 files and manifests under `dir`.
SynthOutput write_synthetic_task(const SynthConfig& config, const std::filesystem::path& dir);

}  // namespace gpens

#include "gpens/synth.hpp"

#include <cmath>

#include <fmt/core.h>

#include "gpens/embedstore.hpp"
#include "gpens/error.hpp"
#include "gpens/rng.hpp"

namespace gpens {
namespace {

namespace fs = std::filesystem;

constexpr std::uint64_t kCenterSalt = 0x63656E74657273ULL;
constexpr std::uint64_t kSampleSalt = 0x73616D706C6573ULL;
constexpr std::uint64_t kHeadSalt = 0x68656164ULL;
constexpr std::uint64_t kOodSalt = 0x6F6F64ULL;

Eigen::VectorXd random_unit(SplitMix64& rng, Eigen::Index dim) {
  Eigen::VectorXd v(dim);
  for (Eigen::Index i = 0; i < dim; ++i) v[i] = rng.normal();
  return v / v.norm();
}

// Which classes model `m` can tell apart.
bool separates(const SynthConfig& c, std::uint32_t model, std::uint32_t cls) {
  if (c.layout == SynthLayout::Shared) return true;
  const std::uint32_t block = (c.classes + c.models - 1) / c.models;
  return cls / block == model;
}

}  // namespace

SynthLayout parse_synth_layout(const std::string& name) {
  if (name == "complementary") return SynthLayout::Complementary;
  if (name == "shared") return SynthLayout::Shared;
  throw Error(ErrorKind::InvalidArgument, "unknown synthetic layout '" + name + "'");
}

std::string to_string(SynthLayout layout) {
  return layout == SynthLayout::Complementary ? "complementary" : "shared";
}

void SynthConfig::validate() const {
  if (classes < 2) throw Error(ErrorKind::InvalidArgument, "synthetic task needs at least 2 classes");
  if (models < 1) throw Error(ErrorKind::InvalidArgument, "synthetic task needs at least 1 model");
  if (dim < 2) throw Error(ErrorKind::InvalidArgument, "synthetic dim must be at least 2");
  if (pool_per_class < 1 || pool_per_class > per_class)
    throw Error(ErrorKind::InvalidArgument, "pool-per-class must be in [1, per-class]");
  if (!(noise >= 0.0) || !(head_noise >= 0.0)) throw Error(ErrorKind::InvalidArgument, "noise must be non-negative");
}

SynthOutput write_synthetic_task(const SynthConfig& config, const fs::path& dir) {
  config.validate();
  fs::create_directories(dir);
  const Eigen::Index support = config.dim / 2;
  const Eigen::Index n = static_cast<Eigen::Index>(config.classes) * config.per_class;

  // Sample i belongs to class i % C.
  std::vector<std::uint32_t> labels(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) labels[i] = static_cast<std::uint32_t>(i % config.classes);

  Manifest manifest;
  manifest.mean_model_id = "model0";
  for (std::uint32_t c = 0; c < config.classes; ++c) manifest.class_names.push_back(fmt::format("class{}", c));

  Eigen::MatrixXd mean_model_centers;
  for (std::uint32_t m = 0; m < config.models; ++m) {
    SplitMix64 center_rng = SplitMix64::stream(config.seed ^ kCenterSalt, m);
    const Eigen::VectorXd confusion = random_unit(center_rng, support);
    Eigen::MatrixXd centers(support, config.classes);
    for (std::uint32_t c = 0; c < config.classes; ++c)
      centers.col(c) = separates(config, m, c) ? random_unit(center_rng, support) : confusion;
    if (m == 0) mean_model_centers = centers;

    SplitMix64 rng = SplitMix64::stream(config.seed ^ kSampleSalt, m);
    FloatMatrix features = FloatMatrix::Zero(n, config.dim);
    const double scale = config.noise / std::sqrt(static_cast<double>(support));
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::VectorXd x = centers.col(labels[i]);
      for (Eigen::Index d = 0; d < support; ++d) x[d] += scale * rng.normal();
      x /= x.norm();
      features.row(i).head(support) = x.transpose().cast<float>();
    }
    const std::string id = fmt::format("model{}", m);
    const fs::path path = dir / (id + ".emb");
    write_emb1(path, features, true);
    manifest.models.push_back({id, path});
  }

  SplitMix64 head_rng = SplitMix64::stream(config.seed ^ kHeadSalt, 0);
  Eigen::MatrixXd head = Eigen::MatrixXd::Zero(config.dim, config.classes);
  const double head_scale = config.head_noise / std::sqrt(static_cast<double>(support));
  for (std::uint32_t c = 0; c < config.classes; ++c) {
    Eigen::VectorXd w = mean_model_centers.col(c);
    for (Eigen::Index d = 0; d < support; ++d) w[d] += head_scale * head_rng.normal();
    head.col(c).head(support) = w / w.norm();
  }
  manifest.head_path = dir / "head.hed";
  write_hed1(*manifest.head_path, head);

  manifest.labels_path = dir / "labels.lbl";
  write_lbl1(*manifest.labels_path, labels, config.classes);

  IndexList pool, test;
  for (Eigen::Index i = 0; i < n; ++i)
    (static_cast<std::uint32_t>(i / config.classes) < config.pool_per_class ? pool : test).push_back(static_cast<Index>(i));
  manifest.pool = pool;
  manifest.test = test;

  SynthOutput out;
  out.manifest = dir / "task.json";
  write_manifest(out.manifest, manifest);

  if (config.ood_count > 0) {
    const fs::path ood_dir = dir / "ood";
    fs::create_directories(ood_dir);
    Manifest ood;
    ood.mean_model_id = manifest.mean_model_id;
    ood.class_names = manifest.class_names;
    const Eigen::Index rest = config.dim - support;
    for (std::uint32_t m = 0; m < config.models; ++m) {
      SplitMix64 rng = SplitMix64::stream(config.seed ^ kOodSalt, m);
      FloatMatrix features = FloatMatrix::Zero(config.ood_count, config.dim);
      for (Eigen::Index i = 0; i < features.rows(); ++i)
        features.row(i).tail(rest) = random_unit(rng, rest).transpose().cast<float>();
      const std::string id = fmt::format("model{}", m);
      const fs::path path = ood_dir / (id + ".emb");
      write_emb1(path, features, true);
      ood.models.push_back({id, path});
    }
    out.ood_manifest = ood_dir / "ood.json";
    write_manifest(out.ood_manifest, ood);
  }
  return out;
}

}  // namespace gpens

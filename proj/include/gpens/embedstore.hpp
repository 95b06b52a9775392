#pragma once

// Binary embedding formats (EMB1 / LBL1 / HED1), the JSON task manifest, and
// deterministic few-shot sampling.
//
// All multi-byte fields are little-endian.
//
//   EMB1  "EMB1" | u32 version=1 | u64 N | u32 D | u8 dtype (0 = f32)
//         | u8 normalized | 6 zero bytes | N*D f32, row-major
//   LBL1  "LBL1" | u64 N | u32 C | N u32 class indices
//   HED1  "HED1" | u32 D | u32 C | D*C f32, column-major

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace gpens {

using FloatMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = std::size_t;
using IndexList = std::vector<Index>;

inline constexpr double kNormLoadTolerance = 1e-4;

struct EmbeddingFile {
  FloatMatrix features;  // N x D
  bool normalized = false;
};

struct LabelFile {
  std::vector<std::uint32_t> labels;
  std::uint32_t num_classes = 0;
};

struct EmbeddingTable {
  std::string model_id;
  FloatMatrix features;  // N x D
  std::vector<std::string> sample_ids;
  std::vector<std::uint32_t> labels;
  std::uint32_t num_classes = 0;
  bool normalized = false;

  Index rows() const { return static_cast<Index>(features.rows()); }
  Index dim() const { return static_cast<Index>(features.cols()); }
};

struct ZeroShotHead {
  Eigen::MatrixXd weights;  // D x C, unit-norm columns
  std::vector<std::string> class_names;
};

struct Splits {
  IndexList pool;   // source for few-shot sampling
  IndexList train;
  IndexList val;
  IndexList test;   // empty means "everything outside train and val"
};

struct TaskBundle {
  std::vector<EmbeddingTable> tables;
  std::optional<ZeroShotHead> head;
  Index mean_model = 0;  // position in `tables` of the mean-model
  std::vector<std::string> class_names;
  Splits splits;

  Index num_samples() const { return tables.empty() ? 0 : tables.front().rows(); }
  std::uint32_t num_classes() const;
  const std::vector<std::uint32_t>& labels() const { return tables.front().labels; }

  /// The explicit test split, or the complement of train and val.
  IndexList test_indices() const;
};

// Raw file I/O. Readers throw gpens::Error (BadMagic, TruncatedFile, ...).
EmbeddingFile read_emb1(const std::filesystem::path& path);
void write_emb1(const std::filesystem::path& path, const FloatMatrix& features, bool normalized);
LabelFile read_lbl1(const std::filesystem::path& path);
void write_lbl1(const std::filesystem::path& path, const std::vector<std::uint32_t>& labels,
                std::uint32_t num_classes);
ZeroShotHead read_hed1(const std::filesystem::path& path);
void write_hed1(const std::filesystem::path& path, const Eigen::MatrixXd& weights);

/// Reads an EMB1 file and validates row norms when its normalized flag is set.
EmbeddingTable load_embedding_table(const std::filesystem::path& path);

/// As above, attaching labels from a companion LBL1 file (N must agree).
EmbeddingTable load_embedding_table(const std::filesystem::path& emb_path,
                                    const std::filesystem::path& labels_path,
                                    std::string model_id);

struct ManifestModel {
  std::string id;
  std::filesystem::path emb_path;
};

struct Manifest {
  std::vector<ManifestModel> models;
  std::optional<std::filesystem::path> labels_path;
  std::optional<std::filesystem::path> head_path;
  std::string mean_model_id;
  std::vector<std::string> class_names;
  std::optional<std::vector<std::string>> sample_ids;
  std::optional<IndexList> pool;
  std::optional<IndexList> test;
};

/// Parses a manifest; relative paths resolve against the manifest's directory.
Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);

/// Loads every file a manifest references and checks cross-table alignment.
/// Manifests without labels (OOD sets) get all-zero labels and no head.
TaskBundle load_task(const std::filesystem::path& manifest_path);
TaskBundle assemble_task(const Manifest& manifest);

/// Per class: seeded shuffle of the pool members, take the first `shots`.
TaskBundle sample_few_shot(const TaskBundle& bundle, std::size_t shots, std::uint64_t seed);

/// Per class: seeded shuffle of the train members; floor(n/2) stay in train,
/// the rest move to val.
TaskBundle split_train_val(const TaskBundle& bundle, std::uint64_t seed);

/// Gathers the given rows of one table as 64-bit features.
Eigen::MatrixXd gather_rows(const EmbeddingTable& table, const IndexList& rows);
/// One matrix per model.
std::vector<Eigen::MatrixXd> gather_features(const TaskBundle& bundle, const IndexList& rows);
Eigen::MatrixXd one_hot(const std::vector<std::uint32_t>& labels, const IndexList& rows,
                        std::uint32_t num_classes);

}  // namespace gpens

#include "gpens/embedstore.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <set>

#include <fmt/core.h>
#include <nlohmann/json.hpp>

#include "gpens/error.hpp"
#include "gpens/rng.hpp"

namespace gpens {
namespace {

namespace fs = std::filesystem;

constexpr std::uint32_t kEmbVersion = 1;
constexpr std::uint8_t kDtypeF32 = 0;

class ByteReader {
 public:
  explicit ByteReader(const fs::path& path) : path_(path.string()) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::TruncatedFile, "cannot open " + path_, path_);
    bytes_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }

  void expect_magic(std::string_view magic) {
    const auto got = take(magic.size());
    if (std::memcmp(got, magic.data(), magic.size()) != 0)
      throw Error(ErrorKind::BadMagic,
                  fmt::format("{}: expected magic {}", path_, magic), path_);
  }

  std::uint8_t u8() { return static_cast<std::uint8_t>(*take(1)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }
  float f32() { return std::bit_cast<float>(u32()); }
  void skip(std::size_t n) { take(n); }

  std::size_t remaining() const { return bytes_.size() - pos_; }
  const std::string& path() const { return path_; }

  void require(std::uint64_t count, std::uint64_t width) {
    if (width != 0 && count > remaining() / width)
      throw Error(ErrorKind::TruncatedFile,
                  fmt::format("{}: payload shorter than header declares", path_), path_);
  }

 private:
  const char* take(std::size_t n) {
    if (n > remaining())
      throw Error(ErrorKind::TruncatedFile, fmt::format("{}: unexpected end of file", path_), path_);
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }

  std::uint64_t le(std::size_t n) {
    const auto* p = reinterpret_cast<const unsigned char*>(take(n));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
  }

  std::string path_;
  std::vector<char> bytes_;
  std::size_t pos_ = 0;
};

class ByteWriter {
 public:
  void magic(std::string_view m) { buf_.insert(buf_.end(), m.begin(), m.end()); }
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void zeros(std::size_t n) { buf_.insert(buf_.end(), n, '\0'); }

  void save(const fs::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string(), path.string());
    out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
    if (!out) throw Error(ErrorKind::IoError, "short write to " + path.string(), path.string());
  }

 private:
  void le(std::uint64_t v, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  std::vector<char> buf_;
};

void check_row_norms(const FloatMatrix& features, const std::string& path) {
  for (Eigen::Index r = 0; r < features.rows(); ++r) {
    const double norm = features.row(r).cast<double>().norm();
    if (!(std::abs(norm - 1.0) <= kNormLoadTolerance))
      throw Error(ErrorKind::NormViolation,
                  fmt::format("{}: row {} has L2 norm {:.8f}", path, r, norm), path);
  }
}

IndexList read_index_array(const nlohmann::json& j, const char* key) {
  if (!j.is_array()) throw Error(ErrorKind::InvalidManifest, fmt::format("'{}' must be an array", key));
  IndexList out;
  out.reserve(j.size());
  for (const auto& v : j) {
    if (!v.is_number_unsigned())
      throw Error(ErrorKind::InvalidManifest, fmt::format("'{}' entries must be non-negative integers", key));
    out.push_back(v.get<Index>());
  }
  return out;
}

void check_indices(const IndexList& rows, Index n, const char* what) {
  for (Index r : rows)
    if (r >= n)
      throw Error(ErrorKind::InvalidManifest, fmt::format("{} index {} out of range [0, {})", what, r, n));
}

}  // namespace

std::uint32_t TaskBundle::num_classes() const {
  return tables.empty() ? 0 : tables.front().num_classes;
}

IndexList TaskBundle::test_indices() const {
  if (!splits.test.empty()) return splits.test;
  std::vector<bool> used(num_samples(), false);
  for (Index i : splits.train) used[i] = true;
  for (Index i : splits.val) used[i] = true;
  IndexList out;
  for (Index i = 0; i < used.size(); ++i)
    if (!used[i]) out.push_back(i);
  return out;
}

EmbeddingFile read_emb1(const fs::path& path) {
  ByteReader in(path);
  in.expect_magic("EMB1");
  const std::uint32_t version = in.u32();
  if (version != kEmbVersion)
    throw Error(ErrorKind::VersionMismatch,
                fmt::format("{}: unsupported EMB1 version {}", in.path(), version), in.path());
  const std::uint64_t n = in.u64();
  const std::uint32_t d = in.u32();
  const std::uint8_t dtype = in.u8();
  const std::uint8_t normalized = in.u8();
  in.skip(6);
  if (dtype != kDtypeF32)
    throw Error(ErrorKind::InvalidArgument, fmt::format("{}: unsupported dtype {}", in.path(), dtype),
                in.path());
  if (n == 0 || d == 0)
    throw Error(ErrorKind::DimensionMismatch, fmt::format("{}: empty table ({} x {})", in.path(), n, d),
                in.path());
  in.require(n * d, 4);

  EmbeddingFile out;
  out.normalized = normalized != 0;
  out.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (Eigen::Index r = 0; r < out.features.rows(); ++r)
    for (Eigen::Index c = 0; c < out.features.cols(); ++c) out.features(r, c) = in.f32();
  return out;
}

void write_emb1(const fs::path& path, const FloatMatrix& features, bool normalized) {
  ByteWriter w;
  w.magic("EMB1");
  w.u32(kEmbVersion);
  w.u64(static_cast<std::uint64_t>(features.rows()));
  w.u32(static_cast<std::uint32_t>(features.cols()));
  w.u8(kDtypeF32);
  w.u8(normalized ? 1 : 0);
  w.zeros(6);
  for (Eigen::Index r = 0; r < features.rows(); ++r)
    for (Eigen::Index c = 0; c < features.cols(); ++c) w.f32(features(r, c));
  w.save(path);
}

LabelFile read_lbl1(const fs::path& path) {
  ByteReader in(path);
  in.expect_magic("LBL1");
  const std::uint64_t n = in.u64();
  LabelFile out;
  out.num_classes = in.u32();
  in.require(n, 4);
  out.labels.resize(n);
  for (auto& label : out.labels) {
    label = in.u32();
    if (label >= out.num_classes)
      throw Error(ErrorKind::DimensionMismatch,
                  fmt::format("{}: label {} not below class count {}", in.path(), label, out.num_classes),
                  in.path());
  }
  return out;
}

void write_lbl1(const fs::path& path, const std::vector<std::uint32_t>& labels,
                std::uint32_t num_classes) {
  ByteWriter w;
  w.magic("LBL1");
  w.u64(labels.size());
  w.u32(num_classes);
  for (auto l : labels) w.u32(l);
  w.save(path);
}

ZeroShotHead read_hed1(const fs::path& path) {
  ByteReader in(path);
  in.expect_magic("HED1");
  const std::uint32_t d = in.u32();
  const std::uint32_t c = in.u32();
  in.require(static_cast<std::uint64_t>(d) * c, 4);
  ZeroShotHead head;
  head.weights.resize(d, c);
  for (std::uint32_t col = 0; col < c; ++col)
    for (std::uint32_t row = 0; row < d; ++row) head.weights(row, col) = in.f32();
  for (std::uint32_t col = 0; col < c; ++col) {
    const double norm = head.weights.col(col).norm();
    if (!(std::abs(norm - 1.0) <= kNormLoadTolerance))
      throw Error(ErrorKind::NormViolation,
                  fmt::format("{}: head column {} has L2 norm {:.8f}", in.path(), col, norm), in.path());
  }
  return head;
}

void write_hed1(const fs::path& path, const Eigen::MatrixXd& weights) {
  ByteWriter w;
  w.magic("HED1");
  w.u32(static_cast<std::uint32_t>(weights.rows()));
  w.u32(static_cast<std::uint32_t>(weights.cols()));
  for (Eigen::Index col = 0; col < weights.cols(); ++col)
    for (Eigen::Index row = 0; row < weights.rows(); ++row) w.f32(static_cast<float>(weights(row, col)));
  w.save(path);
}

EmbeddingTable load_embedding_table(const fs::path& path) {
  EmbeddingFile file = read_emb1(path);
  if (file.normalized) check_row_norms(file.features, path.string());
  EmbeddingTable table;
  table.model_id = path.stem().string();
  table.normalized = file.normalized;
  table.features = std::move(file.features);
  table.labels.assign(table.rows(), 0);
  table.num_classes = 1;
  table.sample_ids.reserve(table.rows());
  for (Index i = 0; i < table.rows(); ++i) table.sample_ids.push_back(std::to_string(i));
  return table;
}

EmbeddingTable load_embedding_table(const fs::path& emb_path, const fs::path& labels_path,
                                    std::string model_id) {
  EmbeddingTable table = load_embedding_table(emb_path);
  LabelFile labels = read_lbl1(labels_path);
  if (labels.labels.size() != table.rows())
    throw Error(ErrorKind::DimensionMismatch,
                fmt::format("{} has {} rows but {} has {} labels", emb_path.string(), table.rows(),
                            labels_path.string(), labels.labels.size()),
                labels_path.string());
  table.model_id = std::move(model_id);
  table.labels = std::move(labels.labels);
  table.num_classes = labels.num_classes;
  return table;
}

Manifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::TruncatedFile, "cannot open " + path.string(), path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidManifest, fmt::format("{}: {}", path.string(), e.what()), path.string());
  }
  const fs::path base = path.parent_path();
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };

  Manifest m;
  try {
    for (const auto& entry : j.at("models"))
      m.models.push_back({entry.at("id").get<std::string>(), resolve(entry.at("emb_path").get<std::string>())});
    if (j.contains("labels_path")) m.labels_path = resolve(j["labels_path"].get<std::string>());
    if (j.contains("head_path")) m.head_path = resolve(j["head_path"].get<std::string>());
    m.mean_model_id = j.value("mean_model_id", m.models.empty() ? std::string{} : m.models.front().id);
    if (j.contains("class_names")) m.class_names = j["class_names"].get<std::vector<std::string>>();
    if (j.contains("sample_ids")) m.sample_ids = j["sample_ids"].get<std::vector<std::string>>();
    if (j.contains("splits")) {
      const auto& s = j["splits"];
      if (s.contains("pool")) m.pool = read_index_array(s["pool"], "pool");
      if (s.contains("test")) m.test = read_index_array(s["test"], "test");
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidManifest, fmt::format("{}: {}", path.string(), e.what()), path.string());
  }
  if (m.models.empty()) throw Error(ErrorKind::InvalidManifest, path.string() + ": no models", path.string());
  return m;
}

void write_manifest(const fs::path& path, const Manifest& m) {
  const fs::path base = path.parent_path();
  auto rel = [&](const fs::path& p) { return p.lexically_relative(base).generic_string(); };
  nlohmann::ordered_json j;
  j["models"] = nlohmann::ordered_json::array();
  for (const auto& model : m.models) j["models"].push_back({{"id", model.id}, {"emb_path", rel(model.emb_path)}});
  if (m.labels_path) j["labels_path"] = rel(*m.labels_path);
  if (m.head_path) j["head_path"] = rel(*m.head_path);
  j["mean_model_id"] = m.mean_model_id;
  j["class_names"] = m.class_names;
  if (m.sample_ids) j["sample_ids"] = *m.sample_ids;
  if (m.pool || m.test) {
    j["splits"] = nlohmann::ordered_json::object();
    if (m.pool) j["splits"]["pool"] = *m.pool;
    if (m.test) j["splits"]["test"] = *m.test;
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string(), path.string());
  out << j.dump(2) << '\n';
}

TaskBundle assemble_task(const Manifest& m) {
  TaskBundle bundle;
  std::optional<LabelFile> labels;
  if (m.labels_path) labels = read_lbl1(*m.labels_path);

  std::set<std::string> seen_ids;
  for (const auto& model : m.models) {
    if (!seen_ids.insert(model.id).second)
      throw Error(ErrorKind::InvalidManifest, "duplicate model id " + model.id);
    EmbeddingTable table = load_embedding_table(model.emb_path);
    table.model_id = model.id;
    if (labels) {
      if (labels->labels.size() != table.rows())
        throw Error(ErrorKind::DimensionMismatch,
                    fmt::format("{} has {} rows but labels file has {}", model.emb_path.string(),
                                table.rows(), labels->labels.size()),
                    model.emb_path.string());
      table.labels = labels->labels;
      table.num_classes = labels->num_classes;
    }
    if (!bundle.tables.empty() && table.rows() != bundle.tables.front().rows())
      throw Error(ErrorKind::DimensionMismatch,
                  fmt::format("model {} has {} rows, expected {}", model.id, table.rows(),
                              bundle.tables.front().rows()),
                  model.emb_path.string());
    bundle.tables.push_back(std::move(table));
  }

  const Index n = bundle.num_samples();
  if (m.sample_ids) {
    if (m.sample_ids->size() != n)
      throw Error(ErrorKind::DimensionMismatch,
                  fmt::format("manifest lists {} sample ids for {} rows", m.sample_ids->size(), n));
    if (std::set<std::string>(m.sample_ids->begin(), m.sample_ids->end()).size() != n)
      throw Error(ErrorKind::InvalidManifest, "sample ids are not unique");
    for (auto& table : bundle.tables) table.sample_ids = *m.sample_ids;
  }

  auto mean_it = std::find_if(m.models.begin(), m.models.end(),
                              [&](const ManifestModel& mm) { return mm.id == m.mean_model_id; });
  if (mean_it == m.models.end())
    throw Error(ErrorKind::InvalidManifest, "mean_model_id '" + m.mean_model_id + "' is not a listed model");
  bundle.mean_model = static_cast<Index>(mean_it - m.models.begin());

  bundle.class_names = m.class_names;
  if (m.head_path) {
    ZeroShotHead head = read_hed1(*m.head_path);
    const auto& mean_table = bundle.tables[bundle.mean_model];
    if (static_cast<Index>(head.weights.rows()) != mean_table.dim())
      throw Error(ErrorKind::DimensionMismatch,
                  fmt::format("head has D={} but mean model {} has D={}", head.weights.rows(),
                              mean_table.model_id, mean_table.dim()),
                  m.head_path->string());
    if (labels && static_cast<std::uint32_t>(head.weights.cols()) != labels->num_classes)
      throw Error(ErrorKind::DimensionMismatch,
                  fmt::format("head has C={} but labels declare C={}", head.weights.cols(), labels->num_classes),
                  m.head_path->string());
    head.class_names = m.class_names;
    bundle.head = std::move(head);
  }

  if (m.pool) {
    check_indices(*m.pool, n, "pool");
    bundle.splits.pool = *m.pool;
  } else {
    bundle.splits.pool.resize(n);
    for (Index i = 0; i < n; ++i) bundle.splits.pool[i] = i;
  }
  if (m.test) {
    check_indices(*m.test, n, "test");
    std::set<Index> pool(bundle.splits.pool.begin(), bundle.splits.pool.end());
    for (Index t : *m.test)
      if (pool.count(t)) throw Error(ErrorKind::InvalidManifest, fmt::format("index {} is in both pool and test", t));
    bundle.splits.test = *m.test;
  }
  return bundle;
}

TaskBundle load_task(const fs::path& manifest_path) { return assemble_task(read_manifest(manifest_path)); }

TaskBundle sample_few_shot(const TaskBundle& bundle, std::size_t shots, std::uint64_t seed) {
  if (shots == 0) throw Error(ErrorKind::InvalidArgument, "shots must be positive");
  const auto& labels = bundle.labels();
  std::map<std::uint32_t, IndexList> by_class;
  for (std::uint32_t c = 0; c < bundle.num_classes(); ++c) by_class[c];
  for (Index i : bundle.splits.pool) by_class[labels[i]].push_back(i);

  TaskBundle out = bundle;
  out.splits.train.clear();
  out.splits.val.clear();
  for (auto& [cls, members] : by_class) {
    if (members.size() < shots)
      throw Error(ErrorKind::InsufficientSamples,
                  fmt::format("class {} has {} samples, {} shots requested", cls, members.size(), shots),
                  std::to_string(cls));
    std::sort(members.begin(), members.end());
    SplitMix64 rng = SplitMix64::stream(seed, cls);
    shuffle(std::span<Index>(members), rng);
    out.splits.train.insert(out.splits.train.end(), members.begin(), members.begin() + shots);
  }
  return out;
}

TaskBundle split_train_val(const TaskBundle& bundle, std::uint64_t seed) {
  const auto& labels = bundle.labels();
  std::map<std::uint32_t, IndexList> by_class;
  for (Index i : bundle.splits.train) by_class[labels[i]].push_back(i);

  // Distinct salt so the val split is not a prefix of the sampling shuffle.
  const std::uint64_t split_seed = SplitMix64(seed ^ 0x747261696E76616CULL).next();

  TaskBundle out = bundle;
  out.splits.train.clear();
  out.splits.val.clear();
  for (auto& [cls, members] : by_class) {
    if (members.size() < 2)
      throw Error(ErrorKind::TooFewShots,
                  fmt::format("class {} has {} training sample(s); a validation split needs 2", cls,
                              members.size()),
                  std::to_string(cls));
    SplitMix64 rng = SplitMix64::stream(split_seed, cls);
    shuffle(std::span<Index>(members), rng);
    const std::size_t keep = members.size() / 2;
    out.splits.train.insert(out.splits.train.end(), members.begin(), members.begin() + keep);
    out.splits.val.insert(out.splits.val.end(), members.begin() + keep, members.end());
  }
  return out;
}

Eigen::MatrixXd gather_rows(const EmbeddingTable& table, const IndexList& rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), table.features.cols());
  for (std::size_t r = 0; r < rows.size(); ++r)
    out.row(static_cast<Eigen::Index>(r)) = table.features.row(static_cast<Eigen::Index>(rows[r])).cast<double>();
  return out;
}

std::vector<Eigen::MatrixXd> gather_features(const TaskBundle& bundle, const IndexList& rows) {
  std::vector<Eigen::MatrixXd> out;
  out.reserve(bundle.tables.size());
  for (const auto& table : bundle.tables) out.push_back(gather_rows(table, rows));
  return out;
}

Eigen::MatrixXd one_hot(const std::vector<std::uint32_t>& labels, const IndexList& rows,
                        std::uint32_t num_classes) {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows.size()), num_classes);
  for (std::size_t r = 0; r < rows.size(); ++r) out(static_cast<Eigen::Index>(r), labels[rows[r]]) = 1.0;
  return out;
}

}  // namespace gpens

#include "gpens/model_file.hpp"

#include <fstream>
#include <iterator>

#include <fmt/core.h>

#include "gpens/error.hpp"

namespace gpens {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

void put_u64(std::string& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

struct Cursor {
  const std::string& bytes;
  std::string path;
  std::size_t pos = 0;

  std::uint64_t take(std::size_t n) {
    if (n > bytes.size() - pos) throw Error(ErrorKind::TruncatedFile, path + ": unexpected end of model file", path);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
    pos += n;
    return v;
  }

  std::string take_string(std::uint64_t n) {
    if (n > bytes.size() - pos) throw Error(ErrorKind::TruncatedFile, path + ": unexpected end of model file", path);
    std::string s = bytes.substr(pos, n);
    pos += n;
    return s;
  }

  IndexList take_indices() {
    const std::uint64_t n = take(8);
    if (n > (bytes.size() - pos) / 8) throw Error(ErrorKind::TruncatedFile, path + ": index list truncated", path);
    IndexList out(n);
    for (auto& v : out) v = take(8);
    return out;
  }
};

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::TruncatedFile, "cannot open " + path.string(), path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

json parse_header(Cursor& cur) {
  if (cur.take_string(4) != "GPM1") throw Error(ErrorKind::BadMagic, cur.path + ": expected magic GPM1", cur.path);
  const auto version = static_cast<std::uint32_t>(cur.take(4));
  if (version != kModelFormatVersion)
    throw Error(ErrorKind::VersionMismatch,
                fmt::format("{}: model format version {}, this build reads {}", cur.path, version, kModelFormatVersion),
                cur.path);
  const std::uint64_t header_bytes = cur.take(8);
  try {
    json header = json::parse(cur.take_string(header_bytes));
    if (header.value("format_version", 0u) != kModelFormatVersion)
      throw Error(ErrorKind::VersionMismatch, cur.path + ": header format version mismatch", cur.path);
    return header;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidArgument, fmt::format("{}: bad model header: {}", cur.path, e.what()), cur.path);
  }
}

}  // namespace

ordered_json hyper_to_json(const HyperParams& hyper) {
  ordered_json j;
  j["log_sigma2"] = hyper.log_sigma2;
  j["kernels"] = ordered_json::array();
  for (const auto& k : hyper.kernels) {
    ordered_json kj;
    kj["model_id"] = k.model_id;
    kj["kind"] = to_string(k.kind);
    kj["scalar_constraint"] = k.scalar_constraint;
    kj["log_lengthscales"] = std::vector<double>(k.log_lengthscales.data(), k.log_lengthscales.data() + k.dim());
    j["kernels"].push_back(std::move(kj));
  }
  ordered_json mj;
  mj["kind"] = to_string(mean_kind(hyper.mean));
  if (const auto* c = std::get_if<ConstantMean>(&hyper.mean)) {
    mj["value"] = std::vector<double>(c->value.data(), c->value.data() + c->value.size());
  } else if (const auto* z = std::get_if<ZeroShotSoftmaxMean>(&hyper.mean)) {
    mj["log_tau"] = z->log_tau;
    mj["log_gamma"] = z->log_gamma;
  }
  j["mean"] = std::move(mj);
  return j;
}

HyperParams hyper_from_json(const json& j, std::shared_ptr<const Eigen::MatrixXd> head) {
  HyperParams hyper;
  try {
    hyper.log_sigma2 = j.at("log_sigma2").get<double>();
    for (const auto& kj : j.at("kernels")) {
      DeepKernelSpec spec;
      spec.model_id = kj.at("model_id").get<std::string>();
      spec.kind = parse_base_kernel(kj.at("kind").get<std::string>());
      spec.scalar_constraint = kj.at("scalar_constraint").get<bool>();
      const auto ls = kj.at("log_lengthscales").get<std::vector<double>>();
      spec.log_lengthscales = Eigen::Map<const Eigen::VectorXd>(ls.data(), static_cast<Eigen::Index>(ls.size()));
      hyper.kernels.push_back(std::move(spec));
    }
    const auto& mj = j.at("mean");
    switch (parse_mean_kind(mj.at("kind").get<std::string>())) {
      case MeanKind::Zero: hyper.mean = ZeroMean{}; break;
      case MeanKind::Constant: {
        const auto v = mj.at("value").get<std::vector<double>>();
        hyper.mean = ConstantMean{Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()))};
        break;
      }
      case MeanKind::ZeroShotSoftmax:
        if (!head) throw Error(ErrorKind::InvalidManifest, "model uses a zero-shot mean but the manifest has no head");
        hyper.mean = ZeroShotSoftmaxMean{mj.at("log_tau").get<double>(), mj.at("log_gamma").get<double>(), std::move(head)};
        break;
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidArgument, fmt::format("bad hyper-parameter record: {}", e.what()));
  }
  return hyper;
}

void write_model(const fs::path& path, const ModelArtifact& model) {
  ordered_json header;
  header["format_version"] = model.format_version;
  header["objective"] = to_string(model.objective);
  header["refit_on"] = to_string(model.refit_on);
  header["model_ids"] = model.model_ids;
  header["dims"] = model.dims;
  header["num_samples"] = model.num_samples;
  header["num_classes"] = model.num_classes;
  header["hyper"] = hyper_to_json(model.hyper);
  header["config"] = model.config;
  const std::string text = header.dump(2);

  std::string buf = "GPM1";
  put_u32(buf, model.format_version);
  put_u64(buf, text.size());
  buf += text;
  for (const IndexList* list : {&model.train, &model.val}) {
    put_u64(buf, list->size());
    for (Index i : *list) put_u64(buf, i);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string(), path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

json read_model_header(const fs::path& path) {
  const std::string bytes = slurp(path);
  Cursor cur{bytes, path.string()};
  return parse_header(cur);
}

ModelArtifact read_model(const fs::path& path, std::shared_ptr<const Eigen::MatrixXd> head) {
  const std::string bytes = slurp(path);
  Cursor cur{bytes, path.string()};
  const json header = parse_header(cur);

  ModelArtifact model;
  try {
    model.format_version = header.at("format_version").get<std::uint32_t>();
    model.objective = parse_objective(header.at("objective").get<std::string>());
    model.refit_on = parse_refit_on(header.at("refit_on").get<std::string>());
    model.model_ids = header.at("model_ids").get<std::vector<std::string>>();
    model.dims = header.at("dims").get<std::vector<Eigen::Index>>();
    model.num_samples = header.at("num_samples").get<std::uint64_t>();
    model.num_classes = header.at("num_classes").get<std::uint32_t>();
    model.config = header.at("config");
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidArgument, fmt::format("{}: bad model header: {}", path.string(), e.what()),
                path.string());
  }
  model.hyper = hyper_from_json(header.at("hyper"), std::move(head));
  model.train = cur.take_indices();
  model.val = cur.take_indices();
  return model;
}

}  // namespace gpens

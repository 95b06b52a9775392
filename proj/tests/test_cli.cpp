#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gpens/cli.hpp"
#include "gpens/error.hpp"
#include "gpens/model_file.hpp"

using namespace gpens;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int code = 0;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "gpens");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Run r;
  r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("gpens_test_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(slurp(p));
  for (std::string line; std::getline(in, line);) {
    std::vector<std::string> cells;
    std::istringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

void check_error_line(const Run& r, const std::string& kind) {
  CHECK(r.code == 2);
  REQUIRE(!r.err.empty());
  CHECK(r.err.find('\n') == r.err.size() - 1);
  const json j = json::parse(r.err);
  CHECK(j.at("error") == kind);
  CHECK(j.contains("message"));
}

/// A small separable task: both models separate every class.
fs::path separable_task(const fs::path& dir, std::uint32_t models = 2) {
  const Run r = run({"synth", "--out", dir.string(), "--classes", "4", "--per-class", "26", "--pool-per-class", "16",
                     "--models", std::to_string(models), "--layout", "shared", "--noise", "0.1"});
  REQUIRE(r.code == 0);
  return dir / "task.json";
}

}  // namespace

TEST_CASE("fit with defaults writes a model and a 100-step trace") {
  const fs::path dir = fresh_dir("fit_defaults");
  const Run s = run({"synth", "--out", (dir / "data").string()});
  REQUIRE(s.code == 0);
  const Run r = run({"fit", "--manifest", (dir / "data" / "task.json").string(), "--output-dir", (dir / "out").string()});
  CHECK(r.code == 0);
  CHECK(r.err.empty());
  REQUIRE(fs::exists(dir / "out" / "model.gpm"));
  const json trace = read_json(dir / "out" / "trace.json");
  CHECK(trace.at("steps").size() == 100);
  CHECK(trace.at("objective") == "predictive");
  CHECK(trace.at("fallback") == false);
  CHECK(trace.at("num_train") == 8 * 8);
  CHECK(trace.at("num_val") == 8 * 8);
  const json header = read_model_header(dir / "out" / "model.gpm");
  CHECK(header.at("format_version") == 1);
  CHECK(header.at("refit_on") == "train+val");
}

TEST_CASE("one shot with the predictive objective falls back to the marginal likelihood") {
  const fs::path dir = fresh_dir("fallback");
  const fs::path task = separable_task(dir / "data");
  const Run r = run({"fit", "--manifest", task.string(), "--shots", "1", "--objective", "predictive", "--output-dir",
                     (dir / "out").string()});
  CHECK(r.code == 0);
  CHECK(r.err.find("warning") != std::string::npos);
  const json trace = read_json(dir / "out" / "trace.json");
  CHECK(trace.at("requested_objective") == "predictive");
  CHECK(trace.at("objective") == "marginal");
  CHECK(trace.at("fallback") == true);
  CHECK(trace.at("num_val") == 0);
  CHECK(read_model_header(dir / "out" / "model.gpm").at("objective") == "marginal");
}

TEST_CASE("a missing labels file is a TruncatedFile error naming the path") {
  const fs::path dir = fresh_dir("missing_labels");
  const fs::path task = separable_task(dir / "data");
  fs::remove(dir / "data" / "labels.lbl");
  const Run r = run({"fit", "--manifest", task.string(), "--output-dir", (dir / "out").string()});
  check_error_line(r, "TruncatedFile");
  CHECK(json::parse(r.err).at("detail").get<std::string>().find("labels.lbl") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "out" / "model.gpm"));
}

TEST_CASE("eval reaches accuracy 1.00 on a separable task and writes a well-formed report") {
  const fs::path dir = fresh_dir("eval");
  const fs::path task = separable_task(dir / "data");
  REQUIRE(run({"fit", "--manifest", task.string(), "--output-dir", (dir / "out").string()}).code == 0);
  const Run r = run({"eval", "--model", (dir / "out" / "model.gpm").string(), "--manifest", task.string(),
                     "--output-dir", (dir / "out").string()});
  REQUIRE(r.code == 0);
  CHECK(r.out.starts_with("accuracy 1.00\n"));

  const json report = read_json(dir / "out" / "eval_report.json");
  CHECK(report.at("format") == "gpens-eval-report");
  CHECK(report.at("version") == 1);
  CHECK(report.at("accuracy") == 1.0);
  CHECK(report.at("num_test") == 4 * 10);
  for (const char* key : {"ece", "tace", "mean_variance"}) {
    INFO(key);
    REQUIRE(report.at(key).is_number());
    CHECK(report.at(key).get<double>() >= 0.0);
  }
  CHECK(report.at("ece").get<double>() <= 1.0);
  CHECK(report.at("tace").get<double>() <= 1.0);
  CHECK(report.at("ece_bins") == 15);
  CHECK(report.at("tace_bins") == 15);
  CHECK(report.at("tace_threshold") == 0.01);
  const json& bins = report.at("reliability_bins");
  REQUIRE(bins.size() == 15);
  std::size_t total = 0;
  for (const auto& b : bins) {
    for (const char* key : {"lo", "hi", "mean_confidence", "accuracy", "count"}) CHECK(b.contains(key));
    total += b.at("count").get<std::size_t>();
  }
  CHECK(total == 40);
  const auto csv = read_csv(dir / "out" / "reliability.csv");
  CHECK(csv.size() == 16);
}

TEST_CASE("evaluating on the training points with near-zero noise is exact") {
  const fs::path dir = fresh_dir("eval_train");
  const fs::path task = separable_task(dir / "data");
  REQUIRE(run({"fit", "--manifest", task.string(), "--objective", "marginal", "--output-dir", (dir / "out").string()})
              .code == 0);
  const fs::path model_path = dir / "out" / "model.gpm";
  ModelArtifact model = read_model(model_path, std::make_shared<const Eigen::MatrixXd>(load_task(task).head->weights));
  model.hyper.log_sigma2 = std::log(1e-8);
  write_model(dir / "out" / "interp.gpm", model);

  Manifest m = read_manifest(task);
  m.test = model.train;
  m.pool = IndexList{};
  for (Index i = 0; i < model.num_samples; ++i)
    if (std::find(model.train.begin(), model.train.end(), i) == model.train.end()) m.pool->push_back(i);
  write_manifest(dir / "data" / "train_as_test.json", m);
  const Run r = run({"eval", "--model", (dir / "out" / "interp.gpm").string(), "--manifest",
                     (dir / "data" / "train_as_test.json").string(), "--output-dir", (dir / "out2").string()});
  REQUIRE(r.code == 0);
  CHECK(r.out.starts_with("accuracy 1.00\n"));
  CHECK(read_json(dir / "out2" / "eval_report.json").at("mean_variance").get<double>() < 1e-6);
}

TEST_CASE("a model with an unknown format version is rejected") {
  const fs::path dir = fresh_dir("version");
  const fs::path task = separable_task(dir / "data");
  REQUIRE(run({"fit", "--manifest", task.string(), "--steps", "2", "--output-dir", (dir / "out").string()}).code == 0);
  std::string bytes = slurp(dir / "out" / "model.gpm");
  bytes[4] = 9;
  std::ofstream(dir / "out" / "bad.gpm", std::ios::binary) << bytes;
  const Run r = run({"eval", "--model", (dir / "out" / "bad.gpm").string(), "--manifest", task.string(),
                     "--output-dir", (dir / "out").string()});
  check_error_line(r, "VersionMismatch");
}

TEST_CASE("ood against the in-distribution set itself is chance level") {
  const fs::path dir = fresh_dir("ood_self");
  const fs::path task = separable_task(dir / "data");
  REQUIRE(run({"fit", "--manifest", task.string(), "--output-dir", (dir / "out").string()}).code == 0);
  const Run r = run({"ood", "--model", (dir / "out" / "model.gpm").string(), "--manifest", task.string(),
                     "--ood-manifest", task.string(), "--output-dir", (dir / "out").string()});
  REQUIRE(r.code == 0);
  const json report = read_json(dir / "out" / "ood_report.json");
  const double a = report.at("ood").at(0).at("auroc").get<double>();
  CHECK(a >= 0.48);
  CHECK(a <= 0.52);
}

TEST_CASE("orthogonal OOD sets separate and share histogram edges") {
  const fs::path dir = fresh_dir("ood_orth");
  const fs::path task = separable_task(dir / "data");
  const fs::path ood = dir / "data" / "ood" / "ood.json";
  REQUIRE(run({"fit", "--manifest", task.string(), "--output-dir", (dir / "out").string()}).code == 0);
  const Run r = run({"ood", "--model", (dir / "out" / "model.gpm").string(), "--manifest", task.string(),
                     "--ood-manifest", ood.string(), "--ood-manifest", ood.string(), "--bins", "20", "--output-dir",
                     (dir / "out").string()});
  REQUIRE(r.code == 0);
  const json report = read_json(dir / "out" / "ood_report.json");
  REQUIRE(report.at("ood").size() == 2);
  CHECK(report.at("range") == json::array({0.0, 2.0}));
  for (const auto& entry : report.at("ood")) {
    CHECK(entry.at("auroc").get<double>() >= 0.99);
    CHECK(entry.at("mean_variance").get<double>() > report.at("id").at("mean_variance").get<double>());
  }
  const auto a = read_csv(dir / "out" / report.at("ood").at(0).at("histogram_csv").get<std::string>());
  const auto b = read_csv(dir / "out" / report.at("ood").at(1).at("histogram_csv").get<std::string>());
  const auto id = read_csv(dir / "out" / "hist_id.csv");
  REQUIRE(a.size() == 21);
  CHECK(a[0] == std::vector<std::string>{"bin_lo", "bin_hi", "count", "density"});
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i][0] == b[i][0]);
    CHECK(a[i][1] == b[i][1]);
    CHECK(a[i][0] == id[i][0]);
  }
}

TEST_CASE("kernel-viz writes per-model grams and their sum") {
  const fs::path dir = fresh_dir("viz");
  const fs::path task = separable_task(dir / "data", 3);
  REQUIRE(run({"fit", "--manifest", task.string(), "--steps", "5", "--output-dir", (dir / "out").string()}).code == 0);
  const Run r = run({"kernel-viz", "--model", (dir / "out" / "model.gpm").string(), "--manifest", task.string(),
                     "--samples", "12", "--seed", "3", "--output-dir", (dir / "viz").string()});
  REQUIRE(r.code == 0);
  std::vector<fs::path> grams;
  for (const auto& e : fs::directory_iterator(dir / "viz"))
    if (e.path().filename().string().starts_with("gram_")) grams.push_back(e.path());
  CHECK(grams.size() == 4);

  auto load = [&](const std::string& name) {
    const auto rows = read_csv(dir / "viz" / name);
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.at(0).size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < rows[i].size(); ++j)
        m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = std::stod(rows[i][j]);
    return m;
  };
  const Eigen::MatrixXd ens = load("gram_ensemble.csv");
  REQUIRE(ens.rows() == 12);
  REQUIRE(ens.cols() == 12);
  const Eigen::MatrixXd sum = load("gram_model0.csv") + load("gram_model1.csv") + load("gram_model2.csv");
  CHECK((ens - sum).cwiseAbs().maxCoeff() < 1e-12);
  for (Eigen::Index i = 0; i < 12; ++i) CHECK(ens(i, i) == 3.0);

  const Run too_many = run({"kernel-viz", "--model", (dir / "out" / "model.gpm").string(), "--manifest",
                            task.string(), "--samples", "1000", "--output-dir", (dir / "viz").string()});
  check_error_line(too_many, "InsufficientSamples");
}

TEST_CASE("usage errors and help") {
  const Run help = run({"--help"});
  CHECK(help.code == 0);
  CHECK(help.out.find("fit") != std::string::npos);
  const Run missing = run({"fit"});
  CHECK(missing.code == 64);
  CHECK(json::parse(missing.err).at("error") == "UsageError");
  const Run bad = run({"fit", "--manifest", "x.json", "--objective", "bogus"});
  CHECK(bad.code != 0);
  CHECK(json::parse(bad.err).contains("error"));
  const Run none = run({"fit", "--manifest", "/nonexistent/task.json"});
  check_error_line(none, "TruncatedFile");
}

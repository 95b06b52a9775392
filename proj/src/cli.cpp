#include "gpens/cli.hpp"

#include <algorithm>
#include <fstream>
#include <ostream>

#include <CLI11.hpp>
#include <fmt/core.h>
#include <nlohmann/json.hpp>

#include "gpens/error.hpp"
#include "gpens/evalmetrics.hpp"
#include "gpens/model_file.hpp"
#include "gpens/rng.hpp"

namespace gpens {
namespace {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

constexpr int kExitModuleError = 2;
constexpr int kExitUsage = 64;
constexpr int kExitInternal = 70;
constexpr auto kReplace = nlohmann::json::error_handler_t::replace;

std::string fmt_double(double v) { return fmt::format("{:.17g}", v); }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string(), path.string());
  out << text;
}

void write_json(const fs::path& path, const ordered_json& j) { write_text(path, j.dump(2) + "\n"); }

std::shared_ptr<const Eigen::MatrixXd> head_of(const TaskBundle& bundle) {
  if (!bundle.head) return nullptr;
  return std::make_shared<const Eigen::MatrixXd>(bundle.head->weights);
}

// Reorders the bundle's tables to match `model_ids`, checking dimensions.
TaskBundle align_to(TaskBundle bundle, const std::vector<std::string>& model_ids,
                    const std::vector<Eigen::Index>& dims) {
  if (bundle.tables.size() != model_ids.size())
    throw Error(ErrorKind::ModelCountMismatch,
                fmt::format("manifest lists {} models, the model file {}", bundle.tables.size(), model_ids.size()));
  const std::string mean_id = bundle.tables[bundle.mean_model].model_id;
  std::vector<EmbeddingTable> ordered;
  for (std::size_t i = 0; i < model_ids.size(); ++i) {
    auto it = std::find_if(bundle.tables.begin(), bundle.tables.end(),
                           [&](const EmbeddingTable& t) { return t.model_id == model_ids[i]; });
    if (it == bundle.tables.end())
      throw Error(ErrorKind::DimensionMismatch, "manifest has no model '" + model_ids[i] + "'");
    if (static_cast<Eigen::Index>(it->dim()) != dims[i])
      throw Error(ErrorKind::DimensionMismatch,
                  fmt::format("model {} has D={} but was fitted with D={}", model_ids[i], it->dim(), dims[i]));
    ordered.push_back(std::move(*it));
  }
  bundle.tables = std::move(ordered);
  for (std::size_t i = 0; i < bundle.tables.size(); ++i)
    if (bundle.tables[i].model_id == mean_id) bundle.mean_model = i;
  return bundle;
}

std::vector<std::uint32_t> labels_at(const TaskBundle& bundle, const IndexList& rows) {
  std::vector<std::uint32_t> out;
  out.reserve(rows.size());
  for (Index i : rows) out.push_back(bundle.labels()[i]);
  return out;
}

struct LoadedModel {
  TaskBundle bundle;
  ModelArtifact model;
};

LoadedModel load_model_and_task(const fs::path& model_path, const fs::path& manifest_path) {
  // Check the artifact's version before touching the task files.
  read_model_header(model_path);
  TaskBundle bundle = load_task(manifest_path);
  ModelArtifact model = read_model(model_path, head_of(bundle));
  if (bundle.num_samples() != model.num_samples || bundle.num_classes() != model.num_classes)
    throw Error(ErrorKind::DimensionMismatch,
                fmt::format("model was fitted on {} samples / {} classes, manifest has {} / {}", model.num_samples,
                            model.num_classes, bundle.num_samples(), bundle.num_classes()));
  bundle = align_to(std::move(bundle), model.model_ids, model.dims);
  bundle.splits.train = model.train;
  bundle.splits.val = model.val;
  return {std::move(bundle), std::move(model)};
}

GpTask task_for_model(const LoadedModel& lm) { return make_task(lm.bundle); }

std::string histogram_csv(const Histogram& h) {
  std::string out = "bin_lo,bin_hi,count,density\n";
  for (std::size_t b = 0; b < h.densities.size(); ++b)
    out += fmt::format("{},{},{},{}\n", fmt_double(h.edges[b]), fmt_double(h.edges[b + 1]), h.counts[b],
                       fmt_double(h.densities[b]));
  return out;
}

std::string matrix_csv(const Eigen::MatrixXd& m) {
  std::string out;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (c) out += ',';
      out += fmt_double(m(r, c));
    }
    out += '\n';
  }
  return out;
}

std::string safe_name(std::string s) {
  for (char& ch : s)
    if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '-' && ch != '_') ch = '_';
  return s;
}

ordered_json config_echo(const RunConfig& c) {
  ordered_json j;
  j["manifest"] = c.manifest_path.generic_string();
  j["shots"] = c.shots;
  j["seed"] = c.seed;
  j["objective"] = to_string(c.objective);
  j["steps"] = c.steps;
  j["learning_rate"] = c.learning_rate;
  j["refit_on"] = to_string(c.refit_on);
  j["base_kernel"] = to_string(c.base_kernel);
  j["mean_variant"] = to_string(c.mean_variant);
  j["scalar_lengthscale"] = c.scalar_lengthscale;
  return j;
}

}  // namespace

void RunConfig::validate() const {
  if (shots < 1) throw Error(ErrorKind::InvalidArgument, "shots must be at least 1");
  if (steps < 1) throw Error(ErrorKind::InvalidArgument, "steps must be at least 1");
  if (!(learning_rate > 0.0)) throw Error(ErrorKind::InvalidArgument, "learning rate must be positive");
}

FeatureSet features_of(const TaskBundle& bundle, const IndexList& rows) {
  FeatureSet out;
  out.kernel = gather_features(bundle, rows);
  out.mean = out.kernel[bundle.mean_model];
  return out;
}

GpTask make_task(const TaskBundle& bundle) {
  GpTask task;
  task.num_classes = bundle.num_classes();
  task.train = features_of(bundle, bundle.splits.train);
  task.train_targets = one_hot(bundle.labels(), bundle.splits.train, bundle.num_classes());
  task.val = features_of(bundle, bundle.splits.val);
  task.val_targets = one_hot(bundle.labels(), bundle.splits.val, bundle.num_classes());
  return task;
}

HyperParamShape shape_of(const TaskBundle& bundle, const RunConfig& config) {
  HyperParamShape shape;
  for (const auto& t : bundle.tables) {
    shape.model_ids.push_back(t.model_id);
    shape.dims.push_back(static_cast<Eigen::Index>(t.dim()));
  }
  shape.kind = config.base_kernel;
  shape.scalar_lengthscale = config.scalar_lengthscale;
  shape.mean = config.mean_variant;
  shape.num_classes = bundle.num_classes();
  shape.head = head_of(bundle);
  if (shape.mean == MeanKind::ZeroShotSoftmax && !shape.head)
    throw Error(ErrorKind::InvalidManifest, "zero-shot mean needs head_path in the manifest");
  return shape;
}

FitOutcome cmd_fit(const RunConfig& config, std::ostream& log) {
  config.validate();
  TaskBundle bundle = sample_few_shot(load_task(config.manifest_path), config.shots, config.seed);

  FitOutcome outcome;
  outcome.objective_used = config.objective;
  std::string warning;
  if (config.objective == Objective::PredictiveLikelihood) {
    if (config.shots < 2) {
      warning = "predictive likelihood needs at least 2 shots per class; using the marginal likelihood";
      outcome.objective_used = Objective::MarginalLikelihood;
      outcome.fell_back = true;
      log << "warning: " << warning << '\n';
    } else {
      bundle = split_train_val(bundle, config.seed);
    }
  }

  OptimConfig optim;
  optim.objective = outcome.objective_used;
  optim.steps = config.steps;
  optim.learning_rate = config.learning_rate;
  optim.seed = config.seed;
  optim.refit_on = config.refit_on;

  const GpTask task = make_task(bundle);
  const HyperParams init = init_hyperparams(shape_of(bundle, config), config.seed);
  FitResult result = fit(optim, init, task);
  outcome.trace = result.trace;

  fs::create_directories(config.output_dir);
  ModelArtifact model;
  model.hyper = result.hyper;
  model.objective = outcome.objective_used;
  model.refit_on = config.refit_on;
  for (const auto& t : bundle.tables) {
    model.model_ids.push_back(t.model_id);
    model.dims.push_back(static_cast<Eigen::Index>(t.dim()));
  }
  model.num_samples = bundle.num_samples();
  model.num_classes = bundle.num_classes();
  model.train = bundle.splits.train;
  model.val = bundle.splits.val;
  model.config = config_echo(config);
  outcome.model_path = config.output_dir / "model.gpm";
  write_model(outcome.model_path, model);

  ordered_json trace;
  trace["requested_objective"] = to_string(config.objective);
  trace["objective"] = to_string(outcome.objective_used);
  trace["fallback"] = outcome.fell_back;
  if (!warning.empty()) trace["warning"] = warning;
  trace["num_train"] = bundle.splits.train.size();
  trace["num_val"] = bundle.splits.val.size();
  trace["lr_halvings"] = result.trace.lr_halvings;
  trace["final_objective"] = result.trace.final_objective;
  trace["steps"] = ordered_json::array();
  for (std::size_t i = 0; i < result.trace.steps.size(); ++i) {
    const auto& s = result.trace.steps[i];
    trace["steps"].push_back(
        {{"step", i + 1}, {"objective", s.objective}, {"grad_norm", s.grad_norm}, {"learning_rate", s.learning_rate}});
  }
  outcome.trace_path = config.output_dir / "trace.json";
  write_json(outcome.trace_path, trace);
  return outcome;
}

EvalOutcome cmd_eval(const fs::path& model_path, const fs::path& manifest_path, const fs::path& output_dir) {
  const LoadedModel lm = load_model_and_task(model_path, manifest_path);
  const GpTask task = task_for_model(lm);
  const FittedGp gp = condition_final(lm.model.objective, lm.model.refit_on, lm.model.hyper, task);

  const IndexList test = lm.bundle.test_indices();
  if (test.empty()) throw Error(ErrorKind::EmptyInput, "the task has no test samples");
  const Prediction pred = gp_predict(gp, features_of(lm.bundle, test));
  const auto truth = labels_at(lm.bundle, test);
  const auto predicted = predict_labels(pred.mean);
  const CalibrationReport calib = calibration_report(pred.mean, truth);

  EvalOutcome outcome;
  outcome.accuracy = accuracy(predicted, truth);
  outcome.ece = calib.ece;
  outcome.tace = calib.tace;

  ordered_json report;
  report["format"] = "gpens-eval-report";
  report["version"] = 1;
  report["num_train"] = gp.num_train();
  report["num_test"] = test.size();
  report["accuracy"] = outcome.accuracy;
  report["ece"] = calib.ece;
  report["tace"] = calib.tace;
  report["ece_bins"] = kDefaultEceBins;
  report["tace_bins"] = kDefaultTaceBins;
  report["tace_threshold"] = kDefaultTaceThreshold;
  report["mean_variance"] = pred.variance.mean();
  report["reliability_bins"] = ordered_json::array();
  std::string csv = "bin_lo,bin_hi,mean_confidence,empirical_accuracy,count\n";
  for (const auto& b : calib.reliability_bins) {
    report["reliability_bins"].push_back({{"lo", b.lo},
                                          {"hi", b.hi},
                                          {"mean_confidence", b.mean_confidence},
                                          {"accuracy", b.accuracy},
                                          {"count", b.count}});
    csv += fmt::format("{},{},{},{},{}\n", fmt_double(b.lo), fmt_double(b.hi), fmt_double(b.mean_confidence),
                       fmt_double(b.accuracy), b.count);
  }

  fs::create_directories(output_dir);
  outcome.report_path = output_dir / "eval_report.json";
  write_json(outcome.report_path, report);
  write_text(output_dir / "reliability.csv", csv);
  return outcome;
}

OodOutcome cmd_ood(const fs::path& model_path, const fs::path& id_manifest, const std::vector<fs::path>& ood_manifests,
                   const fs::path& output_dir, int bins) {
  if (ood_manifests.empty()) throw Error(ErrorKind::EmptyInput, "at least one OOD manifest is required");
  const LoadedModel lm = load_model_and_task(model_path, id_manifest);
  const GpTask task = task_for_model(lm);
  const FittedGp gp = condition_final(lm.model.objective, lm.model.refit_on, lm.model.hyper, task);

  const double hi = static_cast<double>(lm.model.hyper.num_models());
  auto variances = [&](const TaskBundle& b) {
    const Prediction p = gp_predict(gp, features_of(b, b.test_indices()));
    return std::vector<double>(p.variance.data(), p.variance.data() + p.variance.size());
  };
  auto mean_of = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };

  fs::create_directories(output_dir);
  OodOutcome outcome;
  const std::vector<double> id_var = variances(lm.bundle);
  if (id_var.empty()) throw Error(ErrorKind::EmptyInput, "the in-distribution task has no test samples");

  ordered_json report;
  report["format"] = "gpens-ood-report";
  report["version"] = 1;
  report["range"] = {0.0, hi};
  report["bins"] = bins;
  const fs::path id_csv = output_dir / "hist_id.csv";
  write_text(id_csv, histogram_csv(uncertainty_histogram(id_var, bins, 0.0, hi)));
  outcome.histogram_paths.push_back(id_csv);
  report["id"] = {{"name", "id"},
                  {"count", id_var.size()},
                  {"mean_variance", mean_of(id_var)},
                  {"histogram_csv", id_csv.filename().string()}};
  report["ood"] = ordered_json::array();

  for (std::size_t i = 0; i < ood_manifests.size(); ++i) {
    TaskBundle ood = align_to(load_task(ood_manifests[i]), lm.model.model_ids, lm.model.dims);
    const std::vector<double> ood_var = variances(ood);
    if (ood_var.empty()) throw Error(ErrorKind::EmptyInput, ood_manifests[i].string() + " has no samples");
    const double score = auroc(id_var, ood_var);
    const std::string name = fmt::format("ood{}_{}", i, safe_name(ood_manifests[i].stem().string()));
    const fs::path csv = output_dir / ("hist_" + name + ".csv");
    write_text(csv, histogram_csv(uncertainty_histogram(ood_var, bins, 0.0, hi)));
    outcome.auroc.push_back(score);
    outcome.histogram_paths.push_back(csv);
    report["ood"].push_back({{"name", name},
                             {"count", ood_var.size()},
                             {"mean_variance", mean_of(ood_var)},
                             {"auroc", score},
                             {"histogram_csv", csv.filename().string()}});
  }
  outcome.report_path = output_dir / "ood_report.json";
  write_json(outcome.report_path, report);
  return outcome;
}

std::vector<fs::path> cmd_kernel_viz(const fs::path& model_path, const fs::path& manifest_path,
                                     std::size_t sample_count, std::uint64_t seed, const fs::path& output_dir) {
  const LoadedModel lm = load_model_and_task(model_path, manifest_path);
  const Index n = lm.bundle.num_samples();
  if (sample_count == 0 || sample_count > n)
    throw Error(ErrorKind::InsufficientSamples,
                fmt::format("{} samples requested from a dataset of {}", sample_count, n));

  IndexList rows(n);
  for (Index i = 0; i < n; ++i) rows[i] = i;
  SplitMix64 rng(seed);
  shuffle(std::span<Index>(rows), rng);
  rows.resize(sample_count);
  const auto& labels = lm.bundle.labels();
  std::sort(rows.begin(), rows.end(), [&](Index a, Index b) {
    return labels[a] != labels[b] ? labels[a] < labels[b] : a < b;
  });

  fs::create_directories(output_dir);
  const auto& kernels = lm.model.hyper.kernels;
  const FeatureSet x = features_of(lm.bundle, rows);
  std::vector<fs::path> written;
  for (std::size_t i = 0; i < kernels.size(); ++i) {
    const fs::path p = output_dir / ("gram_" + safe_name(kernels[i].model_id) + ".csv");
    write_text(p, matrix_csv(deep_kernel_gram(kernels[i], x.kernel[i])));
    written.push_back(p);
  }
  const fs::path ens = output_dir / "gram_ensemble.csv";
  write_text(ens, matrix_csv(ensemble_gram(kernels, x.kernel)));
  written.push_back(ens);

  std::string samples = "row,sample_index,label\n";
  for (std::size_t r = 0; r < rows.size(); ++r) samples += fmt::format("{},{},{}\n", r, rows[r], labels[rows[r]]);
  write_text(output_dir / "kernel_viz_samples.csv", samples);
  return written;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Low-shot classification with Gaussian-process ensembles of pre-trained embeddings", "gpens"};
  app.require_subcommand(1);

  RunConfig run;
  std::string objective = "predictive", refit = "train+val", kernel = "rbf", mean = "zeroshot";
  auto* fit_cmd = app.add_subcommand("fit", "Tune hyper-parameters and write a model artifact");
  fit_cmd->add_option("--manifest", run.manifest_path, "Task manifest (JSON)")->required();
  fit_cmd->add_option("--shots", run.shots, "Training samples per class")->capture_default_str();
  fit_cmd->add_option("--seed", run.seed, "Seed for sampling and initialization")->capture_default_str();
  fit_cmd->add_option("--objective", objective, "marginal | predictive")->capture_default_str();
  fit_cmd->add_option("--steps", run.steps, "Adam steps")->capture_default_str();
  fit_cmd->add_option("--learning-rate", run.learning_rate, "Initial learning rate")->capture_default_str();
  fit_cmd->add_option("--refit-on", refit, "train | train+val")->capture_default_str();
  fit_cmd->add_option("--base-kernel", kernel, "rbf | laplacian | matern52")->capture_default_str();
  fit_cmd->add_option("--mean-variant", mean, "zero | constant | zeroshot")->capture_default_str();
  fit_cmd->add_flag("--scalar-lengthscale", run.scalar_lengthscale, "Tie all length-scales of each model");
  fit_cmd->add_option("--output-dir", run.output_dir, "Directory for model.gpm and trace.json")->capture_default_str();

  fs::path model_path, manifest, output_dir = ".";
  auto* eval_cmd = app.add_subcommand("eval", "Score a model on the task's test split");
  eval_cmd->add_option("--model", model_path)->required();
  eval_cmd->add_option("--manifest", manifest)->required();
  eval_cmd->add_option("--output-dir", output_dir)->capture_default_str();

  std::vector<fs::path> ood_paths;
  int bins = kDefaultHistogramBins;
  auto* ood_cmd = app.add_subcommand("ood", "Uncertainty histograms and AUROC against OOD sets");
  ood_cmd->add_option("--model", model_path)->required();
  ood_cmd->add_option("--manifest", manifest, "In-distribution manifest")->required();
  ood_cmd->add_option("--ood-manifest", ood_paths, "OOD manifest (repeatable)")->required();
  ood_cmd->add_option("--bins", bins)->capture_default_str();
  ood_cmd->add_option("--output-dir", output_dir)->capture_default_str();

  std::size_t sample_count = 50;
  std::uint64_t viz_seed = 0;
  auto* viz_cmd = app.add_subcommand("kernel-viz", "Write prior gram matrices of a random sample as CSV");
  viz_cmd->add_option("--model", model_path)->required();
  viz_cmd->add_option("--manifest", manifest)->required();
  viz_cmd->add_option("--samples", sample_count)->capture_default_str();
  viz_cmd->add_option("--seed", viz_seed)->capture_default_str();
  viz_cmd->add_option("--output-dir", output_dir)->capture_default_str();

  SynthConfig synth;
  std::string layout = "complementary";
  fs::path synth_out;
  auto* synth_cmd = app.add_subcommand("synth", "Generate the synthetic benchmark task");
  synth_cmd->add_option("--out", synth_out)->required();
  synth_cmd->add_option("--classes", synth.classes)->capture_default_str();
  synth_cmd->add_option("--per-class", synth.per_class)->capture_default_str();
  synth_cmd->add_option("--pool-per-class", synth.pool_per_class)->capture_default_str();
  synth_cmd->add_option("--dim", synth.dim)->capture_default_str();
  synth_cmd->add_option("--models", synth.models)->capture_default_str();
  synth_cmd->add_option("--noise", synth.noise)->capture_default_str();
  synth_cmd->add_option("--layout", layout, "complementary | shared")->capture_default_str();
  synth_cmd->add_option("--head-noise", synth.head_noise)->capture_default_str();
  synth_cmd->add_option("--ood-count", synth.ood_count)->capture_default_str();
  synth_cmd->add_option("--seed", synth.seed)->capture_default_str();

  try {
    try {
      app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
      return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
      return app.exit(e, out, err);
    }

    if (fit_cmd->parsed()) {
      run.objective = parse_objective(objective);
      run.refit_on = parse_refit_on(refit);
      run.base_kernel = parse_base_kernel(kernel);
      run.mean_variant = parse_mean_kind(mean);
      const FitOutcome r = cmd_fit(run, err);
      out << fmt::format("objective {} ({} steps), final {:.6f}\n", to_string(r.objective_used), r.trace.steps.size(),
                         r.trace.final_objective);
      out << "model " << r.model_path.string() << "\ntrace " << r.trace_path.string() << '\n';
    } else if (eval_cmd->parsed()) {
      const EvalOutcome r = cmd_eval(model_path, manifest, output_dir);
      out << fmt::format("accuracy {:.2f}\nece {:.4f}\ntace {:.4f}\n", r.accuracy, r.ece, r.tace);
      out << "report " << r.report_path.string() << '\n';
    } else if (ood_cmd->parsed()) {
      const OodOutcome r = cmd_ood(model_path, manifest, ood_paths, output_dir, bins);
      for (std::size_t i = 0; i < r.auroc.size(); ++i)
        out << fmt::format("auroc {} {:.4f}\n", ood_paths[i].string(), r.auroc[i]);
      out << "report " << r.report_path.string() << '\n';
    } else if (viz_cmd->parsed()) {
      for (const auto& p : cmd_kernel_viz(model_path, manifest, sample_count, viz_seed, output_dir))
        out << p.string() << '\n';
    } else if (synth_cmd->parsed()) {
      synth.layout = parse_synth_layout(layout);
      const SynthOutput r = write_synthetic_task(synth, synth_out);
      out << "manifest " << r.manifest.string() << '\n';
      if (!r.ood_manifest.empty()) out << "ood-manifest " << r.ood_manifest.string() << '\n';
    }
    return 0;
  } catch (const CLI::ParseError& e) {
    err << nlohmann::json{{"error", "UsageError"}, {"message", e.what()}}.dump(-1, ' ', false, kReplace) << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    nlohmann::json j{{"error", std::string(to_string(e.kind()))}, {"message", e.what()}};
    if (!e.detail().empty()) j["detail"] = e.detail();
    err << j.dump(-1, ' ', false, kReplace) << '\n';
    return kExitModuleError;
  } catch (const std::exception& e) {
    err << nlohmann::json{{"error", "InternalError"}, {"message", e.what()}}.dump(-1, ' ', false, kReplace) << '\n';
    return kExitInternal;
  }
}

}  // namespace gpens

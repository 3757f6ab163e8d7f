#include "birads/checkpoint.hpp"
#include "birads/dataset.hpp"
#include "birads/evaluation.hpp"
#include "birads/lexicon.hpp"
#include "birads/metrics.hpp"
#include "birads/phantom.hpp"
#include "birads/samples.hpp"
#include "birads/training.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace birads;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitRuntime = 3;

/// Bad input files or values that parsed but do not validate.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_file(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << text;
}

TrainConfig load_config(const std::string& path) {
  if (path.empty()) return TrainConfig{};
  try {
    auto config = train_config_from_json(read_file(path));
    config.validate();
    return config;
  } catch (const DataError&) {
    throw;
  } catch (const std::exception& e) {
    throw DataError("config '" + path + "': " + e.what());
  }
}

BoundingBox parse_bbox(const std::string& text) {
  BoundingBox b;
  char tail = 0;
  if (std::sscanf(text.c_str(), "%d,%d,%d,%d%c", &b.x0, &b.y0, &b.x1, &b.y1, &tail) != 4) {
    throw CLI::ValidationError("--bbox", "expected x0,y0,x1,y1, got '" + text + "'");
  }
  return b;
}

void log_epoch(int fold, const EpochRecord& r) {
  std::fprintf(stderr, "fold %d epoch %3d  train %.5f  val %.5f  lr %.1e%s\n", fold, r.epoch, r.train.total,
               r.validation.total, r.lr, r.improved ? "  *" : "");
}

struct Layout {
  fs::path root;
  fs::path checkpoints() const { return root / "checkpoints"; }
  fs::path logs() const { return root / "logs"; }
  fs::path metrics() const { return root / "metrics"; }
  fs::path reports() const { return root / "reports"; }

  void create() const {
    for (const auto& d : {checkpoints(), logs(), metrics(), reports()}) fs::create_directories(d);
  }
  void write_run(const json& run) const { write_file(root / "run.json", run.dump(2) + "\n"); }
};

json config_json(const TrainConfig& c) { return json::parse(train_config_to_json(c)); }

void write_metrics(const Layout& out, const std::vector<std::pair<std::string, MetricsReport>>& rows) {
  std::string csv = metrics_csv_header() + "\n";
  json j = json::object();
  for (const auto& [label, report] : rows) {
    csv += metrics_csv_row(label, report) + "\n";
    j[label] = json::parse(metrics_report_to_json(report));
  }
  write_file(out.metrics() / "metrics.csv", csv);
  write_file(out.metrics() / "metrics.json", j.dump(2) + "\n");
}

struct GenerateArgs {
  int count = 0;
  std::uint64_t seed = 0;
  std::string out;
  int height = 96;
  int width = 128;
};

int run_generate(const GenerateArgs& a) {
  PhantomDatasetOptions options;
  options.height = a.height;
  options.width = a.width;
  const auto manifest = generate_dataset(a.count, a.seed, a.out, options);
  json run = {{"command", "generate"}, {"count", a.count}, {"seed", a.seed}, {"height", a.height}, {"width", a.width}};
  write_file(fs::path(a.out) / "run.json", run.dump(2) + "\n");
  std::printf("wrote %zu phantoms and %s\n", manifest.size(), (fs::path(a.out) / "manifest.csv").string().c_str());
  return kExitOk;
}

struct TrainArgs {
  std::string manifest, config, out;
  int folds = 0;
  double split = 0.0;
  double val_fraction = 0.15;
  std::uint64_t plan_seed = 0;
};

int run_train(const TrainArgs& a) {
  const auto config = load_config(a.config);
  const auto manifest = load_manifest(a.manifest);
  Layout out{a.out};
  out.create();
  json run = {{"command", "train"}, {"manifest", a.manifest}, {"config", config_json(config)}, {"seed", config.seed}};
  const auto preprocess = config.effective_preprocess();

  if (a.split > 0.0) {
    const auto fold = make_holdout_split(manifest.tumor_classes(), a.split, a.plan_seed);
    run["split"] = {{"validation_fraction", a.split}, {"seed", a.plan_seed}};
    out.write_run(run);
    std::optional<Model> pretrained;
    if (config.ablation.pretrain && !config.model.backbone.pretrained_weights) pretrained = pretrain_backbone(config);
    Model model = initial_model(config, config.seed, pretrained ? &*pretrained : nullptr);
    const auto train = prepare_samples(manifest, fold.train, preprocess);
    const auto validation = prepare_samples(manifest, fold.validation, preprocess);
    TrainHooks hooks;
    hooks.on_epoch = [](const EpochRecord& r) { log_epoch(0, r); };
    auto result = train_one_fold(std::move(model), train, validation, config, hooks);
    save_checkpoint(out.checkpoints() / "final", result.best, preprocess);
    write_file(out.logs() / "train.ndjson", result.log.to_ndjson());
    write_metrics(out, {{"validation", evaluate_model(result.best, validation)}});
    return kExitOk;
  }

  const int k = a.folds > 0 ? a.folds : 5;
  const auto plan = make_fold_plan(manifest, k, a.val_fraction, a.plan_seed);
  run["folds"] = {{"k", k}, {"validation_fraction", a.val_fraction}, {"seed", a.plan_seed}};
  out.write_run(run);
  write_file(out.root / "fold_plan.json", fold_plan_to_json(plan));
  CrossValidationOptions options;
  options.on_epoch = log_epoch;
  const auto result = run_cross_validation(manifest, plan, config, options);
  std::vector<std::pair<std::string, MetricsReport>> rows;
  for (std::size_t f = 0; f < result.folds.size(); ++f) {
    const auto name = "fold_" + std::to_string(f);
    save_checkpoint(out.checkpoints() / name, result.folds[f].model, preprocess);
    write_file(out.logs() / (name + ".ndjson"), result.folds[f].log.to_ndjson());
    rows.emplace_back(name, result.folds[f].test_metrics);
  }
  rows.emplace_back("mean", result.aggregate);
  write_metrics(out, rows);
  std::cout << metrics_csv_header() << "\n" << metrics_csv_row("mean", result.aggregate) << "\n";
  return kExitOk;
}

struct EvaluateArgs {
  std::string checkpoint, manifest, out;
};

int run_evaluate(const EvaluateArgs& a) {
  const auto ckpt = load_checkpoint(a.checkpoint);
  const auto manifest = load_manifest(a.manifest);
  std::vector<std::size_t> all(manifest.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const auto report = evaluate_model(ckpt.model, prepare_samples(manifest, all, ckpt.preprocess));
  Layout out{a.out};
  out.create();
  out.write_run({{"command", "evaluate"}, {"checkpoint", a.checkpoint}, {"manifest", a.manifest}});
  write_metrics(out, {{"evaluation", report}});
  std::cout << metrics_report_to_json(report) << "\n";
  return kExitOk;
}

struct AblateArgs {
  std::string manifest, preset, out;
};

int run_ablate(const AblateArgs& a) {
  json preset;
  try {
    preset = json::parse(read_file(a.preset));
  } catch (const json::exception& e) {
    throw DataError("preset '" + a.preset + "': " + e.what());
  }
  TrainConfig base;
  int k = 5;
  double val_fraction = 0.15;
  std::uint64_t plan_seed = 0;
  AblationOptions options;
  try {
    for (const auto& [key, value] : preset.items()) {
      if (key != "base" && key != "folds" && key != "validation_fraction" && key != "plan_seed" && key != "tables") {
        throw DataError("preset '" + a.preset + "': unknown key '" + key + "'");
      }
    }
    if (preset.contains("base")) base = train_config_from_json(preset["base"].dump());
    base.validate();
    k = preset.value("folds", k);
    val_fraction = preset.value("validation_fraction", val_fraction);
    plan_seed = preset.value("plan_seed", plan_seed);
    if (preset.contains("tables")) {
      const auto tables = preset["tables"].get<std::vector<std::string>>();
      options.include_ablation = std::find(tables.begin(), tables.end(), "ablation") != tables.end();
      options.include_multitask = std::find(tables.begin(), tables.end(), "multitask") != tables.end();
    }
  } catch (const DataError&) {
    throw;
  } catch (const std::exception& e) {
    throw DataError("preset '" + a.preset + "': " + e.what());
  }
  const auto manifest = load_manifest(a.manifest);
  const auto plan = make_fold_plan(manifest, k, val_fraction, plan_seed);
  Layout out{a.out};
  out.create();
  out.write_run({{"command", "ablate"},
                 {"manifest", a.manifest},
                 {"preset", preset},
                 {"folds", {{"k", k}, {"validation_fraction", val_fraction}, {"seed", plan_seed}}},
                 {"seed", base.seed}});
  options.on_config = [](const AblationConfig& c) {
    std::fprintf(stderr, "== %s / %s\n", c.table.c_str(), c.label.c_str());
  };
  options.on_epoch = [](const AblationConfig&, int fold, const EpochRecord& r) { log_epoch(fold, r); };
  const auto table = run_ablation_suite(manifest, plan, base, options);
  write_file(out.metrics() / "ablation.csv", table.to_csv());
  write_file(out.metrics() / "ablation.json", table.to_json());
  std::cout << table.to_csv();
  return kExitOk;
}

struct PredictArgs {
  std::string checkpoint, manifest, out;
};

int run_predict(const PredictArgs& a) {
  const auto ckpt = load_checkpoint(a.checkpoint);
  const auto manifest = load_manifest(a.manifest);
  std::vector<std::size_t> all(manifest.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const auto outputs = predict(ckpt.model, prepare_samples(manifest, all, ckpt.preprocess));
  std::string csv = "image_path,tumor_class,malignant_probability,likelihood,birads_category,uncertain\n";
  for (std::size_t i = 0; i < all.size(); ++i) {
    const auto r = explain_outputs(outputs, static_cast<Eigen::Index>(i));
    char line[256];
    std::snprintf(line, sizeof line, ",%s,%.6f,%.6f,%s,%d\n", std::string(to_string(r.tumor_class)).c_str(),
                  r.tumor_probabilities[1], r.likelihood, std::string(to_string(r.category)).c_str(), r.uncertain ? 1 : 0);
    csv += manifest.records[i].image_path + line;
  }
  Layout out{a.out};
  out.create();
  out.write_run({{"command", "predict"}, {"checkpoint", a.checkpoint}, {"manifest", a.manifest}});
  write_file(out.reports() / "predictions.csv", csv);
  std::cout << csv;
  return kExitOk;
}

struct ReportArgs {
  std::string checkpoint, image, bbox, figure;
};

int run_report(const ReportArgs& a) {
  const auto bbox = parse_bbox(a.bbox);
  const auto ckpt = load_checkpoint(a.checkpoint);
  const auto image = read_png_gray(a.image);
  if (!bbox.valid_for(static_cast<int>(image.cols()), static_cast<int>(image.rows()))) {
    throw DataError("bbox " + a.bbox + " is outside the " + std::to_string(image.cols()) + "x" +
                    std::to_string(image.rows()) + " image '" + a.image + "'");
  }
  const auto report = make_explanation_report(ckpt.model, ckpt.preprocess, image, bbox);
  if (!a.figure.empty()) render_explanation_figure(report, a.figure);
  std::cout << explanation_report_to_json(report) << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multitask breast-ultrasound classifier with BI-RADS descriptor explanations"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* generate = app.add_subcommand("generate", "Render a synthetic phantom dataset with a manifest");
  generate->add_option("--count", gen.count, "Number of phantoms")->required()->check(CLI::PositiveNumber);
  generate->add_option("--seed", gen.seed, "Generator seed")->required();
  generate->add_option("--out", gen.out, "Output directory")->required();
  generate->add_option("--height", gen.height, "Image height")->check(CLI::Range(64, 4096));
  generate->add_option("--width", gen.width, "Image width")->check(CLI::Range(64, 4096));

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "Cross-validate or train on a holdout split");
  train->add_option("--manifest", tr.manifest, "Manifest CSV")->required();
  train->add_option("--config", tr.config, "Training config JSON");
  train->add_option("--out", tr.out, "Output directory")->required();
  auto* folds = train->add_option("--folds", tr.folds, "Number of stratified folds")->check(CLI::Range(2, 100));
  auto* split = train->add_option("--split", tr.split, "Validation fraction of a single train/val split")
                    ->check(CLI::Range(0.01, 0.99));
  folds->excludes(split);
  train->add_option("--val-fraction", tr.val_fraction, "Validation carve-out per fold")->check(CLI::Range(0.01, 0.99));
  train->add_option("--plan-seed", tr.plan_seed, "Seed of the fold plan or split");

  EvaluateArgs ev;
  auto* evaluate = app.add_subcommand("evaluate", "Metrics of a checkpoint on a manifest");
  evaluate->add_option("--checkpoint", ev.checkpoint, "Checkpoint directory")->required();
  evaluate->add_option("--manifest", ev.manifest, "Manifest CSV")->required();
  evaluate->add_option("--out", ev.out, "Output directory")->required();

  AblateArgs ab;
  auto* ablate = app.add_subcommand("ablate", "Run the ablation and multitask ladders");
  ablate->add_option("--manifest", ab.manifest, "Manifest CSV")->required();
  ablate->add_option("--preset", ab.preset, "Preset JSON with base config and fold plan")->required();
  ablate->add_option("--out", ab.out, "Output directory")->required();

  PredictArgs pr;
  auto* predict_cmd = app.add_subcommand("predict", "Per-image predictions for a manifest");
  predict_cmd->add_option("--checkpoint", pr.checkpoint, "Checkpoint directory")->required();
  predict_cmd->add_option("--manifest", pr.manifest, "Manifest CSV")->required();
  predict_cmd->add_option("--out", pr.out, "Output directory")->required();

  ReportArgs rp;
  auto* report = app.add_subcommand("report", "Explanation report for one image");
  report->add_option("--checkpoint", rp.checkpoint, "Checkpoint directory")->required();
  report->add_option("--image", rp.image, "Grayscale PNG")->required();
  report->add_option("--bbox", rp.bbox, "Tumor box x0,y0,x1,y1 (exclusive end)")->required();
  report->add_option("--figure", rp.figure, "Optional PNG with probability bars");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*generate) return run_generate(gen);
    if (*train) return run_train(tr);
    if (*evaluate) return run_evaluate(ev);
    if (*ablate) return run_ablate(ab);
    if (*predict_cmd) return run_predict(pr);
    if (*report) return run_report(rp);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const DatasetError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const ImageIoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const CheckpointError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const EvaluationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

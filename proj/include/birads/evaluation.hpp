#pragma once

#include "birads/dataset.hpp"
#include "birads/image.hpp"
#include "birads/lexicon.hpp"
#include "birads/metrics.hpp"
#include "birads/model.hpp"
#include "birads/preprocess.hpp"
#include "birads/training.hpp"

#include <array>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace birads {

class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One configuration of an ablation table.
struct AblationConfig {
  std::string table;  // "ablation" or "multitask"
  std::string label;
  TrainConfig config;
};

/// Progressive toggles: full, then augmentation off, pretraining off,
/// single channel and no crop, each row adding one change to the previous.
std::vector<AblationConfig> ablation_ladder(const TrainConfig& base);

/// Branch ladder from the tumor-class-only model up to the full model.
std::vector<AblationConfig> multitask_ladder(const TrainConfig& base);

/// "tumor", "tumor+margin", ... in head order.
std::string active_branch_label(const BranchMask& branches);

struct AblationRow {
  std::string table;
  std::string label;
  std::string branches;
  TrainConfig config;
  std::vector<MetricsReport> folds;
  MetricsReport metrics;  // mean over folds
};

struct AblationTable {
  std::vector<AblationRow> rows;

  std::string to_csv() const;
  std::string to_json() const;
};

struct AblationOptions {
  bool include_ablation = true;
  bool include_multitask = true;
  /// Called before each configuration is trained.
  std::function<void(const AblationConfig&)> on_config;
  std::function<void(const AblationConfig&, int fold, const EpochRecord&)> on_epoch;
};

/// Cross-validates every configuration of both ladders on `plan`. One
/// pretrained backbone is shared by all rows that use pretraining.
AblationTable run_ablation_suite(const DatasetManifest& manifest, const FoldPlan& plan, const TrainConfig& base,
                                 const AblationOptions& options = {});

inline constexpr double kUncertaintyGap = 0.5;

struct ExplanationReport {
  TumorClass tumor_class = TumorClass::benign;
  std::array<double, 2> tumor_probabilities{};  // benign, malignant
  std::vector<double> shape, orientation, margin, echo, posterior;
  std::array<double, 4> subtype_probabilities{};
  double likelihood = 0.0;  // X10 in [0, 1]
  std::string likelihood_percent;
  BiradsCategory category = BiradsCategory::c3;
  double agreement_gap = 0.0;  // |X11 - X10|
  bool uncertain = false;

  bool operator==(const ExplanationReport&) const = default;
};

/// "30.0%" style rendering with one decimal.
std::string format_percent(double probability);

/// Report for sample `index` of a batch of model outputs.
ExplanationReport explain_outputs(const TaskValues<double>& outputs, Eigen::Index index = 0);

/// Preprocesses one image, runs inference and decodes the outputs.
ExplanationReport make_explanation_report(const Model& model, const PreprocessConfig& preprocess,
                                          const GrayImage& image, const BoundingBox& bbox);

std::string explanation_report_to_json(const ExplanationReport& report);
ExplanationReport explanation_report_from_json(const std::string& text);

/// Horizontal probability bars per descriptor, written as an RGB PNG.
void render_explanation_figure(const ExplanationReport& report, const std::filesystem::path& path);

}  // namespace birads

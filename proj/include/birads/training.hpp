#pragma once

#include "birads/dataset.hpp"
#include "birads/metrics.hpp"
#include "birads/model.hpp"
#include "birads/objective.hpp"
#include "birads/preprocess.hpp"
#include "birads/samples.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace birads {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Adam with bias-corrected moments.
template <typename Scalar>
class Adam {
 public:
  explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8)
      : beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {}

  void step(const std::vector<nn::Parameter<Scalar>*>& params, double lr) {
    if (m_.empty()) {
      for (const auto* p : params) {
        m_.push_back(nn::Matrix<Scalar>::Zero(p->value.rows(), p->value.cols()));
        v_.push_back(nn::Matrix<Scalar>::Zero(p->value.rows(), p->value.cols()));
      }
    }
    if (m_.size() != params.size()) throw TrainingError("optimizer bound to a different parameter set");
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, t_);
    const double c2 = 1.0 - std::pow(beta2_, t_);
    const auto b1 = static_cast<Scalar>(beta1_), b2 = static_cast<Scalar>(beta2_);
    const auto step = static_cast<Scalar>(lr / c1);
    const auto inv_c2 = static_cast<Scalar>(1.0 / c2);
    const auto eps = static_cast<Scalar>(epsilon_);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& g = params[i]->grad;
      m_[i] = b1 * m_[i] + (Scalar(1) - b1) * g;
      v_[i] = b2 * v_[i] + (Scalar(1) - b2) * g.cwiseAbs2();
      params[i]->value.array() -= step * m_[i].array() / ((v_[i].array() * inv_c2).sqrt() + eps);
    }
  }

  long steps() const { return t_; }

 private:
  double beta1_, beta2_, epsilon_;
  long t_ = 0;
  std::vector<nn::Matrix<Scalar>> m_, v_;
};

/// Table III style switches; each maps onto one part of the pipeline.
struct AblationFlags {
  bool augment = true;
  bool pretrain = true;
  bool three_channels = true;
  bool crop = true;

  bool operator==(const AblationFlags&) const = default;
};

/// Backbone pretraining on an auxiliary phantom set, used when pretraining is
/// enabled and no weight archive is configured.
struct PretrainConfig {
  int phantom_count = 3000;
  int epochs = 10;
  double lr = 3e-4;
  std::uint64_t seed = 0x5eed;

  bool operator==(const PretrainConfig&) const = default;
};

struct TrainConfig {
  int batch_size = 6;
  double initial_lr = 1e-5;
  double reduced_lr = 1e-6;
  int lr_patience = 15;
  int stop_patience = 30;
  int max_epochs = 500;
  std::uint64_t seed = 0;
  AugmentConfig augmentation;
  LossWeights loss_weights;
  AblationFlags ablation;
  ModelConfig model;
  PreprocessConfig preprocess;
  PretrainConfig pretrain;

  void validate() const;
  /// Preprocessing with the crop / channel ablation flags applied.
  PreprocessConfig effective_preprocess() const;
};

std::string train_config_to_json(const TrainConfig& config);
/// Missing keys keep their defaults; unknown keys are rejected.
TrainConfig train_config_from_json(const std::string& text);

/// Plateau LR reduction and early stopping on the validation loss. An epoch
/// improves only when strictly below the best so far. After `lr_patience`
/// consecutive non-improving epochs the LR drops once; the stop counter is
/// independent of the drop and ends training after `stop_patience`.
class PlateauSchedule {
 public:
  PlateauSchedule(double initial_lr, double reduced_lr, int lr_patience, int stop_patience);

  struct Step {
    bool improved = false;
    bool lr_dropped = false;
    bool stop = false;
  };

  Step observe(double validation_loss);

  double lr() const { return reduced_ ? reduced_lr_ : initial_lr_; }
  double best() const { return best_; }
  int since_improvement() const { return since_improvement_; }
  bool reduced() const { return reduced_; }

 private:
  double initial_lr_, reduced_lr_;
  int lr_patience_, stop_patience_;
  double best_ = std::numeric_limits<double>::infinity();
  int since_improvement_ = 0;
  int lr_counter_ = 0;
  bool reduced_ = false;
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  LossBreakdown train;
  LossBreakdown validation;
  double lr = 0.0;  // rate used during this epoch
  double best_validation = 0.0;
  int epochs_since_improvement = 0;
  bool improved = false;
  bool augmentation = false;
  double elapsed_seconds = 0.0;  // wall clock, the only non-deterministic field
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  std::string stop_reason;

  std::string to_ndjson() const;
};

std::string epoch_record_to_json(const EpochRecord& record);

struct TrainHooks {
  /// Replaces the measured validation total for `epoch` when it returns a value.
  std::function<std::optional<double>(int epoch, const LossBreakdown& measured)> validation_override;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  Model best;
  TrainLog log;
};

/// Mean loss over `samples` in inference mode.
LossBreakdown evaluate_loss(const Model& model, const std::vector<Sample>& samples, const LossWeights& weights);

/// Optimizes `model` on `train`, selecting the epoch with the lowest
/// validation loss. Throws TrainingError on a non-finite loss component.
TrainResult train_one_fold(Model model, const std::vector<Sample>& train, const std::vector<Sample>& validation,
                           const TrainConfig& config, const TrainHooks& hooks = {});

/// Trains every layer on freshly rendered phantoms and returns the model
/// whose backbone serves as pretrained weights.
Model pretrain_backbone(const TrainConfig& config);

/// Fresh model for `seed`; with pretraining enabled the backbone comes from
/// the configured archive, or else from `pretrained`.
Model initial_model(const TrainConfig& config, std::uint64_t seed, const Model* pretrained = nullptr);

struct FoldOutcome {
  Model model;
  TrainLog log;
  MetricsReport test_metrics;
  std::vector<std::size_t> test_records;
  TaskValues<double> test_outputs;
};

struct CrossValidationResult {
  std::vector<FoldOutcome> folds;
  MetricsReport aggregate;
};

struct CrossValidationOptions {
  std::function<void(int fold, const EpochRecord&)> on_epoch;
  /// Backbone source reused instead of pretraining again; not owned.
  const Model* pretrained = nullptr;
};

/// Trains and tests one model per fold and averages the fold metrics.
CrossValidationResult run_cross_validation(const DatasetManifest& manifest, const FoldPlan& plan,
                                           const TrainConfig& config, const CrossValidationOptions& options = {});

}  // namespace birads

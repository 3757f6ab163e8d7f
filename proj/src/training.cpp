#include "birads/training.hpp"

#include "birads/checkpoint.hpp"
#include "birads/phantom.hpp"
#include "birads/random.hpp"

#include "json.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>
#include <set>

namespace birads {
namespace {

using nlohmann::json;

std::uint64_t derive_seed(std::initializer_list<std::uint64_t> keys) { return make_rng(keys)(); }

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw TrainingError(where + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw TrainingError("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void read_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void check_finite(const LossBreakdown& b, const std::string& where) {
  const std::string bad = b.first_non_finite();
  if (!bad.empty()) throw TrainingError("non-finite loss component " + bad + " " + where);
}

// One pass over `samples` in shuffled mini-batches; returns the sample-weighted mean loss.
LossBreakdown train_epoch(Model& model, Adam<float>& adam, const std::vector<Sample>& samples,
                          const TrainConfig& config, int epoch, double lr, bool augment) {
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng shuffle_rng = make_rng({config.seed, 0x5af1u, static_cast<std::uint64_t>(epoch)});
  std::shuffle(order.begin(), order.end(), shuffle_rng);

  LossBreakdown sum;
  const std::size_t batch_size = static_cast<std::size_t>(config.batch_size);
  for (std::size_t begin = 0, b = 0; begin < order.size(); begin += batch_size, ++b) {
    const std::vector<std::size_t> idx(order.begin() + begin, order.begin() + std::min(order.size(), begin + batch_size));
    std::vector<ChannelImage> augmented;
    std::vector<const ChannelImage*> images;
    if (augment) {
      augmented.reserve(idx.size());
      for (std::size_t i : idx) {
        const auto key = derive_seed({config.seed, static_cast<std::uint64_t>(epoch), samples[i].record});
        augmented.push_back(birads::augment(samples[i].image, samples[i].targets, config.augmentation, key).first);
        images.push_back(&augmented.back());
      }
    } else {
      for (std::size_t i : idx) images.push_back(&samples[i].image);
    }
    const TaskTargets targets = stack_targets(samples, idx);
    const auto dropout_seed = derive_seed({config.seed, 0xd209u, static_cast<std::uint64_t>(epoch), b});
    const auto tape = model.forward_train(make_batch<float>(images), dropout_seed);
    auto objective = evaluate_objective<float>(tape.outputs, targets, config.loss_weights);
    check_finite(objective.breakdown, "at epoch " + std::to_string(epoch) + ", batch " + std::to_string(b + 1));
    model.zero_grad();
    model.backward(tape, objective.gradient);
    adam.step(model.parameters(), lr);
    objective.breakdown *= static_cast<double>(idx.size());
    sum += objective.breakdown;
  }
  sum *= 1.0 / static_cast<double>(samples.size());
  return sum;
}

json breakdown_json(const LossBreakdown& b) { return json::parse(loss_breakdown_to_json(b)); }

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 1) throw TrainingError("batch_size must be at least 1");
  if (!(reduced_lr > 0.0 && reduced_lr < initial_lr)) throw TrainingError("learning rates must satisfy 0 < reduced_lr < initial_lr");
  if (lr_patience < 1 || lr_patience >= stop_patience) throw TrainingError("patience must satisfy 1 <= lr_patience < stop_patience");
  if (max_epochs < 1) throw TrainingError("max_epochs must be at least 1");
  if (pretrain.phantom_count < 1 || pretrain.epochs < 0 || !(pretrain.lr > 0.0)) {
    throw TrainingError("invalid pretraining settings");
  }
  augmentation.validate();
  loss_weights.validate();
  model.backbone.validate();
  preprocess.validate();
  if (preprocess.target_size != model.backbone.input_size) {
    throw TrainingError("preprocess target size " + std::to_string(preprocess.target_size) +
                        " does not match backbone input size " + std::to_string(model.backbone.input_size));
  }
}

PreprocessConfig TrainConfig::effective_preprocess() const {
  PreprocessConfig p = preprocess;
  p.use_crop = ablation.crop;
  p.use_three_channels = ablation.three_channels;
  return p;
}

std::string train_config_to_json(const TrainConfig& c) {
  json j;
  j["batch_size"] = c.batch_size;
  j["initial_lr"] = c.initial_lr;
  j["reduced_lr"] = c.reduced_lr;
  j["lr_patience"] = c.lr_patience;
  j["stop_patience"] = c.stop_patience;
  j["max_epochs"] = c.max_epochs;
  j["seed"] = c.seed;
  j["augmentation"] = {{"zoom_range", c.augmentation.zoom_range},   {"width_shift", c.augmentation.width_shift},
                       {"rotation_deg", c.augmentation.rotation_deg}, {"shear", c.augmentation.shear},
                       {"horizontal_flip", c.augmentation.horizontal_flip}, {"seed", c.augmentation.seed}};
  j["loss_weights"] = {{"lambda", c.loss_weights.lambda}, {"lambda_a", c.loss_weights.lambda_a}};
  j["ablation"] = {{"augment", c.ablation.augment},
                   {"pretrain", c.ablation.pretrain},
                   {"three_channels", c.ablation.three_channels},
                   {"crop", c.ablation.crop}};
  j["model"] = json::parse(model_config_to_json(c.model));
  j["preprocess"] = {{"target_size", c.preprocess.target_size}, {"smoothing_sigma", c.preprocess.smoothing_sigma}};
  j["pretrain"] = {{"phantom_count", c.pretrain.phantom_count},
                   {"epochs", c.pretrain.epochs},
                   {"lr", c.pretrain.lr},
                   {"seed", c.pretrain.seed}};
  return j.dump(2);
}

TrainConfig train_config_from_json(const std::string& text) {
  TrainConfig c;
  try {
    const json j = json::parse(text);
    reject_unknown(j,
                   {"batch_size", "initial_lr", "reduced_lr", "lr_patience", "stop_patience", "max_epochs", "seed",
                    "augmentation", "loss_weights", "ablation", "model", "preprocess", "pretrain"},
                   "train config");
    read_if(j, "batch_size", c.batch_size);
    read_if(j, "initial_lr", c.initial_lr);
    read_if(j, "reduced_lr", c.reduced_lr);
    read_if(j, "lr_patience", c.lr_patience);
    read_if(j, "stop_patience", c.stop_patience);
    read_if(j, "max_epochs", c.max_epochs);
    read_if(j, "seed", c.seed);
    if (j.contains("augmentation")) {
      const auto& a = j["augmentation"];
      reject_unknown(a, {"zoom_range", "width_shift", "rotation_deg", "shear", "horizontal_flip", "seed"}, "augmentation");
      read_if(a, "zoom_range", c.augmentation.zoom_range);
      read_if(a, "width_shift", c.augmentation.width_shift);
      read_if(a, "rotation_deg", c.augmentation.rotation_deg);
      read_if(a, "shear", c.augmentation.shear);
      read_if(a, "horizontal_flip", c.augmentation.horizontal_flip);
      read_if(a, "seed", c.augmentation.seed);
    }
    if (j.contains("loss_weights")) {
      const auto& w = j["loss_weights"];
      reject_unknown(w, {"lambda", "lambda_a"}, "loss_weights");
      read_if(w, "lambda", c.loss_weights.lambda);
      read_if(w, "lambda_a", c.loss_weights.lambda_a);
    }
    if (j.contains("ablation")) {
      const auto& a = j["ablation"];
      reject_unknown(a, {"augment", "pretrain", "three_channels", "crop"}, "ablation");
      read_if(a, "augment", c.ablation.augment);
      read_if(a, "pretrain", c.ablation.pretrain);
      read_if(a, "three_channels", c.ablation.three_channels);
      read_if(a, "crop", c.ablation.crop);
    }
    if (j.contains("model")) c.model = model_config_from_json(j["model"].dump());
    if (j.contains("preprocess")) {
      const auto& p = j["preprocess"];
      reject_unknown(p, {"target_size", "smoothing_sigma"}, "preprocess");
      read_if(p, "target_size", c.preprocess.target_size);
      read_if(p, "smoothing_sigma", c.preprocess.smoothing_sigma);
    } else {
      c.preprocess.target_size = c.model.backbone.input_size;
    }
    if (j.contains("pretrain")) {
      const auto& p = j["pretrain"];
      reject_unknown(p, {"phantom_count", "epochs", "lr", "seed"}, "pretrain");
      read_if(p, "phantom_count", c.pretrain.phantom_count);
      read_if(p, "epochs", c.pretrain.epochs);
      read_if(p, "lr", c.pretrain.lr);
      read_if(p, "seed", c.pretrain.seed);
    }
  } catch (const json::exception& e) {
    throw TrainingError("malformed train config: " + std::string(e.what()));
  } catch (const ModelError& e) {
    throw TrainingError("malformed model config: " + std::string(e.what()));
  }
  c.validate();
  return c;
}

PlateauSchedule::PlateauSchedule(double initial_lr, double reduced_lr, int lr_patience, int stop_patience)
    : initial_lr_(initial_lr), reduced_lr_(reduced_lr), lr_patience_(lr_patience), stop_patience_(stop_patience) {}

PlateauSchedule::Step PlateauSchedule::observe(double validation_loss) {
  Step step;
  if (validation_loss < best_) {
    best_ = validation_loss;
    since_improvement_ = 0;
    lr_counter_ = 0;
    step.improved = true;
    return step;
  }
  ++since_improvement_;
  ++lr_counter_;
  if (!reduced_ && lr_counter_ >= lr_patience_) {
    reduced_ = true;
    lr_counter_ = 0;
    step.lr_dropped = true;
  }
  step.stop = since_improvement_ >= stop_patience_;
  return step;
}

std::string epoch_record_to_json(const EpochRecord& r) {
  json j;
  j["epoch"] = r.epoch;
  j["lr"] = r.lr;
  j["train"] = breakdown_json(r.train);
  j["validation"] = breakdown_json(r.validation);
  j["best_validation"] = r.best_validation;
  j["epochs_since_improvement"] = r.epochs_since_improvement;
  j["improved"] = r.improved;
  j["augmentation"] = r.augmentation;
  j["elapsed_seconds"] = r.elapsed_seconds;
  return j.dump();
}

std::string TrainLog::to_ndjson() const {
  std::string out;
  for (const auto& e : epochs) out += epoch_record_to_json(e) + "\n";
  return out;
}

LossBreakdown evaluate_loss(const Model& model, const std::vector<Sample>& samples, const LossWeights& weights) {
  if (samples.empty()) throw TrainingError("cannot evaluate loss on an empty set");
  const auto outputs = predict(model, samples);
  return total_loss<double>(outputs, stack_targets(samples), weights);
}

TrainResult train_one_fold(Model model, const std::vector<Sample>& train, const std::vector<Sample>& validation,
                           const TrainConfig& config, const TrainHooks& hooks) {
  config.validate();
  if (train.empty()) throw TrainingError("training set is empty");
  if (validation.empty()) throw TrainingError("validation set is empty");

  const auto start = std::chrono::steady_clock::now();
  Adam<float> adam;
  PlateauSchedule schedule(config.initial_lr, config.reduced_lr, config.lr_patience, config.stop_patience);
  TrainResult result{model, {}};
  result.log.stop_reason = "max_epochs";
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    EpochRecord record;
    record.epoch = epoch;
    record.lr = schedule.lr();
    record.augmentation = config.ablation.augment;
    record.train = train_epoch(model, adam, train, config, epoch, record.lr, config.ablation.augment);
    record.validation = evaluate_loss(model, validation, config.loss_weights);
    check_finite(record.validation, "on the validation set at epoch " + std::to_string(epoch));
    if (hooks.validation_override) {
      if (auto v = hooks.validation_override(epoch, record.validation)) record.validation.total = *v;
    }
    const auto step = schedule.observe(record.validation.total);
    if (step.improved) {
      result.best = model;
      result.log.best_epoch = epoch;
    }
    record.improved = step.improved;
    record.best_validation = schedule.best();
    record.epochs_since_improvement = schedule.since_improvement();
    record.elapsed_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.log.epochs.push_back(record);
    if (hooks.on_epoch) hooks.on_epoch(record);
    if (step.stop) {
      result.log.stop_reason = "early_stop";
      break;
    }
  }
  return result;
}

Model pretrain_backbone(const TrainConfig& config) {
  const auto preprocess = config.effective_preprocess();
  const auto phantoms = generate_samples(config.pretrain.phantom_count, config.pretrain.seed);
  std::vector<Sample> samples;
  samples.reserve(phantoms.size());
  for (std::size_t i = 0; i < phantoms.size(); ++i) {
    const auto& p = phantoms[i];
    samples.push_back({prepare_image(p.phantom.image, p.phantom.bbox, preprocess),
                       encode_labels(p.labels, p.scored.category, p.scored.tumor_class), i});
  }
  ModelConfig mc = config.model;
  mc.seed = derive_seed({config.pretrain.seed, 0xb0b0u});
  mc.branches = BranchMask{};
  mc.backbone.pretrained_weights.reset();
  mc.backbone.trainable = true;
  Model model(mc);
  TrainConfig pc = config;
  pc.seed = mc.seed;
  pc.loss_weights = LossWeights{};
  Adam<float> adam;
  for (int epoch = 1; epoch <= config.pretrain.epochs; ++epoch) {
    train_epoch(model, adam, samples, pc, epoch, config.pretrain.lr, false);
  }
  return model;
}

Model initial_model(const TrainConfig& config, std::uint64_t seed, const Model* pretrained) {
  ModelConfig mc = config.model;
  mc.seed = seed;
  Model model(mc);
  if (!config.ablation.pretrain) return model;
  if (mc.backbone.pretrained_weights) {
    load_backbone(*mc.backbone.pretrained_weights, model);
    return model;
  }
  if (!pretrained) throw TrainingError("pretraining is enabled but no backbone weights were supplied");
  auto mine = model.parameters();
  auto theirs = pretrained->parameters();
  if (mine.size() != theirs.size()) throw TrainingError("pretrained model has a different architecture");
  for (std::size_t i = 0; i < mine.size(); ++i) {
    if (mine[i]->name.rfind("backbone.", 0) != 0) continue;
    if (mine[i]->name != theirs[i]->name || mine[i]->value.rows() != theirs[i]->value.rows() ||
        mine[i]->value.cols() != theirs[i]->value.cols()) {
      throw TrainingError("pretrained backbone disagrees at tensor '" + mine[i]->name + "'");
    }
    mine[i]->value = theirs[i]->value;
  }
  return model;
}

CrossValidationResult run_cross_validation(const DatasetManifest& manifest, const FoldPlan& plan,
                                           const TrainConfig& config, const CrossValidationOptions& options) {
  config.validate();
  if (plan.folds.empty()) throw TrainingError("fold plan has no folds");
  std::optional<Model> own_pretrained;
  const Model* pretrained = options.pretrained;
  if (config.ablation.pretrain && !config.model.backbone.pretrained_weights && !pretrained) {
    own_pretrained = pretrain_backbone(config);
    pretrained = &*own_pretrained;
  }
  const auto preprocess = config.effective_preprocess();

  CrossValidationResult result;
  std::vector<MetricsReport> tested;
  for (std::size_t f = 0; f < plan.folds.size(); ++f) {
    const auto& fold = plan.folds[f];
    TrainConfig fold_config = config;
    fold_config.seed = derive_seed({config.seed, 0xf01du, f});
    Model model = initial_model(fold_config, fold_config.seed, pretrained);
    const auto train = prepare_samples(manifest, fold.train, preprocess);
    const auto validation = prepare_samples(manifest, fold.validation, preprocess);
    TrainHooks hooks;
    if (options.on_epoch) hooks.on_epoch = [&](const EpochRecord& r) { options.on_epoch(static_cast<int>(f), r); };
    auto trained = train_one_fold(std::move(model), train, validation, fold_config, hooks);

    FoldOutcome outcome{std::move(trained.best), std::move(trained.log), {}, fold.test, {}};
    if (!fold.test.empty()) {
      const auto test = prepare_samples(manifest, fold.test, preprocess);
      outcome.test_outputs = predict(outcome.model, test);
      outcome.test_metrics = compute_metrics(outcome.test_outputs, stack_targets(test), outcome.model.config().branches);
      tested.push_back(outcome.test_metrics);
    }
    result.folds.push_back(std::move(outcome));
  }
  result.aggregate = mean_report(tested);
  return result;
}

}  // namespace birads

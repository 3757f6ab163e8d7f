#include "birads/training.hpp"

#include "birads/phantom.hpp"
#include "support.hpp"

#include "doctest.h"

#include <json.hpp>

using namespace birads;
using birads::testing::TempDir;

namespace {

TrainConfig tiny_config() {
  TrainConfig c;
  c.model = ModelConfig::miniature(3);
  c.preprocess.target_size = 16;
  c.ablation.augment = false;
  c.ablation.pretrain = false;
  c.initial_lr = 1e-3;
  c.reduced_lr = 1e-4;
  c.seed = 9;
  return c;
}

std::vector<Sample> phantom_samples(int n, std::uint64_t seed, const PreprocessConfig& preprocess) {
  PhantomDatasetOptions options;
  options.height = 64;
  options.width = 64;
  std::vector<Sample> out;
  const auto phantoms = generate_samples(n, seed, options);
  for (std::size_t i = 0; i < phantoms.size(); ++i) {
    const auto& p = phantoms[i];
    out.push_back({prepare_image(p.phantom.image, p.phantom.bbox, preprocess),
                   encode_labels(p.labels, p.scored.category, p.scored.tumor_class), i});
  }
  return out;
}

bool same_parameters(const Model& a, const Model& b) {
  const auto pa = a.parameters(), pb = b.parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i]->value != pb[i]->value) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("adam first step moves every coordinate by the learning rate") {
  nn::Parameter<double> p;
  p.name = "p";
  p.resize(2, 2);
  p.grad << 0.5, -2.0, 1e-3, -7.0;
  Adam<double> adam;
  adam.step({&p}, 0.01);
  CHECK(adam.steps() == 1);
  CHECK(p.value(0, 0) == doctest::Approx(-0.01).epsilon(1e-6));
  CHECK(p.value(0, 1) == doctest::Approx(0.01).epsilon(1e-6));
  CHECK(p.value(1, 0) == doctest::Approx(-0.01).epsilon(1e-4));
  CHECK(p.value(1, 1) == doctest::Approx(0.01).epsilon(1e-6));
  nn::Parameter<double> q;
  q.resize(1, 1);
  CHECK_THROWS_AS(adam.step({&p, &q}, 0.01), TrainingError);
}

TEST_CASE("plateau schedule drops once and stops after the patience") {
  PlateauSchedule s(1e-5, 1e-6, 15, 30);
  CHECK(s.observe(1.0).improved);
  int drops = 0;
  for (int i = 1; i <= 30; ++i) {
    const auto step = s.observe(1.0);
    CHECK_FALSE(step.improved);
    drops += step.lr_dropped;
    if (i == 15) {
      CHECK(step.lr_dropped);
      CHECK(s.lr() == 1e-6);
    }
    if (i < 15) CHECK(s.lr() == 1e-5);
    CHECK(step.stop == (i == 30));
  }
  CHECK(drops == 1);
}

TEST_CASE("improvement must be strict and resets the stop counter") {
  PlateauSchedule s(1.0, 0.1, 3, 5);
  s.observe(2.0);
  s.observe(2.0);
  s.observe(2.0);
  CHECK(s.since_improvement() == 2);
  CHECK(s.observe(1.5).improved);
  CHECK(s.since_improvement() == 0);
  for (int i = 0; i < 3; ++i) s.observe(1.6);
  CHECK(s.reduced());
  for (int i = 0; i < 10; ++i) CHECK_FALSE(s.observe(1.5).lr_dropped);
  CHECK(s.lr() == 0.1);
}

TEST_CASE("scripted validation losses drive the schedule") {
  auto config = tiny_config();
  config.lr_patience = 15;
  config.stop_patience = 30;
  config.max_epochs = 100;
  const auto samples = phantom_samples(4, 1, config.effective_preprocess());
  const std::vector<Sample> train(samples.begin(), samples.begin() + 3), val(samples.begin() + 3, samples.end());
  TrainHooks hooks;
  hooks.validation_override = [](int epoch, const LossBreakdown&) -> std::optional<double> {
    return epoch == 1 ? 1.0 : 0.5;
  };
  int seen = 0;
  hooks.on_epoch = [&](const EpochRecord&) { ++seen; };
  const auto result = train_one_fold(Model(config.model), train, val, config, hooks);
  const auto& log = result.log;
  REQUIRE(log.epochs.size() == 32);
  CHECK(seen == 32);
  CHECK(log.stop_reason == "early_stop");
  CHECK(log.best_epoch == 2);
  for (int e = 0; e < 17; ++e) CHECK(log.epochs[e].lr == config.initial_lr);
  for (int e = 17; e < 32; ++e) CHECK(log.epochs[e].lr == config.reduced_lr);
  CHECK(log.epochs[31].epochs_since_improvement == 30);

  // The returned model is the one saved at the best epoch.
  auto short_config = config;
  short_config.max_epochs = 2;
  const auto two = train_one_fold(Model(config.model), train, val, short_config, hooks);
  CHECK(two.log.stop_reason == "max_epochs");
  CHECK(same_parameters(two.best, result.best));
}

TEST_CASE("training is deterministic and the best epoch has the lowest validation loss") {
  auto config = tiny_config();
  config.max_epochs = 6;
  const auto samples = phantom_samples(10, 2, config.effective_preprocess());
  const std::vector<Sample> train(samples.begin(), samples.begin() + 7), val(samples.begin() + 7, samples.end());
  const auto a = train_one_fold(Model(config.model), train, val, config);
  const auto b = train_one_fold(Model(config.model), train, val, config);
  CHECK(same_parameters(a.best, b.best));
  REQUIRE(a.log.best_epoch >= 1);
  const double best = a.log.epochs[a.log.best_epoch - 1].validation.total;
  for (const auto& e : a.log.epochs) {
    CHECK(best <= e.validation.total);
    CHECK(e.train.total == b.log.epochs[e.epoch - 1].train.total);
  }
  CHECK(evaluate_loss(a.best, val, config.loss_weights).total == doctest::Approx(best).epsilon(1e-6));
  const auto lines = a.log.to_ndjson();
  CHECK(std::count(lines.begin(), lines.end(), '\n') == static_cast<long>(a.log.epochs.size()));
  CHECK(nlohmann::json::parse(lines.substr(0, lines.find('\n')))["epoch"] == 1);
}

TEST_CASE("training loss falls on a handful of phantoms") {
  auto config = tiny_config();
  config.max_epochs = 50;
  config.stop_patience = 50;
  const auto samples = phantom_samples(8, 3, config.effective_preprocess());
  const auto r = train_one_fold(Model(config.model), samples, samples, config);
  REQUIRE(r.log.epochs.size() == 50);
  CHECK(r.log.epochs.back().train.total < 0.8 * r.log.epochs.front().train.total);
}

TEST_CASE("augmented training stays deterministic") {
  auto config = tiny_config();
  config.ablation.augment = true;
  config.max_epochs = 2;
  const auto samples = phantom_samples(6, 4, config.effective_preprocess());
  const auto a = train_one_fold(Model(config.model), samples, samples, config);
  const auto b = train_one_fold(Model(config.model), samples, samples, config);
  CHECK(same_parameters(a.best, b.best));
  CHECK(a.log.epochs[0].augmentation);
}

TEST_CASE("empty sets and bad configs are rejected") {
  auto config = tiny_config();
  const auto samples = phantom_samples(2, 5, config.effective_preprocess());
  CHECK_THROWS_AS(train_one_fold(Model(config.model), {}, samples, config), TrainingError);
  CHECK_THROWS_AS(train_one_fold(Model(config.model), samples, {}, config), TrainingError);
  config.max_epochs = 0;
  CHECK_THROWS_AS(config.validate(), TrainingError);
  config = tiny_config();
  config.preprocess.target_size = 32;
  CHECK_THROWS(config.validate());
}

TEST_CASE("train config json round-trips and rejects unknown keys") {
  auto c = tiny_config();
  c.loss_weights.lambda[3] = 0.7;
  c.ablation.crop = false;
  c.pretrain.epochs = 4;
  c.augmentation.seed = 12;
  const auto back = train_config_from_json(train_config_to_json(c));
  CHECK(train_config_to_json(back) == train_config_to_json(c));
  CHECK(back.loss_weights == c.loss_weights);
  CHECK(back.ablation == c.ablation);
  CHECK(back.pretrain == c.pretrain);
  CHECK(train_config_from_json("{}").batch_size == 6);
  CHECK_THROWS(train_config_from_json("{\"batch_sise\": 4}"));
  CHECK_THROWS(train_config_from_json("{\"ablation\": {\"augmnt\": false}}"));
}

TEST_CASE("ablation flags reach preprocessing") {
  auto c = tiny_config();
  c.ablation.crop = false;
  c.ablation.three_channels = false;
  const auto p = c.effective_preprocess();
  CHECK_FALSE(p.use_crop);
  CHECK_FALSE(p.use_three_channels);
}

TEST_CASE("cross-validation trains one model per fold") {
  TempDir dir("cv");
  const auto manifest = generate_dataset(24, 6, dir.path());
  const auto plan = make_fold_plan(manifest, 3, 0.2, 1);
  auto config = tiny_config();
  config.max_epochs = 2;
  int epochs = 0;
  CrossValidationOptions options;
  options.on_epoch = [&](int, const EpochRecord&) { ++epochs; };
  const auto a = run_cross_validation(manifest, plan, config, options);
  REQUIRE(a.folds.size() == 3);
  CHECK(epochs == 6);
  std::size_t tested = 0;
  for (std::size_t f = 0; f < 3; ++f) {
    CHECK(a.folds[f].test_records == plan.folds[f].test);
    CHECK(a.folds[f].test_metrics.count == plan.folds[f].test.size());
    CHECK(a.folds[f].test_outputs.batch_size() == static_cast<Eigen::Index>(plan.folds[f].test.size()));
    tested += a.folds[f].test_records.size();
  }
  CHECK(tested == manifest.size());
  CHECK(a.aggregate.count == manifest.size());
  std::vector<MetricsReport> reports;
  for (const auto& f : a.folds) reports.push_back(f.test_metrics);
  CHECK(a.aggregate == mean_report(reports));
  const auto b = run_cross_validation(manifest, plan, config);
  CHECK(b.aggregate == a.aggregate);
  for (std::size_t f = 0; f < 3; ++f) CHECK(same_parameters(a.folds[f].model, b.folds[f].model));
}

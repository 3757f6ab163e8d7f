// Acceptance run: one PASS/FAIL line per criterion, exit status 0 only when all pass.

#include "birads/checkpoint.hpp"
#include "birads/evaluation.hpp"
#include "birads/lexicon.hpp"
#include "birads/metrics.hpp"
#include "birads/objective.hpp"
#include "birads/phantom.hpp"
#include "birads/preprocess.hpp"
#include "birads/training.hpp"

#include "gradcheck.hpp"
#include "support.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <set>
#include <string>
#include <vector>

using namespace birads;
using birads::testing::draw_int;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Context {
  std::filesystem::path scratch;
};

std::string fmt(const char* format, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, format, a);
  return buf;
}

std::string fmt(const char* format, double a, double b) {
  char buf[160];
  std::snprintf(buf, sizeof buf, format, a, b);
  return buf;
}

nn::FeatureMaps<float> to_float(const nn::FeatureMaps<double>& d) {
  nn::FeatureMaps<float> out;
  out.height = d.height;
  out.width = d.width;
  for (const auto& s : d.samples) out.samples.push_back(s.cast<float>());
  return out;
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.model = ModelConfig::miniature(3);
  c.preprocess.target_size = 16;
  c.ablation.augment = false;
  c.ablation.pretrain = false;
  c.initial_lr = 1e-3;
  c.reduced_lr = 1e-4;
  return c;
}

/// CPU-scale fine-tuning setup shared by the phantom experiments.
TrainConfig desk_config() {
  TrainConfig c;
  c.model = ModelConfig::vgg16_scaled(8, 64, 1);
  c.preprocess.target_size = 64;
  c.initial_lr = 1e-4;
  c.reduced_lr = 1e-5;
  c.max_epochs = 60;
  c.seed = 5;
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

Outcome lexicon_exactness(Context&) {
  const std::pair<BiradsCategory, double> table[] = {{BiradsCategory::c3, 0.01},
                                                     {BiradsCategory::c4a, 0.06},
                                                     {BiradsCategory::c4b, 0.30},
                                                     {BiradsCategory::c4c, 0.725},
                                                     {BiradsCategory::c5, 0.975}};
  for (const auto& [cat, value] : table) {
    if (category_to_likelihood(cat) != value) return {false, std::string(to_string(cat)) + " maps to the wrong median"};
    if (likelihood_to_category(category_to_likelihood(cat)) != cat) {
      return {false, std::string(to_string(cat)) + " does not round-trip"};
    }
  }
  return {true, "5 medians exact, 5 round-trips"};
}

Outcome loss_decomposition(Context&) {
  DescriptorLabels a;
  DescriptorLabels b;
  b.shape = Shape::irregular;
  b.orientation = Orientation::not_parallel;
  b.margin.circumscribed = false;
  b.margin.subtypes = {false, true, false, true};
  b.echo = EchoPattern::hypoechoic;
  b.posterior = Posterior::shadowing;
  auto y = TaskTargets::zeros(2);
  y.set_sample(0, encode_labels(a, BiradsCategory::c3, TumorClass::benign));
  y.set_sample(1, encode_labels(b, BiradsCategory::c5, TumorClass::malignant));

  auto x = TaskValues<double>::zeros(2);
  x.shape << 0.8, 0.2, 0.1, 0.2, 0.1, 0.6;
  x.orientation << 0.9, 0.4, 0.1, 0.6;
  x.margin << 0.7, 0.1, 0.3, 0.9;
  x.echo << 0.5, 0.05, 0.1, 0.75, 0.1, 0.05, 0.1, 0.05, 0.1, 0.05, 0.1, 0.05;
  x.posterior << 0.6, 0.1, 0.2, 0.1, 0.1, 0.7, 0.1, 0.1;
  x.subtypes << 0.2, 0.4, 0.1, 0.8, 0.1, 0.3, 0.3, 0.6;
  x.likelihood << 0.11, 0.775;
  x.tumor << 0.75, 0.35, 0.25, 0.65;

  using std::log;
  // Per-task means over the two samples, written out term by term.
  const double l1 = -(log(0.8) + log(0.6)) / 2, l2 = -(log(0.9) + log(0.6)) / 2, l3 = -(log(0.7) + log(0.9)) / 2;
  const double l4 = -(log(0.5) + log(0.75)) / 2, l5 = -(log(0.6) + log(0.7)) / 2;
  const double l6 = -(log(0.8) + log(0.6)) / 2, l7 = -(log(0.9) + log(0.8)) / 2;
  const double l8 = -(log(0.9) + log(0.7)) / 2, l9 = -(log(0.7) + log(0.6)) / 2;
  const double l10 = (0.01 + 0.04) / 2, l11 = -(log(0.75) + log(0.65)) / 2;
  const double la = (0.13 * 0.13 + 0.1 * 0.1) / 2;
  const double hand = 0.2 * (l1 + l2 + l3 + l4 + l5) + 0.1 * (l6 + l7 + l8 + l9) + 0.2 * l10 + 0.5 * l11 + 0.2 * la;
  const double total = total_loss<double>(x, y, LossWeights{}).total;
  const double example = agreement_loss(0.2, 0.7, 0.0, 0.7);  // gaps 0.5 and 0.7
  const bool pass = std::abs(total - hand) < 1e-6 && std::abs(example - 0.04) < 1e-15;
  return {pass, fmt("total %.9f vs hand %.9f", total, hand) + fmt(", agreement example %.6f", example)};
}

Outcome gradient_check(Context&) {
  const auto r = birads::testing::gradient_check(5, 150, 1e-4);
  return {r.checked >= 100 && r.worst < 1e-3,
          std::to_string(r.checked) + " parameters, worst relative error " + fmt("%.2e", r.worst) + " at " + r.worst_name};
}

Outcome shape_contract(Context&) {
  Model model(ModelConfig::vgg16(1));
  auto rng = make_rng({4});
  const auto batch = to_float(birads::testing::random_batch(rng, 6, 256));
  const auto out = model.forward(batch);
  const std::array<Eigen::Index, kTaskCount> arity = {3, 2, 2, 6, 4, 1, 1, 1, 1, 1, 2};
  double worst = 0.0;
  for (int k = 1; k <= kTaskCount; ++k) {
    const auto block = out.task(k);
    if (block.rows() != arity[k - 1] || block.cols() != 6) return {false, "task " + std::to_string(k) + " has the wrong shape"};
    if (is_categorical_task(k)) {
      for (Eigen::Index j = 0; j < 6; ++j) worst = std::max(worst, std::abs(double(block.col(j).sum()) - 1.0));
    }
  }
  const auto features = model.backbone_features(batch);
  const bool maps = features.height == 8 && features.width == 8 && features.channels() == 512;
  return {worst <= 1e-5 && maps, fmt("max softmax deviation %.2e", worst) + ", features " + std::to_string(features.height) +
                                     "x" + std::to_string(features.width) + "x" + std::to_string(features.channels())};
}

Outcome schedule(Context&) {
  auto config = tiny_config();
  config.max_epochs = 200;
  const auto samples = phantom_samples(4, 1, config.effective_preprocess());
  const std::vector<Sample> train(samples.begin(), samples.begin() + 3), val(samples.begin() + 3, samples.end());

  struct Script {
    std::string name;
    std::function<double(int)> loss;
    int drop_epoch;  // first epoch run at the reduced rate, 0 for none
    int stop_epoch;
  };
  const std::vector<Script> scripts = {
      {"flat after epoch 1", [](int) { return 1.0; }, 17, 31},
      {"improve at 10", [](int e) { return e < 10 ? 1.0 : 0.5; }, 26, 40},
      {"improve every 14", [](int e) { return e <= 100 ? 1.0 - 0.001 * ((e - 1) / 14) : 0.5; }, 0, 0},
      {"improve after drop", [](int e) { return e < 20 ? 1.0 : (e < 40 ? 0.9 : 0.8); }, 17, 70},
  };
  for (const auto& s : scripts) {
    TrainHooks hooks;
    hooks.validation_override = [&](int epoch, const LossBreakdown&) -> std::optional<double> { return s.loss(epoch); };
    auto c = config;
    if (s.stop_epoch == 0) c.max_epochs = 60;
    const auto log = train_one_fold(Model(c.model), train, val, c, hooks).log;
    int transitions = 0, drop = 0;
    for (std::size_t i = 1; i < log.epochs.size(); ++i) {
      if (log.epochs[i].lr != log.epochs[i - 1].lr) {
        ++transitions;
        drop = log.epochs[i].epoch;
      }
    }
    const int stop = log.stop_reason == "early_stop" ? log.epochs.back().epoch : 0;
    if (transitions > 1 || drop != s.drop_epoch || stop != s.stop_epoch) {
      return {false, s.name + ": drop at " + std::to_string(drop) + ", stop at " + std::to_string(stop)};
    }
  }
  return {true, std::to_string(scripts.size()) + " scripted sequences, drops after 15 flat epochs, stops after 30"};
}

Outcome overfit(Context&) {
  auto c = desk_config();
  c.initial_lr = 1e-3;
  c.reduced_lr = 1e-4;
  c.ablation.augment = false;
  c.ablation.pretrain = false;
  c.max_epochs = 200;
  const auto samples = phantom_samples(64, 11, c.effective_preprocess());
  const auto result = train_one_fold(initial_model(c, 1), samples, samples, c);
  const auto r = evaluate_model(result.best, samples);
  bool pass = *r.tumor_accuracy >= 0.95;
  double lowest = 1.0;
  for (const auto& a : r.descriptor_accuracy) lowest = std::min(lowest, *a);
  pass = pass && lowest >= 0.90;
  return {pass, fmt("tumor %.3f, lowest descriptor %.3f", *r.tumor_accuracy, lowest) + ", best epoch " +
                    std::to_string(result.log.best_epoch) + "/" + std::to_string(result.log.epochs.size())};
}

Outcome multitask_direction(Context& ctx) {
  const auto dir = ctx.scratch / "multitask";
  const auto manifest = generate_dataset(500, 7, dir);
  const auto plan = make_fold_plan(manifest, 5, 0.15, 3);
  const auto full = desk_config();
  const auto pretrained = pretrain_backbone(full);
  CrossValidationOptions options;
  options.pretrained = &pretrained;
  const auto full_result = run_cross_validation(manifest, plan, full, options);

  const auto ladder = multitask_ladder(full);
  const auto& single = ladder.front().config;
  const auto single_result = run_cross_validation(manifest, plan, single, options);
  const double a = *full_result.aggregate.tumor_accuracy, b = *single_result.aggregate.tumor_accuracy;
  return {a >= b - 0.02, fmt("full %.3f vs single-branch %.3f", a, b)};
}

Outcome ablation_harness(Context& ctx) {
  const auto dir = ctx.scratch / "ablation";
  const auto manifest = generate_dataset(100, 13, dir);
  const auto plan = make_fold_plan(manifest, 5, 0.15, 4);
  auto base = desk_config();
  base.model = ModelConfig::vgg16_scaled(16, 32, 2);
  base.preprocess.target_size = 32;
  base.max_epochs = 2;
  base.pretrain.phantom_count = 200;
  base.pretrain.epochs = 1;
  const auto table = run_ablation_suite(manifest, plan, base);
  if (table.rows.size() != 10) return {false, std::to_string(table.rows.size()) + " rows"};
  int cells = 0;
  for (const auto& row : table.rows) {
    const auto& m = row.metrics;
    const auto& branches = row.config.model.branches;
    auto check = [&](const std::optional<double>& v, bool expected, const std::string& what) {
      ++cells;
      if (v.has_value() != expected) throw std::runtime_error(row.label + " " + what);
    };
    try {
      check(m.tumor_accuracy, true, "tumor_accuracy");
      check(m.sensitivity, true, "sensitivity");
      check(m.specificity, true, "specificity");
      for (int d = 0; d < 5; ++d) check(m.descriptor_accuracy[d], branches.descriptors[d], "descriptor");
      for (int s = 0; s < 4; ++s) check(m.subtype_accuracy[s], branches.descriptors[2], "subtype");
      check(m.likelihood_r2, branches.likelihood, "likelihood_r2");
      check(m.likelihood_mse, branches.likelihood, "likelihood_mse");
    } catch (const std::runtime_error& e) {
      return {false, std::string("unexpected cell state: ") + e.what()};
    }
  }
  return {true, "10 rows, " + std::to_string(cells) + " cells checked"};
}

Outcome split_invariants(Context&) {
  auto rng = make_rng({9});
  for (int trial = 0; trial < 1000; ++trial) {
    const int k = draw_int(rng, 2, 10);
    const int benign = draw_int(rng, k, 120), malignant = draw_int(rng, k, 120);
    std::vector<TumorClass> classes(static_cast<std::size_t>(benign), TumorClass::benign);
    classes.insert(classes.end(), static_cast<std::size_t>(malignant), TumorClass::malignant);
    std::shuffle(classes.begin(), classes.end(), rng);
    const double val = uniform(rng, 0.05, 0.4);
    const std::uint64_t seed = rng();
    const auto plan = make_fold_plan(classes, k, val, seed);
    const auto n = classes.size();
    const double global = static_cast<double>(malignant) / static_cast<double>(n);
    std::vector<int> tested(n, 0);
    auto fail = [&](const std::string& what) { return Outcome{false, "trial " + std::to_string(trial) + ": " + what}; };
    if (static_cast<int>(plan.folds.size()) != k) return fail("fold count");
    for (const auto& fold : plan.folds) {
      std::set<std::size_t> seen;
      for (const auto* part : {&fold.train, &fold.validation, &fold.test}) {
        for (auto i : *part) {
          if (i >= n || !seen.insert(i).second) return fail("overlap");
        }
        if (part->empty()) continue;
        const double m = static_cast<double>(std::count_if(part->begin(), part->end(),
                                                           [&](std::size_t i) { return classes[i] == TumorClass::malignant; }));
        if (std::abs(m / part->size() - global) > 0.02 + 1.0 / part->size()) return fail("stratification");
      }
      if (seen.size() != n) return fail("coverage");
      for (auto i : fold.test) ++tested[i];
    }
    if (!std::all_of(tested.begin(), tested.end(), [](int t) { return t == 1; })) return fail("test partition");
    if (!(make_fold_plan(classes, k, val, seed) == plan)) return fail("determinism");
  }
  return {true, "1000 plans"};
}

Outcome metric_oracles(Context&) {
  auto rng = make_rng({10});
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = draw_int(rng, 1, 50);
    std::vector<int> p(n), t(n);
    long tp = 0, tn = 0, fp = 0, fn = 0;
    for (int i = 0; i < n; ++i) {
      p[i] = draw_int(rng, 0, 1);
      t[i] = draw_int(rng, 0, 1);
      tp += p[i] && t[i], tn += !p[i] && !t[i], fp += p[i] && !t[i], fn += !p[i] && t[i];
    }
    const auto m = confusion_metrics(p, t);
    if (m.tp != tp || m.tn != tn || m.fp != fp || m.fn != fn) return {false, "tally mismatch"};
  }
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const int n = draw_int(rng, 2, 60);
    std::vector<double> x(n), y(n);
    for (int i = 0; i < n; ++i) x[i] = uniform(rng, 0.0, 1.0), y[i] = uniform(rng, 0.0, 1.0);
    const auto r = regression_metrics(x, y);
    const double mean = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double var = 0.0;
    for (double v : y) var += (v - mean) * (v - mean) / n;
    worst = std::max(worst, std::abs(*r.r2 - (1.0 - r.mse / var)));
  }
  std::vector<int> p(12, 1), t(12, 1);
  p[0] = p[1] = 0;
  const double sensitivity = *confusion_metrics(p, t).sensitivity;
  return {worst < 1e-10 && std::abs(sensitivity - 0.8333) < 5e-5,
          fmt("r2 cross-check %.1e, sensitivity %.4f", worst, sensitivity)};
}

Outcome preprocessing_properties(Context&) {
  auto rng = make_rng({11});
  for (int trial = 0; trial < 500; ++trial) {
    const int w = draw_int(rng, 8, 400), h = draw_int(rng, 8, 400);
    BoundingBox b;
    b.x0 = draw_int(rng, 0, w - 1);
    b.x1 = draw_int(rng, b.x0 + 1, w);
    b.y0 = draw_int(rng, 0, h - 1);
    b.y1 = draw_int(rng, b.y0 + 1, h);
    const auto sq = tumor_square(w, h, b);
    const int side = std::min(w, h);
    if (sq.width() != side || sq.height() != side || !sq.valid_for(w, h)) return {false, "crop is not a square of side min(H,W)"};
    if (b.width() <= side && b.height() <= side &&
        !(sq.x0 <= b.x0 && sq.y0 <= b.y0 && sq.x1 >= b.x1 && sq.y1 >= b.y1)) {
      return {false, "crop misses the bbox"};
    }
  }
  GrayImage ramp(256, 256);
  for (int y = 0; y < 256; ++y) {
    for (int x = 0; x < 256; ++x) ramp(y, x) = static_cast<float>(x) / 255.0f;
  }
  const auto eq = equalize_histogram(ramp);
  std::vector<float> v(eq.data(), eq.data() + eq.size());
  std::sort(v.begin(), v.end());
  double deviation = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const auto last = std::upper_bound(v.begin(), v.end(), v[i]) - v.begin();
    deviation = std::max(deviation, std::abs(static_cast<double>(last) / v.size() - v[i]));
  }
  PreprocessConfig config;
  config.target_size = 32;
  GrayImage noise(32, 32);
  for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = static_cast<float>(uniform(rng, 0.0, 1.0));
  const auto img = synthesize_channels(noise, config);
  const bool flip = horizontal_flip(horizontal_flip(img)).data == img.data;
  const auto y = encode_labels(birads::testing::random_labels(rng), BiradsCategory::c4a, TumorClass::malignant);
  bool labels = true;
  for (std::uint64_t key = 0; key < 200; ++key) {
    const auto [out, ya] = augment(img, y, AugmentConfig{}, key);
    labels = labels && ya.shape == y.shape && ya.orientation == y.orientation && ya.margin == y.margin &&
             ya.echo == y.echo && ya.posterior == y.posterior && ya.subtypes == y.subtypes &&
             ya.likelihood == y.likelihood && ya.tumor == y.tumor;
  }
  return {deviation < 2.0 / 256.0 && flip && labels,
          fmt("ramp CDF deviation %.5f", deviation) + (flip ? ", double flip exact" : ", flip broken") +
              (labels ? ", labels untouched" : ", labels changed")};
}

Outcome checkpoint_round_trip(Context& ctx) {
  Model model(ModelConfig::vgg16_scaled(8, 64, 12));
  save_checkpoint(ctx.scratch / "checkpoint", model);
  const auto loaded = load_checkpoint(ctx.scratch / "checkpoint");
  auto rng = make_rng({12});
  const auto batch = to_float(birads::testing::random_batch(rng, 4, 64));
  const auto a = model.forward(batch), b = loaded.model.forward(batch);
  double worst = 0.0;
  for (int k = 1; k <= kTaskCount; ++k) worst = std::max(worst, double((a.task(k) - b.task(k)).cwiseAbs().maxCoeff()));
  return {worst < 1e-7, fmt("max deviation %.2e", worst)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> only;
  std::string scratch;
  app.add_option("--only", only, "Criterion numbers to run (default: all)")->delimiter(',')->check(CLI::Range(1, 12));
  app.add_option("--scratch", scratch, "Working directory for generated data");
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, std::function<Outcome(Context&)>>> criteria = {
      {"lexicon exactness", lexicon_exactness},
      {"loss decomposition", loss_decomposition},
      {"gradient check", gradient_check},
      {"shape contract", shape_contract},
      {"schedule correctness", schedule},
      {"overfit smoke test", overfit},
      {"multitask direction", multitask_direction},
      {"ablation harness", ablation_harness},
      {"split invariants", split_invariants},
      {"metric oracles", metric_oracles},
      {"preprocessing properties", preprocessing_properties},
      {"checkpoint round-trip", checkpoint_round_trip},
  };

  std::optional<birads::testing::TempDir> temp;
  Context ctx;
  if (scratch.empty()) {
    temp.emplace("acceptance");
    ctx.scratch = temp->path();
  } else {
    ctx.scratch = scratch;
    std::filesystem::create_directories(ctx.scratch);
  }

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int number = static_cast<int>(i + 1);
    if (!only.empty() && std::find(only.begin(), only.end(), number) == only.end()) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome outcome;
    try {
      outcome = criteria[i].second(ctx);
    } catch (const std::exception& e) {
      outcome = {false, std::string("threw: ") + e.what()};
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    failures += !outcome.pass;
    std::printf("%s %2d %s: %s (%.1f s)\n", outcome.pass ? "PASS" : "FAIL", number, criteria[i].first.c_str(),
                outcome.detail.c_str(), seconds);
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}

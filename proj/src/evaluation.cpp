#include "birads/evaluation.hpp"

#include "birads/samples.hpp"

#include "json.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <optional>

namespace birads {
namespace {

using nlohmann::json;

constexpr std::array<const char*, 5> kDescriptorNames = {"shape", "orientation", "margin", "echo_pattern", "posterior"};

LossWeights weights_for(const BranchMask& mask, const LossWeights& base) {
  LossWeights w = base;
  constexpr std::array<int, 5> descriptor_task = {0, 1, 2, 3, 4};
  for (int d = 0; d < 5; ++d) {
    if (!mask.descriptors[d]) w.lambda[descriptor_task[d]] = 0.0;
  }
  if (!mask.descriptors[2]) {
    for (int k = 5; k < 9; ++k) w.lambda[k] = 0.0;
  }
  if (!mask.likelihood) {
    w.lambda[9] = 0.0;
    w.lambda_a = 0.0;
  }
  return w;
}

std::vector<std::string> class_names(int task) {
  std::vector<std::string> names;
  switch (task) {
    case 0:
      for (int i = 0; i < kShapeCount; ++i) names.emplace_back(to_string(static_cast<Shape>(i)));
      break;
    case 1:
      for (int i = 0; i < kOrientationCount; ++i) names.emplace_back(to_string(static_cast<Orientation>(i)));
      break;
    case 2:
      names = {"circumscribed", "not_circumscribed"};
      break;
    case 3:
      for (int i = 0; i < kEchoCount; ++i) names.emplace_back(to_string(static_cast<EchoPattern>(i)));
      break;
    default:
      for (int i = 0; i < kPosteriorCount; ++i) names.emplace_back(to_string(static_cast<Posterior>(i)));
      break;
  }
  return names;
}

std::vector<double>& descriptor_field(ExplanationReport& r, int d) {
  switch (d) {
    case 0: return r.shape;
    case 1: return r.orientation;
    case 2: return r.margin;
    case 3: return r.echo;
    default: return r.posterior;
  }
}

const std::vector<double>& descriptor_field(const ExplanationReport& r, int d) {
  return descriptor_field(const_cast<ExplanationReport&>(r), d);
}

json row_to_json(const AblationRow& row) {
  json folds = json::array();
  for (const auto& f : row.folds) folds.push_back(json::parse(metrics_report_to_json(f)));
  return {{"table", row.table},
          {"label", row.label},
          {"branches", row.branches},
          {"config", json::parse(train_config_to_json(row.config))},
          {"metrics", json::parse(metrics_report_to_json(row.metrics))},
          {"folds", folds}};
}

}  // namespace

std::string active_branch_label(const BranchMask& branches) {
  std::string label = "tumor";
  for (int d = 0; d < 5; ++d) {
    if (branches.descriptors[d]) label += std::string("+") + kDescriptorNames[d];
  }
  if (branches.likelihood) label += "+likelihood";
  return label;
}

std::vector<AblationConfig> ablation_ladder(const TrainConfig& base) {
  std::vector<AblationConfig> rows;
  TrainConfig c = base;
  rows.push_back({"ablation", "full", c});
  c.ablation.augment = false;
  rows.push_back({"ablation", "no_augmentation", c});
  c.ablation.pretrain = false;
  c.model.backbone.pretrained_weights.reset();
  rows.push_back({"ablation", "no_pretraining", c});
  c.ablation.three_channels = false;
  rows.push_back({"ablation", "single_channel", c});
  c.ablation.crop = false;
  rows.push_back({"ablation", "no_crop", c});
  return rows;
}

std::vector<AblationConfig> multitask_ladder(const TrainConfig& base) {
  const std::array<std::pair<const char*, BranchMask>, 5> steps = {{
      {"tumor_only", BranchMask{{false, false, false, false, false}, false}},
      {"plus_margin", BranchMask{{false, false, true, false, false}, false}},
      {"plus_orientation_shape", BranchMask{{true, true, true, false, false}, false}},
      {"plus_echo_posterior", BranchMask{{true, true, true, true, true}, false}},
      {"plus_likelihood", BranchMask{{true, true, true, true, true}, true}},
  }};
  std::vector<AblationConfig> rows;
  for (const auto& [label, mask] : steps) {
    TrainConfig c = base;
    c.model.branches = mask;
    c.loss_weights = weights_for(mask, base.loss_weights);
    rows.push_back({"multitask", label, c});
  }
  return rows;
}

std::string AblationTable::to_csv() const {
  std::string out = "table,branches," + metrics_csv_header() + "\n";
  for (const auto& row : rows) out += row.table + "," + row.branches + "," + metrics_csv_row(row.label, row.metrics) + "\n";
  return out;
}

std::string AblationTable::to_json() const {
  json j = json::array();
  for (const auto& row : rows) j.push_back(row_to_json(row));
  return json{{"rows", j}}.dump(2) + "\n";
}

AblationTable run_ablation_suite(const DatasetManifest& manifest, const FoldPlan& plan, const TrainConfig& base,
                                 const AblationOptions& options) {
  base.validate();
  std::vector<AblationConfig> configs;
  if (options.include_ablation) {
    for (auto& c : ablation_ladder(base)) configs.push_back(std::move(c));
  }
  if (options.include_multitask) {
    for (auto& c : multitask_ladder(base)) configs.push_back(std::move(c));
  }
  if (configs.empty()) throw EvaluationError("no ablation configurations selected");

  // Every pretraining row shares the base preprocessing, so one backbone serves all.
  std::optional<Model> pretrained;
  const bool needs_pretrain = std::any_of(configs.begin(), configs.end(), [](const AblationConfig& c) {
    return c.config.ablation.pretrain && !c.config.model.backbone.pretrained_weights;
  });
  if (needs_pretrain) pretrained = pretrain_backbone(base);

  AblationTable table;
  for (const auto& c : configs) {
    if (options.on_config) options.on_config(c);
    CrossValidationOptions cv;
    cv.pretrained = pretrained ? &*pretrained : nullptr;
    if (options.on_epoch) cv.on_epoch = [&](int fold, const EpochRecord& r) { options.on_epoch(c, fold, r); };
    auto result = run_cross_validation(manifest, plan, c.config, cv);
    AblationRow row{c.table, c.label, active_branch_label(c.config.model.branches), c.config, {}, result.aggregate};
    for (const auto& f : result.folds) row.folds.push_back(f.test_metrics);
    table.rows.push_back(std::move(row));
  }
  return table;
}

std::string format_percent(double probability) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f%%", 100.0 * probability);
  return buf;
}

ExplanationReport explain_outputs(const TaskValues<double>& outputs, Eigen::Index index) {
  if (index < 0 || index >= outputs.batch_size()) throw EvaluationError("sample index out of range");
  ExplanationReport r;
  r.tumor_probabilities = {outputs.tumor(0, index), outputs.tumor(1, index)};
  r.tumor_class = r.tumor_probabilities[1] > r.tumor_probabilities[0] ? TumorClass::malignant : TumorClass::benign;
  for (int d = 0; d < 5; ++d) {
    const auto block = outputs.task(d + 1);
    auto& field = descriptor_field(r, d);
    field.resize(static_cast<std::size_t>(block.rows()));
    for (Eigen::Index i = 0; i < block.rows(); ++i) field[static_cast<std::size_t>(i)] = block(i, index);
  }
  for (int s = 0; s < 4; ++s) r.subtype_probabilities[s] = outputs.subtypes(s, index);
  r.likelihood = outputs.likelihood(0, index);
  r.likelihood_percent = format_percent(r.likelihood);
  r.category = likelihood_to_category(r.likelihood);
  r.agreement_gap = std::abs(r.tumor_probabilities[1] - r.likelihood);
  r.uncertain = r.agreement_gap > kUncertaintyGap;
  return r;
}

ExplanationReport make_explanation_report(const Model& model, const PreprocessConfig& preprocess,
                                          const GrayImage& image, const BoundingBox& bbox) {
  if (!bbox.valid_for(static_cast<int>(image.cols()), static_cast<int>(image.rows()))) {
    throw EvaluationError("bounding box (" + std::to_string(bbox.x0) + "," + std::to_string(bbox.y0) + "," +
                          std::to_string(bbox.x1) + "," + std::to_string(bbox.y1) + ") lies outside the " +
                          std::to_string(image.cols()) + "x" + std::to_string(image.rows()) + " image");
  }
  std::vector<Sample> samples;
  samples.push_back({prepare_image(image, bbox, preprocess), TaskTargets::zeros(1), 0});
  return explain_outputs(predict(model, samples), 0);
}

std::string explanation_report_to_json(const ExplanationReport& r) {
  json j;
  j["tumor_class"] = {{"prediction", std::string(to_string(r.tumor_class))},
                      {"probabilities", {{"benign", r.tumor_probabilities[0]}, {"malignant", r.tumor_probabilities[1]}}}};
  json descriptors = json::object();
  for (int d = 0; d < 5; ++d) {
    const auto names = class_names(d);
    const auto& probs = descriptor_field(r, d);
    json dist = json::object();
    for (std::size_t i = 0; i < probs.size() && i < names.size(); ++i) dist[names[i]] = probs[i];
    descriptors[kDescriptorNames[d]] = dist;
  }
  j["descriptors"] = descriptors;
  json subtypes = json::object();
  for (int s = 0; s < 4; ++s) subtypes[std::string(to_string(static_cast<MarginSubtype>(s)))] = r.subtype_probabilities[s];
  j["margin_subtypes"] = subtypes;
  j["likelihood_of_malignancy"] = {{"value", r.likelihood}, {"percent", r.likelihood_percent}};
  j["birads_category"] = std::string(to_string(r.category));
  j["uncertainty"] = {{"flag", r.uncertain}, {"gap", r.agreement_gap}, {"threshold", kUncertaintyGap}};
  return j.dump(2);
}

ExplanationReport explanation_report_from_json(const std::string& text) {
  ExplanationReport r;
  try {
    const json j = json::parse(text);
    const auto& tumor = j.at("tumor_class");
    r.tumor_class = parse_tumor_class(tumor.at("prediction").get<std::string>());
    r.tumor_probabilities = {tumor.at("probabilities").at("benign").get<double>(),
                             tumor.at("probabilities").at("malignant").get<double>()};
    for (int d = 0; d < 5; ++d) {
      const auto& dist = j.at("descriptors").at(kDescriptorNames[d]);
      auto& field = descriptor_field(r, d);
      for (const auto& name : class_names(d)) field.push_back(dist.at(name).get<double>());
    }
    for (int s = 0; s < 4; ++s) {
      r.subtype_probabilities[s] = j.at("margin_subtypes").at(std::string(to_string(static_cast<MarginSubtype>(s)))).get<double>();
    }
    r.likelihood = j.at("likelihood_of_malignancy").at("value").get<double>();
    r.likelihood_percent = j.at("likelihood_of_malignancy").at("percent").get<std::string>();
    r.category = parse_category(j.at("birads_category").get<std::string>());
    r.uncertain = j.at("uncertainty").at("flag").get<bool>();
    r.agreement_gap = j.at("uncertainty").at("gap").get<double>();
  } catch (const json::exception& e) {
    throw EvaluationError(std::string("malformed explanation report: ") + e.what());
  } catch (const LexiconError& e) {
    throw EvaluationError(std::string("malformed explanation report: ") + e.what());
  }
  return r;
}

namespace {

// 5x7 glyphs, one byte per row, bit 4 is the leftmost column.
struct Glyph {
  char c;
  std::array<std::uint8_t, 7> rows;
};

constexpr Glyph kFont[] = {
    {'A', {0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}}, {'B', {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E}},
    {'C', {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E}}, {'D', {0x1E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1E}},
    {'E', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F}}, {'F', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10}},
    {'G', {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F}}, {'H', {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
    {'I', {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}}, {'J', {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C}},
    {'K', {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}}, {'L', {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F}},
    {'M', {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11}}, {'N', {0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11}},
    {'O', {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}}, {'P', {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10}},
    {'Q', {0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D}}, {'R', {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11}},
    {'S', {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}}, {'T', {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
    {'U', {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}}, {'V', {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04}},
    {'W', {0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A}}, {'X', {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11}},
    {'Y', {0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04}}, {'Z', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F}},
    {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}}, {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
    {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}}, {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
    {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}}, {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
    {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}}, {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
    {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}}, {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
    {'%', {0x18, 0x19, 0x02, 0x04, 0x08, 0x13, 0x03}}, {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C}},
    {'_', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F}}, {'-', {0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00}},
    {':', {0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00}}, {'+', {0x00, 0x04, 0x04, 0x1F, 0x04, 0x04, 0x00}},
    {'/', {0x00, 0x01, 0x02, 0x04, 0x08, 0x10, 0x00}}, {'(', {0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02}},
    {')', {0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08}}, {'!', {0x04, 0x04, 0x04, 0x04, 0x04, 0x00, 0x04}},
};

struct Rgb {
  std::uint8_t r, g, b;
};

constexpr Rgb kBackground{255, 255, 255};
constexpr Rgb kInk{20, 20, 20};
constexpr Rgb kTrack{225, 225, 225};
constexpr Rgb kBar{70, 110, 170};
constexpr Rgb kTop{215, 110, 40};
constexpr Rgb kWarn{190, 30, 30};

constexpr int kMargin = 8;
constexpr int kLine = 11;
constexpr int kLabelWidth = 176;
constexpr int kBarWidth = 240;
constexpr int kWidth = kMargin + kLabelWidth + kBarWidth + 8 + 6 * 7 + kMargin;

class Canvas {
 public:
  Canvas(int width, int height) : width_(width), height_(height), rgb_(3 * width * height, 255) {}

  void fill(int x0, int y0, int x1, int y1, Rgb c) {
    for (int y = std::max(0, y0); y < std::min(height_, y1); ++y) {
      for (int x = std::max(0, x0); x < std::min(width_, x1); ++x) set(x, y, c);
    }
  }

  void text(int x, int y, const std::string& s, Rgb c) {
    for (char ch : s) {
      const char up = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
      for (const auto& g : kFont) {
        if (g.c != up) continue;
        for (int r = 0; r < 7; ++r) {
          for (int col = 0; col < 5; ++col) {
            if (g.rows[r] & (0x10 >> col)) set(x + col, y + r, c);
          }
        }
      }
      x += 6;
    }
  }

  void save(const std::filesystem::path& path) const { write_png_rgb(path, width_, height_, rgb_); }

 private:
  void set(int x, int y, Rgb c) {
    if (x < 0 || y < 0 || x >= width_ || y >= height_) return;
    auto* p = &rgb_[3 * (static_cast<std::size_t>(y) * width_ + x)];
    p[0] = c.r, p[1] = c.g, p[2] = c.b;
  }

  int width_, height_;
  std::vector<std::uint8_t> rgb_;
};

struct Line {
  enum Kind { heading, bar, warning } kind;
  std::string text;
  double value = 0.0;
  bool top = false;
};

}  // namespace

void render_explanation_figure(const ExplanationReport& r, const std::filesystem::path& path) {
  std::vector<Line> lines;
  lines.push_back({Line::heading, "tumor class: " + std::string(to_string(r.tumor_class))});
  lines.push_back({Line::bar, "benign", r.tumor_probabilities[0], r.tumor_class == TumorClass::benign});
  lines.push_back({Line::bar, "malignant", r.tumor_probabilities[1], r.tumor_class == TumorClass::malignant});
  lines.push_back({Line::heading,
                   "likelihood of malignancy: " + r.likelihood_percent + "  bi-rads " + std::string(to_string(r.category))});
  lines.push_back({Line::bar, "likelihood", r.likelihood, true});
  if (r.uncertain) lines.push_back({Line::warning, "uncertain: branches disagree"});
  for (int d = 0; d < 5; ++d) {
    const auto names = class_names(d);
    const auto& probs = descriptor_field(r, d);
    lines.push_back({Line::heading, kDescriptorNames[d]});
    const auto best = std::max_element(probs.begin(), probs.end()) - probs.begin();
    for (std::size_t i = 0; i < probs.size() && i < names.size(); ++i) {
      lines.push_back({Line::bar, names[i], probs[i], static_cast<long>(i) == best});
    }
  }
  lines.push_back({Line::heading, "margin subtypes"});
  for (int s = 0; s < 4; ++s) {
    const double p = r.subtype_probabilities[s];
    lines.push_back({Line::bar, std::string(to_string(static_cast<MarginSubtype>(s))), p, p > 0.5});
  }

  const int height = 2 * kMargin + kLine * static_cast<int>(lines.size()) +
                     4 * static_cast<int>(std::count_if(lines.begin(), lines.end(),
                                                        [](const Line& l) { return l.kind == Line::heading; }));
  Canvas canvas(kWidth, height);
  canvas.fill(0, 0, kWidth, height, kBackground);
  int y = kMargin;
  for (const auto& line : lines) {
    switch (line.kind) {
      case Line::heading:
        y += 4;
        canvas.text(kMargin, y, line.text, kInk);
        break;
      case Line::warning:
        canvas.text(kMargin, y, line.text, kWarn);
        break;
      case Line::bar: {
        canvas.text(kMargin + 12, y, line.text, kInk);
        const int x0 = kMargin + kLabelWidth;
        const int filled = static_cast<int>(std::lround(std::clamp(line.value, 0.0, 1.0) * kBarWidth));
        canvas.fill(x0, y, x0 + kBarWidth, y + 7, kTrack);
        canvas.fill(x0, y, x0 + filled, y + 7, line.top ? kTop : kBar);
        canvas.text(x0 + kBarWidth + 8, y, format_percent(line.value), kInk);
        break;
      }
    }
    y += kLine;
  }
  canvas.save(path);
}

}  // namespace birads

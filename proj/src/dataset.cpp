#include "birads/dataset.hpp"

#include "birads/random.hpp"

#include "json.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace birads {
namespace {

using nlohmann::json;

std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return fields;
}

std::vector<std::string> header_columns() {
  std::vector<std::string> cols;
  for (auto f : split_csv_line(kManifestHeader)) cols.emplace_back(f);
  return cols;
}

std::string_view strip_cr(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  return line;
}

class RowParser {
 public:
  RowParser(int row, const std::vector<std::string_view>& fields, const std::vector<int>& column_of)
      : row_(row), fields_(fields), column_of_(column_of) {}

  std::string_view field(int canonical) const { return fields_[column_of_[canonical]]; }

  [[noreturn]] void fail(int canonical, const std::string& message) const {
    const std::string name = header_columns()[canonical];
    throw DatasetError("row " + std::to_string(row_) + ", field " + name + ": " + message, row_, name);
  }

  int integer(int canonical) const {
    const auto text = field(canonical);
    int value = 0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc() || ptr != text.data() + text.size()) fail(canonical, "expected integer, got '" + std::string(text) + "'");
    return value;
  }

  bool flag(int canonical) const {
    const auto text = field(canonical);
    if (text == "0") return false;
    if (text == "1") return true;
    fail(canonical, "expected 0 or 1, got '" + std::string(text) + "'");
  }

  template <typename Fn>
  auto lexicon(int canonical, Fn&& parse) const {
    try {
      return parse(field(canonical));
    } catch (const LexiconError& e) {
      fail(canonical, e.what());
    }
  }

 private:
  int row_;
  const std::vector<std::string_view>& fields_;
  const std::vector<int>& column_of_;
};

enum Column {
  kPath, kX0, kY0, kX1, kY1, kTumor, kShape, kOrientation, kMargin,
  kIndistinct, kAngular, kMicrolobulated, kSpiculated, kEcho, kPosterior, kCategory, kColumnCount
};

ImageRecord parse_row(const RowParser& p, int row, const std::filesystem::path& base_dir) {
  ImageRecord r;
  r.image_path = std::string(p.field(kPath));
  if (r.image_path.empty()) p.fail(kPath, "empty image path");
  r.bbox = {p.integer(kX0), p.integer(kY0), p.integer(kX1), p.integer(kY1)};
  r.tumor_class = p.lexicon(kTumor, parse_tumor_class);
  r.labels.shape = p.lexicon(kShape, parse_shape);
  r.labels.orientation = p.lexicon(kOrientation, parse_orientation);
  r.labels.margin.circumscribed = p.lexicon(kMargin, parse_margin_circumscribed);
  for (int s = 0; s < kSubtypeCount; ++s) r.labels.margin.subtypes[s] = p.flag(kIndistinct + s);
  r.labels.echo = p.lexicon(kEcho, parse_echo_pattern);
  r.labels.posterior = p.lexicon(kPosterior, parse_posterior);
  r.category = p.lexicon(kCategory, parse_category);
  if (rank(r.category) < rank(BiradsCategory::c3) || rank(r.category) > rank(BiradsCategory::c5)) {
    p.fail(kCategory, "category must be one of 3, 4A, 4B, 4C, 5");
  }
  try {
    validate_labels(r.labels);
  } catch (const LexiconError& e) {
    p.fail(kMargin, e.what());
  }
  const auto& b = r.bbox;
  if (b.x0 < 0 || b.y0 < 0 || b.x1 <= b.x0 || b.y1 <= b.y0) {
    throw DatasetError("row " + std::to_string(row) + ", field bbox: invalid bounding box (" + std::to_string(b.x0) +
                           "," + std::to_string(b.y0) + "," + std::to_string(b.x1) + "," + std::to_string(b.y1) + ")",
                       row, "bbox");
  }

  std::filesystem::path path(r.image_path);
  if (path.is_relative()) path = base_dir / path;
  if (!std::filesystem::exists(path)) p.fail(kPath, "image file '" + path.string() + "' does not exist");
  GrayImage image;
  try {
    image = read_png_gray(path);
  } catch (const ImageIoError& e) {
    p.fail(kPath, e.what());
  }
  if (!b.valid_for(static_cast<int>(image.cols()), static_cast<int>(image.rows()))) {
    throw DatasetError("row " + std::to_string(row) + ", field bbox: bounding box exceeds " +
                           std::to_string(image.cols()) + "x" + std::to_string(image.rows()) + " image",
                       row, "bbox");
  }
  return r;
}

void require_fold_arguments(int k, double val_fraction) {
  if (k < 2) throw DatasetError("fold count must be at least 2");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw DatasetError("val_fraction must lie in (0, 1)");
}

/// Splits `pool` (per class, already shuffled) into validation and training
/// so that both stay as close as possible to the global malignant fraction.
void carve_validation(const std::array<std::vector<std::size_t>, 2>& pool, double malignant_fraction,
                      double val_fraction, std::vector<std::size_t>& train, std::vector<std::size_t>& validation) {
  const long n_benign = static_cast<long>(pool[0].size());
  const long n_malignant = static_cast<long>(pool[1].size());
  const long total = n_benign + n_malignant;
  const long n_val = std::lround(val_fraction * static_cast<double>(total));
  const long n_train = total - n_val;

  long best = -1;
  double best_cost = 0.0;
  for (long c = std::max(0L, n_val - n_benign); c <= std::min(n_malignant, n_val); ++c) {
    const double cost = std::max(std::abs(c - malignant_fraction * n_val),
                                 std::abs((n_malignant - c) - malignant_fraction * n_train));
    if (best < 0 || cost < best_cost - 1e-12) {
      best = c;
      best_cost = cost;
    }
  }
  const std::array<long, 2> val_count = {n_val - best, best};
  for (int cls = 0; cls < 2; ++cls) {
    for (std::size_t i = 0; i < pool[cls].size(); ++i) {
      (static_cast<long>(i) < val_count[cls] ? validation : train).push_back(pool[cls][i]);
    }
  }
  std::sort(train.begin(), train.end());
  std::sort(validation.begin(), validation.end());
}

double malignant_fraction(const std::vector<TumorClass>& classes) {
  const auto n = std::count(classes.begin(), classes.end(), TumorClass::malignant);
  return static_cast<double>(n) / static_cast<double>(classes.size());
}

}  // namespace

std::filesystem::path DatasetManifest::resolve(const ImageRecord& r) const {
  std::filesystem::path p(r.image_path);
  return p.is_relative() ? base_dir / p : p;
}

std::vector<TumorClass> DatasetManifest::tumor_classes() const {
  std::vector<TumorClass> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.tumor_class);
  return out;
}

DatasetManifest parse_manifest(std::string_view text, const std::filesystem::path& base_dir, std::string source) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    lines.push_back(strip_cr(text.substr(start, end - start)));
    start = end + 1;
  }
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.empty()) throw DatasetError("manifest is empty");

  const auto expected = header_columns();
  const auto header = split_csv_line(lines[0]);
  std::vector<int> column_of(kColumnCount, -1);
  for (std::size_t i = 0; i < header.size(); ++i) {
    auto it = std::find(expected.begin(), expected.end(), header[i]);
    if (it == expected.end()) throw DatasetError("unknown manifest column '" + std::string(header[i]) + "'", 0, std::string(header[i]));
    column_of[it - expected.begin()] = static_cast<int>(i);
  }
  for (int c = 0; c < kColumnCount; ++c) {
    if (column_of[c] < 0) throw DatasetError("manifest is missing column '" + expected[c] + "'", 0, expected[c]);
  }

  DatasetManifest manifest;
  manifest.source = std::move(source);
  manifest.base_dir = base_dir;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const int row = static_cast<int>(i);
    const auto fields = split_csv_line(lines[i]);
    if (fields.size() != header.size()) {
      throw DatasetError("row " + std::to_string(row) + ": expected " + std::to_string(header.size()) + " fields, found " +
                             std::to_string(fields.size()),
                         row);
    }
    manifest.records.push_back(parse_row(RowParser(row, fields, column_of), row, base_dir));
  }
  if (manifest.records.empty()) throw DatasetError("manifest has no records");
  return manifest;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot open manifest '" + path.string() + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_manifest(buffer.str(), path.parent_path(), path.string());
}

std::string format_manifest(const DatasetManifest& manifest) {
  std::ostringstream out;
  out << kManifestHeader << '\n';
  for (const auto& r : manifest.records) {
    out << r.image_path << ',' << r.bbox.x0 << ',' << r.bbox.y0 << ',' << r.bbox.x1 << ',' << r.bbox.y1 << ','
        << to_string(r.tumor_class) << ',' << to_string(r.labels.shape) << ',' << to_string(r.labels.orientation) << ','
        << margin_string(r.labels.margin);
    for (bool s : r.labels.margin.subtypes) out << ',' << (s ? 1 : 0);
    out << ',' << to_string(r.labels.echo) << ',' << to_string(r.labels.posterior) << ',' << to_string(r.category)
        << '\n';
  }
  return out.str();
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DatasetError("cannot write manifest '" + path.string() + "'");
  out << format_manifest(manifest);
  if (!out) throw DatasetError("failed writing manifest '" + path.string() + "'");
}

FoldPlan make_fold_plan(const std::vector<TumorClass>& classes, int k, double val_fraction, std::uint64_t seed) {
  require_fold_arguments(k, val_fraction);
  std::array<std::vector<std::size_t>, 2> by_class;
  for (std::size_t i = 0; i < classes.size(); ++i) by_class[static_cast<int>(classes[i])].push_back(i);
  for (int cls = 0; cls < 2; ++cls) {
    if (static_cast<int>(by_class[cls].size()) < k) {
      throw DatasetError("need at least " + std::to_string(k) + " " + std::string(to_string(static_cast<TumorClass>(cls))) +
                         " records for " + std::to_string(k) + "-fold splitting, found " +
                         std::to_string(by_class[cls].size()));
    }
  }
  Rng rng = make_rng({seed, 0xf01du});
  for (auto& v : by_class) std::shuffle(v.begin(), v.end(), rng);

  // Round-robin over the class-sorted order keeps every fold within one record of proportional.
  std::vector<int> fold_of(classes.size());
  std::size_t position = 0;
  for (const auto& v : by_class) {
    for (std::size_t idx : v) fold_of[idx] = static_cast<int>(position++ % k);
  }

  const double p = malignant_fraction(classes);
  FoldPlan plan;
  plan.k = k;
  plan.val_fraction = val_fraction;
  plan.seed = seed;
  plan.folds.resize(k);
  for (int f = 0; f < k; ++f) {
    Fold& fold = plan.folds[f];
    std::array<std::vector<std::size_t>, 2> pool;
    for (std::size_t i = 0; i < classes.size(); ++i) {
      if (fold_of[i] == f) {
        fold.test.push_back(i);
      } else {
        pool[static_cast<int>(classes[i])].push_back(i);
      }
    }
    Rng fold_rng = make_rng({seed, 0xca11u, static_cast<std::uint64_t>(f)});
    for (auto& v : pool) std::shuffle(v.begin(), v.end(), fold_rng);
    carve_validation(pool, p, val_fraction, fold.train, fold.validation);
  }
  return plan;
}

FoldPlan make_fold_plan(const DatasetManifest& manifest, int k, double val_fraction, std::uint64_t seed) {
  return make_fold_plan(manifest.tumor_classes(), k, val_fraction, seed);
}

Fold make_holdout_split(const std::vector<TumorClass>& classes, double val_fraction, std::uint64_t seed) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw DatasetError("val_fraction must lie in (0, 1)");
  if (classes.size() < 2) throw DatasetError("need at least two records for a train/validation split");
  std::array<std::vector<std::size_t>, 2> pool;
  for (std::size_t i = 0; i < classes.size(); ++i) pool[static_cast<int>(classes[i])].push_back(i);
  Rng rng = make_rng({seed, 0x401du});
  for (auto& v : pool) std::shuffle(v.begin(), v.end(), rng);
  Fold fold;
  carve_validation(pool, malignant_fraction(classes), val_fraction, fold.train, fold.validation);
  return fold;
}

std::string fold_plan_to_json(const FoldPlan& plan) {
  json j;
  j["k"] = plan.k;
  j["val_fraction"] = plan.val_fraction;
  j["seed"] = plan.seed;
  j["folds"] = json::array();
  for (const auto& f : plan.folds) {
    j["folds"].push_back({{"train", f.train}, {"validation", f.validation}, {"test", f.test}});
  }
  return j.dump(2);
}

FoldPlan fold_plan_from_json(std::string_view text) {
  try {
    const json j = json::parse(text);
    FoldPlan plan;
    plan.k = j.at("k").get<int>();
    plan.val_fraction = j.at("val_fraction").get<double>();
    plan.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& f : j.at("folds")) {
      plan.folds.push_back({f.at("train").get<std::vector<std::size_t>>(),
                            f.at("validation").get<std::vector<std::size_t>>(),
                            f.at("test").get<std::vector<std::size_t>>()});
    }
    if (static_cast<int>(plan.folds.size()) != plan.k) throw DatasetError("fold plan lists a different number of folds than k");
    return plan;
  } catch (const json::exception& e) {
    throw DatasetError(std::string("malformed fold plan: ") + e.what());
  }
}

}  // namespace birads

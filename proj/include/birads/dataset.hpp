#pragma once

#include "birads/image.hpp"
#include "birads/lexicon.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace birads {

/// Raised for schema and row-level validation failures. `row()` is the
/// 1-based data row (header excluded), or 0 for file-level errors.
class DatasetError : public std::runtime_error {
 public:
  DatasetError(const std::string& message, int row = 0, std::string field = {})
      : std::runtime_error(message), row_(row), field_(std::move(field)) {}
  int row() const { return row_; }
  const std::string& field() const { return field_; }

 private:
  int row_;
  std::string field_;
};

inline constexpr std::string_view kManifestHeader =
    "image_path,bbox_x0,bbox_y0,bbox_x1,bbox_y1,tumor_class,shape,orientation,margin,margin_indistinct,"
    "margin_angular,margin_microlobulated,margin_spiculated,echo_pattern,posterior,birads_category";

struct ImageRecord {
  /// As written in the manifest; relative paths resolve against the manifest directory.
  std::string image_path;
  BoundingBox bbox;
  DescriptorLabels labels;
  BiradsCategory category = BiradsCategory::c3;
  TumorClass tumor_class = TumorClass::benign;

  TaskTargets targets() const { return encode_labels(labels, category, tumor_class); }
  bool operator==(const ImageRecord&) const = default;
};

struct DatasetManifest {
  std::vector<ImageRecord> records;
  std::string source;
  /// Directory used to resolve relative image paths.
  std::filesystem::path base_dir;

  std::size_t size() const { return records.size(); }
  std::filesystem::path resolve(const ImageRecord& r) const;
  std::vector<TumorClass> tumor_classes() const;
};

/// Parses and validates a manifest CSV, including that each image decodes
/// and contains its bounding box.
DatasetManifest load_manifest(const std::filesystem::path& path);

/// Validates manifest text against images under `base_dir`.
DatasetManifest parse_manifest(std::string_view text, const std::filesystem::path& base_dir, std::string source);

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
std::string format_manifest(const DatasetManifest& manifest);

struct Fold {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;

  bool operator==(const Fold&) const = default;
};

struct FoldPlan {
  int k = 0;
  double val_fraction = 0.0;
  std::uint64_t seed = 0;
  std::vector<Fold> folds;

  bool operator==(const FoldPlan&) const = default;
};

/// Stratified k-fold plan with a stratified validation carve-out from each
/// fold's training portion.
FoldPlan make_fold_plan(const std::vector<TumorClass>& classes, int k, double val_fraction, std::uint64_t seed);
FoldPlan make_fold_plan(const DatasetManifest& manifest, int k, double val_fraction, std::uint64_t seed);

/// Train/validation split without a test set (a single fold with empty test).
Fold make_holdout_split(const std::vector<TumorClass>& classes, double val_fraction, std::uint64_t seed);

std::string fold_plan_to_json(const FoldPlan& plan);
FoldPlan fold_plan_from_json(std::string_view text);

}  // namespace birads

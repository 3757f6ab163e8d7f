#pragma once

#include "birads/dataset.hpp"
#include "birads/image.hpp"
#include "birads/lexicon.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace birads {

struct PhantomSpec {
  DescriptorLabels labels;
  int height = 96;
  int width = 128;
  std::uint64_t seed = 0;
  double speckle_variance = 0.06;
  /// Range of the mass semi-major axis as a fraction of min(height, width).
  double mass_min = 0.19;
  double mass_max = 0.26;
};

struct Phantom {
  GrayImage image;
  BoundingBox bbox;  // tight box around the rendered mass
};

/// Points per suspicious finding and the score-to-category cut points.
struct ScoringRule {
  int margin_not_circumscribed = 3;
  int shape_irregular = 2;
  int orientation_not_parallel = 2;
  int echo_suspicious = 1;       // hypoechoic, heterogeneous, complex cystic/solid
  int posterior_suspicious = 1;  // shadowing, combined
  /// Inclusive upper score for categories 3, 4A, 4B, 4C; anything above is 5.
  std::array<int, 4> category_upper = {0, 2, 4, 6};
  int malignant_from = 5;

  int score(const DescriptorLabels& labels) const;
};

struct ScoredLabels {
  int score = 0;
  BiradsCategory category = BiradsCategory::c3;
  TumorClass tumor_class = TumorClass::benign;
};

ScoredLabels score_labels(const DescriptorLabels& labels, const ScoringRule& rule = {});

Phantom render_phantom(const PhantomSpec& spec);

struct PhantomDatasetOptions {
  int height = 96;
  int width = 128;
  double speckle_variance = 0.06;
  double mass_min = 0.19;
  double mass_max = 0.26;
  double malignant_fraction = 0.4;
  ScoringRule rule;
};

struct PhantomSample {
  Phantom phantom;
  DescriptorLabels labels;
  ScoredLabels scored;
};

/// Draws labels matching an exact malignant count of round(fraction * n) and
/// renders each phantom in memory.
std::vector<PhantomSample> generate_samples(int n, std::uint64_t seed, const PhantomDatasetOptions& options = {});

/// Renders `n` phantoms into `out_dir/images/`, writes `out_dir/manifest.csv`
/// and the `out_dir/phantom.json` sidecar, and returns the manifest.
DatasetManifest generate_dataset(int n, std::uint64_t seed, const std::filesystem::path& out_dir,
                                 const PhantomDatasetOptions& options = {});

std::string scoring_rule_to_json(const ScoringRule& rule);

}  // namespace birads

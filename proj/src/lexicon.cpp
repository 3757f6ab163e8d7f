#include "birads/lexicon.hpp"

#include <algorithm>
#include <string>

namespace birads {
namespace {

constexpr std::array<std::string_view, 3> kShapeNames = {"oval", "round", "irregular"};
constexpr std::array<std::string_view, 2> kOrientationNames = {"parallel", "not_parallel"};
constexpr std::array<std::string_view, 6> kEchoNames = {"anechoic",    "hypoechoic",           "isoechoic",
                                                        "hyperechoic", "complex_cystic_solid", "heterogeneous"};
constexpr std::array<std::string_view, 4> kPosteriorNames = {"none", "enhancement", "shadowing", "combined"};
constexpr std::array<std::string_view, 2> kTumorNames = {"benign", "malignant"};
constexpr std::array<std::string_view, 4> kSubtypeNames = {"indistinct", "angular", "microlobulated", "spiculated"};
constexpr std::array<std::string_view, 9> kCategoryNames = {"0", "1", "2", "3", "4A", "4B", "4C", "5", "6"};

template <typename Enum, std::size_t N>
Enum parse_enum(std::string_view s, const std::array<std::string_view, N>& names, std::string_view what) {
  auto it = std::find(names.begin(), names.end(), s);
  if (it == names.end()) {
    throw LexiconError("invalid " + std::string(what) + " value '" + std::string(s) + "'");
  }
  return static_cast<Enum>(it - names.begin());
}

}  // namespace

double category_to_likelihood(BiradsCategory category) {
  switch (category) {
    case BiradsCategory::c2: return 0.0;
    case BiradsCategory::c3: return 0.01;
    case BiradsCategory::c4a: return 0.06;
    case BiradsCategory::c4b: return 0.30;
    case BiradsCategory::c4c: return 0.725;
    case BiradsCategory::c5: return 0.975;
    default: break;
  }
  throw LexiconError("no numeric likelihood defined for BI-RADS category " + std::string(to_string(category)));
}

BiradsCategory likelihood_to_category(double likelihood) {
  if (likelihood <= 0.02) return BiradsCategory::c3;
  if (likelihood <= 0.10) return BiradsCategory::c4a;
  if (likelihood <= 0.50) return BiradsCategory::c4b;
  if (likelihood <= 0.95) return BiradsCategory::c4c;
  return BiradsCategory::c5;
}

void validate_labels(const DescriptorLabels& labels) {
  const auto& m = labels.margin;
  const bool any = std::any_of(m.subtypes.begin(), m.subtypes.end(), [](bool b) { return b; });
  if (m.circumscribed && any) {
    throw LexiconError("circumscribed margin cannot carry margin sub-types");
  }
  if (!m.circumscribed && !any) {
    throw LexiconError("not_circumscribed margin requires at least one margin sub-type");
  }
}

TaskTargets encode_labels(const DescriptorLabels& labels, BiradsCategory category, TumorClass tumor_class) {
  validate_labels(labels);
  if (rank(category) < rank(BiradsCategory::c3) || rank(category) > rank(BiradsCategory::c5)) {
    throw LexiconError("BI-RADS category " + std::string(to_string(category)) + " is not a training target");
  }
  auto y = TaskTargets::zeros(1);
  y.shape(static_cast<int>(labels.shape), 0) = 1.0;
  y.orientation(static_cast<int>(labels.orientation), 0) = 1.0;
  y.margin(labels.margin.circumscribed ? 0 : 1, 0) = 1.0;
  y.echo(static_cast<int>(labels.echo), 0) = 1.0;
  y.posterior(static_cast<int>(labels.posterior), 0) = 1.0;
  for (int s = 0; s < kSubtypeCount; ++s) y.subtypes(s, 0) = labels.margin.subtypes[s] ? 1.0 : 0.0;
  y.likelihood(0, 0) = category_to_likelihood(category);
  y.tumor(static_cast<int>(tumor_class), 0) = 1.0;
  return y;
}

std::string_view to_string(Shape v) { return kShapeNames[static_cast<int>(v)]; }
std::string_view to_string(Orientation v) { return kOrientationNames[static_cast<int>(v)]; }
std::string_view to_string(EchoPattern v) { return kEchoNames[static_cast<int>(v)]; }
std::string_view to_string(Posterior v) { return kPosteriorNames[static_cast<int>(v)]; }
std::string_view to_string(TumorClass v) { return kTumorNames[static_cast<int>(v)]; }
std::string_view to_string(MarginSubtype v) { return kSubtypeNames[static_cast<int>(v)]; }
std::string_view to_string(BiradsCategory v) { return kCategoryNames[static_cast<int>(v)]; }
std::string_view margin_string(const Margin& m) { return m.circumscribed ? "circumscribed" : "not_circumscribed"; }

Shape parse_shape(std::string_view s) { return parse_enum<Shape>(s, kShapeNames, "shape"); }
Orientation parse_orientation(std::string_view s) { return parse_enum<Orientation>(s, kOrientationNames, "orientation"); }
EchoPattern parse_echo_pattern(std::string_view s) { return parse_enum<EchoPattern>(s, kEchoNames, "echo_pattern"); }
Posterior parse_posterior(std::string_view s) { return parse_enum<Posterior>(s, kPosteriorNames, "posterior"); }
TumorClass parse_tumor_class(std::string_view s) { return parse_enum<TumorClass>(s, kTumorNames, "tumor_class"); }
BiradsCategory parse_category(std::string_view s) {
  return parse_enum<BiradsCategory>(s, kCategoryNames, "birads_category");
}

bool parse_margin_circumscribed(std::string_view s) {
  if (s == "circumscribed") return true;
  if (s == "not_circumscribed") return false;
  throw LexiconError("invalid margin value '" + std::string(s) + "'");
}

}  // namespace birads

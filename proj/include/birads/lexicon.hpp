#pragma once

#include "birads/tasks.hpp"

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace birads {

inline constexpr std::string_view kLexiconVersion = "birads-us-5th";

class LexiconError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Shape : std::uint8_t { oval, round, irregular };
enum class Orientation : std::uint8_t { parallel, not_parallel };
enum class EchoPattern : std::uint8_t { anechoic, hypoechoic, isoechoic, hyperechoic, complex_cystic_solid, heterogeneous };
enum class Posterior : std::uint8_t { none, enhancement, shadowing, combined };
enum class TumorClass : std::uint8_t { benign, malignant };

/// Ordinal assessment category; the underlying value is the rank.
enum class BiradsCategory : std::uint8_t { c0, c1, c2, c3, c4a, c4b, c4c, c5, c6 };

enum class MarginSubtype : std::uint8_t { indistinct, angular, microlobulated, spiculated };

inline constexpr int kShapeCount = 3;
inline constexpr int kOrientationCount = 2;
inline constexpr int kEchoCount = 6;
inline constexpr int kPosteriorCount = 4;
inline constexpr int kSubtypeCount = 4;

struct Margin {
  bool circumscribed = true;
  std::array<bool, kSubtypeCount> subtypes{};  // indistinct, angular, microlobulated, spiculated

  bool has(MarginSubtype s) const { return subtypes[static_cast<int>(s)]; }
  bool operator==(const Margin&) const = default;
};

struct DescriptorLabels {
  Shape shape = Shape::oval;
  Orientation orientation = Orientation::parallel;
  Margin margin;
  EchoPattern echo = EchoPattern::anechoic;
  Posterior posterior = Posterior::none;

  bool operator==(const DescriptorLabels&) const = default;
};

constexpr int rank(BiradsCategory c) { return static_cast<int>(c); }

/// Median likelihood of malignancy for a category. Throws LexiconError for
/// categories 0, 1 and 6, which carry no numeric likelihood.
double category_to_likelihood(BiradsCategory category);

/// Inverse binning: <=0.02 -> 3, <=0.10 -> 4A, <=0.50 -> 4B, <=0.95 -> 4C, else 5.
BiradsCategory likelihood_to_category(double likelihood);

/// Throws LexiconError when the margin sub-types contradict the circumscribed flag.
void validate_labels(const DescriptorLabels& labels);

/// Builds the one-sample targets Y1..Y11.
TaskTargets encode_labels(const DescriptorLabels& labels, BiradsCategory category, TumorClass tumor_class);

// Lowercase snake_case vocabulary shared with the manifest format.
std::string_view to_string(Shape v);
std::string_view to_string(Orientation v);
std::string_view to_string(EchoPattern v);
std::string_view to_string(Posterior v);
std::string_view to_string(TumorClass v);
std::string_view to_string(MarginSubtype v);
std::string_view to_string(BiradsCategory v);
std::string_view margin_string(const Margin& m);

Shape parse_shape(std::string_view s);
Orientation parse_orientation(std::string_view s);
EchoPattern parse_echo_pattern(std::string_view s);
Posterior parse_posterior(std::string_view s);
TumorClass parse_tumor_class(std::string_view s);
BiradsCategory parse_category(std::string_view s);
/// Returns true for "circumscribed", false for "not_circumscribed".
bool parse_margin_circumscribed(std::string_view s);

}  // namespace birads

#include "birads/phantom.hpp"

#include "birads/preprocess.hpp"
#include "birads/random.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <vector>

namespace birads {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kBackgroundLevel = 0.55;

double echo_level(EchoPattern e) {
  switch (e) {
    case EchoPattern::anechoic: return 0.04;
    case EchoPattern::hypoechoic: return 0.22;
    case EchoPattern::isoechoic: return 0.42;
    case EchoPattern::hyperechoic: return 0.85;
    case EchoPattern::complex_cystic_solid: return 0.05;
    case EchoPattern::heterogeneous: return 0.45;
  }
  return 0.5;
}

struct Blob {
  double x, y, radius, level;
};

/// Boundary radius multiplier as a function of polar angle.
struct BoundaryProfile {
  std::vector<double> harmonic_amp, harmonic_phase;  // irregular
  int corners = 0;                                  // angular
  double corner_phase = 0.0;
  int lobules = 0;  // microlobulated
  double lobule_phase = 0.0;
  std::vector<double> spikes;  // spiculated, angles
  double spike_width = 0.12;
  double spike_length = 0.55;

  double operator()(double theta) const {
    double g = 1.0;
    for (std::size_t j = 0; j < harmonic_amp.size(); ++j) {
      g += harmonic_amp[j] * std::cos((j + 2) * theta + harmonic_phase[j]);
    }
    if (corners > 0) {
      const double t = corners * theta / kTwoPi + corner_phase;
      const double tri = std::abs(t - std::floor(t) - 0.5);  // 0 at corners, 0.5 between
      g *= 1.0 + 0.44 * (0.5 - tri) * 2.0 - 0.22;
    }
    if (lobules > 0) g *= 0.88 + 0.24 * std::abs(std::sin(lobules * theta / 2.0 + lobule_phase));
    double spike = 0.0;
    for (double s : spikes) {
      double d = std::remainder(theta - s, kTwoPi);
      spike = std::max(spike, spike_length * std::max(0.0, 1.0 - std::abs(d) / spike_width));
    }
    return g + spike;
  }
};

BoundaryProfile draw_profile(const DescriptorLabels& labels, double major_angle, Rng& rng) {
  BoundaryProfile p;
  if (labels.shape == Shape::irregular) {
    for (int j = 0; j < 4; ++j) {
      p.harmonic_amp.push_back(uniform(rng, 0.07, 0.11));
      p.harmonic_phase.push_back(uniform(rng, 0.0, kTwoPi));
    }
  }
  const auto& m = labels.margin;
  if (!m.circumscribed) {
    if (m.has(MarginSubtype::angular)) {
      p.corners = 4 + static_cast<int>(uniform(rng, 0.0, 2.999));
      p.corner_phase = uniform(rng, 0.0, 1.0);
    }
    if (m.has(MarginSubtype::microlobulated)) {
      p.lobules = 8 + 2 * static_cast<int>(uniform(rng, 0.0, 2.999));
      p.lobule_phase = uniform(rng, 0.0, kTwoPi);
    }
    if (m.has(MarginSubtype::spiculated)) {
      // Spikes along the major axis keep the long axis the widest extent.
      p.spikes = {major_angle, major_angle + std::numbers::pi};
      const int extra = 6 + static_cast<int>(uniform(rng, 0.0, 4.999));
      for (int i = 0; i < extra; ++i) p.spikes.push_back(uniform(rng, 0.0, kTwoPi));
    }
  }
  return p;
}

double smoothstep01(double t) {
  t = std::clamp(t, 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

struct MassGeometry {
  double cx, cy, a, b;  // a: horizontal semi-axis, b: vertical semi-axis
};

/// Soft mass mask plus its tight bbox (mask >= 0.5).
struct MassMask {
  GrayImage mask;
  BoundingBox bbox;
};

MassMask rasterize(const MassGeometry& g, const BoundaryProfile& profile, double edge_width, int height, int width) {
  MassMask out;
  out.mask = GrayImage::Zero(height, width);
  int x0 = width, y0 = height, x1 = -1, y1 = -1;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double dx = x - g.cx;
      const double dy = y - g.cy;
      const double d = std::hypot(dx, dy);
      const double theta = std::atan2(dy, dx);
      const double c = std::cos(theta), s = std::sin(theta);
      const double r_ellipse = g.a * g.b / std::sqrt(g.b * g.b * c * c + g.a * g.a * s * s);
      const double radius = r_ellipse * profile(theta);
      const double m = smoothstep01((radius - d) / edge_width + 0.5);
      out.mask(y, x) = static_cast<float>(m);
      if (m >= 0.5) {
        x0 = std::min(x0, x), y0 = std::min(y0, y), x1 = std::max(x1, x), y1 = std::max(y1, y);
      }
    }
  }
  out.bbox = {x0, y0, x1 + 1, y1 + 1};
  return out;
}

GrayImage interior_texture(EchoPattern echo, const MassGeometry& g, int height, int width, Rng& rng) {
  GrayImage tex = GrayImage::Constant(height, width, static_cast<float>(echo_level(echo)));
  if (echo != EchoPattern::complex_cystic_solid && echo != EchoPattern::heterogeneous) return tex;
  std::vector<Blob> blobs;
  const int count = echo == EchoPattern::heterogeneous ? 7 : 3;
  for (int i = 0; i < count; ++i) {
    const double level = echo == EchoPattern::heterogeneous ? (i % 2 == 0 ? 0.18 : 0.75) : 0.62;
    blobs.push_back({g.cx + uniform(rng, -0.6, 0.6) * g.a, g.cy + uniform(rng, -0.6, 0.6) * g.b,
                     uniform(rng, 0.25, 0.45) * std::min(g.a, g.b), level});
  }
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      for (const auto& blob : blobs) {
        const double w = std::exp(-((x - blob.x) * (x - blob.x) + (y - blob.y) * (y - blob.y)) /
                                  (2.0 * blob.radius * blob.radius));
        tex(y, x) = static_cast<float>((1.0 - w) * tex(y, x) + w * blob.level);
      }
    }
  }
  return tex;
}

/// Multiplicative gain applied to tissue below the mass.
GrayImage posterior_gain(Posterior posterior, const MassMask& mass, int height, int width) {
  GrayImage gain = GrayImage::Ones(height, width);
  if (posterior == Posterior::none) return gain;
  const double mid = 0.5 * (mass.bbox.x0 + mass.bbox.x1);
  for (int x = mass.bbox.x0; x < mass.bbox.x1; ++x) {
    int lowest = -1;
    for (int y = 0; y < height; ++y) {
      if (mass.mask(y, x) >= 0.5) lowest = y;
    }
    if (lowest < 0) continue;
    bool brighten = posterior == Posterior::enhancement;
    if (posterior == Posterior::combined) brighten = x < mid;
    const double factor = brighten ? 1.5 : 0.35;
    for (int y = lowest + 1; y < height; ++y) {
      const double ramp = std::min(1.0, (y - lowest) / 4.0);
      gain(y, x) = static_cast<float>(1.0 + (factor - 1.0) * ramp);
    }
  }
  return gain;
}

bool orientation_holds(Orientation o, const BoundingBox& b) {
  return o == Orientation::parallel ? b.width() > b.height() : b.height() > b.width();
}

}  // namespace

int ScoringRule::score(const DescriptorLabels& labels) const {
  int s = 0;
  if (!labels.margin.circumscribed) s += margin_not_circumscribed;
  if (labels.shape == Shape::irregular) s += shape_irregular;
  if (labels.orientation == Orientation::not_parallel) s += orientation_not_parallel;
  if (labels.echo == EchoPattern::hypoechoic || labels.echo == EchoPattern::heterogeneous ||
      labels.echo == EchoPattern::complex_cystic_solid) {
    s += echo_suspicious;
  }
  if (labels.posterior == Posterior::shadowing || labels.posterior == Posterior::combined) s += posterior_suspicious;
  return s;
}

ScoredLabels score_labels(const DescriptorLabels& labels, const ScoringRule& rule) {
  validate_labels(labels);
  ScoredLabels out;
  out.score = rule.score(labels);
  static constexpr std::array<BiradsCategory, 4> kBins = {BiradsCategory::c3, BiradsCategory::c4a, BiradsCategory::c4b,
                                                          BiradsCategory::c4c};
  out.category = BiradsCategory::c5;
  for (std::size_t i = 0; i < kBins.size(); ++i) {
    if (out.score <= rule.category_upper[i]) {
      out.category = kBins[i];
      break;
    }
  }
  out.tumor_class = out.score >= rule.malignant_from ? TumorClass::malignant : TumorClass::benign;
  return out;
}

Phantom render_phantom(const PhantomSpec& spec) {
  validate_labels(spec.labels);
  if (spec.height < 64 || spec.width < 64) throw std::invalid_argument("phantom images must be at least 64x64");
  if (!(spec.mass_min > 0.0 && spec.mass_min <= spec.mass_max && spec.mass_max < 0.5)) {
    throw std::invalid_argument("mass extent must satisfy 0 < min <= max < 0.5");
  }
  const int h = spec.height, w = spec.width;
  const auto& labels = spec.labels;
  Rng rng = make_rng({spec.seed, 0x9a47u});

  const double aspect = labels.shape == Shape::round ? 1.08 : 1.7;
  const double major = uniform(rng, spec.mass_min, spec.mass_max) * std::min(h, w);
  const bool parallel = labels.orientation == Orientation::parallel;
  MassGeometry g{0.0, 0.0, parallel ? major : major / aspect, parallel ? major / aspect : major};
  const double reach_x = g.a * 1.5 + 3.0;
  const double reach_y = g.b * 1.5 + 3.0;
  g.cx = uniform(rng, reach_x, std::max(reach_x, w - reach_x));
  g.cy = uniform(rng, reach_y, std::max(reach_y, std::min(h - reach_y - 12.0, 0.6 * h)));

  const double edge = !labels.margin.circumscribed && labels.margin.has(MarginSubtype::indistinct) ? 9.0 : 0.8;
  const double major_angle = parallel ? 0.0 : std::numbers::pi / 2.0;

  MassMask mass;
  for (int attempt = 0;; ++attempt) {
    const BoundaryProfile profile = draw_profile(labels, major_angle, rng);
    mass = rasterize(g, profile, edge, h, w);
    if (orientation_holds(labels.orientation, mass.bbox) || attempt >= 16) break;
  }

  // Tissue background with faint horizontal layering.
  const double phase = uniform(rng, 0.0, kTwoPi);
  GrayImage background(h, w);
  for (int y = 0; y < h; ++y) {
    background.row(y).setConstant(static_cast<float>(kBackgroundLevel + 0.05 * std::sin(kTwoPi * 3.0 * y / h + phase)));
  }
  background *= posterior_gain(labels.posterior, mass, h, w);
  const GrayImage interior = interior_texture(labels.echo, g, h, w, rng);
  GrayImage clean = background * (1.0f - mass.mask) + interior * mass.mask;

  std::gamma_distribution<double> speckle(1.0 / spec.speckle_variance, spec.speckle_variance);
  GrayImage noise(h, w);
  for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = static_cast<float>(speckle(rng));
  noise = gaussian_smooth(noise, 0.6);

  Phantom out;
  out.image = (clean * noise).cwiseMax(0.0f).cwiseMin(1.0f);
  out.bbox = mass.bbox;
  return out;
}

std::vector<PhantomSample> generate_samples(int n, std::uint64_t seed, const PhantomDatasetOptions& options) {
  if (n < 1) throw std::invalid_argument("phantom count must be at least 1");
  const long n_malignant = std::lround(options.malignant_fraction * n);
  std::vector<TumorClass> classes(n, TumorClass::benign);
  std::fill_n(classes.begin(), n_malignant, TumorClass::malignant);
  Rng assign = make_rng({seed, 0xc1a5u});
  std::shuffle(classes.begin(), classes.end(), assign);

  std::vector<PhantomSample> samples;
  samples.reserve(n);
  for (int i = 0; i < n; ++i) {
    Rng rng = make_rng({seed, 0x1abe1u, static_cast<std::uint64_t>(i)});
    auto pick = [&rng](int count) { return std::min(count - 1, static_cast<int>(uniform(rng, 0.0, 1.0) * count)); };
    DescriptorLabels labels;
    ScoredLabels scored;
    do {
      labels.shape = static_cast<Shape>(pick(kShapeCount));
      labels.orientation = static_cast<Orientation>(pick(kOrientationCount));
      labels.margin = Margin{};
      labels.margin.circumscribed = pick(2) == 0;
      if (!labels.margin.circumscribed) {
        bool any = false;
        for (auto& s : labels.margin.subtypes) any |= (s = uniform(rng, 0.0, 1.0) < 0.35);
        if (!any) labels.margin.subtypes[pick(kSubtypeCount)] = true;
      }
      labels.echo = static_cast<EchoPattern>(pick(kEchoCount));
      labels.posterior = static_cast<Posterior>(pick(kPosteriorCount));
      scored = score_labels(labels, options.rule);
    } while (scored.tumor_class != classes[i]);

    PhantomSpec spec;
    spec.labels = labels;
    spec.height = options.height;
    spec.width = options.width;
    spec.seed = rng();
    spec.speckle_variance = options.speckle_variance;
    spec.mass_min = options.mass_min;
    spec.mass_max = options.mass_max;
    samples.push_back({render_phantom(spec), labels, scored});
  }
  return samples;
}

DatasetManifest generate_dataset(int n, std::uint64_t seed, const std::filesystem::path& out_dir,
                                 const PhantomDatasetOptions& options) {
  auto samples = generate_samples(n, seed, options);
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "images", ec);
  if (ec) throw DatasetError("cannot create output directory '" + (out_dir / "images").string() + "': " + ec.message());

  DatasetManifest manifest;
  manifest.source = "phantom seed=" + std::to_string(seed);
  manifest.base_dir = out_dir;
  for (int i = 0; i < n; ++i) {
    const auto& sample = samples[i];
    char name[32];
    std::snprintf(name, sizeof(name), "images/phantom_%05d.png", i);
    write_png_gray(out_dir / name, sample.phantom.image);

    ImageRecord record;
    record.image_path = name;
    record.bbox = sample.phantom.bbox;
    record.labels = sample.labels;
    record.category = sample.scored.category;
    record.tumor_class = sample.scored.tumor_class;
    manifest.records.push_back(std::move(record));
  }
  write_manifest(out_dir / "manifest.csv", manifest);

  nlohmann::json sidecar;
  sidecar["seed"] = seed;
  sidecar["count"] = n;
  sidecar["height"] = options.height;
  sidecar["width"] = options.width;
  sidecar["speckle_variance"] = options.speckle_variance;
  sidecar["mass_extent"] = {options.mass_min, options.mass_max};
  sidecar["malignant_fraction"] = options.malignant_fraction;
  sidecar["scoring_rule"] = nlohmann::json::parse(scoring_rule_to_json(options.rule));
  std::ofstream(out_dir / "phantom.json") << sidecar.dump(2) << '\n';
  return manifest;
}

std::string scoring_rule_to_json(const ScoringRule& rule) {
  nlohmann::json j;
  j["margin_not_circumscribed"] = rule.margin_not_circumscribed;
  j["shape_irregular"] = rule.shape_irregular;
  j["orientation_not_parallel"] = rule.orientation_not_parallel;
  j["echo_suspicious"] = rule.echo_suspicious;
  j["posterior_suspicious"] = rule.posterior_suspicious;
  j["category_upper"] = rule.category_upper;
  j["malignant_from"] = rule.malignant_from;
  return j.dump();
}

}  // namespace birads

#include "birads/preprocess.hpp"

#include "birads/lexicon.hpp"
#include "support.hpp"

#include "doctest.h"

#include <algorithm>
#include <vector>

using namespace birads;
using birads::testing::draw_int;

namespace {

GrayImage random_image(Rng& rng, int h, int w) {
  GrayImage img(h, w);
  for (Eigen::Index i = 0; i < img.size(); ++i) img.data()[i] = static_cast<float>(uniform(rng, 0.0, 1.0));
  return img;
}

ChannelImage random_channels(Rng& rng, int size) {
  PreprocessConfig config;
  config.target_size = size;
  return synthesize_channels(random_image(rng, size, size), config);
}

GrayImage column_ramp(int h, int w) {
  GrayImage img(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) img(y, x) = static_cast<float>(x) / static_cast<float>(w - 1);
  }
  return img;
}

}  // namespace

TEST_CASE("crop square is centred on the bbox and clamped") {
  const auto sq = tumor_square(800, 400, BoundingBox{300, 100, 500, 300});
  CHECK(sq == BoundingBox{200, 0, 600, 400});
  CHECK(tumor_square(800, 400, BoundingBox{0, 100, 50, 200}) == BoundingBox{0, 0, 400, 400});
  CHECK(tumor_square(800, 400, BoundingBox{760, 100, 800, 200}) == BoundingBox{400, 0, 800, 400});
  CHECK(tumor_square(300, 300, BoundingBox{100, 100, 200, 200}) == BoundingBox{0, 0, 300, 300});
}

TEST_CASE("crop of a square image with a centred bbox is the identity") {
  auto rng = make_rng({1});
  const auto img = random_image(rng, 64, 64);
  const auto out = crop_tumor_square(img, BoundingBox{16, 16, 48, 48});
  CHECK((out == img).all());
}

TEST_CASE("crop output is a square inside the image that holds the bbox") {
  auto rng = make_rng({2});
  for (int trial = 0; trial < 500; ++trial) {
    const int w = draw_int(rng, 8, 300), h = draw_int(rng, 8, 300);
    BoundingBox b;
    b.x0 = draw_int(rng, 0, w - 1);
    b.x1 = draw_int(rng, b.x0 + 1, w);
    b.y0 = draw_int(rng, 0, h - 1);
    b.y1 = draw_int(rng, b.y0 + 1, h);
    const auto sq = tumor_square(w, h, b);
    const int side = std::min(w, h);
    CHECK(sq.width() == side);
    CHECK(sq.height() == side);
    CHECK(sq.valid_for(w, h));
    if (b.width() <= side && b.height() <= side) {
      CHECK(sq.x0 <= b.x0);
      CHECK(sq.y0 <= b.y0);
      CHECK(sq.x1 >= b.x1);
      CHECK(sq.y1 >= b.y1);
    }
  }
}

TEST_CASE("crop rejects an empty image") {
  GrayImage empty(0, 0);
  CHECK_THROWS_AS(crop_tumor_square(empty, BoundingBox{0, 0, 1, 1}), PreprocessError);
}

TEST_CASE("resize to the same size is bitwise identical") {
  auto rng = make_rng({3});
  const auto img = random_image(rng, 256, 256);
  CHECK((resize(img, 256) == img).all());
}

TEST_CASE("resize preserves constants and stays in range") {
  GrayImage c = GrayImage::Constant(512, 512, 0.37f);
  const auto out = resize(c, 256);
  CHECK(out.rows() == 256);
  CHECK(out.cols() == 256);
  CHECK((out - 0.37f).abs().maxCoeff() < 1e-6f);
  auto rng = make_rng({4});
  const auto img = random_image(rng, 97, 97);
  const auto r = resize(img, 256);
  CHECK(r.minCoeff() >= img.minCoeff());
  CHECK(r.maxCoeff() <= img.maxCoeff());
}

TEST_CASE("resize keeps a ramp monotone") {
  const auto out = resize(column_ramp(400, 400), 256);
  for (int y = 0; y < 256; y += 17) {
    for (int x = 1; x < 256; ++x) CHECK(out(y, x) >= out(y, x - 1));
  }
}

TEST_CASE("equalized ramp has a uniform histogram") {
  const auto eq = equalize_histogram(column_ramp(256, 256));
  std::vector<float> v(eq.data(), eq.data() + eq.size());
  std::sort(v.begin(), v.end());
  const double n = static_cast<double>(v.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    // Empirical CDF at v[i] against the uniform CDF.
    const auto last = std::upper_bound(v.begin(), v.end(), v[i]) - v.begin();
    worst = std::max(worst, std::abs(static_cast<double>(last) / n - static_cast<double>(v[i])));
  }
  CHECK(worst < 2.0 / 256.0);
}

TEST_CASE("equalization preserves intensity order") {
  auto rng = make_rng({5});
  for (int trial = 0; trial < 20; ++trial) {
    const auto img = random_image(rng, 40, 50);
    const auto eq = equalize_histogram(img);
    for (int pair = 0; pair < 500; ++pair) {
      const auto p = draw_int(rng, 0, static_cast<int>(img.size()) - 1);
      const auto q = draw_int(rng, 0, static_cast<int>(img.size()) - 1);
      if (img.data()[p] <= img.data()[q]) CHECK(eq.data()[p] <= eq.data()[q]);
    }
  }
}

TEST_CASE("constant images pass through channel synthesis") {
  PreprocessConfig config;
  config.target_size = 32;
  const auto ch = synthesize_channels(GrayImage::Constant(32, 32, 0.6f), config);
  CHECK(ch.channels() == 3);
  for (int c = 0; c < 3; ++c) CHECK((ch.plane(c) - 0.6f).abs().maxCoeff() < 1e-6f);
}

TEST_CASE("smoothing spreads a single bright pixel") {
  GrayImage img = GrayImage::Zero(32, 32);
  img(16, 16) = 1.0f;
  PreprocessConfig config;
  config.target_size = 32;
  const auto ch = synthesize_channels(img, config);
  CHECK(ch.plane(2)(16, 16) < 1.0f);
  CHECK(ch.plane(2)(16, 17) > 0.0f);
  CHECK(ch.plane(0)(16, 16) == 1.0f);
}

TEST_CASE("single channel mode replicates gray") {
  auto rng = make_rng({6});
  PreprocessConfig config;
  config.target_size = 24;
  config.use_three_channels = false;
  const auto img = random_image(rng, 24, 24);
  const auto ch = synthesize_channels(img, config);
  for (int c = 0; c < 3; ++c) CHECK((ch.plane(c) == img).all());
}

TEST_CASE("prepared input shape is constant across ablations") {
  auto rng = make_rng({7});
  const auto img = random_image(rng, 90, 130);
  for (bool crop : {true, false}) {
    for (bool three : {true, false}) {
      PreprocessConfig config;
      config.target_size = 48;
      config.use_crop = crop;
      config.use_three_channels = three;
      const auto ch = prepare_image(img, BoundingBox{40, 20, 80, 60}, config);
      CHECK(ch.channels() == 3);
      CHECK(ch.height == 48);
      CHECK(ch.width == 48);
    }
  }
}

TEST_CASE("null augmentation is the identity") {
  auto rng = make_rng({8});
  const auto img = random_channels(rng, 32);
  const auto params = draw_augment_params(AugmentConfig::none(), 12, 32);
  CHECK(params.is_geometric_identity());
  CHECK_FALSE(params.flip);
  CHECK((apply_augmentation(img, params).data - img.data).cwiseAbs().maxCoeff() < 1e-6f);
}

TEST_CASE("double flip restores the image exactly") {
  auto rng = make_rng({9});
  const auto img = random_channels(rng, 33);
  CHECK(horizontal_flip(horizontal_flip(img)).data == img.data);
  const auto once = horizontal_flip(img);
  CHECK(once.plane(0)(5, 0) == img.plane(0)(5, 32));
}

TEST_CASE("augmentation draws stay inside the configured ranges") {
  AugmentConfig config;
  int flips = 0;
  for (std::uint64_t key = 0; key < 2000; ++key) {
    const auto p = draw_augment_params(config, key, 100);
    CHECK(p.zoom >= 0.8);
    CHECK(p.zoom <= 1.2);
    CHECK(std::abs(p.shift_x) <= 10.0);
    CHECK(std::abs(p.rotation_rad) <= 5.0 * 3.14159265358979 / 180.0 + 1e-12);
    CHECK(std::abs(p.shear_rad) <= 0.2);
    flips += p.flip;
  }
  CHECK(flips > 900);
  CHECK(flips < 1100);
}

TEST_CASE("augmentation is reproducible and never touches labels") {
  auto rng = make_rng({10});
  const auto img = random_channels(rng, 32);
  DescriptorLabels l = birads::testing::random_labels(rng);
  const auto y = encode_labels(l, BiradsCategory::c4c, TumorClass::malignant);
  AugmentConfig config;
  config.seed = 77;
  for (std::uint64_t key = 0; key < 50; ++key) {
    const auto [a, ya] = augment(img, y, config, key);
    const auto [b, yb] = augment(img, y, config, key);
    CHECK(a.data == b.data);
    CHECK(ya.shape == y.shape);
    CHECK(ya.orientation == y.orientation);
    CHECK(ya.margin == y.margin);
    CHECK(ya.echo == y.echo);
    CHECK(ya.posterior == y.posterior);
    CHECK(ya.subtypes == y.subtypes);
    CHECK(ya.likelihood == y.likelihood);
    CHECK(ya.tumor == y.tumor);
    CHECK(a.channels() == 3);
  }
  const auto [first, y1] = augment(img, y, config, 1);
  const auto [second, y2] = augment(img, y, config, 2);
  CHECK(first.data != second.data);
}

TEST_CASE("invalid configs are rejected") {
  PreprocessConfig p;
  p.target_size = 0;
  CHECK_THROWS_AS(p.validate(), PreprocessError);
  p = {};
  p.smoothing_sigma = 0.0;
  CHECK_THROWS_AS(p.validate(), PreprocessError);
  AugmentConfig a;
  a.zoom_range = -0.1;
  CHECK_THROWS_AS(a.validate(), PreprocessError);
}

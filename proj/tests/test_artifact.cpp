#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "mammogan/artifact.hpp"
#include "mammogan/errors.hpp"

using namespace mammogan;

namespace {

Image random_image(std::size_t h, std::size_t w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  Image img(h, w);
  for (auto& p : img.pixels) p = u(rng);
  return img;
}

// Bins within one of {0, n/4, n/2, 3n/4}, checked against the wrapped
// candidates t - n, t, t + n.
bool oracle_near(long k, long n) {
  for (double t : {0.0, n / 4.0, n / 2.0, 3.0 * n / 4.0})
    for (long m : {-1L, 0L, 1L})
      if (std::abs(k - (t + m * n)) <= 1.0 + 1e-12) return true;
  return false;
}

// O(N^4) DFT reference.
double oracle_grid_score(const Image& img) {
  const long h = img.height, w = img.width;
  double total = 0, band = 0;
  for (long ky = 0; ky < h; ++ky)
    for (long kx = 0; kx < w; ++kx) {
      if (ky == 0 && kx == 0) continue;
      double re = 0, im = 0;
      for (long y = 0; y < h; ++y)
        for (long x = 0; x < w; ++x) {
          const double a = -2 * std::numbers::pi * (double(ky * y) / h + double(kx * x) / w);
          re += img.at(y, x) * std::cos(a);
          im += img.at(y, x) * std::sin(a);
        }
      const double p = re * re + im * im;
      total += p;
      const bool dc = oracle_near(ky, h) && (ky <= 1 || ky >= h - 1) && (kx <= 1 || kx >= w - 1);
      if (!dc && oracle_near(ky, h) && oracle_near(kx, w)) band += p;
    }
  return total == 0 ? 0 : band / total;
}

Image checkerboard(std::size_t h, std::size_t w, std::size_t period = 2) {
  Image img(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) img.at(y, x) = ((y / (period / 2) + x / (period / 2)) % 2) ? 1.0f : -1.0f;
  return img;
}

Image transpose(const Image& img) {
  Image t(img.width, img.height);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) t.at(x, y) = img.at(y, x);
  return t;
}

}  // namespace

TEST_CASE("grid_score matches a direct DFT") {
  for (auto [h, w, seed] : {std::tuple{16, 16, 1}, {12, 20, 2}, {9, 10, 3}, {11, 13, 4}}) {
    const auto img = random_image(h, w, seed);
    CAPTURE(h);
    CAPTURE(w);
    CHECK(grid_score(img) == doctest::Approx(oracle_grid_score(img)).epsilon(1e-9));
  }
  const auto board = checkerboard(16, 16, 4);
  CHECK(grid_score(board) == doctest::Approx(oracle_grid_score(board)).epsilon(1e-9));
}

TEST_CASE("grid_score examples") {
  CHECK(grid_score(checkerboard(16, 16)) > 0.9);
  CHECK(grid_score(checkerboard(64, 48)) > 0.9);
  CHECK(grid_score(checkerboard(32, 32, 4)) > 0.9);
  CHECK(grid_score(Image(16, 16, 0.3f)) == 0.0);
  CHECK(grid_score(Image(8, 8)) == 0.0);
  CHECK_THROWS_AS(grid_score(Image(7, 64)), ShapeError);
  CHECK_THROWS_AS(grid_score(Image(64, 4)), ShapeError);

  // A smooth ramp keeps its energy near DC.
  Image ramp(64, 64);
  for (std::size_t y = 0; y < 64; ++y)
    for (std::size_t x = 0; x < 64; ++x) ramp.at(y, x) = std::sin(2 * std::numbers::pi * (x + 2.0 * y) / 64.0);
  CHECK(grid_score(ramp) < 1e-6);
}

TEST_CASE("grid_score is invariant to affine intensity maps and transposition") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto img = random_image(24, 40, seed);
    const double s = grid_score(img);
    CHECK(s >= 0.0);
    CHECK(s <= 1.0);
    for (auto [a, b] : {std::pair{2.5f, 0.3f}, {-0.7f, -0.2f}, {4.0f, -1.0f}}) {
      // Maps are chosen so float rounding of the input stays far below the tolerance.
      Image m = img;
      for (auto& p : m.pixels) p = a * p + b;
      CHECK(std::abs(grid_score(m) - s) < 1e-6);
    }
    CHECK(std::abs(grid_score(transpose(img)) - s) < 1e-9);
  }
}

TEST_CASE("phantoms score low, checkerboard overlays score high") {
  PhantomSpec spec;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto p = generate_phantom(spec, seed % 2 ? ImageClass::cancer : ImageClass::healthy, seed);
    CHECK(grid_score(p.image) < 0.2);
    Image overlaid = p.image;
    const auto board = checkerboard(64, 64);
    for (std::size_t i = 0; i < overlaid.size(); ++i) overlaid.pixels[i] += 0.05f * board.pixels[i];
    const auto d = diff_map(p.image, overlaid);
    CHECK(d.grid_score > 0.99);
    CHECK(d.max_abs == doctest::Approx(0.05).epsilon(1e-5));
    CHECK(grid_score(overlaid) > grid_score(p.image));
  }
}

TEST_CASE("diff_map") {
  const auto img = random_image(16, 16, 9);
  const auto same = diff_map(img, img);
  CHECK(same.mean_abs == 0.0);
  CHECK(same.max_abs == 0.0);
  CHECK(same.grid_score == 0.0);
  CHECK(same.diff == Image(16, 16));
  CHECK_THROWS_AS(diff_map(img, Image(16, 17)), ShapeError);
  const auto j = to_json(same);
  CHECK(j.contains("grid_score"));
  CHECK(j.contains("mean_abs"));
}

TEST_CASE("artifact report bands") {
  const auto r = artifact_report(checkerboard(32, 32));
  CHECK(r.bands.size() == 15);
  double sum = 0;
  for (const auto& b : r.bands) {
    if (b.fy == 0.5 && b.fx == 0.5) CHECK(b.fraction == doctest::Approx(1.0));
    sum += b.fraction;
  }
  CHECK(sum == doctest::Approx(1.0));
  CHECK(to_json(r)["bands"].size() == 15);
}

TEST_CASE("transposed-conv generators show more grid energy than resize-conv") {
  PhantomSpec spec;
  std::vector<Image> inputs;
  for (std::uint64_t i = 0; i < 3; ++i)
    inputs.push_back(generate_phantom(spec, i % 2 ? ImageClass::cancer : ImageClass::healthy, 100 + i).image);
  std::vector<std::uint64_t> seeds;
  for (std::uint64_t s = 0; s < 20; ++s) seeds.push_back(s);
  const auto c = compare_upsamplers(nn::GeneratorSpec{}, inputs, seeds);
  CHECK(c.transposed.size() == 20);
  CHECK(c.resize.size() == 20);
  MESSAGE("median grid_score transposed " << c.median_transposed << " resize " << c.median_resize);
  CHECK(c.median_transposed > c.median_resize);
}

TEST_CASE("artifact curve") {
  TrainConfig cfg;
  cfg.height = cfg.width = 32;
  CycleGan a(cfg);
  cfg.generator.seed = 99;
  CycleGan b(cfg);
  PhantomSpec spec;
  spec.height = spec.width = 32;
  std::vector<EvalImage> images;
  for (std::uint64_t i = 0; i < 4; ++i) {
    const auto cls = i % 2 ? ImageClass::cancer : ImageClass::healthy;
    images.push_back({"e" + std::to_string(i), generate_phantom(spec, cls, i).image, cls});
  }
  const auto rows = artifact_curve({&a, &b}, images);
  REQUIRE(rows.size() == 2);
  for (const auto& r : rows) {
    CHECK(r.images == 4);
    CHECK(r.median_grid_score >= 0.0);
    CHECK(r.median_grid_score <= 1.0);
  }
  CHECK(curve_csv(rows).rfind("step,median_grid_score,median_diff_grid_score,images\n", 0) == 0);
  CHECK(to_json(rows).size() == 2);
  CHECK_THROWS_AS(artifact_curve({&a}, images), DataError);
  CHECK_THROWS_AS(artifact_curve({&a, &b}, {}), DataError);
}

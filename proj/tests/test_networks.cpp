#include <doctest.h>

#include <random>

#include "grad_suite.hpp"
#include "gradcheck.hpp"
#include "mammogan/networks.hpp"

using namespace mammogan;
using namespace mammogan::nn;
using ad::Graph;
using ad::Tensor;

namespace {

template <typename T>
Tensor<T> random_image(std::size_t h, std::size_t w, unsigned seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<T> v(h * w);
  for (auto& x : v) x = static_cast<T>(u(rng));
  return Tensor<T>({1, 1, h, w}, std::move(v));
}

}  // namespace

TEST_CASE("default generator preserves resolution with tanh range") {
  auto g = build_generator<float>(GeneratorSpec{}, 64, 64);
  auto y = g.forward(random_image<float>(64, 64, 1));
  CHECK(y.shape() == ad::Shape{1, 1, 64, 64});
  for (float v : y.values()) {
    CHECK(v > -1.0f);
    CHECK(v < 1.0f);
  }
  CHECK(g.parameter_count() > 0);
}

TEST_CASE("generator output stays in (-1,1) for extreme finite inputs") {
  auto g = build_generator<double>(GeneratorSpec{}, 16, 16);
  for (double scale : {1.0, 100.0, 1e4}) {
    auto y = g.forward(random_image<double>(16, 16, 3, -scale, scale));
    for (double v : y.values()) {
      CHECK(std::isfinite(v));
      CHECK(std::abs(v) < 1.0);
    }
  }
}

TEST_CASE("default discriminator emits an 8x8 patch map at 64x64") {
  auto d = build_discriminator<float>(DiscriminatorSpec{}, 64, 64);
  auto y = d.forward(random_image<float>(64, 64, 2));
  CHECK(y.shape() == ad::Shape{1, 1, 8, 8});
  CHECK(d.output_shape({1, 1, 64, 64}) == ad::Shape{1, 1, 8, 8});
  CHECK(d.output_shape({1, 1, 104, 128}) == ad::Shape{1, 1, 13, 16});
}

TEST_CASE("closed-form shapes agree with forward shapes") {
  for (auto up : {Upsampler::transposed, Upsampler::resize}) {
    GeneratorSpec gs;
    gs.upsampler = up;
    for (auto [h, w] : {std::pair<std::size_t, std::size_t>{32, 32}, {24, 40}}) {
      auto g = build_generator<float>(gs, h, w);
      CHECK(g.forward(random_image<float>(h, w, 5)).shape() == g.output_shape({1, 1, h, w}));
      auto d = build_discriminator<float>(DiscriminatorSpec{}, h, w);
      CHECK(d.forward(random_image<float>(h, w, 6)).shape() == d.output_shape({1, 1, h, w}));
    }
  }
}

TEST_CASE("same seed gives identical parameters") {
  auto a = build_generator<float>(GeneratorSpec{}, 32, 32);
  auto b = build_generator<float>(GeneratorSpec{}, 32, 32);
  auto pa = a.parameters();
  auto pb = b.parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i]->name() == pb[i]->name());
    CHECK(std::equal(pa[i]->values().begin(), pa[i]->values().end(), pb[i]->values().begin()));
  }
  GeneratorSpec other;
  other.seed = 99;
  auto c = build_generator<float>(other, 32, 32);
  CHECK_FALSE(std::equal(pa[0]->values().begin(), pa[0]->values().end(),
                         c.parameters()[0]->values().begin()));
}

TEST_CASE("resolution must be divisible by the downsampling stride") {
  CHECK_THROWS_AS(build_generator<float>(GeneratorSpec{}, 62, 64), ShapeError);
  CHECK_THROWS_AS(build_discriminator<float>(DiscriminatorSpec{}, 64, 60), ShapeError);
  CHECK_NOTHROW(build_discriminator<float>(DiscriminatorSpec{}, 408, 512));
}

TEST_CASE("invalid layer specs are rejected") {
  LayerSpec bad;
  bad.kernel = 0;
  CHECK_THROWS_AS(validate(bad), ShapeError);
  LayerSpec nochan;
  nochan.channels_out = 0;
  CHECK_THROWS_AS(validate(nochan), ShapeError);
}

TEST_CASE("float and double builds share initial values") {
  auto f = build_discriminator<float>(DiscriminatorSpec{}, 16, 16);
  auto d = build_discriminator<double>(DiscriminatorSpec{}, 16, 16);
  CHECK(f.parameters()[0]->values()[3] == static_cast<float>(d.parameters()[0]->values()[3]));
}

TEST_CASE("default networks pass finite differences (64-bit)") {
  for (unsigned seed = 0; seed < 3; ++seed) {
    CAPTURE(seed);
    grad_suite::networks(seed, [](const std::string& name, const gradcheck::Report& r) {
      CAPTURE(name);
      CHECK_MESSAGE(r.max_rel_error < 1e-4, r.worst);
    });
  }
}
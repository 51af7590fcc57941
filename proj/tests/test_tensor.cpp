#include <doctest.h>

#include <cmath>
#include <random>

#include "grad_suite.hpp"
#include "gradcheck.hpp"
#include "mammogan/adam.hpp"
#include "mammogan/tensor.hpp"

using namespace mammogan;
using namespace mammogan::ad;

namespace {

Parameter<double> random_param(const std::string& name, Shape shape, std::mt19937_64& rng,
                               double lo = -1.0, double hi = 1.0) {
  const auto n = numel(shape);
  return Parameter<double>(name, std::move(shape), gradcheck::random_values(n, rng, lo, hi));
}

}  // namespace

TEST_CASE("forward examples") {
  Tensor<double> eye({2, 2}, {1, 0, 0, 1});
  Tensor<double> a({2, 2}, {1.5, -2, 3, 4});
  auto p = matmul(eye, a);
  CHECK(std::vector<double>(p.values().begin(), p.values().end()) ==
        std::vector<double>{1.5, -2, 3, 4});

  CHECK(reduce_mean(Tensor<double>::full({2, 2}, 3.0)).item() == 3.0);
  CHECK(tanh(Tensor<double>::scalar(0.0)).item() == 0.0);
  CHECK(leaky_relu(Tensor<double>::scalar(-1.0), 0.2).item() == doctest::Approx(-0.2));
  CHECK(sigmoid(Tensor<double>::scalar(0.0)).item() == 0.5);
  CHECK(power(Tensor<double>::scalar(2.0), 3.0).item() == 8.0);
}

TEST_CASE("shape errors name the op and both shapes") {
  Tensor<double> a({2, 3}, std::vector<double>(6, 1.0));
  Tensor<double> b({3, 2}, std::vector<double>(6, 1.0));
  try {
    add(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("add") != std::string::npos);
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[3,2]") != std::string::npos);
  }
  CHECK_THROWS_AS(matmul(a, a), ShapeError);
  CHECK_THROWS_AS(Tensor<double>({2, 2}, {1.0}), ShapeError);
  CHECK_THROWS_AS(slice(a, {0, 0}, {3, 1}), ShapeError);
}

TEST_CASE("broadcast over singleton leading dims") {
  Tensor<double> a({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor<double> b({1, 3}, {10, 20, 30});
  auto c = add(a, b);
  CHECK(c.shape() == Shape{2, 3});
  CHECK(c[4] == 25.0);
  auto d = sub(b, a);
  CHECK(d[0] == 9.0);
  CHECK(d[5] == 24.0);
}

TEST_CASE("backward analytic examples") {
  Parameter<double> x("x", {3}, {1, 2, 3});
  Graph<double> g;
  auto xt = g.leaf(x);
  auto grads = g.backward(reduce_sum(mul(xt, xt)));
  const auto& gx = grads.at(x);
  CHECK(gx[0] == 2.0);
  CHECK(gx[1] == 4.0);
  CHECK(gx[2] == 6.0);
}

TEST_CASE("detached inputs are absent from the gradient map") {
  Parameter<double> w("w", {2}, {0.5, -1});
  Parameter<double> unused("unused", {1}, {1.0});
  Tensor<double> c({2}, {3, 4});
  Graph<double> g;
  auto grads = g.backward(reduce_sum(mul(g.leaf(w), c)));
  CHECK(grads.contains(w));
  CHECK_FALSE(grads.contains(unused));
  CHECK(grads.size() == 1);
  CHECK(grads.at(w)[1] == 4.0);
}

TEST_CASE("backward errors") {
  Parameter<double> x("x", {2}, {1, 2});
  Graph<double> g;
  auto y = square(g.leaf(x));
  CHECK_THROWS_AS(g.backward(y), ShapeError);

  Graph<double> g2;
  auto loss = reduce_sum(square(g2.leaf(x)));
  g2.backward(loss);
  CHECK_THROWS_AS(g2.backward(loss), std::logic_error);
  g2.reset();
  auto loss2 = reduce_sum(square(g2.leaf(x)));
  CHECK_NOTHROW(g2.backward(loss2));

  Graph<double> g3;
  CHECK_THROWS_AS(g3.backward(Tensor<double>::scalar(1.0)), std::logic_error);
}

TEST_CASE("mean(tanh(W x)) matches central differences") {
  std::mt19937_64 rng(7);
  auto W = random_param("W", {4, 3}, rng);
  auto x = random_param("x", {3, 2}, rng);
  auto r = gradcheck::check({&W, &x}, [&](Graph<double>& g) {
    return reduce_mean(tanh(matmul(g.leaf(W), g.leaf(x))));
  });
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("every primitive passes finite differences over 20 seeds") {
  for (unsigned seed = 0; seed < 20; ++seed) {
    CAPTURE(seed);
    grad_suite::primitives(seed, [](const std::string& name, const gradcheck::Report& r) {
      CAPTURE(name);
      CHECK_MESSAGE(r.max_rel_error < 1e-4, r.worst);
    });
  }
}

TEST_CASE("backward is linear in the loss") {
  std::mt19937_64 rng(3);
  auto x = random_param("x", {3, 3}, rng);
  auto y = random_param("y", {3, 3}, rng);
  const double alpha = 0.7, beta = -1.3;
  auto l1 = [&](Graph<double>& g) { return reduce_sum(tanh(matmul(g.leaf(x), g.leaf(y)))); };
  auto l2 = [&](Graph<double>& g) { return reduce_mean(square(sub(g.leaf(x), g.leaf(y)))); };
  Graph<double> g1, g2, g3;
  auto d1 = g1.backward(l1(g1));
  auto d2 = g2.backward(l2(g2));
  auto d3 = g3.backward(add(scale(l1(g3), alpha), scale(l2(g3), beta)));
  for (auto* p : {&x, &y}) {
    for (std::size_t i = 0; i < p->size(); ++i) {
      CHECK(d3.at(*p)[i] == doctest::Approx(alpha * d1.at(*p)[i] + beta * d2.at(*p)[i]).epsilon(1e-10));
      CHECK(std::abs(d3.at(*p)[i] - (alpha * d1.at(*p)[i] + beta * d2.at(*p)[i])) < 1e-10);
    }
  }
}

TEST_CASE("forward is deterministic") {
  std::mt19937_64 r1(11), r2(11);
  auto a1 = random_param("a", {4, 4}, r1);
  auto a2 = random_param("a", {4, 4}, r2);
  auto f = [](const Tensor<double>& t) { return sigmoid(matmul(tanh(t), t)); };
  auto o1 = f(a1.tensor());
  auto o2 = f(a2.tensor());
  for (std::size_t i = 0; i < o1.size(); ++i) CHECK(o1[i] == o2[i]);
}

TEST_CASE("adam") {
  SUBCASE("zero gradient on fresh state leaves params unchanged") {
    Parameter<double> p("p", {2}, {0.3, -0.4});
    Adam<double> opt({0.1, 0.5, 0.999, 1e-8}, {&p});
    Gradients<double> g;
    g.insert(&p, Tensor<double>({2}, {0.0, 0.0}));
    opt.step(g);
    CHECK(p.values()[0] == 0.3);
    CHECK(p.values()[1] == -0.4);
    CHECK(opt.state().step == 1);
  }
  SUBCASE("first step moves by lr") {
    Parameter<double> p("p", {}, {1.0});
    Adam<double> opt({0.1, 0.5, 0.999, 1e-8}, {&p});
    Gradients<double> g;
    g.insert(&p, Tensor<double>::scalar(1.0));
    opt.step(g);
    CHECK(p.values()[0] == doctest::Approx(0.9).epsilon(1e-6));
  }
  SUBCASE("ten steps on w^2 match a scalar reference and shrink |w|") {
    Parameter<double> p("w", {}, {1.0});
    Adam<double> opt({0.05, 0.5, 0.999, 1e-8}, {&p});
    // Independent scalar reference.
    double w = 1.0, m = 0.0, v = 0.0;
    double prev = 1.0;
    for (int t = 1; t <= 10; ++t) {
      Graph<double> graph;
      opt.step(graph.backward(square(graph.leaf(p))));
      const double gr = 2.0 * w;
      m = 0.5 * m + 0.5 * gr;
      v = 0.999 * v + 0.001 * gr * gr;
      w -= 0.05 * (m / (1 - std::pow(0.5, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
      CHECK(p.values()[0] == doctest::Approx(w).epsilon(1e-12));
      CHECK(std::abs(p.values()[0]) < prev);
      prev = std::abs(p.values()[0]);
    }
  }
  SUBCASE("non-finite gradient is rejected by name") {
    Parameter<double> p("layer.weight", {1}, {1.0});
    Adam<double> opt({}, {&p});
    Gradients<double> g;
    g.insert(&p, Tensor<double>({1}, {std::nan("")}));
    try {
      opt.step(g);
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("layer.weight") != std::string::npos);
    }
    CHECK(p.values()[0] == 1.0);
  }
}

#include "nnprat/attacks.hpp"

#include <cmath>

#include "doctest.h"
#include "nnprat/errors.hpp"
#include "nnprat/rng.hpp"

using namespace nnprat;

namespace {

Network toy_net(std::uint64_t seed, std::size_t in = 6, std::size_t classes = 3) {
  NetworkSpec s;
  s.kind = "mlp";
  s.input_shape = {in};
  s.hidden = {5};
  s.num_classes = classes;
  s.seed = seed;
  return Network::init(s);
}

// logit_k = w_k * x for scalar x: a 1-input, bias-zero linear "mlp".
Network scalar_logistic(double w0, double w1) {
  NetworkSpec s;
  s.kind = "mlp";
  s.input_shape = {1};
  s.num_classes = 2;
  s.seed = 0;
  Network net = Network::init(s);
  net.parameters()[0].values() = {w0, w1};  // [1 x 2]
  net.parameters()[1].values() = {0.0, 0.0};
  return net;
}

AttackSpec base_spec() {
  AttackSpec s;
  s.epsilon = 0.1;
  s.alpha = 0.02;
  s.steps = 5;
  return s;
}

double linf(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::fabs(a.at(i) - b.at(i)));
  }
  return m;
}

}  // namespace

TEST_SUITE("attack spec") {
  TEST_CASE("bad values are rejected together") {
    AttackSpec s;
    s.alpha = 0.0;
    s.epsilon = 2.0;
    s.init = "gaussian";
    s.direction = "sideways";
    try {
      s.validate();
      FAIL("expected SpecError");
    } catch (const SpecError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("alpha") != std::string::npos);
      CHECK(msg.find("epsilon") != std::string::npos);
      CHECK(msg.find("init") != std::string::npos);
      CHECK(msg.find("direction") != std::string::npos);
    }
    CHECK_NOTHROW(base_spec().validate());

    AttackSpec inverted = base_spec();
    inverted.clamp_lo = 1.0;
    inverted.clamp_hi = 0.0;
    CHECK_THROWS_AS(inverted.validate(), SpecError);
  }
}

TEST_SUITE("pgd") {
  TEST_CASE("zero steps with zero init returns x exactly") {
    Network net = toy_net(1);
    Tensor x({2, 6}, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4});
    AttackSpec s = base_spec();
    s.steps = 0;
    Tensor xa = pgd(net, x, {0, 1}, s);
    CHECK(xa.values() == x.values());
  }

  TEST_CASE("scalar logistic model moves by alpha in the sign direction") {
    // logits (w0 x, w1 x), label 0: loss = log(1 + exp((w1-w0) x)), so
    // dloss/dx has the sign of (w1 - w0).
    Network net = scalar_logistic(-1.0, 2.0);
    Tensor x({1, 1}, {0.5});

    AttackSpec s = base_spec();
    s.epsilon = 0.3;
    s.alpha = 0.1;
    s.steps = 1;
    Tensor xa = pgd(net, x, {0}, s);
    CHECK(xa.value() == doctest::Approx(0.6).epsilon(1e-15));

    s.alpha = 0.5;  // step larger than the box: capped at x + eps
    xa = pgd(net, x, {0}, s);
    CHECK(xa.value() == doctest::Approx(0.8).epsilon(1e-15));

    s.epsilon = 0.6;
    s.alpha = 0.6;  // box reaches past the range: capped at hi
    xa = pgd(net, x, {0}, s);
    CHECK(xa.value() == doctest::Approx(1.0).epsilon(1e-15));

    s.direction = "descent";
    s.epsilon = 0.3;
    s.alpha = 0.1;
    xa = pgd(net, x, {0}, s);
    CHECK(xa.value() == doctest::Approx(0.4).epsilon(1e-15));

    // Flipped label flips the gradient sign.
    s.direction = "ascent";
    xa = pgd(net, x, {1}, s);
    CHECK(xa.value() == doctest::Approx(0.4).epsilon(1e-15));
  }

  TEST_CASE("feasibility holds over random nets and inputs") {
    Rng rng(77);
    for (int trial = 0; trial < 100; ++trial) {
      Network net = toy_net(rng.next_u64());
      Tensor x({3, 6});
      for (auto& v : x.values()) v = rng.uniform();
      std::vector<int> y = {static_cast<int>(rng.below(3)), static_cast<int>(rng.below(3)),
                            static_cast<int>(rng.below(3))};
      AttackSpec s = base_spec();
      s.epsilon = rng.uniform(0.01, 0.5);
      s.alpha = rng.uniform(0.005, 0.8);  // often overshoots: projection must catch it
      s.steps = rng.below(4);
      s.init = trial % 2 ? "uniform-random" : "zero";
      s.seed = rng.next_u64();
      Tensor xa = pgd(net, x, y, s);
      CHECK(linf(xa, x) <= s.epsilon + 1e-12);
      for (double v : xa.values()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
      }
    }
  }

  TEST_CASE("huge alpha never escapes the box") {
    Network net = toy_net(5);
    Tensor x({1, 6}, {0.5, 0.5, 0.5, 0.5, 0.5, 0.5});
    AttackSpec s = base_spec();
    s.alpha = 1.0;
    s.epsilon = 0.05;
    s.steps = 7;
    Tensor xa = pgd(net, x, {2}, s);
    CHECK(linf(xa, x) <= 0.05 + 1e-12);
  }

  TEST_CASE("parameters are untouched and receive no gradients") {
    Network net = toy_net(9);
    std::vector<std::vector<double>> before;
    for (const auto& p : net.parameters()) before.push_back(p.values());

    Tensor x({2, 6}, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4});
    pgd(net, x, {0, 1}, base_spec());

    for (std::size_t i = 0; i < before.size(); ++i) {
      CHECK(net.parameters()[i].values() == before[i]);
      CHECK_FALSE(net.parameters()[i].has_grad());
    }
  }

  TEST_CASE("random init is deterministic per seed") {
    Network net = toy_net(3);
    Tensor x({2, 6}, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4});
    AttackSpec s = base_spec();
    s.init = "uniform-random";
    s.seed = 31337;
    Tensor a = pgd(net, x, {0, 1}, s);
    Tensor b = pgd(net, x, {0, 1}, s);
    CHECK(a.values() == b.values());
    s.seed = 31338;
    Tensor c = pgd(net, x, {0, 1}, s);
    CHECK(a.values() != c.values());
  }

  TEST_CASE("inputs outside the clamp range are rejected") {
    Network net = toy_net(1);
    Tensor x({1, 6}, {0.1, 0.2, 0.3, 0.4, 0.5, 1.5});
    CHECK_THROWS_AS(pgd(net, x, {0}, base_spec()), ContractError);
  }

  TEST_CASE("epsilon zero collapses onto the original point") {
    Network net = toy_net(2);
    Tensor x({1, 6}, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6});
    AttackSpec s = base_spec();
    s.epsilon = 0.0;
    Tensor xa = pgd(net, x, {1}, s);
    CHECK(xa.values() == x.values());
  }
}

TEST_SUITE("fgsm") {
  TEST_CASE("equals single-step pgd bitwise") {
    Network net = toy_net(13);
    Tensor x({2, 6}, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4});
    std::vector<int> y = {0, 2};
    Tensor a = fgsm(net, x, y, 0.07);
    AttackSpec s;
    s.epsilon = 0.07;
    s.alpha = 0.07;
    s.steps = 1;
    s.init = "zero";
    s.direction = "ascent";
    Tensor b = pgd(net, x, y, s);
    CHECK(a.values() == b.values());
  }

  TEST_CASE("epsilon zero leaves x unchanged") {
    Network net = toy_net(13);
    Tensor x({1, 6}, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6});
    Tensor a = fgsm(net, x, {1}, 0.0);
    CHECK(a.values() == x.values());
  }

  TEST_CASE("scalar model: x plus epsilon times the gradient sign") {
    Network net = scalar_logistic(2.0, -3.0);  // w1 - w0 < 0: label 0 pushes x down
    Tensor x({1, 1}, {0.5});
    CHECK(fgsm(net, x, {0}, 0.25).value() == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(fgsm(net, x, {1}, 0.25).value() == doctest::Approx(0.75).epsilon(1e-15));
  }
}

#include "nnprat/models.hpp"

#include <cstdio>
#include <fstream>

#include "doctest.h"
#include "nnprat/errors.hpp"
#include "nnprat/rng.hpp"
#include "oracles.hpp"

using namespace nnprat;

namespace {

NetworkSpec mlp_spec(Shape in, std::vector<std::size_t> hidden, std::size_t classes,
                     std::uint64_t seed) {
  NetworkSpec s;
  s.kind = "mlp";
  s.input_shape = std::move(in);
  s.hidden = std::move(hidden);
  s.num_classes = classes;
  s.seed = seed;
  return s;
}

NetworkSpec cnn_spec(std::size_t classes, std::uint64_t seed) {
  NetworkSpec s;
  s.kind = "cnn-small";
  s.input_shape = {1, 28, 28};
  s.num_classes = classes;
  s.seed = seed;
  return s;
}

Tensor random_batch(std::size_t n, std::size_t d, Rng& rng) {
  Tensor t({n, d});
  for (auto& v : t.values()) v = rng.uniform();
  return t;
}

}  // namespace

TEST_SUITE("network spec") {
  TEST_CASE("valid specs pass") {
    CHECK_NOTHROW(mlp_spec({8}, {4}, 2, 0).validate());
    CHECK_NOTHROW(mlp_spec({784}, {}, 10, 1).validate());
    CHECK_NOTHROW(cnn_spec(10, 2).validate());
  }

  TEST_CASE("violations are rejected with every issue named") {
    NetworkSpec s = mlp_spec({8}, {0}, 1, 0);
    s.kind = "resnet";
    try {
      s.validate();
      FAIL("expected SpecError");
    } catch (const SpecError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("kind") != std::string::npos);
      CHECK(msg.find("num_classes") != std::string::npos);
    }

    try {
      mlp_spec({8}, {4, 0, 4}, 1, 0).validate();
      FAIL("expected SpecError");
    } catch (const SpecError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("hidden widths") != std::string::npos);
      CHECK(msg.find("num_classes") != std::string::npos);
    }
  }

  TEST_CASE("cnn input must fit the conv plan") {
    NetworkSpec s = cnn_spec(10, 0);
    s.input_shape = {1, 9, 9};  // second conv/pool collapses to nothing
    CHECK_THROWS_AS(s.validate(), SpecError);
    s.input_shape = {1, 12, 12};
    CHECK_NOTHROW(s.validate());
    s.input_shape = {1, 28, 28};
    s.hidden = {64};
    CHECK_THROWS_AS(s.validate(), SpecError);
  }
}

TEST_SUITE("network init") {
  TEST_CASE("same spec and seed give bitwise-identical parameters") {
    Network a = Network::init(mlp_spec({16}, {8, 8}, 3, 99));
    Network b = Network::init(mlp_spec({16}, {8, 8}, 3, 99));
    REQUIRE(a.parameters().size() == b.parameters().size());
    for (std::size_t i = 0; i < a.parameters().size(); ++i) {
      CHECK(a.parameters()[i].values() == b.parameters()[i].values());
    }
    Network c = Network::init(mlp_spec({16}, {8, 8}, 3, 100));
    CHECK(a.parameters()[0].values() != c.parameters()[0].values());
  }

  TEST_CASE("mlp 784-128-10 has 101770 parameters") {
    Network net = Network::init(mlp_spec({784}, {128}, 10, 0));
    CHECK(net.parameter_count() == 101770);
  }

  TEST_CASE("biases start at zero, weights do not") {
    Network net = Network::init(mlp_spec({8}, {4}, 2, 7));
    const auto& p = net.parameters();
    REQUIRE(p.size() == 4);
    for (double v : p[1].values()) CHECK(v == 0.0);
    for (double v : p[3].values()) CHECK(v == 0.0);
    double norm = 0.0;
    for (double v : p[0].values()) norm += v * v;
    CHECK(norm > 0.0);
  }
}

TEST_SUITE("network forward") {
  TEST_CASE("cnn-small on 1x28x28 produces the contracted shapes") {
    Network net = Network::init(cnn_spec(10, 3));
    Rng rng(1);
    Tensor x = random_batch(4, 784, rng);
    ForwardResult r = net.forward(x);
    CHECK(r.logits.shape() == Shape{4, 10});
    CHECK(r.penultimate.shape() == Shape{4, 64});
    CHECK(r.logits.all_finite());

    // Same batch as an explicit image tensor gives identical outputs.
    Tensor img = reshape(x, {4, 1, 28, 28});
    ForwardResult r2 = net.forward(img);
    CHECK(r.logits.values() == r2.logits.values());

    CHECK_THROWS_AS(net.forward(Tensor({4, 100})), ShapeError);
  }

  TEST_CASE("logits equal penultimate times transposed last weights plus bias") {
    for (int variant = 0; variant < 2; ++variant) {
      Network net = variant == 0 ? Network::init(mlp_spec({12}, {7, 5}, 4, 11))
                                 : Network::init(cnn_spec(6, 11));
      Rng rng(5);
      Tensor x = random_batch(3, net.spec().input_size(), rng);
      ForwardResult r = net.forward(x);

      Tensor wr = net.last_layer_weights();  // [C x m]
      const std::size_t c = wr.dim(0), m = wr.dim(1);
      CHECK(c == net.spec().num_classes);
      CHECK(m == net.spec().penultimate_size());

      // penultimate [n x m] times wr^T [m x C] via the naive oracle.
      std::vector<double> wr_t(m * c);
      for (std::size_t i = 0; i < c; ++i) {
        for (std::size_t j = 0; j < m; ++j) wr_t[j * c + i] = wr.at(i * m + j);
      }
      auto ref = oracle::naive_matmul(r.penultimate.values(), wr_t, 3, m, c);
      Tensor bias = net.last_layer_bias();
      for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
          CHECK(r.logits.at(i, j) ==
                doctest::Approx(ref[i * c + j] + bias.at(j)).epsilon(1e-12));
        }
      }
    }
  }

  TEST_CASE("a single-linear mlp is exactly matmul plus bias") {
    Network net = Network::init(mlp_spec({5}, {}, 3, 2));
    Rng rng(9);
    Tensor x = random_batch(2, 5, rng);
    ForwardResult r = net.forward(x);
    CHECK(r.penultimate.values() == x.values());

    Tensor expect = add_bias_row(matmul(x, net.parameters()[0]), net.parameters()[1]);
    CHECK(r.logits.values() == expect.values());
  }

  TEST_CASE("zero final weights make logits equal the bias") {
    Network net = Network::init(mlp_spec({6}, {4}, 3, 1));
    auto& p = net.parameters();
    for (auto& v : p[2].values()) v = 0.0;
    p[3].values() = {0.5, -1.0, 2.0};
    Rng rng(4);
    ForwardResult r = net.forward(random_batch(3, 6, rng));
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(r.logits.at(i, 0) == 0.5);
      CHECK(r.logits.at(i, 1) == -1.0);
      CHECK(r.logits.at(i, 2) == 2.0);
    }
  }

  TEST_CASE("gradients wrt parameters and input pass finite differences") {
    Network net = Network::init(mlp_spec({8}, {5}, 2, 21));
    Rng rng(2);
    Tensor x = random_batch(4, 8, rng);
    std::vector<int> y = {0, 1, 1, 0};

    x.set_requires_grad(true);
    {
      GradTape tape;
      tape.backward(cross_entropy(net.forward(x).logits, y));
    }

    auto loss_value = [&] { return cross_entropy(net.forward(x).logits, y).value(); };
    std::vector<Tensor> leaves = net.parameters();
    leaves.push_back(x);
    for (auto& leaf : leaves) {
      auto numeric = oracle::fd_grad(
          [&](const std::vector<double>& v) {
            auto saved = leaf.values();
            leaf.values() = v;
            double out = loss_value();
            leaf.values() = saved;
            return out;
          },
          leaf.values());
      REQUIRE(leaf.has_grad());
      CHECK(oracle::max_rel_err(leaf.grad(), numeric) < 1e-4);
    }
  }
}

TEST_SUITE("network copies") {
  TEST_CASE("clone has independent buffers") {
    Network a = Network::init(mlp_spec({4}, {3}, 2, 5));
    Network b = a.clone();
    b.parameters()[0].mut(0) = 1234.0;
    CHECK(a.parameters()[0].at(0) != 1234.0);
  }

  TEST_CASE("frozen view shares values but never accumulates parameter gradients") {
    Network a = Network::init(mlp_spec({4}, {3}, 2, 6));
    Network f = a.frozen_view();
    f.parameters()[0].mut(0) = 42.0;
    CHECK(a.parameters()[0].at(0) == 42.0);  // same storage

    Rng rng(3);
    Tensor x = random_batch(2, 4, rng);
    x.set_requires_grad(true);
    GradTape tape;
    tape.backward(cross_entropy(f.forward(x).logits, {0, 1}));
    CHECK(x.has_grad());
    for (const auto& p : a.parameters()) CHECK_FALSE(p.has_grad());
  }
}

TEST_SUITE("checkpoints") {
  TEST_CASE("round-trip is bit-exact") {
    const std::string path = "ckpt_roundtrip.bin";
    for (int variant = 0; variant < 2; ++variant) {
      Network a = variant == 0 ? Network::init(mlp_spec({12}, {7}, 3, 17))
                               : Network::init(cnn_spec(4, 17));
      a.save(path);
      Network b = Network::load(path);
      CHECK(b.spec().kind == a.spec().kind);
      CHECK(b.spec().input_shape == a.spec().input_shape);
      CHECK(b.spec().hidden == a.spec().hidden);
      CHECK(b.spec().num_classes == a.spec().num_classes);
      REQUIRE(b.parameters().size() == a.parameters().size());
      for (std::size_t i = 0; i < a.parameters().size(); ++i) {
        CHECK(b.parameters()[i].values() == a.parameters()[i].values());
      }
    }
    std::remove(path.c_str());
  }

  TEST_CASE("corrupt files are rejected") {
    const std::string path = "ckpt_corrupt.bin";
    CHECK_THROWS_AS(Network::load("does_not_exist.bin"), FormatError);

    {
      std::ofstream os(path, std::ios::binary);
      os.write("XXXX", 4);
    }
    CHECK_THROWS_AS(Network::load(path), BadMagicError);

    {
      std::ofstream os(path, std::ios::binary);
      os.write("NNPR", 4);
    }
    CHECK_THROWS_AS(Network::load(path), TruncatedFileError);

    Network a = Network::init(mlp_spec({4}, {}, 2, 0));
    a.save(path);
    // Chop the tail off: parameter data goes missing.
    std::ifstream is(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(is)), {});
    is.close();
    {
      std::ofstream os(path, std::ios::binary);
      os.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 9));
    }
    CHECK_THROWS_AS(Network::load(path), TruncatedFileError);
    std::remove(path.c_str());
  }
}

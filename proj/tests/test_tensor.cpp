#include <doctest.h>

#include <cmath>
#include <numeric>

#include "gradcheck.hpp"
#include "nilmprune/errors.hpp"
#include "nilmprune/optimizer.hpp"
#include "nilmprune/rng.hpp"
#include "nilmprune/tensor.hpp"

using namespace nilmprune;

namespace {

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad = false) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

}  // namespace

TEST_CASE("conv1d hand examples") {
  SUBCASE("identity tap") {
    Tensor x({1, 3}, {1, 2, 3});
    Tensor k({1, 1, 3}, {1, 0, 0});
    Tensor b({1}, {0});
    auto y = conv1d(x, k, b);
    CHECK(y.shape() == Shape{1, 1});
    CHECK(values(y) == std::vector<double>{1});
  }
  SUBCASE("stride 2") {
    Tensor x({1, 4}, {1, 1, 1, 1});
    Tensor k({1, 1, 2}, {1, 1});
    Tensor b({1}, {0});
    CHECK(values(conv1d(x, k, b, 2)) == std::vector<double>{2, 2});
  }
  SUBCASE("zero kernel gives the bias everywhere") {
    Rng rng(3);
    auto x = random_tensor({2, 17}, rng);
    Tensor k({3, 2, 4}, 0.0);
    Tensor b({3}, {0.5, -1.0, 2.0});
    auto y = conv1d(x, k, b);
    REQUIRE(y.shape() == Shape{3, 14});
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t t = 0; t < 14; ++t) CHECK(y.at(c * 14 + t) == b.at(c));
  }
}

TEST_CASE("conv1d output length law") {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const auto k = static_cast<std::size_t>(rng.uniform_int(1, 9));
    const auto len = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(k), 60));
    const auto stride = static_cast<std::size_t>(rng.uniform_int(1, 5));
    Tensor x({1, len}, 1.0);
    Tensor ker({2, 1, k}, 1.0);
    Tensor b({2}, 0.0);
    CHECK(conv1d(x, ker, b, stride).dim(1) == (len - k) / stride + 1);
  }
}

TEST_CASE("conv1d shape errors name the axis") {
  Tensor x({2, 10}, 0.0);
  Tensor b({3}, 0.0);
  try {
    (void)conv1d(x, Tensor({3, 4, 3}, 0.0), b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    CHECK(std::string(e.what()).find("channel axis") != std::string::npos);
  }
  try {
    (void)conv1d(Tensor({2, 2}, 0.0), Tensor({3, 2, 3}, 0.0), b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    CHECK(std::string(e.what()).find("length axis") != std::string::npos);
  }
  CHECK_THROWS_AS((void)conv1d(x, Tensor({3, 2, 3}, 0.0), Tensor({2}, 0.0)), DimensionError);
}

TEST_CASE("linear hand examples") {
  Tensor x({2}, {1, 1});
  CHECK(values(linear(x, Tensor({2, 2}, {1, 2, 3, 4}), Tensor({2}, 0.0))) ==
        std::vector<double>{3, 7});
  CHECK(values(linear(Tensor({2}, {5, -2}), Tensor({2, 2}, {1, 0, 0, 1}), Tensor({2}, 0.0))) ==
        std::vector<double>{5, -2});
  CHECK(values(linear(x, Tensor({2, 2}, 0.0), Tensor({2}, {4, 9}))) == std::vector<double>{4, 9});
  CHECK_THROWS_AS((void)linear(Tensor({3}, 0.0), Tensor({2, 2}, 0.0), Tensor({2}, 0.0)),
                  DimensionError);
}

TEST_CASE("activations") {
  CHECK(values(relu(Tensor({3}, {-1, 0, 2}))) == std::vector<double>{0, 0, 2});
  CHECK(sigmoid(Tensor({1}, {0.0})).item() == 0.5);
  CHECK(sigmoid(Tensor({1}, {std::log(3.0)})).item() == doctest::Approx(0.75).epsilon(1e-15));
  // ReLU subgradient at 0 is 0.
  Tensor z({1}, {0.0}, true);
  backward(sum(relu(z)));
  CHECK(z.grad()[0] == 0.0);
}

TEST_CASE("mse_loss") {
  Tensor a({2}, {0, 0});
  Tensor t({2}, {1, 3});
  CHECK(mse_loss(t, t).item() == 0.0);
  CHECK(mse_loss(a, t).item() == 5.0);
  Rng rng(5);
  auto p = random_tensor({7}, rng);
  auto q = random_tensor({7}, rng);
  const double base = mse_loss(p, q).item();
  // residual scaled by k scales the loss by k^2
  std::vector<double> scaled(7);
  for (std::size_t i = 0; i < 7; ++i) scaled[i] = q.at(i) + 3.0 * (p.at(i) - q.at(i));
  CHECK(mse_loss(Tensor({7}, scaled), q).item() == doctest::Approx(9.0 * base).epsilon(1e-12));
  CHECK_THROWS_AS((void)mse_loss(a, Tensor({3}, 0.0)), DimensionError);
}

TEST_CASE("backward simple closed forms") {
  SUBCASE("sum(w*x) has gradient x") {
    Tensor w({3}, {0.3, -1.2, 2.0}, true);
    Tensor x({3}, {4.0, 5.0, -6.0});
    backward(sum(mul(w, x)));
    CHECK(values(Tensor({3}, {w.grad().begin(), w.grad().end()})) == values(x));
  }
  SUBCASE("stationary point") {
    Tensor w({4}, {1, 2, 3, 4}, true);
    Tensor t({4}, {1, 2, 3, 4});
    backward(mse_loss(w, t));
    for (double g : w.grad()) CHECK(g == 0.0);
  }
  SUBCASE("repeated calls accumulate until zeroed") {
    Tensor w({2}, {1.0, 2.0}, true);
    Tensor x({2}, {3.0, 4.0});
    backward(sum(mul(w, x)));
    backward(sum(mul(w, x)));
    CHECK(w.grad()[0] == 6.0);
    w.zero_grad();
    backward(sum(mul(w, x)));
    CHECK(w.grad()[1] == 4.0);
  }
  SUBCASE("non-scalar loss is a contract violation") {
    Tensor w({2}, {1.0, 2.0}, true);
    CHECK_THROWS_AS(backward(relu(w)), ContractViolation);
  }
}

TEST_CASE("finite-difference agreement on random two-layer nets") {
  Rng rng(2024);
  for (int trial = 0; trial < 10; ++trial) {
    const auto c1 = static_cast<std::size_t>(rng.uniform_int(1, 4));
    const auto k = static_cast<std::size_t>(rng.uniform_int(2, 5));
    const auto len = static_cast<std::size_t>(rng.uniform_int(8, 20));
    const std::size_t l_out = len - k + 1;
    const auto f_out = static_cast<std::size_t>(rng.uniform_int(1, 6));
    auto x = random_tensor({2, 1, len}, rng, true);
    auto k1 = random_tensor({c1, 1, k}, rng, true);
    auto b1 = random_tensor({c1}, rng, true);
    auto w2 = random_tensor({f_out, c1 * l_out}, rng, true);
    auto b2 = random_tensor({f_out}, rng, true);
    auto target = random_tensor({2, f_out}, rng);
    auto loss_tensor = [&] {
      auto h = relu(conv1d(x, k1, b1));
      return mse_loss(sigmoid(linear(h.reshape({2, c1 * l_out}), w2, b2)), target);
    };
    backward(loss_tensor());
    auto loss = [&] {
      NoGradGuard g;
      return loss_tensor().item();
    };
    testing::GradCheckResult res;
    for (Tensor* p : {&x, &k1, &b1, &w2, &b2}) {
      std::vector<std::size_t> all(p->numel());
      std::iota(all.begin(), all.end(), std::size_t{0});
      testing::check_coordinates(*p, all, loss, 1e-5, res);
    }
    CHECK(res.max_rel_error < 1e-4);
  }
}

TEST_CASE("forward/backward determinism") {
  auto run = [] {
    Rng rng(77);
    auto x = random_tensor({3, 1, 16}, rng);
    auto k = random_tensor({4, 1, 3}, rng, true);
    auto b = random_tensor({4}, rng, true);
    backward(sum(relu(conv1d(x, k, b))));
    return std::vector<double>(k.grad().begin(), k.grad().end());
  };
  CHECK(run() == run());
}

TEST_CASE("optimizer steps") {
  SUBCASE("SGD") {
    Tensor w({1}, {1.0}, true);
    w.grad()[0] = 2.0;
    Optimizer opt({OptimizerKind::SGD, 0.1}, {w});
    opt.step();
    CHECK(w.at(0) == doctest::Approx(0.8).epsilon(1e-15));
  }
  SUBCASE("zero gradient leaves parameters unchanged") {
    for (auto kind : {OptimizerKind::SGD, OptimizerKind::Adam}) {
      Tensor w({2}, {1.5, -0.5}, true);
      (void)w.grad();
      Optimizer opt({kind, 0.1}, {w});
      opt.step();
      CHECK(w.at(0) == 1.5);
      CHECK(w.at(1) == -0.5);
    }
  }
  SUBCASE("Adam first step moves by about lr against the gradient sign") {
    Tensor w({2}, {0.0, 0.0}, true);
    w.grad()[0] = 3.0;
    w.grad()[1] = -0.02;
    Optimizer opt({OptimizerKind::Adam, 1e-3}, {w});
    opt.step();
    CHECK(w.at(0) == doctest::Approx(-1e-3).epsilon(1e-6));
    CHECK(w.at(1) == doctest::Approx(1e-3).epsilon(1e-5));
  }
  SUBCASE("missing gradients") {
    Tensor w({1}, {1.0}, true);
    Optimizer opt({OptimizerKind::SGD, 0.1}, {w});
    CHECK_THROWS_AS(opt.step(), ContractViolation);
  }
  SUBCASE("learning rate must be positive") {
    Tensor w({1}, {1.0}, true);
    CHECK_THROWS_AS(Optimizer({OptimizerKind::Adam, 0.0}, {w}), ConfigError);
  }
}

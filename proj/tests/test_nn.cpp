#include <doctest.h>

#include <array>
#include <cmath>
#include <numbers>

#include "mmtmlp/error.hpp"
#include "mmtmlp/nn/layers.hpp"
#include "support.hpp"

using namespace mmtmlp;
using nn::Matrix;
using testing::check_gradient;
using testing::random_matrix;

namespace {

double weighted_sum(const Matrix& y, const Matrix& r) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y.data()[i] * r.data()[i];
  return s;
}

}  // namespace

TEST_CASE("matrix construction and helpers") {
  const Matrix m{{1, 2, 3}, {4, 5, 6}};
  CHECK(m.rows() == 2);
  CHECK(m.cols() == 3);
  CHECK(m(1, 2) == 6);
  CHECK(nn::transpose(m) == Matrix{{1, 4}, {2, 5}, {3, 6}});
  CHECK(nn::slice_rows(m, 1, 2) == Matrix{{4, 5, 6}});
  CHECK(nn::hconcat(Matrix{{1}, {2}}, Matrix{{3, 4}, {5, 6}}) == Matrix{{1, 3, 4}, {2, 5, 6}});
  CHECK_THROWS_AS(Matrix(2, 2, std::vector<double>{1, 2, 3}), DimensionError);
  CHECK_THROWS_AS(nn::hconcat(Matrix(1, 1), Matrix(2, 1)), DimensionError);
}

TEST_CASE("linear_forward examples") {
  CHECK(nn::linear_forward(Matrix{{1, 2}}, Matrix{{1, 0}, {0, 1}}, Matrix{{0, 0}}) == Matrix{{1, 2}});
  CHECK(nn::linear_forward(Matrix{{0, 0}}, Matrix{{7, -2}, {0.5, 9}}, Matrix{{3, 4}}) == Matrix{{3, 4}});
  CHECK(nn::linear_forward(Matrix{{1, 1}}, Matrix{{1, 2}, {3, 4}}, Matrix{{0, 0}}) == Matrix{{3, 7}});
  try {
    nn::linear_forward(Matrix(1, 3), Matrix(2, 2), Matrix(1, 2));
    FAIL("expected a dimension error");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("1x3") != std::string::npos);
    CHECK(msg.find("2x2") != std::string::npos);
  }
}

TEST_CASE("layer_norm_forward examples") {
  const Matrix ones{{1, 1, 1}};
  const Matrix zeros{{0, 0, 0}};
  CHECK(nn::max_abs_diff(nn::layer_norm_forward(Matrix{{4, 4, 4}}, ones, zeros, 1e-5), zeros) == 0.0);
  CHECK(nn::max_abs_diff(nn::layer_norm_forward(Matrix{{-1, 1}}, Matrix{{1, 1}}, Matrix{{0, 0}}, 1e-12),
                         Matrix{{-1, 1}}) < 1e-9);
  const Matrix beta{{5, 6, 7}};
  const auto y = nn::layer_norm_forward(Matrix{{1, 2, 3}, {-8, 0, 2}}, Matrix(1, 3, 0.0), beta, 1e-5);
  CHECK(y == Matrix{{5, 6, 7}, {5, 6, 7}});
  CHECK_THROWS_AS(nn::LayerNorm("ln", 0), DimensionError);
}

TEST_CASE("layer norm rows are standardized before the affine map") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t d = 8 + static_cast<std::size_t>(trial % 9);
    const Matrix x = random_matrix(4, d, rng, 10.0);
    const Matrix y = nn::layer_norm_forward(x, Matrix(1, d, 1.0), Matrix(1, d, 0.0), 1e-5);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double mean = 0.0;
      for (double v : y.row(r)) mean += v;
      mean /= static_cast<double>(d);
      double var = 0.0;
      for (double v : y.row(r)) var += (v - mean) * (v - mean);
      var /= static_cast<double>(d);
      CHECK(std::abs(mean) < 1e-10);
      CHECK(std::abs(var - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("activation examples") {
  CHECK(nn::activation_forward(Matrix{{-1, 0, 2}}, nn::Activation::relu) == Matrix{{0, 0, 2}});
  CHECK(nn::gelu(0.0) == 0.0);
  const double c = std::sqrt(2.0 / std::numbers::pi);
  const double oracle = 0.5 * 3.0 * (1.0 + std::tanh(c * (3.0 + 0.044715 * 27.0)));
  CHECK(nn::gelu(3.0) == doctest::Approx(oracle).epsilon(1e-15));
  CHECK(nn::gelu(3.0) == doctest::Approx(2.9964).epsilon(1e-4));
  CHECK(nn::parse_activation("relu") == nn::Activation::relu);
  CHECK_THROWS_AS(nn::parse_activation("tanh"), ConfigError);
}

TEST_CASE("softmax cross entropy examples") {
  const std::array<int, 1> zero{0};
  const std::array<int, 1> two{2};
  CHECK(nn::softmax_cross_entropy(Matrix{{0, 0}}, zero).loss == doctest::Approx(std::log(2.0)));
  const auto big = nn::softmax_cross_entropy(Matrix{{1000, 0}}, zero);
  CHECK(std::isfinite(big.loss));
  CHECK(big.loss < 1e-12);
  CHECK(big.grad_logits.all_finite());
  const double oracle = -std::log(std::exp(3.0) / (std::exp(1.0) + std::exp(2.0) + std::exp(3.0)));
  CHECK(nn::softmax_cross_entropy(Matrix{{1, 2, 3}}, two).loss == doctest::Approx(oracle).epsilon(1e-14));
  CHECK(oracle == doctest::Approx(0.4076).epsilon(1e-4));
  const std::array<int, 1> bad{3};
  CHECK_THROWS_AS(nn::softmax_cross_entropy(Matrix{{1, 2, 3}}, bad), IndexError);
  const std::array<int, 1> negative{-1};
  CHECK_THROWS_AS(nn::softmax_cross_entropy(Matrix{{1, 2, 3}}, negative), IndexError);
}

TEST_CASE("softmax rows sum to one") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const Matrix p = nn::softmax(random_matrix(5, 7, rng, 20.0));
    for (std::size_t r = 0; r < p.rows(); ++r) {
      double s = 0.0;
      for (double v : p.row(r)) s += v;
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("single linear layer gradient of sum(y)") {
  nn::Linear lin("fc", 3, 2);
  std::mt19937_64 rng(1);
  lin.init_uniform(rng);
  const Matrix x{{1, 2, 3}, {4, 5, 6}};
  lin.forward(x);
  lin.backward(Matrix(2, 2, 1.0));
  // dL/dW[o][i] = sum_n x[n][i]; dL/db = N
  CHECK(lin.weight().grad == Matrix{{5, 7, 9}, {5, 7, 9}});
  CHECK(lin.bias().grad == Matrix{{2, 2}});
}

TEST_CASE("zero upstream gradient gives zero gradients") {
  nn::Mlp2 mlp("m", 4, 6, 3, nn::Activation::gelu);
  std::mt19937_64 rng(2);
  mlp.init_uniform(rng);
  mlp.forward(random_matrix(5, 4, rng));
  const Matrix dx = mlp.backward(Matrix(5, 3));
  nn::ParameterList ps;
  mlp.collect(ps);
  for (auto* p : ps) CHECK(nn::max_abs_diff(p->grad, Matrix(p->grad.rows(), p->grad.cols())) == 0.0);
  CHECK(nn::max_abs_diff(dx, Matrix(5, 4)) == 0.0);
}

TEST_CASE("backward before forward is a state error") {
  nn::Linear lin("fc", 2, 2);
  CHECK_THROWS_AS(lin.backward(Matrix(1, 2)), StateError);
  nn::LayerNorm ln("ln", 3);
  CHECK_THROWS_AS(ln.backward(Matrix(1, 3)), StateError);
  nn::ActivationLayer act;
  CHECK_THROWS_AS(act.backward(Matrix(1, 3)), StateError);
}

namespace {

template <typename Fn>
void for_each_draw(Fn&& fn) {
  for (std::uint64_t draw = 0; draw < 100; ++draw) {
    std::mt19937_64 rng(1000 + draw);
    CAPTURE(draw);
    fn(rng);
  }
}

}  // namespace

constexpr double kGradTol = 1e-4;

TEST_CASE("layer gradients match central differences") {
  SUBCASE("linear") {
    for_each_draw([](std::mt19937_64& rng) {
      nn::Linear lin("fc", 4, 3);
      lin.init_uniform(rng);
      for (double& b : lin.bias().value.data()) b = std::normal_distribution<double>(0, 1)(rng);
      Matrix x = random_matrix(3, 4, rng);
      const Matrix r = random_matrix(3, 3, rng);
      auto loss = [&] { return weighted_sum(lin.forward(x), r); };
      loss();
      lin.weight().zero_grad();
      lin.bias().zero_grad();
      const Matrix dx = lin.backward(r);
      CHECK(check_gradient(lin.weight().value, lin.weight().grad, loss) < kGradTol);
      CHECK(check_gradient(lin.bias().value, lin.bias().grad, loss) < kGradTol);
      CHECK(check_gradient(x, dx, loss) < kGradTol);
    });
  }
  SUBCASE("layer norm") {
    for_each_draw([](std::mt19937_64& rng) {
      nn::LayerNorm ln("ln", 6);
      ln.gamma().value = random_matrix(1, 6, rng);
      ln.beta().value = random_matrix(1, 6, rng);
      Matrix x = random_matrix(4, 6, rng);
      const Matrix r = random_matrix(4, 6, rng);
      auto loss = [&] { return weighted_sum(ln.forward(x), r); };
      loss();
      ln.gamma().zero_grad();
      ln.beta().zero_grad();
      const Matrix dx = ln.backward(r);
      CHECK(check_gradient(ln.gamma().value, ln.gamma().grad, loss) < kGradTol);
      CHECK(check_gradient(ln.beta().value, ln.beta().grad, loss) < kGradTol);
      CHECK(check_gradient(x, dx, loss) < 1e-4);
    });
  }
  SUBCASE("activations") {
    for_each_draw([](std::mt19937_64& rng) {
      for (auto kind : {nn::Activation::gelu, nn::Activation::relu}) {
        nn::ActivationLayer act(kind);
        Matrix x = random_matrix(3, 5, rng);
        for (double& v : x.data()) {
          if (std::abs(v) < 1e-3) v = 0.5;  // keep clear of the relu kink
        }
        const Matrix r = random_matrix(3, 5, rng);
        auto loss = [&] { return weighted_sum(act.forward(x), r); };
        loss();
        CHECK(check_gradient(x, act.backward(r), loss) < kGradTol);
      }
    });
  }
  SUBCASE("softmax cross entropy") {
    for_each_draw([](std::mt19937_64& rng) {
      Matrix logits = random_matrix(4, 6, rng, 2.0);
      std::array<int, 4> labels{};
      for (int& l : labels) l = static_cast<int>(rng() % 6);
      auto loss = [&] { return nn::softmax_cross_entropy(logits, labels).loss; };
      CHECK(check_gradient(logits, nn::softmax_cross_entropy(logits, labels).grad_logits, loss) < kGradTol);
    });
  }
  SUBCASE("two-layer mlp") {
    for_each_draw([](std::mt19937_64& rng) {
      nn::Mlp2 mlp("m", 5, 7, 3, nn::Activation::gelu);
      mlp.init_uniform(rng);
      Matrix x = random_matrix(2, 5, rng);
      const Matrix r = random_matrix(2, 3, rng);
      auto loss = [&] { return weighted_sum(mlp.forward(x), r); };
      loss();
      nn::ParameterList ps;
      mlp.collect(ps);
      nn::zero_grads(ps);
      const Matrix dx = mlp.backward(r);
      for (auto* p : ps) CHECK(check_gradient(p->value, p->grad, loss) < kGradTol);
      CHECK(check_gradient(x, dx, loss) < kGradTol);
    });
  }
}

TEST_CASE("adam examples") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    nn::Parameter p("w", 2, 3);
    p.value = Matrix{{1, 2, 3}, {4, 5, 6}};
    const Matrix before = p.value;
    nn::Adam adam({&p});
    for (int i = 0; i < 5; ++i) adam.step();
    CHECK(p.value == before);
    CHECK(adam.step_count() == 5);
  }
  SUBCASE("first step moves by lr * g / (|g| + eps)") {
    nn::Parameter p("w", 1, 3);
    p.grad = Matrix{{0.5, -2.0, 1e-3}};
    const nn::AdamOptions opt{.lr = 0.01};
    nn::Adam adam({&p}, opt);
    adam.step();
    // After bias correction m_hat = g and v_hat = g^2 at t = 1.
    for (std::size_t i = 0; i < 3; ++i) {
      const double g = p.grad.data()[i];
      CHECK(p.value.data()[i] == doctest::Approx(-opt.lr * g / (std::abs(g) + opt.eps)).epsilon(1e-12));
    }
    CHECK(p.grad == Matrix{{0.5, -2.0, 1e-3}});
  }
  SUBCASE("non-trainable parameters are skipped") {
    nn::Parameter p("s", 1, 2, false);
    p.grad = Matrix{{1, 1}};
    nn::Adam adam({&p});
    adam.step();
    CHECK(p.value == Matrix(1, 2));
  }
  SUBCASE("identical runs are bitwise identical") {
    auto run = [] {
      std::mt19937_64 rng(5);
      nn::Mlp2 mlp("m", 3, 4, 2, nn::Activation::gelu);
      mlp.init_uniform(rng);
      nn::ParameterList ps;
      mlp.collect(ps);
      nn::Adam adam(ps);
      const Matrix x = random_matrix(6, 3, rng);
      for (int s = 0; s < 20; ++s) {
        nn::zero_grads(ps);
        mlp.backward(mlp.forward(x));
        adam.step();
      }
      return mlp.forward(x);
    };
    CHECK(run() == run());
  }
}

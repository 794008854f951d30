#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "adaptune/ndgrad.hpp"
#include "test_support.hpp"

namespace adaptune::grad {
namespace {

using adaptune::testing::random_tensor;

TEST(Tensor, RejectsNonFiniteAndBadShapes) {
  EXPECT_THROW(Tensor({2}, {1.0, std::nan("")}), NumericError);
  EXPECT_THROW(Tensor({2}, {1.0, INFINITY}), NumericError);
  EXPECT_THROW(Tensor({3}, {1.0, 2.0}), DimensionError);
  EXPECT_THROW(Tensor({1, 1, 1, 1}, {1.0}), DimensionError);
  EXPECT_THROW(Tensor::zeros({0, 2}), DimensionError);
}

TEST(Matmul, IdentityAndHandExample) {
  Graph g;
  Tensor x = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
  Var id = g.constant(Tensor::matrix({{1, 0}, {0, 1}}));
  EXPECT_EQ(g.value(matmul(id, g.constant(x))), x);

  Var c = matmul(g.constant(Tensor::matrix({{1, 2}, {3, 4}})), g.constant(Tensor::matrix({{0}, {1}})));
  EXPECT_EQ(g.value(c), Tensor::matrix({{2}, {4}}));

  Var z = matmul(g.constant(Tensor::zeros({2, 2})), g.constant(Tensor::matrix({{1, 2, 3}, {4, 5, 6}})));
  EXPECT_EQ(g.value(z), Tensor::zeros({2, 3}));
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  Graph g;
  try {
    matmul(g.constant(Tensor::zeros({2, 3})), g.constant(Tensor::zeros({2, 3})));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("[2x3] x [2x3]"), std::string::npos) << e.what();
  }
}

TEST(Matmul, AssociativeOnRandomChains) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    Graph g;
    Var a = g.constant(random_tensor({8, 8}, rng));
    Var b = g.constant(random_tensor({8, 8}, rng));
    Var c = g.constant(random_tensor({8, 8}, rng));
    const Tensor left = g.value(matmul(matmul(a, b), c));
    const Tensor right = g.value(matmul(a, matmul(b, c)));
    double scale = 0.0;
    for (double v : left.values()) scale = std::max(scale, std::abs(v));
    EXPECT_LE(max_abs_diff(left, right) / scale, 1e-10);
  }
}

TEST(Softmax, Examples) {
  Tensor y = softmax_rows(Tensor::matrix({{0, 0}, {1000, 0}}));
  EXPECT_DOUBLE_EQ(y.at(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(y.at(0, 1), 0.5);
  EXPECT_NEAR(y.at(1, 0), 1.0, 1e-12);
  EXPECT_NEAR(y.at(1, 1), 0.0, 1e-12);

  Tensor z = softmax_rows(Tensor::matrix({{std::log(1.0), std::log(2.0), std::log(3.0)}}));
  EXPECT_NEAR(z[0], 1.0 / 6.0, 1e-15);
  EXPECT_NEAR(z[1], 2.0 / 6.0, 1e-15);
  EXPECT_NEAR(z[2], 3.0 / 6.0, 1e-15);
}

TEST(Softmax, RowsSumToOneOnRandomInputs) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor y = softmax_rows(random_tensor({5, 7}, rng, 30.0));
    for (std::size_t r = 0; r < 5; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 7; ++c) {
        EXPECT_GE(y.at(r, c), 0.0);
        EXPECT_LE(y.at(r, c), 1.0);
        s += y.at(r, c);
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(LayerNorm, Examples) {
  Graph g;
  Var ones = g.constant(Tensor::filled({2}, 1.0));
  Var zeros = g.constant(Tensor::zeros({2}));
  Tensor constant_row = g.value(layer_norm(g.constant(Tensor::matrix({{3, 3}})), ones, zeros));
  EXPECT_EQ(constant_row, Tensor::zeros({1, 2}));

  Tensor y = g.value(layer_norm(g.constant(Tensor::matrix({{1, -1}})), ones, zeros));
  const double expected = 1.0 / std::sqrt(1.0 + 1e-5);
  EXPECT_NEAR(y[0], expected, 1e-15);
  EXPECT_NEAR(y[1], -expected, 1e-15);

  Var beta = g.constant(Tensor::vector({0.25, -2.0}));
  Tensor b = g.value(layer_norm(g.constant(Tensor::matrix({{5, 1}, {-3, 8}})), g.constant(Tensor::zeros({2})), beta));
  EXPECT_EQ(b, Tensor::matrix({{0.25, -2.0}, {0.25, -2.0}}));
}

TEST(Gelu, Examples) {
  EXPECT_EQ(gelu_scalar(0.0), 0.0);
  EXPECT_NEAR(gelu_scalar(10.0), 10.0, 1e-9);
  // 0.5·(1 + tanh(√(2/π)·1.044715))
  const double expected = 0.5 * (1.0 + std::tanh(std::sqrt(2.0 / std::numbers::pi) * 1.044715));
  EXPECT_NEAR(gelu_scalar(1.0), expected, 1e-15);
  EXPECT_NEAR(gelu_scalar(1.0), 0.8412, 1e-4);
}

TEST(CrossEntropy, Examples) {
  Graph g;
  EXPECT_NEAR(g.value(cross_entropy(g.constant(Tensor::zeros({4})), 2))[0], std::log(4.0), 1e-15);
  EXPECT_NEAR(g.value(cross_entropy(g.constant(Tensor::vector({10, -10})), 0))[0], 0.0, 1e-8);
  const double lse = std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0));
  EXPECT_NEAR(g.value(cross_entropy(g.constant(Tensor::vector({1, 2, 3})), 0))[0], lse - 1.0, 1e-14);
  EXPECT_NEAR(lse - 1.0, 2.4076, 1e-4);
  EXPECT_THROW(cross_entropy(g.constant(Tensor::vector({1, 2, 3})), 3), IndexError);
}

TEST(CrossEntropy, GradientIsSoftmaxMinusOneHot) {
  Graph g;
  Var z = g.parameter(Tensor::vector({0.3, -1.2, 2.0}));
  Var loss = cross_entropy(z, 1);
  g.backward(loss);
  Tensor p = softmax_rows(Tensor::matrix({{0.3, -1.2, 2.0}}));
  Tensor dz = g.grad(z);
  EXPECT_NEAR(dz[0], p[0], 1e-15);
  EXPECT_NEAR(dz[1], p[1] - 1.0, 1e-15);
  EXPECT_NEAR(dz[2], p[2], 1e-15);
}

TEST(Backward, SharedNodesAccumulate) {
  Graph g;
  Var x = g.parameter(Tensor::vector({1.5, -2.0}));
  g.backward(sum(add(x, x)));
  EXPECT_EQ(g.grad(x), Tensor::vector({2.0, 2.0}));
}

TEST(Backward, ConstantsReceiveNoGradient) {
  Graph g;
  Var w = g.constant(Tensor::matrix({{1, 2}, {3, 4}}));
  Var x = g.parameter(Tensor::matrix({{1, 1}}));
  Var y = sum(matmul(x, w));
  EXPECT_FALSE(g.requires_grad(w));
  g.backward(y);
  EXPECT_EQ(g.grad(w), Tensor::zeros({2, 2}));
  EXPECT_EQ(g.grad(x), Tensor::matrix({{3, 7}}));
  EXPECT_THROW(g.backward(y), ConfigError);
}

TEST(GradCheck, QuadraticIsExact) {
  std::mt19937_64 rng(1);
  auto f = [](Graph&, std::span<const Var> p) { return sum(mul(p[0], p[0])); };
  EXPECT_LE(grad_check(f, {random_tensor({6}, rng)}).max_rel_error, 1e-7);
}

TEST(GradCheck, ConstantFunctionHasZeroGradients) {
  auto f = [](Graph& g, std::span<const Var> p) {
    return add(scale(sum(p[0]), 0.0), g.constant(Tensor::vector({4.0})));
  };
  GradCheckResult r = grad_check(f, {Tensor::vector({1, 2, 3})});
  EXPECT_EQ(r.max_rel_error, 0.0);
}

// Randomised check of every primitive's backward rule against central differences.
TEST(GradCheck, EveryPrimitiveMatchesFiniteDifferences) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<Tensor> params = {random_tensor({4, 6}, rng),  random_tensor({6, 5}, rng),
                                  random_tensor({6}, rng),     random_tensor({6}, rng),
                                  random_tensor({5}, rng),     random_tensor({4, 6}, rng, 0.3)};
    auto f = [](Graph&, std::span<const Var> p) {
      Var h = layer_norm(add(p[0], p[5]), p[2], p[3]);
      Var att = softmax_rows(matmul(h, transpose(h)));
      Var mixed = add(matmul(att, h), mul(h, h));
      Var cols = concat_cols({slice_cols(mixed, 0, 2), slice_cols(gelu(mixed), 2, 6)});
      Var dir = scale_unit_columns(cols, p[2]);
      Var rows = slice_rows(add_bias(matmul(dir, p[1]), p[4]), 1, 4);
      Var z = matmul(mean_rows(rows), slice_cols(transpose(p[1]), 0, 3));
      return add(cross_entropy(z, 2), scale(sum(mul(rows, rows)), 0.01));
    };
    GradCheckResult r = grad_check(f, params);
    EXPECT_LE(r.max_rel_error, 1e-4) << "param " << r.worst_param << " index " << r.worst_index << " ad "
                                     << r.analytic << " fd " << r.numeric;
  }
}

}  // namespace
}  // namespace adaptune::grad

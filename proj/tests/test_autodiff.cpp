#include <cmath>
#include <functional>
#include <random>

#include <gtest/gtest.h>

#include "strata/autodiff.hpp"
#include "test_util.hpp"

namespace ad = strata::ad;
using strata::Shape;
using strata::Tensor;
using strata::test::random_tensor;

namespace {

// Independent central differences; no code shared with ad::gradient_check.
Tensor numeric_gradient(const std::function<double(const Tensor&)>& f, Tensor x, double h = 1e-6) {
  Tensor g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = x[i];
    x[i] = x0 + h;
    const double fp = f(x);
    x[i] = x0 - h;
    const double fm = f(x);
    x[i] = x0;
    g[i] = (fp - fm) / (2 * h);
  }
  return g;
}

using Builder = std::function<ad::Var(ad::Graph&, const ad::Var&)>;

void expect_gradient_matches(const Builder& build, const Tensor& x, double tol = 1e-6) {
  ad::Graph g;
  ad::Var v = g.parameter(x);
  Tensor analytic = g.backward(build(g, v)).of(v);
  Tensor numeric = numeric_gradient(
      [&](const Tensor& p) {
        ad::Graph h;
        return build(h, h.constant(p)).value().item();
      },
      x);
  ASSERT_EQ(analytic.shape(), numeric.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_NEAR(analytic[i], numeric[i], tol * std::max(1.0, std::abs(numeric[i]))) << "coordinate " << i;
  }
}

}  // namespace

TEST(AutodiffForward, Square) {
  ad::Graph g;
  EXPECT_DOUBLE_EQ(ad::square(g.constant(Tensor::scalar(3))).value().item(), 9.0);
}

TEST(AutodiffForward, SoftplusAtZero) {
  ad::Graph g;
  EXPECT_NEAR(ad::softplus(g.constant(Tensor::scalar(0))).value().item(), 0.693147, 1e-6);
}

TEST(AutodiffForward, SoftplusIsStableForLargeInputs) {
  ad::Graph g;
  EXPECT_DOUBLE_EQ(ad::softplus(g.constant(Tensor::scalar(800))).value().item(), 800.0);
  EXPECT_GE(ad::softplus(g.constant(Tensor::scalar(-800))).value().item(), 0.0);
}

TEST(AutodiffForward, ForwardOpByName) {
  ad::Graph g;
  ad::Var x = g.constant(Tensor::vector({1, 2}));
  ad::Var inputs[] = {x};
  EXPECT_EQ(ad::forward_op("square", inputs).value(), Tensor::vector({1, 4}));
  EXPECT_THROW(ad::forward_op("reshape", inputs), std::invalid_argument);
  EXPECT_THROW(ad::forward_op("add", inputs), std::invalid_argument);
}

TEST(AutodiffForward, MatmulShapeMismatchThrows) {
  ad::Graph g;
  ad::Var a = g.constant(Tensor(Shape{2, 3}));
  ad::Var b = g.constant(Tensor(Shape{2, 3}));
  EXPECT_THROW(ad::matmul(a, b), strata::ShapeError);
  EXPECT_THROW(a + g.constant(Tensor(Shape{2, 4})), strata::ShapeError);
}

TEST(AutodiffBackward, StopGradientTimesX) {
  ad::Graph g;
  ad::Var x = g.parameter(Tensor::scalar(2));
  ad::Var y = ad::stop_gradient(x) * x;
  EXPECT_DOUBLE_EQ(y.value().item(), 4.0);
  EXPECT_DOUBLE_EQ(g.backward(y).of(x).item(), 2.0);
}

TEST(AutodiffBackward, SumOfSquares) {
  ad::Graph g;
  ad::Var x = g.parameter(Tensor::vector({1, 2, 3}));
  EXPECT_EQ(g.backward(ad::sum(x * x)).of(x), Tensor::vector({2, 4, 6}));
}

TEST(AutodiffBackward, SumOfMatmulOfOnes) {
  ad::Graph g;
  ad::Var a = g.parameter(Tensor(Shape{2, 3}, 1.0));
  ad::Var b = g.parameter(Tensor(Shape{3, 2}, 1.0));
  EXPECT_EQ(g.backward(ad::sum(ad::matmul(a, b))).of(a), Tensor(Shape{2, 3}, 2.0));
}

TEST(AutodiffBackward, MseAtTargetHasZeroGradient) {
  ad::Graph g;
  Tensor t = Tensor::matrix({{0.1, 0.2}, {0.3, 0.4}});
  ad::Var y = g.parameter(t);
  EXPECT_EQ(g.backward(ad::mse(y, g.constant(t))).of(y), Tensor(Shape{2, 2}, 0.0));
}

TEST(AutodiffBackward, RootGradientIsOne) {
  ad::Graph g;
  ad::Var x = g.parameter(Tensor::vector({1, 2}));
  ad::Var y = ad::sum(ad::exp(x));
  EXPECT_EQ(g.backward(y).of(y), Tensor::scalar(1.0));
}

TEST(AutodiffBackward, NonScalarRootThrows) {
  ad::Graph g;
  ad::Var x = g.parameter(Tensor::vector({1, 2}));
  EXPECT_THROW(g.backward(x * x), strata::ShapeError);
}

TEST(AutodiffBackward, UnreachableParameterReadsZero) {
  ad::Graph g;
  ad::Var x = g.parameter(Tensor::vector({1, 2}));
  ad::Var unused = g.parameter(Tensor::vector({3}));
  ad::Gradients grads = g.backward(ad::sum(x));
  EXPECT_FALSE(grads.has(unused));
  EXPECT_EQ(grads.of(unused), Tensor::vector({0}));
}

TEST(AutodiffBackward, GradientsAccumulateOverReuse) {
  ad::Graph g;
  ad::Var x = g.parameter(Tensor::scalar(3));
  ad::Var y = x * x + x + x * 2.0;
  EXPECT_DOUBLE_EQ(g.backward(y).of(x).item(), 2 * 3 + 1 + 2);
}

TEST(AutodiffBackward, RetainLeavesKeepsParameterGradients) {
  ad::Graph g;
  ad::Var x = g.parameter(Tensor::vector({1, 2}));
  ad::Var mid = x * x;
  ad::Gradients grads = g.backward(ad::sum(mid), ad::Retain::kLeaves);
  EXPECT_EQ(grads.of(x), Tensor::vector({2, 4}));
  EXPECT_FALSE(grads.has(mid));
}

TEST(AutodiffGraph, InputsPrecedeEveryNode) {
  std::mt19937_64 rng(4);
  ad::Graph g;
  ad::Var x = g.parameter(random_tensor({3, 4}, rng));
  ad::Var w = g.parameter(random_tensor({4, 2}, rng));
  ad::Var y = ad::sum(ad::softplus(ad::matmul(x, w)) * ad::sigmoid(ad::matmul(x, w)));
  (void)y;
  for (ad::NodeId i = 0; i < g.size(); ++i) {
    for (ad::NodeId in : g.inputs(i)) EXPECT_LT(in, i);
  }
}

TEST(AutodiffGraph, FiniteInputsGiveFiniteValues) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    ad::Graph g;
    ad::Var x = g.constant(random_tensor({5, 3}, rng, -50, 50));
    ad::Var y = ad::softplus(x) + ad::sigmoid(x) + ad::sin(x) * ad::cos(x) + ad::relu(x);
    ad::Var z = ad::log(ad::softplus(y) + 1.0) + ad::sqrt(ad::square(x) + 1.0);
    for (double v : z.value().data()) EXPECT_TRUE(std::isfinite(v));
  }
}

// Every primitive against independent central differences.
TEST(AutodiffPrimitives, GradientsMatchCentralDifferences) {
  std::mt19937_64 rng(11);
  const Tensor x = random_tensor({3, 4}, rng);
  const Tensor pos = random_tensor({3, 4}, rng, 0.5, 2.0);
  const Tensor c = random_tensor({3, 4}, rng);
  const Tensor row = random_tensor({4}, rng);
  const Tensor w = random_tensor({4, 5}, rng);
  auto k = [](ad::Graph& g, const Tensor& t) { return g.constant(t); };
  auto dot = [&](ad::Graph& g, const ad::Var& y) { return ad::sum(y * k(g, c)); };

  expect_gradient_matches([&](ad::Graph& g, const ad::Var& v) { return dot(g, v + k(g, row)); }, x);
  expect_gradient_matches([&](ad::Graph& g, const ad::Var& v) { return dot(g, k(g, c) - v); }, x);
  expect_gradient_matches([&](ad::Graph& g, const ad::Var& v) { return dot(g, v * v); }, x);
  expect_gradient_matches([&](ad::Graph& g, const ad::Var& v) { return dot(g, k(g, c) / v); }, pos);
  expect_gradient_matches([&](ad::Graph& g, const ad::Var& v) { return dot(g, -v * 3.0); }, x);
  expect_gradient_matches([&](ad::Graph& g, const ad::Var& v) { return dot(g, ad::relu(v)); }, x);
  expect_gradient_matches([&](ad::Graph& g, const ad::Var& v) { return dot(g, ad::softplus(v)); }, x);
  expect_gradient_matches([&](ad::Graph& g, const ad::Var& v) { return dot(g, ad::sigmoid(v)); }, x);
  expect_gradient_matches([&](ad::Graph& g, const ad::Var& v) { return dot(g, ad::exp(v)); }, x);
  expect_gradient_matches([&](ad::Graph& g, const ad::Var& v) { return dot(g, ad::log(v)); }, pos);
  expect_gradient_matches([&](ad::Graph& g, const ad::Var& v) { return dot(g, ad::sin(v)); }, x);
  expect_gradient_matches([&](ad::Graph& g, const ad::Var& v) { return dot(g, ad::cos(v)); }, x);
  expect_gradient_matches([&](ad::Graph& g, const ad::Var& v) { return dot(g, ad::square(v)); }, x);
  expect_gradient_matches([&](ad::Graph& g, const ad::Var& v) { return dot(g, ad::sqrt(v)); }, pos);
  expect_gradient_matches([&](ad::Graph& g, const ad::Var& v) { return ad::sum(ad::square(ad::matmul(v, k(g, w)))); }, x);
  expect_gradient_matches([&](ad::Graph& g, const ad::Var& v) { return ad::sum(ad::square(ad::matmul(k(g, c), ad::reshape(v, Shape{4, 3})))); }, x);
  expect_gradient_matches([&](ad::Graph&, const ad::Var& v) { return ad::mean(ad::square(v)); }, x);
  expect_gradient_matches([&](ad::Graph&, const ad::Var& v) { return ad::sum(ad::square(ad::sum_axis(v, 0))); }, x);
  expect_gradient_matches([&](ad::Graph&, const ad::Var& v) { return ad::sum(ad::square(ad::sum_axis(v, 1))); }, x);
  expect_gradient_matches([&](ad::Graph& g, const ad::Var& v) {
    return dot(g, ad::broadcast_to(ad::reshape(ad::sum_axis(v, 0), Shape{1, 4}), Shape{3, 4}));
  }, x);
  expect_gradient_matches([&](ad::Graph& g, const ad::Var& v) { return ad::sum(ad::square(ad::concat({v, k(g, c) * v}))); }, x);
  expect_gradient_matches([&](ad::Graph& g, const ad::Var& v) { return ad::sum(ad::square(ad::concat({v, k(g, c)}, 0))); }, x);
  expect_gradient_matches([&](ad::Graph&, const ad::Var& v) {
    return ad::sum(ad::square(ad::gather_rows(v, std::vector<std::size_t>{2, 0, 2, 1})));
  }, x);
  expect_gradient_matches([&](ad::Graph&, const ad::Var& v) { return ad::sum(ad::square(ad::slice_cols(v, 1, 3))); }, x);
  expect_gradient_matches([&](ad::Graph& g, const ad::Var& v) { return ad::sum(ad::affine(v, k(g, w), k(g, Tensor(Shape{5}, 0.3)))); }, x);
}

TEST(GradientCheck, SinIsAccurate) {
  std::mt19937_64 rng(1);
  const double err = ad::gradient_check([](ad::Graph&, const ad::Var& v) { return ad::sum(ad::sin(v)); },
                                        random_tensor({6}, rng), 1e-5);
  EXPECT_LT(err, 1e-6);
}

TEST(GradientCheck, SoftplusOfLinearMap) {
  std::mt19937_64 rng(2);
  const Tensor w = random_tensor({4, 4}, rng);
  const double err = ad::gradient_check(
      [&](ad::Graph& g, const ad::Var& v) { return ad::sum(ad::softplus(ad::matmul(g.constant(w), v))); },
      random_tensor({4, 1}, rng), 1e-5);
  EXPECT_LT(err, 1e-5);
}

TEST(GradientCheck, StopGradientHasZeroAnalyticGradient) {
  ad::Graph g;
  ad::Var x = g.parameter(Tensor::vector({0.3, -1.2, 4.0}));
  EXPECT_EQ(g.backward(ad::sum(ad::stop_gradient(x))).of(x), Tensor(Shape{3}, 0.0));
}

TEST(GradientCheck, DetectsAWrongGradient) {
  // A custom node whose backward is off by a factor of two must be caught.
  auto bad_square = [](const ad::Var& x) {
    Tensor v = x.value();
    for (double& e : v.data()) e *= e;
    return x.graph().record(ad::OpKind::kCustom, std::move(v), {x.id()},
                            [](const ad::Graph& g, ad::NodeId self, const Tensor& grad, std::span<Tensor* const> in) {
                              if (!in[0]) return;
                              const Tensor& xv = g.value(g.inputs(self)[0]);
                              for (std::size_t i = 0; i < xv.size(); ++i) (*in[0])[i] += 4.0 * xv[i] * grad[i];
                            });
  };
  const double err = ad::gradient_check([&](ad::Graph&, const ad::Var& v) { return ad::sum(bad_square(v)); },
                                        Tensor::vector({1.0, 2.0}));
  // |4x - 2x| / |4x| = 1/2 at every coordinate.
  EXPECT_NEAR(err, 0.5, 1e-6);
}

TEST(GradientCheck, RejectsNonPositiveStep) {
  EXPECT_THROW(ad::gradient_check([](ad::Graph&, const ad::Var& v) { return ad::sum(v); }, Tensor::vector({1}), 0.0),
               std::invalid_argument);
}

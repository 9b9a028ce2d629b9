#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "adanode/autodiff.hpp"
#include "adanode/errors.hpp"
#include "adanode/parameters.hpp"

namespace adanode {
namespace {

constexpr double kTol = 1e-12;

TEST(Affine, Examples) {
  Graph g;
  auto x = g.constant(Tensor::vector({1, 2}));
  EXPECT_EQ(affine(x, g.constant(Tensor::identity(2)), g.constant(Tensor::vector({0, 0}))).value().values(),
            (std::vector<double>{1, 2}));
  EXPECT_EQ(affine(x, g.constant(Tensor::matrix({{1, 1}, {1, 1}})), g.constant(Tensor::vector({1, 1})))
                .value()
                .values(),
            (std::vector<double>{4, 4}));
  auto zero = g.constant(Tensor::vector({0, 0}));
  EXPECT_EQ(affine(zero, g.constant(Tensor::matrix({{7, -2}, {0.5, 9}})), g.constant(Tensor::vector({3, -1})))
                .value()
                .values(),
            (std::vector<double>{3, -1}));
}

TEST(Affine, BatchedRowsAndShapeErrors) {
  Graph g;
  auto x = g.constant(Tensor::matrix({{1, 0}, {0, 1}, {1, 1}}));
  auto W = g.constant(Tensor::matrix({{2, 3}}));
  auto y = affine(x, W, g.constant(Tensor::vector({1})));
  EXPECT_EQ(y.shape(), (Tensor::Shape{3, 1}));
  EXPECT_EQ(y.value().values(), (std::vector<double>{3, 4, 6}));
  EXPECT_THROW(affine(x, g.constant(Tensor::matrix({{1, 2, 3}})), g.constant(Tensor::vector({0}))), DimensionError);
}

TEST(Activations, Examples) {
  Graph g;
  EXPECT_EQ(tanh(g.constant(0.0)).value().item(), 0.0);
  EXPECT_EQ(relu(g.constant(-2.5)).value().item(), 0.0);
  EXPECT_NEAR(softplus(g.constant(0.0)).value().item(), std::log(2.0), kTol);
  EXPECT_NEAR(softplus(g.constant(-800.0)).value().item(), 0.0, 1e-300);
  EXPECT_NEAR(softplus(g.constant(800.0)).value().item(), 800.0, kTol);
  EXPECT_THROW(parse_activation("sigmoid"), ConfigError);
  EXPECT_EQ(parse_activation("relu"), Activation::relu);
}

TEST(GaussianNll, ClosedForms) {
  Graph g;
  const double c = 0.5 * std::log(2 * M_PI);
  auto nll = [&](double x, double mu, double s) {
    return gaussian_nll(g.constant(x), g.constant(mu), g.constant(s)).value().item();
  };
  EXPECT_NEAR(-nll(0.3, 0.3, 1.0), -c, kTol);
  EXPECT_NEAR(-nll(0.0, 1.0, 1.0), -c - 0.5, kTol);
  EXPECT_NEAR(-nll(2.0, 2.0, 0.5), -c - std::log(0.5), kTol);
  EXPECT_NEAR(gaussian_log_density(2.0, 2.0, 0.5), -0.225791, 1e-6);
  EXPECT_THROW(gaussian_log_density(0, 0, 0), DomainError);
}

TEST(Backward, PowerRule) {
  Graph g;
  auto x = g.leaf(Tensor::scalar(3.0), true);
  auto y = square(x);
  g.backward(y);
  EXPECT_EQ(g.grad(x).item(), 6.0);
}

TEST(Backward, AffineBiasGradientIsSeed) {
  Graph g;
  auto x = g.leaf(Tensor::matrix({{0.3, -1.2}}), true);
  auto W = g.leaf(Tensor::matrix({{1, 2}, {3, 4}, {5, 6}}), true);
  auto b = g.leaf(Tensor::vector({0, 0, 0}), true);
  auto y = affine(x, W, b);
  auto seed = Tensor::matrix({{0.1, -2, 7}});
  g.backward(y, seed);
  EXPECT_EQ(g.grad(b).values(), seed.values());
  // dx = seed W
  EXPECT_NEAR(g.grad(x)[0], 0.1 * 1 - 2 * 3 + 7 * 5, kTol);
  EXPECT_NEAR(g.grad(x)[1], 0.1 * 2 - 2 * 4 + 7 * 6, kTol);
}

TEST(Backward, SharedNodeAccumulates) {
  Graph g;
  auto x = g.leaf(Tensor::scalar(2.0), true);
  auto y = add(mul(x, x), x);  // x^2 + x
  g.backward(y);
  EXPECT_EQ(g.grad(x).item(), 5.0);
}

TEST(Backward, BroadcastReducesGradient) {
  Graph g;
  auto a = g.leaf(Tensor::matrix({{1, 2}, {3, 4}, {5, 6}}), true);
  auto row = g.leaf(Tensor::vector({10, 20}), true);
  auto s = g.leaf(Tensor::scalar(2.0), true);
  g.backward(sum(mul(add(a, row), s)));
  EXPECT_EQ(g.grad(row).values(), (std::vector<double>{6, 6}));
  EXPECT_EQ(g.grad(s).item(), 21.0 + 90.0);
}

TEST(Backward, BroadcastShapeErrorNamesShapes) {
  Graph g;
  try {
    add(g.constant(Tensor::zeros({2, 3})), g.constant(Tensor::zeros({2, 2})));
    FAIL();
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("[2x3]"), std::string::npos) << e.what();
  }
}

TEST(Backward, NoGradGuardDropsClosures) {
  Graph g;
  auto x = g.leaf(Tensor::scalar(1.5), true);
  Var y;
  {
    NoGradGuard guard(g);
    y = exp(x);
  }
  EXPECT_TRUE(g.grad_enabled());
  EXPECT_FALSE(g.requires_grad(y));
  EXPECT_NEAR(y.value().item(), std::exp(1.5), kTol);
}

TEST(Backward, NonScalarOutputNeedsSeed) {
  Graph g;
  auto x = g.leaf(Tensor::vector({1, 2}), true);
  EXPECT_THROW(g.backward(x), UsageError);
  EXPECT_THROW(g.backward(x, Tensor::vector({1, 2, 3})), DimensionError);
}

TEST(Backward, RewindInvalidatesLaterNodes) {
  Graph g;
  auto x = g.leaf(Tensor::scalar(1.0), true);
  auto m = g.mark();
  auto y = square(x);
  g.rewind(m);
  EXPECT_EQ(g.size(), m);
  EXPECT_THROW(g.backward(y), StateError);
}

TEST(Backward, MixingGraphsIsRejected) {
  Graph a, b;
  EXPECT_THROW(add(a.constant(1.0), b.constant(2.0)), UsageError);
}

TEST(Ops, ConcatSliceReshape) {
  Graph g;
  std::vector<Var> parts{g.constant(Tensor::vector({1, 2})), g.constant(Tensor::matrix({{3, 4}, {5, 6}}))};
  auto c = concat_rows(parts);
  EXPECT_EQ(c.shape(), (Tensor::Shape{3, 2}));
  EXPECT_EQ(slice_cols(c, 1, 2).value().values(), (std::vector<double>{2, 4, 6}));
  EXPECT_EQ(reshape(c, {2, 3}).value().at(1, 0), 4.0);
  EXPECT_EQ(mean_rows(c).value().values(), (std::vector<double>{3, 4}));
  EXPECT_THROW(slice_cols(c, 1, 3), DimensionError);
  std::vector<Var> bad{g.constant(Tensor::vector({1, 2})), g.constant(Tensor::vector({1, 2, 3}))};
  EXPECT_THROW(concat_rows(bad), DimensionError);
}

TEST(Ops, LincombMatchesManualSum) {
  Graph g;
  std::vector<Var> terms{g.constant(Tensor::vector({1, 2})), g.constant(Tensor::vector({10, 20}))};
  std::vector<double> coeffs{0.5, -1};
  EXPECT_EQ(lincomb(terms, coeffs).value().values(), (std::vector<double>{-9.5, -19}));
}

TEST(GradCheck, LinearGraphIsExact) {
  ParameterSet p;
  p.add("w", Tensor::vector({0.3, -1.2, 2.0}));
  auto r = grad_check(
      [](Graph& g, const ParamVars& v) { return sum(mul(v["w"], g.constant(Tensor::vector({1.5, -2, 0.25})))); }, p);
  EXPECT_LE(r.max_relative_error, 1e-10);
}

TEST(GradCheck, TanhMlpWithinTolerance) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n01;
  auto rnd = [&](Tensor::Shape s) {
    std::vector<double> v(shape_size(s));
    for (auto& x : v) x = n01(rng);
    return Tensor(s, v);
  };
  ParameterSet p;
  p.add("x", rnd({4, 3}));
  p.add("W1", rnd({6, 3}));
  p.add("b1", rnd({6}));
  p.add("W2", rnd({2, 6}));
  p.add("b2", rnd({2}));
  auto r = grad_check(
      [](Graph&, const ParamVars& v) {
        return sum(square(affine(tanh(affine(v["x"], v["W1"], v["b1"])), v["W2"], v["b2"])));
      },
      p, 1e-5);
  EXPECT_LT(r.max_relative_error, 1e-4) << r.worst_parameter;
}

TEST(GradCheck, ReluKinkIsFlagged) {
  ParameterSet p;
  p.add("x", Tensor::vector({0.0, 1.0}));
  auto r = grad_check([](Graph&, const ParamVars& v) { return sum(relu(v["x"])); }, p);
  EXPECT_TRUE(r.excluded_kink);
}

TEST(GradCheck, FrozenEntriesAreSkipped) {
  ParameterSet p;
  p.add("a", Tensor::scalar(2.0));
  p.add("b", Tensor::scalar(3.0), true);
  Graph g;
  auto v = p.bind(g);
  g.backward(mul(v["a"], v["b"]));
  auto grads = p.gradients(g, v);
  EXPECT_EQ(grads.size(), 1u);
  EXPECT_EQ(grads.at("a").item(), 3.0);
}

// Property: d/dx sum(f(x)) equals the elementwise analytic derivative.
TEST(Property, ElementwiseDerivatives) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-3, 3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> xs(5);
    for (auto& x : xs) x = u(rng);
    Graph g;
    auto x = g.leaf(Tensor::vector(xs), true);
    g.backward(add(add(sum(tanh(x)), sum(softplus(x))), sum(exp(scale(x, 0.5)))));
    auto gx = g.grad(x);
    for (std::size_t i = 0; i < xs.size(); ++i) {
      double t = std::tanh(xs[i]);
      double expect = (1 - t * t) + 1 / (1 + std::exp(-xs[i])) + 0.5 * std::exp(0.5 * xs[i]);
      EXPECT_NEAR(gx[i], expect, 1e-12);
    }
  }
}

}  // namespace
}  // namespace adanode

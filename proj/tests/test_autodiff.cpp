#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "support/oracles.hpp"
#include "support/random_graph.hpp"
#include "uqdepth/autodiff.hpp"
#include "uqdepth/errors.hpp"

using namespace uqd;
using namespace uqd::ad;

TEST(Autodiff, SquareForwardAndGradient) {
  Graph g;
  Var x = g.leaf(Array::scalar(3.0), true);
  Var y = square(x);
  EXPECT_EQ(y.item(), 9.0);
  const auto grads = g.backward(y);
  EXPECT_DOUBLE_EQ(grads.at(x.id)[0], 6.0);
}

TEST(Autodiff, SumOfVector) {
  Graph g;
  Var x = g.leaf(Array({2}, {1.0, 2.0}));
  EXPECT_EQ(sum(x).item(), 3.0);
}

TEST(Autodiff, IdentityKernelConvolution) {
  Graph g;
  Array in({1, 1, 2, 2}, {1.0, -2.0, 3.5, 4.0});
  Var x = g.leaf(in);
  Var w = g.leaf(Array({1, 1, 1, 1}, {1.0}));
  EXPECT_EQ(conv2d(x, w).value(), in);
}

TEST(Autodiff, LogGradient) {
  Graph g;
  Var x = g.leaf(Array::scalar(2.0), true);
  const auto grads = g.backward(log(x));
  EXPECT_NEAR(grads.at(x.id)[0], 0.5, 1e-12);
  EXPECT_LT(grad_check(g, log(x), x, 1e-5), 1e-6);
}

TEST(Autodiff, ConstantLeafHasNoGradientEntry) {
  Graph g;
  Var c = g.leaf(Array({3}, {1.0, 2.0, 3.0}), false);
  const auto grads = g.backward(sum(c));
  EXPECT_EQ(grads.count(c.id), 0u);
}

TEST(Autodiff, GradCheckPolynomialPlusExp) {
  Graph g;
  Var x = g.leaf(Array::scalar(0.7), true);
  Var y = x * x + exp(x);
  EXPECT_LT(grad_check(g, y, x, 1e-5), 1e-6);
}

TEST(Autodiff, SigmoidAtZero) {
  Graph g;
  Var x = g.leaf(Array::scalar(0.0), true);
  Var y = sigmoid(x);
  EXPECT_DOUBLE_EQ(g.backward(y).at(x.id)[0], 0.25);
  EXPECT_LT(grad_check(g, y, x, 1e-5), 1e-6);
}

TEST(Autodiff, ConstantGraphHasZeroError) {
  Graph g;
  Var x = g.leaf(Array::scalar(1.3), true);
  Var y = g.constant(4.0) + x * g.constant(0.0);
  EXPECT_EQ(grad_check(g, y, x, 1e-5), 0.0);
}

TEST(Autodiff, KinkedOpsAwayFromKinks) {
  std::mt19937_64 rng(11);
  Array a({12}), b({12});
  for (std::size_t i = 0; i < 12; ++i) {
    a[i] = (i % 2 ? 1.0 : -1.0) * (0.1 + 0.15 * double(i));
    b[i] = a[i] + (i % 3 ? 0.4 : -0.4);
  }
  Graph g;
  Var x = g.leaf(a, true);
  Var y = g.leaf(b, true);
  Var root = sum(relu(x) * x + max_elem(x, y) * g.constant(1.5));
  EXPECT_LT(grad_check(g, root, x, 1e-5), 1e-6);
  EXPECT_LT(grad_check(g, root, y, 1e-5), 1e-6);
}

TEST(Autodiff, RandomCompositeGraphs) {
  std::mt19937_64 rng(20240);
  for (int i = 0; i < 100; ++i) {
    gen::RandomGraph rg;
    gen::build_random_graph(rg, rng);
    for (Var leaf : rg.grad_leaves) {
      EXPECT_LT(grad_check(rg.graph, rg.root, leaf, 1e-5), 1e-4) << "graph " << i << " ops " << rg.trace;
    }
  }
}

TEST(Autodiff, GradientAccumulatesOverFanOut) {
  Graph g;
  Var x = g.leaf(Array::scalar(1.5), true);
  Var y = x * x * x + x;
  EXPECT_DOUBLE_EQ(g.backward(y).at(x.id)[0], 3 * 1.5 * 1.5 + 1);
}

TEST(Autodiff, FlipsAreInvolutions) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 20; ++i) {
    const Array a = oracle::uniform({3, 1 + rng() % 7, 1 + rng() % 7}, -5, 5, rng);
    EXPECT_EQ(flip_h(flip_h(a)), a);
    EXPECT_EQ(flip_v(flip_v(a)), a);
    Graph g;
    Var x = g.leaf(a);
    EXPECT_EQ(flip_h(flip_h(x)).value(), a);
    EXPECT_EQ(flip_v(flip_v(x)).value(), a);
  }
}

TEST(Autodiff, ForwardIsDeterministic) {
  std::mt19937_64 r1(77), r2(77);
  gen::RandomGraph a, b;
  gen::build_random_graph(a, r1);
  gen::build_random_graph(b, r2);
  EXPECT_EQ(a.root.item(), b.root.item());
  a.graph.forward();
  EXPECT_EQ(a.root.item(), b.root.item());
}

TEST(Autodiff, SetLeafThenForwardReevaluates) {
  Graph g;
  Var x = g.leaf(Array::scalar(2.0), true);
  Var y = square(x) + x;
  g.set_leaf(x, Array::scalar(3.0));
  g.forward();
  EXPECT_EQ(y.item(), 12.0);
}

TEST(Autodiff, ShapeMismatchNamesBothShapes) {
  Graph g;
  Var a = g.leaf(Array({2, 3}));
  Var b = g.leaf(Array({3, 2}));
  try {
    add(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[3x2]"), std::string::npos) << msg;
  }
}

TEST(Autodiff, LogOfNonPositiveIsDomainError) {
  Graph g;
  Var a = g.leaf(Array({2}, {1.0, -1.0}));
  EXPECT_THROW(log(a), DomainError);
  EXPECT_THROW(sqrt(g.leaf(Array::scalar(-0.5))), DomainError);
}

TEST(Autodiff, ScalarBroadcastBothSides) {
  Graph g;
  Var v = g.leaf(Array({3}, {0.5, 2.0, 3.0}), true);
  Var s = g.leaf(Array::scalar(2.0), true);
  Var y = sum(v * s + s / v);
  const auto grads = g.backward(y);
  EXPECT_NEAR(grads.at(s.id)[0], 5.5 + (2.0 + 0.5 + 1.0 / 3.0), 1e-12);
  EXPECT_LT(grad_check(g, y, v, 1e-5), 1e-6);
  EXPECT_LT(grad_check(g, y, s, 1e-5), 1e-6);
}

TEST(Autodiff, BackwardRequiresScalarRoot) {
  Graph g;
  Var v = g.leaf(Array({3}), true);
  EXPECT_THROW(g.backward(v * g.constant(2.0)), ContractError);
}

TEST(Autodiff, StridedConvolutionGradient) {
  std::mt19937_64 rng(3);
  Graph g;
  Var x = g.leaf(oracle::uniform({2, 3, 6, 6}, -1, 1, rng), true);
  Var w = g.leaf(oracle::uniform({4, 3, 3, 3}, -1, 1, rng), true);
  Var b = g.leaf(oracle::uniform({4}, -1, 1, rng), true);
  Var y = conv2d(x, w, b, 2);
  EXPECT_EQ(y.shape(), (Shape{2, 4, 3, 3}));
  Var root = sum(y * g.leaf(oracle::uniform({2, 4, 3, 3}, -1, 1, rng)));
  EXPECT_LT(grad_check(g, root, x, 1e-5), 1e-5);
  EXPECT_LT(grad_check(g, root, w, 1e-5), 1e-5);
  EXPECT_LT(grad_check(g, root, b, 1e-5), 1e-5);
}

TEST(Autodiff, ConvolutionMatchesDirectSum) {
  std::mt19937_64 rng(9);
  const Array in = oracle::uniform({2, 5, 5}, -1, 1, rng);
  const Array wt = oracle::uniform({3, 2, 3, 3}, -1, 1, rng);
  Graph g;
  const Array out = conv2d(g.leaf(in), g.leaf(wt), 1).value();
  for (std::size_t co = 0; co < 3; ++co) {
    for (int r = 0; r < 5; ++r) {
      for (int c = 0; c < 5; ++c) {
        double s = 0;
        for (std::size_t ci = 0; ci < 2; ++ci) {
          for (int dr = -1; dr <= 1; ++dr) {
            for (int dc = -1; dc <= 1; ++dc) {
              const int rr = r + dr, cc = c + dc;
              if (rr < 0 || rr >= 5 || cc < 0 || cc >= 5) continue;
              s += in[(ci * 5 + rr) * 5 + cc] * wt[((co * 2 + ci) * 3 + (dr + 1)) * 3 + (dc + 1)];
            }
          }
        }
        EXPECT_NEAR(out[(co * 5 + r) * 5 + c], s, 1e-12);
      }
    }
  }
}

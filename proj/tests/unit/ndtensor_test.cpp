#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "phantom/ndtensor/gradcheck.hpp"
#include "phantom/ndtensor/ops.hpp"
#include "numerics_fixtures.hpp"

namespace phantom::nd {
namespace {

using phantom::testing::primitive_cases;
using phantom::testing::random_tensor;

template <typename T>
Var<T> param(Tape<T>& tape, Tensor<T> t) {
  t.set_requires_grad(true);
  return tape.leaf(std::move(t));
}

TEST(Tensor, ElementCountMatchesShape) {
  Tensor<float> t({2, 3, 4});
  EXPECT_EQ(t.size(), 24u);
  EXPECT_EQ(numel({}), 1u);
  EXPECT_THROW(Tensor<float>({2, 2}, std::vector<float>{1, 2, 3}), ShapeError);
}

TEST(Ops, SoftmaxOfEqualLogitsIsUniform) {
  Tape<double> tape;
  auto y = softmax(tape.constant(Tensor<double>({2}, {0.0, 0.0})));
  EXPECT_DOUBLE_EQ(y.value()[0], 0.5);
  EXPECT_DOUBLE_EQ(y.value()[1], 0.5);
}

TEST(Ops, SoftmaxRowsAreDistributions) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Tape<float> tape;
    auto y = softmax(tape.constant(random_tensor<float>({7, 13}, seed, -8.f, 8.f)));
    for (std::size_t r = 0; r < 7; ++r) {
      double s = 0;
      for (std::size_t j = 0; j < 13; ++j) {
        EXPECT_GE(y.value().at(r, j), 0.f);
        s += y.value().at(r, j);
      }
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(Ops, SoftmaxMaskedEntriesAreExactlyZero) {
  Tape<double> tape;
  auto s = causal_mask(tape.constant(random_tensor<double>({3, 3}, 4)));
  auto p = softmax(s);
  EXPECT_EQ(p.value().at(0, 1), 0.0);
  EXPECT_EQ(p.value().at(0, 2), 0.0);
  EXPECT_EQ(p.value().at(1, 2), 0.0);
  EXPECT_DOUBLE_EQ(p.value().at(0, 0), 1.0);
}

TEST(Ops, LayerNormOfConstantRowIsZero) {
  Tape<double> tape;
  auto x = tape.constant(Tensor<double>({1, 6}, 3.25));
  auto y = layer_norm(x, tape.constant(Tensor<double>({6}, 1.0)), tape.constant(Tensor<double>({6}, 0.0)));
  for (auto v : y.value().data()) EXPECT_EQ(v, 0.0);
}

TEST(Ops, IdentityMatmul) {
  Tape<double> tape;
  Tensor<double> eye({3, 3});
  for (std::size_t i = 0; i < 3; ++i) eye.at(i, i) = 1;
  auto x = random_tensor<double>({3, 3}, 11);
  auto y = matmul(tape.constant(eye), tape.constant(x));
  EXPECT_EQ(y.value(), x);
}

TEST(Ops, ShapeErrorsNameOperationAndShapes) {
  Tape<float> tape;
  auto a = tape.constant(Tensor<float>({2, 3}));
  auto b = tape.constant(Tensor<float>({4, 5}));
  try {
    matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("matmul"), std::string::npos);
    EXPECT_NE(msg.find("[2, 3]"), std::string::npos);
    EXPECT_NE(msg.find("[4, 5]"), std::string::npos);
  }
  EXPECT_THROW(add(a, b), ShapeError);
  EXPECT_THROW(add_bias(a, tape.constant(Tensor<float>({2}))), ShapeError);
  EXPECT_THROW(slice(a, 1, 2, 4), ShapeError);
}

TEST(Backward, SquareAtThree) {
  Tape<double> tape;
  auto x = param(tape, Tensor<double>::scalar(3.0));
  tape.backward(mul(x, x));
  EXPECT_DOUBLE_EQ(tape.grad(x).item(), 6.0);
}

TEST(Backward, SoftmaxCrossEntropyGradientIsProbabilitiesMinusOneHot) {
  Tape<double> tape;
  auto logits = param(tape, random_tensor<double>({1, 5}, 3));
  const std::int32_t target = 2;
  auto loss = sum(cross_entropy(logits, std::span<const std::int32_t>(&target, 1)));
  tape.backward(loss);
  auto g = tape.grad(logits);
  Tape<double> t2;
  auto p = softmax(t2.constant(logits.value()));
  for (std::size_t j = 0; j < 5; ++j) {
    const double expect = p.value()[j] - (j == 2 ? 1.0 : 0.0);
    EXPECT_NEAR(g[j], expect, 1e-14);
  }
}

TEST(Backward, RejectsNonScalarLossAndEmptyTape) {
  Tape<float> empty;
  EXPECT_THROW(empty.backward(Var<float>()), std::logic_error);
  Tape<float> tape;
  auto x = param(tape, Tensor<float>({3}, 1.f));
  EXPECT_THROW(tape.backward(scale(x, 2.f)), ShapeError);
}

TEST(Backward, RepeatedSweepsAreBitIdentical) {
  Tape<float> tape;
  auto w = param(tape, random_tensor<float>({4, 6}, 1));
  auto x = tape.constant(random_tensor<float>({3, 4}, 2));
  auto loss = sum(softmax(gelu(matmul(x, w))));
  auto l2 = sum(mul(loss, loss));
  tape.backward(l2);
  const auto g1 = tape.grad(w);
  tape.backward(l2);
  EXPECT_EQ(tape.grad(w), g1);
}

// Two-layer MLP; every parameter is checked against central differences.
template <typename T>
struct Mlp {
  Tensor<T> x = random_tensor<T>({4, 5}, 21);
  Tensor<T> w1 = random_tensor<T>({5, 8}, 22);
  Tensor<T> b1 = random_tensor<T>({8}, 23);
  Tensor<T> w2 = random_tensor<T>({8, 3}, 24);
  Tensor<T> b2 = random_tensor<T>({3}, 25);
  std::vector<std::int32_t> targets{0, 2, 1, 2};

  Var<T> loss(Tape<T>& t, int which, const Var<T>& p) const {
    auto v = [&](int i, const Tensor<T>& val) { return i == which ? p : t.constant(val); };
    auto h = gelu(add_bias(matmul(t.constant(x), v(0, w1)), v(1, b1)));
    auto logits = add_bias(matmul(h, v(2, w2)), v(3, b2));
    return sum(cross_entropy(logits, targets));
  }
  const Tensor<T>& get(int i) const {
    switch (i) {
      case 0: return w1;
      case 1: return b1;
      case 2: return w2;
      default: return b2;
    }
  }
};

TEST(GradCheck, TwoLayerMlpEveryParameter64Bit) {
  Mlp<double> mlp;
  for (int i = 0; i < 4; ++i) {
    TapeFn<double> f = [&](Tape<double>& t, const Var<double>& p) { return mlp.loss(t, i, p); };
    EXPECT_LT(grad_check(f, mlp.get(i), 1e-3).max_rel_error, 1e-6) << "parameter " << i;
  }
}

TEST(GradCheck, SumHasExactUnitGradient) {
  TapeFn<double> f = [](Tape<double>&, const Var<double>& x) { return sum(x); };
  // Dyadic inputs and step keep every difference quotient exact.
  Tensor<double> x({3, 4});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = 0.25 * static_cast<double>(i) - 1.0;
  EXPECT_EQ(grad_check(f, x, 1.0 / 1024).max_rel_error, 0.0);
  EXPECT_EQ(grad_check(f, x, 1.0 / 1024, DifferenceScheme::central).max_rel_error, 0.0);
}

TEST(GradCheck, SquareAtZero) {
  TapeFn<double> f = [](Tape<double>&, const Var<double>& x) { return sum(mul(x, x)); };
  EXPECT_LT(grad_check(f, Tensor<double>({1}, 0.0), 1e-3).max_rel_error, 1e-6);
}

TEST(GradCheck, NonFiniteValueIsAnError) {
  TapeFn<double> f = [](Tape<double>& t, const Var<double>& x) {
    return sum(mul(x, t.constant(Tensor<double>({1}, std::numeric_limits<double>::infinity()))));
  };
  EXPECT_THROW(grad_check(f, Tensor<double>({1}, 1.0), 1e-3), std::domain_error);
}

TEST(GradCheck, EveryPrimitive64Bit) {
  for (const auto& [name, c] : primitive_cases<double>()) {
    const auto& [f, shape] = c;
    for (std::uint64_t seed = 100; seed < 105; ++seed) {
      auto r = grad_check(f, random_tensor<double>(shape, seed), 1e-3);
      EXPECT_LT(r.max_rel_error, 1e-6) << name << " seed " << seed;
    }
  }
}

TEST(GradCheck, EveryPrimitive32Bit) {
  auto f32 = primitive_cases<float>();
  auto f64 = primitive_cases<double>();
  for (std::size_t i = 0; i < f32.size(); ++i) {
    for (std::uint64_t seed = 100; seed < 105; ++seed) {
      auto r = grad_check(f32[i].second.first, f64[i].second.first,
                          random_tensor<float>(f32[i].second.second, seed), 1e-3);
      EXPECT_LT(r.max_rel_error, 1e-4) << f32[i].first << " seed " << seed;
    }
  }
}

}  // namespace
}  // namespace phantom::nd

#include <doctest.h>

#include "mifcn/conv.hpp"
#include "mifcn/reference.hpp"
#include "support.hpp"

using namespace mifcn;

namespace {

Tensor impulse5() {
  Tensor x({1, 5, 5});
  x(0, 2, 2) = 1.0;
  return x;
}

}  // namespace

TEST_CASE("impulse response, dilation 1") {
  const Tensor y = conv2d_dilated(impulse5(), Tensor({1, 1, 3, 3}, 1.0), Tensor({1}), ConvSpec{3, 1});
  REQUIRE(y.shape() == Shape{1, 5, 5});
  for (Index r = 0; r < 5; ++r)
    for (Index c = 0; c < 5; ++c) {
      const bool inside = r >= 1 && r <= 3 && c >= 1 && c <= 3;
      CHECK(y(0, r, c) == (inside ? 1.0 : 0.0));
    }
}

TEST_CASE("impulse response, dilation 2") {
  const Tensor y = conv2d_dilated(impulse5(), Tensor({1, 1, 3, 3}, 1.0), Tensor({1}), ConvSpec{3, 2});
  for (Index r = 0; r < 5; ++r)
    for (Index c = 0; c < 5; ++c) {
      const bool hit = r % 2 == 0 && c % 2 == 0;
      CHECK(y(0, r, c) == (hit ? 1.0 : 0.0));
    }
}

TEST_CASE("kernel orientation follows a = x - d*b") {
  // A single nonzero tap at offset b = (-1, 0) reads input row y + d, moving the impulse up by d rows.
  Tensor k({1, 1, 3, 3});
  k(0, 0, 0, 1) = 1.0;
  for (Index d : {1, 2}) {
    const Tensor y = conv2d_dilated(impulse5(), k, Tensor({1}), ConvSpec{3, d});
    CHECK(y(0, 2 - d, 2) == 1.0);
    CHECK(y.array().sum() == 1.0);
  }
}

TEST_CASE("tiled conv matches the literal loop oracle") {
  std::mt19937_64 rng(3);
  for (Index d : {1, 2}) {
    const Tensor x = testing::random_tensor(rng, {3, 8, 8});
    const Tensor k = testing::random_tensor(rng, {4, 3, 3, 3});
    const Tensor b = testing::random_tensor(rng, {4});
    CHECK(max_abs_diff(conv2d_dilated(x, k, b, {3, d}), reference::conv2d_dilated(x, k, b, {3, d})) <= 1e-12);
  }
  std::uniform_int_distribution<Index> extent(1, 16), ch(1, 4), dil(1, 3), kind(0, 1);
  for (int n = 0; n < 60; ++n) {
    const ConvSpec spec{kind(rng) ? 3 : 1, dil(rng)};
    const Index cin = ch(rng), cout = ch(rng);
    const Tensor x = testing::random_tensor(rng, {cin, extent(rng), extent(rng)});
    const Tensor k = testing::random_tensor(rng, {cout, cin, spec.kernel_size, spec.kernel_size});
    const Tensor b = testing::random_tensor(rng, {cout});
    CHECK(max_abs_diff(conv2d_dilated(x, k, b, spec), reference::conv2d_dilated(x, k, b, spec)) <= 1e-12);
  }
}

TEST_CASE("large planes are processed in several tiles") {
  std::mt19937_64 rng(5);
  const Tensor x = testing::random_tensor(rng, {4, 200, 300});
  const Tensor k = testing::random_tensor(rng, {4, 4, 3, 3});
  const Tensor b = testing::random_tensor(rng, {4});
  REQUIRE(detail::tile_rows(36, 200, 300) < 200);
  CHECK(max_abs_diff(conv2d_dilated(x, k, b, {3, 2}), reference::conv2d_dilated(x, k, b, {3, 2})) <= 1e-12);
}

TEST_CASE("conv is linear in the input") {
  std::mt19937_64 rng(8);
  const Tensor x1 = testing::random_tensor(rng, {2, 9, 7}), x2 = testing::random_tensor(rng, {2, 9, 7});
  const Tensor k = testing::random_tensor(rng, {3, 2, 3, 3});
  const Tensor zero({3});
  const Tensor lhs = conv2d_dilated(add(scale(x1, 2.5), x2), k, zero, {3, 3});
  const Tensor rhs = add(scale(conv2d_dilated(x1, k, zero, {3, 3}), 2.5), conv2d_dilated(x2, k, zero, {3, 3}));
  CHECK(max_abs_diff(lhs, rhs) <= 1e-12);
}

TEST_CASE("float path agrees with double") {
  std::mt19937_64 rng(9);
  const Tensor x = testing::random_tensor(rng, {3, 12, 10}, 0.0, 255.0);
  const Tensor k = testing::random_tensor(rng, {5, 3, 3, 3});
  const Tensor b = testing::random_tensor(rng, {5});
  const Tensor yd = conv2d_dilated(x, k, b, {3, 2});
  const TensorF yf = conv2d_dilated(x.cast<float>(), k.cast<float>(), b.cast<float>(), {3, 2});
  const double scale = yd.array().abs().maxCoeff();
  CHECK(max_abs_diff(yf.cast<double>(), yd) <= 1e-5 * scale);
}

TEST_CASE("conv preconditions") {
  const Tensor x({1, 5, 5});
  CHECK_THROWS_AS(conv2d_dilated(x, Tensor({1, 1, 2, 2}), Tensor({1}), {2, 1}), PreconditionError);
  CHECK_THROWS_AS(conv2d_dilated(x, Tensor({1, 2, 3, 3}), Tensor({1}), {3, 1}), PreconditionError);
  CHECK_THROWS_AS(conv2d_dilated(x, Tensor({1, 1, 3, 3}), Tensor({2}), {3, 1}), PreconditionError);
  CHECK_THROWS_AS(conv2d_dilated(Tensor({5, 5}), Tensor({1, 1, 3, 3}), Tensor({1}), {3, 1}), PreconditionError);
  CHECK_THROWS_AS(conv2d_dilated(x, Tensor({1, 1, 3, 3}), Tensor({1}), {3, 0}), PreconditionError);
}

TEST_CASE("conv backward matches finite differences") {
  std::mt19937_64 rng(21);
  for (Index d : {1, 2, 3}) {
    const ConvSpec spec{3, d};
    const Tensor x = testing::random_tensor(rng, {2, 6, 7});
    const Tensor k = testing::random_tensor(rng, {3, 2, 3, 3});
    const Tensor b = testing::random_tensor(rng, {3});
    const Tensor c = testing::random_tensor(rng, {3, 6, 7});  // loss = <c, conv(x)>
    const auto loss = [&](const Tensor& xi, const Tensor& ki, const Tensor& bi) {
      return (reference::conv2d_dilated(xi, ki, bi, spec).array() * c.array()).sum();
    };
    const ConvGradients<double> g = conv2d_dilated_backward(x, k, c, spec);
    const Tensor nx = reference::finite_difference_grad([&](const Tensor& v) { return loss(v, k, b); }, x, 1e-6);
    const Tensor nk = reference::finite_difference_grad([&](const Tensor& v) { return loss(x, v, b); }, k, 1e-6);
    const Tensor nb = reference::finite_difference_grad([&](const Tensor& v) { return loss(x, k, v); }, b, 1e-6);
    CHECK(max_abs_diff(g.input, nx) <= 1e-7);
    CHECK(max_abs_diff(g.kernels, nk) <= 1e-7);
    CHECK(max_abs_diff(g.bias, nb) <= 1e-7);
  }
}

TEST_CASE("finite difference helper") {
  const Tensor g = reference::finite_difference_grad(
      [](const Tensor& x) { return x.array().square().sum(); }, Tensor({2}, {1.0, 2.0}), 1e-6);
  CHECK(std::abs(g[0] - 2.0) <= 1e-8);
  CHECK(std::abs(g[1] - 4.0) <= 1e-8);
  CHECK_THROWS_AS(reference::finite_difference_grad([](const Tensor&) { return 0.0; }, Tensor({1}), 0.0),
                  PreconditionError);
}

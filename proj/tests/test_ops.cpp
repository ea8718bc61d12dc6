#include "softorder/ops.hpp"
#include "softorder/rng.hpp"

#include <doctest.h>

#include <cmath>

using namespace softorder;

namespace {

Tensor random_tensor(std::vector<Index> shape, Rng& rng, Scalar lo = -1, Scalar hi = 1) {
  Tensor t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// Naive quadruple-loop reference for the 3x3 same-size convolution.
Tensor conv_reference(const Tensor& K, const Tensor& bias, const Tensor& x) {
  const Index batch = x.dim(0), c_in = x.dim(1), h = x.dim(2), w = x.dim(3);
  const Index c_out = K.dim(0);
  Tensor y({batch, c_out, h, w});
  for (Index b = 0; b < batch; ++b)
    for (Index co = 0; co < c_out; ++co)
      for (Index i = 0; i < h; ++i)
        for (Index j = 0; j < w; ++j) {
          Scalar acc = bias[co];
          for (Index ci = 0; ci < c_in; ++ci)
            for (Index di = -1; di <= 1; ++di)
              for (Index dj = -1; dj <= 1; ++dj) {
                const Index ii = i + di, jj = j + dj;
                if (ii < 0 || ii >= h || jj < 0 || jj >= w) continue;
                acc += K[((co * c_in + ci) * 3 + (di + 1)) * 3 + (dj + 1)] *
                       x[((b * c_in + ci) * h + ii) * w + jj];
              }
          y[((b * c_out + co) * h + i) * w + j] = acc;
        }
  return y;
}

} // namespace

TEST_CASE("affine_forward closed form") {
  Tensor W = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor b = Tensor::from({2}, {10, 20});
  Tensor x = Tensor::from({1, 3}, {1, 1, 1});
  Tensor y = affine_forward(W, b, x);
  CHECK(y.dim(0) == 1);
  CHECK(y.dim(1) == 2);
  CHECK(y[0] == doctest::Approx(16));
  CHECK(y[1] == doctest::Approx(35));
  CHECK_THROWS_AS(affine_forward(W, b, Tensor({1, 4})), ShapeError);
}

TEST_CASE("conv2d_forward matches the naive reference") {
  Rng rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    const Index c_in = 1 + rng.uniform_index(3), c_out = 1 + rng.uniform_index(3);
    const Index h = 2 + rng.uniform_index(5), w = 2 + rng.uniform_index(5);
    Tensor K = random_tensor({c_out, c_in, 3, 3}, rng);
    Tensor b = random_tensor({c_out}, rng);
    Tensor x = random_tensor({2, c_in, h, w}, rng);
    Tensor got = conv2d_forward(K, b, x);
    Tensor want = conv_reference(K, b, x);
    REQUIRE(got.same_shape(want));
    CHECK((got.array() - want.array()).abs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("maxpool2x2 values, argmax routing, odd trailing row dropped") {
  // one channel, 3x4: last row is dropped
  Tensor x = Tensor::from({1, 1, 3, 4}, {1, 5, 2, 0, //
                                          3, 4, 8, 6, //
                                          9, 9, 9, 9});
  std::vector<Index> argmax;
  Tensor y = maxpool2x2(x, &argmax);
  REQUIRE(y.shape() == std::vector<Index>{1, 1, 1, 2});
  CHECK(y[0] == 5);
  CHECK(y[1] == 8);
  REQUIRE(argmax.size() == 2);
  CHECK(argmax[0] == 1); // flat index of the 5
  CHECK(argmax[1] == 6); // flat index of the 8
}

TEST_CASE("activations") {
  Tensor x = Tensor::from({3}, {-2, 0, 3});
  Tensor id = activate(Activation::Identity, x);
  for (Index i = 0; i < 3; ++i) CHECK(id[i] == x[i]);
  Tensor r = activate(Activation::Relu, x);
  CHECK(r[0] == 0);
  CHECK(r[1] == 0);
  CHECK(r[2] == 3);
  Tensor s = activate(Activation::Sigmoid, x);
  CHECK(s[1] == doctest::Approx(0.5));
  CHECK(s[2] == doctest::Approx(1 / (1 + std::exp(-3.0))));
}

TEST_CASE("softmax_axis normalizes and is shift invariant") {
  Rng rng(9);
  Tensor x = random_tensor({2, 3, 4}, rng, -3, 3);
  for (int axis = 0; axis < 3; ++axis) {
    Tensor y = softmax_axis(x, axis);
    // every slice along `axis` sums to one
    const Index len = x.dim(axis);
    Index inner = 1;
    for (int a = axis + 1; a < 3; ++a) inner *= x.dim(a);
    const Index outer = x.size() / (len * inner);
    for (Index o = 0; o < outer; ++o)
      for (Index i = 0; i < inner; ++i) {
        Scalar sum = 0;
        for (Index l = 0; l < len; ++l) sum += y[(o * len + l) * inner + i];
        CHECK(sum == doctest::Approx(1).epsilon(1e-12));
      }
  }
  Tensor shifted = x;
  shifted.array() += 100;
  CHECK((softmax_axis(x, 1).array() - softmax_axis(shifted, 1).array()).abs().maxCoeff() < 1e-12);
}

TEST_CASE("softmax_axis two-element closed form") {
  Tensor x = Tensor::from({2, 1}, {0, 1});
  Tensor y = softmax_axis(x, 0);
  const Scalar e = std::exp(1.0);
  CHECK(y[0] == doctest::Approx(1 / (1 + e)));
  CHECK(y[1] == doctest::Approx(e / (1 + e)));
}

TEST_CASE("finite_difference_grad on a quadratic") {
  Tensor x = Tensor::from({3}, {1, -2, 0.5});
  auto f = [](const Tensor& t) {
    Scalar s = 0;
    for (Index i = 0; i < t.size(); ++i) s += t[i] * t[i];
    return s;
  };
  Tensor g = finite_difference_grad(f, x);
  for (Index i = 0; i < 3; ++i) CHECK(g[i] == doctest::Approx(2 * x[i]).epsilon(1e-7));
}

#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "chronokit/conv3d.hpp"
#include "chronokit/gradcheck.hpp"
#include "chronokit/resize.hpp"
#include "chronokit/tensor.hpp"
#include "support/oracles.hpp"

using namespace chronokit;

TEST_CASE("tensor shape and data stay consistent") {
  Tensor t({2, 3, 4});
  CHECK(t.numel() == 24);
  CHECK(t.rank() == 3);
  t(1, 2, 3) = 7.5;
  CHECK(t[t.numel() - 1] == 7.5);
  CHECK_THROWS_AS(Tensor({2, 0, 3}), shape_error);
  CHECK_THROWS_AS((void)t.reshaped({5, 5}), shape_error);
  CHECK_THROWS_AS((void)t(2, 0, 0), shape_error);
}

TEST_CASE("STV1 round-trips bit-exactly") {
  Rng rng(7);
  Tensor t = oracles::random_tensor({2, 3, 5}, rng);
  const std::string path = "tensor_roundtrip.stv1";
  write_stv1(path, t);
  Tensor back = read_stv1(path);
  REQUIRE(back.shape() == t.shape());
  for (std::size_t i = 0; i < t.numel(); ++i) CHECK(back[i] == t[i]);
  CHECK(back.dtype() == DType::F64);

  // f32 files keep their dtype tag and payload through a second pass
  t.set_dtype(DType::F32);
  write_stv1(path, t);
  Tensor f32 = read_stv1(path);
  CHECK(f32.dtype() == DType::F32);
  write_stv1(path + ".copy", f32);
  std::ifstream a(path, std::ios::binary), b(path + ".copy", std::ios::binary);
  const std::string bytes_a((std::istreambuf_iterator<char>(a)), {});
  const std::string bytes_b((std::istreambuf_iterator<char>(b)), {});
  CHECK(bytes_a == bytes_b);
  std::filesystem::remove(path);
  std::filesystem::remove(path + ".copy");
}

TEST_CASE("squeeze_spatial averages each frame") {
  SUBCASE("constant volume") {
    Tensor a({2, 1, 3, 4, 4}, 2.5);
    Tensor s = squeeze_spatial(a);
    for (std::size_t i = 0; i < s.numel(); ++i) CHECK(s[i] == doctest::Approx(2.5));
  }
  SUBCASE("H=W=1 copies the input") {
    Rng rng(3);
    Tensor a = oracles::random_tensor({1, 2, 4, 1, 1}, rng);
    Tensor s = squeeze_spatial(a);
    for (std::size_t i = 0; i < s.numel(); ++i) CHECK(s[i] == a[i]);
  }
  SUBCASE("random case equals the per-slice mean") {
    Rng rng(11);
    Tensor a = oracles::random_tensor({1, 2, 3, 4, 4}, rng);
    Tensor s = squeeze_spatial(a);
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t t = 0; t < 3; ++t) {
        double acc = 0.0;
        for (std::size_t h = 0; h < 4; ++h)
          for (std::size_t w = 0; w < 4; ++w) acc += a(0, c, t, h, w);
        CHECK(s(0, c, t) == doctest::Approx(acc / 16.0).epsilon(1e-12));
      }
  }
  SUBCASE("values stay inside the input range") {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
      Tensor a = oracles::random_tensor({2, 2, 3, 3, 3}, rng);
      Tensor s = squeeze_spatial(a);
      CHECK(s.min() >= a.min() - 1e-12);
      CHECK(s.max() <= a.max() + 1e-12);
    }
  }
}

TEST_CASE("conv3d identity and zero kernels") {
  Rng rng(1);
  Tensor x = oracles::random_tensor({1, 1, 3, 4, 4}, rng);
  ConvKernel k = ConvKernel::make_same(1, 1, 1, 1, 1);
  k.weights[0] = 1.0;
  SUBCASE("1x1x1 unit kernel is the identity") {
    Tensor y = conv3d(x, k);
    REQUIRE(y.shape() == x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y[i] == x[i]);
  }
  SUBCASE("zero kernel yields broadcast bias") {
    k.weights[0] = 0.0;
    k.bias[0] = 0.25;
    Tensor y = conv3d(x, k);
    for (std::size_t i = 0; i < y.numel(); ++i) CHECK(y[i] == 0.25);
  }
}

TEST_CASE("conv3d matches the direct-sum oracle") {
  Rng rng(42);
  SUBCASE("fixed small case") {
    Tensor x = oracles::random_tensor({1, 2, 2, 4, 4}, rng);
    ConvKernel k = ConvKernel::make_same(2, 2, 1, 3, 3);
    k.init_uniform(rng);
    Tensor got = conv3d(x, k);
    Tensor want = oracles::conv3d_direct(
        x, k.weights, k.bias.vec(), k.stride[0], k.stride[1], k.stride[2],
        k.padding[0], k.padding[1], k.padding[2], k.groups);
    REQUIRE(got.shape() == want.shape());
    for (std::size_t i = 0; i < got.numel(); ++i)
      CHECK(std::fabs(got[i] - want[i]) < 1e-12);
  }
  SUBCASE("randomized strides, padding and groups") {
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t groups = 1 + rng.uniform_index(2);
      const std::size_t cg = 1 + rng.uniform_index(2);
      const std::size_t kpg = 1 + rng.uniform_index(2);
      const std::size_t C = groups * cg, K = groups * kpg;
      const std::size_t kt = 1 + rng.uniform_index(2);
      const std::size_t kh = 1 + rng.uniform_index(3);
      const std::size_t kw = 1 + rng.uniform_index(3);
      ConvKernel k;
      k.weights = oracles::random_tensor({K, cg, kt, kh, kw}, rng);
      k.bias = oracles::random_tensor({K}, rng);
      k.groups = groups;
      k.stride = {1 + rng.uniform_index(2), 1 + rng.uniform_index(2),
                  1 + rng.uniform_index(2)};
      k.padding = {rng.uniform_index(2), rng.uniform_index(2), rng.uniform_index(2)};
      const std::size_t T = kt + rng.uniform_index(3);
      const std::size_t H = kh + rng.uniform_index(3);
      const std::size_t W = kw + rng.uniform_index(3);
      Tensor x = oracles::random_tensor({1 + rng.uniform_index(2), C, T, H, W}, rng);
      Tensor got = conv3d(x, k);
      Tensor want = oracles::conv3d_direct(
          x, k.weights, k.bias.vec(), k.stride[0], k.stride[1], k.stride[2],
          k.padding[0], k.padding[1], k.padding[2], k.groups);
      REQUIRE(got.shape() == want.shape());
      for (std::size_t i = 0; i < got.numel(); ++i)
        CHECK(std::fabs(got[i] - want[i]) < 1e-10);
    }
  }
}

TEST_CASE("conv3d backward") {
  Rng rng(9);
  SUBCASE("identity kernel passes the upstream gradient through") {
    Tensor x = oracles::random_tensor({1, 1, 2, 3, 3}, rng);
    ConvKernel k = ConvKernel::make_same(1, 1, 1, 1, 1);
    k.weights[0] = 1.0;
    Tensor up(conv3d_output_shape(x.shape(), k), 1.0);
    ConvGrads g = conv3d_backward(x, k, up);
    for (std::size_t i = 0; i < up.numel(); ++i) CHECK(g.grad_input[i] == 1.0);
  }
  SUBCASE("zero upstream produces zero gradients") {
    Tensor x = oracles::random_tensor({1, 2, 2, 3, 3}, rng);
    ConvKernel k = ConvKernel::make_same(2, 2, 3, 3, 3);
    k.init_uniform(rng);
    Tensor up(conv3d_output_shape(x.shape(), k), 0.0);
    ConvGrads g = conv3d_backward(x, k, up);
    CHECK(g.grad_input.max() == 0.0);
    CHECK(g.grad_weights.max() == 0.0);
    CHECK(g.grad_bias.max() == 0.0);
  }
  SUBCASE("finite differences") {
    Tensor x = oracles::random_tensor({1, 2, 2, 3, 3}, rng);
    ConvKernel k = ConvKernel::make_same(2, 2, 3, 1, 3);
    k.init_uniform(rng);
    Tensor up = oracles::random_tensor(conv3d_output_shape(x.shape(), k), rng);
    ConvGrads g = conv3d_backward(x, k, up);
    auto loss = [&](const Tensor& probe) {
      Tensor y = conv3d(probe, k);
      double acc = 0.0;
      for (std::size_t i = 0; i < y.numel(); ++i) acc += y[i] * up[i];
      return acc;
    };
    CHECK(max_rel_error(g.grad_input, finite_difference_grad(loss, x)) < 1e-6);
  }
  SUBCASE("shape mismatch raises") {
    Tensor x = oracles::random_tensor({1, 2, 2, 3, 3}, rng);
    ConvKernel k = ConvKernel::make_same(2, 2, 3, 3, 3);
    Tensor up({1, 2, 2, 3, 4});
    CHECK_THROWS_AS((void)conv3d_backward(x, k, up), shape_error);
  }
}

TEST_CASE("trilinear_resize") {
  SUBCASE("constant volume stays constant") {
    Tensor v({2, 2, 2}, 3.25);
    Tensor r = trilinear_resize(v, 5, 4, 3);
    for (std::size_t i = 0; i < r.numel(); ++i) CHECK(r[i] == doctest::Approx(3.25));
  }
  SUBCASE("linear ramps are fixed points") {
    Tensor v({3, 3, 3});
    for (std::size_t t = 0; t < 3; ++t)
      for (std::size_t h = 0; h < 3; ++h)
        for (std::size_t w = 0; w < 3; ++w)
          v(t, h, w) = 2.0 * t + 0.5 * h - 1.5 * w;
    Tensor r = trilinear_resize(v, 5, 5, 5);
    for (std::size_t t = 0; t < 5; ++t)
      for (std::size_t h = 0; h < 5; ++h)
        for (std::size_t w = 0; w < 5; ++w) {
          const double tt = t * 2.0 / 4.0, hh = h * 2.0 / 4.0, ww = w * 2.0 / 4.0;
          CHECK(r(t, h, w) ==
                doctest::Approx(2.0 * tt + 0.5 * hh - 1.5 * ww).epsilon(1e-12));
        }
  }
  SUBCASE("2x2x2 -> 4x4x4 equals pointwise interpolation") {
    Rng rng(17);
    Tensor v = oracles::random_tensor({2, 2, 2}, rng);
    Tensor r = trilinear_resize(v, 4, 4, 4);
    for (std::size_t t = 0; t < 4; ++t)
      for (std::size_t h = 0; h < 4; ++h)
        for (std::size_t w = 0; w < 4; ++w) {
          const double want = oracles::trilinear_point(v, t / 3.0, h / 3.0, w / 3.0);
          CHECK(r(t, h, w) == doctest::Approx(want).epsilon(1e-12));
        }
  }
  SUBCASE("backward is the transpose of the forward map") {
    Rng rng(23);
    Tensor v = oracles::random_tensor({1, 2, 3, 3, 3}, rng);
    Tensor up = oracles::random_tensor({1, 2, 6, 5, 4}, rng);
    Tensor g = trilinear_resize_backward(up, v.shape());
    auto loss = [&](const Tensor& probe) {
      Tensor y = trilinear_resize(probe, 6, 5, 4);
      double acc = 0.0;
      for (std::size_t i = 0; i < y.numel(); ++i) acc += y[i] * up[i];
      return acc;
    };
    CHECK(max_rel_error(g, finite_difference_grad(loss, v)) < 1e-6);
  }
}

TEST_CASE("spline3_resize") {
  SUBCASE("constant volume stays constant") {
    Tensor v({3, 3, 3}, -1.5);
    Tensor r = spline3_resize(v, 7, 5, 6);
    for (std::size_t i = 0; i < r.numel(); ++i)
      CHECK(r[i] == doctest::Approx(-1.5).epsilon(1e-12));
  }
  SUBCASE("quadratic 1-D profile matches the dense spline oracle") {
    std::vector<double> y = {0.0, 1.0, 4.0, 9.0, 16.0};
    Tensor v({1, 1, 5});
    for (std::size_t i = 0; i < 5; ++i) v[i] = y[i];
    Tensor r = spline3_resize(v, 1, 1, 10);
    for (std::size_t i = 0; i < 10; ++i) {
      const double x = static_cast<double>(i) * 4.0 / 9.0;
      CHECK(r[i] == doctest::Approx(oracles::natural_spline_eval(y, x)).epsilon(1e-9));
    }
  }
  SUBCASE("extent-1 temporal axis reduces to spatial interpolation") {
    Rng rng(2);
    Tensor v = oracles::random_tensor({1, 4, 4}, rng);
    Tensor r = spline3_resize(v, 3, 8, 8);
    Tensor spatial_only = spline3_resize(v, 1, 8, 8);
    for (std::size_t t = 0; t < 3; ++t)
      for (std::size_t i = 0; i < 64; ++i)
        CHECK(r[t * 64 + i] == doctest::Approx(spatial_only[i]).epsilon(1e-12));
  }
}

TEST_CASE("finite_difference_grad") {
  SUBCASE("sum of squares") {
    Tensor x({2}, {1.0, 2.0});
    auto f = [](const Tensor& t) { return t[0] * t[0] + t[1] * t[1]; };
    Tensor g = finite_difference_grad(f, x);
    CHECK(g[0] == doctest::Approx(2.0).epsilon(1e-8));
    CHECK(g[1] == doctest::Approx(4.0).epsilon(1e-8));
  }
  SUBCASE("constant function has zero gradient") {
    Tensor x({3}, {0.3, -0.7, 0.1});
    auto f = [](const Tensor&) { return 42.0; };
    Tensor g = finite_difference_grad(f, x);
    for (std::size_t i = 0; i < 3; ++i) CHECK(g[i] == 0.0);
  }
}

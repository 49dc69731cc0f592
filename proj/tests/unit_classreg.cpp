#include <doctest.h>

#include <cmath>

#include "chronokit/classreg.hpp"
#include "chronokit/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace chronokit;

TEST_CASE("remap_class_weights") {
  SUBCASE("identity remap keeps nonnegative weights") {
    Tensor w({2, 3}, {0.1, 0.4, 0.0, 0.7, 0.2, 0.9});
    Tensor remap({3, 3});
    for (std::size_t i = 0; i < 3; ++i) remap(i, i) = 1.0;
    Tensor mapped = remap_class_weights(w, remap);
    for (std::size_t i = 0; i < w.numel(); ++i) CHECK(mapped[i] == w[i]);
  }
  SUBCASE("rows that map all-negative clamp to zero") {
    Tensor w({1, 2}, {1.0, 2.0});
    Tensor remap({2, 2}, {-1.0, -1.0, -2.0, -2.0});
    Tensor mapped = remap_class_weights(w, remap);
    CHECK(mapped(0, 0) == 0.0);
    CHECK(mapped(0, 1) == 0.0);
  }
  SUBCASE("random case equals matrix product plus clamp") {
    Rng rng(3);
    Tensor w = oracles::random_tensor({4, 5}, rng);
    Tensor remap = oracles::random_tensor({3, 5}, rng);
    Tensor mapped = remap_class_weights(w, remap);
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (std::size_t k = 0; k < 5; ++k) acc += remap(c, k) * w(n, k);
        CHECK(mapped(n, c) == doctest::Approx(std::max(acc, 0.0)).epsilon(1e-12));
      }
  }
}

TEST_CASE("select_class") {
  SUBCASE("basis-aligned weights pick the matching class") {
    Tensor a({1, 2, 1, 1, 1});
    a(0, 0, 0, 0, 0) = 1.0;
    Tensor mapped({2, 2}, {1.0, 0.0, 0.0, 1.0});
    CHECK(select_class(a, mapped) == std::vector<std::size_t>{0});
  }
  SUBCASE("ties resolve to class 0") {
    Tensor a({1, 2, 1, 1, 1}, 1.0);
    Tensor mapped({3, 2}, 0.5);
    CHECK(select_class(a, mapped) == std::vector<std::size_t>{0});
  }
  SUBCASE("random N=5 equals the exhaustive argmax") {
    Rng rng(17);
    for (int trial = 0; trial < 100; ++trial) {
      Tensor a = oracles::random_tensor({2, 4, 2, 3, 3}, rng);
      Tensor mapped = oracles::random_tensor({5, 4}, rng, 0.0, 1.0);
      const auto got = select_class(a, mapped);
      for (std::size_t b = 0; b < 2; ++b)
        CHECK(got[b] == oracles::select_class_oracle(a, mapped, b));
    }
  }
  SUBCASE("positive rescaling of the pooled features never changes the pick") {
    Rng rng(19);
    Tensor a = oracles::random_tensor({1, 3, 2, 2, 2}, rng, 0.1, 1.0);
    Tensor mapped = oracles::random_tensor({4, 3}, rng, 0.0, 1.0);
    const auto base = select_class(a, mapped);
    for (double scale : {0.5, 2.0, 17.0}) {
      Tensor scaled = a;
      for (std::size_t i = 0; i < scaled.numel(); ++i) scaled[i] *= scale;
      CHECK(select_class(scaled, mapped) == base);
    }
  }
}

TEST_CASE("normalise_weights") {
  SUBCASE("lambda = 1 gives an all-ones multiplier") {
    const auto out = normalise_weights({0.3, -2.0, 5.5}, 1.0);
    for (double v : out) CHECK(v == 1.0);
  }
  SUBCASE("lambda = 0 is a plain min-max") {
    const auto out = normalise_weights({1.0, 3.0, 2.0}, 0.0);
    CHECK(out[0] == doctest::Approx(0.0));
    CHECK(out[1] == doctest::Approx(1.0));
    CHECK(out[2] == doctest::Approx(0.5));
  }
  SUBCASE("(1,2,3) at lambda 0.6 maps to (0.6, 0.8, 1.0)") {
    const auto out = normalise_weights({1.0, 2.0, 3.0}, 0.6);
    CHECK(out[0] == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(out[1] == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(out[2] == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("a constant row degenerates to ones") {
    const auto out = normalise_weights({0.7, 0.7, 0.7}, 0.5);
    for (double v : out) CHECK(v == 1.0);
  }
  SUBCASE("range lands inside [lambda, 1] with both ends attained") {
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<double> row(6);
      for (auto& v : row) v = rng.uniform(-2.0, 2.0);
      const double lambda = 0.1 + 0.9 * rng.uniform();
      const auto out = normalise_weights(row, lambda);
      double mn = out[0], mx = out[0];
      for (double v : out) {
        mn = std::min(mn, v);
        mx = std::max(mx, v);
        CHECK(v >= lambda - 1e-12);
        CHECK(v <= 1.0 + 1e-12);
      }
      CHECK(mn == doctest::Approx(lambda).epsilon(1e-9));
      CHECK(mx == doctest::Approx(1.0).epsilon(1e-9));
    }
  }
}

TEST_CASE("class_regularise") {
  Rng rng(23);
  SUBCASE("lambda = 1 is a bit-identical pass-through") {
    Tensor a = oracles::random_tensor({2, 3, 2, 4, 4}, rng);
    Tensor w = oracles::random_tensor({4, 5}, rng);
    Tensor remap = oracles::random_tensor({3, 5}, rng);
    ClassRegResult res = class_regularise(a, w, remap, 1.0);
    for (std::size_t i = 0; i < a.numel(); ++i) CHECK(res.output[i] == a[i]);
  }
  SUBCASE("a single class is always selected") {
    Tensor a = oracles::random_tensor({3, 2, 1, 2, 2}, rng);
    Tensor w = oracles::random_tensor({1, 4}, rng);
    Tensor remap = oracles::random_tensor({2, 4}, rng);
    ClassRegResult res = class_regularise(a, w, remap, 0.8);
    for (std::size_t sel : res.selected) CHECK(sel == 0);
  }
  SUBCASE("end-to-end equals the stagewise composition") {
    Tensor a = oracles::random_tensor({2, 3, 2, 2, 2}, rng);
    Tensor w = oracles::random_tensor({4, 5}, rng);
    Tensor remap = oracles::random_tensor({3, 5}, rng);
    const double lambda = 0.7;
    ClassRegResult res = class_regularise(a, w, remap, lambda);
    Tensor mapped = remap_class_weights(w, remap);
    const auto classes = select_class(a, mapped);
    CHECK(res.selected == classes);
    for (std::size_t b = 0; b < 2; ++b) {
      std::vector<double> row(3);
      for (std::size_t c = 0; c < 3; ++c) row[c] = mapped(classes[b], c);
      const auto norm = normalise_weights(row, lambda);
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < 8; ++i) {
          const std::size_t off = (b * 3 + c) * 8 + i;
          CHECK(res.output[off] == doctest::Approx(a[off] * norm[c]).epsilon(1e-12));
        }
    }
  }
  SUBCASE("every channel scales by a factor in [lambda, 1]") {
    Tensor a = oracles::random_tensor({1, 4, 2, 3, 3}, rng, 0.5, 1.5);
    Tensor w = oracles::random_tensor({3, 6}, rng);
    Tensor remap = oracles::random_tensor({4, 6}, rng);
    const double lambda = 0.6;
    ClassRegResult res = class_regularise(a, w, remap, lambda);
    const std::size_t inner = 2 * 3 * 3;
    for (std::size_t c = 0; c < 4; ++c)
      for (std::size_t i = 0; i < inner; ++i) {
        const double ratio = res.output[c * inner + i] / a[c * inner + i];
        CHECK(ratio >= lambda - 1e-9);
        CHECK(ratio <= 1.0 + 1e-9);
      }
  }
}

TEST_CASE("class_regularise backward") {
  Rng rng(31);
  Tensor a = oracles::random_tensor({1, 3, 1, 2, 2}, rng, 0.2, 1.0);
  Tensor w = oracles::random_tensor({3, 4}, rng);
  Tensor remap = oracles::random_tensor({3, 4}, rng);
  Tensor up = oracles::random_tensor(a.shape(), rng);
  const double lambda = 0.7;
  ClassRegGrads g = class_regularise_backward(a, w, remap, lambda, up);

  SUBCASE("input gradient matches finite differences") {
    auto loss = [&](const Tensor& probe) {
      Tensor y = class_regularise(probe, w, remap, lambda).output;
      double acc = 0.0;
      for (std::size_t i = 0; i < y.numel(); ++i) acc += y[i] * up[i];
      return acc;
    };
    CHECK(max_rel_error(g.grad_input, finite_difference_grad(loss, a)) < 1e-5);
  }
  SUBCASE("remap gradient matches finite differences") {
    auto loss = [&](const Tensor& probe) {
      Tensor y = class_regularise(a, w, probe, lambda).output;
      double acc = 0.0;
      for (std::size_t i = 0; i < y.numel(); ++i) acc += y[i] * up[i];
      return acc;
    };
    CHECK(max_rel_error(g.grad_remap, finite_difference_grad(loss, remap)) < 1e-5);
  }
  SUBCASE("lambda = 1 silences the remap gradient") {
    ClassRegGrads g1 = class_regularise_backward(a, w, remap, 1.0, up);
    CHECK(g1.grad_remap.max() == 0.0);
    CHECK(g1.grad_remap.min() == 0.0);
    // pass-through on the input side
    for (std::size_t i = 0; i < up.numel(); ++i) CHECK(g1.grad_input[i] == up[i]);
  }
}

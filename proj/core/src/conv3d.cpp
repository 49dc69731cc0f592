#include "chronokit/conv3d.hpp"

#include <cmath>

#include "chronokit/parallel.hpp"

namespace chronokit {

ConvKernel ConvKernel::make_same(std::size_t out_c, std::size_t in_c, std::size_t kt,
                                 std::size_t kh, std::size_t kw, std::size_t groups) {
  check_shape(kt % 2 == 1 && kh % 2 == 1 && kw % 2 == 1,
              "make_same requires odd kernel extents");
  check_shape(groups >= 1 && out_c % groups == 0 && in_c % groups == 0,
              "groups must divide both channel counts");
  ConvKernel k;
  k.weights = Tensor({out_c, in_c / groups, kt, kh, kw});
  k.bias = Tensor({out_c});
  k.padding = {kt / 2, kh / 2, kw / 2};
  k.groups = groups;
  return k;
}

ConvKernel ConvKernel::pointwise(std::size_t out_c, std::size_t in_c) {
  return make_same(out_c, in_c, 1, 1, 1, 1);
}

void ConvKernel::init_uniform(Rng& rng) {
  const double fan_in = static_cast<double>(in_channels_per_group() *
                                            weights.extent(2) * weights.extent(3) *
                                            weights.extent(4));
  const double bound = 1.0 / std::sqrt(fan_in);
  for (std::size_t i = 0; i < weights.numel(); ++i)
    weights[i] = rng.uniform(-bound, bound);
  for (std::size_t i = 0; i < bias.numel(); ++i) bias[i] = rng.uniform(-bound, bound);
}

void ConvKernel::validate() const {
  check_shape(weights.rank() == 5,
              "kernel weights must be [K,Cg,kt,kh,kw], got " +
                  shape_to_string(weights.shape()));
  check_shape(bias.rank() == 1 && bias.extent(0) == weights.extent(0),
              "bias length must equal output channel count");
  check_shape(groups >= 1 && weights.extent(0) % groups == 0,
              "groups must divide output channels");
  check_shape(stride[0] >= 1 && stride[1] >= 1 && stride[2] >= 1,
              "stride extents must be >= 1");
}

Shape conv3d_output_shape(const Shape& input, const ConvKernel& kernel) {
  check_shape(input.size() == 5,
              "conv3d expects [B,C,T,H,W], got " + shape_to_string(input));
  kernel.validate();
  check_shape(input[1] == kernel.in_channels(),
              "input channels " + std::to_string(input[1]) +
                  " incompatible with kernel group layout (expects " +
                  std::to_string(kernel.in_channels()) + ")");
  Shape out(5);
  out[0] = input[0];
  out[1] = kernel.out_channels();
  for (int axis = 0; axis < 3; ++axis) {
    const std::size_t extent = input[2 + axis];
    const std::size_t k = kernel.weights.extent(2 + axis);
    const std::size_t padded = extent + 2 * kernel.padding[axis];
    check_shape(padded >= k, "kernel extent exceeds padded input on axis " +
                                 std::to_string(axis));
    out[2 + axis] = (padded - k) / kernel.stride[axis] + 1;
  }
  return out;
}

Tensor conv3d(const Tensor& input, const ConvKernel& kernel) {
  const Shape out_shape = conv3d_output_shape(input.shape(), kernel);
  const std::size_t B = input.extent(0), C = input.extent(1);
  const std::size_t T = input.extent(2), H = input.extent(3), W = input.extent(4);
  const std::size_t K = out_shape[1];
  const std::size_t To = out_shape[2], Ho = out_shape[3], Wo = out_shape[4];
  const std::size_t Cg = kernel.in_channels_per_group();
  const std::size_t Kg = K / kernel.groups;
  const std::size_t kt = kernel.weights.extent(2), kh = kernel.weights.extent(3),
                    kw = kernel.weights.extent(4);
  const auto [st, sh, sw] = kernel.stride;
  const auto [pt, ph, pw] = kernel.padding;

  Tensor out(out_shape);
  const double* in = input.data();
  const double* wts = kernel.weights.data();
  double* o = out.data();

  // each (b, k) pair writes a disjoint output slice, so the parallel split
  // is deterministic; tiny workloads stay serial to dodge thread overhead
  const bool parallel = out.numel() >= 32768 && B * K > 1;
  auto compute_slice = [&](std::size_t bk) {
    const std::size_t b = bk / K;
    const std::size_t k = bk % K;
    {
      const std::size_t g = k / Kg;
      const double bias = kernel.bias[k];
      for (std::size_t ot = 0; ot < To; ++ot) {
        for (std::size_t oh = 0; oh < Ho; ++oh) {
          for (std::size_t ow = 0; ow < Wo; ++ow) {
            double acc = bias;
            for (std::size_t cg = 0; cg < Cg; ++cg) {
              const std::size_t c = g * Cg + cg;
              const double* in_c = in + ((b * C + c) * T) * H * W;
              const double* w_c = wts + ((k * Cg + cg) * kt) * kh * kw;
              for (std::size_t dt = 0; dt < kt; ++dt) {
                const std::ptrdiff_t it =
                    static_cast<std::ptrdiff_t>(ot * st + dt) -
                    static_cast<std::ptrdiff_t>(pt);
                if (it < 0 || it >= static_cast<std::ptrdiff_t>(T)) continue;
                for (std::size_t dh = 0; dh < kh; ++dh) {
                  const std::ptrdiff_t ih =
                      static_cast<std::ptrdiff_t>(oh * sh + dh) -
                      static_cast<std::ptrdiff_t>(ph);
                  if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
                  const double* in_row = in_c + (static_cast<std::size_t>(it) * H +
                                                 static_cast<std::size_t>(ih)) *
                                                    W;
                  const double* w_row = w_c + (dt * kh + dh) * kw;
                  for (std::size_t dw = 0; dw < kw; ++dw) {
                    const std::ptrdiff_t iw =
                        static_cast<std::ptrdiff_t>(ow * sw + dw) -
                        static_cast<std::ptrdiff_t>(pw);
                    if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W)) continue;
                    acc += in_row[static_cast<std::size_t>(iw)] * w_row[dw];
                  }
                }
              }
            }
            o[(((b * K + k) * To + ot) * Ho + oh) * Wo + ow] = acc;
          }
        }
      }
    }
  };
  if (parallel) {
    parallel_for(B * K, compute_slice);
  } else {
    for (std::size_t bk = 0; bk < B * K; ++bk) compute_slice(bk);
  }
  return out;
}

ConvGrads conv3d_backward(const Tensor& input, const ConvKernel& kernel,
                          const Tensor& upstream) {
  const Shape out_shape = conv3d_output_shape(input.shape(), kernel);
  check_shape(upstream.shape() == out_shape,
              "upstream " + shape_to_string(upstream.shape()) +
                  " does not match conv3d output " + shape_to_string(out_shape));
  const std::size_t B = input.extent(0), C = input.extent(1);
  const std::size_t T = input.extent(2), H = input.extent(3), W = input.extent(4);
  const std::size_t K = out_shape[1];
  const std::size_t To = out_shape[2], Ho = out_shape[3], Wo = out_shape[4];
  const std::size_t Cg = kernel.in_channels_per_group();
  const std::size_t Kg = K / kernel.groups;
  const std::size_t kt = kernel.weights.extent(2), kh = kernel.weights.extent(3),
                    kw = kernel.weights.extent(4);
  const auto [st, sh, sw] = kernel.stride;
  const auto [pt, ph, pw] = kernel.padding;

  ConvGrads grads;
  grads.grad_input = Tensor(input.shape());
  grads.grad_weights = Tensor(kernel.weights.shape());
  grads.grad_bias = Tensor(kernel.bias.shape());

  const double* in = input.data();
  const double* wts = kernel.weights.data();
  const double* up = upstream.data();
  double* gi = grads.grad_input.data();
  double* gw = grads.grad_weights.data();

  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t k = 0; k < K; ++k) {
      const std::size_t g = k / Kg;
      for (std::size_t ot = 0; ot < To; ++ot) {
        for (std::size_t oh = 0; oh < Ho; ++oh) {
          for (std::size_t ow = 0; ow < Wo; ++ow) {
            const double u = up[(((b * K + k) * To + ot) * Ho + oh) * Wo + ow];
            if (u == 0.0) continue;
            grads.grad_bias[k] += u;
            for (std::size_t cg = 0; cg < Cg; ++cg) {
              const std::size_t c = g * Cg + cg;
              const std::size_t in_base = ((b * C + c) * T) * H * W;
              const std::size_t w_base = ((k * Cg + cg) * kt) * kh * kw;
              for (std::size_t dt = 0; dt < kt; ++dt) {
                const std::ptrdiff_t it =
                    static_cast<std::ptrdiff_t>(ot * st + dt) -
                    static_cast<std::ptrdiff_t>(pt);
                if (it < 0 || it >= static_cast<std::ptrdiff_t>(T)) continue;
                for (std::size_t dh = 0; dh < kh; ++dh) {
                  const std::ptrdiff_t ih =
                      static_cast<std::ptrdiff_t>(oh * sh + dh) -
                      static_cast<std::ptrdiff_t>(ph);
                  if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
                  for (std::size_t dw = 0; dw < kw; ++dw) {
                    const std::ptrdiff_t iw =
                        static_cast<std::ptrdiff_t>(ow * sw + dw) -
                        static_cast<std::ptrdiff_t>(pw);
                    if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W)) continue;
                    const std::size_t in_off =
                        in_base + (static_cast<std::size_t>(it) * H +
                                   static_cast<std::size_t>(ih)) *
                                      W +
                        static_cast<std::size_t>(iw);
                    const std::size_t w_off = w_base + (dt * kh + dh) * kw + dw;
                    gi[in_off] += u * wts[w_off];
                    gw[w_off] += u * in[in_off];
                  }
                }
              }
            }
          }
        }
      }
    }
  }
  return grads;
}

}  // namespace chronokit

#pragma once

#include <array>

#include "chronokit/rng.hpp"
#include "chronokit/tensor.hpp"

namespace chronokit {

// Dense 3D convolution kernel. weights are [K, C_per_group, kt, kh, kw];
// groups must divide K and the input channel count.
struct ConvKernel {
  Tensor weights;
  Tensor bias;                      // [K]
  std::array<std::size_t, 3> stride{1, 1, 1};
  std::array<std::size_t, 3> padding{0, 0, 0};
  std::size_t groups = 1;

  std::size_t out_channels() const { return weights.extent(0); }
  std::size_t in_channels_per_group() const { return weights.extent(1); }
  std::size_t in_channels() const { return in_channels_per_group() * groups; }

  // odd-extent kernel with "same" padding, unit stride
  static ConvKernel make_same(std::size_t out_c, std::size_t in_c, std::size_t kt,
                              std::size_t kh, std::size_t kw, std::size_t groups = 1);
  static ConvKernel pointwise(std::size_t out_c, std::size_t in_c);

  void init_uniform(Rng& rng);   // fan-in scaled uniform
  void validate() const;
};

Shape conv3d_output_shape(const Shape& input, const ConvKernel& kernel);

// Direct-sum (naive loop) convolution over [B,C,T,H,W].
Tensor conv3d(const Tensor& input, const ConvKernel& kernel);

struct ConvGrads {
  Tensor grad_input;
  Tensor grad_weights;
  Tensor grad_bias;
};

// Exact reverse-mode gradients of conv3d.
ConvGrads conv3d_backward(const Tensor& input, const ConvKernel& kernel,
                          const Tensor& upstream);

}  // namespace chronokit

#pragma once

#include "chronokit/tensor.hpp"

namespace chronokit {

// Per-channel standardization over (B,T,H,W) with learned scale and shift.
// Bypass mode turns the layer into identity (used by oracle tests and
// gradient checks, where batch statistics would couple the coordinates).
struct NormParams {
  Tensor gamma;  // [C]
  Tensor beta;   // [C]
  bool bypass = true;
  double eps = 1e-5;

  static NormParams identity(std::size_t channels, bool bypass = true);
};

struct NormCache {
  Tensor input;
  Tensor normalized;   // (x - mean) / sqrt(var + eps)
  std::vector<double> mean, inv_std;
  bool bypass = true;
};

Tensor norm_forward(const Tensor& input, const NormParams& p, NormCache* cache = nullptr);

struct NormGrads {
  Tensor grad_input;
  Tensor grad_gamma;
  Tensor grad_beta;
};

NormGrads norm_backward(const NormCache& cache, const NormParams& p,
                        const Tensor& upstream);

}  // namespace chronokit

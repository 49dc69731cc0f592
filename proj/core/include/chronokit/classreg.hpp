#pragma once

#include <vector>

#include "chronokit/tensor.hpp"

namespace chronokit {

// ReLU(Wmap . W_n) per class: remaps prediction weights [N,C'] into the
// layer's feature space via the learned pointwise transform Wmap [C,C'].
Tensor remap_class_weights(const Tensor& class_weights, const Tensor& remap);

// Pools a over (T,H,W), scores each class by sum_c W_mapped[n,c] * abar[c],
// returns the argmax per batch item (ties to the lowest index).
std::vector<std::size_t> select_class(const Tensor& a, const Tensor& mapped);

// lambda + (w - min)(1 - lambda)/(max - min), mapping into [lambda, 1];
// a constant row degenerates to all ones.
std::vector<double> normalise_weights(const std::vector<double>& row, double lambda);

struct ClassRegResult {
  Tensor output;
  std::vector<std::size_t> selected;  // class index per batch item
};

// Full Class Regularisation pass: remap -> select -> normalise -> channel-wise
// amplification. W is decoupled (no gradient ever flows to it).
ClassRegResult class_regularise(const Tensor& a, const Tensor& class_weights,
                                const Tensor& remap, double lambda);

struct ClassRegGrads {
  Tensor grad_input;
  Tensor grad_remap;
  // grad for the prediction weights is identically zero by contract
};

ClassRegGrads class_regularise_backward(const Tensor& a, const Tensor& class_weights,
                                        const Tensor& remap, double lambda,
                                        const Tensor& upstream);

}  // namespace chronokit

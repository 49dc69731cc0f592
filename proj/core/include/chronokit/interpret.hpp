#pragma once

#include <optional>
#include <string>
#include <vector>

#include "chronokit/conv3d.hpp"
#include "chronokit/tensor.hpp"

namespace chronokit {

// [0,1]-valued spatio-temporal mask aligned to the input extents.
struct SaliencyVolume {
  Tensor values;  // [T,H,W]
  std::size_t class_index = 0;
  double tau = 0.0;
  bool empty_after_threshold = false;
};

// f = y * a_j, then min-max over the region; a constant map yields zeros.
Tensor normalized_class_weighting(const Tensor& a_j, double y);

// Per channel j: normalized_class_weighting(a[j], w_c[j]), stacked.
Tensor class_activation_map(const Tensor& a, const std::vector<double>& w_c);

// Channels whose weighted-activation max falls below tau * (global max) are
// dropped (tau = 0 keeps every channel); the surviving squared maps are
// summed, renormalized to [0,1], and spline-resized to the input extents.
SaliencyVolume saliency_tube(const Tensor& a_last, const std::vector<double>& y_i,
                             double tau, std::size_t t_in, std::size_t h_in,
                             std::size_t w_in, std::size_t class_index = 0);

enum class BackstepMode { FeatureWise, LayerWise };

struct BackstepConfig {
  double theta = 0.6;
  std::size_t depth = 1;
  BackstepMode mode = BackstepMode::FeatureWise;
};

// Thresholded sigmoid selection: channel summaries s_j above theta survive
// (sigma(s - theta) > 1/2), ascending order. Empty selections are allowed.
std::vector<std::size_t> select_features(const std::vector<double>& summaries,
                                         double theta);
std::vector<double> channel_summaries(const Tensor& a_star);

// Pooled kernel-activation association for one back-step:
// abar = global channel means of the previous activations, kbar = per-input-
// channel kernel means; each selected kernel contributes min-max normalized
// abar (*) kbar.
struct BackstepVectors {
  std::vector<std::vector<double>> per_kernel;  // FeatureWise view
  std::vector<double> layer_average;            // LayerWise view
};
BackstepVectors backstep_layer(const Tensor& a_prev, const Tensor& kernels,
                               const std::vector<std::size_t>& selected);

enum class CfpBlockKind { Plain, Residual, Grouped, Branched };

struct AdaptedBlock {
  std::vector<std::vector<Tensor>> branch_kernels;      // per branch, per stage
  std::vector<std::vector<Tensor>> branch_activations;  // per branch stage inputs
  bool skip_passthrough = false;  // Residual: ones surrogate on the skip
};

// Residual adds a ones surrogate on the skip path; Grouped zero-inflates each
// group kernel to the full channel width; Branched pads shorter branches with
// ones-kernels so every path has the same depth.
AdaptedBlock adapt_block(CfpBlockKind kind,
                         const std::vector<std::vector<Tensor>>& branch_kernels,
                         const std::vector<std::vector<Tensor>>& branch_activations,
                         std::size_t groups = 1);

// zero-inflation of grouped kernels to the full input width
Tensor inflate_grouped_kernel(const Tensor& weights, std::size_t groups);

// One stage of a recorded trace: the kernels of a conv layer and the
// activation volume that entered it.
struct TraceStage {
  Tensor kernels;     // [K, C, kt, kh, kw]
  Tensor input;       // [C, T, H, W]
  CfpBlockKind kind = CfpBlockKind::Plain;
  std::size_t groups = 1;
};

// Recorded activations for a class traversal: stages run input -> output, and
// final_activation is the last conv layer's output [C',T',H',W'].
struct ActivationTrace {
  std::vector<TraceStage> stages;
  Tensor final_activation;
};

struct PyramidEdge {
  std::size_t layer;        // back-step depth the edge was found at (1-based)
  long parent;              // -1 encodes the layer-wise aggregate
  std::size_t child;
  double score;
  bool operator==(const PyramidEdge&) const = default;
};

struct PyramidReport {
  std::vector<std::vector<std::size_t>> selected;  // per traversed layer
  std::vector<PyramidEdge> edges;
  double elapsed_ms = 0.0;
  bool truncated = false;  // depth exceeded the recorded network

  bool same_structure(const PyramidReport& other) const;
};

// Alternates select_features and backstep_layer from the prediction weights
// down through cfg.depth recorded stages.
PyramidReport backstep_traverse(const ActivationTrace& trace,
                                const std::vector<double>& class_weights_row,
                                const BackstepConfig& cfg);

// report file: one line per edge "layer,parent,child,score" (6-decimal scores)
void write_report(const std::string& path, const PyramidReport& report);
PyramidReport parse_report(const std::string& path);

}  // namespace chronokit

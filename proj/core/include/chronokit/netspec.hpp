#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "chronokit/classreg.hpp"
#include "chronokit/interpret.hpp"
#include "chronokit/mtconv.hpp"
#include "chronokit/schedule.hpp"
#include "chronokit/srtg.hpp"

namespace chronokit {

enum class NetBlockKind { Plain, Residual, Bottleneck, MtConv };

// One line of a NetSpec file:
//   kind=<plain|residual|bottleneck|mtconv> channels=<in:mid:out>
//   srtg=<none|start|top|mid|end|res|final> delta=<rational|none>
//   classreg=<lambda|none>
struct BlockDesc {
  NetBlockKind kind = NetBlockKind::Plain;
  std::size_t c_in = 0, c_mid = 0, c_out = 0;
  std::optional<SrtgPlacement> srtg;
  std::optional<double> delta;
  std::optional<double> classreg_lambda;
};

struct NetSpec {
  std::vector<BlockDesc> blocks;

  static NetSpec parse(std::istream& in);
  static NetSpec parse_file(const std::string& path);
  static NetSpec parse_string(const std::string& text);
  // channel chaining, delta validity, non-increasing lambda schedule
  void validate() const;
};

struct NetOptions {
  std::size_t classes = 2;
  std::uint64_t seed = 0;
  std::optional<GateMode> gate_override;  // replaces Active on gated blocks
  bool norm_per_batch = false;
  PoolBackward pool_backward = PoolBackward::ExactAutodiff;
};

struct NetBlock {
  BlockDesc desc;
  bool has_entry = false;
  ConvKernel entry;  // pointwise lift when the residual skip needs width change
  // exactly one of these is active, per desc.kind
  ConvKernel plain_conv;
  NormParams plain_norm;
  SrtgBlockParams srtg;
  MtBlockParams mt;
  // optional Class Regularisation attachment
  bool has_classreg = false;
  double lambda = 1.0;
  Tensor remap;  // [c_out, head feature width]
};

struct Network {
  NetSpec spec;
  NetOptions options;
  std::vector<NetBlock> blocks;
  Tensor head_w;  // [classes, C_last]
  Tensor head_b;  // [classes]
  std::size_t input_channels = 0;
};

Network build_net(const NetSpec& spec, const NetOptions& options);

// deterministic enumeration of every trainable tensor
std::vector<Tensor*> network_params(Network& net);

struct ForwardRecord {
  std::vector<Tensor> block_inputs;
  std::vector<Tensor> block_outputs;
  Tensor features;  // pooled [B,C_last]
  Tensor logits;    // [B,classes]
};

Tensor network_forward(const Network& net, const Tensor& x,
                       ForwardRecord* record = nullptr);

struct LossGrads {
  double loss = 0.0;
  double accuracy = 0.0;
  std::vector<Tensor> grads;  // aligned with network_params order
};

// softmax cross-entropy over the batch; gradients for every parameter
LossGrads network_backward(Network& net, const Tensor& x,
                           const std::vector<std::size_t>& labels);

struct BlockFlops {
  double base = 0.0;  // plain convolutional path
  double aux = 0.0;   // SR/SRTG attention, gates, Class Regularisation
};

struct FlopReport {
  std::vector<BlockFlops> blocks;
  double head = 0.0;
  double total_base() const;
  double total_aux() const;
};

// multiply-add = 2 FLOPs; exponentials and divisions count 1 each;
// weight values never enter the count
FlopReport count_flops(const NetSpec& spec, std::size_t batch, std::size_t t,
                       std::size_t h, std::size_t w, std::size_t classes);

// 2 * K * (C per group) * kernel volume * output volume
double conv3d_flops(double out_channels, double in_channels_per_group,
                    double kernel_volume, double output_volume);

struct SyntheticDataset {
  Tensor clips;  // [N,1,T,H,W]
  std::vector<std::size_t> labels;
  std::uint64_t seed = 0;
};

// Two classes of moving-patch clips: a bright square drifts right (class 0)
// or left (class 1); deterministic per seed, classes balanced.
SyntheticDataset make_motion_dataset(std::size_t clips, std::size_t t, std::size_t h,
                                     std::size_t w, std::uint64_t seed);

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t batch_size = 16;
  LrSchedule lr;               // Step mode with no points = constant lr0
  double momentum = 0.9;
  double weight_decay = 1e-5;
  double stop_accuracy = 1.01;  // early stop once training accuracy reaches this
  std::uint64_t shuffle_seed = 0;
};

struct TrainCurve {
  std::vector<double> loss;
  std::vector<double> accuracy;
  bool diverged = false;
  std::size_t epochs_run = 0;
};

TrainCurve train_demo(Network& net, const SyntheticDataset& data,
                      const TrainConfig& cfg);

// Per-layer conv stages and the final activation for a single clip
// [1,C,T,H,W]; feeds backstep_traverse.
ActivationTrace record_activations(const Network& net, const Tensor& clip);

// STV1 bundle with an index file; head weights ride along for the CLI
void write_trace(const std::string& dir, const ActivationTrace& trace,
                 const Tensor& head_w);
ActivationTrace read_trace(const std::string& dir, Tensor* head_w = nullptr);

}  // namespace chronokit

#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "fairdet/tensor.hpp"

namespace fairdet {

struct DetectorConfig {
  Index height = 16;
  Index width = 16;
  Index in_channels = 1;
  std::vector<Index> channels{8, 16};
  Index kernel = 3;
  Index stride = 1;
  /// Pixels enter the first convolution as (x - input_mean) * input_scale.
  double input_mean = 0.5;
  double input_scale = 5.0;

  /// Channel count of the last convolution (the head width).
  Index last_channels() const { return channels.empty() ? 0 : channels.back(); }
  /// Spatial size (H', W') of the last feature map.
  std::pair<Index, Index> feature_size() const;
  void validate() const;

  bool operator==(const DetectorConfig&) const = default;
};

/// Per-channel decoupling state of the last convolution. Decoupled channels
/// are zeroed before pooling, in training and at inference.
class ChannelMask {
 public:
  ChannelMask() = default;
  explicit ChannelMask(Index channels) : decoupled_(static_cast<std::size_t>(channels), false) {}

  Index channels() const { return static_cast<Index>(decoupled_.size()); }
  bool is_decoupled(Index c) const { return decoupled_.at(static_cast<std::size_t>(c)); }
  Index decoupled_count() const;
  Index active_count() const { return channels() - decoupled_count(); }
  std::vector<int> active_channels() const;
  std::vector<int> decoupled_channels() const;

  /// Marks `newly` as decoupled and appends them as one history entry.
  /// Throws StateError if this would decouple every channel.
  void decouple(const std::vector<int>& newly);

  const std::vector<std::vector<int>>& history() const { return history_; }

  /// 1 for active channels, 0 for decoupled ones.
  std::vector<double> keep_factors() const;

  bool operator==(const ChannelMask&) const = default;

 private:
  std::vector<bool> decoupled_;
  std::vector<std::vector<int>> history_;
};

/// Trainable parameters in declaration order: for each conv layer its kernel
/// [Cout,Cin,k,k] then bias [Cout]; then head weight [2,C] and bias [2].
struct DetectorWeights {
  std::vector<Tensor> conv_kernels;
  std::vector<Tensor> conv_biases;
  Tensor head_weight;
  Tensor head_bias;

  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
  Index parameter_count() const;
  bool operator==(const DetectorWeights&) const = default;
};

struct ForwardResult {
  Var features;   // [B,C,H',W'] last-convolution activations, before masking
  Var logits;     // [B,2]
  Var fake_prob;  // [B]
  std::vector<Var> params;  // leaves, same order as DetectorWeights::parameters()
};

/// Hook that may overwrite the pre-mask feature map (tests use it to inject
/// values into decoupled channels).
using FeatureTamper = std::function<void(Tensor&)>;

class Detector {
 public:
  Detector() = default;
  /// Glorot-uniform weights, zero biases.
  Detector(DetectorConfig config, std::uint64_t seed);
  Detector(DetectorConfig config, DetectorWeights weights);

  const DetectorConfig& config() const { return config_; }
  DetectorWeights& weights() { return weights_; }
  const DetectorWeights& weights() const { return weights_; }

  /// Records the forward pass on `graph`. `images` is [B,Cin,H,W].
  ForwardResult forward(Graph& graph, const Tensor& images, const ChannelMask& mask, bool track_params = true,
                        const FeatureTamper& tamper = {}) const;

  /// Inference helpers (own graph, no gradient tracking).
  Tensor logits(const Tensor& images, const ChannelMask& mask, const FeatureTamper& tamper = {}) const;
  Eigen::VectorXd fake_probability(const Tensor& images, const ChannelMask& mask) const;
  Tensor feature_map(const Tensor& images) const;

  /// theta <- theta - lr * grad, grads in parameters() order.
  void sgd_step(const std::vector<Tensor>& grads, double lr);

  bool operator==(const Detector& o) const { return config_ == o.config_ && weights_ == o.weights_; }

 private:
  DetectorConfig config_;
  DetectorWeights weights_;
};

/// Batch cross-entropy over a mixed real/fake batch.
Var classification_loss(Var logits, std::span<const int> labels);

// Checkpoint layout (all integers little-endian):
//   8 bytes  magic "FAIRDET1"
//   u32 height, u32 width, u32 in_channels, u32 kernel, u32 stride,
//   f64 input_mean, f64 input_scale,
//   u32 layer count L, L x u32 channel counts
//   u64 parameter count P, P x f64 weights in DetectorWeights::parameters() order
//   u32 C, C x u8 mask bits (1 = decoupled)
//   u32 history entries E, then per entry: u32 n, n x u32 channel indices
void save_checkpoint(std::ostream& os, const Detector& det, const ChannelMask& mask);
void save_checkpoint(const std::string& path, const Detector& det, const ChannelMask& mask);
std::pair<Detector, ChannelMask> load_checkpoint(std::istream& is);
std::pair<Detector, ChannelMask> load_checkpoint(const std::string& path);

}  // namespace fairdet

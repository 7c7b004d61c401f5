#include "fairdet/detector.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "binary_io.hpp"

namespace fairdet {

std::pair<Index, Index> DetectorConfig::feature_size() const {
  Index h = height, w = width;
  for (std::size_t i = 0; i < channels.size(); ++i) {
    h = (h - kernel) / stride + 1;
    w = (w - kernel) / stride + 1;
  }
  return {h, w};
}

void DetectorConfig::validate() const {
  if (height < 1 || width < 1 || in_channels < 1) throw ConfigError("detector input size must be positive");
  if (channels.empty()) throw ConfigError("detector needs at least one convolution layer");
  for (Index c : channels)
    if (c < 1) throw ConfigError("detector channel counts must be positive");
  if (last_channels() < 4) throw ConfigError("last convolution needs at least 4 channels");
  if (kernel < 1 || stride < 1) throw ConfigError("kernel and stride must be positive");
  if (!std::isfinite(input_mean) || !std::isfinite(input_scale) || input_scale <= 0.0) {
    throw ConfigError("input normalization must be finite with a positive scale");
  }
  Index h = height, w = width;
  for (std::size_t i = 0; i < channels.size(); ++i) {
    if (kernel > h || kernel > w) throw ConfigError("input too small for the convolution stack");
    h = (h - kernel) / stride + 1;
    w = (w - kernel) / stride + 1;
  }
}

Index ChannelMask::decoupled_count() const {
  return static_cast<Index>(std::count(decoupled_.begin(), decoupled_.end(), true));
}

std::vector<int> ChannelMask::active_channels() const {
  std::vector<int> out;
  for (std::size_t c = 0; c < decoupled_.size(); ++c)
    if (!decoupled_[c]) out.push_back(static_cast<int>(c));
  return out;
}

std::vector<int> ChannelMask::decoupled_channels() const {
  std::vector<int> out;
  for (std::size_t c = 0; c < decoupled_.size(); ++c)
    if (decoupled_[c]) out.push_back(static_cast<int>(c));
  return out;
}

void ChannelMask::decouple(const std::vector<int>& newly) {
  std::vector<bool> next = decoupled_;
  for (int c : newly) {
    if (c < 0 || c >= channels()) throw DimensionError("channel index " + std::to_string(c) + " out of range");
    if (next[static_cast<std::size_t>(c)]) throw StateError("channel " + std::to_string(c) + " already decoupled");
    next[static_cast<std::size_t>(c)] = true;
  }
  if (std::find(next.begin(), next.end(), false) == next.end()) {
    throw StateError("refusing to decouple every channel");
  }
  decoupled_ = std::move(next);
  history_.push_back(newly);
}

std::vector<double> ChannelMask::keep_factors() const {
  std::vector<double> k(decoupled_.size());
  for (std::size_t c = 0; c < k.size(); ++c) k[c] = decoupled_[c] ? 0.0 : 1.0;
  return k;
}

std::vector<Tensor*> DetectorWeights::parameters() {
  std::vector<Tensor*> out;
  for (std::size_t i = 0; i < conv_kernels.size(); ++i) {
    out.push_back(&conv_kernels[i]);
    out.push_back(&conv_biases[i]);
  }
  out.push_back(&head_weight);
  out.push_back(&head_bias);
  return out;
}

std::vector<const Tensor*> DetectorWeights::parameters() const {
  std::vector<const Tensor*> out;
  for (auto* p : const_cast<DetectorWeights*>(this)->parameters()) out.push_back(p);
  return out;
}

Index DetectorWeights::parameter_count() const {
  Index n = 0;
  for (const Tensor* p : parameters()) n += p->size();
  return n;
}

namespace {

Tensor glorot(Shape shape, Index fan_in, Index fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Tensor t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = dist(rng);
  return t;
}

}  // namespace

Detector::Detector(DetectorConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  std::mt19937_64 rng(seed);
  Index cin = config_.in_channels;
  const Index k = config_.kernel;
  for (Index cout : config_.channels) {
    weights_.conv_kernels.push_back(glorot({cout, cin, k, k}, cin * k * k, cout * k * k, rng));
    weights_.conv_biases.emplace_back(Shape{cout}, 0.0);
    cin = cout;
  }
  weights_.head_weight = glorot({2, cin}, cin, 2, rng);
  weights_.head_bias = Tensor({2}, 0.0);
}

Detector::Detector(DetectorConfig config, DetectorWeights weights)
    : config_(std::move(config)), weights_(std::move(weights)) {
  config_.validate();
  if (weights_.conv_kernels.size() != config_.channels.size() ||
      weights_.conv_biases.size() != config_.channels.size()) {
    throw DimensionError("weights do not match the detector layer count");
  }
  Index cin = config_.in_channels;
  for (std::size_t i = 0; i < config_.channels.size(); ++i) {
    const Index cout = config_.channels[i];
    if (weights_.conv_kernels[i].shape() != Shape{cout, cin, config_.kernel, config_.kernel} ||
        weights_.conv_biases[i].shape() != Shape{cout}) {
      throw DimensionError("conv layer " + std::to_string(i) + " weight shape mismatch");
    }
    cin = cout;
  }
  if (weights_.head_weight.shape() != Shape{2, cin} || weights_.head_bias.shape() != Shape{2}) {
    throw DimensionError("head weight shape mismatch");
  }
}

ForwardResult Detector::forward(Graph& graph, const Tensor& images, const ChannelMask& mask, bool track_params,
                                const FeatureTamper& tamper) const {
  const Shape expect{images.rank() == 4 ? images.dim(0) : 0, config_.in_channels, config_.height, config_.width};
  if (images.rank() != 4 || images.shape() != expect) {
    throw DimensionError("detector expects images [B," + std::to_string(config_.in_channels) + "," +
                         std::to_string(config_.height) + "," + std::to_string(config_.width) + "], got " +
                         shape_string(images.shape()));
  }
  if (images.dim(0) == 0) throw DimensionError("empty batch");
  if (mask.channels() != config_.last_channels()) throw DimensionError("mask width does not match last layer");

  ForwardResult r;
  for (const Tensor* p : weights_.parameters()) r.params.push_back(graph.leaf(*p, track_params));

  Tensor normalized = images;
  normalized.data() = (normalized.data().array() - config_.input_mean) * config_.input_scale;
  Var x = graph.leaf(std::move(normalized));
  for (std::size_t i = 0; i < config_.channels.size(); ++i) {
    x = conv2d(x, r.params[2 * i], config_.stride);
    x = channel_bias(x, r.params[2 * i + 1]);
    x = relu(x);
  }
  r.features = x;
  if (tamper) {
    Tensor t = x.value();
    tamper(t);
    x = graph.leaf(std::move(t));
  }
  const std::vector<double> keep = mask.keep_factors();
  Var pooled = global_avg_pool(channel_mask(x, keep));
  r.logits = dense(pooled, r.params[r.params.size() - 2], r.params.back());
  r.fake_prob = softmax_column(r.logits, 1);
  return r;
}

Tensor Detector::logits(const Tensor& images, const ChannelMask& mask, const FeatureTamper& tamper) const {
  Graph g;
  return forward(g, images, mask, false, tamper).logits.value();
}

Eigen::VectorXd Detector::fake_probability(const Tensor& images, const ChannelMask& mask) const {
  Graph g;
  return forward(g, images, mask, false).fake_prob.value().data();
}

Tensor Detector::feature_map(const Tensor& images) const {
  Graph g;
  return forward(g, images, ChannelMask(config_.last_channels()), false).features.value();
}

void Detector::sgd_step(const std::vector<Tensor>& grads, double lr) {
  auto params = weights_.parameters();
  if (grads.size() != params.size()) throw DimensionError("gradient count does not match parameter count");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape() != params[i]->shape()) throw DimensionError("gradient shape mismatch");
    params[i]->data() -= lr * grads[i].data();
  }
}

Var classification_loss(Var logits, std::span<const int> labels) { return cross_entropy(logits, labels); }

namespace {
constexpr char kCheckpointMagic[9] = "FAIRDET1";
}

void save_checkpoint(std::ostream& os, const Detector& det, const ChannelMask& mask) {
  const DetectorConfig& c = det.config();
  io::put_magic(os, kCheckpointMagic);
  for (Index v : {c.height, c.width, c.in_channels, c.kernel, c.stride}) io::put<std::uint32_t>(os, static_cast<std::uint32_t>(v));
  io::put_f64(os, c.input_mean);
  io::put_f64(os, c.input_scale);
  io::put<std::uint32_t>(os, static_cast<std::uint32_t>(c.channels.size()));
  for (Index ch : c.channels) io::put<std::uint32_t>(os, static_cast<std::uint32_t>(ch));
  io::put<std::uint64_t>(os, static_cast<std::uint64_t>(det.weights().parameter_count()));
  for (const Tensor* p : det.weights().parameters())
    for (Index i = 0; i < p->size(); ++i) io::put_f64(os, (*p)[i]);
  io::put<std::uint32_t>(os, static_cast<std::uint32_t>(mask.channels()));
  for (Index ch = 0; ch < mask.channels(); ++ch) io::put<std::uint8_t>(os, mask.is_decoupled(ch) ? 1 : 0);
  io::put<std::uint32_t>(os, static_cast<std::uint32_t>(mask.history().size()));
  for (const auto& entry : mask.history()) {
    io::put<std::uint32_t>(os, static_cast<std::uint32_t>(entry.size()));
    for (int ch : entry) io::put<std::uint32_t>(os, static_cast<std::uint32_t>(ch));
  }
  if (!os) throw DataError("failed writing checkpoint");
}

void save_checkpoint(const std::string& path, const Detector& det, const ChannelMask& mask) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path + " for writing");
  save_checkpoint(os, det, mask);
}

std::pair<Detector, ChannelMask> load_checkpoint(std::istream& is) {
  io::expect_magic(is, kCheckpointMagic);
  DetectorConfig c;
  c.height = io::get<std::uint32_t>(is);
  c.width = io::get<std::uint32_t>(is);
  c.in_channels = io::get<std::uint32_t>(is);
  c.kernel = io::get<std::uint32_t>(is);
  c.stride = io::get<std::uint32_t>(is);
  c.input_mean = io::get_f64(is);
  c.input_scale = io::get_f64(is);
  c.channels.resize(io::get<std::uint32_t>(is));
  for (Index& ch : c.channels) ch = io::get<std::uint32_t>(is);
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw DataError(std::string("checkpoint config invalid: ") + e.what());
  }

  Detector shape_donor(c, 0);
  DetectorWeights w = shape_donor.weights();
  const auto count = io::get<std::uint64_t>(is);
  if (count != static_cast<std::uint64_t>(w.parameter_count())) throw DataError("checkpoint parameter count mismatch");
  for (Tensor* p : w.parameters())
    for (Index i = 0; i < p->size(); ++i) (*p)[i] = io::get_f64(is);

  const auto channels = io::get<std::uint32_t>(is);
  if (channels != static_cast<std::uint32_t>(c.last_channels())) throw DataError("checkpoint mask width mismatch");
  std::vector<bool> bits(channels);
  for (std::uint32_t ch = 0; ch < channels; ++ch) bits[ch] = io::get<std::uint8_t>(is) != 0;
  ChannelMask mask(c.last_channels());
  const auto entries = io::get<std::uint32_t>(is);
  for (std::uint32_t e = 0; e < entries; ++e) {
    std::vector<int> entry(io::get<std::uint32_t>(is));
    for (int& ch : entry) ch = static_cast<int>(io::get<std::uint32_t>(is));
    mask.decouple(entry);
  }
  for (std::uint32_t ch = 0; ch < channels; ++ch)
    if (bits[ch] != mask.is_decoupled(ch)) throw DataError("checkpoint mask bits disagree with history");
  return {Detector(c, std::move(w)), std::move(mask)};
}

std::pair<Detector, ChannelMask> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path);
  return load_checkpoint(is);
}

}  // namespace fairdet

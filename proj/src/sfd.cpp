#include "fairdet/sfd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

namespace fairdet {

double snnl_channel(const Eigen::Ref<const Eigen::MatrixXd>& features, std::span<const int> attrs,
                    const SnnlParams& params) {
  const Index b = features.rows();
  if (b < 2) throw DomainError("snnl needs at least two samples");
  if (static_cast<Index>(attrs.size()) != b) throw DimensionError("snnl: one attribute per sample required");
  if (!(params.temperature > 0.0)) throw DomainError("snnl temperature must be positive");
  if (!(params.clamp > 0.0)) throw DomainError("snnl clamp must be positive");
  if (!features.allFinite()) throw NumericError("snnl: non-finite features");

  Eigen::MatrixXd dist(b, b);
  for (Index i = 0; i < b; ++i)
    for (Index j = i; j < b; ++j) dist(i, j) = dist(j, i) = (features.row(i) - features.row(j)).squaredNorm();

  double total = 0.0;
  for (Index i = 0; i < b; ++i) {
    double nearest = std::numeric_limits<double>::infinity();
    for (Index y = 0; y < b; ++y)
      if (y != i) nearest = std::min(nearest, dist(i, y));
    double num = 0.0, den = 0.0;
    for (Index y = 0; y < b; ++y) {
      if (y == i) continue;
      const double k = std::exp(-(dist(i, y) - nearest) / params.temperature);
      den += k;
      if (attrs[static_cast<std::size_t>(y)] == attrs[static_cast<std::size_t>(i)]) num += k;
    }
    num = std::max(num, params.clamp);
    total -= std::log(std::max(num / den, params.clamp));
  }
  return total / static_cast<double>(b);
}

FairnessIndexTable fairness_index(std::vector<std::vector<double>> per_batch_losses) {
  FairnessIndexTable t;
  t.losses = std::move(per_batch_losses);
  for (const auto& row : t.losses) {
    if (row.empty()) continue;
    if (t.batches == 0) t.batches = static_cast<Index>(row.size());
    else if (t.batches != static_cast<Index>(row.size())) throw DimensionError("unequal batch counts across channels");
  }
  if (t.batches == 0) throw DomainError("fairness index needs at least one batch");
  t.index = Eigen::VectorXd::Constant(t.channels(), std::numeric_limits<double>::quiet_NaN());
  for (Index k = 0; k < t.channels(); ++k) {
    const auto& row = t.losses[static_cast<std::size_t>(k)];
    if (row.empty()) continue;
    double acc = 0.0;
    for (double l : row) acc += std::abs(l);
    t.index[k] = acc / static_cast<double>(t.batches);
  }
  return t;
}

std::vector<int> decouple_candidates(const Eigen::VectorXd& fairness, double pr_c, const ChannelMask& mask) {
  if (fairness.size() != mask.channels()) throw DimensionError("fairness index width does not match mask");
  if (!(pr_c >= 0.0 && pr_c <= 100.0)) throw DomainError("decoupling ratio must lie in [0,100]");
  std::vector<int> active = mask.active_channels();
  if (active.empty()) throw StateError("all channels are already decoupled");
  if (pr_c == 0.0 || active.size() == 1) return {};
  const auto n_active = static_cast<Index>(active.size());
  Index take = static_cast<Index>(std::floor(pr_c / 100.0 * static_cast<double>(n_active) + 1e-9));
  take = std::clamp<Index>(take, 1, n_active - 1);
  for (int c : active)
    if (std::isnan(fairness[c])) throw DomainError("active channel " + std::to_string(c) + " has no fairness index");
  std::stable_sort(active.begin(), active.end(), [&](int a, int b) { return fairness[a] < fairness[b]; });
  active.resize(static_cast<std::size_t>(take));
  return active;
}

ChannelMask select_decouple(const Eigen::VectorXd& fairness, double pr_c, ChannelMask mask) {
  std::vector<int> chosen = decouple_candidates(fairness, pr_c, mask);
  if (!chosen.empty()) mask.decouple(chosen);
  return mask;
}

FairnessIndexTable score_channels(const Detector& det, const ChannelMask& mask, const Dataset& data,
                                  std::span<const int> indices, Index batch_size, Index max_batches,
                                  const SnnlParams& params, Axis axis) {
  if (batch_size < 2) throw DomainError("scoring batches need at least two samples");
  const Index channels = det.config().last_channels();
  std::vector<std::vector<double>> losses(static_cast<std::size_t>(channels));
  const std::vector<int> active = mask.active_channels();
  Index done = 0;
  for (std::size_t start = 0; start + 2 <= indices.size() && done < max_batches; start += static_cast<std::size_t>(batch_size)) {
    const std::size_t stop = std::min(indices.size(), start + static_cast<std::size_t>(batch_size));
    const auto batch = indices.subspan(start, stop - start);
    const Tensor fm = det.feature_map(batch_images(data, batch));
    const std::vector<int> attrs = batch_groups(data, batch, axis);
    const Index b = fm.dim(0), cells = fm.dim(2) * fm.dim(3);
    Eigen::MatrixXd channel(b, cells);
    for (int k : active) {
      for (Index i = 0; i < b; ++i)
        channel.row(i) = fm.data().segment((i * channels + k) * cells, cells).transpose();
      losses[static_cast<std::size_t>(k)].push_back(snnl_channel(channel, attrs, params));
    }
    ++done;
  }
  return fairness_index(std::move(losses));
}

void write_fairness_index_csv(std::ostream& os, const FairnessIndexTable& table, const ChannelMask& mask) {
  os << "channel_index,F_k,decoupled_flag\n";
  for (Index k = 0; k < table.channels(); ++k) {
    os << k << ',' << table.index[k] << ',' << (k < mask.channels() && mask.is_decoupled(k) ? 1 : 0) << '\n';
  }
}

}  // namespace fairdet

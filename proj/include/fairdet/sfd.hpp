#pragma once

#include <iosfwd>
#include <span>
#include <vector>

#include "fairdet/detector.hpp"
#include "fairdet/synthdata.hpp"

namespace fairdet {

struct SnnlParams {
  double temperature = 1.0;
  double clamp = 1e-12;

  bool operator==(const SnnlParams&) const = default;
};

/// Soft nearest neighbour loss of one channel over a batch.
///
/// `features` holds one flattened channel map per row (b x H'W'), `attrs` the
/// sensitive group of each row. For every sample i the same-group kernel mass
/// is divided by the kernel mass over all other samples, with kernel
/// exp(-|m_i - m_x|^2 / T). Kernel terms are scaled by the largest term of
/// row i before summing, so the numerator clamp acts relative to that term
/// and the ratio never exceeds one; the loss is therefore >= 0. An empty
/// numerator (no same-group peer) yields the clamp, -log(clamp) per sample.
double snnl_channel(const Eigen::Ref<const Eigen::MatrixXd>& features, std::span<const int> attrs,
                    const SnnlParams& params = {});

struct FairnessIndexTable {
  std::vector<std::vector<double>> losses;  // [channel][batch]; empty row = channel not scored
  Index batches = 0;
  Eigen::VectorXd index;  // F_k, NaN for unscored channels

  Index channels() const { return static_cast<Index>(losses.size()); }
};

/// F_k = mean_t |l_sn^{k,t}|. Rows left empty mark unscored channels.
FairnessIndexTable fairness_index(std::vector<std::vector<double>> per_batch_losses);

/// Decouples the floor(pr_c/100 * active) active channels with the smallest
/// F (at least one when pr_c > 0, never the last active channel). Ties go to
/// the lower channel index.
ChannelMask select_decouple(const Eigen::VectorXd& fairness, double pr_c, ChannelMask mask);
inline ChannelMask select_decouple(const FairnessIndexTable& table, double pr_c, ChannelMask mask) {
  return select_decouple(table.index, pr_c, std::move(mask));
}

/// Channels select_decouple would add, in ascending F order.
std::vector<int> decouple_candidates(const Eigen::VectorXd& fairness, double pr_c, const ChannelMask& mask);

/// Scores every active channel of the last convolution over consecutive
/// batches of `indices` (at most `max_batches`), inference only.
FairnessIndexTable score_channels(const Detector& det, const ChannelMask& mask, const Dataset& data,
                                  std::span<const int> indices, Index batch_size, Index max_batches,
                                  const SnnlParams& params = {}, Axis axis = Axis::Intersection);

/// CSV: channel_index,F_k,decoupled_flag
void write_fairness_index_csv(std::ostream& os, const FairnessIndexTable& table, const ChannelMask& mask);

}  // namespace fairdet

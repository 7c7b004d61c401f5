#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "fairdet/sinkhorn.hpp"
#include "fairdet/tensor.hpp"

namespace fairdet {

enum class Authenticity : std::uint8_t { Real = 0, Fake = 1 };

inline constexpr int kGlobalGroup = -1;

/// Empirical or gridded distribution of predicted fake-probabilities.
struct GroupDistribution {
  int group = kGlobalGroup;
  Authenticity cls = Authenticity::Real;
  std::vector<int> members;  // batch positions behind `support` (sample-support form)
  Eigen::VectorXd support;
  Eigen::VectorXd weights;

  Index size() const { return support.size(); }
  /// Throws DomainError unless nonempty, support in [0,1], weights >= 0 summing to 1.
  void validate() const;
};

/// Per-batch split of predictions into group cells and the global real/fake
/// distributions. Cells with fewer than m_min samples are not emitted.
struct GroupSet {
  std::vector<GroupDistribution> cells;  // sorted by (group, class)
  std::optional<GroupDistribution> global_real;
  std::optional<GroupDistribution> global_fake;

  const GroupDistribution* find(int group, Authenticity cls) const;
  std::vector<int> groups_present() const;            // groups with >= 1 emitted cell
  std::vector<int> groups_with_both_cells() const;
};

GroupSet group_predictions(std::span<const double> fake_probs, std::span<const int> labels,
                           std::span<const int> groups, Index m_min = 2);

/// Gaussian KDE of `samples` on a uniform grid over [0,1], renormalized to sum 1.
GroupDistribution kde_density(std::span<const double> samples, Index grid_size, double bandwidth);

struct TransportResult {
  double cost = 0.0;
  Eigen::MatrixXd plan;
  bool converged = false;
  bool log_domain = false;
  int iterations = 0;
  double marginal_error = 0.0;  // of the returned (rounded) plan
  double residual = 0.0;        // of the last scaling iterate
};

/// Entropic OT cost between two distributions with c_ij = (x_i - y_j)^2.
TransportResult sinkhorn_cost(const GroupDistribution& src, const GroupDistribution& dst, double epsilon,
                              int max_iter = 500, double tol = 1e-9);

/// Squared-distance cost matrix between two supports.
Eigen::MatrixXd squared_distance_cost(const Eigen::VectorXd& x, const Eigen::VectorXd& y);

enum class FairnessMode { SingleGroup, AllGroups };

struct FairnessOptions {
  double epsilon = 5e-4;
  int max_iter = 500;
  double tol = 1e-9;
  Index m_min = 2;
  FairnessMode mode = FairnessMode::SingleGroup;
};

/// One transport term: a group cell aligned with its global distribution.
struct FairnessTerm {
  int group = 0;
  Authenticity cls = Authenticity::Real;
  std::vector<int> src;  // batch positions of the group cell
  std::vector<int> dst;  // batch positions of the global distribution
  Eigen::MatrixXd plan;  // uniform-weight entropic plan, held fixed for gradients
  double cost = 0.0;
  bool converged = false;
};

/// Fairness loss for one batch with its transport plans frozen.
struct FairnessPlan {
  std::vector<int> groups;  // groups contributing (one in single-group mode)
  std::vector<FairnessTerm> terms;
  double weight = 1.0;  // 1/|A'| in all-groups mode, 1 otherwise
  double value = 0.0;   // weight * sum of term costs
  bool skipped = false; // no eligible group in the batch

  double cost_of(int group, Authenticity cls) const;  // NaN if the term is absent
};

/// Builds the per-batch fairness plan. Single-group mode draws one group
/// uniformly among those with both class cells present.
FairnessPlan plan_fairness(std::span<const double> fake_probs, std::span<const int> labels,
                           std::span<const int> groups, const FairnessOptions& options, std::mt19937_64& rng);

/// Differentiable loss weight * sum_t sum_ij plan_ij (p[src_i] - p[dst_j])^2
/// over the batch's fake-probability vector `fake_prob` ([B]).
Var apply_fairness(Var fake_prob, const FairnessPlan& plan);

/// Scalar fairness loss value (plans computed internally).
double fairness_loss(std::span<const double> fake_probs, std::span<const int> labels, std::span<const int> groups,
                     const FairnessOptions& options, std::mt19937_64& rng);

struct LossBundle {
  double cls = 0.0;
  double fair = 0.0;
  double lambda = 0.0;
  double total = 0.0;
};

LossBundle total_loss(double cls, double fair, double lambda);

/// CSV row per fairness term: step,group_id,cost_real,cost_fake,converged_flag
void write_fairness_trace_header(std::ostream& os);
void append_fairness_trace(std::ostream& os, std::int64_t step, const FairnessPlan& plan);

}  // namespace fairdet

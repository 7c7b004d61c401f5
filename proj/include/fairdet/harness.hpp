#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fairdet/detector.hpp"
#include "fairdet/gda.hpp"
#include "fairdet/metrics.hpp"
#include "fairdet/sfd.hpp"
#include "fairdet/synthdata.hpp"

namespace fairdet {

struct TrainConfig {
  DetectorConfig detector;
  int max_iterations = 3;
  /// Total epochs, split evenly over the decoupling iterations (remainder to
  /// the last one).
  int epochs = 50;
  Index batch_size = 64;
  double learning_rate = 1e-3;
  double lambda_fair = 0.005;
  double pr_c = 2.0;  // percent of active channels decoupled per iteration
  double epsilon = 5e-4;
  int sinkhorn_max_iter = 500;
  double sinkhorn_tol = 1e-9;
  SnnlParams snnl;
  Index scoring_batches = 50;
  Index m_min = 2;
  FairnessMode fairness_mode = FairnessMode::SingleGroup;
  /// Run the alignment loss only after the last decoupling step (two-stage
  /// reading) instead of from the first iteration.
  bool defer_alignment = false;
  double threshold = 0.5;
  std::uint64_t seed = 0;

  /// Epochs run inside outer iteration `iteration` (1-based).
  int epochs_for_iteration(int iteration) const;
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct StepRecord {
  std::int64_t step = 0;
  int iteration = 0;
  int epoch = 0;
  LossBundle loss;
  int fair_group = -1;  // sampled subgroup, -1 when none
  bool fair_skipped = false;
};

struct IterationRecord {
  int iteration = 0;
  std::vector<int> decoupled;      // channels newly decoupled in this iteration
  Eigen::VectorXd fairness_index;  // F_k snapshot (NaN for unscored channels); empty if not scored
};

struct TrainHistory {
  std::vector<StepRecord> steps;
  std::vector<IterationRecord> iterations;
  ChannelMask final_mask;
  double wall_seconds = 0.0;
};

struct TrainResult {
  Detector model;
  ChannelMask mask;
  TrainHistory history;
};

/// Training with channel decoupling and distribution alignment: each outer
/// iteration scores the active channels, decouples the lowest-F_k fraction,
/// then runs its epochs of SGD on L_cls + lambda * L_fair.
/// `fairness_trace`, when given, receives the per-batch transport costs.
TrainResult train(const TrainConfig& config, const Dataset& data, std::ostream* fairness_trace = nullptr);

/// Plain cross-entropy SGD with the same initialization and batch order as
/// train(); the reference for the mechanism-off equivalence.
Detector train_cross_entropy(const TrainConfig& config, const Dataset& data);

/// Masked inference over `indices`.
Eigen::VectorXd predict(const Detector& model, const ChannelMask& mask, const Dataset& data,
                        std::span<const int> indices, Index batch_size = 256);

MetricsReport evaluate(const Detector& model, const ChannelMask& mask, const Dataset& data,
                       std::span<const int> indices, double threshold = 0.5);

struct SweepGrid {
  std::vector<double> pr_c;        // decoupling-ratio axis
  std::vector<int> iterations;     // max_iterations axis
  std::vector<double> lambdas;     // if nonempty: lambda sweep, other axes ignored

  bool is_lambda_sweep() const { return !lambdas.empty(); }
};

struct SweepCell {
  double pr_c = 0.0;
  int iterations = 0;
  double lambda = 0.0;
  bool ok = false;
  std::string error;
  std::optional<MetricsReport> report;
};

/// One training run per grid cell (shared seed), evaluated on `eval_indices`.
/// Failed cells are recorded and the sweep continues.
std::vector<SweepCell> sweep(const TrainConfig& base, const Dataset& data, const SweepGrid& grid,
                             std::span<const int> eval_indices);

/// CSV: pr_c,max_iterations,lambda,status,auc,f_fpr_gender,f_fpr_race,
/// f_fpr_intersection,f_dp_intersection,es_auc_intersection
void write_sweep_csv(std::ostream& os, const std::vector<SweepCell>& cells);

struct RobustnessRow {
  Perturbation kind = Perturbation::GaussianNoise;
  double intensity = 0.0;
  MetricsReport report;
  std::vector<double> delta_f_fpr;   // per report axis, perturbed - clean
  std::vector<double> delta_es_auc;  // per report axis, perturbed - clean
};

/// Applies each (kind, intensity) to every sample of `indices` and reports
/// metrics plus deltas against the unperturbed split.
std::vector<RobustnessRow> robustness_eval(const Detector& model, const ChannelMask& mask, const Dataset& data,
                                           std::span<const int> indices, std::span<const Perturbation> kinds,
                                           std::span<const double> intensities, double threshold = 0.5,
                                           std::uint64_t seed = 0);

/// CSV: kind,intensity,axis,auc,f_fpr,f_dp,es_auc,delta_f_fpr,delta_es_auc
void write_robustness_csv(std::ostream& os, const std::vector<RobustnessRow>& rows);

/// CSV: step,iteration,epoch,l_cls,l_fair,lambda,l_total,fair_group,fair_skipped
void write_history_csv(std::ostream& os, const TrainHistory& history);
/// CSV: iteration,decoupled (space separated channel list)
void write_decoupling_csv(std::ostream& os, const TrainHistory& history);

}  // namespace fairdet

#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fairdet/synthdata.hpp"

namespace fairdet {

struct EvalRecord {
  double score = 0.0;  // predicted fake-probability
  int pred = 0;        // 1 iff score >= threshold
  int label = 0;       // ground truth, 1 = fake
  int subgroup = 0;
};

std::vector<EvalRecord> make_records(std::span<const double> scores, std::span<const int> labels,
                                     std::span<const int> subgroups, double threshold = 0.5);

/// Mann-Whitney AUC with average ranks for ties.
double auc(std::span<const double> scores, std::span<const int> labels);

/// Sum over subgroups of |FPR(subgroup) - FPR(all)|. Subgroups without true
/// negatives are skipped and noted in `warnings`.
double f_fpr(std::span<const EvalRecord> records, std::vector<std::string>* warnings = nullptr);

/// max over k in {0,1} of the spread (max - min) of subgroup rates of
/// predicting k.
double f_dp(std::span<const EvalRecord> records, std::vector<std::string>* warnings = nullptr);

/// AUC / (1 + sum_j |AUC - AUC_j|); single-class subgroups are skipped.
double es_auc(std::span<const EvalRecord> records, std::vector<std::string>* warnings = nullptr);

struct SubgroupStats {
  int id = 0;
  std::string name;
  Index count = 0;
  Index negatives = 0;
  Index positives = 0;
  double fpr = 0.0;        // NaN without negatives
  double fake_rate = 0.0;  // fraction predicted fake, NaN when empty
  double auc = 0.0;        // NaN unless both classes present
};

struct AxisMetrics {
  Axis axis = Axis::Intersection;
  double f_fpr = 0.0;
  double f_dp = 0.0;
  double es_auc = 0.0;
  std::vector<SubgroupStats> subgroups;
  std::vector<std::string> warnings;
};

struct MetricsReport {
  double auc = 0.0;
  double threshold = 0.5;
  Index count = 0;
  std::vector<AxisMetrics> axes;

  const AxisMetrics& axis(Axis a) const;
};

/// One metric block per requested axis. `groups` are intersection ids; the
/// gender and race axes are derived from them.
MetricsReport report(std::span<const double> scores, std::span<const int> labels, std::span<const int> groups,
                     std::span<const Axis> axes, double threshold = 0.5);
MetricsReport report(std::span<const double> scores, std::span<const int> labels, std::span<const int> groups,
                     double threshold = 0.5);

nlohmann::json to_json(const MetricsReport& r);
MetricsReport report_from_json(const nlohmann::json& j);

/// Flat CSV, one row per (axis, metric): axis,metric,value. The first row is
/// the overall AUC with axis "overall".
void write_report_csv(std::ostream& os, const MetricsReport& r);

}  // namespace fairdet

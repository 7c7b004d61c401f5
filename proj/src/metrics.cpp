#include "fairdet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>

namespace fairdet {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
}

std::vector<EvalRecord> make_records(std::span<const double> scores, std::span<const int> labels,
                                     std::span<const int> subgroups, double threshold) {
  if (scores.size() != labels.size() || scores.size() != subgroups.size()) {
    throw DimensionError("make_records: scores, labels and subgroups differ in length");
  }
  std::vector<EvalRecord> out(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out[i] = {scores[i], scores[i] >= threshold ? 1 : 0, labels[i], subgroups[i]};
  }
  return out;
}

double auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw DimensionError("auc: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  double rank_sum = 0.0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    // Ranks i+1..j share their average.
    const double avg = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]] == 1) {
        rank_sum += avg;
        ++positives;
      }
    i = j;
  }
  const std::size_t negatives = n - positives;
  if (positives == 0 || negatives == 0) throw UndefinedMetricError("auc needs both classes");
  const double np = static_cast<double>(positives);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(negatives));
}

namespace {

std::map<int, std::vector<const EvalRecord*>> by_subgroup(std::span<const EvalRecord> records) {
  std::map<int, std::vector<const EvalRecord*>> m;
  for (const auto& r : records) m[r.subgroup].push_back(&r);
  return m;
}

double false_positive_rate(const std::vector<const EvalRecord*>& rs, Index* negatives = nullptr) {
  Index neg = 0, fp = 0;
  for (const auto* r : rs)
    if (r->label == 0) {
      ++neg;
      fp += r->pred == 1 ? 1 : 0;
    }
  if (negatives) *negatives = neg;
  return neg ? static_cast<double>(fp) / static_cast<double>(neg) : kNaN;
}

double records_auc(const std::vector<const EvalRecord*>& rs) {
  std::vector<double> s;
  std::vector<int> l;
  for (const auto* r : rs) {
    s.push_back(r->score);
    l.push_back(r->label);
  }
  return auc(s, l);
}

bool has_both_classes(const std::vector<const EvalRecord*>& rs) {
  bool pos = false, neg = false;
  for (const auto* r : rs) (r->label == 1 ? pos : neg) = true;
  return pos && neg;
}

void warn(std::vector<std::string>* w, std::string msg) {
  if (w) w->push_back(std::move(msg));
}

}  // namespace

double f_fpr(std::span<const EvalRecord> records, std::vector<std::string>* warnings) {
  std::vector<const EvalRecord*> all;
  for (const auto& r : records) all.push_back(&r);
  Index neg = 0;
  const double overall = false_positive_rate(all, &neg);
  if (neg == 0) throw UndefinedMetricError("f_fpr needs at least one true negative");
  double total = 0.0;
  for (const auto& [id, rs] : by_subgroup(records)) {
    const double fpr = false_positive_rate(rs);
    if (std::isnan(fpr)) {
      warn(warnings, "f_fpr: subgroup " + std::to_string(id) + " has no true negatives, excluded");
      continue;
    }
    total += std::abs(fpr - overall);
  }
  return total;
}

double f_dp(std::span<const EvalRecord> records, std::vector<std::string>* warnings) {
  (void)warnings;  // every subgroup present in `records` is nonempty
  if (records.empty()) throw UndefinedMetricError("f_dp of an empty record set");
  double best = 0.0;
  for (int k = 0; k < 2; ++k) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& [id, rs] : by_subgroup(records)) {
      Index hits = 0;
      for (const auto* r : rs) hits += r->pred == k ? 1 : 0;
      const double rate = static_cast<double>(hits) / static_cast<double>(rs.size());
      lo = std::min(lo, rate);
      hi = std::max(hi, rate);
    }
    best = std::max(best, hi - lo);
  }
  return best;
}

double es_auc(std::span<const EvalRecord> records, std::vector<std::string>* warnings) {
  std::vector<const EvalRecord*> all;
  for (const auto& r : records) all.push_back(&r);
  if (!has_both_classes(all)) throw UndefinedMetricError("es_auc needs both classes overall");
  const double overall = records_auc(all);
  double disparity = 0.0;
  for (const auto& [id, rs] : by_subgroup(records)) {
    if (!has_both_classes(rs)) {
      warn(warnings, "es_auc: subgroup " + std::to_string(id) + " lacks one class, excluded");
      continue;
    }
    disparity += std::abs(overall - records_auc(rs));
  }
  return overall / (1.0 + disparity);
}

const AxisMetrics& MetricsReport::axis(Axis a) const {
  for (const auto& m : axes)
    if (m.axis == a) return m;
  throw UsageError(std::string("report has no block for axis ") + axis_name(a));
}

MetricsReport report(std::span<const double> scores, std::span<const int> labels, std::span<const int> groups,
                     std::span<const Axis> axes, double threshold) {
  if (scores.empty()) throw DataError("cannot report metrics on an empty dataset");
  if (scores.size() != labels.size() || scores.size() != groups.size()) {
    throw DimensionError("report: scores, labels and groups differ in length");
  }
  MetricsReport out;
  out.threshold = threshold;
  out.count = static_cast<Index>(scores.size());
  out.auc = auc(scores, labels);

  for (Axis axis : axes) {
    std::vector<int> sub(groups.size());
    for (std::size_t i = 0; i < groups.size(); ++i) {
      if (groups[i] < 0 || groups[i] >= kGroupCount) throw DomainError("intersection id out of range");
      const int g = groups[i];
      sub[i] = axis == Axis::Gender ? static_cast<int>(gender_of(g))
               : axis == Axis::Race ? static_cast<int>(race_of(g))
                                    : g;
    }
    const auto records = make_records(scores, labels, sub, threshold);
    AxisMetrics m;
    m.axis = axis;
    const auto grouped = by_subgroup(records);
    for (int id = 0; id < subgroup_count(axis); ++id) {
      SubgroupStats s;
      s.id = id;
      s.name = subgroup_name(axis, id);
      auto it = grouped.find(id);
      if (it == grouped.end()) {
        m.warnings.push_back(std::string(axis_name(axis)) + ": subgroup " + s.name + " is empty, excluded");
        s.fpr = s.fake_rate = s.auc = kNaN;
        m.subgroups.push_back(std::move(s));
        continue;
      }
      const auto& rs = it->second;
      s.count = static_cast<Index>(rs.size());
      s.fpr = false_positive_rate(rs, &s.negatives);
      s.positives = s.count - s.negatives;
      Index pf = 0;
      for (const auto* r : rs) pf += r->pred;
      s.fake_rate = static_cast<double>(pf) / static_cast<double>(s.count);
      s.auc = has_both_classes(rs) ? records_auc(rs) : kNaN;
      m.subgroups.push_back(std::move(s));
    }
    m.f_fpr = f_fpr(records, &m.warnings);
    m.f_dp = f_dp(records, &m.warnings);
    m.es_auc = es_auc(records, &m.warnings);
    out.axes.push_back(std::move(m));
  }
  return out;
}

MetricsReport report(std::span<const double> scores, std::span<const int> labels, std::span<const int> groups,
                     double threshold) {
  static constexpr Axis kAll[] = {Axis::Gender, Axis::Race, Axis::Intersection};
  return report(scores, labels, groups, kAll, threshold);
}

namespace {

nlohmann::json number_or_null(double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); }
double number_or_nan(const nlohmann::json& j) { return j.is_null() ? kNaN : j.get<double>(); }

}  // namespace

nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json j;
  j["auc"] = r.auc;
  j["threshold"] = r.threshold;
  j["count"] = r.count;
  j["axes"] = nlohmann::json::object();
  for (const auto& m : r.axes) {
    nlohmann::json a;
    a["f_fpr"] = m.f_fpr;
    a["f_dp"] = m.f_dp;
    a["es_auc"] = m.es_auc;
    a["subgroups"] = nlohmann::json::array();
    for (const auto& s : m.subgroups) {
      a["subgroups"].push_back({{"id", s.id},
                                {"name", s.name},
                                {"count", s.count},
                                {"negatives", s.negatives},
                                {"positives", s.positives},
                                {"fpr", number_or_null(s.fpr)},
                                {"fake_rate", number_or_null(s.fake_rate)},
                                {"auc", number_or_null(s.auc)}});
    }
    a["warnings"] = m.warnings;
    j["axes"][axis_name(m.axis)] = std::move(a);
  }
  return j;
}

MetricsReport report_from_json(const nlohmann::json& j) {
  MetricsReport r;
  try {
    r.auc = j.at("auc").get<double>();
    r.threshold = j.at("threshold").get<double>();
    r.count = j.at("count").get<Index>();
    for (Axis axis : {Axis::Gender, Axis::Race, Axis::Intersection}) {
      if (!j.at("axes").contains(axis_name(axis))) continue;
      const auto& a = j.at("axes").at(axis_name(axis));
      AxisMetrics m;
      m.axis = axis;
      m.f_fpr = a.at("f_fpr").get<double>();
      m.f_dp = a.at("f_dp").get<double>();
      m.es_auc = a.at("es_auc").get<double>();
      for (const auto& s : a.at("subgroups")) {
        m.subgroups.push_back({s.at("id").get<int>(), s.at("name").get<std::string>(), s.at("count").get<Index>(),
                               s.at("negatives").get<Index>(), s.at("positives").get<Index>(),
                               number_or_nan(s.at("fpr")), number_or_nan(s.at("fake_rate")),
                               number_or_nan(s.at("auc"))});
      }
      m.warnings = a.at("warnings").get<std::vector<std::string>>();
      r.axes.push_back(std::move(m));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed metrics report: ") + e.what());
  }
  return r;
}

void write_report_csv(std::ostream& os, const MetricsReport& r) {
  const auto old = os.precision(17);
  os << "axis,metric,value\n";
  os << "overall,auc," << r.auc << '\n';
  for (const auto& m : r.axes) {
    os << axis_name(m.axis) << ",f_fpr," << m.f_fpr << '\n';
    os << axis_name(m.axis) << ",f_dp," << m.f_dp << '\n';
    os << axis_name(m.axis) << ",es_auc," << m.es_auc << '\n';
  }
  os.precision(old);
}

}  // namespace fairdet

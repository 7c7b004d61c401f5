#include "fairdet/gda.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

namespace fairdet {

void GroupDistribution::validate() const {
  if (support.size() == 0) throw DomainError("distribution is empty");
  if (weights.size() != support.size()) throw DimensionError("distribution weights/support length mismatch");
  if ((support.array() < 0.0).any() || (support.array() > 1.0).any() || !support.allFinite()) {
    throw DomainError("distribution support must lie in [0,1]");
  }
  if ((weights.array() < 0.0).any() || std::abs(weights.sum() - 1.0) > 1e-9) {
    throw DomainError("distribution weights must be nonnegative and sum to 1");
  }
}

const GroupDistribution* GroupSet::find(int group, Authenticity cls) const {
  for (const auto& c : cells)
    if (c.group == group && c.cls == cls) return &c;
  return nullptr;
}

std::vector<int> GroupSet::groups_present() const {
  std::vector<int> out;
  for (const auto& c : cells)
    if (out.empty() || out.back() != c.group) out.push_back(c.group);
  return out;
}

std::vector<int> GroupSet::groups_with_both_cells() const {
  std::vector<int> out;
  for (int g : groups_present())
    if (find(g, Authenticity::Real) && find(g, Authenticity::Fake)) out.push_back(g);
  return out;
}

namespace {

GroupDistribution uniform_distribution(int group, Authenticity cls, std::vector<int> members,
                                       std::span<const double> probs) {
  GroupDistribution d;
  d.group = group;
  d.cls = cls;
  d.support.resize(static_cast<Index>(members.size()));
  for (std::size_t i = 0; i < members.size(); ++i) d.support[static_cast<Index>(i)] = probs[static_cast<std::size_t>(members[i])];
  d.weights = Eigen::VectorXd::Constant(d.support.size(), 1.0 / static_cast<double>(members.size()));
  d.members = std::move(members);
  return d;
}

}  // namespace

GroupSet group_predictions(std::span<const double> fake_probs, std::span<const int> labels,
                           std::span<const int> groups, Index m_min) {
  if (fake_probs.empty()) throw DomainError("group_predictions needs at least one sample");
  if (labels.size() != fake_probs.size() || groups.size() != fake_probs.size()) {
    throw DimensionError("group_predictions: probabilities, labels and groups differ in length");
  }
  int max_group = -1;
  for (int g : groups) {
    if (g < 0) throw DomainError("group ids must be nonnegative");
    max_group = std::max(max_group, g);
  }
  std::vector<std::vector<int>> members(static_cast<std::size_t>(2 * (max_group + 1)));
  std::vector<int> all_real, all_fake;
  for (std::size_t i = 0; i < fake_probs.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw DomainError("labels must be 0 or 1");
    members[static_cast<std::size_t>(2 * groups[i] + labels[i])].push_back(static_cast<int>(i));
    (labels[i] == 1 ? all_fake : all_real).push_back(static_cast<int>(i));
  }
  GroupSet set;
  for (int g = 0; g <= max_group; ++g)
    for (int cls = 0; cls < 2; ++cls) {
      auto& m = members[static_cast<std::size_t>(2 * g + cls)];
      if (static_cast<Index>(m.size()) >= m_min && !m.empty()) {
        set.cells.push_back(uniform_distribution(g, static_cast<Authenticity>(cls), std::move(m), fake_probs));
      }
    }
  if (!all_real.empty()) set.global_real = uniform_distribution(kGlobalGroup, Authenticity::Real, all_real, fake_probs);
  if (!all_fake.empty()) set.global_fake = uniform_distribution(kGlobalGroup, Authenticity::Fake, all_fake, fake_probs);
  return set;
}

GroupDistribution kde_density(std::span<const double> samples, Index grid_size, double bandwidth) {
  if (!(bandwidth > 0.0)) throw DomainError("kde bandwidth must be positive");
  if (samples.empty()) throw DomainError("kde needs at least one sample");
  if (grid_size < 2) throw DomainError("kde grid needs at least two points");
  GroupDistribution d;
  d.support = Eigen::VectorXd::LinSpaced(grid_size, 0.0, 1.0);
  // Log-space accumulation keeps tiny bandwidths from underflowing to 0/0.
  Eigen::VectorXd logw(grid_size);
  const double inv2h2 = 1.0 / (2.0 * bandwidth * bandwidth);
  for (Index k = 0; k < grid_size; ++k) {
    Eigen::ArrayXd t(static_cast<Index>(samples.size()));
    for (std::size_t s = 0; s < samples.size(); ++s) {
      const double diff = d.support[k] - samples[s];
      t[static_cast<Index>(s)] = -diff * diff * inv2h2;
    }
    logw[k] = detail::log_sum_exp<double>(t);
  }
  d.weights = (logw.array() - logw.maxCoeff()).exp().matrix();
  d.weights /= d.weights.sum();
  return d;
}

Eigen::MatrixXd squared_distance_cost(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  Eigen::MatrixXd c(x.size(), y.size());
  for (Index i = 0; i < x.size(); ++i)
    for (Index j = 0; j < y.size(); ++j) c(i, j) = (x[i] - y[j]) * (x[i] - y[j]);
  return c;
}

TransportResult sinkhorn_cost(const GroupDistribution& src, const GroupDistribution& dst, double epsilon,
                              int max_iter, double tol) {
  if (!(epsilon > 0.0)) throw DomainError("sinkhorn epsilon must be positive");
  src.validate();
  dst.validate();
  SinkhornOptions<double> opt;
  opt.epsilon = epsilon;
  opt.max_iter = max_iter;
  opt.tol = tol;
  auto r = sinkhorn(squared_distance_cost(src.support, dst.support), src.weights, dst.weights, opt);
  return {r.cost, std::move(r.plan), r.converged, r.log_domain, r.iterations, r.marginal_error, r.residual};
}

double FairnessPlan::cost_of(int group, Authenticity cls) const {
  for (const auto& t : terms)
    if (t.group == group && t.cls == cls) return t.cost;
  return std::numeric_limits<double>::quiet_NaN();
}

FairnessPlan plan_fairness(std::span<const double> fake_probs, std::span<const int> labels,
                           std::span<const int> groups, const FairnessOptions& options, std::mt19937_64& rng) {
  const GroupSet set = group_predictions(fake_probs, labels, groups, options.m_min);
  FairnessPlan plan;
  std::vector<int> eligible =
      options.mode == FairnessMode::SingleGroup ? set.groups_with_both_cells() : set.groups_present();
  if (eligible.empty()) {
    plan.skipped = true;
    return plan;
  }
  if (options.mode == FairnessMode::SingleGroup) {
    std::uniform_int_distribution<std::size_t> pick(0, eligible.size() - 1);
    plan.groups = {eligible[pick(rng)]};
  } else {
    plan.groups = eligible;
  }
  plan.weight = 1.0 / static_cast<double>(plan.groups.size());

  for (int g : plan.groups) {
    for (Authenticity cls : {Authenticity::Real, Authenticity::Fake}) {
      const GroupDistribution* cell = set.find(g, cls);
      const auto& global = cls == Authenticity::Real ? set.global_real : set.global_fake;
      if (!cell || !global) continue;
      TransportResult r = sinkhorn_cost(*cell, *global, options.epsilon, options.max_iter, options.tol);
      FairnessTerm t;
      t.group = g;
      t.cls = cls;
      t.src = cell->members;
      t.dst = global->members;
      t.plan = std::move(r.plan);
      t.cost = r.cost;
      t.converged = r.converged;
      plan.terms.push_back(std::move(t));
    }
  }
  double total = 0.0;
  for (const auto& t : plan.terms) total += t.cost;
  plan.value = plan.weight * total;
  return plan;
}

Var apply_fairness(Var fake_prob, const FairnessPlan& plan) {
  Graph& g = *fake_prob.graph;
  if (plan.terms.empty()) return g.constant(0.0);
  std::optional<Var> acc;
  for (const auto& t : plan.terms) {
    Var term = transport_cost(gather(fake_prob, t.src), gather(fake_prob, t.dst), t.plan);
    acc = acc ? add(*acc, term) : term;
  }
  return scale(*acc, plan.weight);
}

double fairness_loss(std::span<const double> fake_probs, std::span<const int> labels, std::span<const int> groups,
                     const FairnessOptions& options, std::mt19937_64& rng) {
  return plan_fairness(fake_probs, labels, groups, options, rng).value;
}

LossBundle total_loss(double cls, double fair, double lambda) {
  if (!(lambda >= 0.0)) throw DomainError("fairness weight must be nonnegative");
  return {cls, fair, lambda, cls + lambda * fair};
}

void write_fairness_trace_header(std::ostream& os) { os << "step,group_id,cost_real,cost_fake,converged_flag\n"; }

void append_fairness_trace(std::ostream& os, std::int64_t step, const FairnessPlan& plan) {
  for (int g : plan.groups) {
    bool converged = true;
    for (const auto& t : plan.terms)
      if (t.group == g) converged = converged && t.converged;
    os << step << ',' << g << ',' << plan.cost_of(g, Authenticity::Real) << ','
       << plan.cost_of(g, Authenticity::Fake) << ',' << (converged ? 1 : 0) << '\n';
  }
}

}  // namespace fairdet

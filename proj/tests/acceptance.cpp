// Acceptance run: one PASS/FAIL line per criterion, tolerances pinned below.
// The exit status is nonzero only if the run itself breaks; a criterion that
// is not met is reported as FAIL and the run continues.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "fairdet/harness.hpp"
#include "metric_oracles.hpp"
#include "snnl_oracle.hpp"

using namespace fairdet;

namespace {

constexpr double kGradTol = 1e-4;
// Magnitudes below this are compared absolutely: central differences at
// h = 1e-5 carry about 1e-11 of rounding noise.
constexpr double kGradFloor = 1e-6;
constexpr double kGradSeconds = 30.0;
constexpr double kSinkhornRelTol = 0.01;
constexpr double kMarginalTol = 1e-9;
constexpr double kSinkhornSeconds = 10.0;
constexpr double kSnnlTol = 1e-10;
constexpr double kAucTol = 1e-12;
constexpr int kFairSeeds = 5;
constexpr int kFairWinsNeeded = 4;
constexpr double kAucSlack = 0.02;
constexpr double kFairSeconds = 15.0 * 60.0;

// Desk-scale step size for the training criteria; the default 1e-3 does not
// leave the initial loss plateau within 50 epochs on this data.
constexpr double kDeskLearningRate = 0.1;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

int passed = 0;

void verdict(int id, bool ok, const std::string& detail) {
  passed += ok ? 1 : 0;
  std::cout << "criterion " << id << ' ' << (ok ? "PASS" : "FAIL") << "  " << detail << std::endl;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------------------
// 1. Gradients of the composite loss on random tiny detectors.

void gradient_suite() {
  const auto start = Clock::now();
  std::mt19937_64 rng(101);
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  double worst = 0.0;
  Index largest = 0;
  for (int net = 0; net < 20; ++net) {
    DetectorConfig c;
    c.kernel = pick(2, 3);
    c.stride = pick(1, 2);
    c.height = c.width = pick(7, 9);
    c.channels = {static_cast<Index>(pick(1, 4)), static_cast<Index>(pick(4, 6))};
    Detector det(c, static_cast<std::uint64_t>(1000 + net));
    // Nonzero biases keep pre-activations off the ReLU kink, where central
    // differences are not a derivative.
    for (Tensor* bias : {&det.weights().conv_biases[0], &det.weights().conv_biases[1], &det.weights().head_bias})
      for (Index i = 0; i < bias->size(); ++i) (*bias)[i] = 0.2 * unit(rng) - 0.1;
    largest = std::max(largest, det.weights().parameter_count());

    const Index b = 12;
    Tensor images({b, 1, c.height, c.width});
    for (Index i = 0; i < images.size(); ++i) images[i] = unit(rng);
    std::vector<int> labels(static_cast<std::size_t>(b)), groups(static_cast<std::size_t>(b));
    for (Index i = 0; i < b; ++i) {
      labels[static_cast<std::size_t>(i)] = static_cast<int>(i % 2);
      groups[static_cast<std::size_t>(i)] = static_cast<int>(i / 4);
    }
    ChannelMask mask(c.last_channels());
    if (pick(0, 1) == 1) mask.decouple({pick(0, static_cast<int>(c.last_channels()) - 1)});
    const double lambda = 0.005 + unit(rng);

    // The transport plan is computed once and held fixed.
    Graph g0;
    const auto r0 = det.forward(g0, images, mask, false);
    const Eigen::VectorXd& p0 = r0.fake_prob.value().data();
    FairnessOptions fo;
    fo.mode = FairnessMode::AllGroups;
    fo.epsilon = 1e-2;
    std::mt19937_64 plan_rng(static_cast<std::uint64_t>(net));
    const FairnessPlan plan = plan_fairness(std::span<const double>(p0.data(), static_cast<std::size_t>(b)), labels,
                                            groups, fo, plan_rng);

    auto loss_of = [&](const Detector& d, Graph& g, bool track) {
      const auto r = d.forward(g, images, mask, track);
      return std::pair{add(classification_loss(r.logits, labels), scale(apply_fairness(r.fake_prob, plan), lambda)),
                       r};
    };
    Graph g;
    auto [loss, fwd] = loss_of(det, g, true);
    g.backward(loss);

    const double h = 1e-5;
    const auto params = det.weights().parameters();
    for (std::size_t k = 0; k < params.size(); ++k) {
      const Tensor grad = fwd.params[k].grad();
      for (Index i = 0; i < params[k]->size(); ++i) {
        auto eval = [&](double delta) {
          Detector d = det;
          (*d.weights().parameters()[k])[i] += delta;
          Graph gg;
          return loss_of(d, gg, false).first.value().item();
        };
        const double numeric = (eval(h) - eval(-h)) / (2.0 * h);
        const double analytic = grad[i];
        const double err = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), kGradFloor});
        worst = std::max(worst, err);
      }
    }
  }
  const double secs = seconds_since(start);
  verdict(1, worst < kGradTol && secs < kGradSeconds && largest <= 500,
          fmt("gradient suite: 20 networks (<= %ld params), max rel error %.2e (< %.0e), %.1f s (< %.0f s)",
              static_cast<long>(largest), worst, kGradTol, secs, kGradSeconds));
}

// ---------------------------------------------------------------------------
// 2. Sinkhorn cost against exact OT by permutation enumeration.

double permutation_ot(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  std::vector<int> p(static_cast<std::size_t>(x.size()));
  std::iota(p.begin(), p.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double c = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) c += std::pow(x[static_cast<Index>(i)] - y[p[i]], 2);
    best = std::min(best, c / static_cast<double>(p.size()));
  } while (std::next_permutation(p.begin(), p.end()));
  return best;
}

void sinkhorn_oracle() {
  const auto start = Clock::now();
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double worst_rel = 0.0, worst_marg = 0.0;
  int over = 0, not_converged = 0;
  for (int t = 0; t < 50; ++t) {
    const Index n = std::uniform_int_distribution<Index>(1, 5)(rng);
    GroupDistribution a, b;
    a.support.resize(n);
    b.support.resize(n);
    for (Index i = 0; i < n; ++i) {
      a.support[i] = unit(rng);
      b.support[i] = unit(rng);
    }
    a.weights = b.weights = Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n));
    const double exact = permutation_ot(a.support, b.support);
    const TransportResult r = sinkhorn_cost(a, b, 1e-3);
    const double rel = std::abs(r.cost - exact) / exact;
    worst_rel = std::max(worst_rel, rel);
    worst_marg = std::max(worst_marg, r.marginal_error);
    over += rel >= kSinkhornRelTol ? 1 : 0;
    not_converged += r.converged ? 0 : 1;
  }
  const double secs = seconds_since(start);
  verdict(2, over == 0 && worst_marg < kMarginalTol && secs < kSinkhornSeconds,
          fmt("sinkhorn oracle: 50 instances at eps 1e-3, worst rel cost error %.4f (< %.2f, %d over), "
              "worst marginal error %.1e (< %.0e), %d below scaling tolerance, %.2f s (< %.0f s)",
              worst_rel, kSinkhornRelTol, over, worst_marg, kMarginalTol, not_converged, secs, kSinkhornSeconds));
}

// ---------------------------------------------------------------------------
// 3. Per-channel SNNL against the all-pairs evaluation.

void snnl_oracle() {
  std::mt19937_64 rng(303);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double worst = 0.0;
  int clamped = 0;
  for (int t = 0; t < 100; ++t) {
    const Index b = std::uniform_int_distribution<Index>(2, 8)(rng);
    const Index d = std::uniform_int_distribution<Index>(1, 9)(rng);
    Eigen::MatrixXd m(b, d);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = unit(rng);
    // A quarter of the batches use all-distinct groups: every numerator is empty.
    const int groups = t % 4 == 0 ? static_cast<int>(b) : std::uniform_int_distribution<int>(1, 4)(rng);
    std::vector<int> a(static_cast<std::size_t>(b));
    for (Index i = 0; i < b; ++i) a[static_cast<std::size_t>(i)] = t % 4 == 0 ? static_cast<int>(i) : static_cast<int>(rng() % static_cast<unsigned>(groups));
    std::set<int> lonely;
    for (std::size_t i = 0; i < a.size(); ++i)
      if (std::count(a.begin(), a.end(), a[i]) == 1) lonely.insert(static_cast<int>(i));
    clamped += lonely.empty() ? 0 : 1;
    const SnnlParams p{0.25 + unit(rng), 1e-12};
    worst = std::max(worst, std::abs(snnl_channel(m, a, p) - testing::direct_snnl(m, a, p.temperature, p.clamp)));
  }
  verdict(3, worst < kSnnlTol,
          fmt("snnl oracle: 100 batches (b <= 8, %d with empty numerators), max abs error %.2e (< %.0e)", clamped,
              worst, kSnnlTol));
}

// ---------------------------------------------------------------------------
// 4. Metrics against brute-force counting and pair enumeration.

void metric_oracles() {
  std::mt19937_64 rng(404);
  double auc_err = 0.0, es_err = 0.0;
  int fpr_mismatch = 0, dp_mismatch = 0;
  for (int t = 0; t < 100; ++t) {
    const testing::LabeledSet d = testing::random_labeled_set(rng);
    const auto rs = make_records(d.scores, d.labels, d.groups);
    auc_err = std::max(auc_err, std::abs(auc(d.scores, d.labels) - testing::pair_auc(d.scores, d.labels)));
    es_err = std::max(es_err, std::abs(es_auc(rs) - testing::pair_es_auc(d)));
    fpr_mismatch += f_fpr(rs) == testing::count_f_fpr(d) ? 0 : 1;
    dp_mismatch += f_dp(rs) == testing::count_f_dp(d) ? 0 : 1;
  }
  verdict(4, auc_err < kAucTol && es_err < kAucTol && fpr_mismatch == 0 && dp_mismatch == 0,
          fmt("metric oracles: 100 sets (2-8 subgroups), auc err %.1e, es_auc err %.1e (< %.0e), "
              "f_fpr mismatches %d, f_dp mismatches %d (exact)",
              auc_err, es_err, kAucTol, fpr_mismatch, dp_mismatch));
}

// ---------------------------------------------------------------------------
// 5-8. Training criteria on the default synthetic dataset.

Dataset default_dataset(std::uint64_t seed) {
  GenConfig g;
  g.seed = seed;
  Dataset d = generate(g);
  d.split = split_dataset(d, {0.6, 0.2, 0.2}, seed);
  return d;
}

TrainConfig full_method(std::uint64_t seed) {
  TrainConfig c;
  c.learning_rate = kDeskLearningRate;
  c.seed = seed;
  return c;
}

TrainConfig baseline(std::uint64_t seed) {
  TrainConfig c = full_method(seed);
  c.lambda_fair = 0.0;
  c.pr_c = 0.0;
  return c;
}

std::vector<double> flat_weights(const Detector& m) {
  std::vector<double> out;
  for (const Tensor* p : m.weights().parameters())
    out.insert(out.end(), p->data().data(), p->data().data() + p->size());
  return out;
}

bool same_report(const MetricsReport& a, const MetricsReport& b) {
  if (a.auc != b.auc || a.axes.size() != b.axes.size()) return false;
  for (std::size_t i = 0; i < a.axes.size(); ++i) {
    if (a.axes[i].f_fpr != b.axes[i].f_fpr || a.axes[i].f_dp != b.axes[i].f_dp ||
        a.axes[i].es_auc != b.axes[i].es_auc) {
      return false;
    }
  }
  return true;
}

struct SeedRun {
  Dataset data;
  TrainResult base, full;
  MetricsReport base_report, full_report;
};

// Injects large values into every decoupled channel of the pre-mask feature
// map and returns the largest logit change over the test split.
double tamper_effect(const TrainResult& run, const Dataset& data, std::uint64_t seed) {
  const Tensor images = batch_images(data, data.split.test);
  const Tensor clean = run.model.logits(images, run.mask);
  const std::vector<int> dead = run.mask.decoupled_channels();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> big(0.0, 1e6);
  const Tensor dirty = run.model.logits(images, run.mask, [&](Tensor& f) {
    const Index b = f.shape()[0], c = f.shape()[1], hw = f.shape()[2] * f.shape()[3];
    for (Index i = 0; i < b; ++i)
      for (int ch : dead)
        for (Index p = 0; p < hw; ++p) f[(i * c + ch) * hw + p] = big(rng);
  });
  return (clean.data() - dirty.data()).cwiseAbs().maxCoeff();
}

bool history_matches_mask(const TrainResult& run) {
  std::set<int> logged;
  for (const auto& it : run.history.iterations) logged.insert(it.decoupled.begin(), it.decoupled.end());
  const auto dec = run.mask.decoupled_channels();
  return std::set<int>(dec.begin(), dec.end()) == logged && run.history.final_mask == run.mask;
}

void training_criteria() {
  // 5: full method against the mechanism-off baseline over five seeds.
  const auto start = Clock::now();
  std::vector<SeedRun> runs;
  int wins = 0, fpr_wins = 0, bias_seeds = 0;
  double base_auc = 0.0, full_auc = 0.0;
  for (int s = 0; s < kFairSeeds; ++s) {
    SeedRun r;
    r.data = default_dataset(100 + static_cast<std::uint64_t>(s));
    r.base = train(baseline(static_cast<std::uint64_t>(s)), r.data);
    r.full = train(full_method(static_cast<std::uint64_t>(s)), r.data);
    r.base_report = evaluate(r.base.model, r.base.mask, r.data, r.data.split.test);
    r.full_report = evaluate(r.full.model, r.full.mask, r.data, r.data.split.test);
    const auto& bi = r.base_report.axis(Axis::Intersection);
    const auto& fi = r.full_report.axis(Axis::Intersection);
    wins += fi.f_dp < bi.f_dp ? 1 : 0;
    fpr_wins += fi.f_fpr < bi.f_fpr ? 1 : 0;
    bias_seeds += bi.f_fpr > 0.0 ? 1 : 0;
    base_auc += r.base_report.auc / kFairSeeds;
    full_auc += r.full_report.auc / kFairSeeds;
    std::cout << fmt("  seed %d: baseline auc %.4f f_dp %.4f f_fpr %.4f | full auc %.4f f_dp %.4f f_fpr %.4f", s,
                     r.base_report.auc, bi.f_dp, bi.f_fpr, r.full_report.auc, fi.f_dp, fi.f_fpr)
              << std::endl;
    runs.push_back(std::move(r));
  }
  const double secs = seconds_since(start);
  verdict(5, wins >= kFairWinsNeeded && full_auc >= base_auc - kAucSlack && secs < kFairSeconds,
          fmt("fairness improvement: lower intersection f_dp in %d/%d seeds (need %d), mean auc %.4f vs baseline "
              "%.4f (slack %.2f), %.0f s (< %.0f s)",
              wins, kFairSeeds, kFairWinsNeeded, full_auc, base_auc, kAucSlack, secs, kFairSeconds));
  std::cout << fmt("  note: lower intersection f_fpr in %d/%d seeds; baseline f_fpr > 0 in %d/%d seeds", fpr_wins,
                   kFairSeeds, bias_seeds, kFairSeeds)
            << std::endl;

  // 6: decoupled channels have no path to the logits.
  double worst_change = 0.0;
  bool histories = true;
  Index decoupled = 0;
  for (std::size_t s = 0; s < runs.size(); ++s) {
    worst_change = std::max(worst_change, tamper_effect(runs[s].full, runs[s].data, 600 + s));
    histories = histories && history_matches_mask(runs[s].full);
    decoupled += runs[s].full.mask.decoupled_count();
  }
  verdict(6, worst_change == 0.0 && histories && decoupled > 0,
          fmt("decoupling invariance: %ld decoupled channels over %zu runs, max logit change %.1e (exact 0), "
              "history union %s",
              static_cast<long>(decoupled), runs.size(), worst_change, histories ? "matches" : "differs"));

  // 7: mechanism off is plain cross-entropy training.
  const SeedRun& ref = runs.front();
  const Detector plain = train_cross_entropy(baseline(0), ref.data);
  const bool identical = flat_weights(plain) == flat_weights(ref.base.model);
  const MetricsReport plain_report =
      evaluate(plain, ChannelMask(plain.config().last_channels()), ref.data, ref.data.split.test);
  verdict(7, identical && ref.base.mask.decoupled_count() == 0,
          fmt("mechanism-off equivalence: %ld weights %s", static_cast<long>(plain.weights().parameter_count()),
              identical ? "bit-identical" : "differ"));

  // 8: sweeps.
  const auto sweep_start = Clock::now();
  TrainConfig grid_base = full_method(0);
  grid_base.epochs = 10;
  SweepGrid grid;
  grid.pr_c = {1, 2, 3, 4, 5};
  grid.iterations = {1, 2, 3, 4, 5};
  const auto cells = sweep(grid_base, ref.data, grid, ref.data.split.test);
  int grid_ok = 0;
  std::ostringstream grid_csv;
  write_sweep_csv(grid_csv, cells);
  for (const auto& c : cells) grid_ok += c.ok ? 1 : 0;

  SweepGrid lambdas;
  lambdas.lambdas = {0.0, 0.001, 0.005, 0.01, 0.05};
  const auto rows = sweep(baseline(0), ref.data, lambdas, ref.data.split.test);
  bool rows_ok = rows.size() == lambdas.lambdas.size();
  for (std::size_t i = 0; rows_ok && i < rows.size(); ++i) {
    rows_ok = rows[i].ok && rows[i].report && rows[i].lambda == lambdas.lambdas[i] &&
              (i == 0 || rows[i].lambda > rows[i - 1].lambda);
  }
  const bool zero_matches = rows_ok && same_report(*rows.front().report, plain_report);
  const std::string text = grid_csv.str();
  const auto lines = std::count(text.begin(), text.end(), '\n');
  verdict(8, grid_ok == 25 && lines == 26 && rows_ok && zero_matches,
          fmt("sweeps: %d/25 grid cells ok (%ld csv rows), lambda rows %s, lambda=0 row %s criterion 7 baseline, "
              "%.0f s",
              grid_ok, static_cast<long>(lines - 1), rows_ok ? "complete" : "incomplete",
              zero_matches ? "matches" : "differs from", seconds_since(sweep_start)));
  std::cout << "  f_fpr grid (rows pr_c 1..5 %, columns iterations 1..5):" << std::endl;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i % 5 == 0) std::cout << "   ";
    std::cout << ' '
              << (cells[i].ok ? fmt("%.3f", cells[i].report->axis(Axis::Intersection).f_fpr) : std::string("failed"));
    if (i % 5 == 4) std::cout << std::endl;
  }
  std::cout << "  lambda sweep (lambda: auc, intersection f_fpr):";
  for (const auto& r : rows)
    if (r.ok) std::cout << fmt(" %g: %.4f, %.3f;", r.lambda, r.report->auc, r.report->axis(Axis::Intersection).f_fpr);
  std::cout << std::endl;
}

}  // namespace

int main() {
  try {
    gradient_suite();
    sinkhorn_oracle();
    snnl_oracle();
    metric_oracles();
    training_criteria();
  } catch (const std::exception& e) {
    std::cerr << "acceptance run aborted: " << e.what() << std::endl;
    return 1;
  }
  std::cout << "acceptance: " << passed << "/8 criteria pass" << std::endl;
  return 0;
}

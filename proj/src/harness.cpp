#include "fairdet/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>
#include <set>

namespace fairdet {

int TrainConfig::epochs_for_iteration(int iteration) const {
  if (iteration < 1 || iteration > max_iterations) return 0;
  const int base = epochs / max_iterations;
  return iteration == max_iterations ? epochs - base * (max_iterations - 1) : base;
}

void TrainConfig::validate() const {
  detector.validate();
  if (max_iterations < 1) throw ConfigError("max_iterations must be >= 1");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(lambda_fair >= 0.0)) throw ConfigError("lambda_fair must be nonnegative");
  if (!(pr_c >= 0.0 && pr_c <= 100.0)) throw ConfigError("pr_c must lie in [0,100]");
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
  if (sinkhorn_max_iter < 1 || !(sinkhorn_tol > 0.0)) throw ConfigError("sinkhorn limits must be positive");
  if (!(snnl.temperature > 0.0) || !(snnl.clamp > 0.0)) throw ConfigError("snnl temperature and clamp must be positive");
  if (scoring_batches < 1) throw ConfigError("scoring_batches must be >= 1");
  if (m_min < 1) throw ConfigError("m_min must be >= 1");
}

namespace {

struct Streams {
  std::mt19937_64 shuffle;
  std::mt19937_64 fairness;
  std::mt19937_64 scoring;

  explicit Streams(std::uint64_t seed)
      : shuffle(splitmix64(seed ^ 0xA5A5A5A5ULL)),
        fairness(splitmix64(seed ^ 0xF00DF00DULL)),
        scoring(splitmix64(seed ^ 0x5C0DE5ULL)) {}
};

Detector initial_model(const TrainConfig& config) { return Detector(config.detector, splitmix64(config.seed)); }

const std::vector<int>& training_indices(const Dataset& data) {
  if (data.split.train.empty()) throw DataError("dataset has no training split");
  return data.split.train;
}

void check_trainable(const TrainConfig& config, const Dataset& data) {
  const auto& train = training_indices(data);
  bool real = false, fake = false;
  std::set<int> groups;
  for (int i : train) {
    const Sample& s = data.samples.at(static_cast<std::size_t>(i));
    (s.label == 1 ? fake : real) = true;
    groups.insert(s.intersection());
  }
  if (!real || !fake) throw DataError("training split contains a single class");
  if (config.lambda_fair > 0.0 && static_cast<int>(groups.size()) < kGroupCount) {
    throw DataError("training split lacks some intersectional groups; the alignment loss needs all of them");
  }
  const auto& first = data.samples.at(static_cast<std::size_t>(train.front())).image;
  if (first.rows() != config.detector.height || first.cols() != config.detector.width) {
    throw DataError("image size does not match the detector configuration");
  }
}

std::vector<Tensor> collect_grads(const ForwardResult& r) {
  std::vector<Tensor> grads;
  grads.reserve(r.params.size());
  for (const Var& p : r.params) grads.push_back(p.grad());
  return grads;
}

template <typename Fn>
void for_each_batch(const std::vector<int>& order, Index batch_size, Fn&& fn) {
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
    fn(std::span<const int>(order.data() + start, stop - start));
  }
}

}  // namespace

TrainResult train(const TrainConfig& config, const Dataset& data, std::ostream* fairness_trace) {
  config.validate();
  check_trainable(config, data);
  const auto started = std::chrono::steady_clock::now();

  Streams streams(config.seed);
  TrainResult out{initial_model(config), ChannelMask(config.detector.last_channels()), {}};
  std::vector<int> order = training_indices(data);

  FairnessOptions fair_opts;
  fair_opts.epsilon = config.epsilon;
  fair_opts.max_iter = config.sinkhorn_max_iter;
  fair_opts.tol = config.sinkhorn_tol;
  fair_opts.m_min = config.m_min;
  fair_opts.mode = config.fairness_mode;

  if (fairness_trace) write_fairness_trace_header(*fairness_trace);
  std::int64_t step = 0;
  for (int e = 1; e <= config.max_iterations; ++e) {
    IterationRecord rec;
    rec.iteration = e;
    if (config.pr_c > 0.0 && out.mask.active_count() > 1) {
      std::vector<int> scoring = training_indices(data);
      std::shuffle(scoring.begin(), scoring.end(), streams.scoring);
      const FairnessIndexTable table = score_channels(out.model, out.mask, data, scoring, config.batch_size,
                                                      config.scoring_batches, config.snnl);
      rec.fairness_index = table.index;
      rec.decoupled = decouple_candidates(table.index, config.pr_c, out.mask);
      out.mask.decouple(rec.decoupled);
    } else {
      out.mask.decouple({});
    }
    out.history.iterations.push_back(rec);

    const bool align = config.lambda_fair > 0.0 && (!config.defer_alignment || e == config.max_iterations);
    for (int epoch = 1; epoch <= config.epochs_for_iteration(e); ++epoch) {
      std::shuffle(order.begin(), order.end(), streams.shuffle);
      for_each_batch(order, config.batch_size, [&](std::span<const int> batch) {
        const Tensor images = batch_images(data, batch);
        const std::vector<int> labels = batch_labels(data, batch);
        const std::vector<int> groups = batch_groups(data, batch);

        Graph g;
        const ForwardResult r = out.model.forward(g, images, out.mask);
        Var loss = classification_loss(r.logits, labels);
        const double cls = loss.value().item();

        const Eigen::VectorXd& probs = r.fake_prob.value().data();
        const FairnessPlan plan =
            plan_fairness(std::span<const double>(probs.data(), static_cast<std::size_t>(probs.size())), labels,
                          groups, fair_opts, streams.fairness);
        if (align && !plan.terms.empty()) loss = add(loss, scale(apply_fairness(r.fake_prob, plan), config.lambda_fair));

        StepRecord s;
        s.step = step;
        s.iteration = e;
        s.epoch = epoch;
        s.loss = total_loss(cls, plan.value, align ? config.lambda_fair : 0.0);
        s.fair_group = plan.groups.size() == 1 ? plan.groups.front() : -1;
        s.fair_skipped = plan.skipped;
        if (!std::isfinite(s.loss.total) || !std::isfinite(loss.value().item())) {
          throw NumericError("non-finite loss at step " + std::to_string(step));
        }
        out.history.steps.push_back(s);
        if (fairness_trace) append_fairness_trace(*fairness_trace, step, plan);

        g.backward(loss);
        out.model.sgd_step(collect_grads(r), config.learning_rate);
        ++step;
      });
    }
  }
  out.history.final_mask = out.mask;
  out.history.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return out;
}

Detector train_cross_entropy(const TrainConfig& config, const Dataset& data) {
  config.validate();
  check_trainable(config, data);
  Streams streams(config.seed);
  Detector model = initial_model(config);
  const ChannelMask all_active(config.detector.last_channels());
  std::vector<int> order = training_indices(data);
  for (int e = 1; e <= config.max_iterations; ++e) {
    for (int epoch = 1; epoch <= config.epochs_for_iteration(e); ++epoch) {
      std::shuffle(order.begin(), order.end(), streams.shuffle);
      for_each_batch(order, config.batch_size, [&](std::span<const int> batch) {
        Graph g;
        const ForwardResult r = model.forward(g, batch_images(data, batch), all_active);
        const std::vector<int> labels = batch_labels(data, batch);
        g.backward(cross_entropy(r.logits, labels));
        model.sgd_step(collect_grads(r), config.learning_rate);
      });
    }
  }
  return model;
}

Eigen::VectorXd predict(const Detector& model, const ChannelMask& mask, const Dataset& data,
                        std::span<const int> indices, Index batch_size) {
  Eigen::VectorXd out(static_cast<Index>(indices.size()));
  for (std::size_t start = 0; start < indices.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t stop = std::min(indices.size(), start + static_cast<std::size_t>(batch_size));
    const auto batch = indices.subspan(start, stop - start);
    out.segment(static_cast<Index>(start), static_cast<Index>(batch.size())) =
        model.fake_probability(batch_images(data, batch), mask);
  }
  return out;
}

MetricsReport evaluate(const Detector& model, const ChannelMask& mask, const Dataset& data,
                       std::span<const int> indices, double threshold) {
  if (indices.empty()) throw DataError("cannot evaluate an empty split");
  const Eigen::VectorXd scores = predict(model, mask, data, indices);
  const std::vector<int> labels = batch_labels(data, indices);
  const std::vector<int> groups = batch_groups(data, indices);
  return report(std::span<const double>(scores.data(), indices.size()), labels, groups, threshold);
}

std::vector<SweepCell> sweep(const TrainConfig& base, const Dataset& data, const SweepGrid& grid,
                             std::span<const int> eval_indices) {
  std::vector<SweepCell> cells;
  if (grid.is_lambda_sweep()) {
    for (double l : grid.lambdas) cells.push_back({base.pr_c, base.max_iterations, l, false, {}, {}});
  } else {
    if (grid.pr_c.empty() || grid.iterations.empty()) throw ConfigError("sweep grid is empty");
    for (double p : grid.pr_c)
      for (int it : grid.iterations) cells.push_back({p, it, base.lambda_fair, false, {}, {}});
  }
  for (auto& cell : cells) {
    TrainConfig cfg = base;
    cfg.pr_c = cell.pr_c;
    cfg.max_iterations = cell.iterations;
    cfg.lambda_fair = cell.lambda;
    try {
      const TrainResult r = train(cfg, data);
      cell.report = evaluate(r.model, r.mask, data, eval_indices, cfg.threshold);
      cell.ok = true;
    } catch (const std::exception& e) {
      cell.error = e.what();
    }
  }
  return cells;
}

void write_sweep_csv(std::ostream& os, const std::vector<SweepCell>& cells) {
  const auto old = os.precision(17);
  os << "pr_c,max_iterations,lambda,status,auc,f_fpr_gender,f_fpr_race,f_fpr_intersection,f_dp_intersection,"
        "es_auc_intersection\n";
  for (const auto& c : cells) {
    os << c.pr_c << ',' << c.iterations << ',' << c.lambda << ',' << (c.ok ? "ok" : "failed");
    if (c.ok && c.report) {
      const auto& r = *c.report;
      os << ',' << r.auc << ',' << r.axis(Axis::Gender).f_fpr << ',' << r.axis(Axis::Race).f_fpr << ','
         << r.axis(Axis::Intersection).f_fpr << ',' << r.axis(Axis::Intersection).f_dp << ','
         << r.axis(Axis::Intersection).es_auc;
    } else {
      os << ",,,,,,";
    }
    os << '\n';
  }
  os.precision(old);
}

std::vector<RobustnessRow> robustness_eval(const Detector& model, const ChannelMask& mask, const Dataset& data,
                                           std::span<const int> indices, std::span<const Perturbation> kinds,
                                           std::span<const double> intensities, double threshold,
                                           std::uint64_t seed) {
  if (!std::is_sorted(intensities.begin(), intensities.end())) {
    throw UsageError("robustness intensities must be sorted ascending");
  }
  const MetricsReport clean = evaluate(model, mask, data, indices, threshold);
  std::vector<RobustnessRow> rows;
  for (Perturbation kind : kinds) {
    for (double intensity : intensities) {
      Dataset perturbed;
      perturbed.config = data.config;
      perturbed.samples.reserve(indices.size());
      std::vector<int> local(indices.size());
      for (std::size_t i = 0; i < indices.size(); ++i) {
        Sample s = data.samples.at(static_cast<std::size_t>(indices[i]));
        s.image = perturb(s.image, kind, intensity, splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(indices[i]))));
        perturbed.samples.push_back(std::move(s));
        local[i] = static_cast<int>(i);
      }
      RobustnessRow row;
      row.kind = kind;
      row.intensity = intensity;
      row.report = evaluate(model, mask, perturbed, local, threshold);
      for (std::size_t a = 0; a < row.report.axes.size(); ++a) {
        row.delta_f_fpr.push_back(row.report.axes[a].f_fpr - clean.axes[a].f_fpr);
        row.delta_es_auc.push_back(row.report.axes[a].es_auc - clean.axes[a].es_auc);
      }
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

void write_robustness_csv(std::ostream& os, const std::vector<RobustnessRow>& rows) {
  const auto old = os.precision(17);
  os << "kind,intensity,axis,auc,f_fpr,f_dp,es_auc,delta_f_fpr,delta_es_auc\n";
  for (const auto& r : rows) {
    for (std::size_t a = 0; a < r.report.axes.size(); ++a) {
      const auto& m = r.report.axes[a];
      os << perturbation_name(r.kind) << ',' << r.intensity << ',' << axis_name(m.axis) << ',' << r.report.auc << ','
         << m.f_fpr << ',' << m.f_dp << ',' << m.es_auc << ',' << r.delta_f_fpr[a] << ',' << r.delta_es_auc[a]
         << '\n';
    }
  }
  os.precision(old);
}

void write_history_csv(std::ostream& os, const TrainHistory& history) {
  const auto old = os.precision(17);
  os << "step,iteration,epoch,l_cls,l_fair,lambda,l_total,fair_group,fair_skipped\n";
  for (const auto& s : history.steps) {
    os << s.step << ',' << s.iteration << ',' << s.epoch << ',' << s.loss.cls << ',' << s.loss.fair << ','
       << s.loss.lambda << ',' << s.loss.total << ',' << s.fair_group << ',' << (s.fair_skipped ? 1 : 0) << '\n';
  }
  os.precision(old);
}

void write_decoupling_csv(std::ostream& os, const TrainHistory& history) {
  os << "iteration,decoupled\n";
  for (const auto& it : history.iterations) {
    os << it.iteration << ',';
    for (std::size_t i = 0; i < it.decoupled.size(); ++i) os << (i ? " " : "") << it.decoupled[i];
    os << '\n';
  }
}

}  // namespace fairdet

// fairdet: dataset generation, training, evaluation, sweeps and robustness
// runs from the command line.
//
// Exit codes: 0 success, 2 configuration or usage error, 3 data error,
// 4 numeric failure, 1 anything else.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "fairdet/config.hpp"
#include "fairdet/harness.hpp"

namespace fs = std::filesystem;
using namespace fairdet;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitOther = 1;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

// Extra arguments of the form --key=value (or key=value) override the config file.
KeyValues overrides(const std::vector<std::string>& extras) {
  KeyValues kv;
  for (std::string a : extras) {
    while (!a.empty() && a.front() == '-') a.erase(a.begin());
    const auto eq = a.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("unrecognised argument '" + a + "', expected --key=value");
    kv[a.substr(0, eq)] = a.substr(eq + 1);
  }
  return kv;
}

// Config file plus overrides; keys outside both sections are rejected.
KeyValues gather(const std::string& config_path, const std::vector<std::string>& extras) {
  KeyValues kv = config_path.empty() ? KeyValues{} : load_key_values(config_path);
  for (auto& [k, v] : overrides(extras)) kv[k] = v;
  for (const auto& [k, v] : kv) {
    if (!gen_config_keys().count(k) && !train_config_keys().count(k)) {
      throw ConfigError("unknown configuration key '" + k + "'");
    }
  }
  return kv;
}

std::vector<double> parse_doubles(const std::string& list) {
  std::vector<double> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("expected a comma-separated list of numbers, got '" + list + "'");
    }
  }
  return out;
}

std::vector<int> split_indices(const Dataset& d, const std::string& name) {
  if (name == "train") return d.split.train;
  if (name == "val") return d.split.val;
  if (name == "test") return d.split.test;
  if (name == "all") {
    std::vector<int> all(d.samples.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
    return all;
  }
  throw ConfigError("split must be train, val, test or all");
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream os(p);
  if (!os) throw DataError("cannot write " + p.string());
  return os;
}

void write_json(const fs::path& p, const nlohmann::json& j) { open_out(p) << j.dump(2) << '\n'; }

void print_table(std::ostream& os, const MetricsReport& r) {
  os << std::fixed << std::setprecision(4);
  os << "samples " << r.count << ", threshold " << r.threshold << ", AUC " << r.auc << '\n';
  os << std::left << std::setw(14) << "axis" << std::right << std::setw(10) << "F_FPR" << std::setw(10) << "F_DP"
     << std::setw(10) << "es-AUC" << '\n';
  for (const auto& m : r.axes) {
    os << std::left << std::setw(14) << axis_name(m.axis) << std::right << std::setw(10) << m.f_fpr << std::setw(10)
       << m.f_dp << std::setw(10) << m.es_auc << '\n';
  }
  for (const auto& m : r.axes) {
    os << '\n' << axis_name(m.axis) << " subgroups\n";
    for (const auto& s : m.subgroups) {
      os << "  " << std::left << std::setw(16) << s.name << std::right << " n=" << std::setw(5) << s.count
         << "  FPR " << std::setw(7) << s.fpr << "  fake-rate " << std::setw(7) << s.fake_rate << "  AUC "
         << std::setw(7) << s.auc << '\n';
    }
  }
  os.unsetf(std::ios::floatfield);
}

// --- subcommands ---------------------------------------------------------

struct GenArgs {
  std::string config, out, manifest, split = "0.6,0.2,0.2";
  std::optional<std::uint64_t> seed;
};

void run_gen(const GenArgs& a, const std::vector<std::string>& extras) {
  GenConfig c;
  apply_gen_config(c, gather(a.config, extras));
  if (a.seed) c.seed = *a.seed;
  const auto r = parse_doubles(a.split);
  if (r.size() != 3) throw ConfigError("--split needs three ratios");
  Dataset d = generate(c);
  d.split = split_dataset(d, {r[0], r[1], r[2]}, c.seed);
  save_dataset(a.out, d);
  const std::string manifest = a.manifest.empty() ? a.out + ".manifest.csv" : a.manifest;
  auto os = open_out(manifest);
  write_manifest(os, d);
  std::cout << "wrote " << d.size() << " samples to " << a.out << " (train " << d.split.train.size() << ", val "
            << d.split.val.size() << ", test " << d.split.test.size() << "), manifest " << manifest << '\n';
}

struct TrainArgs {
  std::string config, data, run_dir, eval_split = "test";
  std::uint64_t seed = 0;
};

void run_train(const TrainArgs& a, const std::vector<std::string>& extras) {
  TrainConfig c;
  apply_train_config(c, gather(a.config, extras));
  c.seed = a.seed;
  c.validate();
  const Dataset d = load_dataset(a.data);
  const std::vector<int> eval_idx = split_indices(d, a.eval_split);

  const fs::path dir(a.run_dir);
  fs::create_directories(dir);
  open_out(dir / "config.txt") << to_text(c);

  std::ostringstream trace;
  const TrainResult r = train(c, d, &trace);
  save_checkpoint((dir / "model.ckpt").string(), r.model, r.mask);
  {
    auto os = open_out(dir / "history.csv");
    write_history_csv(os, r.history);
  }
  {
    auto os = open_out(dir / "decoupling.csv");
    write_decoupling_csv(os, r.history);
  }
  {
    auto os = open_out(dir / "fairness_index.csv");
    os << "iteration,channel_index,F_k\n" << std::setprecision(17);
    for (const auto& it : r.history.iterations)
      for (Index k = 0; k < it.fairness_index.size(); ++k) os << it.iteration << ',' << k << ',' << it.fairness_index[k] << '\n';
  }
  open_out(dir / "fairness_trace.csv") << trace.str();

  const MetricsReport report = evaluate(r.model, r.mask, d, eval_idx, c.threshold);
  write_json(dir / "metrics.json", to_json(report));

  auto warn = open_out(dir / "warnings.log");
  std::size_t skipped = 0, unconverged = 0;
  for (const auto& s : r.history.steps) skipped += s.fair_skipped ? 1 : 0;
  std::istringstream lines(trace.str());
  std::string line;
  std::getline(lines, line);
  while (std::getline(lines, line)) unconverged += line.ends_with(",0") ? 1 : 0;
  if (skipped) warn << "alignment loss skipped in " << skipped << " of " << r.history.steps.size() << " steps\n";
  if (unconverged) warn << unconverged << " transport solves stopped above the scaling tolerance\n";
  for (const auto& m : report.axes)
    for (const auto& w : m.warnings) warn << w << '\n';

  std::cout << "trained " << r.history.steps.size() << " steps in " << std::fixed << std::setprecision(1)
            << r.history.wall_seconds << " s, decoupled " << r.mask.decoupled_count() << " of " << r.mask.channels()
            << " channels; " << a.eval_split << " AUC " << std::setprecision(4) << report.auc << ", intersection F_FPR "
            << report.axis(Axis::Intersection).f_fpr << "; outputs in " << dir.string() << '\n';
}

struct EvalArgs {
  std::string data, checkpoint, split = "test", out;
  double threshold = 0.5;
};

void run_eval(const EvalArgs& a) {
  const Dataset d = load_dataset(a.data);
  const auto [model, mask] = load_checkpoint(a.checkpoint);
  const MetricsReport r = evaluate(model, mask, d, split_indices(d, a.split), a.threshold);
  if (a.out.empty()) {
    print_table(std::cout, r);
  } else {
    write_json(a.out, to_json(r));
    std::cout << "wrote " << a.out << '\n';
  }
}

struct SweepArgs {
  std::string config, data, out, pr_c = "1,2,3,4,5", iterations = "1,2,3,4,5", lambdas, split = "test";
  std::uint64_t seed = 0;
};

void run_sweep(const SweepArgs& a, const std::vector<std::string>& extras) {
  TrainConfig c;
  apply_train_config(c, gather(a.config, extras));
  c.seed = a.seed;
  const Dataset d = load_dataset(a.data);
  SweepGrid grid;
  if (!a.lambdas.empty()) {
    grid.lambdas = parse_doubles(a.lambdas);
  } else {
    grid.pr_c = parse_doubles(a.pr_c);
    for (double it : parse_doubles(a.iterations)) grid.iterations.push_back(static_cast<int>(it));
  }
  const auto cells = sweep(c, d, grid, split_indices(d, a.split));
  auto os = open_out(a.out);
  write_sweep_csv(os, cells);
  std::size_t failed = 0;
  for (const auto& cell : cells)
    if (!cell.ok) {
      ++failed;
      std::cerr << "cell pr_c=" << cell.pr_c << " iterations=" << cell.iterations << " lambda=" << cell.lambda
                << " failed: " << cell.error << '\n';
    }
  std::cout << "wrote " << cells.size() << " cells (" << failed << " failed) to " << a.out << '\n';
}

struct RobustArgs {
  std::string data, checkpoint, out, kinds = "GN,GB,BWN", intensities = "0,0.05,0.1,0.2", split = "test";
  double threshold = 0.5;
  std::uint64_t seed = 0;
};

void run_robustness(const RobustArgs& a) {
  const Dataset d = load_dataset(a.data);
  const auto [model, mask] = load_checkpoint(a.checkpoint);
  std::vector<Perturbation> kinds;
  std::stringstream ss(a.kinds);
  std::string k;
  while (std::getline(ss, k, ',')) {
    try {
      kinds.push_back(parse_perturbation(k));
    } catch (const UsageError& e) {
      throw ConfigError(e.what());
    }
  }
  const auto levels = parse_doubles(a.intensities);
  const auto rows = robustness_eval(model, mask, d, split_indices(d, a.split), kinds, levels, a.threshold, a.seed);
  auto os = open_out(a.out);
  write_robustness_csv(os, rows);
  std::cout << "wrote " << rows.size() << " perturbation settings to " << a.out << '\n';
}

struct ReportArgs {
  std::string metrics, format = "table";
};

void run_report(const ReportArgs& a) {
  std::ifstream is(a.metrics);
  if (!is) throw DataError("cannot open " + a.metrics);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed metrics file " + a.metrics + ": " + e.what());
  }
  const MetricsReport r = report_from_json(j);
  if (a.format == "table") print_table(std::cout, r);
  else if (a.format == "csv") write_report_csv(std::cout, r);
  else if (a.format == "json") std::cout << to_json(r).dump(2) << '\n';
  else throw ConfigError("--format must be table, csv or json");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fair deepfake detection on synthetic data"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "generate a synthetic dataset with a stratified split");
  g->add_option("--config", gen.config, "key=value config file");
  g->add_option("--out", gen.out, "dataset file")->required();
  g->add_option("--manifest", gen.manifest, "CSV manifest (default <out>.manifest.csv)");
  g->add_option("--split", gen.split, "train,val,test ratios");
  g->add_option("--seed", gen.seed, "generator and split seed");
  g->allow_extras();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train a detector and write a run directory");
  t->add_option("--config", tr.config, "key=value config file");
  t->add_option("--data", tr.data, "dataset file")->required();
  t->add_option("--run-dir", tr.run_dir, "output directory")->required();
  t->add_option("--seed", tr.seed, "training seed")->required();
  t->add_option("--eval-split", tr.eval_split, "split evaluated after training");
  t->allow_extras();

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "evaluate a checkpoint");
  e->add_option("--data", ev.data, "dataset file")->required();
  e->add_option("--checkpoint", ev.checkpoint, "model checkpoint")->required();
  e->add_option("--split", ev.split, "train, val, test or all");
  e->add_option("--threshold", ev.threshold, "decision threshold for F_FPR and F_DP");
  e->add_option("--out", ev.out, "metrics JSON (default: table on stdout)");

  SweepArgs sw;
  auto* s = app.add_subcommand("sweep", "train one run per grid cell");
  s->add_option("--config", sw.config, "key=value config file");
  s->add_option("--data", sw.data, "dataset file")->required();
  s->add_option("--seed", sw.seed, "training seed shared by all cells")->required();
  s->add_option("--out", sw.out, "CSV output")->required();
  s->add_option("--pr-c", sw.pr_c, "decoupling percentages");
  s->add_option("--iterations", sw.iterations, "decoupling iteration counts");
  s->add_option("--lambdas", sw.lambdas, "alignment weights (replaces the pr_c x iterations grid)");
  s->add_option("--split", sw.split, "evaluation split");
  s->allow_extras();

  RobustArgs ro;
  auto* r = app.add_subcommand("robustness", "metrics under GN, GB and BWN perturbations");
  r->add_option("--data", ro.data, "dataset file")->required();
  r->add_option("--checkpoint", ro.checkpoint, "model checkpoint")->required();
  r->add_option("--out", ro.out, "CSV output")->required();
  r->add_option("--kinds", ro.kinds, "comma-separated subset of GN,GB,BWN");
  r->add_option("--intensities", ro.intensities, "ascending intensity ladder");
  r->add_option("--split", ro.split, "evaluation split");
  r->add_option("--threshold", ro.threshold, "decision threshold");
  r->add_option("--seed", ro.seed, "perturbation seed");

  ReportArgs rep;
  auto* p = app.add_subcommand("report", "render a metrics JSON file");
  p->add_option("--metrics", rep.metrics, "metrics JSON")->required();
  p->add_option("--format", rep.format, "table, csv or json");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (g->parsed()) run_gen(gen, g->remaining());
    else if (t->parsed()) run_train(tr, t->remaining());
    else if (e->parsed()) run_eval(ev);
    else if (s->parsed()) run_sweep(sw, s->remaining());
    else if (r->parsed()) run_robustness(ro);
    else if (p->parsed()) run_report(rep);
  } catch (const ConfigError& err) {
    std::cerr << "config error: " << err.what() << '\n';
    return kExitConfig;
  } catch (const UsageError& err) {
    std::cerr << "usage error: " << err.what() << '\n';
    return kExitConfig;
  } catch (const DataError& err) {
    std::cerr << "data error: " << err.what() << '\n';
    return kExitData;
  } catch (const NumericError& err) {
    std::cerr << "numeric error: " << err.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kExitOther;
  }
  return kExitOk;
}

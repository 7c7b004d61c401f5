#include "fairdet/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace fairdet {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
  }
}

std::int64_t to_int(const std::string& key, const std::string& v) {
  std::int64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("key '" + key + "': expected an integer, got '" + v + "'");
  }
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("key '" + key + "': expected an unsigned integer, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("key '" + key + "': expected true or false, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

void check_unknown(const KeyValues& kv, const std::set<std::string>& known) {
  for (const auto& [k, v] : kv)
    if (!known.count(k)) throw ConfigError("unknown configuration key '" + k + "'");
}

}  // namespace

KeyValues parse_key_values(std::istream& is) {
  KeyValues kv;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

KeyValues load_key_values(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path);
  return parse_key_values(is);
}

const std::set<std::string>& gen_config_keys() {
  static const std::set<std::string> keys{"count",           "height",          "width",
                                          "proportions",     "fake_fraction",   "noise_std",
                                          "group_amplitude", "artifact_amplitude", "leakage",
                                          "seed"};
  return keys;
}

const std::set<std::string>& train_config_keys() {
  static const std::set<std::string> keys{
      "channels",     "kernel",          "stride",  "input_mean", "input_scale",           "max_iterations",   "epochs",
      "batch_size",   "learning_rate",   "lambda_fair",      "pr_c",             "epsilon",
      "sinkhorn_max_iter", "sinkhorn_tol", "snnl_temperature", "snnl_clamp",     "scoring_batches",
      "m_min",        "fairness_mode",   "defer_alignment",  "threshold",        "seed"};
  return keys;
}

void apply_gen_config(GenConfig& c, const KeyValues& kv, bool strict) {
  if (strict) check_unknown(kv, gen_config_keys());
  for (const auto& [k, v] : kv) {
    if (k == "count") c.count = to_int(k, v);
    else if (k == "height") c.height = to_int(k, v);
    else if (k == "width") c.width = to_int(k, v);
    else if (k == "proportions") {
      const auto items = split_list(v);
      if (items.size() != c.proportions.size()) throw ConfigError("proportions needs 8 comma-separated values");
      for (std::size_t i = 0; i < items.size(); ++i) c.proportions[i] = to_double(k, items[i]);
    } else if (k == "fake_fraction") c.fake_fraction = to_double(k, v);
    else if (k == "noise_std") c.noise_std = to_double(k, v);
    else if (k == "group_amplitude") c.group_amplitude = to_double(k, v);
    else if (k == "artifact_amplitude") c.artifact_amplitude = to_double(k, v);
    else if (k == "leakage") c.leakage = to_double(k, v);
    else if (k == "seed") c.seed = to_u64(k, v);
  }
}

void apply_train_config(TrainConfig& c, const KeyValues& kv, bool strict) {
  if (strict) check_unknown(kv, train_config_keys());
  for (const auto& [k, v] : kv) {
    if (k == "channels") {
      c.detector.channels.clear();
      for (const auto& item : split_list(v)) c.detector.channels.push_back(to_int(k, item));
    } else if (k == "kernel") c.detector.kernel = to_int(k, v);
    else if (k == "stride") c.detector.stride = to_int(k, v);
    else if (k == "input_mean") c.detector.input_mean = to_double(k, v);
    else if (k == "input_scale") c.detector.input_scale = to_double(k, v);
    else if (k == "max_iterations") c.max_iterations = static_cast<int>(to_int(k, v));
    else if (k == "epochs") c.epochs = static_cast<int>(to_int(k, v));
    else if (k == "batch_size") c.batch_size = to_int(k, v);
    else if (k == "learning_rate") c.learning_rate = to_double(k, v);
    else if (k == "lambda_fair") c.lambda_fair = to_double(k, v);
    else if (k == "pr_c") c.pr_c = to_double(k, v);
    else if (k == "epsilon") c.epsilon = to_double(k, v);
    else if (k == "sinkhorn_max_iter") c.sinkhorn_max_iter = static_cast<int>(to_int(k, v));
    else if (k == "sinkhorn_tol") c.sinkhorn_tol = to_double(k, v);
    else if (k == "snnl_temperature") c.snnl.temperature = to_double(k, v);
    else if (k == "snnl_clamp") c.snnl.clamp = to_double(k, v);
    else if (k == "scoring_batches") c.scoring_batches = to_int(k, v);
    else if (k == "m_min") c.m_min = to_int(k, v);
    else if (k == "fairness_mode") {
      if (v == "single_group") c.fairness_mode = FairnessMode::SingleGroup;
      else if (v == "all_groups") c.fairness_mode = FairnessMode::AllGroups;
      else throw ConfigError("fairness_mode must be single_group or all_groups");
    } else if (k == "defer_alignment") c.defer_alignment = to_bool(k, v);
    else if (k == "threshold") c.threshold = to_double(k, v);
    else if (k == "seed") c.seed = to_u64(k, v);
  }
}

std::string to_text(const GenConfig& c) {
  std::ostringstream os;
  os << "count=" << c.count << '\n' << "height=" << c.height << '\n' << "width=" << c.width << '\n';
  os << "proportions=";
  for (std::size_t i = 0; i < c.proportions.size(); ++i) os << (i ? "," : "") << fmt(c.proportions[i]);
  os << '\n';
  os << "fake_fraction=" << fmt(c.fake_fraction) << '\n'
     << "noise_std=" << fmt(c.noise_std) << '\n'
     << "group_amplitude=" << fmt(c.group_amplitude) << '\n'
     << "artifact_amplitude=" << fmt(c.artifact_amplitude) << '\n'
     << "leakage=" << fmt(c.leakage) << '\n'
     << "seed=" << c.seed << '\n';
  return os.str();
}

std::string to_text(const TrainConfig& c) {
  std::ostringstream os;
  os << "channels=";
  for (std::size_t i = 0; i < c.detector.channels.size(); ++i) os << (i ? "," : "") << c.detector.channels[i];
  os << '\n'
     << "kernel=" << c.detector.kernel << '\n'
     << "stride=" << c.detector.stride << '\n'
     << "input_mean=" << fmt(c.detector.input_mean) << '\n'
     << "input_scale=" << fmt(c.detector.input_scale) << '\n'
     << "max_iterations=" << c.max_iterations << '\n'
     << "epochs=" << c.epochs << '\n'
     << "batch_size=" << c.batch_size << '\n'
     << "learning_rate=" << fmt(c.learning_rate) << '\n'
     << "lambda_fair=" << fmt(c.lambda_fair) << '\n'
     << "pr_c=" << fmt(c.pr_c) << '\n'
     << "epsilon=" << fmt(c.epsilon) << '\n'
     << "sinkhorn_max_iter=" << c.sinkhorn_max_iter << '\n'
     << "sinkhorn_tol=" << fmt(c.sinkhorn_tol) << '\n'
     << "snnl_temperature=" << fmt(c.snnl.temperature) << '\n'
     << "snnl_clamp=" << fmt(c.snnl.clamp) << '\n'
     << "scoring_batches=" << c.scoring_batches << '\n'
     << "m_min=" << c.m_min << '\n'
     << "fairness_mode=" << (c.fairness_mode == FairnessMode::SingleGroup ? "single_group" : "all_groups") << '\n'
     << "defer_alignment=" << (c.defer_alignment ? "true" : "false") << '\n'
     << "threshold=" << fmt(c.threshold) << '\n'
     << "seed=" << c.seed << '\n';
  return os.str();
}

}  // namespace fairdet

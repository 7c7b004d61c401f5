#pragma once

// Flat key=value configuration files. One entry per line, '#' starts a
// comment, whitespace around keys and values is ignored. Keys:
//
//   dataset:  count height width proportions (8 comma-separated values in
//             intersection order Male-Asian..Female-Others) fake_fraction
//             noise_std group_amplitude artifact_amplitude leakage seed
//   training: channels (comma-separated) kernel stride input_mean input_scale
//             max_iterations epochs
//             batch_size learning_rate lambda_fair pr_c epsilon
//             sinkhorn_max_iter sinkhorn_tol snnl_temperature snnl_clamp
//             scoring_batches m_min fairness_mode (single_group|all_groups)
//             defer_alignment (true|false) threshold seed
//
// `seed` is shared by both sections.

#include <iosfwd>
#include <map>
#include <set>
#include <string>

#include "fairdet/harness.hpp"
#include "fairdet/synthdata.hpp"

namespace fairdet {

using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(std::istream& is);
KeyValues load_key_values(const std::string& path);

const std::set<std::string>& gen_config_keys();
const std::set<std::string>& train_config_keys();

/// Applies recognised keys; with `strict`, unknown keys raise ConfigError.
void apply_gen_config(GenConfig& c, const KeyValues& kv, bool strict = false);
void apply_train_config(TrainConfig& c, const KeyValues& kv, bool strict = false);

std::string to_text(const GenConfig& c);
std::string to_text(const TrainConfig& c);

}  // namespace fairdet

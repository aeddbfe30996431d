#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "pgasr/datasets.hpp"
#include "pgasr/evaluation.hpp"
#include "pgasr/model.hpp"
#include "pgasr/pipeline.hpp"

namespace pgasr::cli {

// Union of every setting a command can consume.
struct RunConfig {
  std::filesystem::path data;
  std::filesystem::path out;
  std::string method = "pgasr";  // pgasr, pn_dis or pn_con
  std::uint64_t seed = 0;

  data::SyntheticConfig synthetic;
  model::ModelConfig model;
  pipeline::TrainConfig train;

  std::vector<double> levels{0.1, 0.3, 0.5};
  int n_seeds = 4;
  std::string axis = "alpha";
  int jobs = 1;
  double mape_mask = eval::kDefaultMapeMask;
  double noise_sigma = 1.0;
  bool noise_inputs_only = false;
  std::vector<double> sweep_alphas{0.6, 0.7, 0.8, 0.9, 1.0};
  std::vector<double> sweep_betas{0.6, 0.7, 0.8, 0.9, 1.0};
  std::vector<int> sweep_folds{2, 3, 4, 5};

  // Cross-field checks; throws ConfigError.
  void validate() const;
  // Seeds seed, seed + 1, ..., seed + n_seeds - 1.
  std::vector<std::uint64_t> seed_list() const;
};

// Applies one key=value setting; unknown keys and malformed values throw
// ConfigError.
void apply_setting(RunConfig& config, const std::string& key, const std::string& value);

// Parses "key = value" lines; blank lines and lines starting with '#' are
// ignored.
std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text);
std::vector<std::pair<std::string, std::string>> read_config_file(const std::filesystem::path& file);

// Every known key with its current value, in a stable order.
std::vector<std::pair<std::string, std::string>> effective_settings(const RunConfig& config);
std::string snapshot(const RunConfig& config);
std::vector<std::string> known_keys();

}  // namespace pgasr::cli

#include "pgasr/run_config.hpp"

#include <charconv>
#include <cstdio>
#include <functional>
#include <sstream>

#include "pgasr/error.hpp"
#include "pgasr/tensor_io.hpp"

namespace pgasr::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const std::string t = trim(text);
  const char* end = t.data() + t.size();
  auto [ptr, ec] = std::from_chars(t.data(), end, v);
  if (ec != std::errc() || ptr != end || t.empty())
    throw ConfigError("invalid value '" + text + "' for " + key);
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  if (t == "true" || t == "1" || t == "yes") return true;
  if (t == "false" || t == "0" || t == "no") return false;
  throw ConfigError("invalid boolean '" + text + "' for " + key);
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& text) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<T>(key, item));
  if (out.empty()) throw ConfigError("empty list for " + key);
  return out;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename T>
std::string fmt_list(const std::vector<T>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    if constexpr (std::is_floating_point_v<T>) {
      s += fmt(v[i]);
    } else {
      s += std::to_string(v[i]);
    }
  }
  return s;
}

struct Key {
  std::string name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define PGASR_NUM(key, expr)                                                                               \
  Key {                                                                                                    \
    key, [](RunConfig& c, const std::string& v) { expr = parse_number<std::decay_t<decltype(expr)>>(key, v); }, \
        [](const RunConfig& c) {                                                                           \
          if constexpr (std::is_floating_point_v<std::decay_t<decltype(expr)>>) return fmt(expr);         \
          else return std::to_string(expr);                                                                \
        }                                                                                                  \
  }

#define PGASR_BOOL(key, expr)                                                                    \
  Key {                                                                                          \
    key, [](RunConfig& c, const std::string& v) { expr = parse_bool(key, v); },                 \
        [](const RunConfig& c) { return std::string(expr ? "true" : "false"); }                  \
  }

const std::vector<Key>& keys() {
  static const std::vector<Key> table = [] {
    std::vector<Key> k;
    k.push_back({"data", [](RunConfig& c, const std::string& v) { c.data = trim(v); },
                 [](const RunConfig& c) { return c.data.string(); }});
    k.push_back({"out", [](RunConfig& c, const std::string& v) { c.out = trim(v); },
                 [](const RunConfig& c) { return c.out.string(); }});
    k.push_back({"method",
                 [](RunConfig& c, const std::string& v) {
                   const std::string m = trim(v);
                   if (m != "pgasr" && m != "pn_dis" && m != "pn_con")
                     throw ConfigError("method must be pgasr, pn_dis or pn_con, got '" + m + "'");
                   c.method = m;
                 },
                 [](const RunConfig& c) { return c.method; }});
    k.push_back(PGASR_NUM("seed", c.seed));

    k.push_back(PGASR_NUM("synthetic.height", c.synthetic.height));
    k.push_back(PGASR_NUM("synthetic.width", c.synthetic.width));
    k.push_back({"synthetic.neighborhood",
                 [](RunConfig& c, const std::string& v) { c.synthetic.neighborhood = graph::parse_neighborhood(trim(v)); },
                 [](const RunConfig& c) { return graph::to_string(c.synthetic.neighborhood); }});
    k.push_back(PGASR_NUM("synthetic.steps", c.synthetic.n_steps));
    k.push_back(PGASR_NUM("synthetic.window", c.synthetic.window));
    k.push_back(PGASR_NUM("synthetic.w_s", c.synthetic.w_s_true));
    k.push_back(PGASR_NUM("synthetic.w_r", c.synthetic.w_r_true));
    k.push_back(PGASR_NUM("synthetic.source_amplitude", c.synthetic.source_amplitude));
    k.push_back(PGASR_NUM("synthetic.transport_rate", c.synthetic.transport_rate));
    k.push_back(PGASR_NUM("synthetic.period", c.synthetic.period));
    k.push_back(PGASR_NUM("synthetic.demand_swing", c.synthetic.demand_swing));
    k.push_back(PGASR_NUM("synthetic.demand_jitter", c.synthetic.demand_jitter));
    k.push_back(PGASR_NUM("synthetic.hotspot_gain", c.synthetic.hotspot_gain));
    k.push_back(PGASR_NUM("synthetic.phase_gradient", c.synthetic.phase_gradient));
    k.push_back(PGASR_NUM("synthetic.interval_minutes", c.synthetic.interval_minutes));
    k.push_back(PGASR_NUM("synthetic.corruption", c.synthetic.corruption_fraction));
    k.push_back(PGASR_NUM("synthetic.noise_sigma", c.synthetic.noise_sigma));
    k.push_back(PGASR_BOOL("synthetic.corrupt_inputs_only", c.synthetic.corrupt_inputs_only));

    k.push_back(PGASR_NUM("model.embed_dim", c.model.embed_dim));
    k.push_back(PGASR_NUM("model.st_blocks", c.model.n_st_blocks));
    k.push_back(PGASR_NUM("model.chebyshev_order", c.model.chebyshev_order));
    k.push_back(PGASR_NUM("model.temporal_kernel", c.model.temporal_kernel));
    k.push_back(PGASR_NUM("model.dropout", c.model.dropout_rate));
    k.push_back(PGASR_NUM("model.integrator_steps", c.model.integrator_steps));

    k.push_back(PGASR_NUM("train.learning_rate", c.train.learning_rate));
    k.push_back(PGASR_NUM("train.batch_size", c.train.batch_size));
    k.push_back(PGASR_NUM("train.lambda", c.train.lambda_balance));
    k.push_back(PGASR_NUM("train.folds", c.train.folds));
    k.push_back(PGASR_NUM("train.alpha", c.train.alpha));
    k.push_back(PGASR_NUM("train.beta", c.train.beta));
    k.push_back(PGASR_NUM("train.mc_passes", c.train.mc_passes));
    k.push_back(PGASR_NUM("train.patience_pretrain", c.train.patience_pretrain));
    k.push_back(PGASR_NUM("train.patience_retrain", c.train.patience_retrain));
    k.push_back(PGASR_NUM("train.max_epochs", c.train.max_epochs));
    k.push_back(PGASR_NUM("train.clip_norm", c.train.clip_norm));
    k.push_back(PGASR_NUM("train.inference_batch", c.train.inference_batch));
    k.push_back({"train.consistency_target",
                 [](RunConfig& c, const std::string& v) {
                   const std::string t = trim(v);
                   if (t == "prediction") c.train.consistency_target = reweight::ConsistencyTarget::prediction;
                   else if (t == "label") c.train.consistency_target = reweight::ConsistencyTarget::label;
                   else throw ConfigError("train.consistency_target must be prediction or label");
                 },
                 [](const RunConfig& c) {
                   return std::string(c.train.consistency_target == reweight::ConsistencyTarget::prediction ? "prediction"
                                                                                                            : "label");
                 }});
    k.push_back({"train.aggregation",
                 [](RunConfig& c, const std::string& v) {
                   const std::string t = trim(v);
                   if (t == "row_normalized") c.train.aggregation = reweight::Aggregation::row_normalized;
                   else if (t == "binary") c.train.aggregation = reweight::Aggregation::binary;
                   else throw ConfigError("train.aggregation must be row_normalized or binary");
                 },
                 [](const RunConfig& c) {
                   return std::string(c.train.aggregation == reweight::Aggregation::row_normalized ? "row_normalized"
                                                                                                   : "binary");
                 }});

    k.push_back({"experiment.levels", [](RunConfig& c, const std::string& v) {
                   c.levels = parse_list<double>("experiment.levels", v);
                 },
                 [](const RunConfig& c) { return fmt_list(c.levels); }});
    k.push_back(PGASR_NUM("experiment.seeds", c.n_seeds));
    k.push_back({"experiment.axis", [](RunConfig& c, const std::string& v) { c.axis = trim(v); },
                 [](const RunConfig& c) { return c.axis; }});
    k.push_back(PGASR_NUM("experiment.jobs", c.jobs));
    k.push_back(PGASR_NUM("experiment.mape_mask", c.mape_mask));
    k.push_back(PGASR_NUM("experiment.noise_sigma", c.noise_sigma));
    k.push_back(PGASR_BOOL("experiment.noise_inputs_only", c.noise_inputs_only));
    k.push_back({"experiment.alphas", [](RunConfig& c, const std::string& v) {
                   c.sweep_alphas = parse_list<double>("experiment.alphas", v);
                 },
                 [](const RunConfig& c) { return fmt_list(c.sweep_alphas); }});
    k.push_back({"experiment.betas", [](RunConfig& c, const std::string& v) {
                   c.sweep_betas = parse_list<double>("experiment.betas", v);
                 },
                 [](const RunConfig& c) { return fmt_list(c.sweep_betas); }});
    k.push_back({"experiment.folds", [](RunConfig& c, const std::string& v) {
                   c.sweep_folds = parse_list<int>("experiment.folds", v);
                 },
                 [](const RunConfig& c) { return fmt_list(c.sweep_folds); }});
    return k;
  }();
  return table;
}

#undef PGASR_NUM
#undef PGASR_BOOL

}  // namespace

void RunConfig::validate() const {
  train.validate();
  synthetic.validate();
  if (model.dropout_rate < 0.0F || model.dropout_rate >= 1.0F) throw ConfigError("model.dropout must lie in [0, 1)");
  if (n_seeds < 1) throw ConfigError("experiment.seeds must be at least 1");
  if (jobs < 1) throw ConfigError("experiment.jobs must be at least 1");
  if (mape_mask < 0.0) throw ConfigError("experiment.mape_mask must be non-negative");
  if (!(noise_sigma > 0.0)) throw ConfigError("experiment.noise_sigma must be positive");
  for (double l : levels)
    if (!(l >= 0.0 && l <= 1.0)) throw ConfigError("noise levels must lie in [0, 1]");
  for (int d : sweep_folds)
    if (d < 2) throw ConfigError("swept D values must be at least 2");
}

std::vector<std::uint64_t> RunConfig::seed_list() const {
  std::vector<std::uint64_t> s;
  for (int i = 0; i < n_seeds; ++i) s.push_back(seed + static_cast<std::uint64_t>(i));
  return s;
}

void apply_setting(RunConfig& config, const std::string& key, const std::string& value) {
  const std::string k = trim(key);
  for (const auto& entry : keys()) {
    if (entry.name == k) {
      entry.set(config, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + k + "'");
}

std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + " is not key = value: " + t);
    const std::string key = trim(t.substr(0, eq));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + " has an empty key");
    out.emplace_back(key, trim(t.substr(eq + 1)));
  }
  return out;
}

std::vector<std::pair<std::string, std::string>> read_config_file(const std::filesystem::path& file) {
  if (!std::filesystem::exists(file)) throw ConfigError("config file not found: " + file.string());
  return parse_config_text(io::read_text(file));
}

std::vector<std::pair<std::string, std::string>> effective_settings(const RunConfig& config) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& k : keys()) out.emplace_back(k.name, k.get(config));
  return out;
}

std::string snapshot(const RunConfig& config) {
  std::string s = "# effective configuration\n";
  for (const auto& [k, v] : effective_settings(config)) s += k + " = " + v + "\n";
  return s;
}

std::vector<std::string> known_keys() {
  std::vector<std::string> out;
  for (const auto& k : keys()) out.push_back(k.name);
  return out;
}

}  // namespace pgasr::cli

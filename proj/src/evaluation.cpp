#include "pgasr/evaluation.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>
#include <thread>

#include "pgasr/error.hpp"
#include "pgasr/log.hpp"
#include "pgasr/tensor_io.hpp"

namespace pgasr::eval {

namespace fs = std::filesystem;
using nlohmann::json;

MethodSpec method_pgasr() { return {"pgasr", true, std::nullopt, std::nullopt, std::nullopt}; }
MethodSpec method_pn() { return {"pn", false, std::nullopt, std::nullopt, std::nullopt}; }

std::uint64_t noise_seed(std::uint64_t seed, double level) {
  return pipeline::derive_seed(seed, 0x4E015E, static_cast<std::uint64_t>(std::llround(level * 1e6)));
}

// ------------------------------------------------------------------ cells

json CellResult::to_json() const {
  json j{{"method", method}, {"seed", seed}, {"noise_level", noise_level}};
  if (!axis.empty()) {
    j["axis"] = axis;
    j["axis_value"] = axis_value;
  }
  j["test"] = test ? test->to_json() : json(nullptr);
  j["val"] = val ? val->to_json() : json(nullptr);
  if (weights) {
    j["weights"] = {{"mean_tilde_clean", weights->mean_tilde_clean},
                    {"mean_tilde_corrupted", weights->mean_tilde_corrupted},
                    {"n_clean", weights->n_clean},
                    {"n_corrupted", weights->n_corrupted}};
    const auto r = weights->corrupted_to_clean_ratio();
    j["weights"]["corrupted_to_clean_ratio"] = r ? json(*r) : json(nullptr);
  }
  if (!fold_hash.empty()) j["fold_hash"] = fold_hash;
  if (!error.empty()) j["error"] = error;
  return j;
}

CellResult run_cell(const data::DatasetBundle& bundle, const MethodSpec& method, const ExperimentOptions& options,
                    std::uint64_t seed, const std::optional<fs::path>& run_dir) {
  const auto t0 = std::chrono::steady_clock::now();
  CellResult cell;
  cell.method = method.name;
  cell.seed = seed;
  try {
    pipeline::TrainConfig tc = options.train;
    tc.seed = seed;
    if (method.alpha) tc.alpha = *method.alpha;
    if (method.beta) tc.beta = *method.beta;
    if (method.folds) tc.folds = *method.folds;
    pipeline::RunResult r = method.reweighted ? pipeline::run_pgasr(bundle, options.model, tc, run_dir)
                                              : pipeline::train_pn_only(bundle, options.model, tc, run_dir);
    cell.test = r.test_metrics;
    cell.val = r.val_metrics;
    if (r.weights) cell.weights = reweight::summarize(*r.weights, bundle);
    if (!r.fold_ids.empty()) cell.fold_hash = pipeline::fold_id_hash(r.fold_ids);
  } catch (const std::exception& e) {
    cell.error = e.what();
    log::info("cell " + method.name + " seed " + std::to_string(seed) + " failed: " + e.what());
  }
  cell.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return cell;
}

namespace {

// Runs independent cell jobs on up to `jobs` threads; results keep job order.
std::vector<CellResult> run_jobs(const std::vector<std::function<CellResult()>>& tasks, int jobs) {
  std::vector<CellResult> out(tasks.size());
  const auto workers = static_cast<std::size_t>(std::max(1, std::min<int>(jobs, static_cast<int>(tasks.size()))));
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < tasks.size(); i = next++) out[i] = tasks[i]();
  };
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return out;
}

std::optional<fs::path> cell_dir(const ExperimentOptions& o, const std::string& name) {
  if (!o.cell_root) return std::nullopt;
  return *o.cell_root / name;
}

std::string level_tag(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

json base_config(const std::string& kind, const data::DatasetBundle& bundle, const ExperimentOptions& o) {
  json train = o.train.to_json();
  train.erase("seed");
  return json{{"kind", kind},
              {"dataset", bundle.name},
              {"provenance", data::to_string(bundle.provenance)},
              {"nodes", bundle.node_count()},
              {"window", bundle.window},
              {"n_train", bundle.train.size()},
              {"n_val", bundle.val.size()},
              {"n_test", bundle.test.size()},
              {"model", o.model.to_json()},
              {"train", train},
              {"noise_sigma", o.noise.sigma},
              {"noise_inputs_only", o.noise.inputs_only}};
}

struct Stat {
  double mean = 0.0;
  std::optional<double> std;
};

Stat stat_of(const std::vector<double>& v) {
  Stat s;
  if (v.empty()) return s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  if (v.size() >= 2) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

json stat_json(const std::vector<double>& v) {
  const Stat s = stat_of(v);
  return json{{"mean", s.mean}, {"std", s.std ? json(*s.std) : json(nullptr)}, {"n", v.size()}};
}

std::string group_key(const CellResult& c) {
  std::ostringstream os;
  os << c.method << '|' << level_tag(c.noise_level) << '|' << c.axis << '|' << level_tag(c.axis_value);
  return os.str();
}

std::string opt_num(const std::optional<double>& v) {
  if (!v) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6f", *v);
  return buf;
}

std::string num(double v) { return opt_num(v); }

std::string metric_columns(const CellResult& c) {
  if (!c.ok()) return ",,,,failed";
  return num(c.test->mae_in) + "," + num(c.test->mae_out) + "," + opt_num(c.test->mape_in) + "," +
         opt_num(c.test->mape_out) + ",ok";
}

const char* kMetricHeader = "mae_in,mae_out,mape_in,mape_out,status";

}  // namespace

// ----------------------------------------------------------------- report

std::size_t ExperimentReport::failed_cells() const {
  std::size_t n = 0;
  for (const auto& c : cells) n += c.ok() ? 0 : 1;
  return n;
}

json ExperimentReport::aggregates() const {
  std::map<std::string, std::vector<const CellResult*>> groups;
  std::vector<std::string> order;
  for (const auto& c : cells) {
    const auto key = group_key(c);
    if (!groups.count(key)) order.push_back(key);
    groups[key].push_back(&c);
  }
  json arr = json::array();
  for (const auto& key : order) {
    const auto& g = groups[key];
    std::vector<double> in, out, mean, ratio;
    for (const auto* c : g) {
      if (!c->ok()) continue;
      in.push_back(c->test->mae_in);
      out.push_back(c->test->mae_out);
      mean.push_back(c->test->mean_mae());
      if (c->weights)
        if (auto r = c->weights->corrupted_to_clean_ratio()) ratio.push_back(*r);
    }
    json j{{"method", g.front()->method},
           {"noise_level", g.front()->noise_level},
           {"n_cells", g.size()},
           {"n_ok", in.size()},
           {"mae_in", stat_json(in)},
           {"mae_out", stat_json(out)},
           {"mae_mean", stat_json(mean)}};
    if (!g.front()->axis.empty()) {
      j["axis"] = g.front()->axis;
      j["axis_value"] = g.front()->axis_value;
    }
    if (!ratio.empty()) j["weight_ratio_corrupted_to_clean"] = stat_json(ratio);
    arr.push_back(j);
  }
  return arr;
}

json ExperimentReport::best_by_axis() const {
  json best = json::object();
  for (const auto& agg : aggregates()) {
    if (!agg.contains("axis") || agg["n_ok"].get<std::size_t>() == 0) continue;
    const std::string axis = agg["axis"];
    const double m = agg["mae_mean"]["mean"];
    if (!best.contains(axis) || m < best[axis]["mae_mean"].get<double>())
      best[axis] = {{"value", agg["axis_value"]}, {"mae_mean", m}};
  }
  return best;
}

json ExperimentReport::to_json(bool include_timings) const {
  json j{{"schema_version", kReportSchemaVersion}, {"kind", kind}, {"config", config}, {"seeds", seeds}};
  json arr = json::array();
  for (const auto& c : cells) arr.push_back(c.to_json());
  j["cells"] = arr;
  j["aggregates"] = aggregates();
  if (kind == "sweep") j["best_by_axis"] = best_by_axis();
  j["failed_cells"] = failed_cells();
  if (include_timings) {
    json t = json::array();
    for (const auto& c : cells) t.push_back(c.wall_time_s);
    j["timings"] = {{"cell_wall_time_s", t}};
  }
  return j;
}

std::string ExperimentReport::payload() const { return to_json(false).dump(); }

void ExperimentReport::write(const fs::path& file) const {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  io::write_text(file, to_json(true).dump(2) + "\n");
}

// ------------------------------------------------------------ experiments

ExperimentReport noise_robustness_experiment(const data::DatasetBundle& bundle, const std::vector<double>& levels,
                                             const ExperimentOptions& options, std::vector<MethodSpec> methods) {
  if (levels.empty()) throw ConfigError("noise experiment needs at least one level");
  if (options.seeds.empty()) throw ConfigError("experiment needs at least one seed");
  for (double l : levels)
    if (!(l >= 0.0 && l <= 1.0)) throw ConfigError("noise levels must lie in [0, 1]");
  if (!bundle.standardized) throw ConfigError("noise experiment needs a standardized bundle");
  if (methods.empty()) methods = {method_pn(), method_pgasr()};

  // One noisy copy per (level, seed), shared by every method of that cell.
  std::vector<std::vector<std::shared_ptr<const data::DatasetBundle>>> noisy(levels.size());
  for (std::size_t li = 0; li < levels.size(); ++li)
    for (auto seed : options.seeds)
      noisy[li].push_back(levels[li] > 0.0 ? std::make_shared<const data::DatasetBundle>(data::inject_noise(
                                                 bundle, levels[li], noise_seed(seed, levels[li]), options.noise))
                                           : std::make_shared<const data::DatasetBundle>(bundle));

  std::vector<std::function<CellResult()>> tasks;
  for (std::size_t li = 0; li < levels.size(); ++li)
    for (const auto& m : methods)
      for (std::size_t si = 0; si < options.seeds.size(); ++si) {
        const double level = levels[li];
        const auto seed = options.seeds[si];
        const auto data = noisy[li][si];
        const auto dir = cell_dir(options, "noise_" + level_tag(level) + "_" + m.name + "_seed" + std::to_string(seed));
        tasks.push_back([data, m, level, seed, dir, &options] {
          CellResult c = run_cell(*data, m, options, seed, dir);
          c.noise_level = level;
          return c;
        });
      }

  ExperimentReport report;
  report.kind = "noise";
  report.config = base_config("noise", bundle, options);
  report.config["levels"] = levels;
  json names = json::array();
  for (const auto& m : methods) names.push_back(m.name);
  report.config["methods"] = names;
  report.seeds = options.seeds;
  report.cells = run_jobs(tasks, options.jobs);
  return report;
}

ExperimentReport ablation_experiment(const data::DatasetBundle& bundle, const ExperimentOptions& options) {
  if (options.seeds.empty()) throw ConfigError("experiment needs at least one seed");
  const std::vector<MethodSpec> variants{
      method_pgasr(),
      {"wo_mu", true, 0.0, std::nullopt, std::nullopt},
      {"wo_pc", true, std::nullopt, 0.0, std::nullopt},
      method_pn(),
  };
  std::vector<std::function<CellResult()>> tasks;
  for (auto seed : options.seeds)
    for (const auto& m : variants) {
      const auto dir = cell_dir(options, "ablation_" + m.name + "_seed" + std::to_string(seed));
      tasks.push_back([&bundle, m, seed, dir, &options] { return run_cell(bundle, m, options, seed, dir); });
    }
  ExperimentReport report;
  report.kind = "ablation";
  report.config = base_config("ablation", bundle, options);
  report.config["variants"] = {"pgasr", "wo_mu", "wo_pc", "pn"};
  report.seeds = options.seeds;
  report.cells = run_jobs(tasks, options.jobs);

  // Reweighted variants of one seed must share their fold split.
  for (auto seed : options.seeds) {
    std::string hash;
    for (const auto& c : report.cells) {
      if (c.seed != seed || c.fold_hash.empty()) continue;
      if (hash.empty()) hash = c.fold_hash;
      if (c.fold_hash != hash) throw Error("ablation variants disagree on the fold split for seed " + std::to_string(seed));
    }
  }
  return report;
}

ExperimentReport hyperparameter_sweep(const data::DatasetBundle& bundle, const SweepGrid& grid,
                                      const ExperimentOptions& options) {
  if (options.seeds.empty()) throw ConfigError("experiment needs at least one seed");
  if (grid.axes.empty()) throw ConfigError("sweep needs at least one axis");
  std::vector<std::function<CellResult()>> tasks;
  for (const auto& axis : grid.axes) {
    std::vector<double> values;
    if (axis == "alpha") {
      values = grid.alphas;
    } else if (axis == "beta") {
      values = grid.betas;
    } else if (axis == "D") {
      for (int d : grid.folds) values.push_back(d);
    } else {
      throw ConfigError("unknown sweep axis '" + axis + "' (expected alpha, beta or D)");
    }
    if (values.empty()) throw ConfigError("sweep axis " + axis + " has no values");
    for (double v : values) {
      MethodSpec m = method_pgasr();
      if (axis == "alpha") m.alpha = v;
      if (axis == "beta") m.beta = v;
      if (axis == "D") m.folds = static_cast<int>(v);
      for (auto seed : options.seeds) {
        const auto dir = cell_dir(options, "sweep_" + axis + "_" + level_tag(v) + "_seed" + std::to_string(seed));
        tasks.push_back([&bundle, m, seed, dir, axis, v, &options] {
          CellResult c = run_cell(bundle, m, options, seed, dir);
          c.axis = axis;
          c.axis_value = v;
          return c;
        });
      }
    }
  }
  ExperimentReport report;
  report.kind = "sweep";
  report.config = base_config("sweep", bundle, options);
  report.config["axes"] = grid.axes;
  report.config["alphas"] = grid.alphas;
  report.config["betas"] = grid.betas;
  report.config["folds"] = grid.folds;
  report.seeds = options.seeds;
  report.cells = run_jobs(tasks, options.jobs);
  return report;
}

// ----------------------------------------------------------------- tables

void write_noise_table(const ExperimentReport& report, const fs::path& file) {
  std::string out = std::string("level,method,seed,") + kMetricHeader + "\n";
  for (const auto& c : report.cells)
    out += level_tag(c.noise_level) + "," + c.method + "," + std::to_string(c.seed) + "," + metric_columns(c) + "\n";
  io::write_text(file, out);
}

void write_ablation_table(const ExperimentReport& report, const fs::path& file) {
  std::string out = std::string("variant,seed,") + kMetricHeader + "\n";
  for (const auto& c : report.cells) out += c.method + "," + std::to_string(c.seed) + "," + metric_columns(c) + "\n";
  io::write_text(file, out);
}

void write_sweep_table(const ExperimentReport& report, const fs::path& file) {
  std::string out = std::string("axis,value,seed,") + kMetricHeader + "\n";
  for (const auto& c : report.cells)
    out += c.axis + "," + level_tag(c.axis_value) + "," + std::to_string(c.seed) + "," + metric_columns(c) + "\n";
  io::write_text(file, out);
}

}  // namespace pgasr::eval

#include "pgasr/cli.hpp"

#include <CLI11.hpp>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "pgasr/datasets.hpp"
#include "pgasr/error.hpp"
#include "pgasr/evaluation.hpp"
#include "pgasr/log.hpp"
#include "pgasr/pipeline.hpp"
#include "pgasr/run_config.hpp"
#include "pgasr/tensor_io.hpp"

namespace pgasr::cli {

namespace fs = std::filesystem;

namespace {

void print_metrics(std::ostream& out, const std::string& label, const eval::MetricSet& m) {
  char buf[256];
  auto pct = [](const std::optional<double>& v) { return v ? *v : -1.0; };
  std::snprintf(buf, sizeof buf, "%s MAE in %.4f out %.4f | MAPE in %s out %s (%zu points)", label.c_str(), m.mae_in,
                m.mae_out, m.mape_in ? std::to_string(pct(m.mape_in)).c_str() : "n/a",
                m.mape_out ? std::to_string(pct(m.mape_out)).c_str() : "n/a", m.n_eval_points);
  out << buf << '\n';
}

std::string bundle_summary(const data::DatasetBundle& b) {
  std::ostringstream os;
  os << b.name << ": " << b.graph.height() << "x" << b.graph.width() << " grid (" << b.node_count() << " nodes), window "
     << b.window << ", interval " << b.interval_minutes << " min, train/val/test " << b.train.size() << "/"
     << b.val.size() << "/" << b.test.size();
  const auto corrupted = b.corrupted_train_ids().size();
  if (corrupted) os << ", " << corrupted << " corrupted train samples";
  return os.str();
}

data::DatasetBundle load_data(const RunConfig& cfg) {
  if (cfg.data.empty()) throw ConfigError("--data is required");
  if (!fs::exists(cfg.data / "manifest.json"))
    throw ConfigError("dataset directory " + cfg.data.string() + " has no manifest.json");
  return data::load_bundle(cfg.data);
}

void require_out(const RunConfig& cfg) {
  if (cfg.out.empty()) throw ConfigError("--out is required");
}

eval::ExperimentOptions experiment_options(const RunConfig& cfg) {
  eval::ExperimentOptions o;
  o.model = cfg.model;
  o.train = cfg.train;
  o.seeds = cfg.seed_list();
  o.jobs = cfg.jobs;
  o.noise.sigma = cfg.noise_sigma;
  o.noise.inputs_only = cfg.noise_inputs_only;
  o.cell_root = cfg.out / "cells";
  return o;
}

int cmd_prepare(const RunConfig& cfg, bool synthetic, const std::string& convert, const std::string& name,
                std::ostream& out) {
  require_out(cfg);
  if (synthetic == !convert.empty()) throw ConfigError("prepare needs exactly one of --synthetic or --convert");
  if (synthetic) {
    data::SyntheticConfig sc = cfg.synthetic;
    sc.seed = cfg.seed;
    sc.validate();
    auto bundle = data::generate_synthetic(sc);
    if (!name.empty()) bundle.name = name;
    data::write_bundle(bundle, cfg.out);
    io::write_text(cfg.out / "config.txt", snapshot(cfg));
    out << bundle_summary(bundle) << '\n';
  } else {
    out << data::convert_public_dump(convert, cfg.out, name) << '\n';
  }
  return kExitOk;
}

int cmd_train(const RunConfig& cfg, std::ostream& out) {
  require_out(cfg);
  cfg.validate();
  const auto bundle = load_data(cfg);
  model::ModelConfig mc = cfg.model;
  mc.variant = cfg.method == "pn_con" ? model::Variant::pn_con : model::Variant::pn_dis;
  mc.validate(bundle.window);
  pipeline::TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;

  fs::create_directories(cfg.out);
  io::write_text(cfg.out / "config.txt", snapshot(cfg));
  out << bundle_summary(bundle) << '\n';

  eval::ExperimentOptions o;
  o.model = mc;
  o.train = tc;
  o.seeds = {cfg.seed};
  const eval::MethodSpec method =
      cfg.method == "pgasr" ? eval::method_pgasr() : eval::MethodSpec{cfg.method, false, {}, {}, {}};
  eval::CellResult cell = eval::run_cell(bundle, method, o, cfg.seed, cfg.out);

  eval::ExperimentReport report;
  report.kind = "train";
  report.config = {{"method", cfg.method}, {"dataset", bundle.name}, {"model", mc.to_json()}, {"train", tc.to_json()}};
  report.seeds = {cfg.seed};
  report.cells = {cell};
  report.write(cfg.out / "report.json");
  if (!cell.ok()) throw Error(cell.error);
  print_metrics(out, "test", *cell.test);
  if (cell.weights) {
    if (auto r = cell.weights->corrupted_to_clean_ratio())
      out << "mean weight corrupted/clean: " << *r << '\n';
  }
  return kExitOk;
}

int cmd_experiment(const RunConfig& cfg, const std::string& which, std::ostream& out) {
  require_out(cfg);
  cfg.validate();
  const auto bundle = load_data(cfg);
  model::ModelConfig mc = cfg.model;
  mc.validate(bundle.window);
  fs::create_directories(cfg.out);
  io::write_text(cfg.out / "config.txt", snapshot(cfg));
  const auto options = experiment_options(cfg);

  eval::ExperimentReport report;
  if (which == "noise") {
    report = eval::noise_robustness_experiment(bundle, cfg.levels, options);
    eval::write_noise_table(report, cfg.out / "fig3_noise.csv");
  } else if (which == "ablation") {
    report = eval::ablation_experiment(bundle, options);
    eval::write_ablation_table(report, cfg.out / "fig4_ablation.csv");
  } else {
    eval::SweepGrid grid;
    grid.alphas = cfg.sweep_alphas;
    grid.betas = cfg.sweep_betas;
    grid.folds = cfg.sweep_folds;
    if (cfg.axis == "all") {
      grid.axes = {"alpha", "beta", "D"};
    } else {
      grid.axes = {cfg.axis};
    }
    report = eval::hyperparameter_sweep(bundle, grid, options);
    eval::write_sweep_table(report, cfg.out / "fig5_sweep.csv");
  }
  report.write(cfg.out / "report.json");
  for (const auto& agg : report.aggregates()) {
    out << agg["method"].get<std::string>();
    if (agg.contains("axis")) out << " " << agg["axis"].get<std::string>() << "=" << agg["axis_value"].get<double>();
    if (which == "noise") out << " level " << agg["noise_level"].get<double>();
    out << ": mean MAE " << agg["mae_mean"]["mean"].get<double>() << " over " << agg["n_ok"].get<std::size_t>()
        << " seeds\n";
  }
  const auto failed = report.failed_cells();
  if (failed) {
    out << failed << " of " << report.cells.size() << " cells failed; see report.json\n";
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Physics-guided urban flow prediction with active sample reweighting", "pgasr"};
  // Long form only: prepare uses --h for the grid height.
  app.set_help_flag("--help", "print this help and exit");
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_file;
  std::vector<std::string> sets;
  int verbosity = 0;
  app.add_option("--config", config_file, "key = value config file");
  app.add_option("--set", sets, "override a config key (key=value), repeatable");
  app.add_flag("-v,--verbose", verbosity, "log progress to stderr (repeat for per-epoch logs)");

  // Flag -> config key. Values stay strings so the key table does the parsing.
  std::vector<std::pair<CLI::Option*, std::string>> bound;
  std::map<std::string, std::string> storage;
  auto bind = [&](CLI::App* sub, const std::string& flag, const std::string& key, const std::string& help) {
    bound.emplace_back(sub->add_option(flag, storage[sub->get_name() + flag], help), key);
  };

  auto* prepare = app.add_subcommand("prepare", "write a tensor-bundle dataset directory");
  bool synthetic = false;
  std::string convert;
  std::string name;
  prepare->add_flag("--synthetic", synthetic, "generate a synthetic conservation-law bundle");
  prepare->add_option("--convert", convert, "convert a public dump directory ({train,val,test}.npz)");
  prepare->add_option("--name", name, "dataset name recorded in the manifest");
  bind(prepare, "--out", "out", "output bundle directory");
  bind(prepare, "--h", "synthetic.height", "grid height");
  bind(prepare, "--w", "synthetic.width", "grid width");
  bind(prepare, "--steps", "synthetic.steps", "simulated time steps");
  bind(prepare, "--window", "synthetic.window", "input window length");
  bind(prepare, "--corruption", "synthetic.corruption", "fraction of corrupted training samples");
  bind(prepare, "--seed", "seed", "generator seed");

  auto* train = app.add_subcommand("train", "train P-GASR or a PN baseline");
  bind(train, "--data", "data", "bundle directory");
  bind(train, "--out", "out", "run directory");
  bind(train, "--method", "method", "pgasr, pn_dis or pn_con");
  bind(train, "--alpha", "train.alpha", "uncertainty coefficient");
  bind(train, "--beta", "train.beta", "consistency coefficient");
  bind(train, "--d", "train.folds", "number of folds D");
  bind(train, "--seed", "seed", "run seed");
  bind(train, "--max-epochs", "train.max_epochs", "epoch cap");
  bind(train, "--embed-dim", "model.embed_dim", "latent width d");

  auto* experiment = app.add_subcommand("experiment", "run an experiment protocol");
  experiment->require_subcommand(1);
  std::string which;
  for (const char* kind : {"noise", "ablation", "sweep"}) {
    auto* sub = experiment->add_subcommand(kind, std::string(kind) + " experiment");
    sub->fallthrough();
    sub->callback([&which, kind] { which = kind; });
  }
  experiment->fallthrough();
  bind(experiment, "--data", "data", "bundle directory");
  bind(experiment, "--out", "out", "output directory");
  bind(experiment, "--levels", "experiment.levels", "comma-separated noise levels");
  bind(experiment, "--seeds", "experiment.seeds", "number of seeds, starting at --seed");
  bind(experiment, "--seed", "seed", "first seed");
  bind(experiment, "--axis", "experiment.axis", "sweep axis: alpha, beta, D or all");
  bind(experiment, "--jobs", "experiment.jobs", "parallel experiment cells");
  bind(experiment, "--max-epochs", "train.max_epochs", "epoch cap");
  bind(experiment, "--embed-dim", "model.embed_dim", "latent width d");

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  log::set_level(verbosity >= 2 ? log::Level::debug : verbosity == 1 ? log::Level::info : log::Level::quiet);

  try {
    RunConfig cfg;
    if (!config_file.empty())
      for (const auto& [k, v] : read_config_file(config_file)) apply_setting(cfg, k, v);
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
      apply_setting(cfg, s.substr(0, eq), s.substr(eq + 1));
    }
    for (const auto& [opt, key] : bound)
      if (opt->count() > 0) apply_setting(cfg, key, opt->as<std::string>());

    if (prepare->parsed()) return cmd_prepare(cfg, synthetic, convert, name, out);
    if (train->parsed()) return cmd_train(cfg, out);
    return cmd_experiment(cfg, which, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const LoadError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

int main(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, std::cout, std::cerr);
}

}  // namespace pgasr::cli

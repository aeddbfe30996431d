// Acceptance suite. With no arguments every criterion runs; otherwise only the
// named ones (A1 ... A8). Prints one PASS/FAIL line per criterion and exits
// nonzero when any of them failed.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "json.hpp"
#include "oracles.hpp"
#include "pgasr/cli.hpp"
#include "pgasr/datasets.hpp"
#include "pgasr/evaluation.hpp"
#include "pgasr/grid_graph.hpp"
#include "pgasr/model.hpp"
#include "pgasr/pipeline.hpp"
#include "pgasr/reweighting.hpp"
#include "pgasr/tensor_io.hpp"
#include "test_util.hpp"

using namespace pgasr;
using ag::Tensor;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

void note(Outcome& o, bool ok, const std::string& what) {
  if (!ok) o.pass = false;
  if (!o.detail.empty()) o.detail += "; ";
  o.detail += what + (ok ? "" : " [fail]");
}

graph::UrbanGraph random_graph(int m, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(m, m);
  for (int i = 0; i < m; ++i)
    for (int j = i + 1; j < m; ++j)
      if (u(rng) < 0.6 || j == i + 1) a(i, j) = a(j, i) = 0.1 + u(rng);
  return graph::UrbanGraph::from_adjacency(a, 1, m);
}

model::ModelConfig stub_config(int order, model::PhysicsActivation act) {
  model::ModelConfig cfg;
  cfg.embed_dim = 2;
  cfg.chebyshev_order = order;
  cfg.temporal_kernel = 1;
  cfg.dropout_rate = 0.0F;
  cfg.physics_activation = act;
  return cfg;
}

// Reduced-size training settings shared by the statistical criteria.
model::ModelConfig bench_model() {
  model::ModelConfig cfg;
  cfg.embed_dim = 16;
  return cfg;
}

// ---------------------------------------------------------------- A1

Outcome a1() {
  Outcome o;
  // Hand-set dyadic filters on the triangle graph.
  Eigen::MatrixXd adj = Eigen::MatrixXd::Ones(3, 3) - Eigen::MatrixXd::Identity(3, 3);
  const auto tri = graph::UrbanGraph::from_adjacency(adj, 1, 3);
  const auto op = graph::scaled_laplacian(tri, 3);
  const auto ctx = model::GraphContext::from(op);
  oracle::DenseStep step;
  step.scaled_laplacian = op.scaled_laplacian;
  auto row = [](double a, double b) {
    Eigen::RowVectorXd v(2);
    v << a, b;
    return v;
  };
  step.ws = {row(0.5, -0.25), row(0.125, 0.75), row(-0.5, 0.25)};
  step.wr = {row(0.25, 0.5), row(-0.375, 0.125), row(0.0625, -0.5)};
  step.w1.resize(2, 2);
  step.w1 << 0.5, -0.25, 0.75, 0.125;
  step.b1 = row(0.1875, -0.0625);
  step.w2.resize(2, 2);
  step.w2 << 1.0, -0.5, 0.25, 0.75;
  step.b2 = row(0.5, -0.25);
  const Tensor x = Tensor::from_vector({1, 2, 3, 2}, {0.1F, 0.2F, 0.3F, 0.4F, 0.5F, 0.6F,  //
                                                       1.0F, -0.5F, 0.25F, 0.75F, -1.0F, 0.5F});
  const Eigen::MatrixXd last = oracle::to_matrix(x).bottomRows(3);
  double worst_abs = 0.0;
  for (auto act : {model::PhysicsActivation::identity, model::PhysicsActivation::relu}) {
    step.relu = act == model::PhysicsActivation::relu;
    model::PhysicsGuidedNetwork net(stub_config(3, act), 3, 2, 1, std::make_shared<oracle::LastFrameEncoder>());
    step.install(net.state());
    const Eigen::MatrixXd want = step.decode(last + step.increment(last.col(0), last.col(1)));
    const Eigen::MatrixXd got = oracle::to_matrix(model::pn_dis_forward(x, ctx, net));
    worst_abs = std::max(worst_abs, (got - want).cwiseAbs().maxCoeff());
  }
  note(o, worst_abs < 1e-6, fmt("3-node PN-dis max |err| %.2e (< 1e-6)", worst_abs));

  // Chebyshev convolution against the spectral polynomial on 5-node graphs.
  std::mt19937_64 rng(2024);
  double worst_rel = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto g = random_graph(5, rng);
    for (int order = 1; order <= 4; ++order) {
      const auto gop = graph::scaled_laplacian(g, order);
      const auto gctx = model::GraphContext::from(gop);
      const Tensor in = testutil::random_tensor({1, 5, 3}, rng, false);
      std::vector<Tensor> w;
      std::vector<Eigen::MatrixXd> wd;
      for (int k = 0; k < order; ++k) {
        w.push_back(testutil::random_tensor({3, 4}, rng, false));
        wd.push_back(oracle::to_matrix(w.back()));
      }
      const Tensor b = testutil::random_tensor({4}, rng, false);
      const Eigen::MatrixXd got = oracle::to_matrix(model::chebyshev_conv(in, gctx, w, b));
      const Eigen::MatrixXd want =
          oracle::chebyshev_conv(gop.scaled_laplacian, oracle::to_matrix(in), wd, oracle::to_matrix(b).row(0));
      worst_rel = std::max(worst_rel, (got - want).norm() / want.norm());
    }
  }
  note(o, worst_rel < 1e-5, fmt("Chebyshev conv max rel err %.2e over 80 cases (< 1e-5)", worst_rel));
  return o;
}

// ---------------------------------------------------------------- A2

Outcome a2() {
  Outcome o;
  // Smooth toy: last-frame encoder, linear physics filters, tanh decoder.
  std::mt19937_64 rng(7);
  const auto g = graph::UrbanGraph::grid(2, 2);
  const auto ctx = model::GraphContext::from(graph::scaled_laplacian(g, 3));
  model::PhysicsGuidedNetwork net(stub_config(3, model::PhysicsActivation::identity), 4, 3, 13,
                                  std::make_shared<oracle::LastFrameEncoder>());
  const Tensor x = testutil::random_tensor({4, 3, 4, 2}, rng, false);
  // Targets sit 0.5 to 1.0 standardized units from the initial prediction,
  // so no absolute residual changes sign inside the stencil.
  const Tensor pred0 = net.forward(x, ctx);
  std::vector<float> y(pred0.numel());
  std::uniform_real_distribution<double> off(0.5, 1.0);
  std::bernoulli_distribution sign(0.5);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = pred0.data()[i] + static_cast<float>((sign(rng) ? 1 : -1) * off(rng));
  const Tensor target = Tensor::from_vector({4, 4, 2}, y);
  data::Standardizer st;
  st.mean = {5.0, 4.0};
  st.std = {3.0, 2.5};
  std::uniform_real_distribution<double> eps(0.0, 1.7);
  std::vector<double> e(4);
  for (double& v : e) v = eps(rng);
  const auto tilde = reweight::normalize_weights(e);
  const std::vector<float> w(tilde.begin(), tilde.end());
  const auto loss = [&] { return pipeline::weighted_loss(target, net.forward(x, ctx), w, 0.5, st); };

  auto& params = net.state().params;
  params.zero_grad();
  loss().backward();
  double gmax = 0.0;
  std::vector<std::pair<std::size_t, std::size_t>> slots;
  for (std::size_t p = 0; p < params.entries().size(); ++p) {
    const auto& t = params.entries()[p].second;
    for (std::size_t i = 0; i < t.numel(); ++i) {
      slots.emplace_back(p, i);
      gmax = std::max(gmax, static_cast<double>(std::abs(t.grad()[i])));
    }
  }
  std::shuffle(slots.begin(), slots.end(), rng);
  slots.resize(20);

  // Five-point central stencil; the denominator is floored at 1% of the
  // largest gradient, below which float32 differences cannot resolve 1e-3.
  const float h = 0.05F;
  double worst = 0.0;
  std::string worst_name;
  for (const auto& [p, i] : slots) {
    auto& [name, t] = params.entries()[p];
    const double analytic = t.grad()[i];
    auto data = t.mutable_data();
    const float keep = data[i];
    auto at = [&](float v) {
      data[i] = v;
      const double r = loss().item();
      data[i] = keep;
      return r;
    };
    const double numeric =
        (8.0 * (at(keep + h) - at(keep - h)) - (at(keep + 2 * h) - at(keep - 2 * h))) / (12.0 * h);
    const double rel =
        std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-2 * gmax});
    if (rel > worst) {
      worst = rel;
      worst_name = name + "[" + std::to_string(i) + "]";
    }
  }
  note(o, worst < 1e-3, fmt("20 sampled parameters, max rel err %.2e at %s (< 1e-3)", worst, worst_name.c_str()));
  return o;
}

// ---------------------------------------------------------------- A3

Outcome a3() {
  Outcome o;
  std::mt19937_64 rng(31);
  for (std::size_t n : {1UL, 2UL, 32UL, 37UL}) {
    double sum_err = 0.0;
    double lo = 1e9;
    double hi = -1e9;
    bool ranks = true;
    for (int trial = 0; trial < 500; ++trial) {
      // Mostly the range alpha*u + beta*c takes, sometimes wider.
      const double spread = trial % 5 == 0 ? 10.0 : 1.7;
      std::uniform_real_distribution<double> u(trial % 5 == 0 ? -spread : 0.0, spread);
      std::vector<double> e(n);
      for (double& v : e) v = u(rng);
      const auto t = reweight::normalize_weights(e);
      sum_err = std::max(sum_err, std::abs(std::accumulate(t.begin(), t.end(), 0.0) - 2.0));
      lo = std::min(lo, *std::min_element(t.begin(), t.end()));
      hi = std::max(hi, *std::max_element(t.begin(), t.end()));
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
          if (e[i] < e[j] && !(t[i] < t[j])) ranks = false;
    }
    const double b = 1.0 / static_cast<double>(n);
    const bool in_range = lo > b && hi < 1.0 + b;
    note(o, sum_err <= 1e-6 && in_range && ranks,
         fmt("N=%zu: |sum-2| %.1e, range [%.6g, %.6g] vs open (%.6g, %.6g), ranks %s", n, sum_err, lo, hi, b, 1.0 + b,
             ranks ? "kept" : "broken"));
  }
  return o;
}

// ---------------------------------------------------------------- A4

data::DatasetBundle small_bundle(double corruption, std::uint64_t seed) {
  data::SyntheticConfig cfg;
  cfg.height = 3;
  cfg.width = 3;
  cfg.window = 6;
  cfg.n_steps = 400;
  cfg.corruption_fraction = corruption;
  cfg.seed = seed;
  return data::generate_synthetic(cfg);
}

model::ModelConfig small_model(float dropout) {
  model::ModelConfig cfg;
  cfg.embed_dim = 8;
  cfg.n_st_blocks = 1;
  cfg.chebyshev_order = 3;
  cfg.temporal_kernel = 2;
  cfg.dropout_rate = dropout;
  return cfg;
}

Outcome a4() {
  Outcome o;
  const auto bundle = small_bundle(0.3, 4);
  const auto parts = pipeline::split_folds(bundle.train, 2);
  pipeline::TrainConfig tc;
  tc.seed = 4;

  // Dropout off: every MC pass is the same function, so u vanishes.
  {
    const auto mc = small_model(0.0F);
    const auto graph = pipeline::graph_context(bundle, mc);
    const model::PhysicsGuidedNetwork n0(mc, bundle.node_count(), bundle.window, 1);
    const model::PhysicsGuidedNetwork n1(mc, bundle.node_count(), bundle.window, 2);
    const std::vector<const model::PhysicsGuidedNetwork*> nets{&n0, &n1};
    const auto table = reweight::build_weight_table(nets, parts, bundle, graph, tc.weight_config());
    double umax = 0.0;
    for (const auto& r : table.rows()) umax = std::max(umax, std::abs(r.u_raw));
    note(o, umax == 0.0, fmt("dropout 0: max u_raw %.1e over %zu samples", umax, table.size()));
  }

  // alpha = beta = 0: every chunk is uniform.
  const auto mc = small_model(0.1F);
  const auto graph = pipeline::graph_context(bundle, mc);
  const model::PhysicsGuidedNetwork n0(mc, bundle.node_count(), bundle.window, 1);
  const model::PhysicsGuidedNetwork n1(mc, bundle.node_count(), bundle.window, 2);
  const std::vector<const model::PhysicsGuidedNetwork*> nets{&n0, &n1};
  pipeline::TrainConfig flat = tc;
  flat.alpha = 0.0;
  flat.beta = 0.0;
  const auto table = reweight::build_weight_table(nets, parts, bundle, graph, flat.weight_config());
  std::map<std::pair<int, int>, std::vector<double>> chunks;
  for (const auto& r : table.rows()) chunks[{r.fold, r.chunk}].push_back(r.epsilon_tilde);
  double spread = 0.0;
  for (const auto& [key, v] : chunks)
    spread = std::max(spread, *std::max_element(v.begin(), v.end()) - *std::min_element(v.begin(), v.end()));
  note(o, spread == 0.0, fmt("alpha=beta=0: max within-chunk spread %.1e over %zu chunks", spread, chunks.size()));

  // Frozen batch: the first full chunk. Weighted retraining with its uniform
  // weights must follow the unweighted trajectory, scaled by the weight.
  std::map<std::int64_t, const data::FlowSample*> by_id;
  for (const auto& s : bundle.train) by_id[s.sample_id] = &s;
  std::vector<const data::FlowSample*> frozen;
  std::vector<float> weights;
  for (const auto& r : table.rows()) {
    if (r.fold != 0 || r.chunk != 0) continue;
    frozen.push_back(by_id.at(r.sample_id));
    weights.push_back(static_cast<float>(r.epsilon_tilde));
  }
  const auto batch = model::make_batch(frozen, bundle.window, bundle.node_count());
  pipeline::TrainConfig step_cfg = tc;
  step_cfg.clip_norm = 0.0;  // clipping is not scale invariant
  model::PhysicsGuidedNetwork wnet(mc, bundle.node_count(), bundle.window, 99);
  model::PhysicsGuidedNetwork unet(mc, bundle.node_count(), bundle.window, 99);
  pipeline::Trainer wt(wnet, graph, bundle.standardizer, step_cfg);
  pipeline::Trainer ut(unet, graph, bundle.standardizer, step_cfg);
  std::mt19937_64 wrng(5);
  std::mt19937_64 urng(5);
  const double scale = weights.front();
  double worst = 0.0;
  double first = 0.0;
  double last = 0.0;
  for (int s = 0; s < 60; ++s) {
    const double lw = wt.step(batch, weights, wrng) / scale;
    const double lu = ut.step(batch, {}, urng);
    worst = std::max(worst, std::abs(lw - lu) / std::abs(lu));
    if (s == 0) first = lu;
    last = lu;
  }
  note(o, worst <= 1e-6 && frozen.size() == tc.batch_size,
       fmt("frozen batch of %zu, 60 steps, loss %.3f -> %.3f, max rel trajectory gap %.1e (<= 1e-6)", frozen.size(),
           first, last, worst));
  return o;
}

// ---------------------------------------------------------------- A5

struct CliRun {
  int code;
  std::string out;
  std::string err;
};

CliRun cli_run(const std::vector<std::string>& args) {
  std::ostringstream out;
  std::ostringstream err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

Outcome a5() {
  Outcome o;
  const auto root = testutil::scratch_dir("acceptance_a5");
  const std::vector<std::string> tune{"--set", "model.embed_dim=16", "--set", "train.max_epochs=6",
                                      "--set", "train.patience_pretrain=3", "--set", "train.patience_retrain=3"};
  std::vector<std::string> tables;
  std::vector<std::string> metrics;
  for (const char* name : {"a", "b"}) {
    const auto data = root / (std::string("data_") + name);
    const auto run = root / (std::string("run_") + name);
    const auto p = cli_run({"prepare", "--synthetic", "--h", "4", "--w", "4", "--steps", "900", "--corruption", "0.3",
                            "--seed", "11", "--out", data.string()});
    std::vector<std::string> args{"train", "--data", data.string(), "--out", run.string(), "--method", "pgasr", "--seed",
                                  "3"};
    args.insert(args.end(), tune.begin(), tune.end());
    const auto t = cli_run(args);
    if (p.code != 0 || t.code != 0) {
      note(o, false, "run " + std::string(name) + " exited " + std::to_string(p.code) + "/" + std::to_string(t.code) +
                         ": " + p.err + t.err);
      return o;
    }
    tables.push_back(io::read_text(run / "weight_table.csv"));
    auto report = nlohmann::json::parse(io::read_text(run / "report.json"));
    metrics.push_back(report["cells"][0]["test"].dump() + report["cells"][0]["val"].dump());
  }
  note(o, tables[0] == tables[1], fmt("weight_table.csv byte-identical (%zu bytes)", tables[0].size()));
  note(o, metrics[0] == metrics[1], "report metrics identical");
  return o;
}

// ---------------------------------------------------------------- A6

Outcome a6() {
  Outcome o;
  const auto mc = bench_model();
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    data::SyntheticConfig sc;
    sc.corruption_fraction = 0.3;
    sc.seed = seed;
    const auto bundle = data::generate_synthetic(sc);
    pipeline::TrainConfig tc;
    tc.seed = seed;
    tc.max_epochs = 8;
    const auto graph = pipeline::graph_context(bundle, mc);
    const auto parts = pipeline::split_folds(bundle.train, tc.folds);
    std::vector<model::PhysicsGuidedNetwork> nets;
    for (std::size_t d = 0; d < parts.size(); ++d)
      nets.emplace_back(pipeline::pretrain_fold(d, parts, mc, bundle, graph, tc).best);
    std::vector<const model::PhysicsGuidedNetwork*> ptrs;
    for (const auto& n : nets) ptrs.push_back(&n);
    const auto table = reweight::build_weight_table(ptrs, parts, bundle, graph, tc.weight_config());
    const auto summary = reweight::summarize(table, bundle);
    const double ratio = summary.corrupted_to_clean_ratio().value_or(1e9);
    note(o, ratio <= 0.9 && bundle.train.size() >= 2000,
         fmt("seed %llu: %zu train, %zu corrupted, ratio %.4f", static_cast<unsigned long long>(seed),
             bundle.train.size(), summary.n_corrupted, ratio));
  }
  return o;
}

// ---------------------------------------------------------------- A7

Outcome a7() {
  Outcome o;
  data::SyntheticConfig sc;
  sc.n_steps = 1500;
  sc.seed = 1000;
  const auto bundle = data::generate_synthetic(sc);
  eval::ExperimentOptions opt;
  opt.model = bench_model();
  opt.train.max_epochs = 30;
  opt.train.learning_rate = 3e-3;
  opt.seeds = {0, 1, 2, 3};
  const std::vector<double> levels{0.1, 0.3, 0.5};
  const auto report = eval::noise_robustness_experiment(bundle, levels, opt);
  if (report.failed_cells()) {
    note(o, false, std::to_string(report.failed_cells()) + " cells failed");
    return o;
  }
  std::map<std::string, std::map<double, double>> mae;
  for (const auto& a : report.aggregates())
    mae[a["method"].get<std::string>()][a["noise_level"].get<double>()] = a["mae_mean"]["mean"].get<double>();
  for (double l : levels)
    note(o, mae["pgasr"][l] < mae["pn"][l], fmt("level %.1f: P-GASR %.4f vs PN %.4f", l, mae["pgasr"][l], mae["pn"][l]));
  const double dpn = mae["pn"][0.5] - mae["pn"][0.1];
  const double dpg = mae["pgasr"][0.5] - mae["pgasr"][0.1];
  note(o, dpn > dpg, fmt("degradation 10%%->50%%: PN %+.4f vs P-GASR %+.4f", dpn, dpg));
  return o;
}

// ---------------------------------------------------------------- A8

Outcome a8() {
  Outcome o;
  data::SyntheticConfig sc;
  sc.n_steps = 1500;
  sc.seed = 2000;
  const auto bundle = data::generate_synthetic(sc);
  double dis = 0.0;
  double con = 0.0;
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    pipeline::TrainConfig tc;
    tc.seed = seed;
    tc.max_epochs = 30;
    tc.learning_rate = 3e-3;
    auto mc = bench_model();
    mc.variant = model::Variant::pn_dis;
    dis += pipeline::train_pn_only(bundle, mc, tc).test_metrics.mean_mae() / 4.0;
    mc.variant = model::Variant::pn_con;
    con += pipeline::train_pn_only(bundle, mc, tc).test_metrics.mean_mae() / 4.0;
  }
  note(o, dis <= con, fmt("mean test MAE over 4 seeds: PN-dis %.4f, PN-con %.4f", dis, con));
  return o;
}

struct Criterion {
  std::string id;
  std::string title;
  double budget_s;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all{
      {"A1", "equation oracle", 10.0, a1},
      {"A2", "gradient check", 60.0, a2},
      {"A3", "weight algebra", 5.0, a3},
      {"A4", "degenerate collapses", 60.0, a4},
      {"A5", "determinism", 600.0, a5},
      {"A6", "corruption discrimination", 600.0, a6},
      {"A7", "robustness trend", 3600.0, a7},
      {"A8", "discrete vs continuous", 0.0, a8},
  };
  std::vector<std::string> wanted(argv + 1, argv + argc);
  bool all_pass = true;
  for (const auto& c : all) {
    if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), c.id) == wanted.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = c.run();
    } catch (const std::exception& e) {
      out = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.budget_s > 0.0) note(out, secs < c.budget_s, fmt("%.1f s (< %.0f s)", secs, c.budget_s));
    else note(out, true, fmt("%.1f s", secs));
    all_pass = all_pass && out.pass;
    std::cout << c.id << " " << (out.pass ? "PASS" : "FAIL") << "  " << c.title << ": " << out.detail << std::endl;
  }
  return all_pass ? 0 : 1;
}

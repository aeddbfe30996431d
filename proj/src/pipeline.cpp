#include "pgasr/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <set>

#include "pgasr/checkpoint.hpp"
#include "pgasr/error.hpp"
#include "pgasr/log.hpp"
#include "pgasr/tensor_io.hpp"

namespace pgasr::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

// ----------------------------------------------------------------- config

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (inference_batch == 0) throw ConfigError("inference_batch must be positive");
  if (!(lambda_balance >= 0.0 && lambda_balance <= 1.0)) throw ConfigError("lambda must lie in [0, 1]");
  if (folds < 2) throw ConfigError("D (folds) must be at least 2");
  if (!std::isfinite(alpha) || !std::isfinite(beta)) throw ConfigError("alpha and beta must be finite");
  if (mc_passes < 2) throw ConfigError("K (mc_passes) must be at least 2");
  if (patience_pretrain < 1 || patience_retrain < 1) throw ConfigError("patience values must be at least 1");
  if (max_epochs < 1) throw ConfigError("max_epochs must be at least 1");
}

json TrainConfig::to_json() const {
  return json{{"learning_rate", learning_rate},
              {"batch_size", batch_size},
              {"lambda_balance", lambda_balance},
              {"folds", folds},
              {"alpha", alpha},
              {"beta", beta},
              {"mc_passes", mc_passes},
              {"patience_pretrain", patience_pretrain},
              {"patience_retrain", patience_retrain},
              {"max_epochs", max_epochs},
              {"seed", seed},
              {"clip_norm", clip_norm},
              {"inference_batch", inference_batch},
              {"consistency_target",
               consistency_target == reweight::ConsistencyTarget::prediction ? "prediction" : "label"},
              {"aggregation", aggregation == reweight::Aggregation::row_normalized ? "row_normalized" : "binary"},
              {"fold_split", "chronological"}};
}

reweight::WeightConfig TrainConfig::weight_config() const {
  reweight::WeightConfig w;
  w.alpha = alpha;
  w.beta = beta;
  w.mc_passes = mc_passes;
  w.seed = derive_seed(seed, kWeights);
  w.chunk_size = batch_size;
  w.inference_batch = inference_batch;
  w.target = consistency_target;
  w.aggregation = aggregation;
  return w;
}

json PhaseRecord::to_json() const {
  return json{{"phase", phase},           {"best_epoch", best_epoch}, {"best_val_mae", best_val_mae},
              {"epochs_run", epochs_run}, {"wall_time_s", wall_time_s}, {"checkpoint", checkpoint},
              {"resumed", resumed}};
}

PhaseRecord PhaseRecord::from_json(const json& j) {
  PhaseRecord r;
  r.phase = j.at("phase").get<std::string>();
  r.best_epoch = j.value("best_epoch", 0);
  r.best_val_mae = j.value("best_val_mae", 0.0);
  r.epochs_run = j.value("epochs_run", 0);
  r.wall_time_s = j.value("wall_time_s", 0.0);
  r.checkpoint = j.value("checkpoint", std::string{});
  r.resumed = j.value("resumed", false);
  return r;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  std::mt19937_64 g(seq);
  return g();
}

// ------------------------------------------------------------------ folds

std::vector<Partition> split_folds(std::span<const data::FlowSample> train, int folds) {
  if (folds < 1) throw ConfigError("fold count must be positive");
  const auto d = static_cast<std::size_t>(folds);
  if (train.size() < d)
    throw ConfigError("cannot split " + std::to_string(train.size()) + " training samples into " +
                      std::to_string(folds) + " folds");
  std::vector<Partition> parts(d);
  const std::size_t base = train.size() / d;
  const std::size_t extra = train.size() % d;
  std::size_t pos = 0;
  for (std::size_t k = 0; k < d; ++k) {
    const std::size_t n = base + (k < extra ? 1 : 0);
    for (std::size_t i = 0; i < n; ++i) parts[k].push_back(&train[pos + i]);
    pos += n;
  }
  return parts;
}

Partition warmup_set(const std::vector<Partition>& parts, std::size_t d) {
  Partition out;
  for (std::size_t k = 0; k < parts.size(); ++k)
    if (k != d) out.insert(out.end(), parts[k].begin(), parts[k].end());
  return out;
}

// ------------------------------------------------------------------- loss

ag::Tensor weighted_loss(const ag::Tensor& target, const ag::Tensor& pred, std::span<const float> epsilon_tilde,
                         double lambda, const data::Standardizer& standardizer) {
  return ag::balanced_abs_loss(pred, target, epsilon_tilde, static_cast<float>(lambda),
                               static_cast<float>(standardizer.std[0]), static_cast<float>(standardizer.std[1]));
}

ag::Tensor unweighted_loss(const ag::Tensor& target, const ag::Tensor& pred, double lambda,
                           const data::Standardizer& standardizer) {
  const std::vector<float> ones(pred.dim(0), 1.0F);
  return weighted_loss(target, pred, ones, lambda, standardizer);
}

// -------------------------------------------------------------- optimizer

Adam::Adam(double learning_rate, double beta1, double beta2, double eps)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(model::ParameterStore& params) {
  auto& entries = params.entries();
  if (m_.empty()) {
    for (auto& [name, t] : entries) {
      m_.emplace_back(t.numel(), 0.0);
      v_.emplace_back(t.numel(), 0.0);
    }
  }
  if (m_.size() != entries.size()) throw Error("optimizer state does not match the parameter set");
  ++step_count_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
  for (std::size_t p = 0; p < entries.size(); ++p) {
    ag::Tensor& t = entries[p].second;
    auto g = t.grad();
    if (g.empty()) continue;
    auto w = t.mutable_data();
    auto& m = m_[p];
    auto& v = v_[p];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i];
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      w[i] = static_cast<float>(w[i] - lr_ * mhat / (std::sqrt(vhat) + eps_));
    }
  }
}

double clip_gradients(model::ParameterStore& params, double max_norm) {
  double sq = 0.0;
  for (auto& [name, t] : params.entries())
    for (float g : t.grad()) sq += static_cast<double>(g) * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const auto s = static_cast<float>(max_norm / norm);
    for (auto& [name, t] : params.entries())
      if (!t.grad().empty())
        for (float& g : t.mutable_grad()) g *= s;
  }
  return norm;
}

Trainer::Trainer(model::PhysicsGuidedNetwork& net, const model::GraphContext& graph,
                 const data::Standardizer& standardizer, const TrainConfig& config)
    : net_(net), graph_(graph), standardizer_(standardizer), config_(config), adam_(config.learning_rate) {}

double Trainer::step(const model::Batch& batch, std::span<const float> weights, std::mt19937_64& dropout_rng) {
  model::ParameterStore& params = net_.state().params;
  params.zero_grad();
  model::ForwardOptions options;
  options.dropout_rng = &dropout_rng;
  const ag::Tensor pred = net_.forward(batch.x, graph_, options);
  ag::Tensor loss = weights.empty() ? unweighted_loss(batch.y, pred, config_.lambda_balance, standardizer_)
                                          : weighted_loss(batch.y, pred, weights, config_.lambda_balance, standardizer_);
  const double value = loss.item();
  if (!std::isfinite(value)) throw NumericError("non-finite training loss");
  loss.backward();
  clip_gradients(params, config_.clip_norm);
  adam_.step(params);
  return value;
}

// ------------------------------------------------------------- evaluation

Predictions predict(const model::PhysicsGuidedNetwork& net, std::span<const data::FlowSample* const> samples,
                    const data::DatasetBundle& bundle, const model::GraphContext& graph, std::size_t batch_size) {
  Predictions out;
  ag::NoGradGuard no_grad;
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, samples.size() - start);
    const auto batch = model::make_batch(samples.subspan(start, n), bundle.window, bundle.node_count());
    const ag::Tensor pred = net.forward(batch.x, graph);
    const auto p = data::destandardize(pred.data(), bundle.standardizer);
    const auto t = data::destandardize(batch.y.data(), bundle.standardizer);
    out.y_pred.insert(out.y_pred.end(), p.begin(), p.end());
    out.y_true.insert(out.y_true.end(), t.begin(), t.end());
  }
  return out;
}

eval::MetricSet evaluate(const model::PhysicsGuidedNetwork& net, const std::vector<data::FlowSample>& samples,
                         const data::DatasetBundle& bundle, const model::GraphContext& graph, double mask_threshold) {
  Partition ptrs;
  ptrs.reserve(samples.size());
  for (const auto& s : samples) ptrs.push_back(&s);
  const auto p = predict(net, ptrs, bundle, graph);
  return eval::compute_metrics(p.y_true, p.y_pred, mask_threshold);
}

// --------------------------------------------------------------- training

TrainOutcome train_network(const model::ModelConfig& model_config, const data::DatasetBundle& bundle,
                           const Partition& train_set, const model::GraphContext& graph, const TrainConfig& config,
                           int patience, std::uint64_t init_seed, std::uint64_t shuffle_seed,
                           const reweight::WeightTable* weights, const std::string& label) {
  if (train_set.empty()) throw ConfigError(label + ": training set is empty");
  if (bundle.val.empty()) throw ConfigError(label + ": validation split is empty");
  model::PhysicsGuidedNetwork net(model_config, bundle.node_count(), bundle.window, init_seed);
  Trainer trainer(net, graph, bundle.standardizer, config);

  std::vector<float> sample_weights;
  if (weights != nullptr) {
    sample_weights.reserve(train_set.size());
    for (const auto* s : train_set) sample_weights.push_back(static_cast<float>(weights->weight_of(s->sample_id)));
  }

  std::mt19937_64 shuffle_rng(shuffle_seed);
  std::mt19937_64 dropout_rng(derive_seed(shuffle_seed, 0xD0));
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainOutcome out;
  out.best_val_mae = std::numeric_limits<double>::infinity();
  int since_best = 0;
  Partition batch_samples;
  std::vector<float> batch_weights;
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    std::size_t batch_id = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch_id) {
      const std::size_t n = std::min(config.batch_size, order.size() - start);
      batch_samples.clear();
      batch_weights.clear();
      for (std::size_t i = 0; i < n; ++i) {
        batch_samples.push_back(train_set[order[start + i]]);
        if (weights != nullptr) batch_weights.push_back(sample_weights[order[start + i]]);
      }
      const auto batch = model::make_batch(batch_samples, bundle.window, bundle.node_count());
      try {
        epoch_loss += trainer.step(batch, batch_weights, dropout_rng);
      } catch (const NumericError& e) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "%s: %s (lr=%g, epoch=%d, batch=%zu)", label.c_str(), e.what(),
                      config.learning_rate, epoch, batch_id);
        throw NumericError(buf);
      }
    }
    out.train_loss_history.push_back(epoch_loss);
    const double val = evaluate(net, bundle.val, bundle, graph).mean_mae();
    out.val_history.push_back(val);
    out.epochs_run = epoch;
    if (val < out.best_val_mae) {
      out.best_val_mae = val;
      out.best_epoch = epoch;
      out.best = net.state();
      since_best = 0;
    } else if (++since_best >= patience) {
      break;
    }
    log::debug(label + " epoch " + std::to_string(epoch) + " loss " + std::to_string(epoch_loss) + " val_mae " +
               std::to_string(val));
  }
  if (out.best_epoch == 0) throw NumericError(label + ": validation MAE never became finite");
  log::info(label + ": best epoch " + std::to_string(out.best_epoch) + " of " + std::to_string(out.epochs_run) +
            ", val MAE " + std::to_string(out.best_val_mae));
  return out;
}

TrainOutcome pretrain_fold(std::size_t d, const std::vector<Partition>& parts, const model::ModelConfig& model_config,
                           const data::DatasetBundle& bundle, const model::GraphContext& graph,
                           const TrainConfig& config) {
  if (d >= parts.size()) throw ConfigError("fold index out of range");
  const Partition warmup = warmup_set(parts, d);
  std::set<std::int64_t> held_out;
  for (const auto* s : parts[d]) held_out.insert(s->sample_id);
  for (const auto* s : warmup)
    if (held_out.count(s->sample_id)) throw Error("fold " + std::to_string(d) + " warm-up data contains its own partition");
  return train_network(model_config, bundle, warmup, graph, config, config.patience_pretrain,
                       derive_seed(config.seed, kFoldInit, d), derive_seed(config.seed, kFoldShuffle, d), nullptr,
                       "pretrain_fold_" + std::to_string(d));
}

model::GraphContext graph_context(const data::DatasetBundle& bundle, const model::ModelConfig& model_config) {
  return model::GraphContext::from(graph::scaled_laplacian(bundle.graph, model_config.chebyshev_order));
}

std::string fold_id_hash(const std::vector<std::vector<std::int64_t>>& fold_ids) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xFF;
      h *= 1099511628211ULL;
    }
  };
  for (const auto& fold : fold_ids) {
    mix(fold.size());
    for (auto id : fold) mix(static_cast<std::uint64_t>(id));
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ------------------------------------------------------------ run driver

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

Partition all_train(const data::DatasetBundle& bundle) {
  Partition p;
  p.reserve(bundle.train.size());
  for (const auto& s : bundle.train) p.push_back(&s);
  return p;
}

json run_identity(const std::string& method, const data::DatasetBundle& bundle, const model::ModelConfig& mc,
                  const TrainConfig& tc) {
  return json{{"method", method},
              {"dataset", bundle.name},
              {"nodes", bundle.node_count()},
              {"window", bundle.window},
              {"n_train", bundle.train.size()},
              {"model", mc.to_json()},
              {"train", tc.to_json()}};
}

// Creates the run directory or checks that it belongs to the same run.
void claim_run_dir(const fs::path& dir, const json& identity) {
  fs::create_directories(dir);
  const fs::path file = dir / "run_identity.json";
  if (fs::exists(file)) {
    const json existing = json::parse(io::read_text(file));
    if (existing != identity)
      throw ConfigError("run directory " + dir.string() + " holds checkpoints from a different configuration");
  } else {
    io::write_text(file, identity.dump(2) + "\n");
  }
}

struct PhaseResult {
  model::ModelState state;
  PhaseRecord record;
};

PhaseResult run_phase(const std::optional<fs::path>& run_dir, const std::string& phase, int fold_index,
                      const std::function<TrainOutcome()>& train) {
  const auto t0 = Clock::now();
  std::optional<fs::path> ckpt;
  if (run_dir) ckpt = *run_dir / (phase + ".ckpt");
  PhaseResult r;
  r.record.phase = phase;
  if (ckpt && fs::exists(*ckpt)) {
    auto loaded = model::load_checkpoint(*ckpt);
    if (loaded.meta.phase != phase) throw LoadError("checkpoint " + ckpt->string() + " belongs to another phase");
    r.state = std::move(loaded.state);
    r.record.best_epoch = loaded.meta.epoch;
    r.record.best_val_mae = loaded.meta.validation_score;
    r.record.resumed = true;
    r.record.checkpoint = ckpt->filename().string();
    log::info(phase + ": resumed from " + ckpt->string());
  } else {
    TrainOutcome out = train();
    r.state = std::move(out.best);
    r.record.best_epoch = out.best_epoch;
    r.record.best_val_mae = out.best_val_mae;
    r.record.epochs_run = out.epochs_run;
    if (ckpt) {
      model::save_checkpoint(*ckpt, r.state, {phase, fold_index, out.best_epoch, out.best_val_mae});
      r.record.checkpoint = ckpt->filename().string();
    }
  }
  r.record.wall_time_s = seconds_since(t0);
  return r;
}

void write_records(const std::optional<fs::path>& run_dir, const std::vector<PhaseRecord>& records) {
  if (!run_dir) return;
  json arr = json::array();
  for (const auto& r : records) arr.push_back(r.to_json());
  io::write_text(*run_dir / "phase_records.json", arr.dump(2) + "\n");
}

}  // namespace

RunResult run_pgasr(const data::DatasetBundle& bundle, const model::ModelConfig& model_config,
                    const TrainConfig& config, const std::optional<fs::path>& run_dir) {
  config.validate();
  model_config.validate(bundle.window);
  if (run_dir) claim_run_dir(*run_dir, run_identity("pgasr", bundle, model_config, config));
  const auto graph = graph_context(bundle, model_config);
  const auto parts = split_folds(bundle.train, config.folds);

  RunResult result;
  for (const auto& p : parts) {
    auto& ids = result.fold_ids.emplace_back();
    for (const auto* s : p) ids.push_back(s->sample_id);
  }

  std::vector<model::ModelState> fold_states;
  bool all_resumed = true;
  for (std::size_t d = 0; d < parts.size(); ++d) {
    auto r = run_phase(run_dir, "pretrain_fold_" + std::to_string(d), static_cast<int>(d),
                       [&] { return pretrain_fold(d, parts, model_config, bundle, graph, config); });
    all_resumed = all_resumed && r.record.resumed;
    fold_states.push_back(std::move(r.state));
    result.records.push_back(std::move(r.record));
    write_records(run_dir, result.records);
  }

  const auto t_infer = Clock::now();
  PhaseRecord infer;
  infer.phase = "infer_weights";
  const std::optional<fs::path> table_path = run_dir ? std::optional(*run_dir / "weight_table.csv") : std::nullopt;
  if (table_path && all_resumed && fs::exists(*table_path)) {
    result.weights = reweight::WeightTable::read(*table_path);
    infer.resumed = true;
  } else {
    std::vector<model::PhysicsGuidedNetwork> nets;
    nets.reserve(fold_states.size());
    for (const auto& st : fold_states) nets.emplace_back(st);
    std::vector<const model::PhysicsGuidedNetwork*> ptrs;
    for (const auto& n : nets) ptrs.push_back(&n);
    result.weights = reweight::build_weight_table(ptrs, parts, bundle, graph, config.weight_config());
    if (table_path) result.weights->write(*table_path);
  }
  if (result.weights->size() != bundle.train.size())
    throw Error("weight table covers " + std::to_string(result.weights->size()) + " of " +
                std::to_string(bundle.train.size()) + " training samples");
  if (table_path) infer.checkpoint = table_path->filename().string();
  infer.wall_time_s = seconds_since(t_infer);
  result.records.push_back(infer);
  write_records(run_dir, result.records);

  const Partition everything = all_train(bundle);
  auto re = run_phase(run_dir, "retrain", -1, [&] {
    return train_network(model_config, bundle, everything, graph, config, config.patience_retrain,
                         derive_seed(config.seed, kRetrainInit), derive_seed(config.seed, kRetrainShuffle),
                         &*result.weights, "retrain");
  });
  result.model = std::move(re.state);
  result.records.push_back(std::move(re.record));
  write_records(run_dir, result.records);

  const model::PhysicsGuidedNetwork final_net(result.model);
  result.val_metrics = evaluate(final_net, bundle.val, bundle, graph);
  result.test_metrics = evaluate(final_net, bundle.test, bundle, graph);
  return result;
}

RunResult train_pn_only(const data::DatasetBundle& bundle, const model::ModelConfig& model_config,
                        const TrainConfig& config, const std::optional<fs::path>& run_dir) {
  config.validate();
  model_config.validate(bundle.window);
  const std::string method = model_config.variant == model::Variant::pn_con ? "pn_con" : "pn_dis";
  if (run_dir) claim_run_dir(*run_dir, run_identity(method, bundle, model_config, config));
  const auto graph = graph_context(bundle, model_config);
  const Partition everything = all_train(bundle);

  RunResult result;
  auto r = run_phase(run_dir, "train", -1, [&] {
    return train_network(model_config, bundle, everything, graph, config, config.patience_retrain,
                         derive_seed(config.seed, kRetrainInit), derive_seed(config.seed, kRetrainShuffle), nullptr,
                         "train");
  });
  result.model = std::move(r.state);
  result.records.push_back(std::move(r.record));
  write_records(run_dir, result.records);

  const model::PhysicsGuidedNetwork final_net(result.model);
  result.val_metrics = evaluate(final_net, bundle.val, bundle, graph);
  result.test_metrics = evaluate(final_net, bundle.test, bundle, graph);
  return result;
}

}  // namespace pgasr::pipeline

#include "pgasr/reweighting.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <sstream>

#include "pgasr/error.hpp"
#include "pgasr/tensor_io.hpp"

namespace pgasr::reweight {

WeightTable::WeightTable(std::vector<WeightRow> rows) : rows_(std::move(rows)) {
  order_.resize(rows_.size());
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  std::sort(order_.begin(), order_.end(),
            [this](std::size_t a, std::size_t b) { return rows_[a].sample_id < rows_[b].sample_id; });
  for (std::size_t i = 1; i < order_.size(); ++i)
    if (rows_[order_[i]].sample_id == rows_[order_[i - 1]].sample_id)
      throw ConfigError("weight table has duplicate sample id " + std::to_string(rows_[order_[i]].sample_id));
}

const WeightRow* WeightTable::find(std::int64_t sample_id) const {
  auto it = std::lower_bound(order_.begin(), order_.end(), sample_id,
                             [this](std::size_t i, std::int64_t id) { return rows_[i].sample_id < id; });
  if (it == order_.end() || rows_[*it].sample_id != sample_id) return nullptr;
  return &rows_[*it];
}

double WeightTable::weight_of(std::int64_t sample_id) const {
  const WeightRow* row = find(sample_id);
  if (row == nullptr) throw Error("no sample weight for sample id " + std::to_string(sample_id));
  return row->epsilon_tilde;
}

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string WeightTable::to_csv() const {
  std::ostringstream os;
  os << "sample_id,fold,chunk,u_raw,c_raw,u_norm,c_norm,epsilon,epsilon_tilde\n";
  for (const WeightRow& r : rows_) {
    os << r.sample_id << ',' << r.fold << ',' << r.chunk << ',' << fmt_double(r.u_raw) << ',' << fmt_double(r.c_raw)
       << ',' << fmt_double(r.u_norm) << ',' << fmt_double(r.c_norm) << ',' << fmt_double(r.epsilon) << ','
       << fmt_double(r.epsilon_tilde) << '\n';
  }
  return os.str();
}

WeightTable WeightTable::from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("sample_id,fold,chunk", 0) != 0)
    throw LoadError("weight table CSV is missing its header");
  std::vector<WeightRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() != 9) throw LoadError("malformed weight table row: " + line);
    WeightRow r;
    try {
      r.sample_id = std::stoll(cells[0]);
      r.fold = std::stoi(cells[1]);
      r.chunk = std::stoi(cells[2]);
      r.u_raw = std::stod(cells[3]);
      r.c_raw = std::stod(cells[4]);
      r.u_norm = std::stod(cells[5]);
      r.c_norm = std::stod(cells[6]);
      r.epsilon = std::stod(cells[7]);
      r.epsilon_tilde = std::stod(cells[8]);
    } catch (const std::exception&) {
      throw LoadError("malformed weight table row: " + line);
    }
    rows.push_back(r);
  }
  return WeightTable(std::move(rows));
}

void WeightTable::write(const std::filesystem::path& path) const { io::write_text(path, to_csv()); }

WeightTable WeightTable::read(const std::filesystem::path& path) { return from_csv(io::read_text(path)); }

// --------------------------------------------------------------------- scores

std::vector<double> model_uncertainty(std::span<const std::vector<float>> passes, std::size_t batch) {
  const std::size_t k = passes.size();
  if (k < 2) throw ConfigError("model uncertainty needs K >= 2 passes");
  if (batch == 0) return {};
  const std::size_t total = passes.front().size();
  if (total % batch != 0) throw ConfigError("MC pass size is not a multiple of the batch");
  for (const auto& p : passes)
    if (p.size() != total) throw ConfigError("MC passes differ in size");
  const std::size_t per = total / batch;
  std::vector<double> u(batch, 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    double acc = 0.0;
    for (std::size_t e = 0; e < per; ++e) {
      const std::size_t i = b * per + e;
      double mean = 0.0;
      for (const auto& p : passes) mean += p[i];
      mean /= static_cast<double>(k);
      double ss = 0.0;
      for (const auto& p : passes) {
        const double d = p[i] - mean;
        ss += d * d;
      }
      acc += ss / static_cast<double>(k - 1);
    }
    u[b] = acc / static_cast<double>(per);
  }
  return u;
}

std::vector<double> physical_consistency(std::span<const float> y_pred, std::span<const float> x_last,
                                         const Eigen::MatrixXd& aggregation, std::size_t batch, double guard) {
  const auto m = static_cast<std::size_t>(aggregation.rows());
  if (y_pred.size() != batch * m * 2 || x_last.size() != y_pred.size())
    throw ConfigError("physical consistency inputs must be [batch, M, 2]");
  std::vector<double> c(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t ch = 0; ch < 2; ++ch) {
        double agg = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
          const double a = aggregation(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
          if (a != 0.0) agg += a * x_last[(b * m + j) * 2 + ch];
        }
        const double pred = y_pred[(b * m + i) * 2 + ch];
        if (!std::isfinite(pred) || !std::isfinite(agg)) throw NumericError("non-finite input to physical consistency");
        const double d = pred - agg;
        acc += d * d;
      }
    }
    c[b] = 1.0 / (acc / static_cast<double>(m * 2) + guard);
  }
  return c;
}

double combine_scores(double u_norm, double c_norm, double alpha, double beta) { return alpha * u_norm + beta * c_norm; }

std::vector<double> minmax_normalize(std::span<const double> raw) {
  if (raw.empty()) return {};
  const auto [lo, hi] = std::minmax_element(raw.begin(), raw.end());
  const double range = *hi - *lo;
  std::vector<double> out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = range > 0.0 ? (raw[i] - *lo) / range : 0.5;
  return out;
}

std::vector<double> normalize_weights(std::span<const double> epsilons) {
  if (epsilons.empty()) throw ConfigError("weight normalization needs at least one sample");
  const double top = *std::max_element(epsilons.begin(), epsilons.end());
  std::vector<double> out(epsilons.size());
  double total = 0.0;
  for (std::size_t i = 0; i < epsilons.size(); ++i) {
    out[i] = std::exp(epsilons[i] - top);
    total += out[i];
  }
  const double smoothing = 1.0 / static_cast<double>(epsilons.size());
  for (double& v : out) v = v / total + smoothing;
  return out;
}

const Eigen::MatrixXd& aggregation_matrix(const graph::UrbanGraph& graph, Aggregation aggregation) {
  return aggregation == Aggregation::binary ? graph.adjacency() : graph.row_normalized_adjacency();
}

// --------------------------------------------------------------- table build

namespace {

std::vector<float> to_flow_units(const ag::Tensor& t, const data::Standardizer& st) {
  return data::destandardize(t.data(), st);
}

std::uint64_t derive_seed(std::uint64_t seed, std::size_t fold, std::size_t batch) {
  std::seed_seq seq{seed, static_cast<std::uint64_t>(fold), static_cast<std::uint64_t>(batch)};
  std::mt19937_64 g(seq);
  return g();
}

}  // namespace

WeightTable build_weight_table(std::span<const model::PhysicsGuidedNetwork* const> fold_models,
                               const std::vector<std::vector<const data::FlowSample*>>& partitions,
                               const data::DatasetBundle& bundle, const model::GraphContext& graph,
                               const WeightConfig& config) {
  if (fold_models.size() != partitions.size())
    throw Error("weight table needs one model per fold: " + std::to_string(fold_models.size()) + " models for " +
                std::to_string(partitions.size()) + " partitions");
  if (config.chunk_size == 0 || config.inference_batch == 0) throw ConfigError("chunk and batch sizes must be positive");
  std::set<std::int64_t> seen;
  for (const auto& part : partitions)
    for (const data::FlowSample* s : part)
      if (!seen.insert(s->sample_id).second)
        throw Error("fold partitions overlap at sample id " + std::to_string(s->sample_id));

  const Eigen::MatrixXd& agg = aggregation_matrix(bundle.graph, config.aggregation);
  const int nodes = bundle.node_count();
  const std::size_t per_step = static_cast<std::size_t>(nodes) * 2;
  std::vector<WeightRow> rows;
  rows.reserve(seen.size());

  for (std::size_t d = 0; d < partitions.size(); ++d) {
    if (fold_models[d] == nullptr) throw Error("missing model for fold " + std::to_string(d));
    const model::PhysicsGuidedNetwork& net = *fold_models[d];
    const auto& part = partitions[d];
    if (part.empty()) throw Error("fold " + std::to_string(d) + " has an empty partition");
    std::vector<double> u_raw;
    std::vector<double> c_raw;
    u_raw.reserve(part.size());
    c_raw.reserve(part.size());

    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < part.size(); start += config.inference_batch, ++batch_index) {
      const std::size_t n = std::min(config.inference_batch, part.size() - start);
      const auto batch = model::make_batch(std::span(part).subspan(start, n), bundle.window, nodes);

      std::vector<float> target;
      {
        ag::NoGradGuard no_grad;
        target = config.target == ConsistencyTarget::prediction ? to_flow_units(net.forward(batch.x, graph), bundle.standardizer)
                                                                : to_flow_units(batch.y, bundle.standardizer);
      }
      std::vector<float> x_last(n * per_step);
      const auto xs = batch.x.data();
      const std::size_t window = static_cast<std::size_t>(bundle.window);
      for (std::size_t b = 0; b < n; ++b)
        std::copy_n(&xs[(b * window + window - 1) * per_step], per_step, &x_last[b * per_step]);
      bundle.standardizer.inverse(x_last);
      const auto c = physical_consistency(target, x_last, agg, n);
      c_raw.insert(c_raw.end(), c.begin(), c.end());

      const auto mc = model::forward_mc(batch.x, graph, net, config.mc_passes, derive_seed(config.seed, d, batch_index));
      std::vector<std::vector<float>> passes;
      passes.reserve(mc.size());
      for (const auto& pass : mc) passes.push_back(to_flow_units(pass, bundle.standardizer));
      const auto u = model_uncertainty(passes, n);
      u_raw.insert(u_raw.end(), u.begin(), u.end());
    }

    const auto u_norm = minmax_normalize(u_raw);
    const auto c_norm = minmax_normalize(c_raw);
    std::vector<double> eps(part.size());
    for (std::size_t i = 0; i < part.size(); ++i) eps[i] = combine_scores(u_norm[i], c_norm[i], config.alpha, config.beta);

    int chunk = 0;
    for (std::size_t start = 0; start < part.size(); start += config.chunk_size, ++chunk) {
      const std::size_t n = std::min(config.chunk_size, part.size() - start);
      const auto tilde = normalize_weights(std::span(eps).subspan(start, n));
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t k = start + i;
        rows.push_back({part[k]->sample_id, static_cast<int>(d), chunk, u_raw[k], c_raw[k], u_norm[k], c_norm[k], eps[k],
                        tilde[i]});
      }
    }
  }
  return WeightTable(std::move(rows));
}

std::optional<double> WeightSummary::corrupted_to_clean_ratio() const {
  if (n_clean == 0 || n_corrupted == 0 || mean_tilde_clean <= 0.0) return std::nullopt;
  return mean_tilde_corrupted / mean_tilde_clean;
}

WeightSummary summarize(const WeightTable& table, const data::DatasetBundle& bundle) {
  WeightSummary s;
  double clean = 0.0;
  double corrupted = 0.0;
  for (const data::FlowSample& sample : bundle.train) {
    const WeightRow* row = table.find(sample.sample_id);
    if (row == nullptr) continue;
    if (sample.corrupted) {
      corrupted += row->epsilon_tilde;
      ++s.n_corrupted;
    } else {
      clean += row->epsilon_tilde;
      ++s.n_clean;
    }
  }
  if (s.n_clean) s.mean_tilde_clean = clean / static_cast<double>(s.n_clean);
  if (s.n_corrupted) s.mean_tilde_corrupted = corrupted / static_cast<double>(s.n_corrupted);
  return s;
}

}  // namespace pgasr::reweight

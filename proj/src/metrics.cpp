#include "pgasr/metrics.hpp"

#include <cmath>

#include "pgasr/error.hpp"

namespace pgasr::eval {

nlohmann::json MetricSet::to_json() const {
  nlohmann::json j;
  j["mae_in"] = mae_in;
  j["mae_out"] = mae_out;
  j["mape_in"] = mape_in ? nlohmann::json(*mape_in) : nlohmann::json(nullptr);
  j["mape_out"] = mape_out ? nlohmann::json(*mape_out) : nlohmann::json(nullptr);
  j["n_eval_points"] = n_eval_points;
  j["n_mape_points_in"] = n_mape_points_in;
  j["n_mape_points_out"] = n_mape_points_out;
  j["mape_mask_threshold"] = mape_mask_threshold;
  return j;
}

MetricSet compute_metrics(std::span<const float> y_true, std::span<const float> y_pred, double mask_threshold) {
  if (y_true.size() != y_pred.size()) throw ConfigError("metric inputs differ in size");
  if (y_true.size() % 2 != 0) throw ConfigError("metric inputs must be channel-interleaved pairs");
  MetricSet m;
  m.mape_mask_threshold = mask_threshold;
  m.n_eval_points = y_true.size() / 2;
  if (m.n_eval_points == 0) throw ConfigError("no points to evaluate");
  double abs_sum[2] = {0.0, 0.0};
  double pct_sum[2] = {0.0, 0.0};
  std::size_t pct_n[2] = {0, 0};
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    const double t = y_true[i];
    const double e = std::abs(t - static_cast<double>(y_pred[i]));
    if (!std::isfinite(e)) throw NumericError("non-finite prediction or target in metrics");
    const std::size_t ch = i % 2;
    abs_sum[ch] += e;
    if (t >= mask_threshold && t != 0.0) {
      pct_sum[ch] += e / std::abs(t);
      ++pct_n[ch];
    }
  }
  const auto n = static_cast<double>(m.n_eval_points);
  m.mae_in = abs_sum[0] / n;
  m.mae_out = abs_sum[1] / n;
  m.n_mape_points_in = pct_n[0];
  m.n_mape_points_out = pct_n[1];
  if (pct_n[0]) m.mape_in = 100.0 * pct_sum[0] / static_cast<double>(pct_n[0]);
  if (pct_n[1]) m.mape_out = 100.0 * pct_sum[1] / static_cast<double>(pct_n[1]);
  return m;
}

}  // namespace pgasr::eval

#pragma once

#include <cstddef>
#include <optional>
#include <span>

#include "json.hpp"

namespace pgasr::eval {

inline constexpr double kDefaultMapeMask = 10.0;

// Per-direction errors in flow units. MAPE is in percent and only covers
// targets >= mape_mask_threshold; it is absent when no target qualifies.
struct MetricSet {
  double mae_in = 0.0;
  double mae_out = 0.0;
  std::optional<double> mape_in;
  std::optional<double> mape_out;
  std::size_t n_eval_points = 0;
  std::size_t n_mape_points_in = 0;
  std::size_t n_mape_points_out = 0;
  double mape_mask_threshold = kDefaultMapeMask;

  double mean_mae() const { return 0.5 * (mae_in + mae_out); }
  nlohmann::json to_json() const;
};

// y_true and y_pred are channel-interleaved [..., 2] in flow units.
MetricSet compute_metrics(std::span<const float> y_true, std::span<const float> y_pred,
                          double mask_threshold = kDefaultMapeMask);

}  // namespace pgasr::eval

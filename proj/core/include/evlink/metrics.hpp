/*
 * Copyright (c) The evlink Project Contributors
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

namespace evlink {

/// Arctangent absolute percentage error, bounded by pi/2.
/// Conventions at y = 0: 0 when the prediction is also 0, else pi/2.
double aape(double y_true, double y_pred);

/// Signed variant (no absolute value), used for residual traces.
double signed_ape(double y_true, double y_pred);

/// Linear interpolation between order statistics; `p` in [0, 100].
double percentile(std::vector<double> values, double p);

/// Predictions and labels for one evaluated trip.
struct TripEval {
  std::string trip_id;
  std::vector<double> y_true;  // Wh per link
  std::vector<double> y_pred;
};

struct LevelMetrics {
  double rmse = 0.0;
  double mae = 0.0;
  double maape = 0.0;
};

inline constexpr std::array<double, 5> kAapePercentileLevels{25, 50, 75, 90, 95};

struct MetricsReport {
  LevelMetrics link;
  LevelMetrics trip;
  std::array<double, 5> aape_percentiles_link{};
  std::array<double, 5> aape_percentiles_trip{};
  double r2_trip = 0.0;
  double network_pred_wh = 0.0;
  double network_true_wh = 0.0;
  double network_rel_error = 0.0;
  std::size_t trip_count = 0;
  std::size_t link_count = 0;
};

/// Link-level series pool every link; trip-level series are per-trip sums.
/// Throws ConfigError on empty input.
MetricsReport compute_metrics(const std::vector<TripEval>& evals);

/// Per-link partial sums plus the signed arctangent percentage error at
/// each accumulation step. The last entry equals the trip-level APE.
struct CumulativeTrace {
  std::vector<double> cum_true;
  std::vector<double> cum_pred;
  std::vector<double> ape;
};

CumulativeTrace cumulative_trace(const std::vector<double>& y_true,
                                 const std::vector<double>& y_pred);

}  // namespace evlink

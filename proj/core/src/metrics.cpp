/*
 * Copyright (c) The evlink Project Contributors
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#include "evlink/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "evlink/common.hpp"

namespace evlink {

namespace {
constexpr double kHalfPi = 1.5707963267948966;
}

double aape(double y_true, double y_pred) {
  if (y_true == 0.0) return y_pred == 0.0 ? 0.0 : kHalfPi;
  return std::atan(std::abs((y_true - y_pred) / y_true));
}

double signed_ape(double y_true, double y_pred) {
  if (y_true == 0.0) {
    if (y_pred == 0.0) return 0.0;
    return y_pred > 0.0 ? -kHalfPi : kHalfPi;  // sign of (y - yhat)/|y| as y -> 0+
  }
  return std::atan((y_true - y_pred) / y_true);
}

double percentile(std::vector<double> values, double p) {
  if (values.empty()) throw ConfigError("percentile: empty input");
  std::sort(values.begin(), values.end());
  const double rank = p / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const auto hi = static_cast<std::size_t>(std::ceil(rank));
  const double w = rank - static_cast<double>(lo);
  return values[lo] * (1.0 - w) + values[hi] * w;
}

namespace {

LevelMetrics level_metrics(const std::vector<double>& y, const std::vector<double>& yhat) {
  LevelMetrics m;
  double se = 0.0, ae = 0.0, arc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double r = y[i] - yhat[i];
    se += r * r;
    ae += std::abs(r);
    arc += aape(y[i], yhat[i]);
  }
  const double n = static_cast<double>(y.size());
  m.rmse = std::sqrt(se / n);
  m.mae = ae / n;
  m.maape = arc / n;
  return m;
}

}  // namespace

MetricsReport compute_metrics(const std::vector<TripEval>& evals) {
  if (evals.empty()) throw ConfigError("compute_metrics: no trips");

  std::vector<double> link_y, link_yhat, trip_y, trip_yhat;
  for (const auto& e : evals) {
    if (e.y_true.size() != e.y_pred.size() || e.y_true.empty()) {
      throw ConfigError("compute_metrics: trip " + e.trip_id + " has mismatched series");
    }
    link_y.insert(link_y.end(), e.y_true.begin(), e.y_true.end());
    link_yhat.insert(link_yhat.end(), e.y_pred.begin(), e.y_pred.end());
    trip_y.push_back(std::accumulate(e.y_true.begin(), e.y_true.end(), 0.0));
    trip_yhat.push_back(std::accumulate(e.y_pred.begin(), e.y_pred.end(), 0.0));
  }

  MetricsReport r;
  r.trip_count = evals.size();
  r.link_count = link_y.size();
  r.link = level_metrics(link_y, link_yhat);
  r.trip = level_metrics(trip_y, trip_yhat);

  std::vector<double> link_aape(link_y.size()), trip_aape(trip_y.size());
  for (std::size_t i = 0; i < link_y.size(); ++i) link_aape[i] = aape(link_y[i], link_yhat[i]);
  for (std::size_t i = 0; i < trip_y.size(); ++i) trip_aape[i] = aape(trip_y[i], trip_yhat[i]);
  for (std::size_t k = 0; k < kAapePercentileLevels.size(); ++k) {
    r.aape_percentiles_link[k] = percentile(link_aape, kAapePercentileLevels[k]);
    r.aape_percentiles_trip[k] = percentile(trip_aape, kAapePercentileLevels[k]);
  }

  const double mean_y =
      std::accumulate(trip_y.begin(), trip_y.end(), 0.0) / static_cast<double>(trip_y.size());
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < trip_y.size(); ++i) {
    ss_res += (trip_y[i] - trip_yhat[i]) * (trip_y[i] - trip_yhat[i]);
    ss_tot += (trip_y[i] - mean_y) * (trip_y[i] - mean_y);
  }
  r.r2_trip = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : (ss_res == 0.0 ? 1.0 : 0.0);

  r.network_true_wh = std::accumulate(trip_y.begin(), trip_y.end(), 0.0);
  r.network_pred_wh = std::accumulate(trip_yhat.begin(), trip_yhat.end(), 0.0);
  r.network_rel_error = r.network_true_wh != 0.0
                            ? std::abs(r.network_pred_wh - r.network_true_wh) /
                                  std::abs(r.network_true_wh)
                            : 0.0;
  return r;
}

CumulativeTrace cumulative_trace(const std::vector<double>& y_true,
                                 const std::vector<double>& y_pred) {
  if (y_true.size() != y_pred.size() || y_true.empty()) {
    throw ConfigError("cumulative_trace: mismatched or empty series");
  }
  CumulativeTrace trace;
  trace.cum_true.resize(y_true.size());
  trace.cum_pred.resize(y_true.size());
  trace.ape.resize(y_true.size());
  double ct = 0.0, cp = 0.0;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    ct += y_true[i];
    cp += y_pred[i];
    trace.cum_true[i] = ct;
    trace.cum_pred[i] = cp;
    trace.ape[i] = signed_ape(ct, cp);
  }
  return trace;
}

}  // namespace evlink

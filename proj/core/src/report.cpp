/*
 * Copyright (c) The evlink Project Contributors
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#include "evlink/report.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>  // vendored nlohmann/json

#include "evlink/common.hpp"

namespace evlink {

using json = nlohmann::json;

std::string report_to_json(const MetricsReport& r, std::uint64_t feature_schema_hash,
                           const std::string& model_hash) {
  json j;
  j["schema_version"] = kReportSchemaVersion;
  j["feature_schema_hash"] = hex64(feature_schema_hash);
  j["model_hash"] = model_hash;
  j["trip_count"] = r.trip_count;
  j["link_count"] = r.link_count;
  j["link"] = {{"rmse_wh", r.link.rmse}, {"mae_wh", r.link.mae}, {"maape", r.link.maape}};
  j["trip"] = {{"rmse_wh", r.trip.rmse}, {"mae_wh", r.trip.mae}, {"maape", r.trip.maape}};
  j["aape_percentiles"] = {{"levels", kAapePercentileLevels},
                           {"link", r.aape_percentiles_link},
                           {"trip", r.aape_percentiles_trip}};
  j["r2_trip"] = r.r2_trip;
  j["network_wide"] = {{"predicted_wh", r.network_pred_wh},
                       {"true_wh", r.network_true_wh},
                       {"rel_error", r.network_rel_error}};
  return j.dump(2);
}

MetricsReport report_from_json(const std::string& text) {
  json j = json::parse(text);
  if (j.at("schema_version").get<std::uint32_t>() != kReportSchemaVersion) {
    throw SchemaMismatchError("report: unsupported schema version");
  }
  MetricsReport r;
  r.trip_count = j.at("trip_count").get<std::size_t>();
  r.link_count = j.at("link_count").get<std::size_t>();
  r.link.rmse = j.at("link").at("rmse_wh").get<double>();
  r.link.mae = j.at("link").at("mae_wh").get<double>();
  r.link.maape = j.at("link").at("maape").get<double>();
  r.trip.rmse = j.at("trip").at("rmse_wh").get<double>();
  r.trip.mae = j.at("trip").at("mae_wh").get<double>();
  r.trip.maape = j.at("trip").at("maape").get<double>();
  const auto& p = j.at("aape_percentiles");
  for (std::size_t k = 0; k < 5; ++k) {
    r.aape_percentiles_link[k] = p.at("link")[k].get<double>();
    r.aape_percentiles_trip[k] = p.at("trip")[k].get<double>();
  }
  r.r2_trip = j.at("r2_trip").get<double>();
  r.network_pred_wh = j.at("network_wide").at("predicted_wh").get<double>();
  r.network_true_wh = j.at("network_wide").at("true_wh").get<double>();
  r.network_rel_error = j.at("network_wide").at("rel_error").get<double>();
  return r;
}

void emit_report(const MetricsReport& report, const std::vector<TripEval>& evals,
                 const std::filesystem::path& dir, std::uint64_t feature_schema_hash,
                 const std::string& model_hash) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);

  {
    std::ofstream out(dir / "metrics_report.json");
    if (!out) throw IoError("cannot write " + (dir / "metrics_report.json").string());
    out << report_to_json(report, feature_schema_hash, model_hash) << '\n';
  }
  {
    std::ofstream out(dir / "trace.tsv");
    if (!out) throw IoError("cannot write " + (dir / "trace.tsv").string());
    out << "trip_id\tlink_index\ty_wh\tyhat_wh\tcum_y_wh\tcum_yhat_wh\tape_signed\n";
    out.precision(17);
    for (const auto& e : evals) {
      const CumulativeTrace trace = cumulative_trace(e.y_true, e.y_pred);
      for (std::size_t t = 0; t < e.y_true.size(); ++t) {
        out << e.trip_id << '\t' << t << '\t' << e.y_true[t] << '\t' << e.y_pred[t] << '\t'
            << trace.cum_true[t] << '\t' << trace.cum_pred[t] << '\t' << trace.ape[t] << '\n';
      }
    }
  }
  {
    std::ofstream out(dir / "raw_pairs_link.tsv");
    if (!out) throw IoError("cannot write " + (dir / "raw_pairs_link.tsv").string());
    out << "trip_id\tlink_index\ty_wh\tyhat_wh\n";
    out.precision(17);
    for (const auto& e : evals) {
      for (std::size_t t = 0; t < e.y_true.size(); ++t) {
        out << e.trip_id << '\t' << t << '\t' << e.y_true[t] << '\t' << e.y_pred[t] << '\n';
      }
    }
  }
  {
    std::ofstream out(dir / "raw_pairs_trip.tsv");
    if (!out) throw IoError("cannot write " + (dir / "raw_pairs_trip.tsv").string());
    out << "trip_id\ty_wh\tyhat_wh\n";
    out.precision(17);
    for (const auto& e : evals) {
      double y = 0.0, yhat = 0.0;
      for (std::size_t t = 0; t < e.y_true.size(); ++t) {
        y += e.y_true[t];
        yhat += e.y_pred[t];
      }
      out << e.trip_id << '\t' << y << '\t' << yhat << '\n';
    }
  }
}

MetricsReport load_report(const std::filesystem::path& json_path) {
  std::ifstream in(json_path);
  if (!in) throw IoError("cannot open: " + json_path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return report_from_json(ss.str());
}

}  // namespace evlink

/*
 * Copyright (c) The evlink Project Contributors
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#include "evlink/features.hpp"

#include <cmath>

#include <json.hpp>  // vendored nlohmann/json

#include "evlink/common.hpp"

namespace evlink {

using json = nlohmann::json;

namespace {

constexpr double kTau = 6.283185307179586;
constexpr double kSecondsPerDay = 86400.0;

std::vector<std::pair<std::string, std::string>> column_defs() {
  std::vector<std::pair<std::string, std::string>> cols = {
      // Vehicle block: 11 numeric, then the two one-hot groups.
      {"veh.mass_kg", "kg"},
      {"veh.battery_capacity_wh", "Wh"},
      {"veh.frontal_area_m2", "m^2"},
      {"veh.drag_coeff", ""},
      {"veh.rolling_resist", ""},
      {"veh.motor_peak_power_w", "W"},
      {"veh.drivetrain_eff", ""},
      {"veh.regen_eff", ""},
      {"veh.aux_load_w", "W"},
      {"veh.max_speed_mps", "m/s"},
      {"veh.power_to_mass", "W/kg"},
  };
  for (auto c : kVehicleClassNames) cols.emplace_back("veh.class." + std::string(c), "onehot");
  for (auto a : kAutomationNames) cols.emplace_back("veh.automation." + std::string(a), "onehot");
  const std::pair<const char*, const char*> link[] = {{"link.tod_sin", ""},
                                                      {"link.tod_cos", ""},
                                                      {"link.length_m", "m"},
                                                      {"link.stop_duration_s", "s"},
                                                      {"link.travel_time_s", "s"},
                                                      {"link.avg_speed_mps", "m/s"},
                                                      {"link.speed_limit_mps", "m/s"},
                                                      {"link.congestion", ""},
                                                      {"link.d_speed_prev", "m/s"},
                                                      {"link.d_speed_next", "m/s"},
                                                      {"link.d_length_prev", "m"},
                                                      {"link.d_length_next", "m"},
                                                      {"link.d_limit_prev", "m/s"},
                                                      {"link.d_limit_next", "m/s"},
                                                      {"link.moving_speed_mps", "m/s"},
                                                      {"link.moving_speed_prev", "m/s"},
                                                      {"link.moving_speed_next", "m/s"},
                                                      {"link.first_flag", "flag"},
                                                      {"link.last_flag", "flag"},
                                                      {"link.index_norm", ""},
                                                      {"link.cum_dist_before_m", "m"},
                                                      {"link.remaining_dist_m", "m"},
                                                      {"trip.total_length_m", "m"},
                                                      {"trip.mean_avg_speed_mps", "m/s"},
                                                      {"link.accel_proxy", "m/s^2"},
                                                      {"link.decel_proxy", "m/s^2"}};
  for (const auto& [n, u] : link) cols.emplace_back(n, u);
  return cols;
}

}  // namespace

const FeatureSchema& FeatureSchema::current() {
  static const FeatureSchema schema = [] {
    FeatureSchema s;
    s.version = "evlink.features.v1";
    for (const auto& [name, unit] : column_defs()) {
      s.names.push_back(name);
      s.units.push_back(unit);
      s.passthrough.push_back(unit == "onehot");
    }
    std::string joined = s.version;
    for (const auto& n : s.names) {
      joined += '\n';
      joined += n;
    }
    s.hash = fnv1a64(joined);
    return s;
  }();
  return schema;
}

std::string FeatureSchema::to_json() const {
  json j;
  j["version"] = version;
  j["hash"] = hex64(hash);
  j["names"] = names;
  j["units"] = units;
  j["passthrough"] = passthrough;
  j["d1_vehicle"] = kVehicleFeatureDim;
  j["d2_link"] = kLinkFeatureDim;
  return j.dump(2);
}

Eigen::VectorXd vehicle_feature_vector(const VehicleSpec& v) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(kVehicleFeatureDim);
  out(0) = v.mass_kg;
  out(1) = v.battery_capacity_wh;
  out(2) = v.frontal_area_m2;
  out(3) = v.drag_coeff;
  out(4) = v.rolling_resist;
  out(5) = v.motor_peak_power_w;
  out(6) = v.drivetrain_eff;
  out(7) = v.regen_eff;
  out(8) = v.aux_load_w;
  out(9) = v.max_speed_mps;
  out(10) = v.motor_peak_power_w / v.mass_kg;
  out(11 + static_cast<int>(v.vclass)) = 1.0;
  out(11 + kNumVehicleClasses + static_cast<int>(v.automation)) = 1.0;
  return out;
}

Eigen::MatrixXd engineer_link_features(const MacroTrip& trip) {
  const auto T = static_cast<Eigen::Index>(trip.num_links());
  if (T < 1) throw ConfigError("engineer_link_features: empty trip");

  for (std::size_t t = 0; t < trip.links.size(); ++t) {
    const auto& l = trip.links[t];
    const double fields[] = {l.entering_time_s, l.length_m,    l.stop_duration_s,
                             l.travel_time_s,   l.avg_speed_mps, l.speed_limit_mps};
    for (double f : fields) {
      if (!std::isfinite(f)) {
        throw ConfigError("engineer_link_features: non-finite field at link " +
                          std::to_string(t));
      }
    }
  }

  double total_length = 0.0;
  double speed_sum = 0.0;
  for (const auto& l : trip.links) {
    total_length += l.length_m;
    speed_sum += l.avg_speed_mps;
  }
  const double mean_speed = speed_sum / static_cast<double>(T);

  // Stop-adjusted moving speed: what the vehicle does while it is not
  // standing still. Far sharper energy proxy than avg_speed on links with
  // long signal stops.
  auto moving_speed = [&](Eigen::Index t) {
    const auto& l = trip.links[static_cast<std::size_t>(t)];
    const double moving_time = std::max(1.0, l.travel_time_s - l.stop_duration_s);
    return l.length_m / moving_time;
  };

  Eigen::MatrixXd out(T, kLinkFeatureDim);
  double cum_before = 0.0;
  for (Eigen::Index t = 0; t < T; ++t) {
    const auto& cur = trip.links[static_cast<std::size_t>(t)];
    // Boundary links substitute themselves for the missing neighbor.
    const Eigen::Index tp = t > 0 ? t - 1 : t;
    const Eigen::Index tn = t + 1 < T ? t + 1 : t;
    const auto& prev = trip.links[static_cast<std::size_t>(tp)];
    const auto& next = trip.links[static_cast<std::size_t>(tn)];

    const double congestion = cur.avg_speed_mps / cur.speed_limit_mps;
    const double d_speed_prev = cur.avg_speed_mps - prev.avg_speed_mps;
    const double d_speed_next = next.avg_speed_mps - cur.avg_speed_mps;

    int c = 0;
    out(t, c++) = std::sin(kTau * cur.entering_time_s / kSecondsPerDay);
    out(t, c++) = std::cos(kTau * cur.entering_time_s / kSecondsPerDay);
    out(t, c++) = cur.length_m;
    out(t, c++) = cur.stop_duration_s;
    out(t, c++) = cur.travel_time_s;
    out(t, c++) = cur.avg_speed_mps;
    out(t, c++) = cur.speed_limit_mps;
    out(t, c++) = congestion;
    out(t, c++) = d_speed_prev;
    out(t, c++) = d_speed_next;
    out(t, c++) = cur.length_m - prev.length_m;
    out(t, c++) = next.length_m - cur.length_m;
    out(t, c++) = cur.speed_limit_mps - prev.speed_limit_mps;
    out(t, c++) = next.speed_limit_mps - cur.speed_limit_mps;
    out(t, c++) = moving_speed(t);
    out(t, c++) = moving_speed(tp);
    out(t, c++) = moving_speed(tn);
    out(t, c++) = t == 0 ? 1.0 : 0.0;
    out(t, c++) = t == T - 1 ? 1.0 : 0.0;
    out(t, c++) = static_cast<double>(t + 1) / static_cast<double>(T);
    out(t, c++) = cum_before;
    out(t, c++) = total_length - cum_before - cur.length_m;
    out(t, c++) = total_length;
    out(t, c++) = mean_speed;
    out(t, c++) = d_speed_next / cur.travel_time_s;
    out(t, c++) = d_speed_prev / cur.travel_time_s;
    cum_before += cur.length_m;
  }
  return out;
}

Eigen::MatrixXd assemble_raw(const MacroTrip& trip, const VehicleSpec& vehicle) {
  const auto T = static_cast<Eigen::Index>(trip.num_links());
  Eigen::MatrixXd out(T, kFeatureDim);
  out.leftCols(kVehicleFeatureDim) = vehicle_feature_vector(vehicle).transpose().replicate(T, 1);
  out.rightCols(kLinkFeatureDim) = engineer_link_features(trip);
  return out;
}

Normalizer Normalizer::fit(const std::vector<MacroTrip>& training_trips) {
  if (training_trips.empty()) throw ConfigError("normalizer: empty training split");
  const FeatureSchema& schema = FeatureSchema::current();

  Eigen::Index rows = 0;
  for (const auto& t : training_trips) rows += static_cast<Eigen::Index>(t.num_links());
  const double n = static_cast<double>(rows);

  // Two passes: the centered second pass keeps constant columns at an
  // exact zero variance instead of cancellation noise.
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(kFeatureDim);
  for (const auto& t : training_trips) {
    sum += assemble_raw(t, t.vehicle).colwise().sum().transpose();
  }
  const Eigen::VectorXd mean = sum / n;

  Eigen::VectorXd sq = Eigen::VectorXd::Zero(kFeatureDim);
  for (const auto& t : training_trips) {
    const Eigen::MatrixXd x = assemble_raw(t, t.vehicle);
    sq += (x.rowwise() - mean.transpose()).array().square().colwise().sum().matrix().transpose();
  }

  Normalizer norm;
  norm.fitted_ = true;
  norm.schema_hash_ = schema.hash;
  norm.mean_ = mean;
  norm.stddev_.resize(kFeatureDim);
  norm.passthrough_.assign(schema.passthrough.begin(), schema.passthrough.end());
  for (int j = 0; j < kFeatureDim; ++j) {
    const double sd = std::sqrt(std::max(0.0, sq(j) / n));
    if (sd < 1e-9 * std::max(1.0, std::abs(mean(j)))) {
      norm.passthrough_[static_cast<std::size_t>(j)] = true;  // degenerate column
      norm.stddev_(j) = 1.0;
    } else {
      norm.stddev_(j) = sd;
    }
  }
  return norm;
}

void Normalizer::apply(Eigen::Ref<Eigen::MatrixXd> features) const {
  if (!fitted_) throw ConfigError("normalizer: not fitted");
  for (int j = 0; j < kFeatureDim; ++j) {
    if (passthrough_[static_cast<std::size_t>(j)]) continue;
    features.col(j) = (features.col(j).array() - mean_(j)) / stddev_(j);
  }
}

std::string Normalizer::to_json() const {
  json j;
  j["schema_version"] = FeatureSchema::current().version;
  j["schema_hash"] = hex64(schema_hash_);
  j["fitted"] = fitted_;
  j["mean"] = std::vector<double>(mean_.data(), mean_.data() + mean_.size());
  j["stddev"] = std::vector<double>(stddev_.data(), stddev_.data() + stddev_.size());
  j["passthrough"] = passthrough_;
  return j.dump();
}

Normalizer Normalizer::from_json(const std::string& text) {
  json j = json::parse(text);
  Normalizer n;
  n.fitted_ = j.at("fitted").get<bool>();
  const auto mean = j.at("mean").get<std::vector<double>>();
  const auto sd = j.at("stddev").get<std::vector<double>>();
  n.mean_ = Eigen::Map<const Eigen::VectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size()));
  n.stddev_ = Eigen::Map<const Eigen::VectorXd>(sd.data(), static_cast<Eigen::Index>(sd.size()));
  n.passthrough_ = j.at("passthrough").get<std::vector<bool>>();
  const std::string hash_hex = j.at("schema_hash").get<std::string>();
  n.schema_hash_ = std::stoull(hash_hex, nullptr, 16);
  return n;
}

Eigen::MatrixXd assemble(const MacroTrip& trip, const VehicleSpec& vehicle,
                         const Normalizer& normalizer) {
  if (!normalizer.fitted()) throw ConfigError("assemble: normalizer not fitted");
  if (normalizer.schema_hash() != FeatureSchema::current().hash) {
    throw SchemaMismatchError("assemble: normalizer schema " + hex64(normalizer.schema_hash()) +
                              " != current " + hex64(FeatureSchema::current().hash));
  }
  Eigen::MatrixXd x = assemble_raw(trip, vehicle);
  normalizer.apply(x);
  return x;
}

}  // namespace evlink

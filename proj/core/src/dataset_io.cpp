/*
 * Copyright (c) The evlink Project Contributors
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#include "evlink/dataset_io.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>  // vendored nlohmann/json

#include "evlink/common.hpp"

namespace evlink {

using json = nlohmann::json;

namespace {

json vehicle_to_json(const VehicleSpec& v) {
  return json{{"id", v.id},
              {"class", kVehicleClassNames[static_cast<std::size_t>(static_cast<int>(v.vclass))]},
              {"mass_kg", v.mass_kg},
              {"battery_capacity_wh", v.battery_capacity_wh},
              {"frontal_area_m2", v.frontal_area_m2},
              {"drag_coeff", v.drag_coeff},
              {"rolling_resist", v.rolling_resist},
              {"motor_peak_power_w", v.motor_peak_power_w},
              {"drivetrain_eff", v.drivetrain_eff},
              {"regen_eff", v.regen_eff},
              {"aux_load_w", v.aux_load_w},
              {"max_speed_mps", v.max_speed_mps},
              {"automation",
               kAutomationNames[static_cast<std::size_t>(static_cast<int>(v.automation))]}};
}

VehicleSpec vehicle_from_json(const json& j) {
  VehicleSpec v;
  v.id = j.at("id").get<std::string>();
  v.vclass = vehicle_class_from_name(j.at("class").get<std::string>());
  v.mass_kg = j.at("mass_kg").get<double>();
  v.battery_capacity_wh = j.at("battery_capacity_wh").get<double>();
  v.frontal_area_m2 = j.at("frontal_area_m2").get<double>();
  v.drag_coeff = j.at("drag_coeff").get<double>();
  v.rolling_resist = j.at("rolling_resist").get<double>();
  v.motor_peak_power_w = j.at("motor_peak_power_w").get<double>();
  v.drivetrain_eff = j.at("drivetrain_eff").get<double>();
  v.regen_eff = j.at("regen_eff").get<double>();
  v.aux_load_w = j.at("aux_load_w").get<double>();
  v.max_speed_mps = j.at("max_speed_mps").get<double>();
  v.automation = automation_from_name(j.at("automation").get<std::string>());
  return v;
}

}  // namespace

std::string trip_to_json(const MacroTrip& trip) {
  json links = json::array();
  for (const auto& l : trip.links) {
    links.push_back(json{{"link_id", l.link_id},
                         {"entering_time_s", l.entering_time_s},
                         {"length_m", l.length_m},
                         {"stop_duration_s", l.stop_duration_s},
                         {"travel_time_s", l.travel_time_s},
                         {"avg_speed_mps", l.avg_speed_mps},
                         {"speed_limit_mps", l.speed_limit_mps}});
  }
  json j{{"trip_id", trip.trip_id}, {"vehicle", vehicle_to_json(trip.vehicle)},
         {"links", std::move(links)}};
  if (trip.labels_wh) j["labels_wh"] = *trip.labels_wh;
  return j.dump();
}

MacroTrip trip_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("trip parse error: ") + e.what());
  }
  MacroTrip trip;
  trip.trip_id = j.at("trip_id").get<std::string>();
  trip.vehicle = vehicle_from_json(j.at("vehicle"));
  for (const auto& lj : j.at("links")) {
    LinkRecord l;
    l.link_id = lj.at("link_id").get<std::string>();
    l.entering_time_s = lj.at("entering_time_s").get<double>();
    l.length_m = lj.at("length_m").get<double>();
    l.stop_duration_s = lj.at("stop_duration_s").get<double>();
    l.travel_time_s = lj.at("travel_time_s").get<double>();
    l.avg_speed_mps = lj.at("avg_speed_mps").get<double>();
    l.speed_limit_mps = lj.at("speed_limit_mps").get<double>();
    trip.links.push_back(std::move(l));
  }
  if (j.contains("labels_wh")) {
    trip.labels_wh = j.at("labels_wh").get<std::vector<double>>();
  }
  return trip;
}

void write_dataset(const std::filesystem::path& path, const std::vector<MacroTrip>& trips) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  for (const auto& t : trips) out << trip_to_json(t) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<MacroTrip> read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path.string());
  std::vector<MacroTrip> trips;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      trips.push_back(trip_from_json(line));
    } catch (const std::exception& e) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return trips;
}

std::string file_hash_hex(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ull;
  char buf[65536];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    h = fnv1a64(std::string_view(buf, static_cast<std::size_t>(in.gcount())), h);
  }
  return hex64(h);
}

GeneratorConfig generator_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("generator config parse error: ") + e.what());
  }
  GeneratorConfig cfg;
  if (j.contains("trip_count")) cfg.trip_count = j.at("trip_count").get<std::size_t>();
  if (j.contains("class_mix")) cfg.class_mix = j.at("class_mix").get<std::map<std::string, double>>();
  if (j.contains("depart_time_lo_s")) cfg.depart_time_lo_s = j.at("depart_time_lo_s").get<double>();
  if (j.contains("depart_time_hi_s")) cfg.depart_time_hi_s = j.at("depart_time_hi_s").get<double>();
  if (j.contains("route")) {
    const auto& r = j.at("route");
    if (r.contains("min_links")) cfg.route.min_links = r.at("min_links").get<std::size_t>();
    if (r.contains("max_links")) cfg.route.max_links = r.at("max_links").get<std::size_t>();
    if (r.contains("min_length_m")) cfg.route.min_length_m = r.at("min_length_m").get<double>();
    if (r.contains("max_length_m")) cfg.route.max_length_m = r.at("max_length_m").get<double>();
    if (r.contains("min_stop_probability")) {
      cfg.route.min_stop_probability = r.at("min_stop_probability").get<double>();
    }
    if (r.contains("max_stop_probability")) {
      cfg.route.max_stop_probability = r.at("max_stop_probability").get<double>();
    }
    if (r.contains("length_skew")) cfg.route.length_skew = r.at("length_skew").get<double>();
  }
  cfg.validate();
  return cfg;
}

GeneratorConfig load_generator_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return generator_config_from_json(ss.str());
}

std::string summary_to_json(const DatasetSummary& s) {
  json j{{"count", s.count}, {"mean", s.mean}, {"stddev", s.stddev}, {"min", s.min},
         {"p25", s.p25},     {"p50", s.p50},   {"p75", s.p75},       {"max", s.max},
         {"unit", "Wh"}};
  return j.dump(2);
}

}  // namespace evlink

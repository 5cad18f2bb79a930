/*
 * Copyright (c) The evlink Project Contributors
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#include "evlink/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "evlink/common.hpp"
#include "evlink/metrics.hpp"

namespace evlink {

// ---------------------------------------------------------------------------
// Domain-type validation

VehicleClass vehicle_class_from_name(std::string_view name) {
  for (int i = 0; i < kNumVehicleClasses; ++i) {
    if (kVehicleClassNames[static_cast<std::size_t>(i)] == name) {
      return static_cast<VehicleClass>(i);
    }
  }
  throw ConfigError("unknown vehicle class: " + std::string(name));
}

Automation automation_from_name(std::string_view name) {
  for (int i = 0; i < kNumAutomationLevels; ++i) {
    if (kAutomationNames[static_cast<std::size_t>(i)] == name) {
      return static_cast<Automation>(i);
    }
  }
  throw ConfigError("unknown automation level: " + std::string(name));
}

void VehicleSpec::validate() const {
  if (!(mass_kg > 0)) throw ConfigError("vehicle " + id + ": mass must be > 0");
  if (!(battery_capacity_wh > 0)) throw ConfigError("vehicle " + id + ": battery must be > 0");
  if (!(frontal_area_m2 > 0)) throw ConfigError("vehicle " + id + ": frontal area must be > 0");
  if (!(drivetrain_eff > 0 && drivetrain_eff <= 1)) {
    throw ConfigError("vehicle " + id + ": drivetrain_eff must be in (0, 1]");
  }
  if (!(regen_eff >= 0 && regen_eff <= 1)) {
    throw ConfigError("vehicle " + id + ": regen_eff must be in [0, 1]");
  }
}

void RouteSkeleton::validate() const {
  if (link_ids.empty()) throw ConfigError("route: at least one link required");
  if (length_m.size() != link_ids.size() || speed_limit_mps.size() != link_ids.size() ||
      signal_stop_probability.size() != link_ids.size()) {
    throw ConfigError("route: parallel arrays differ in length");
  }
  for (std::size_t i = 0; i < link_ids.size(); ++i) {
    if (!(length_m[i] > 0)) throw ConfigError("route: link length must be > 0");
    if (!(speed_limit_mps[i] > 0)) throw ConfigError("route: speed limit must be > 0");
  }
}

void MicroTrace::validate() const {
  if (speed_mps.size() < 2) throw ConfigError("trace: needs at least 2 samples");
  const double accel_cap = 3.0 + 1e-9;
  for (std::size_t k = 0; k < speed_mps.size(); ++k) {
    if (speed_mps[k] < 0) throw ConfigError("trace: negative speed");
    if (k + 1 < speed_mps.size() &&
        std::abs(speed_mps[k + 1] - speed_mps[k]) > accel_cap) {
      throw ConfigError("trace: speed jump above 3 m/s between samples");
    }
  }
}

void LinkRecord::validate() const {
  if (!(travel_time_s > 0)) throw ConfigError("link " + link_id + ": travel_time must be > 0");
  if (std::abs(avg_speed_mps - length_m / travel_time_s) > 0.1) {
    throw ConfigError("link " + link_id + ": avg_speed inconsistent with length/travel_time");
  }
  if (stop_duration_s < 0 || stop_duration_s > travel_time_s) {
    throw ConfigError("link " + link_id + ": stop_duration out of range");
  }
}

double MacroTrip::trip_energy_wh() const {
  if (!labels_wh) return 0.0;
  return std::accumulate(labels_wh->begin(), labels_wh->end(), 0.0);
}

void MacroTrip::validate() const {
  if (links.empty() || links.size() > kMaxTripLinks) {
    throw ConfigError("trip " + trip_id + ": link count out of [1, 284]");
  }
  if (labels_wh && labels_wh->size() != links.size()) {
    throw ConfigError("trip " + trip_id + ": label count != link count");
  }
  vehicle.validate();
  for (const auto& l : links) l.validate();
}

// ---------------------------------------------------------------------------
// Vehicle synthesis

namespace {

// Stand-in for a vehicle database. Mass ranges are pairwise disjoint so
// class membership is observable from mass alone.
const VehicleClassRange kClassRanges[kNumVehicleClasses] = {
    // mass            battery          area        cd            crr             power            aux          vmax
    {1050, 1290, 30e3, 60e3, 2.0, 2.4, 0.26, 0.32, 0.007, 0.010, 80e3, 150e3, 300, 800, 38, 48},   // compact
    {1300, 1900, 40e3, 90e3, 2.2, 2.6, 0.25, 0.31, 0.007, 0.010, 100e3, 220e3, 300, 900, 40, 50},  // midsize
    {1950, 2600, 60e3, 120e3, 2.6, 3.2, 0.30, 0.38, 0.008, 0.011, 150e3, 300e3, 400, 1000, 40, 50},  // suv
    {2650, 3400, 90e3, 200e3, 3.0, 3.7, 0.38, 0.48, 0.009, 0.012, 200e3, 400e3, 400, 1200, 38, 48},  // pickup
    {6000, 11800, 150e3, 350e3, 5.5, 8.0, 0.55, 0.70, 0.006, 0.009, 150e3, 350e3, 800, 2000, 28, 34},  // md_truck
    {14000, 36000, 300e3, 900e3, 8.0, 10.5, 0.55, 0.75, 0.005, 0.008, 300e3, 550e3, 1000, 3000, 28, 34},  // hd_truck
};

}  // namespace

const VehicleClassRange& vehicle_class_range(VehicleClass c) {
  return kClassRanges[static_cast<int>(c)];
}

VehicleSpec synthesize_vehicle(std::uint64_t rng_seed, VehicleClass c) {
  const VehicleClassRange& r = vehicle_class_range(c);
  Rng rng(rng_seed, "oracle.vehicle", static_cast<std::uint64_t>(c));
  VehicleSpec v;
  v.vclass = c;
  v.mass_kg = rng.uniform(r.mass_lo, r.mass_hi);
  v.battery_capacity_wh = rng.uniform(r.battery_lo, r.battery_hi);
  v.frontal_area_m2 = rng.uniform(r.area_lo, r.area_hi);
  v.drag_coeff = rng.uniform(r.cd_lo, r.cd_hi);
  v.rolling_resist = rng.uniform(r.crr_lo, r.crr_hi);
  v.motor_peak_power_w = rng.uniform(r.power_lo, r.power_hi);
  const bool truck = c == VehicleClass::md_truck || c == VehicleClass::hd_truck;
  v.drivetrain_eff = truck ? rng.uniform(0.85, 0.93) : rng.uniform(0.87, 0.95);
  v.regen_eff = truck ? rng.uniform(0.45, 0.65) : rng.uniform(0.50, 0.75);
  v.aux_load_w = rng.uniform(r.aux_lo, r.aux_hi);
  v.max_speed_mps = rng.uniform(r.max_speed_lo, r.max_speed_hi);
  const double u = rng.uniform();
  v.automation = u < 0.6 ? Automation::none : (u < 0.9 ? Automation::partial : Automation::full);
  v.id = std::string(kVehicleClassNames[static_cast<std::size_t>(static_cast<int>(c))]) + "-" +
         hex64(rng.next_u64()).substr(8);
  v.validate();
  return v;
}

// ---------------------------------------------------------------------------
// Route synthesis

namespace {

// Posted limits in m/s: 30/40/50/60/80/100 km/h.
const double kSpeedTiers[] = {8.33, 11.11, 13.89, 16.67, 22.22, 27.78};
constexpr int kNumTiers = 6;

}  // namespace

RouteSkeleton synthesize_route(std::uint64_t rng_seed, const RouteConfig& cfg) {
  if (cfg.min_links < 1 || cfg.max_links < cfg.min_links || cfg.max_links > kMaxTripLinks) {
    throw ConfigError("route config: link-count bounds invalid");
  }
  Rng rng(rng_seed, "oracle.route");
  const double span = static_cast<double>(cfg.max_links - cfg.min_links);
  const double frac = std::pow(rng.uniform(), cfg.length_skew);
  const auto n = cfg.min_links + static_cast<std::size_t>(std::llround(frac * span));

  RouteSkeleton route;
  route.link_ids.reserve(n);
  int tier = static_cast<int>(rng.below(kNumTiers));
  for (std::size_t j = 0; j < n; ++j) {
    // Limits wander slowly so consecutive links resemble a real corridor.
    const double step = rng.uniform();
    if (step < 0.18 && tier > 0) --tier;
    else if (step > 0.82 && tier + 1 < kNumTiers) ++tier;
    const double limit = kSpeedTiers[tier];
    const double lo = std::log(cfg.min_length_m);
    const double hi = std::log(cfg.max_length_m);
    double len = std::exp(rng.uniform(lo, hi)) * (0.7 + 0.12 * tier);
    len = std::clamp(len, std::max(cfg.min_length_m, 3.2 * limit), cfg.max_length_m);
    const double urban = 1.0 - static_cast<double>(tier) / (kNumTiers + 1);
    const double p_stop =
        rng.uniform(cfg.min_stop_probability, cfg.max_stop_probability) * urban;
    route.link_ids.push_back("lnk-" + hex64(rng.next_u64()).substr(8));
    route.length_m.push_back(len);
    route.speed_limit_mps.push_back(limit);
    route.signal_stop_probability.push_back(p_stop);
  }
  route.validate();
  return route;
}

// ---------------------------------------------------------------------------
// Microscopic speed synthesis: trapezoidal cruise segments with a gentle
// wandering target, signal stops, and braking envelopes ahead of stops,
// slower links and the trip end.

MicroTrace synthesize_trip(std::uint64_t rng_seed, const RouteSkeleton& route,
                           const VehicleSpec& vehicle) {
  route.validate();
  Rng rng(rng_seed, "oracle.trace");
  const double accel_cap = vehicle.is_truck() ? kTruckAccelLimit : kLightDutyAccelLimit;
  const double brake = 0.95 * accel_cap;  // envelope margin under the hard cap
  const std::size_t n_links = route.size();

  // Cruise target per link.
  std::vector<double> cruise(n_links);
  for (std::size_t j = 0; j < n_links; ++j) {
    const double limit = route.speed_limit_mps[j];
    double v = limit * rng.uniform(0.86, 1.07);
    cruise[j] = std::clamp(v, 2.0, std::min(1.12 * limit, vehicle.max_speed_mps));
  }

  // Planned signal stops: (position, dwell seconds).
  struct StopEvent {
    double position;
    int dwell;
  };
  std::vector<StopEvent> stops;
  std::vector<double> link_start(n_links + 1, 0.0);
  for (std::size_t j = 0; j < n_links; ++j) {
    link_start[j + 1] = link_start[j] + route.length_m[j];
    if (rng.bernoulli(route.signal_stop_probability[j])) {
      const double at = link_start[j] + route.length_m[j] * rng.uniform(0.35, 0.8);
      const int dwell = 3 + static_cast<int>(rng.below(26));
      stops.push_back({at, dwell});
    }
  }
  const double total = link_start[n_links];

  MicroTrace trace;
  trace.speed_mps.push_back(0.0);
  double v = 0.0;
  double pos = 0.0;
  std::size_t link = 0;
  std::size_t next_stop = 0;
  double wander = 0.0;
  int wander_left = 0;

  const std::size_t sample_cap = 48 * 3600;
  while (true) {
    if (trace.speed_mps.size() > sample_cap) {
      throw ConfigError("trace synthesis: runaway trip, check route config");
    }
    while (link + 1 < n_links && pos >= link_start[link + 1] - 1e-9) ++link;

    if (wander_left == 0) {
      wander = rng.uniform(-0.22, 0.22);
      wander_left = 10 + static_cast<int>(rng.below(9));
    }
    --wander_left;

    double target = std::clamp(cruise[link] + wander, 2.0,
                               std::min(1.14 * route.speed_limit_mps[link],
                                        vehicle.max_speed_mps));
    // Envelopes: upcoming stop, next link's cruise speed, trip end.
    if (next_stop < stops.size()) {
      const double d = std::max(0.0, stops[next_stop].position - pos);
      target = std::min(target, std::sqrt(2.0 * brake * d));
    }
    if (link + 1 < n_links) {
      const double d = std::max(0.0, link_start[link + 1] - pos);
      const double ahead = cruise[link + 1];
      target = std::min(target, std::sqrt(ahead * ahead + 2.0 * brake * d));
    }
    const double d_end = std::max(0.0, total - pos);
    target = std::min(target, std::sqrt(2.0 * brake * d_end));

    const double v_old = v;
    const double a = std::clamp(target - v, -accel_cap, accel_cap);
    v = std::max(0.0, v + a);

    // Snap to a full stop when the envelope has nearly closed; the snap
    // itself must stay inside the per-sample acceleration bound.
    const bool can_snap = v_old <= accel_cap;
    const bool stopping_for_signal =
        next_stop < stops.size() && stops[next_stop].position - pos <= std::max(v, 3.0);
    if (can_snap && v < 0.7 && stopping_for_signal) v = 0.0;
    if (can_snap && v < 0.7 && d_end <= std::max(v, 3.0)) v = 0.0;
    // Keep moving samples at or above the stop threshold, so time below it
    // is exactly the standstill time.
    if (v > 0.0 && v < kStopSpeedThresholdMps) v = kStopSpeedThresholdMps;

    pos += v;
    trace.speed_mps.push_back(v);

    if (v == 0.0 && stopping_for_signal) {
      for (int k = 0; k < stops[next_stop].dwell; ++k) trace.speed_mps.push_back(0.0);
      ++next_stop;
      continue;
    }
    if (v == 0.0 && d_end <= 3.0) break;
  }

  // Link boundaries from the integrated distance.
  trace.link_begin.assign(n_links, 0);
  double walk = 0.0;
  std::size_t j = 1;
  for (std::size_t k = 0; k + 1 < trace.speed_mps.size() && j < n_links; ++k) {
    walk += trace.speed_mps[k];
    while (j < n_links && walk >= link_start[j] - 1e-9) {
      trace.link_begin[j] = k + 1;
      ++j;
    }
  }
  if (j < n_links) {
    throw ConfigError("trace synthesis: distance closure failed");
  }
  trace.validate();
  return trace;
}

// ---------------------------------------------------------------------------
// Energy model

double battery_power_w(double speed_mps, double accel_mps2, const VehicleSpec& v) {
  const double force = 0.5 * kAirDensity * v.drag_coeff * v.frontal_area_m2 * speed_mps * speed_mps +
                       v.mass_kg * kGravity * v.rolling_resist + v.mass_kg * accel_mps2;
  const double wheel = force * speed_mps;
  if (wheel >= 0.0) return wheel / v.drivetrain_eff + v.aux_load_w;
  return wheel * v.regen_eff + v.aux_load_w;
}

std::vector<double> simulate_energy(const MicroTrace& trace, const VehicleSpec& vehicle) {
  const std::size_t n = trace.num_samples();
  if (n < 2) throw ConfigError("simulate_energy: trace too short");
  std::vector<double> energy(trace.num_links(), 0.0);
  for (std::size_t j = 0; j < trace.num_links(); ++j) {
    double joules = 0.0;
    const std::size_t hi = trace.link_end(j);
    for (std::size_t k = trace.link_begin[j]; k < hi; ++k) {
      const double a = trace.speed_mps[k + 1] - trace.speed_mps[k];
      joules += battery_power_w(trace.speed_mps[k], a, vehicle);  // dt = 1 s
    }
    energy[j] = joules / 3600.0;
  }
  return energy;
}

// ---------------------------------------------------------------------------
// Masking

MacroTrip mask_to_macro(const MicroTrace& trace, const std::vector<double>& labels_wh,
                        const RouteSkeleton& route, const VehicleSpec& vehicle,
                        double depart_time_s) {
  if (labels_wh.size() != trace.num_links() || route.size() != trace.num_links()) {
    throw ConfigError("mask_to_macro: link count mismatch");
  }
  MacroTrip trip;
  trip.vehicle = vehicle;
  trip.links.reserve(trace.num_links());
  for (std::size_t j = 0; j < trace.num_links(); ++j) {
    const std::size_t lo = trace.link_begin[j];
    const std::size_t hi = trace.link_end(j);
    LinkRecord rec;
    rec.link_id = route.link_ids[j];
    rec.entering_time_s = depart_time_s + static_cast<double>(lo);
    rec.length_m = route.length_m[j];
    rec.travel_time_s = static_cast<double>(hi - lo);
    rec.avg_speed_mps = rec.length_m / rec.travel_time_s;
    rec.speed_limit_mps = route.speed_limit_mps[j];
    std::size_t below = 0;
    for (std::size_t k = lo; k < hi; ++k) {
      if (trace.speed_mps[k] < kStopSpeedThresholdMps) ++below;
    }
    rec.stop_duration_s = static_cast<double>(below);
    trip.links.push_back(std::move(rec));
  }
  trip.labels_wh = labels_wh;
  return trip;
}

// ---------------------------------------------------------------------------
// Dataset generation

void GeneratorConfig::validate() const {
  if (trip_count == 0) throw ConfigError("generator: trip_count must be > 0");
  if (class_mix.empty()) throw ConfigError("generator: class_mix must not be empty");
  double sum = 0.0;
  for (const auto& [name, w] : class_mix) {
    vehicle_class_from_name(name);  // throws on unknown names
    if (w < 0) throw ConfigError("generator: class weight must be >= 0");
    sum += w;
  }
  if (sum <= 0) throw ConfigError("generator: class weights sum to zero");
  if (route.length_skew < 0.1 || route.length_skew > 16.0) {
    throw ConfigError("generator: length_skew out of [0.1, 16]");
  }
  if (depart_time_hi_s < depart_time_lo_s) throw ConfigError("generator: depart window inverted");
}

DatasetSummary summarize_trip_energy(const std::vector<MacroTrip>& trips) {
  std::vector<double> totals;
  totals.reserve(trips.size());
  for (const auto& t : trips) {
    if (t.labels_wh) totals.push_back(t.trip_energy_wh());
  }
  DatasetSummary s;
  s.count = totals.size();
  if (totals.empty()) return s;
  const double sum = std::accumulate(totals.begin(), totals.end(), 0.0);
  s.mean = sum / static_cast<double>(totals.size());
  double sq = 0.0;
  for (double v : totals) sq += (v - s.mean) * (v - s.mean);
  s.stddev = std::sqrt(sq / static_cast<double>(totals.size()));
  s.min = *std::min_element(totals.begin(), totals.end());
  s.max = *std::max_element(totals.begin(), totals.end());
  s.p25 = percentile(totals, 25);
  s.p50 = percentile(totals, 50);
  s.p75 = percentile(totals, 75);
  return s;
}

GeneratedDataset generate_dataset(const GeneratorConfig& config, std::uint64_t rng_seed) {
  config.validate();

  std::vector<std::string> class_names;
  std::vector<double> class_cdf;
  double acc = 0.0;
  for (const auto& [name, w] : config.class_mix) {
    class_names.push_back(name);
    acc += w;
    class_cdf.push_back(acc);
  }

  const RouteConfig& route_cfg = config.route;

  GeneratedDataset out;
  out.trips.reserve(config.trip_count);
  for (std::size_t i = 0; i < config.trip_count; ++i) {
    Rng pick(rng_seed, "oracle.pick", i);
    const double u = pick.uniform() * acc;
    std::size_t ci = 0;
    while (ci + 1 < class_cdf.size() && u >= class_cdf[ci]) ++ci;
    const VehicleClass vc = vehicle_class_from_name(class_names[ci]);

    const VehicleSpec vehicle = synthesize_vehicle(fnv1a64("veh", rng_seed ^ i), vc);
    const RouteSkeleton route = synthesize_route(fnv1a64("route", rng_seed ^ i), route_cfg);
    const MicroTrace trace = synthesize_trip(fnv1a64("trace", rng_seed ^ i), route, vehicle);
    const std::vector<double> labels = simulate_energy(trace, vehicle);
    const double depart = pick.uniform(config.depart_time_lo_s, config.depart_time_hi_s);

    MacroTrip trip = mask_to_macro(trace, labels, route, vehicle, depart);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "trip-%06zu", i);
    trip.trip_id = buf;
    trip.validate();
    out.trips.push_back(std::move(trip));
  }
  out.summary = summarize_trip_energy(out.trips);
  return out;
}

}  // namespace evlink

/*
 * Copyright (c) The evlink Project Contributors
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "evlink/rng.hpp"
#include "evlink/trip.hpp"

namespace evlink {

// Longitudinal-dynamics constants. Flat road, no temperature effects.
inline constexpr double kAirDensity = 1.2;   // kg/m^3
inline constexpr double kGravity = 9.81;     // m/s^2
inline constexpr double kStopSpeedThresholdMps = 0.5;
inline constexpr double kLightDutyAccelLimit = 3.0;  // m/s^2
inline constexpr double kTruckAccelLimit = 1.5;      // m/s^2

/// Documented per-class attribute ranges; stands in for a vehicle database.
/// Mass ranges are pairwise disjoint so class ordering is observable.
struct VehicleClassRange {
  double mass_lo, mass_hi;              // kg
  double battery_lo, battery_hi;        // Wh
  double area_lo, area_hi;              // m^2
  double cd_lo, cd_hi;                  // drag coefficient
  double crr_lo, crr_hi;                // rolling resistance
  double power_lo, power_hi;            // W
  double aux_lo, aux_hi;                // W
  double max_speed_lo, max_speed_hi;    // m/s
};

const VehicleClassRange& vehicle_class_range(VehicleClass c);

VehicleSpec synthesize_vehicle(std::uint64_t rng_seed, VehicleClass c);

/// Settings for synthesize_route; also embedded in GeneratorConfig.
struct RouteConfig {
  std::size_t min_links = 1;
  std::size_t max_links = 40;
  double min_length_m = 120.0;
  double max_length_m = 2400.0;
  double min_stop_probability = 0.0;
  double max_stop_probability = 0.55;
  /// Skew knob for the link-count draw; 1 = uniform over
  /// [min_links, max_links], larger favors short trips.
  double length_skew = 2.0;
};

RouteSkeleton synthesize_route(std::uint64_t rng_seed, const RouteConfig& cfg);

MicroTrace synthesize_trip(std::uint64_t rng_seed, const RouteSkeleton& route,
                           const VehicleSpec& vehicle);

/// Integrates wheel power P = (0.5*rho*Cd*A*v^2 + m*g*Crr + m*a)*v at 1 Hz
/// (left Riemann sum) and maps it through drivetrain/regen efficiency plus
/// the auxiliary load. Returns per-link energy in Wh; regen can make a link
/// negative.
std::vector<double> simulate_energy(const MicroTrace& trace, const VehicleSpec& vehicle);

/// Battery power (W) for one sample; exposed for tests.
double battery_power_w(double speed_mps, double accel_mps2, const VehicleSpec& vehicle);

/// Drops the microscopic trace, emitting only the seven per-link aggregates.
MacroTrip mask_to_macro(const MicroTrace& trace, const std::vector<double>& labels_wh,
                        const RouteSkeleton& route, const VehicleSpec& vehicle,
                        double depart_time_s);

struct GeneratorConfig {
  std::size_t trip_count = 1000;
  RouteConfig route;
  std::map<std::string, double> class_mix = {
      {"compact", 0.4}, {"midsize", 0.4}, {"suv", 0.2}};
  double depart_time_lo_s = 6.0 * 3600;
  double depart_time_hi_s = 21.0 * 3600;

  void validate() const;
};

/// count / mean / std / min / percentiles / max of trip-level Wh.
struct DatasetSummary {
  std::size_t count = 0;
  double mean = 0.0;
  double stddev = 0.0;
  double min = 0.0;
  double p25 = 0.0;
  double p50 = 0.0;
  double p75 = 0.0;
  double max = 0.0;
};

DatasetSummary summarize_trip_energy(const std::vector<MacroTrip>& trips);

struct GeneratedDataset {
  std::vector<MacroTrip> trips;
  DatasetSummary summary;
};

/// Deterministic for a fixed (config, seed). Trips carry labels.
GeneratedDataset generate_dataset(const GeneratorConfig& config, std::uint64_t rng_seed);

}  // namespace evlink

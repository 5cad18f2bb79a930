/*
 * Copyright (c) The evlink Project Contributors
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#pragma once

#include <array>
#include <string>
#include <string_view>

namespace evlink {

enum class VehicleClass : int { compact = 0, midsize, suv, pickup, md_truck, hd_truck };
enum class Automation : int { none = 0, partial, full };

inline constexpr int kNumVehicleClasses = 6;
inline constexpr int kNumAutomationLevels = 3;

inline constexpr std::array<std::string_view, kNumVehicleClasses> kVehicleClassNames{
    "compact", "midsize", "suv", "pickup", "md_truck", "hd_truck"};
inline constexpr std::array<std::string_view, kNumAutomationLevels> kAutomationNames{
    "none", "partial", "full"};

VehicleClass vehicle_class_from_name(std::string_view name);
Automation automation_from_name(std::string_view name);

/// Static vehicle attributes; the source of the 20 vehicle features.
struct VehicleSpec {
  std::string id;
  VehicleClass vclass = VehicleClass::midsize;
  double mass_kg = 0.0;
  double battery_capacity_wh = 0.0;
  double frontal_area_m2 = 0.0;
  double drag_coeff = 0.0;
  double rolling_resist = 0.0;
  double motor_peak_power_w = 0.0;
  double drivetrain_eff = 0.0;  // (0, 1]
  double regen_eff = 0.0;       // [0, 1]
  double aux_load_w = 0.0;
  double max_speed_mps = 0.0;
  Automation automation = Automation::none;

  bool operator==(const VehicleSpec&) const = default;

  /// Throws ConfigError if any invariant is violated.
  void validate() const;

  bool is_truck() const {
    return vclass == VehicleClass::md_truck || vclass == VehicleClass::hd_truck;
  }
};

}  // namespace evlink

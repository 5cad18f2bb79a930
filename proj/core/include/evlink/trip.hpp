/*
 * Copyright (c) The evlink Project Contributors
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "evlink/vehicle.hpp"

namespace evlink {

/// Hard cap on trip length, mirrored by the generator and the runtime.
inline constexpr std::size_t kMaxTripLinks = 284;

/// Stand-in for network topology: an ordered list of links with static
/// attributes, enough to drive the microscopic synthesizer.
struct RouteSkeleton {
  std::vector<std::string> link_ids;
  std::vector<double> length_m;
  std::vector<double> speed_limit_mps;
  std::vector<double> signal_stop_probability;

  std::size_t size() const { return link_ids.size(); }
  void validate() const;
};

/// 1-Hz speed trace. Sample k is the speed over [k, k+1) seconds; the trace
/// spans size()-1 seconds. Oracle-internal, never exposed to the model.
struct MicroTrace {
  std::vector<double> speed_mps;
  /// link_begin[j] is the sample index where link j starts; link j covers
  /// sample intervals [link_begin[j], link_begin[j+1]), with the virtual
  /// link_begin[num_links] = speed_mps.size() - 1.
  std::vector<std::size_t> link_begin;

  std::size_t num_samples() const { return speed_mps.size(); }
  std::size_t num_links() const { return link_begin.size(); }
  std::size_t link_end(std::size_t j) const {
    return j + 1 < link_begin.size() ? link_begin[j + 1] : speed_mps.size() - 1;
  }
  void validate() const;
};

/// The seven masked per-link aggregates.
struct LinkRecord {
  std::string link_id;
  double entering_time_s = 0.0;  // seconds since midnight
  double length_m = 0.0;
  double stop_duration_s = 0.0;
  double travel_time_s = 0.0;
  double avg_speed_mps = 0.0;
  double speed_limit_mps = 0.0;

  bool operator==(const LinkRecord&) const = default;
  void validate() const;
};

/// A macroscopic trip: vehicle + ordered link aggregates + optional labels.
struct MacroTrip {
  std::string trip_id;
  VehicleSpec vehicle;
  std::vector<LinkRecord> links;
  std::optional<std::vector<double>> labels_wh;

  std::size_t num_links() const { return links.size(); }
  double trip_energy_wh() const;
  void validate() const;
};

}  // namespace evlink

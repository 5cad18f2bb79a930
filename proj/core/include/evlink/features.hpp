/*
 * Copyright (c) The evlink Project Contributors
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "evlink/trip.hpp"

namespace evlink {

inline constexpr int kVehicleFeatureDim = 20;  // 11 numeric + 6 class + 3 automation
inline constexpr int kLinkFeatureDim = 26;
inline constexpr int kFeatureDim = kVehicleFeatureDim + kLinkFeatureDim;

/// Versioned column order. The hash gates every model/normalizer pairing.
struct FeatureSchema {
  static const FeatureSchema& current();

  std::string version;                  // e.g. "evlink.features.v1"
  std::vector<std::string> names;       // kFeatureDim entries, fixed order
  std::vector<std::string> units;       // parallel to names ("" = dimensionless)
  std::vector<bool> passthrough;        // one-hot columns skip normalization
  std::uint64_t hash = 0;               // fnv1a64 over version + names

  /// Manifest (version, hash, names, units, order) as JSON.
  std::string to_json() const;
};

/// Engineered link block: T x 26. Boundary links substitute themselves for
/// missing neighbors, so all delta columns are exactly 0 at trip ends.
Eigen::MatrixXd engineer_link_features(const MacroTrip& trip);

/// 11 numeric columns + 6 class one-hot + 3 automation one-hot.
Eigen::VectorXd vehicle_feature_vector(const VehicleSpec& vehicle);

class Normalizer {
 public:
  Normalizer() = default;

  /// Means/stds over all links of all training trips; zero-variance and
  /// one-hot columns pass through. Throws ConfigError on empty input.
  static Normalizer fit(const std::vector<MacroTrip>& training_trips);

  bool fitted() const { return fitted_; }
  std::uint64_t schema_hash() const { return schema_hash_; }
  const Eigen::VectorXd& mean() const { return mean_; }
  const Eigen::VectorXd& stddev() const { return stddev_; }
  const std::vector<bool>& passthrough() const { return passthrough_; }

  /// In-place standardization of an assembled T x 46 matrix.
  void apply(Eigen::Ref<Eigen::MatrixXd> features) const;

  std::string to_json() const;
  static Normalizer from_json(const std::string& text);

 private:
  bool fitted_ = false;
  std::uint64_t schema_hash_ = 0;
  Eigen::VectorXd mean_;
  Eigen::VectorXd stddev_;
  std::vector<bool> passthrough_;
};

/// Raw (unnormalized) T x 46 matrix: vehicle block broadcast to every row,
/// link block appended. Never reads labels.
Eigen::MatrixXd assemble_raw(const MacroTrip& trip, const VehicleSpec& vehicle);

/// assemble_raw + normalization. Throws SchemaMismatchError if the
/// normalizer was fitted under a different schema hash.
Eigen::MatrixXd assemble(const MacroTrip& trip, const VehicleSpec& vehicle,
                         const Normalizer& normalizer);

}  // namespace evlink

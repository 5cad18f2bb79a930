/*
 * Copyright (c) The evlink Project Contributors
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <vector>

#include "evlink/artifact.hpp"
#include "evlink/trip.hpp"

namespace evlink {

struct PredictResult {
  std::vector<double> energy_wh;  // one value per link
  bool extrapolated = false;      // trip longer than anything seen in training
};

struct SocTrace {
  double initial_soc = 0.0;
  std::vector<double> energy_wh;
  std::vector<double> soc;  // clamped to [0, 1] per link
  bool charge_needed = false;
  std::optional<std::size_t> first_deficit_link;  // first pre-clamp SOC < 0
};

inline constexpr double kDefaultChargeThreshold = 0.15;

/// Deployable predictor. The loaded artifact is immutable and shared;
/// each Predictor instance owns private scratch buffers, preallocated at
/// load time for trips up to `max_links`, so a warmed instance never
/// allocates on the prediction path. Use one instance per thread.
class Predictor {
 public:
  static Predictor load(const std::filesystem::path& path, std::size_t max_links = kMaxTripLinks);
  static Predictor from_artifact(ModelArtifact artifact, std::size_t max_links = kMaxTripLinks);

  /// Copies share the artifact and get fresh scratch buffers.
  Predictor(const Predictor& other);
  Predictor(Predictor&&) noexcept = default;
  ~Predictor();

  const ModelArtifact& artifact() const { return *artifact_; }

  PredictResult predict_links(const MacroTrip& trip);
  PredictResult predict_links(const MacroTrip& trip, const VehicleSpec& vehicle);

  SocTrace track_soc(const MacroTrip& trip, const VehicleSpec& vehicle, double initial_soc,
                     double threshold = kDefaultChargeThreshold);
  SocTrace track_soc(const MacroTrip& trip, double initial_soc,
                     double threshold = kDefaultChargeThreshold);

 private:
  struct Scratch;
  Predictor(std::shared_ptr<const ModelArtifact> artifact, std::size_t max_links);

  std::shared_ptr<const ModelArtifact> artifact_;
  std::unique_ptr<Scratch> scratch_;
  std::size_t max_links_ = 0;
};

/// SOC recurrence alone, for callers that already have predictions.
SocTrace soc_from_predictions(const std::vector<double>& energy_wh, double battery_capacity_wh,
                              double initial_soc, double threshold);

}  // namespace evlink

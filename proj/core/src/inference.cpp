/*
 * Copyright (c) The evlink Project Contributors
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#include "evlink/inference.hpp"

#include <algorithm>

#include "evlink/common.hpp"

namespace evlink {

struct Predictor::Scratch {
  nn::GrowMat<float> features;
  ModelCache cache;
  Rng rng{0};  // never consumed in infer mode
};

Predictor::Predictor(std::shared_ptr<const ModelArtifact> artifact, std::size_t max_links)
    : artifact_(std::move(artifact)), scratch_(std::make_unique<Scratch>()), max_links_(max_links) {
  // Warm every activation buffer at the largest supported trip length so
  // the prediction path never allocates.
  const auto T = static_cast<nn::Index>(std::max<std::size_t>(1, max_links_));
  scratch_->features.ensure(T, artifact_->params.input_dim());
  scratch_->features.view().setZero();
  model_forward<float>(artifact_->params, scratch_->features.view(), 1, T, nn::Mode::infer,
                       scratch_->rng, scratch_->cache);
}

Predictor::Predictor(const Predictor& other)
    : Predictor(other.artifact_, other.max_links_) {}

Predictor::~Predictor() = default;

Predictor Predictor::load(const std::filesystem::path& path, std::size_t max_links) {
  return Predictor(std::make_shared<const ModelArtifact>(load_model(path)), max_links);
}

Predictor Predictor::from_artifact(ModelArtifact artifact, std::size_t max_links) {
  return Predictor(std::make_shared<const ModelArtifact>(std::move(artifact)), max_links);
}

PredictResult Predictor::predict_links(const MacroTrip& trip) {
  return predict_links(trip, trip.vehicle);
}

PredictResult Predictor::predict_links(const MacroTrip& trip, const VehicleSpec& vehicle) {
  const auto T = static_cast<nn::Index>(trip.num_links());
  if (T < 1) throw ConfigError("predict_links: empty trip");

  const Eigen::MatrixXd x = assemble(trip, vehicle, artifact_->normalizer);
  scratch_->features.ensure(T, x.cols());
  scratch_->features.view() = x.cast<float>();

  model_forward<float>(artifact_->params, scratch_->features.view(), 1, T, nn::Mode::infer,
                       scratch_->rng, scratch_->cache);
  const auto preds = scratch_->cache.predictions();

  PredictResult result;
  result.energy_wh.resize(static_cast<std::size_t>(T));
  for (nn::Index t = 0; t < T; ++t) {
    result.energy_wh[static_cast<std::size_t>(t)] = static_cast<double>(preds(t, 0));
  }
  const std::size_t trained_max = artifact_->provenance.max_trained_trip_length;
  result.extrapolated = trained_max > 0 && trip.num_links() > trained_max;
  return result;
}

SocTrace soc_from_predictions(const std::vector<double>& energy_wh, double battery_capacity_wh,
                              double initial_soc, double threshold) {
  if (initial_soc < 0.0 || initial_soc > 1.0) {
    throw ConfigError("track_soc: initial_soc must be in [0, 1]");
  }
  if (threshold < 0.0 || threshold > 1.0) {
    throw ConfigError("track_soc: threshold must be in [0, 1]");
  }
  if (!(battery_capacity_wh > 0.0)) throw ConfigError("track_soc: battery capacity must be > 0");

  SocTrace trace;
  trace.initial_soc = initial_soc;
  trace.energy_wh = energy_wh;
  trace.soc.reserve(energy_wh.size());
  double soc = initial_soc;
  for (std::size_t i = 0; i < energy_wh.size(); ++i) {
    const double pre_clamp = soc - energy_wh[i] / battery_capacity_wh;
    if (pre_clamp < threshold) trace.charge_needed = true;
    if (pre_clamp < 0.0 && !trace.first_deficit_link) trace.first_deficit_link = i;
    soc = std::clamp(pre_clamp, 0.0, 1.0);
    trace.soc.push_back(soc);
  }
  return trace;
}

SocTrace Predictor::track_soc(const MacroTrip& trip, const VehicleSpec& vehicle,
                              double initial_soc, double threshold) {
  const PredictResult pred = predict_links(trip, vehicle);
  return soc_from_predictions(pred.energy_wh, vehicle.battery_capacity_wh, initial_soc, threshold);
}

SocTrace Predictor::track_soc(const MacroTrip& trip, double initial_soc, double threshold) {
  return track_soc(trip, trip.vehicle, initial_soc, threshold);
}

}  // namespace evlink

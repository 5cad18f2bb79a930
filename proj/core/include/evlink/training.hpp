/*
 * Copyright (c) The evlink Project Contributors
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "evlink/loss.hpp"
#include "evlink/metrics.hpp"
#include "evlink/model.hpp"

namespace evlink {

struct TrainConfig {
  int epochs = 60;
  double base_lr = 1e-3;       // schedule numerator; decays as epoch^(-1/2)
  std::size_t batch_cap = kBatchCap;
  double dropout_rate = kHeadDropoutRate;
  std::uint64_t seed = 1;
  int checkpoint_every = 0;    // epochs between periodic checkpoints, 0 = best only
  int early_stop_patience = 10;  // epochs without validation trip-MAAPE improvement
  double clip_norm = 0.0;      // global gradient-norm clip, 0 disables
  int threads = 1;
  double divergence_threshold = 1e12;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  LossBreakdown train_loss;
  double val_trip_maape = 0.0;
  double val_link_maape = 0.0;
  double val_trip_rmse = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  ModelParams params;       // best-validation checkpoint
  ModelParams last_params;  // parameters after the final epoch
  Normalizer normalizer;
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  double best_val_trip_maape = 0.0;
  int epochs_run = 0;
};

/// State needed to continue a run bitwise-identically (single-worker).
struct ResumeState {
  ModelParams params;
  Normalizer normalizer;
  int next_epoch = 1;
  int best_epoch = 0;
  double best_val_trip_maape = 0.0;
  ModelParams best_params;
};

/// Called after every epoch with the record and the current parameters
/// (for periodic checkpointing).
using EpochCallback = std::function<void(const EpochRecord&, const ModelParams&)>;

/// SGD without momentum over exact-length bucketed batches. Deterministic
/// for a fixed seed in single-worker (threads=1) execution: every RNG
/// stream is derived from (seed, epoch, batch) counters, never carried.
/// Throws DivergenceError when a batch loss is non-finite or exceeds the
/// divergence threshold.
TrainResult train(const TrainConfig& config, const std::vector<MacroTrip>& train_set,
                  const std::vector<MacroTrip>& validation_set,
                  const ResumeState* resume = nullptr, const EpochCallback& on_epoch = nullptr);

/// Infer-mode forward over labeled trips -> full metrics report.
MetricsReport evaluate_split(const ModelParams& params, const Normalizer& normalizer,
                             const std::vector<MacroTrip>& trips);

/// Per-trip evaluations (used by reports and metrics).
std::vector<TripEval> predict_split(const ModelParams& params, const Normalizer& normalizer,
                                    const std::vector<MacroTrip>& trips);

/// One SGD step: params <- params - lr * grads, elementwise. Returns the
/// pre-clip global gradient norm. clip_norm <= 0 disables clipping.
double sgd_step(ModelParams& params, const ModelParams& grads, double lr, double clip_norm);

/// Seeded 80/10/10 split by trip. Order within splits follows the shuffle.
struct DatasetSplit {
  std::vector<MacroTrip> train;
  std::vector<MacroTrip> validation;
  std::vector<MacroTrip> test;
};
DatasetSplit split_dataset(std::vector<MacroTrip> trips, std::uint64_t seed);

}  // namespace evlink

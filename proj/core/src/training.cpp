/*
 * Copyright (c) The evlink Project Contributors
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#include "evlink/training.hpp"

#include <chrono>
#include <cmath>
#include <limits>

#include "evlink/common.hpp"

namespace evlink {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train config: epochs must be >= 1");
  if (!(base_lr > 0)) throw ConfigError("train config: base_lr must be > 0");
  if (batch_cap < 1) throw ConfigError("train config: batch_cap must be >= 1");
  if (dropout_rate < 0 || dropout_rate >= 1) {
    throw ConfigError("train config: dropout_rate must be in [0, 1)");
  }
  if (early_stop_patience < 0) throw ConfigError("train config: patience must be >= 0");
  if (clip_norm < 0) throw ConfigError("train config: clip_norm must be >= 0");
  if (threads < 1) throw ConfigError("train config: threads must be >= 1");
}

DatasetSplit split_dataset(std::vector<MacroTrip> trips, std::uint64_t seed) {
  if (trips.size() < 3) throw ConfigError("split: need at least 3 trips for 80/10/10");
  std::vector<std::size_t> order(trips.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed, "split");
  rng.shuffle(order.begin(), order.end());

  const std::size_t n = trips.size();
  const std::size_t n_val = std::max<std::size_t>(1, n / 10);
  const std::size_t n_test = std::max<std::size_t>(1, n / 10);
  const std::size_t n_train = n - n_val - n_test;

  DatasetSplit split;
  split.train.reserve(n_train);
  split.validation.reserve(n_val);
  split.test.reserve(n_test);
  for (std::size_t i = 0; i < n; ++i) {
    MacroTrip& t = trips[order[i]];
    if (i < n_train) split.train.push_back(std::move(t));
    else if (i < n_train + n_val) split.validation.push_back(std::move(t));
    else split.test.push_back(std::move(t));
  }
  return split;
}

double sgd_step(ModelParams& params, const ModelParams& grads, double lr, double clip_norm) {
  double sq = 0.0;
  grads.visit_learnable(
      [&](const std::string&, const auto& g) { sq += static_cast<double>(g.squaredNorm()); });
  const double norm = std::sqrt(sq);
  double scale = 1.0;
  if (clip_norm > 0.0 && norm > clip_norm) scale = clip_norm / norm;
  const float step = static_cast<float>(lr * scale);

  std::vector<std::pair<float*, std::size_t>> ps;
  params.visit_learnable([&](const std::string&, auto& m) {
    ps.emplace_back(m.data(), static_cast<std::size_t>(m.size()));
  });
  std::vector<std::pair<const float*, std::size_t>> gs;
  grads.visit_learnable([&](const std::string&, const auto& m) {
    gs.emplace_back(m.data(), static_cast<std::size_t>(m.size()));
  });
  for (std::size_t i = 0; i < ps.size(); ++i) {
    float* p = ps[i].first;
    const float* g = gs[i].first;
    for (std::size_t k = 0; k < ps[i].second; ++k) p[k] -= step * g[k];
  }
  return norm;
}

std::vector<TripEval> predict_split(const ModelParams& params, const Normalizer& normalizer,
                                    const std::vector<MacroTrip>& trips) {
  if (trips.empty()) throw ConfigError("predict_split: empty split");
  ModelCache cache;
  Rng rng(0);
  std::vector<TripEval> evals;
  evals.reserve(trips.size());
  for (const auto& trip : trips) {
    const auto T = static_cast<nn::Index>(trip.num_links());
    const Eigen::MatrixXf x = assemble(trip, trip.vehicle, normalizer).cast<float>();
    model_forward<float>(params, x, 1, T, nn::Mode::infer, rng, cache);
    const auto preds = cache.predictions();
    TripEval e;
    e.trip_id = trip.trip_id;
    if (trip.labels_wh) e.y_true = *trip.labels_wh;
    e.y_pred.resize(static_cast<std::size_t>(T));
    for (nn::Index t = 0; t < T; ++t) {
      e.y_pred[static_cast<std::size_t>(t)] = static_cast<double>(preds(t, 0));
    }
    evals.push_back(std::move(e));
  }
  return evals;
}

MetricsReport evaluate_split(const ModelParams& params, const Normalizer& normalizer,
                             const std::vector<MacroTrip>& trips) {
  if (trips.empty()) throw ConfigError("evaluate_split: empty split");
  for (const auto& t : trips) {
    if (!t.labels_wh) throw ConfigError("evaluate_split: trip " + t.trip_id + " is unlabeled");
  }
  return compute_metrics(predict_split(params, normalizer, trips));
}

TrainResult train(const TrainConfig& config, const std::vector<MacroTrip>& train_set,
                  const std::vector<MacroTrip>& validation_set, const ResumeState* resume,
                  const EpochCallback& on_epoch) {
  config.validate();
  if (train_set.empty() || validation_set.empty()) {
    throw ConfigError("train: empty training or validation split");
  }
  for (const auto& t : train_set) {
    if (!t.labels_wh) throw ConfigError("train: trip " + t.trip_id + " is unlabeled");
  }
  Eigen::setNbThreads(config.threads);

  TrainResult result;
  result.normalizer = resume ? resume->normalizer : Normalizer::fit(train_set);
  ModelParams params = resume ? resume->params
                              : init_params<float>(config.seed, FeatureSchema::current().hash);
  ModelParams best = resume ? resume->best_params : params;
  int best_epoch = resume ? resume->best_epoch : 0;
  double best_maape =
      resume ? resume->best_val_trip_maape : std::numeric_limits<double>::infinity();
  const int start_epoch = resume ? resume->next_epoch : 1;

  ModelParams grads;
  grads.allocate(params.input_dim());
  ModelCache cache;
  const std::vector<Bucket> buckets = bucket_by_length(train_set);

  for (int epoch = start_epoch; epoch <= config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = lr_schedule(epoch, config.base_lr);
    const std::vector<BatchPlan> plans = epoch_batches(
        buckets, fnv1a64("train.epoch", config.seed ^ static_cast<std::uint64_t>(epoch)),
        config.batch_cap);

    LossBreakdown epoch_loss;
    std::size_t trips_seen = 0;
    for (std::size_t i = 0; i < plans.size(); ++i) {
      Batch batch = build_batch<float>(plans[i], train_set, result.normalizer);
      const nn::Index B = batch.batch_size;
      const nn::Index T = batch.trip_length;
      Rng dropout_rng(config.seed, "train.dropout",
                      (static_cast<std::uint64_t>(epoch) << 32) | i);

      model_forward<float>(params, batch.features, B, T, nn::Mode::train, dropout_rng, cache,
                           &params, config.dropout_rate);
      const Eigen::Map<const Eigen::MatrixXf> labels(batch.labels.data(), B * T, 1);
      nn::Mat<float> dpreds;
      const LossBreakdown lb =
          composite_loss_backward<float>(cache.predictions(), labels, B, T, dpreds);
      if (!std::isfinite(lb.total) || lb.total > config.divergence_threshold) {
        throw DivergenceError("train: loss " + std::to_string(lb.total) + " at epoch " +
                              std::to_string(epoch) + " batch " + std::to_string(i));
      }
      grads.set_zero();
      model_backward<float>(params, batch.features, B, T, cache, dpreds, grads);
      sgd_step(params, grads, lr, config.clip_norm);

      const auto w = static_cast<double>(B);
      epoch_loss.cumulative += lb.cumulative * w;
      epoch_loss.trip += lb.trip * w;
      epoch_loss.link += lb.link * w;
      epoch_loss.total += lb.total * w;
      trips_seen += static_cast<std::size_t>(B);
    }
    const double inv = trips_seen > 0 ? 1.0 / static_cast<double>(trips_seen) : 0.0;
    epoch_loss.cumulative *= inv;
    epoch_loss.trip *= inv;
    epoch_loss.link *= inv;
    epoch_loss.total *= inv;

    const MetricsReport val = evaluate_split(params, result.normalizer, validation_set);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = epoch_loss;
    rec.val_trip_maape = val.trip.maape;
    rec.val_link_maape = val.link.maape;
    rec.val_trip_rmse = val.trip.rmse;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(rec);
    result.epochs_run = epoch;

    if (val.trip.maape < best_maape) {
      best_maape = val.trip.maape;
      best_epoch = epoch;
      best = params;
    }
    if (on_epoch) on_epoch(rec, params);
    if (config.early_stop_patience > 0 && best_epoch > 0 &&
        epoch - best_epoch >= config.early_stop_patience) {
      break;
    }
  }

  result.params = best_epoch > 0 ? best : params;
  result.last_params = params;
  result.best_epoch = best_epoch;
  result.best_val_trip_maape = best_maape;
  return result;
}

}  // namespace evlink

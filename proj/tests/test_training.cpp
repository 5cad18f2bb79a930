/*
 * Copyright (c) The evlink Project Contributors
 *
 * SPDX-License-Identifier: Apache-2.0
 */

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <set>

#include "evlink/oracle.hpp"
#include "evlink/training.hpp"

using namespace evlink;
using nn::Index;

namespace {

// Naive per-trip triple-loop reference for the composite loss; kept
// independent of the library's prefix-sum implementation.
LossBreakdown reference_loss(const Eigen::MatrixXd& preds, const Eigen::MatrixXd& labels,
                             Index B, Index T) {
  LossBreakdown out;
  for (Index b = 0; b < B; ++b) {
    double cum = 0.0;
    for (Index l = 0; l < T; ++l) {
      double partial = 0.0;
      for (Index t = 0; t <= l; ++t) {
        partial += labels(t * B + b, 0) - preds(t * B + b, 0);
      }
      cum += partial * partial;
    }
    out.cumulative += cum / static_cast<double>(T);

    double total = 0.0;
    for (Index t = 0; t < T; ++t) total += labels(t * B + b, 0) - preds(t * B + b, 0);
    out.trip += total * total;

    double link = 0.0;
    for (Index t = 0; t < T; ++t) {
      const double r = labels(t * B + b, 0) - preds(t * B + b, 0);
      link += r * r;
    }
    out.link += link / static_cast<double>(T);
  }
  out.cumulative /= static_cast<double>(B);
  out.trip /= static_cast<double>(B);
  out.link /= static_cast<double>(B);
  out.total = out.cumulative + out.trip + out.link;
  return out;
}

bool rel_close(double a, double b, double tol) {
  return std::abs(a - b) <= tol * std::max({std::abs(a), std::abs(b), 1.0});
}

}  // namespace

TEST_CASE("composite_loss: hand case T=2, residuals (1, -1)") {
  Eigen::MatrixXd preds(2, 1), labels(2, 1);
  labels << 1.0, -1.0;  // residual = label - pred
  preds << 0.0, 0.0;
  const LossBreakdown lb = composite_loss<double>(preds, labels, 1, 2);
  CHECK(lb.cumulative == 0.5);
  CHECK(lb.trip == 0.0);
  CHECK(lb.link == 1.0);
  CHECK(lb.total == 1.5);
}

TEST_CASE("composite_loss: perfect predictions are all-zero") {
  Eigen::MatrixXd preds(6, 1);
  preds << 3, 1, 4, 1, 5, 9;
  const LossBreakdown lb = composite_loss<double>(preds, preds, 2, 3);
  CHECK(lb.cumulative == 0.0);
  CHECK(lb.trip == 0.0);
  CHECK(lb.link == 0.0);
  CHECK(lb.total == 0.0);
}

TEST_CASE("composite_loss: T=1 degenerates to 3 r^2") {
  Eigen::MatrixXd preds(1, 1), labels(1, 1);
  preds << 2.0;
  labels << 5.0;  // r = 3
  const LossBreakdown lb = composite_loss<double>(preds, labels, 1, 1);
  CHECK(lb.cumulative == 9.0);
  CHECK(lb.trip == 9.0);
  CHECK(lb.link == 9.0);
  CHECK(lb.total == 27.0);
}

TEST_CASE("composite_loss: matches the triple-loop reference on random batches") {
  Rng rng(1);
  for (int rep = 0; rep < 25; ++rep) {
    const Index B = 1 + static_cast<Index>(rng.below(8));
    const Index T = 1 + static_cast<Index>(rng.below(20));
    Eigen::MatrixXd preds(B * T, 1), labels(B * T, 1);
    for (Index i = 0; i < B * T; ++i) {
      preds(i, 0) = rng.normal(0, 300);
      labels(i, 0) = rng.normal(0, 300);
    }
    const LossBreakdown fast = composite_loss<double>(preds, labels, B, T);
    const LossBreakdown ref = reference_loss(preds, labels, B, T);
    CHECK(rel_close(fast.cumulative, ref.cumulative, 1e-9));
    CHECK(rel_close(fast.trip, ref.trip, 1e-9));
    CHECK(rel_close(fast.link, ref.link, 1e-9));
    CHECK(rel_close(fast.total, ref.total, 1e-9));
  }
}

TEST_CASE("composite_loss: scale covariance, c^2 in every component") {
  Rng rng(2);
  const Index B = 3, T = 5;
  Eigen::MatrixXd preds(B * T, 1), labels(B * T, 1);
  for (Index i = 0; i < B * T; ++i) {
    preds(i, 0) = rng.normal(0, 10);
    labels(i, 0) = rng.normal(0, 10);
  }
  const LossBreakdown base = composite_loss<double>(preds, labels, B, T);
  const double c = 7.5;
  Eigen::MatrixXd preds_c = preds * c, labels_c = labels * c;
  const LossBreakdown scaled = composite_loss<double>(preds_c, labels_c, B, T);
  CHECK(rel_close(scaled.cumulative, c * c * base.cumulative, 1e-12));
  CHECK(rel_close(scaled.trip, c * c * base.trip, 1e-12));
  CHECK(rel_close(scaled.link, c * c * base.link, 1e-12));
}

TEST_CASE("composite_loss: C_trip equals T times the last summand of C_cum") {
  Rng rng(3);
  const Index B = 1, T = 7;
  Eigen::MatrixXd preds(T, 1), labels(T, 1);
  for (Index i = 0; i < T; ++i) {
    preds(i, 0) = rng.normal(0, 50);
    labels(i, 0) = rng.normal(0, 50);
  }
  const LossBreakdown lb = composite_loss<double>(preds, labels, B, T);
  // last summand of C_cum = S_T^2 / T = C_trip / T
  double s = 0.0;
  for (Index t = 0; t < T; ++t) s += labels(t, 0) - preds(t, 0);
  const double last_summand = s * s / static_cast<double>(T);
  CHECK(rel_close(lb.trip, last_summand * static_cast<double>(T), 1e-12));
}

TEST_CASE("composite_loss_backward: gradient matches finite differences") {
  Rng rng(4);
  const Index B = 2, T = 6;
  Eigen::MatrixXd preds(B * T, 1), labels(B * T, 1);
  for (Index i = 0; i < B * T; ++i) {
    preds(i, 0) = rng.normal(0, 20);
    labels(i, 0) = rng.normal(0, 20);
  }
  Eigen::MatrixXd dpreds;
  composite_loss_backward<double>(preds, labels, B, T, dpreds);
  for (Index i = 0; i < B * T; ++i) {
    const double h = 1e-5;
    const double saved = preds(i, 0);
    preds(i, 0) = saved + h;
    const double up = composite_loss<double>(preds, labels, B, T).total;
    preds(i, 0) = saved - h;
    const double down = composite_loss<double>(preds, labels, B, T).total;
    preds(i, 0) = saved;
    const double numeric = (up - down) / (2 * h);
    CHECK(rel_close(dpreds(i, 0), numeric, 1e-6));
  }
}

TEST_CASE("lr_schedule: epoch^(-1/2) decay from 0.001") {
  CHECK(lr_schedule(1) == 0.001);
  CHECK(lr_schedule(4) == doctest::Approx(0.0005).epsilon(1e-15));
  CHECK(lr_schedule(100) == doctest::Approx(0.0001).epsilon(1e-15));
  CHECK_THROWS_AS(lr_schedule(0), std::invalid_argument);
}

TEST_CASE("sgd_step: params move by exactly -lr * grad, elementwise") {
  ModelParams params = init_params<float>(5, 0);
  ModelParams grads;
  grads.allocate(kFeatureDim);
  Rng rng(6);
  grads.visit_learnable([&](const std::string&, auto& g) {
    for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = static_cast<float>(rng.normal());
  });
  ModelParams before = params;
  const double lr = 3e-3;
  sgd_step(params, grads, lr, 0.0);

  std::vector<const float*> bp, gp;
  before.visit_learnable([&](const std::string&, const auto& m) { bp.push_back(m.data()); });
  grads.visit_learnable([&](const std::string&, const auto& m) { gp.push_back(m.data()); });
  std::size_t gi = 0;
  const float step = static_cast<float>(lr);
  params.visit_learnable([&](const std::string&, const auto& m) {
    const float* b = bp[gi];
    const float* g = gp[gi];
    ++gi;
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      const float expected = b[i] - step * g[i];
      CHECK(m.data()[i] == expected);
    }
  });
}

TEST_CASE("sgd_step: global-norm clipping caps the step") {
  ModelParams params = init_params<float>(5, 0);
  ModelParams grads;
  grads.allocate(kFeatureDim);
  grads.set_zero();
  grads.head[3].b(0) = 300.0f;  // single huge component: norm 300
  ModelParams before = params;
  const double norm = sgd_step(params, grads, 1.0, 3.0);
  CHECK(norm == doctest::Approx(300.0));
  // step = lr * clip/norm * g = 1.0 * (3/300) * 300 = 3
  CHECK(params.head[3].b(0) == doctest::Approx(before.head[3].b(0) - 3.0f));
}

TEST_CASE("split_dataset: 80/10/10 disjoint by trip id") {
  GeneratorConfig cfg;
  cfg.trip_count = 100;
  const auto ds = generate_dataset(cfg, 31);
  const DatasetSplit split = split_dataset(ds.trips, 7);
  CHECK(split.train.size() == 80);
  CHECK(split.validation.size() == 10);
  CHECK(split.test.size() == 10);
  std::set<std::string> ids;
  for (const auto& t : split.train) ids.insert(t.trip_id);
  for (const auto& t : split.validation) ids.insert(t.trip_id);
  for (const auto& t : split.test) ids.insert(t.trip_id);
  CHECK(ids.size() == 100);
}

TEST_CASE("train: loss decreases on a small synthetic set") {
  GeneratorConfig cfg;
  cfg.trip_count = 50;
  cfg.route.min_links = 2;
  cfg.route.max_links = 6;
  const auto ds = generate_dataset(cfg, 41);
  std::vector<MacroTrip> train_set(ds.trips.begin(), ds.trips.begin() + 40);
  std::vector<MacroTrip> val_set(ds.trips.begin() + 40, ds.trips.end());

  TrainConfig config;
  config.epochs = 5;
  config.seed = 3;
  config.clip_norm = 200.0;
  config.early_stop_patience = 0;
  const TrainResult result = train(config, train_set, val_set);
  REQUIRE(result.history.size() == 5);

  // monotone decreasing trend, one non-monotone epoch allowed
  int violations = 0;
  for (std::size_t i = 1; i < result.history.size(); ++i) {
    if (result.history[i].train_loss.total > result.history[i - 1].train_loss.total) {
      ++violations;
    }
  }
  CHECK(violations <= 1);
  CHECK(result.history.back().train_loss.total < result.history.front().train_loss.total);
}

TEST_CASE("train: deterministic for a fixed seed in single-worker mode") {
  GeneratorConfig cfg;
  cfg.trip_count = 24;
  cfg.route.max_links = 5;
  const auto ds = generate_dataset(cfg, 43);
  std::vector<MacroTrip> train_set(ds.trips.begin(), ds.trips.begin() + 20);
  std::vector<MacroTrip> val_set(ds.trips.begin() + 20, ds.trips.end());

  TrainConfig config;
  config.epochs = 2;
  config.seed = 11;
  config.threads = 1;
  config.clip_norm = 200.0;
  const TrainResult a = train(config, train_set, val_set);
  const TrainResult b = train(config, train_set, val_set);

  std::vector<const float*> pa, pb;
  std::vector<std::size_t> sizes;
  a.last_params.visit_learnable([&](const std::string&, const auto& m) {
    pa.push_back(m.data());
    sizes.push_back(static_cast<std::size_t>(m.size()));
  });
  b.last_params.visit_learnable([&](const std::string&, const auto& m) { pb.push_back(m.data()); });
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(std::memcmp(pa[i], pb[i], sizeof(float) * sizes[i]) == 0);
  }
}

TEST_CASE("train: resuming from an epoch boundary reproduces the straight run") {
  GeneratorConfig cfg;
  cfg.trip_count = 24;
  cfg.route.max_links = 5;
  const auto ds = generate_dataset(cfg, 47);
  std::vector<MacroTrip> train_set(ds.trips.begin(), ds.trips.begin() + 20);
  std::vector<MacroTrip> val_set(ds.trips.begin() + 20, ds.trips.end());

  TrainConfig config;
  config.epochs = 4;
  config.seed = 13;
  config.clip_norm = 200.0;
  config.early_stop_patience = 0;
  const TrainResult straight = train(config, train_set, val_set);

  TrainConfig half = config;
  half.epochs = 2;
  const TrainResult first_half = train(half, train_set, val_set);
  ResumeState resume;
  resume.params = first_half.last_params;
  resume.normalizer = first_half.normalizer;
  resume.next_epoch = 3;
  resume.best_epoch = first_half.best_epoch;
  resume.best_val_trip_maape = first_half.best_val_trip_maape;
  resume.best_params = first_half.params;
  const TrainResult resumed = train(config, train_set, val_set, &resume);

  std::vector<const float*> pa, pb;
  std::vector<std::size_t> sizes;
  straight.last_params.visit_learnable([&](const std::string&, const auto& m) {
    pa.push_back(m.data());
    sizes.push_back(static_cast<std::size_t>(m.size()));
  });
  resumed.last_params.visit_learnable(
      [&](const std::string&, const auto& m) { pb.push_back(m.data()); });
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(std::memcmp(pa[i], pb[i], sizeof(float) * sizes[i]) == 0);
  }
}

TEST_CASE("train: divergence guard aborts on unclipped Wh-scale gradients") {
  GeneratorConfig cfg;
  cfg.trip_count = 30;
  cfg.route.min_links = 20;
  cfg.route.max_links = 30;
  cfg.route.max_length_m = 2400;
  auto ds = generate_dataset(cfg, 53);
  // inflate labels to force the quadratic loss over the guard
  for (auto& t : ds.trips) {
    for (auto& l : *t.labels_wh) l *= 1e4;
  }
  std::vector<MacroTrip> train_set(ds.trips.begin(), ds.trips.begin() + 25);
  std::vector<MacroTrip> val_set(ds.trips.begin() + 25, ds.trips.end());

  TrainConfig config;
  config.epochs = 3;
  config.seed = 1;
  config.clip_norm = 0.0;  // default: no clipping, guard substitutes
  CHECK_THROWS_AS(train(config, train_set, val_set), DivergenceError);
}

TEST_CASE("evaluate_split: rejects empty and unlabeled input") {
  GeneratorConfig cfg;
  cfg.trip_count = 5;
  auto ds = generate_dataset(cfg, 59);
  const Normalizer norm = Normalizer::fit(ds.trips);
  const ModelParams params = init_params<float>(1, FeatureSchema::current().hash);
  CHECK_THROWS_AS(evaluate_split(params, norm, {}), ConfigError);
  ds.trips[2].labels_wh.reset();
  CHECK_THROWS_AS(evaluate_split(params, norm, ds.trips), ConfigError);
}

TEST_CASE("evaluate_split: report covers the whole split") {
  GeneratorConfig cfg;
  cfg.trip_count = 8;
  const auto ds = generate_dataset(cfg, 61);
  const Normalizer norm = Normalizer::fit(ds.trips);
  const ModelParams params = init_params<float>(1, FeatureSchema::current().hash);
  const MetricsReport r = evaluate_split(params, norm, ds.trips);
  CHECK(r.trip_count == 8);
  std::size_t links = 0;
  for (const auto& t : ds.trips) links += t.num_links();
  CHECK(r.link_count == links);
}

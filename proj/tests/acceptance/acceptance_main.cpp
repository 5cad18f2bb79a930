/*
 * Copyright (c) The evlink Project Contributors
 *
 * SPDX-License-Identifier: Apache-2.0
 */

// Acceptance suite: one pass/fail line per criterion. Run with no
// arguments for the full suite or with criterion numbers to run a subset,
// e.g. `acceptance 1 2 3`. Exit code is the number of failed criteria.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>
#include <vector>

#include "evlink/artifact.hpp"
#include "evlink/inference.hpp"
#include "evlink/oracle.hpp"
#include "evlink/training.hpp"
#include "model_fd.hpp"

using namespace evlink;
using nn::Index;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// Desk-scale training configuration (criterion 4). The learning-rate
// schedule, optimizer, batch cap and loss come from the library; clipping
// uses the exposed optional flag.

constexpr std::uint64_t kDeskSeed = 20260808;
constexpr std::size_t kDeskTripCount = 5000;
constexpr int kDeskEpochs = 60;
constexpr double kDeskClipNorm = 300.0;
constexpr int kDeskPatience = 12;
constexpr int kDeskThreads = 2;

GeneratorConfig desk_generator_config() {
  GeneratorConfig cfg;
  cfg.trip_count = kDeskTripCount;
  cfg.route.min_links = 1;
  cfg.route.max_links = 40;
  cfg.class_mix = {{"compact", 0.4}, {"midsize", 0.4}, {"suv", 0.2}};
  return cfg;
}

/// Results shared between criteria 4 and 5.
struct DeskRun {
  bool ran = false;
  bool trained_ok = false;
  double wall_seconds = 0.0;
  MetricsReport test_report;
  TrainResult result;
  DatasetSplit split;
};

DeskRun g_desk;

void run_desk_training(std::ostream& log) {
  if (g_desk.ran) return;
  g_desk.ran = true;
  const auto t0 = Clock::now();
  log << "  generating " << kDeskTripCount << " trips..." << std::flush;
  GeneratedDataset ds = generate_dataset(desk_generator_config(), kDeskSeed);
  log << " done. training..." << std::endl;

  g_desk.split = split_dataset(std::move(ds.trips), kDeskSeed);
  TrainConfig cfg;
  cfg.epochs = kDeskEpochs;
  cfg.seed = kDeskSeed;
  cfg.clip_norm = kDeskClipNorm;
  cfg.early_stop_patience = kDeskPatience;
  cfg.threads = kDeskThreads;

  try {
    g_desk.result = train(cfg, g_desk.split.train, g_desk.split.validation, nullptr,
                          [&](const EpochRecord& rec, const ModelParams&) {
                            log << "  epoch " << rec.epoch << " lr " << rec.lr << " train "
                                << rec.train_loss.total << " val trip MAAPE "
                                << rec.val_trip_maape << " (" << rec.seconds << " s)"
                                << std::endl;
                          });
    g_desk.test_report =
        evaluate_split(g_desk.result.params, g_desk.result.normalizer, g_desk.split.test);
    g_desk.trained_ok = true;
  } catch (const std::exception& e) {
    log << "  training aborted: " << e.what() << std::endl;
  }
  g_desk.wall_seconds = seconds_since(t0);
}

// ---------------------------------------------------------------------------

bool criterion_1_gradient_oracle(std::ostream& log) {
  const auto t0 = Clock::now();
  GeneratorConfig cfg;
  cfg.trip_count = 8;
  cfg.route.min_links = 6;
  cfg.route.max_links = 6;
  // Short, low-energy links keep the loss near 1e3 so the central
  // difference at step 1e-4 stays well clear of 64-bit roundoff; the 1e-6
  // absolute floor would otherwise sit at the noise level of a 1e6-scale
  // loss.
  cfg.route.max_length_m = 220.0;
  cfg.class_mix = {{"compact", 1.0}};
  const GeneratedDataset ds = generate_dataset(cfg, 11);
  const Normalizer norm = Normalizer::fit(ds.trips);

  BatchPlan plan;
  plan.trip_length = 6;
  plan.members = {0, 1};
  const BatchT<double> batch = build_batch<double>(plan, ds.trips, norm);

  auto params = init_params<double>(77, FeatureSchema::current().hash);
  Rng noise(78);
  params.visit_learnable([&](const std::string& name, auto& m) {
    if (name.ends_with(".b") || name.ends_with(".beta")) {
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] += 0.02 * noise.normal();
    }
  });

  nn::Mat<double> labels(batch.labels.size(), 1);
  for (Eigen::Index i = 0; i < batch.labels.size(); ++i) labels(i, 0) = batch.labels(i);

  const auto reports = testing::check_model_gradients(
      params, batch.features, labels, batch.batch_size, batch.trip_length,
      /*samples_per_group=*/6, /*step=*/1e-4, /*rel_tol=*/1e-4, /*abs_floor=*/1e-6, 79);

  int failures = 0, checked = 0, kinks = 0;
  double worst = 0.0;
  std::string worst_group;
  for (const auto& rep : reports) {
    checked += rep.checked;
    kinks += rep.kinks;
    failures += rep.failures;
    if (rep.failures > 0) log << "  group " << rep.name << ": " << rep.failures << " failures\n";
    if (rep.worst_abs_err > worst) {
      worst = rep.worst_abs_err;
      worst_group = rep.name;
    }
  }
  const double secs = seconds_since(t0);
  log << "  " << reports.size() << " parameter groups, " << checked
      << " coordinates checked, " << kinks << " kink resamples, worst |err| " << worst << " ("
      << worst_group << "), " << secs << " s\n";
  return failures == 0 && checked >= static_cast<int>(reports.size()) && secs < 300.0;
}

LossBreakdown reference_loss_triple_loop(const Eigen::MatrixXd& preds,
                                         const Eigen::MatrixXd& labels, Index B, Index T) {
  LossBreakdown out;
  for (Index b = 0; b < B; ++b) {
    double cum = 0.0;
    for (Index l = 0; l < T; ++l) {
      double partial = 0.0;
      for (Index t = 0; t <= l; ++t) partial += labels(t * B + b, 0) - preds(t * B + b, 0);
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

bool criterion_2_loss_oracle(std::ostream& log) {
  Rng rng(21);
  auto close = [](double a, double b) {
    return std::abs(a - b) <= 1e-9 * std::max({std::abs(a), std::abs(b), 1.0});
  };
  int bad = 0;
  for (int rep = 0; rep < 100; ++rep) {
    const Index B = 1 + static_cast<Index>(rng.below(8));
    const Index T = 1 + static_cast<Index>(rng.below(20));
    Eigen::MatrixXd preds(B * T, 1), labels(B * T, 1);
    for (Index i = 0; i < B * T; ++i) {
      preds(i, 0) = rng.normal(0, 500);
      labels(i, 0) = rng.normal(0, 500);
    }
    const LossBreakdown fast = composite_loss<double>(preds, labels, B, T);
    const LossBreakdown ref = reference_loss_triple_loop(preds, labels, B, T);
    if (!close(fast.cumulative, ref.cumulative) || !close(fast.trip, ref.trip) ||
        !close(fast.link, ref.link) || !close(fast.total, ref.total)) {
      ++bad;
    }
  }

  Eigen::MatrixXd preds(2, 1), labels(2, 1);
  labels << 1.0, -1.0;
  preds << 0.0, 0.0;
  const LossBreakdown hand = composite_loss<double>(preds, labels, 1, 2);
  const bool hand_ok = hand.cumulative == 0.5 && hand.trip == 0.0 && hand.link == 1.0;
  log << "  100 random batches, " << bad << " mismatches; hand case ("
      << hand.cumulative << ", " << hand.trip << ", " << hand.link << ")\n";
  return bad == 0 && hand_ok;
}

bool criterion_3_metric_properties(std::ostream& log) {
  constexpr double kHalfPi = 1.5707963267948966;
  Rng rng(31);
  bool bounded = true;
  for (int i = 0; i < 100000; ++i) {
    const double v = aape(rng.normal(0, 1e4), rng.normal(0, 1e7));
    bounded = bounded && v >= 0.0 && v <= kHalfPi;
  }

  std::vector<TripEval> evals(1000);
  for (std::size_t i = 0; i < evals.size(); ++i) {
    const double y = 100 + 1000 * rng.uniform();
    evals[i].trip_id = "t";
    evals[i].y_true = {y};
    evals[i].y_pred = {y * (1 + 0.05 * rng.normal())};
  }
  const double base = compute_metrics(evals).trip.maape;
  evals[123].y_pred = {evals[123].y_true[0] * 1e6};
  const double corrupted = compute_metrics(evals).trip.maape;
  const bool robust = std::abs(corrupted - base) <= kHalfPi / 1000.0;

  bool taylor = true;
  for (int i = -100; i <= 100; ++i) {
    const double x = i * 1e-4;
    taylor = taylor && std::abs(std::atan(x) - x) <= std::abs(x * x * x) + 1e-18;
  }
  log << "  bound ok " << bounded << ", robustness shift " << std::abs(corrupted - base)
      << " <= " << kHalfPi / 1000.0 << ", taylor ok " << taylor << "\n";
  return bounded && robust && taylor;
}

bool criterion_4_desk_scale_learning(std::ostream& log) {
  run_desk_training(log);
  if (!g_desk.trained_ok) return false;
  const MetricsReport& r = g_desk.test_report;
  log << "  wall " << g_desk.wall_seconds << " s, best epoch " << g_desk.result.best_epoch
      << "\n  trip MAAPE " << r.trip.maape << " (<= 0.10), link MAAPE " << r.link.maape
      << " (<= 0.35), trip R2 " << r.r2_trip << " (>= 0.95), network error "
      << r.network_rel_error << " (<= 0.02)\n";
  return g_desk.wall_seconds <= 7200.0 && r.trip.maape <= 0.10 && r.link.maape <= 0.35 &&
         r.r2_trip >= 0.95 && r.network_rel_error <= 0.02;
}

bool criterion_5_residual_structure(std::ostream& log) {
  run_desk_training(log);
  if (!g_desk.trained_ok) return false;

  const std::vector<TripEval> evals =
      predict_split(g_desk.result.params, g_desk.result.normalizer, g_desk.split.test);
  std::vector<double> link_aape;
  for (const auto& e : evals) {
    for (std::size_t t = 0; t < e.y_true.size(); ++t) {
      link_aape.push_back(aape(e.y_true[t], e.y_pred[t]));
    }
  }
  const double mean =
      std::accumulate(link_aape.begin(), link_aape.end(), 0.0) / link_aape.size();
  const double median = percentile(link_aape, 50);
  const bool skewed = median < mean;

  const MetricsReport& r = g_desk.test_report;
  // indices 1, 2, 3 = percentiles 50, 75, 90
  const bool ordered = r.aape_percentiles_trip[1] < r.aape_percentiles_link[1] &&
                       r.aape_percentiles_trip[2] < r.aape_percentiles_link[2] &&
                       r.aape_percentiles_trip[3] < r.aape_percentiles_link[3];
  log << "  link AAPE median " << median << " < mean " << mean << ": " << skewed
      << "; trip p50/75/90 (" << r.aape_percentiles_trip[1] << ", "
      << r.aape_percentiles_trip[2] << ", " << r.aape_percentiles_trip[3] << ") below link ("
      << r.aape_percentiles_link[1] << ", " << r.aape_percentiles_link[2] << ", "
      << r.aape_percentiles_link[3] << "): " << ordered << "\n";
  return skewed && ordered;
}

bool criterion_6_overfit_sanity(std::ostream& log) {
  GeneratorConfig cfg;
  cfg.trip_count = 1;
  cfg.route.min_links = 8;
  cfg.route.max_links = 8;
  const MacroTrip trip = generate_dataset(cfg, 66).trips[0];

  std::vector<MacroTrip> train_set;
  for (int i = 0; i < 32; ++i) {
    MacroTrip copy = trip;
    copy.trip_id = "copy-" + std::to_string(i);
    train_set.push_back(std::move(copy));
  }
  TrainConfig tc;
  tc.epochs = 200;
  tc.seed = 6;
  tc.clip_norm = kDeskClipNorm;
  tc.dropout_rate = 0.0;
  tc.early_stop_patience = 0;
  tc.threads = kDeskThreads;
  const TrainResult result = train(tc, train_set, {trip});

  const std::vector<TripEval> evals =
      predict_split(result.params, result.normalizer, {trip});
  double y = 0, yhat = 0;
  for (std::size_t t = 0; t < evals[0].y_true.size(); ++t) {
    y += evals[0].y_true[t];
    yhat += evals[0].y_pred[t];
  }
  const double ape = std::abs((y - yhat) / y);
  log << "  trip true " << y << " Wh, predicted " << yhat << " Wh, APE " << 100 * ape << "%\n";
  return ape < 0.01;
}

bool criterion_7_oracle_conservation(std::ostream& log) {
  const auto t0 = Clock::now();
  std::size_t bad = 0;
  double worst = 0.0;
  for (std::uint64_t i = 0; i < 10000; ++i) {
    RouteConfig rc;
    rc.min_links = 1;
    rc.max_links = 30;
    const RouteSkeleton route = synthesize_route(fnv1a64("acc7.r", i), rc);
    const VehicleSpec vehicle =
        synthesize_vehicle(fnv1a64("acc7.v", i),
                           static_cast<VehicleClass>(i % kNumVehicleClasses));
    const MicroTrace trace = synthesize_trip(fnv1a64("acc7.t", i), route, vehicle);
    const std::vector<double> labels = simulate_energy(trace, vehicle);
    const double total = std::accumulate(labels.begin(), labels.end(), 0.0);

    double joules = 0.0;
    for (std::size_t k = 0; k + 1 < trace.speed_mps.size(); ++k) {
      joules += battery_power_w(trace.speed_mps[k],
                                trace.speed_mps[k + 1] - trace.speed_mps[k], vehicle);
    }
    const double integral = joules / 3600.0;
    const double rel = std::abs(total - integral) / std::max(1.0, std::abs(integral));
    worst = std::max(worst, rel);
    if (rel > 1e-9) ++bad;
  }
  log << "  10000 trips, " << bad << " violations, worst rel err " << worst << " ("
      << seconds_since(t0) << " s)\n";
  return bad == 0;
}

bool criterion_8_inference_latency(std::ostream& log) {
  Eigen::setNbThreads(1);
  GeneratorConfig cfg;
  cfg.trip_count = 1;
  cfg.route.min_links = 100;
  cfg.route.max_links = 100;
  cfg.route.max_links = 100;
  const MacroTrip trip = generate_dataset(cfg, 88).trips[0];

  GeneratorConfig fit_cfg;
  fit_cfg.trip_count = 50;
  fit_cfg.route.max_links = 40;
  const auto fit_ds = generate_dataset(fit_cfg, 89);
  ModelArtifact artifact;
  artifact.params = init_params<float>(88, FeatureSchema::current().hash);
  artifact.normalizer = Normalizer::fit(fit_ds.trips);
  artifact.provenance.max_trained_trip_length = 40;
  Predictor predictor = Predictor::from_artifact(std::move(artifact));

  for (int i = 0; i < 10; ++i) predictor.predict_links(trip);  // warm-up

  std::vector<double> ms(1000);
  for (auto& m : ms) {
    const auto t0 = Clock::now();
    predictor.predict_links(trip);
    m = 1000.0 * seconds_since(t0);
  }
  std::sort(ms.begin(), ms.end());
  const double median = (ms[499] + ms[500]) / 2.0;
  const double p99 = ms[989];
  log << "  T=100, 1000 calls, 1 thread: median " << median << " ms (<= 50), p99 " << p99
      << " ms (<= 100), min " << ms.front() << ", max " << ms.back() << "\n";
  return median <= 50.0 && p99 <= 100.0;
}

bool criterion_9_runtime_parity(std::ostream& log) {
  GeneratorConfig cfg;
  cfg.trip_count = 100;
  cfg.route.min_links = 1;
  cfg.route.max_links = 25;
  const auto ds = generate_dataset(cfg, 99);
  const Normalizer norm = Normalizer::fit(ds.trips);
  ModelParams params = init_params<float>(91, FeatureSchema::current().hash);

  const auto path = std::filesystem::temp_directory_path() / "evlink_acc9.evlk";
  Provenance prov;
  prov.max_trained_trip_length = 25;
  save_model(params, norm, prov, path);
  Predictor predictor = Predictor::load(path);

  auto ulps = [](float a, float b) {
    if (a == b) return std::int64_t(0);
    std::int32_t ia, ib;
    std::memcpy(&ia, &a, 4);
    std::memcpy(&ib, &b, 4);
    if (ia < 0) ia = std::numeric_limits<std::int32_t>::min() - ia;
    if (ib < 0) ib = std::numeric_limits<std::int32_t>::min() - ib;
    return std::abs(static_cast<std::int64_t>(ia) - static_cast<std::int64_t>(ib));
  };

  ModelCache cache;
  Rng rng(0);
  std::int64_t worst = 0;
  for (const auto& trip : ds.trips) {
    const auto T = static_cast<Index>(trip.num_links());
    const Eigen::MatrixXf x = assemble(trip, trip.vehicle, norm).cast<float>();
    model_forward<float>(params, x, 1, T, nn::Mode::infer, rng, cache);
    const PredictResult out = predictor.predict_links(trip);
    for (Index t = 0; t < T; ++t) {
      worst = std::max(worst, ulps(cache.predictions()(t, 0),
                                   static_cast<float>(out.energy_wh[static_cast<std::size_t>(t)])));
    }
  }
  std::filesystem::remove(path);
  log << "  100 trips, worst disagreement " << worst << " ulps (<= 4)\n";
  return worst <= 4;
}

bool criterion_10_bucketing(std::ostream& log) {
  GeneratorConfig cfg;
  cfg.trip_count = 1000;
  cfg.route.min_links = 1;
  cfg.route.max_links = 40;
  const auto ds = generate_dataset(cfg, 110);
  const Normalizer norm = Normalizer::fit(ds.trips);

  std::size_t expected_rows = 0;
  for (const auto& t : ds.trips) expected_rows += t.num_links();

  const auto buckets = bucket_by_length(ds.trips);
  const auto plans = epoch_batches(buckets, 7);
  std::size_t streamed = 0;
  std::set<std::size_t> seen;
  bool once = true;
  for (const auto& plan : plans) {
    const Batch batch = build_batch<float>(plan, ds.trips, norm);
    streamed += static_cast<std::size_t>(batch.features.rows());
    for (std::size_t idx : plan.members) once = once && seen.insert(idx).second;
  }
  log << "  streamed " << streamed << " rows, expected " << expected_rows << "; "
      << seen.size() << "/1000 trips exactly once: " << once << "\n";
  return streamed == expected_rows && seen.size() == 1000 && once;
}

struct Criterion {
  int id;
  const char* title;
  std::function<bool(std::ostream&)> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria = {
      {1, "gradient oracle (finite differences vs reverse mode)", criterion_1_gradient_oracle},
      {2, "loss oracle (triple-loop reference + hand case)", criterion_2_loss_oracle},
      {3, "metric properties (AAPE bound, robustness, Taylor)", criterion_3_metric_properties},
      {4, "desk-scale learning targets", criterion_4_desk_scale_learning},
      {5, "qualitative residual structure", criterion_5_residual_structure},
      {6, "overfit sanity (single trip, 200 epochs)", criterion_6_overfit_sanity},
      {7, "oracle conservation over 10000 trips", criterion_7_oracle_conservation},
      {8, "inference latency (T=100, 1000 calls)", criterion_8_inference_latency},
      {9, "runtime parity within 4 ulps", criterion_9_runtime_parity},
      {10, "bucketing: zero padding, full coverage", criterion_10_bucketing},
  };

  std::set<int> requested;
  for (int i = 1; i < argc; ++i) requested.insert(std::atoi(argv[i]));

  int failures = 0;
  for (const auto& c : criteria) {
    if (!requested.empty() && !requested.count(c.id)) continue;
    std::ostringstream log;
    bool ok = false;
    try {
      ok = c.run(log);
    } catch (const std::exception& e) {
      log << "  exception: " << e.what() << "\n";
    }
    std::cout << (ok ? "[PASS]" : "[FAIL]") << " criterion " << c.id << ": " << c.title << "\n"
              << log.str() << std::flush;
    if (!ok) ++failures;
  }
  std::cout << (failures == 0 ? "ACCEPTANCE: all criteria passed\n"
                              : "ACCEPTANCE: " + std::to_string(failures) + " criteria failed\n");
  return failures;
}

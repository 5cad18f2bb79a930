/*
 * Copyright (c) The evlink Project Contributors
 *
 * SPDX-License-Identifier: Apache-2.0
 */

// evlink: link-level EV energy pipeline driver.
//   generate  synthesize a labeled macroscopic dataset
//   train     fit the encoder-decoder on a dataset (80/10/10 split)
//   evaluate  metrics report for a trained model on a labeled dataset
//   predict   per-link energy for one trip (or --serve line mode)
//   soc       state-of-charge trace and charging flag for one trip
//
// Exit codes: 0 success, 2 config error, 3 schema mismatch, 4 divergence.

#include <sys/resource.h>

#include <chrono>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "evlink/artifact.hpp"
#include "evlink/dataset_io.hpp"
#include "evlink/inference.hpp"
#include "evlink/oracle.hpp"
#include "evlink/report.hpp"
#include "evlink/training.hpp"

using namespace evlink;
using json = nlohmann::json;

namespace {

std::string now_iso8601() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

long peak_rss_kb() {
  rusage usage{};
  getrusage(RUSAGE_SELF, &usage);
  return usage.ru_maxrss;
}

/// One JSON line per run, append-only.
void append_manifest(const std::filesystem::path& path, const std::string& subcommand,
                     const json& config, const json& inputs, const json& outputs,
                     std::uint64_t seed, double wall_ms) {
  json m;
  m["subcommand"] = subcommand;
  m["created"] = now_iso8601();
  m["config"] = config;
  m["inputs"] = inputs;
  m["outputs"] = outputs;
  m["seed"] = seed;
  m["feature_schema_hash"] = hex64(FeatureSchema::current().hash);
  m["model_format_version"] = kModelFormatVersion;
  m["wall_ms"] = wall_ms;
  m["peak_rss_kb"] = peak_rss_kb();
  std::ofstream out(path, std::ios::app);
  if (!out) throw IoError("cannot append manifest: " + path.string());
  out << m.dump() << '\n';
}

json generator_config_to_json(const GeneratorConfig& cfg) {
  return json{{"trip_count", cfg.trip_count},
              {"class_mix", cfg.class_mix},
              {"depart_time_lo_s", cfg.depart_time_lo_s},
              {"depart_time_hi_s", cfg.depart_time_hi_s},
              {"route",
               {{"min_links", cfg.route.min_links},
                {"max_links", cfg.route.max_links},
                {"min_length_m", cfg.route.min_length_m},
                {"max_length_m", cfg.route.max_length_m},
                {"min_stop_probability", cfg.route.min_stop_probability},
                {"max_stop_probability", cfg.route.max_stop_probability},
                {"length_skew", cfg.route.length_skew}}}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig cfg;
  if (j.contains("epochs")) cfg.epochs = j.at("epochs").get<int>();
  if (j.contains("batch_cap")) cfg.batch_cap = j.at("batch_cap").get<std::size_t>();
  if (j.contains("dropout_rate")) cfg.dropout_rate = j.at("dropout_rate").get<double>();
  if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("checkpoint_every")) cfg.checkpoint_every = j.at("checkpoint_every").get<int>();
  if (j.contains("early_stop_patience")) {
    cfg.early_stop_patience = j.at("early_stop_patience").get<int>();
  }
  if (j.contains("clip_norm")) cfg.clip_norm = j.at("clip_norm").get<double>();
  if (j.contains("threads")) cfg.threads = j.at("threads").get<int>();
  cfg.validate();
  return cfg;
}

json train_config_to_json(const TrainConfig& cfg) {
  return json{{"epochs", cfg.epochs},
              {"base_lr", cfg.base_lr},
              {"batch_cap", cfg.batch_cap},
              {"dropout_rate", cfg.dropout_rate},
              {"seed", cfg.seed},
              {"checkpoint_every", cfg.checkpoint_every},
              {"early_stop_patience", cfg.early_stop_patience},
              {"clip_norm", cfg.clip_norm},
              {"threads", cfg.threads}};
}

json summary_json(const DatasetSummary& s) { return json::parse(summary_to_json(s)); }

MacroTrip read_trip_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open trip file: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return trip_from_json(ss.str());
}

json predict_result_json(const MacroTrip& trip, const PredictResult& result) {
  json out;
  out["trip_id"] = trip.trip_id;
  out["energy_wh"] = result.energy_wh;
  double total = 0.0;
  for (double e : result.energy_wh) total += e;
  out["trip_total_wh"] = total;
  out["extrapolated"] = result.extrapolated;
  if (trip.labels_wh) {
    double truth = 0.0;
    for (double y : *trip.labels_wh) truth += y;
    out["trip_true_wh"] = truth;
    out["trip_ape"] = signed_ape(truth, total);
    out["trip_aape"] = aape(truth, total);
  }
  return out;
}

void write_history(const std::filesystem::path& path, const std::vector<EpochRecord>& history) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write history: " + path.string());
  out << "epoch\tlr\tloss_cumulative\tloss_trip\tloss_link\tloss_total\t"
         "val_trip_maape\tval_link_maape\tval_trip_rmse\tseconds\n";
  out.precision(12);
  for (const auto& r : history) {
    out << r.epoch << '\t' << r.lr << '\t' << r.train_loss.cumulative << '\t'
        << r.train_loss.trip << '\t' << r.train_loss.link << '\t' << r.train_loss.total << '\t'
        << r.val_trip_maape << '\t' << r.val_link_maape << '\t' << r.val_trip_rmse << '\t'
        << r.seconds << '\n';
  }
}

struct CheckpointPaths {
  std::filesystem::path dir;
  std::filesystem::path last() const { return dir / "last.evlk"; }
  std::filesystem::path best() const { return dir / "best.evlk"; }
  std::filesystem::path state() const { return dir / "state.json"; }
};

int cmd_generate(const std::string& config_path, const std::string& out_path,
                 std::uint64_t seed_flag, bool seed_given, const std::string& manifest_path) {
  const auto t0 = std::chrono::steady_clock::now();
  GeneratorConfig cfg;
  std::uint64_t seed = seed_given ? seed_flag : 1;
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw ConfigError("cannot open config: " + config_path);
    std::stringstream ss;
    ss << in.rdbuf();
    cfg = generator_config_from_json(ss.str());
    const json j = json::parse(ss.str());
    if (!seed_given && j.contains("seed")) seed = j.at("seed").get<std::uint64_t>();
  }
  const GeneratedDataset ds = generate_dataset(cfg, seed);
  write_dataset(out_path, ds.trips);
  const std::string summary = summary_to_json(ds.summary);
  const std::filesystem::path summary_path = out_path + ".summary.json";
  std::ofstream(summary_path) << summary << '\n';
  std::cout << summary << '\n';

  const std::filesystem::path manifest =
      manifest_path.empty() ? std::filesystem::path(out_path + ".manifest.jsonl")
                            : std::filesystem::path(manifest_path);
  const double wall_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  append_manifest(manifest, "generate", generator_config_to_json(cfg),
                  json::object(),
                  json{{"dataset", out_path},
                       {"dataset_hash", file_hash_hex(out_path)},
                       {"summary", summary_path.string()}},
                  seed, wall_ms);
  return 0;
}

int cmd_train(const std::string& data_path, const std::string& config_path,
              const std::string& out_dir, const std::string& resume_dir,
              const std::string& manifest_path) {
  const auto t0 = std::chrono::steady_clock::now();
  TrainConfig cfg;
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw ConfigError("cannot open config: " + config_path);
    json j;
    try {
      j = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ConfigError(std::string("train config parse error: ") + e.what());
    }
    cfg = train_config_from_json(j);
  }

  const std::vector<MacroTrip> all = read_dataset(data_path);
  const std::string dataset_hash = file_hash_hex(data_path);
  const DatasetSplit split = split_dataset(all, cfg.seed);

  std::filesystem::create_directories(out_dir);
  const CheckpointPaths ckpt{std::filesystem::path(out_dir) / "checkpoints"};

  std::size_t max_trained_len = 0;
  for (const auto& t : split.train) max_trained_len = std::max(max_trained_len, t.num_links());

  ResumeState resume;
  const ResumeState* resume_ptr = nullptr;
  if (!resume_dir.empty()) {
    const CheckpointPaths from{resume_dir};
    const ModelArtifact last = load_model(from.last());
    const ModelArtifact best = load_model(from.best());
    std::ifstream in(from.state());
    if (!in) throw ConfigError("missing checkpoint state: " + from.state().string());
    const json st = json::parse(in);
    resume.params = last.params;
    resume.normalizer = last.normalizer;
    resume.best_params = best.params;
    resume.next_epoch = st.at("last_epoch").get<int>() + 1;
    resume.best_epoch = st.at("best_epoch").get<int>();
    resume.best_val_trip_maape = st.at("best_val_trip_maape").get<double>();
    resume_ptr = &resume;
  }

  auto make_provenance = [&](const std::string& metrics) {
    Provenance p;
    p.training_seed = cfg.seed;
    p.dataset_hash = dataset_hash;
    p.max_trained_trip_length = max_trained_len;
    p.metrics_json = metrics;
    p.created = now_iso8601();
    return p;
  };

  // Track best-so-far for periodic checkpoints written from the callback.
  double cb_best = resume_ptr ? resume.best_val_trip_maape
                              : std::numeric_limits<double>::infinity();
  int cb_best_epoch = resume_ptr ? resume.best_epoch : 0;
  Normalizer* normalizer_slot = nullptr;  // filled after train() returns
  std::vector<EpochRecord> live_history;
  ModelParams cb_best_params;
  bool cb_have_best = false;
  if (resume_ptr) {
    cb_best_params = resume.best_params;
    cb_have_best = true;
  }

  Normalizer fitted;  // the callback needs the fitted normalizer to save
  bool fitted_ready = false;

  const EpochCallback on_epoch = [&](const EpochRecord& rec, const ModelParams& current) {
    live_history.push_back(rec);
    if (rec.val_trip_maape < cb_best) {
      cb_best = rec.val_trip_maape;
      cb_best_epoch = rec.epoch;
      cb_best_params = current;
      cb_have_best = true;
    }
    std::cout << "epoch " << rec.epoch << " lr " << rec.lr << " train_total "
              << rec.train_loss.total << " val_trip_maape " << rec.val_trip_maape << " ("
              << rec.seconds << " s)\n";
    if (cfg.checkpoint_every > 0 && rec.epoch % cfg.checkpoint_every == 0 && fitted_ready) {
      std::filesystem::create_directories(ckpt.dir);
      save_model(current, *normalizer_slot, make_provenance("{}"), ckpt.last());
      if (cb_have_best) {
        save_model(cb_best_params, *normalizer_slot, make_provenance("{}"), ckpt.best());
      }
      std::ofstream(ckpt.state()) << json{{"last_epoch", rec.epoch},
                                          {"best_epoch", cb_best_epoch},
                                          {"best_val_trip_maape", cb_best}}
                                         .dump()
                                  << '\n';
    }
  };

  // Fit the normalizer up front so checkpoints can embed it.
  fitted = resume_ptr ? resume.normalizer : Normalizer::fit(split.train);
  normalizer_slot = &fitted;
  fitted_ready = true;
  ResumeState seeded;
  if (!resume_ptr) {
    seeded.params = init_params<float>(cfg.seed, FeatureSchema::current().hash);
    seeded.normalizer = fitted;
    seeded.next_epoch = 1;
    seeded.best_epoch = 0;
    seeded.best_val_trip_maape = std::numeric_limits<double>::infinity();
    seeded.best_params = seeded.params;
    resume_ptr = &seeded;
  }

  const TrainResult result = train(cfg, split.train, split.validation, resume_ptr, on_epoch);

  // Final checkpoint state so training can always be continued.
  std::filesystem::create_directories(ckpt.dir);
  save_model(result.last_params, result.normalizer, make_provenance("{}"), ckpt.last());
  save_model(result.params, result.normalizer, make_provenance("{}"), ckpt.best());
  std::ofstream(ckpt.state()) << json{{"last_epoch", result.epochs_run},
                                      {"best_epoch", result.best_epoch},
                                      {"best_val_trip_maape", result.best_val_trip_maape}}
                                     .dump()
                              << '\n';

  const MetricsReport test_report =
      evaluate_split(result.params, result.normalizer, split.test);
  const std::string metrics_snapshot =
      report_to_json(test_report, FeatureSchema::current().hash, "");

  const std::filesystem::path model_path = std::filesystem::path(out_dir) / "model.evlk";
  save_model(result.params, result.normalizer, make_provenance(metrics_snapshot), model_path);
  write_history(std::filesystem::path(out_dir) / "history.tsv", result.history);
  {
    std::ofstream out(std::filesystem::path(out_dir) / "normalizer.json");
    out << result.normalizer.to_json() << '\n';
  }
  {
    std::ofstream out(std::filesystem::path(out_dir) / "feature_schema.json");
    out << FeatureSchema::current().to_json() << '\n';
  }

  const std::vector<TripEval> test_evals =
      predict_split(result.params, result.normalizer, split.test);
  emit_report(test_report, test_evals, std::filesystem::path(out_dir) / "eval_test",
              FeatureSchema::current().hash, file_hash_hex(model_path));

  std::cout << "best epoch " << result.best_epoch << " val trip MAAPE "
            << result.best_val_trip_maape << "\n"
            << "test trip MAAPE " << test_report.trip.maape << " link MAAPE "
            << test_report.link.maape << " R2 " << test_report.r2_trip << " network error "
            << test_report.network_rel_error << "\n";

  const std::filesystem::path manifest =
      manifest_path.empty() ? std::filesystem::path(out_dir) / "run_manifests.jsonl"
                            : std::filesystem::path(manifest_path);
  const double wall_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  append_manifest(manifest, "train", train_config_to_json(cfg),
                  json{{"dataset", data_path}, {"dataset_hash", dataset_hash}},
                  json{{"model", model_path.string()},
                       {"history", (std::filesystem::path(out_dir) / "history.tsv").string()},
                       {"eval_test", (std::filesystem::path(out_dir) / "eval_test").string()}},
                  cfg.seed, wall_ms);
  return 0;
}

int cmd_evaluate(const std::string& model_path, const std::string& data_path,
                 const std::string& out_dir, const std::string& manifest_path) {
  const auto t0 = std::chrono::steady_clock::now();
  const ModelArtifact artifact = load_model(model_path);
  const std::vector<MacroTrip> trips = read_dataset(data_path);
  const MetricsReport report = evaluate_split(artifact.params, artifact.normalizer, trips);
  const std::vector<TripEval> evals = predict_split(artifact.params, artifact.normalizer, trips);
  emit_report(report, evals, out_dir, FeatureSchema::current().hash, file_hash_hex(model_path));
  std::cout << report_to_json(report, FeatureSchema::current().hash, file_hash_hex(model_path))
            << '\n';

  const std::filesystem::path manifest =
      manifest_path.empty() ? std::filesystem::path(out_dir) / "run_manifests.jsonl"
                            : std::filesystem::path(manifest_path);
  const double wall_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  append_manifest(manifest, "evaluate", json::object(),
                  json{{"model", model_path},
                       {"model_hash", file_hash_hex(model_path)},
                       {"dataset", data_path},
                       {"dataset_hash", file_hash_hex(data_path)}},
                  json{{"report_dir", out_dir}}, artifact.provenance.training_seed, wall_ms);
  return 0;
}

int cmd_predict(const std::string& model_path, const std::string& trip_path, bool serve,
                const std::string& manifest_path) {
  const auto t0 = std::chrono::steady_clock::now();
  Predictor predictor = Predictor::load(model_path);
  json outputs = json::array();

  if (serve) {
    // Line-delimited request/response on standard streams: one JSON trip
    // per line in, one JSON result per line out. Malformed requests get an
    // error object; the stream stays up.
    std::string line;
    while (std::getline(std::cin, line)) {
      if (line.empty()) continue;
      try {
        const MacroTrip trip = trip_from_json(line);
        std::cout << predict_result_json(trip, predictor.predict_links(trip)).dump()
                  << std::endl;
      } catch (const std::exception& e) {
        std::cout << json{{"error", e.what()}}.dump() << std::endl;
      }
    }
  } else {
    const MacroTrip trip = read_trip_file(trip_path);
    const PredictResult result = predictor.predict_links(trip);
    std::cout << predict_result_json(trip, result).dump(2) << '\n';
  }

  const std::filesystem::path manifest =
      manifest_path.empty() ? std::filesystem::path(model_path + ".manifest.jsonl")
                            : std::filesystem::path(manifest_path);
  const double wall_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  append_manifest(manifest, "predict", json{{"serve", serve}},
                  json{{"model", model_path}, {"trip", serve ? "<stdin>" : trip_path}},
                  json::object(), predictor.artifact().provenance.training_seed, wall_ms);
  return 0;
}

int cmd_soc(const std::string& model_path, const std::string& trip_path, double initial_soc,
            double threshold, const std::string& manifest_path) {
  const auto t0 = std::chrono::steady_clock::now();
  Predictor predictor = Predictor::load(model_path);
  const MacroTrip trip = read_trip_file(trip_path);
  const SocTrace trace = predictor.track_soc(trip, initial_soc, threshold);

  json out;
  out["trip_id"] = trip.trip_id;
  out["initial_soc"] = trace.initial_soc;
  out["energy_wh"] = trace.energy_wh;
  out["soc"] = trace.soc;
  out["charge_needed"] = trace.charge_needed;
  if (trace.first_deficit_link) {
    out["first_deficit_link"] = *trace.first_deficit_link;
  } else {
    out["first_deficit_link"] = nullptr;
  }
  std::cout << out.dump(2) << '\n';

  const std::filesystem::path manifest =
      manifest_path.empty() ? std::filesystem::path(model_path + ".manifest.jsonl")
                            : std::filesystem::path(manifest_path);
  const double wall_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  append_manifest(manifest, "soc",
                  json{{"initial_soc", initial_soc}, {"threshold", threshold}},
                  json{{"model", model_path}, {"trip", trip_path}}, json::object(),
                  predictor.artifact().provenance.training_seed, wall_ms);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"evlink: link-level EV energy model pipeline"};
  app.require_subcommand(1);

  std::string manifest_path;
  app.add_option("--manifest", manifest_path, "override the run-manifest path (appended)");

  auto* gen = app.add_subcommand("generate", "synthesize a labeled dataset");
  std::string gen_config, gen_out;
  std::uint64_t gen_seed = 1;
  gen->add_option("--config", gen_config, "generator config JSON");
  gen->add_option("--out", gen_out, "output dataset path (.jsonl)")->required();
  auto* gen_seed_opt = gen->add_option("--seed", gen_seed, "root seed (overrides config)");

  auto* tr = app.add_subcommand("train", "train on a labeled dataset");
  std::string tr_data, tr_config, tr_out, tr_resume;
  tr->add_option("--data", tr_data, "dataset (.jsonl)")->required();
  tr->add_option("--config", tr_config, "train config JSON");
  tr->add_option("--out", tr_out, "output directory")->required();
  tr->add_option("--resume", tr_resume, "checkpoint directory to continue from");

  auto* ev = app.add_subcommand("evaluate", "metrics report on a labeled dataset");
  std::string ev_model, ev_data, ev_out;
  ev->add_option("--model", ev_model, "model file (.evlk)")->required();
  ev->add_option("--data", ev_data, "labeled dataset (.jsonl)")->required();
  ev->add_option("--out", ev_out, "report directory")->required();

  auto* pr = app.add_subcommand("predict", "per-link energy for one trip");
  std::string pr_model, pr_trip;
  bool pr_serve = false;
  pr->add_option("--model", pr_model, "model file (.evlk)")->required();
  pr->add_option("--trip", pr_trip, "trip JSON file");
  pr->add_flag("--serve", pr_serve, "line-delimited request/response on stdin/stdout");

  auto* soc = app.add_subcommand("soc", "SOC trace and charging flag for one trip");
  std::string soc_model, soc_trip;
  double soc_initial = 1.0, soc_threshold = kDefaultChargeThreshold;
  soc->add_option("--model", soc_model, "model file (.evlk)")->required();
  soc->add_option("--trip", soc_trip, "trip JSON file")->required();
  soc->add_option("--initial-soc", soc_initial, "initial state of charge [0,1]")->required();
  soc->add_option("--threshold", soc_threshold, "charging threshold [0,1], default 0.15");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) {
      return cmd_generate(gen_config, gen_out, gen_seed, gen_seed_opt->count() > 0,
                          manifest_path);
    }
    if (tr->parsed()) return cmd_train(tr_data, tr_config, tr_out, tr_resume, manifest_path);
    if (ev->parsed()) return cmd_evaluate(ev_model, ev_data, ev_out, manifest_path);
    if (pr->parsed()) {
      if (!pr_serve && pr_trip.empty()) {
        throw ConfigError("predict: --trip is required unless --serve is given");
      }
      return cmd_predict(pr_model, pr_trip, pr_serve, manifest_path);
    }
    if (soc->parsed()) {
      return cmd_soc(soc_model, soc_trip, soc_initial, soc_threshold, manifest_path);
    }
  } catch (const SchemaMismatchError& e) {
    std::cerr << "schema mismatch: " << e.what() << '\n';
    return 3;
  } catch (const DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << '\n';
    return 4;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

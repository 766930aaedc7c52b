// Command-line front end for the traffic-speed prediction pipeline.
//
// Subcommands: ingest, reconstruct, train, eval, predict, transfer, report.
// Exit codes: 0 success, 2 usage or data error, 3 numeric failure.
// Experiment settings come from one JSON config file; command-line flags
// override individual fields (flags win).

#include <cinttypes>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "irnet/pipeline.hpp"

namespace {

using namespace irnet;

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

/// Joins an artifact name onto the configured output directory (or the
/// working directory when none is set), creating the directory if needed.
std::string artifact_path(const std::string& output_dir, const std::string& name) {
  if (output_dir.empty()) return name;
  std::filesystem::create_directories(output_dir);
  return (std::filesystem::path(output_dir) / name).string();
}

/// The --config option plus the per-field override flags shared by every
/// experiment-driven subcommand. Overrides apply only when the flag was
/// actually passed, so config values survive untouched otherwise.
struct ConfigArgs {
  CLI::App* sub = nullptr;
  std::string config_path;
  std::string edges, speeds, output_dir;
  std::uint64_t target = 0;
  std::uint64_t seed = 0;
  int epochs = 0, batch_size = 0, patience = 0;
  int history_len = 0, space_width = 0, slots = 0, horizons = 0;
  double lr = 0.0;
  bool baseline = false;

  void attach(CLI::App* s) {
    sub = s;
    s->add_option("--config", config_path, "experiment config JSON file")
        ->required()
        ->check(CLI::ExistingFile);
    s->add_option("--edges", edges, "override: road edge-list file");
    s->add_option("--speeds", speeds, "override: speed store cache or road CSV");
    s->add_option("--output-dir", output_dir, "override: directory for artifacts");
    s->add_option("--target", target, "override: target road id");
    s->add_option("--seed", seed, "override: initializer and shuffle seed");
    s->add_option("--epochs", epochs, "override: maximum training epochs");
    s->add_option("--batch-size", batch_size, "override: mini-batch size");
    s->add_option("--patience", patience, "override: early-stopping patience");
    s->add_option("--lr", lr, "override: learning rate");
    s->add_option("--history-len", history_len, "override: history window length");
    s->add_option("--space-width", space_width, "override: adjacency orders per direction");
    s->add_option("--slots", slots, "override: slots per virtual intersection");
    s->add_option("--horizons", horizons, "override: number of prediction horizons");
    s->add_flag("--baseline,!--no-baseline", baseline,
                "override: train the target-only baseline");
  }

  ExperimentConfig load() const {
    ExperimentConfig cfg = load_experiment_config(config_path);
    if (sub->count("--edges")) cfg.edges_path = edges;
    if (sub->count("--speeds")) cfg.speeds_path = speeds;
    if (sub->count("--output-dir")) cfg.output_dir = output_dir;
    if (sub->count("--target")) cfg.target_road = target;
    if (sub->count("--seed")) {
      cfg.model.seed = seed;
      cfg.train.seed = seed;
    }
    if (sub->count("--epochs")) cfg.train.max_epochs = epochs;
    if (sub->count("--batch-size")) cfg.train.batch_size = batch_size;
    if (sub->count("--patience")) cfg.train.patience = patience;
    if (sub->count("--lr")) cfg.train.learning_rate = lr;
    if (sub->count("--history-len")) cfg.model.history_len = history_len;
    if (sub->count("--space-width")) cfg.model.space_width = space_width;
    if (sub->count("--slots")) cfg.model.intersection_slots = slots;
    if (sub->count("--horizons")) cfg.model.horizon_count = horizons;
    if (sub->count("--baseline") || sub->count("--no-baseline")) cfg.baseline = baseline;
    validate(cfg);
    return cfg;
  }
};

const Dataset& pick_split(const SplitDataset& splits, const std::string& name) {
  if (name == "train") return splits.train;
  if (name == "val") return splits.val;
  if (name == "test") return splits.test;
  raise(Errc::bad_config, "unknown split '" + name + "' (expected train, val, or test)");
}

void run_ingest(const std::string& sensors, const std::string& out, std::int64_t interval,
                bool forward_fill) {
  SpeedStore store = ingest_sensor_csv(sensors, interval, forward_fill);
  save_store(store, out);
  std::cout << "ingested " << store.series.size() << " roads x " << store.length()
            << " steps -> " << out << "\n";
}

void run_reconstruct(const std::string& edges, const std::string& store_path, std::uint64_t target,
                     int k, int w, const std::string& out) {
  SpeedStore store = load_speeds_auto(store_path);
  std::vector<RoadId> extra;
  for (const auto& [road, series] : store.series) extra.push_back(road);
  RoadNetwork net = load_edge_list(edges, extra);
  FeatureMap features = make_features(store, store.length());
  ReconstructionPlan plan = build_plan(net, target, features, k, w);
  save_plan(plan, out);
  for (const auto* sets : {&plan.upstream_sets, &plan.downstream_sets}) {
    const char* dir = sets == &plan.upstream_sets ? "upstream" : "downstream";
    for (const OrderedRoadSet& set : *sets) {
      std::size_t dumb = 0;
      for (RoadId r : set.slots) dumb += is_dumb(r) ? 1 : 0;
      std::cout << dir << " order " << set.order << ": " << dumb << "/" << set.slots.size()
                << " dumb slots\n";
    }
  }
  std::cout << "plan -> " << out << "\n";
}

void run_train(const ConfigArgs& args, std::string out, std::string history_path) {
  ExperimentConfig cfg = args.load();
  ExperimentData data = prepare_experiment(cfg);
  ExperimentResult result = train_experiment(cfg, data);
  if (out.empty()) out = artifact_path(cfg.output_dir, "checkpoint.bin");
  if (history_path.empty()) history_path = artifact_path(cfg.output_dir, "history.csv");
  save_checkpoint(result.checkpoint, out);
  save_history_csv(result.history, history_path);
  std::cout << "trained " << result.history.size() << " epochs; best val RMSPE@1 "
            << fmt("%.6g", result.best_val) << "% at epoch " << result.best_epoch << "\n";
  std::cout << "checkpoint -> " << out << "\n";
  std::cout << "history -> " << history_path << "\n";
}

void run_eval(const ConfigArgs& args, const std::string& ckpt_path, const std::string& split,
              const std::string& out) {
  ExperimentConfig cfg = args.load();
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  ExperimentData data = prepare_experiment(cfg);
  const Dataset& samples = pick_split(data.raw, split);
  MetricsReport report = evaluate_checkpoint(ckpt, samples, data.plan, cfg.target_road);
  save_metrics_json(report, out);
  for (std::size_t p = 0; p < report.horizons.size(); ++p) {
    std::cout << "horizon " << (p + 1) << ": RMSPE " << fmt("%.6g", report.horizons[p].rmspe_pct)
              << "% MAPE " << fmt("%.6g", report.horizons[p].mape_pct) << "%\n";
  }
  std::cout << "report (" << report.sample_count << " samples, " << split << " split) -> " << out
            << "\n";
}

void run_predict(const ConfigArgs& args, const std::string& ckpt_path, std::int64_t at,
                 const std::string& out) {
  ExperimentConfig cfg = args.load();
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  SpeedStore store = load_speeds_auto(cfg.speeds_path);
  std::vector<RoadId> extra;
  for (const auto& [road, series] : store.series) extra.push_back(road);
  RoadNetwork net = load_edge_list(cfg.edges_path, extra);
  FeatureMap features = make_features(store, store.length());
  ReconstructionPlan plan = build_plan(net, cfg.target_road, features,
                                       cfg.model.intersection_slots, cfg.model.space_width);

  const int h = cfg.model.history_len;
  const int P = cfg.model.horizon_count;
  if (at + 1 < h || at + P >= store.length())
    raise(Errc::window_out_of_range,
          "index " + std::to_string(at) + " does not leave room for " + std::to_string(h) +
              " history steps and " + std::to_string(P) + " label steps in a series of length " +
              std::to_string(store.length()));
  Dataset one = make_dataset(plan, store, h, P, at - h + 1, at + P + 1);
  Dataset norm = normalize_samples(one, plan, ckpt.normalizer);
  if (!sample_matches(ckpt.config, norm.front()))
    raise(Errc::config_mismatch, "sample shapes do not match the checkpoint's configuration");

  const SampleForward fwd = make_sample_forward(ckpt.config, is_baseline_params(ckpt.params));
  NoGradGuard guard;
  Tensor pred = fwd(norm.front(), ckpt.params);
  std::ofstream csv(out, std::ios::binary);
  if (!csv) raise(Errc::io_error, "cannot open " + out + " for writing");
  csv << "horizon,predicted_mph\n";
  for (int p = 0; p < P; ++p) {
    const double mph = ckpt.normalizer.invert(cfg.target_road, pred.values()[p]);
    char row[96];
    std::snprintf(row, sizeof(row), "%d,%.17g\n", p + 1, mph);
    csv << row;
    std::cout << "horizon " << (p + 1) << ": " << fmt("%.6g", mph) << " mph\n";
  }
  if (!csv) raise(Errc::io_error, "failed writing " + out);
  std::cout << "predictions -> " << out << "\n";
}

void run_transfer(const ConfigArgs& args, const std::string& ckpt_path, std::uint64_t new_road,
                  int samples, int steps, const std::string& out) {
  ExperimentConfig cfg = args.load();
  cfg.target_road = new_road;  // the data is assembled around the new road
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  ExperimentData data = prepare_experiment(cfg);
  FineTuneConfig ft;
  ft.max_steps = steps;
  ft.learning_rate = cfg.train.learning_rate;
  Checkpoint adapted = transfer_experiment(ckpt, data, new_road, samples, ft);
  save_checkpoint(adapted, out);
  std::cout << "adapted head for road " << new_road << " (" << adapted.provenance << ")\n";
  std::cout << "checkpoint -> " << out << "\n";
}

void run_report(const std::string& history_path, const std::string& report_path,
                const std::string& out) {
  std::optional<History> history;
  std::optional<MetricsReport> report;
  if (!history_path.empty()) history = load_history_csv(history_path);
  if (!report_path.empty()) report = load_metrics_json(report_path);
  render_report_svg(history, report, out);
  std::cout << "report -> " << out << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"traffic-speed prediction pipeline"};
  app.require_subcommand(1);

  // ingest
  auto* ingest = app.add_subcommand("ingest", "average sensor CSV into a per-road speed store");
  std::string in_sensors, in_out;
  std::int64_t in_interval = 3600;
  bool in_ffill = false;
  ingest->add_option("--sensors", in_sensors, "sensor CSV: sensor_id,road_id,timestamp,speed_mph")
      ->required()
      ->check(CLI::ExistingFile);
  ingest->add_option("--out", in_out, "store cache to write")->required();
  ingest->add_option("--interval", in_interval, "grid interval in seconds (default 3600)");
  ingest->add_flag("--forward-fill", in_ffill, "repeat the previous value over interior gaps");

  // reconstruct
  auto* rec = app.add_subcommand("reconstruct", "build the virtual intersection plan for a road");
  std::string rc_edges, rc_store, rc_out;
  std::uint64_t rc_target = 0;
  int rc_k = 3, rc_w = 3;
  rec->add_option("--edges", rc_edges, "edge-list file: from_id,to_id per line")
      ->required()
      ->check(CLI::ExistingFile);
  rec->add_option("--store", rc_store, "speed store cache or road CSV")
      ->required()
      ->check(CLI::ExistingFile);
  rec->add_option("--target", rc_target, "target road id")->required();
  rec->add_option("--k", rc_k, "slots per intersection (default 3)");
  rec->add_option("--w", rc_w, "adjacency orders per direction (default 3)");
  rec->add_option("--out", rc_out, "plan JSON to write")->required();

  // train
  auto* tr = app.add_subcommand("train", "train a model and write checkpoint + history");
  ConfigArgs tr_args;
  tr_args.attach(tr);
  std::string tr_out, tr_history;
  tr->add_option("--out", tr_out, "checkpoint path (default <output_dir>/checkpoint.bin)");
  tr->add_option("--history", tr_history, "history CSV path (default <output_dir>/history.csv)");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on one split");
  ConfigArgs ev_args;
  ev_args.attach(ev);
  std::string ev_ckpt, ev_split = "test", ev_out;
  ev->add_option("--checkpoint", ev_ckpt, "checkpoint to evaluate")
      ->required()
      ->check(CLI::ExistingFile);
  ev->add_option("--split", ev_split, "train, val, or test (default test)");
  ev->add_option("--out", ev_out, "metrics report JSON to write")->required();

  // predict
  auto* pr = app.add_subcommand("predict", "predict the horizons after one history window");
  ConfigArgs pr_args;
  pr_args.attach(pr);
  std::string pr_ckpt, pr_out;
  std::int64_t pr_at = 0;
  pr->add_option("--checkpoint", pr_ckpt, "checkpoint to run")
      ->required()
      ->check(CLI::ExistingFile);
  pr->add_option("--at", pr_at, "store index of the last history step")->required();
  pr->add_option("--out", pr_out, "prediction CSV to write")->required();

  // transfer
  auto* tf = app.add_subcommand("transfer", "adapt a checkpoint's head to a new road");
  ConfigArgs tf_args;
  tf_args.attach(tf);
  std::string tf_ckpt, tf_out;
  std::uint64_t tf_road = 0;
  int tf_samples = 10, tf_steps = 200;
  tf->add_option("--checkpoint", tf_ckpt, "pretrained checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  tf->add_option("--new-road", tf_road, "road to adapt to")->required();
  tf->add_option("--samples", tf_samples, "fine-tuning samples from the training window");
  tf->add_option("--steps", tf_steps, "maximum head-only optimization steps (default 200)");
  tf->add_option("--out", tf_out, "adapted checkpoint to write")->required();

  // report
  auto* rp = app.add_subcommand("report", "render history/metrics into a static SVG");
  std::string rp_history, rp_report, rp_out;
  rp->add_option("--history", rp_history, "history CSV from train")->check(CLI::ExistingFile);
  rp->add_option("--report", rp_report, "metrics JSON from eval")->check(CLI::ExistingFile);
  rp->add_option("--out", rp_out, "SVG to write")->required();

  ingest->callback([&] { run_ingest(in_sensors, in_out, in_interval, in_ffill); });
  rec->callback([&] { run_reconstruct(rc_edges, rc_store, rc_target, rc_k, rc_w, rc_out); });
  tr->callback([&] { run_train(tr_args, tr_out, tr_history); });
  ev->callback([&] { run_eval(ev_args, ev_ckpt, ev_split, ev_out); });
  pr->callback([&] { run_predict(pr_args, pr_ckpt, pr_at, pr_out); });
  tf->callback([&] { run_transfer(tf_args, tf_ckpt, tf_road, tf_samples, tf_steps, tf_out); });
  rp->callback([&] { run_report(rp_history, rp_report, rp_out); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  } catch (const irnet::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == irnet::Errc::non_finite_result ? 3 : 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}

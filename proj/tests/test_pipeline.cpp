#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include <doctest.h>

#include "irnet/pipeline.hpp"
#include "test_util.hpp"

using namespace irnet;
using test_util::thrown_code;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  REQUIRE(out.good());
  out << content;
}

/// Reference CRC-32 (reflected, 0xEDB88320), reimplemented here so the
/// version-patch test does not depend on the code it is checking.
std::uint32_t crc32_ref(const std::string& data) {
  std::uint32_t crc = 0xffffffffu;
  for (unsigned char byte : data) {
    crc ^= byte;
    for (int bit = 0; bit < 8; ++bit)
      crc = (crc >> 1) ^ (0xedb88320u & (crc & 1u ? 0xffffffffu : 0u));
  }
  return crc ^ 0xffffffffu;
}

/// Toy-width experiment over the layered synthetic network; target 5 sits in
/// the middle layer so it has real neighbours in both directions.
ExperimentConfig toy_config() {
  ExperimentConfig cfg;
  cfg.target_road = 5;
  cfg.model.history_len = 3;
  cfg.model.space_width = 2;
  cfg.model.intersection_slots = 2;
  cfg.model.horizon_count = 2;
  cfg.model.feature_dim = 8;
  cfg.model.conv_channels = 2;
  cfg.model.target_layers = 1;
  cfg.model.target_hidden = 8;
  cfg.model.temporal_layers = 1;
  cfg.model.temporal_hidden = 8;
  cfg.model.temporal_out = 4;
  cfg.model.spatial_layers = 1;
  cfg.model.baseline_layers = 1;
  cfg.model.baseline_hidden = 8;
  cfg.model.seed = 11;
  cfg.train.learning_rate = 0.01;
  cfg.train.batch_size = 8;
  cfg.train.max_epochs = 3;
  cfg.train.patience = 3;
  cfg.train.seed = 11;
  return cfg;
}

SynthResult toy_network() {
  SynthSpec spec;
  spec.roads = 9;
  spec.layers = 3;
  spec.steps = 90;
  spec.noise = 1.0;
  spec.max_parents = 2;
  return synth_network(spec, 123);
}

}  // namespace

TEST_SUITE("pipeline") {

TEST_CASE("experiment config JSON round-trips every field") {
  ExperimentConfig cfg;
  cfg.edges_path = "edges.txt";
  cfg.speeds_path = "speeds.bin";
  cfg.output_dir = "runs/a";
  cfg.target_road = 42;
  cfg.model.history_len = 4;
  cfg.model.space_width = 2;
  cfg.model.intersection_slots = 2;
  cfg.model.horizon_count = 3;
  cfg.model.feature_dim = 16;
  cfg.model.conv_channels = 3;
  cfg.model.target_layers = 1;
  cfg.model.target_hidden = 12;
  cfg.model.temporal_layers = 1;
  cfg.model.temporal_hidden = 10;
  cfg.model.temporal_out = 5;
  cfg.model.spatial_layers = 1;
  cfg.model.baseline_layers = 2;
  cfg.model.baseline_hidden = 9;
  cfg.model.seed = 77;
  cfg.train.learning_rate = 0.5;
  cfg.train.batch_size = 4;
  cfg.train.max_epochs = 12;
  cfg.train.patience = 6;
  cfg.train.seed = 77;
  cfg.split = {0.5, 0.25, 0.25};
  cfg.baseline = true;

  const char* path = "pipeline_config.json";
  save_experiment_config(cfg, path);
  ExperimentConfig loaded = load_experiment_config(path);
  CHECK(loaded.edges_path == cfg.edges_path);
  CHECK(loaded.speeds_path == cfg.speeds_path);
  CHECK(loaded.output_dir == cfg.output_dir);
  CHECK(loaded.target_road == cfg.target_road);
  CHECK(loaded.model.history_len == cfg.model.history_len);
  CHECK(loaded.model.space_width == cfg.model.space_width);
  CHECK(loaded.model.intersection_slots == cfg.model.intersection_slots);
  CHECK(loaded.model.horizon_count == cfg.model.horizon_count);
  CHECK(loaded.model.feature_dim == cfg.model.feature_dim);
  CHECK(loaded.model.conv_channels == cfg.model.conv_channels);
  CHECK(loaded.model.target_layers == cfg.model.target_layers);
  CHECK(loaded.model.target_hidden == cfg.model.target_hidden);
  CHECK(loaded.model.temporal_layers == cfg.model.temporal_layers);
  CHECK(loaded.model.temporal_hidden == cfg.model.temporal_hidden);
  CHECK(loaded.model.temporal_out == cfg.model.temporal_out);
  CHECK(loaded.model.spatial_layers == cfg.model.spatial_layers);
  CHECK(loaded.model.baseline_layers == cfg.model.baseline_layers);
  CHECK(loaded.model.baseline_hidden == cfg.model.baseline_hidden);
  CHECK(loaded.model.seed == 77);
  CHECK(loaded.train.learning_rate == cfg.train.learning_rate);
  CHECK(loaded.train.batch_size == cfg.train.batch_size);
  CHECK(loaded.train.max_epochs == cfg.train.max_epochs);
  CHECK(loaded.train.patience == cfg.train.patience);
  CHECK(loaded.train.seed == 77);
  CHECK(loaded.split == cfg.split);
  CHECK(loaded.baseline == cfg.baseline);

  // Saving the loaded config reproduces the file byte for byte.
  const char* path_b = "pipeline_config_b.json";
  save_experiment_config(loaded, path_b);
  CHECK(slurp(path) == slurp(path_b));
  std::remove(path);
  std::remove(path_b);
}

TEST_CASE("an empty config document means the documented defaults") {
  const char* path = "pipeline_config_empty.json";
  write_text(path, "{}\n");
  ExperimentConfig cfg = load_experiment_config(path);
  CHECK(cfg.model.history_len == 6);
  CHECK(cfg.model.space_width == 3);
  CHECK(cfg.model.intersection_slots == 3);
  CHECK(cfg.model.horizon_count == 5);
  CHECK(cfg.model.feature_dim == 256);
  CHECK(cfg.model.conv_channels == 6);
  CHECK(cfg.model.target_layers == 2);
  CHECK(cfg.model.target_hidden == 256);
  CHECK(cfg.model.temporal_layers == 2);
  CHECK(cfg.model.temporal_hidden == 512);
  CHECK(cfg.model.temporal_out == 32);
  CHECK(cfg.model.spatial_layers == 2);
  CHECK(cfg.model.baseline_layers == 3);
  CHECK(cfg.model.baseline_hidden == 512);
  CHECK(cfg.train.learning_rate == 0.001);
  CHECK(cfg.train.batch_size == 16);
  CHECK(cfg.train.max_epochs == 500);
  CHECK(cfg.train.patience == 20);
  CHECK(cfg.split == std::array<double, 3>{0.6, 0.2, 0.2});
  CHECK(cfg.baseline == false);
  std::remove(path);
}

TEST_CASE("config loading rejects unknown keys, bad types, and newer schemas") {
  const char* path = "pipeline_config_bad.json";
  write_text(path, R"({"history_len": 6, "history_length": 7})");
  CHECK(thrown_code([&] { load_experiment_config(path); }) == Errc::bad_config);
  write_text(path, R"({"model": {"feature_dims": 4}})");
  CHECK(thrown_code([&] { load_experiment_config(path); }) == Errc::bad_config);
  write_text(path, R"({"history_len": "six"})");
  CHECK(thrown_code([&] { load_experiment_config(path); }) == Errc::bad_config);
  write_text(path, R"({"schema_version": 99})");
  CHECK(thrown_code([&] { load_experiment_config(path); }) == Errc::version_mismatch);
  write_text(path, "not json");
  CHECK(thrown_code([&] { load_experiment_config(path); }) == Errc::bad_config);
  write_text(path, "[1,2]");
  CHECK(thrown_code([&] { load_experiment_config(path); }) == Errc::bad_config);
  CHECK(thrown_code([] { load_experiment_config("pipeline_no_such.json"); }) == Errc::io_error);
  std::remove(path);
}

TEST_CASE("experiment validation catches bad fractions") {
  ExperimentConfig cfg = toy_config();
  cfg.split = {0.5, 0.5, 0.5};
  CHECK(thrown_code([&] { validate(cfg); }) == Errc::bad_fractions);
  cfg.split = {1.2, -0.2, 0.0};
  CHECK(thrown_code([&] { validate(cfg); }) == Errc::bad_fractions);
  cfg = toy_config();
  cfg.model.feature_dim = 0;
  CHECK(thrown_code([&] { validate(cfg); }) == Errc::bad_config);
}

TEST_CASE("speed store cache round-trips bit-exactly and is byte-stable") {
  SpeedStore store = toy_network().store;
  const char* path = "pipeline_store.bin";
  const char* path_b = "pipeline_store_b.bin";
  save_store(store, path);
  SpeedStore loaded = load_store(path);
  CHECK(loaded.interval_seconds == store.interval_seconds);
  CHECK(loaded.start_epoch_seconds == store.start_epoch_seconds);
  REQUIRE(loaded.series.size() == store.series.size());
  for (const auto& [road, series] : store.series) {
    REQUIRE(loaded.series.count(road) == 1);
    const auto& other = loaded.series.at(road);
    REQUIRE(other.size() == series.size());
    for (std::size_t i = 0; i < series.size(); ++i) CHECK(other[i] == series[i]);
  }
  save_store(loaded, path_b);
  CHECK(slurp(path) == slurp(path_b));
  std::remove(path_b);
  std::remove(path);
}

TEST_CASE("speed store cache detects damage and newer versions") {
  SpeedStore store;
  store.series[3] = {50.0, 51.0, 52.0};
  store.series[4] = {60.0, 59.0, 58.0};
  const char* path = "pipeline_store_damage.bin";
  save_store(store, path);
  const std::string good = slurp(path);

  // Flipped payload byte.
  std::string bad = good;
  bad[20] = static_cast<char>(bad[20] ^ 0x40);
  write_text(path, bad);
  CHECK(thrown_code([&] { load_store(path); }) == Errc::corrupt_checksum);

  // Wrong magic.
  bad = good;
  bad[0] = 'X';
  write_text(path, bad);
  CHECK(thrown_code([&] { load_store(path); }) == Errc::corrupt_checksum);

  // Truncation.
  write_text(path, good.substr(0, good.size() / 2));
  CHECK(thrown_code([&] { load_store(path); }) == Errc::corrupt_checksum);

  // Newer version with a recomputed checksum must be refused as unreadable,
  // not as damaged.
  bad = good;
  bad[4] = 2;
  {
    std::string body = bad.substr(0, bad.size() - 4);
    const std::uint32_t crc = crc32_ref(body);
    for (int i = 0; i < 4; ++i)
      bad[body.size() + static_cast<std::size_t>(i)] = static_cast<char>((crc >> (8 * i)) & 0xff);
  }
  write_text(path, bad);
  CHECK(thrown_code([&] { load_store(path); }) == Errc::version_mismatch);

  CHECK(thrown_code([] { load_store("pipeline_no_such.bin"); }) == Errc::io_error);
  std::remove(path);

  // Invalid stores are refused before anything is written.
  SpeedStore ragged;
  ragged.series[1] = {10.0, 20.0};
  ragged.series[2] = {10.0};
  CHECK(thrown_code([&] { save_store(ragged, path); }) == Errc::bad_config);
  SpeedStore zeroed;
  zeroed.series[1] = {10.0, 0.0};
  CHECK(thrown_code([&] { save_store(zeroed, path); }) == Errc::bad_config);
}

TEST_CASE("load_speeds_auto reads both the cache and the road CSV") {
  SpeedStore store = toy_network().store;
  const char* bin_path = "pipeline_auto.bin";
  const char* csv_path = "pipeline_auto.csv";
  save_store(store, bin_path);
  save_road_csv(store, csv_path);
  SpeedStore a = load_speeds_auto(bin_path);
  SpeedStore b = load_speeds_auto(csv_path);
  REQUIRE(a.series.size() == store.series.size());
  REQUIRE(b.series.size() == store.series.size());
  for (const auto& [road, series] : store.series) {
    for (std::size_t i = 0; i < series.size(); ++i) {
      CHECK(a.series.at(road)[i] == series[i]);
      CHECK(b.series.at(road)[i] == series[i]);
    }
  }
  std::remove(bin_path);
  std::remove(csv_path);
}

TEST_CASE("prepare_experiment assembles plan, splits, and normalizer deterministically") {
  SynthResult synth = toy_network();
  ExperimentConfig cfg = toy_config();
  ExperimentData data = prepare_experiment(cfg, synth.net, synth.store);

  CHECK(data.plan.target == cfg.target_road);
  CHECK(data.plan.k == cfg.model.intersection_slots);
  CHECK(data.plan.w == cfg.model.space_width);

  // 90 steps, h=3, P=2: t in [2, 87] -> 86 samples; floor splits 17/17, rest train.
  const std::size_t total = data.raw.train.size() + data.raw.val.size() + data.raw.test.size();
  CHECK(total == 86);
  CHECK(data.raw.val.size() == 17);
  CHECK(data.raw.test.size() == 17);
  CHECK(data.raw.train.size() == 52);
  for (const auto& [road, series] : data.store.series) CHECK(data.fitted.has(road));

  ExperimentData again = prepare_experiment(cfg, synth.net, synth.store);
  CHECK(again.raw.train.size() == data.raw.train.size());
  for (std::size_t d = 0; d < data.plan.upstream_sets.size(); ++d) {
    CHECK(again.plan.upstream_sets[d].slots == data.plan.upstream_sets[d].slots);
    CHECK(again.plan.downstream_sets[d].slots == data.plan.downstream_sets[d].slots);
  }

  cfg.target_road = 9999;
  CHECK(thrown_code([&] { prepare_experiment(cfg, synth.net, synth.store); }) ==
        Errc::unknown_road);
}

TEST_CASE("forward factory matches the architecture recorded in the parameters") {
  ExperimentConfig cfg = toy_config();
  ParamSet full = init_params(cfg.model);
  ParamSet base = init_baseline_params(cfg.model);
  CHECK_FALSE(is_baseline_params(full));
  CHECK(is_baseline_params(base));

  SynthResult synth = toy_network();
  ExperimentData data = prepare_experiment(cfg, synth.net, synth.store);
  Dataset norm = normalize_samples(data.raw.train, data.plan, data.fitted);
  Tensor a = make_sample_forward(cfg.model, false)(norm.front(), full);
  Tensor b = make_sample_forward(cfg.model, true)(norm.front(), base);
  CHECK(a.dim(0) == cfg.model.horizon_count);
  CHECK(b.dim(0) == cfg.model.horizon_count);
}

TEST_CASE("train_experiment produces a reproducible checkpoint and clean history") {
  SynthResult synth = toy_network();
  ExperimentConfig cfg = toy_config();
  ExperimentData data = prepare_experiment(cfg, synth.net, synth.store);

  ExperimentResult a = train_experiment(cfg, data);
  CHECK(a.history.size() == 3);
  CHECK(a.best_epoch >= 1);
  CHECK(a.checkpoint.target_road == cfg.target_road);
  CHECK(a.checkpoint.provenance == "train;target=5;seed=11");
  CHECK(a.checkpoint.config.feature_dim == cfg.model.feature_dim);

  ExperimentResult b = train_experiment(cfg, data);
  const char* path_a = "pipeline_ckpt_a.bin";
  const char* path_b = "pipeline_ckpt_b.bin";
  save_checkpoint(a.checkpoint, path_a);
  save_checkpoint(b.checkpoint, path_b);
  CHECK(slurp(path_a) == slurp(path_b));
  std::remove(path_a);
  std::remove(path_b);

  // The baseline variant trains through the same interface.
  cfg.baseline = true;
  ExperimentResult c = train_experiment(cfg, data);
  CHECK(is_baseline_params(c.checkpoint.params));
  CHECK(c.checkpoint.provenance == "train;target=5;seed=11;baseline");
}

TEST_CASE("evaluate_checkpoint scores a split against the checkpoint's own scaler") {
  SynthResult synth = toy_network();
  ExperimentConfig cfg = toy_config();
  ExperimentData data = prepare_experiment(cfg, synth.net, synth.store);
  ExperimentResult trained = train_experiment(cfg, data);

  MetricsReport report = evaluate_checkpoint(trained.checkpoint, data.raw.test, data.plan,
                                             cfg.target_road);
  REQUIRE(report.horizons.size() == 2);
  CHECK(report.sample_count == data.raw.test.size());
  for (const HorizonMetrics& h : report.horizons) {
    CHECK(h.rmspe_pct >= 0.0);
    CHECK(h.true_mph.size() == data.raw.test.size());
  }

  CHECK(thrown_code([&] {
          evaluate_checkpoint(trained.checkpoint, {}, data.plan, cfg.target_road);
        }) == Errc::empty_dataset);

  // Data built for a different window length no longer matches the model.
  ExperimentConfig other = toy_config();
  other.model.history_len = 4;
  ExperimentData mismatched = prepare_experiment(other, synth.net, synth.store);
  CHECK(thrown_code([&] {
          evaluate_checkpoint(trained.checkpoint, mismatched.raw.test, mismatched.plan,
                              cfg.target_road);
        }) == Errc::config_mismatch);
}

TEST_CASE("transfer_experiment adapts only the head and records its parentage") {
  SynthResult synth = toy_network();
  ExperimentConfig cfg = toy_config();
  ExperimentData data = prepare_experiment(cfg, synth.net, synth.store);
  ExperimentResult trained = train_experiment(cfg, data);

  ExperimentConfig cfg_b = toy_config();
  cfg_b.target_road = 8;
  ExperimentData data_b = prepare_experiment(cfg_b, synth.net, synth.store);

  FineTuneConfig ft;
  ft.max_steps = 10;
  ft.learning_rate = 0.01;
  Checkpoint adapted = transfer_experiment(trained.checkpoint, data_b, 8, 10, ft);
  CHECK(adapted.target_road == 8);
  CHECK(adapted.provenance ==
        "transfer;road=8;samples=10;parent=[train;target=5;seed=11]");
  for (const auto& [name, t] : trained.checkpoint.params.tensors) {
    if (name.rfind("head.", 0) == 0) continue;
    const Tensor& other = adapted.params.at(name);
    for (Eigen::Index i = 0; i < t.size(); ++i) CHECK(other.values()[i] == t.values()[i]);
  }

  CHECK(thrown_code([&] { transfer_experiment(trained.checkpoint, data_b, 7, 10, ft); }) ==
        Errc::config_mismatch);
  CHECK(thrown_code([&] { transfer_experiment(trained.checkpoint, data_b, 8, 0, ft); }) ==
        Errc::empty_fine_tune_set);
}

TEST_CASE("report SVG plots one marker per epoch and per test sample") {
  History history{{1, 0.9, 14.0}, {2, 0.5, 12.0}, {3, 0.4, 12.5}};
  MetricsReport report;
  report.sample_count = 4;
  report.horizons.push_back({5.0, 4.0, {50, 55, 60, 65}, {51, 54, 61, 64}});

  const char* path = "pipeline_report.svg";
  render_report_svg(history, report, path);
  const std::string svg = slurp(path);
  auto count = [&](const std::string& needle) {
    std::size_t n = 0;
    for (std::size_t pos = svg.find(needle); pos != std::string::npos;
         pos = svg.find(needle, pos + needle.size()))
      ++n;
    return n;
  };
  CHECK(count("class=\"loss-point\"") == 3);
  CHECK(count("class=\"pred-point\"") == 4);
  CHECK(svg.find("<svg xmlns=\"http://www.w3.org/2000/svg\"") == 0);

  // Re-rendering is byte-identical.
  const char* path_b = "pipeline_report_b.svg";
  render_report_svg(history, report, path_b);
  CHECK(slurp(path) == slurp(path_b));

  // History-only and metrics-only renders carry exactly their own panel.
  render_report_svg(history, std::nullopt, path);
  const std::string only_history = slurp(path);
  CHECK(only_history.find("loss-point") != std::string::npos);
  CHECK(only_history.find("pred-point") == std::string::npos);
  render_report_svg(std::nullopt, report, path);
  const std::string only_report = slurp(path);
  CHECK(only_report.find("pred-point") != std::string::npos);
  CHECK(only_report.find("loss-point") == std::string::npos);

  CHECK(thrown_code([&] { render_report_svg(std::nullopt, std::nullopt, path); }) ==
        Errc::bad_config);
  std::remove(path);
  std::remove(path_b);
}

}  // TEST_SUITE

#include "irnet/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string_view>
#include <utility>
#include <vector>

#include "binio.hpp"
#include "json.hpp"

namespace irnet {

namespace {

constexpr int kConfigSchemaVersion = 1;
constexpr std::string_view kStoreMagic = "IRST";
constexpr std::uint16_t kStoreVersion = 1;

std::string fmt_fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

std::string fmt_label(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

// ---- experiment config JSON -------------------------------------------------

using ordered_json = nlohmann::ordered_json;

/// Pulls `key` out of `obj` if present; the caller checks that nothing is
/// left afterwards, so typos surface instead of silently meaning "default".
template <typename T>
void take(ordered_json& obj, const char* key, T& out, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) return;
  try {
    out = it->get<T>();
  } catch (const nlohmann::json::exception& e) {
    raise(Errc::bad_config, "config field " + where + key + " has the wrong type: " + e.what());
  }
  obj.erase(it);
}

void reject_leftovers(const ordered_json& obj, const std::string& where) {
  if (obj.empty()) return;
  raise(Errc::bad_config, "config has unknown key " + where + obj.begin().key());
}

}  // namespace

void validate(const ExperimentConfig& config) {
  validate(config.model);
  validate(config.train);
  if (config.target_road == kDumbPoint)
    raise(Errc::bad_config, "target_road is the padding sentinel");
  double sum = 0.0;
  for (double f : config.split) {
    if (!(f >= 0.0)) raise(Errc::bad_fractions, "split fractions must be non-negative");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9) raise(Errc::bad_fractions, "split fractions must sum to 1");
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(Errc::io_error, "cannot open " + path);
  ordered_json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    raise(Errc::bad_config, "config file " + path + " is not valid JSON: " + e.what());
  }
  if (!doc.is_object()) raise(Errc::bad_config, "config file " + path + " must hold an object");

  ExperimentConfig cfg;
  int version = kConfigSchemaVersion;
  take(doc, "schema_version", version, "");
  if (version > kConfigSchemaVersion)
    raise(Errc::version_mismatch, "config file " + path + " has schema_version " +
                                      std::to_string(version) + "; this reader supports up to " +
                                      std::to_string(kConfigSchemaVersion));
  if (version < 1) raise(Errc::bad_config, "config file has non-positive schema_version");

  if (auto it = doc.find("paths"); it != doc.end()) {
    if (!it->is_object()) raise(Errc::bad_config, "config field paths must be an object");
    ordered_json paths = *it;
    doc.erase(it);
    take(paths, "edges", cfg.edges_path, "paths.");
    take(paths, "speeds", cfg.speeds_path, "paths.");
    take(paths, "output_dir", cfg.output_dir, "paths.");
    reject_leftovers(paths, "paths.");
  }

  take(doc, "target_road", cfg.target_road, "");
  take(doc, "history_len", cfg.model.history_len, "");
  take(doc, "space_width", cfg.model.space_width, "");
  take(doc, "intersection_slots", cfg.model.intersection_slots, "");
  take(doc, "horizon_count", cfg.model.horizon_count, "");

  if (auto it = doc.find("model"); it != doc.end()) {
    if (!it->is_object()) raise(Errc::bad_config, "config field model must be an object");
    ordered_json model = *it;
    doc.erase(it);
    take(model, "feature_dim", cfg.model.feature_dim, "model.");
    take(model, "conv_channels", cfg.model.conv_channels, "model.");
    take(model, "target_layers", cfg.model.target_layers, "model.");
    take(model, "target_hidden", cfg.model.target_hidden, "model.");
    take(model, "temporal_layers", cfg.model.temporal_layers, "model.");
    take(model, "temporal_hidden", cfg.model.temporal_hidden, "model.");
    take(model, "temporal_out", cfg.model.temporal_out, "model.");
    take(model, "spatial_layers", cfg.model.spatial_layers, "model.");
    take(model, "baseline_layers", cfg.model.baseline_layers, "model.");
    take(model, "baseline_hidden", cfg.model.baseline_hidden, "model.");
    reject_leftovers(model, "model.");
  }

  if (auto it = doc.find("train"); it != doc.end()) {
    if (!it->is_object()) raise(Errc::bad_config, "config field train must be an object");
    ordered_json train = *it;
    doc.erase(it);
    take(train, "learning_rate", cfg.train.learning_rate, "train.");
    take(train, "batch_size", cfg.train.batch_size, "train.");
    take(train, "max_epochs", cfg.train.max_epochs, "train.");
    take(train, "patience", cfg.train.patience, "train.");
    reject_leftovers(train, "train.");
  }

  take(doc, "split", cfg.split, "");
  std::uint64_t seed = cfg.model.seed;
  take(doc, "seed", seed, "");
  cfg.model.seed = seed;
  cfg.train.seed = seed;
  take(doc, "baseline", cfg.baseline, "");
  reject_leftovers(doc, "");
  return cfg;
}

void save_experiment_config(const ExperimentConfig& config, const std::string& path) {
  ordered_json doc;
  doc["schema_version"] = kConfigSchemaVersion;
  doc["paths"] = {{"edges", config.edges_path},
                  {"speeds", config.speeds_path},
                  {"output_dir", config.output_dir}};
  doc["target_road"] = config.target_road;
  doc["history_len"] = config.model.history_len;
  doc["space_width"] = config.model.space_width;
  doc["intersection_slots"] = config.model.intersection_slots;
  doc["horizon_count"] = config.model.horizon_count;
  doc["model"] = {{"feature_dim", config.model.feature_dim},
                  {"conv_channels", config.model.conv_channels},
                  {"target_layers", config.model.target_layers},
                  {"target_hidden", config.model.target_hidden},
                  {"temporal_layers", config.model.temporal_layers},
                  {"temporal_hidden", config.model.temporal_hidden},
                  {"temporal_out", config.model.temporal_out},
                  {"spatial_layers", config.model.spatial_layers},
                  {"baseline_layers", config.model.baseline_layers},
                  {"baseline_hidden", config.model.baseline_hidden}};
  doc["train"] = {{"learning_rate", config.train.learning_rate},
                  {"batch_size", config.train.batch_size},
                  {"max_epochs", config.train.max_epochs},
                  {"patience", config.train.patience}};
  doc["split"] = config.split;
  doc["seed"] = config.model.seed;
  doc["baseline"] = config.baseline;
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(Errc::io_error, "cannot open " + path + " for writing");
  out << doc.dump(2) << '\n';
  if (!out) raise(Errc::io_error, "failed writing " + path);
}

// ---- speed-store cache ------------------------------------------------------

void save_store(const SpeedStore& store, const std::string& path) {
  const Eigen::Index len = store.length();
  for (const auto& [road, series] : store.series) {
    if (static_cast<Eigen::Index>(series.size()) != len)
      raise(Errc::bad_config, "store series lengths differ at road " + std::to_string(road));
    for (double v : series)
      if (!std::isfinite(v) || v <= 0.0)
        raise(Errc::bad_config, "store has a non-positive speed at road " + std::to_string(road));
  }

  binio::ByteWriter w;
  w.bytes(kStoreMagic.data(), kStoreMagic.size());
  w.u16(kStoreVersion);
  w.u64(static_cast<std::uint64_t>(store.interval_seconds));
  w.u64(static_cast<std::uint64_t>(store.start_epoch_seconds));
  w.u64(store.series.size());
  for (const auto& [road, series] : store.series) {
    w.u64(road);
    w.u64(series.size());
    for (double v : series) w.f64(v);
  }
  const std::uint32_t crc = binio::crc32(w.buffer());
  binio::ByteWriter trailer = std::move(w);
  trailer.u32(crc);
  binio::write_file(path, trailer.buffer());
}

SpeedStore load_store(const std::string& path) {
  const std::string blob = binio::read_file(path);
  if (blob.size() < kStoreMagic.size() + 2 + 4 ||
      std::string_view(blob).substr(0, kStoreMagic.size()) != kStoreMagic)
    raise(Errc::corrupt_checksum, "store file " + path + " does not start with the store magic");
  const std::string_view body(blob.data(), blob.size() - 4);
  binio::ByteReader crc_reader(std::string_view(blob).substr(blob.size() - 4), path);
  if (binio::crc32(body) != crc_reader.u32())
    raise(Errc::corrupt_checksum, "store file " + path + " fails its checksum");

  binio::ByteReader r(body, path);
  SpeedStore store;
  try {
    r.bytes(kStoreMagic.size());
    const std::uint16_t version = r.u16();
    if (version > kStoreVersion)
      raise(Errc::version_mismatch, "store file " + path + " has version " +
                                        std::to_string(version) +
                                        "; this reader supports up to " +
                                        std::to_string(kStoreVersion));
    if (version < 1) raise(Errc::corrupt_checksum, "store file has version 0");
    store.interval_seconds = static_cast<std::int64_t>(r.u64());
    store.start_epoch_seconds = static_cast<std::int64_t>(r.u64());
    const std::uint64_t roads = r.u64();
    for (std::uint64_t i = 0; i < roads; ++i) {
      const RoadId road = r.u64();
      const std::uint64_t len = r.u64();
      std::vector<double> series(len);
      for (std::uint64_t j = 0; j < len; ++j) series[j] = r.f64();
      if (!store.series.emplace(road, std::move(series)).second)
        raise(Errc::corrupt_checksum, "store file repeats road " + std::to_string(road));
    }
    if (!r.exhausted())
      raise(Errc::corrupt_checksum, "store file " + path + " has trailing bytes");
  } catch (const Error& e) {
    if (e.code() == Errc::version_mismatch) throw;
    raise(Errc::corrupt_checksum, std::string("store file is damaged: ") + e.what());
  }
  return store;
}

SpeedStore load_speeds_auto(const std::string& path) {
  {
    std::ifstream probe(path, std::ios::binary);
    if (!probe) raise(Errc::io_error, "cannot open " + path);
    char head[4] = {};
    probe.read(head, 4);
    if (probe.gcount() == 4 && std::string_view(head, 4) == kStoreMagic) return load_store(path);
  }
  return load_road_csv(path);
}

// ---- experiment assembly ----------------------------------------------------

ExperimentData prepare_experiment(const ExperimentConfig& config, RoadNetwork net,
                                  SpeedStore store) {
  validate(config);
  ExperimentData data;
  data.net = std::move(net);
  data.store = std::move(store);
  const FeatureMap features = make_features(data.store, data.store.length());
  data.plan = build_plan(data.net, config.target_road, features, config.model.intersection_slots,
                         config.model.space_width);
  Dataset all = make_dataset(data.plan, data.store, config.model.history_len,
                             config.model.horizon_count, 0, data.store.length());
  data.raw = chrono_split(std::move(all), config.split);
  data.fitted = fit_normalizer(data.raw.train, data.store);
  return data;
}

ExperimentData prepare_experiment(const ExperimentConfig& config) {
  SpeedStore store = load_speeds_auto(config.speeds_path);
  std::vector<RoadId> extra;
  extra.reserve(store.series.size());
  for (const auto& [road, series] : store.series) extra.push_back(road);
  RoadNetwork net = load_edge_list(config.edges_path, extra);
  return prepare_experiment(config, std::move(net), std::move(store));
}

SampleForward make_sample_forward(const ModelConfig& config, bool baseline) {
  if (baseline) {
    return [config](const Sample& s, const ParamSet& p) {
      return baseline_forward(s.s_tar, p, config);
    };
  }
  return [config](const Sample& s, const ParamSet& p) { return forward(s, p, config); };
}

bool is_baseline_params(const ParamSet& params) { return params.has("baseline.lstm.L0.W_f"); }

ExperimentResult train_experiment(const ExperimentConfig& config, const ExperimentData& data) {
  validate(config);
  const ParamSet start =
      config.baseline ? init_baseline_params(config.model) : init_params(config.model);
  const SampleForward fwd = make_sample_forward(config.model, config.baseline);
  const Dataset train_set = normalize_samples(data.raw.train, data.plan, data.fitted);
  const Dataset val_set = normalize_samples(data.raw.val, data.plan, data.fitted);
  TrainResult r =
      train(start, fwd, train_set, val_set, data.fitted, config.target_road, config.train);
  for (const EpochRecord& e : r.history) {
    if (!std::isfinite(e.train_loss) || !std::isfinite(e.val_rmspe_p1))
      raise(Errc::non_finite_result,
            "training diverged: non-finite loss at epoch " + std::to_string(e.epoch));
  }

  ExperimentResult out;
  out.history = std::move(r.history);
  out.best_epoch = r.best_epoch;
  out.best_val = r.best_val;
  out.checkpoint.config = config.model;
  out.checkpoint.normalizer = data.fitted;
  out.checkpoint.target_road = config.target_road;
  out.checkpoint.provenance = std::string("train;target=") + std::to_string(config.target_road) +
                              ";seed=" + std::to_string(config.model.seed) +
                              (config.baseline ? ";baseline" : "");
  out.checkpoint.params = std::move(r.best_params);
  return out;
}

MetricsReport evaluate_checkpoint(const Checkpoint& ckpt, const Dataset& raw_samples,
                                  const ReconstructionPlan& plan, RoadId target_road) {
  if (raw_samples.empty()) raise(Errc::empty_dataset, "no samples to evaluate");
  const Dataset samples = normalize_samples(raw_samples, plan, ckpt.normalizer);
  for (const Sample& s : samples) {
    if (!sample_matches(ckpt.config, s))
      raise(Errc::config_mismatch, "sample shapes do not match the checkpoint's configuration");
  }
  const SampleForward fwd = make_sample_forward(ckpt.config, is_baseline_params(ckpt.params));
  return evaluate(ckpt.params, fwd, samples, ckpt.normalizer, target_road);
}

Checkpoint transfer_experiment(const Checkpoint& ckpt, const ExperimentData& data,
                               RoadId new_road, int sample_count, const FineTuneConfig& ft) {
  if (data.plan.target != new_road)
    raise(Errc::config_mismatch, "prepared data was built around road " +
                                     std::to_string(data.plan.target) + ", not road " +
                                     std::to_string(new_road));
  if (sample_count < 0) raise(Errc::bad_config, "sample_count must be non-negative");
  const Dataset& pool = data.raw.train;
  const std::size_t used = std::min<std::size_t>(static_cast<std::size_t>(sample_count),
                                                 pool.size());
  const Dataset head_raw(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(used));
  const Dataset head = normalize_samples(head_raw, data.plan, ckpt.normalizer);

  Checkpoint out;
  out.config = ckpt.config;
  out.normalizer = ckpt.normalizer;
  out.target_road = new_road;
  out.provenance = std::string("transfer;road=") + std::to_string(new_road) +
                   ";samples=" + std::to_string(used) + ";parent=[" + ckpt.provenance + "]";
  out.params = fine_tune_transfer(ckpt, head, new_road, ft);
  return out;
}

// ---- SVG report -------------------------------------------------------------

namespace {

constexpr double kPanelW = 560.0;
constexpr double kPanelH = 360.0;
constexpr double kMarginL = 70.0;
constexpr double kMarginR = 24.0;
constexpr double kMarginT = 44.0;
constexpr double kMarginB = 52.0;

/// Affine map from a data interval onto a pixel interval; a degenerate data
/// interval maps everything to the pixel midpoint.
struct LinMap {
  double lo = 0.0, hi = 1.0, p0 = 0.0, p1 = 1.0;
  double operator()(double v) const {
    if (hi <= lo) return (p0 + p1) / 2.0;
    return p0 + (v - lo) / (hi - lo) * (p1 - p0);
  }
};

void panel_frame(std::string& svg, double ox, const std::string& title) {
  svg += "  <g>\n";
  svg += "    <rect x=\"" + fmt_fixed(ox + kMarginL, 2) + "\" y=\"" + fmt_fixed(kMarginT, 2) +
         "\" width=\"" + fmt_fixed(kPanelW - kMarginL - kMarginR, 2) + "\" height=\"" +
         fmt_fixed(kPanelH - kMarginT - kMarginB, 2) +
         "\" fill=\"none\" stroke=\"#444444\" stroke-width=\"1\"/>\n";
  svg += "    <text x=\"" + fmt_fixed(ox + kPanelW / 2.0, 2) +
         "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">" +
         title + "</text>\n";
}

void axis_labels(std::string& svg, double ox, const LinMap& x, const LinMap& y) {
  const double bottom = kPanelH - kMarginB;
  svg += "    <text x=\"" + fmt_fixed(ox + kMarginL, 2) + "\" y=\"" + fmt_fixed(bottom + 18, 2) +
         "\" font-family=\"sans-serif\" font-size=\"11\">" + fmt_label(x.lo) + "</text>\n";
  svg += "    <text x=\"" + fmt_fixed(ox + kPanelW - kMarginR, 2) + "\" y=\"" +
         fmt_fixed(bottom + 18, 2) + "\" text-anchor=\"end\" font-family=\"sans-serif\" " +
         "font-size=\"11\">" + fmt_label(x.hi) + "</text>\n";
  svg += "    <text x=\"" + fmt_fixed(ox + kMarginL - 6, 2) + "\" y=\"" + fmt_fixed(bottom, 2) +
         "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" + fmt_label(y.lo) +
         "</text>\n";
  svg += "    <text x=\"" + fmt_fixed(ox + kMarginL - 6, 2) + "\" y=\"" +
         fmt_fixed(kMarginT + 10, 2) +
         "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" + fmt_label(y.hi) +
         "</text>\n";
}

void history_panel(std::string& svg, double ox, const History& history) {
  panel_frame(svg, ox, "training loss by epoch");
  double e_lo = history.empty() ? 0.0 : history.front().epoch;
  double e_hi = e_lo, l_lo = history.empty() ? 0.0 : history.front().train_loss, l_hi = l_lo;
  double v_lo = history.empty() ? 0.0 : history.front().val_rmspe_p1, v_hi = v_lo;
  for (const EpochRecord& r : history) {
    e_lo = std::min(e_lo, static_cast<double>(r.epoch));
    e_hi = std::max(e_hi, static_cast<double>(r.epoch));
    l_lo = std::min(l_lo, r.train_loss);
    l_hi = std::max(l_hi, r.train_loss);
    v_lo = std::min(v_lo, r.val_rmspe_p1);
    v_hi = std::max(v_hi, r.val_rmspe_p1);
  }
  const LinMap x{e_lo, e_hi, ox + kMarginL, ox + kPanelW - kMarginR};
  const LinMap y{l_lo, l_hi, kPanelH - kMarginB, kMarginT};
  const LinMap yv{v_lo, v_hi, kPanelH - kMarginB, kMarginT};
  axis_labels(svg, ox, x, y);

  auto polyline = [&](const LinMap& ym, auto value, const char* style) {
    if (history.size() < 2) return;
    svg += std::string("    <polyline fill=\"none\" ") + style + " points=\"";
    for (std::size_t i = 0; i < history.size(); ++i) {
      if (i) svg += ' ';
      svg += fmt_fixed(x(history[i].epoch), 2) + "," + fmt_fixed(ym(value(history[i])), 2);
    }
    svg += "\"/>\n";
  };
  polyline(y, [](const EpochRecord& r) { return r.train_loss; },
           "stroke=\"#1f77b4\" stroke-width=\"1.5\"");
  polyline(yv, [](const EpochRecord& r) { return r.val_rmspe_p1; },
           "stroke=\"#d62728\" stroke-width=\"1.5\" stroke-dasharray=\"5,3\"");
  for (const EpochRecord& r : history) {
    svg += "    <circle class=\"loss-point\" cx=\"" + fmt_fixed(x(r.epoch), 2) + "\" cy=\"" +
           fmt_fixed(y(r.train_loss), 2) + "\" r=\"3\" fill=\"#1f77b4\"/>\n";
  }
  svg += "    <text x=\"" + fmt_fixed(ox + kMarginL + 8, 2) + "\" y=\"" +
         fmt_fixed(kMarginT + 16, 2) +
         "\" font-family=\"sans-serif\" font-size=\"11\" fill=\"#1f77b4\">train loss</text>\n";
  svg += "    <text x=\"" + fmt_fixed(ox + kMarginL + 8, 2) + "\" y=\"" +
         fmt_fixed(kMarginT + 30, 2) +
         "\" font-family=\"sans-serif\" font-size=\"11\" fill=\"#d62728\">val error %" +
         "</text>\n";
  svg += "  </g>\n";
}

void scatter_panel(std::string& svg, double ox, const MetricsReport& report) {
  panel_frame(svg, ox, "predicted vs true speed, horizon 1");
  const HorizonMetrics& h = report.horizons.front();
  double lo = h.true_mph.empty() ? 0.0 : h.true_mph.front();
  double hi = lo;
  for (double v : h.true_mph) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  for (double v : h.predicted_mph) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const LinMap x{lo, hi, ox + kMarginL, ox + kPanelW - kMarginR};
  const LinMap y{lo, hi, kPanelH - kMarginB, kMarginT};
  axis_labels(svg, ox, x, y);
  svg += "    <line x1=\"" + fmt_fixed(x(lo), 2) + "\" y1=\"" + fmt_fixed(y(lo), 2) +
         "\" x2=\"" + fmt_fixed(x(hi), 2) + "\" y2=\"" + fmt_fixed(y(hi), 2) +
         "\" stroke=\"#999999\" stroke-width=\"1\" stroke-dasharray=\"4,4\"/>\n";
  for (std::size_t i = 0; i < h.true_mph.size(); ++i) {
    svg += "    <circle class=\"pred-point\" cx=\"" + fmt_fixed(x(h.true_mph[i]), 2) +
           "\" cy=\"" + fmt_fixed(y(h.predicted_mph[i]), 2) +
           "\" r=\"3\" fill=\"#2ca02c\" fill-opacity=\"0.7\"/>\n";
  }
  svg += "  </g>\n";
}

}  // namespace

void render_report_svg(const std::optional<History>& history,
                       const std::optional<MetricsReport>& report, const std::string& path) {
  const bool has_scatter = report.has_value() && !report->horizons.empty();
  int panels = (history.has_value() ? 1 : 0) + (has_scatter ? 1 : 0);
  if (panels == 0) raise(Errc::bad_config, "nothing to plot: no history and no metrics given");

  const double width = kPanelW * panels;
  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt_fixed(width, 0) +
                    "\" height=\"" + fmt_fixed(kPanelH, 0) + "\" viewBox=\"0 0 " +
                    fmt_fixed(width, 0) + " " + fmt_fixed(kPanelH, 0) + "\">\n";
  svg += "  <rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n";
  double ox = 0.0;
  if (history.has_value()) {
    history_panel(svg, ox, *history);
    ox += kPanelW;
  }
  if (has_scatter) scatter_panel(svg, ox, *report);
  svg += "</svg>\n";
  binio::write_file(path, svg);
}

}  // namespace irnet

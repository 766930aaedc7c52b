#include "irnet/train_eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "json.hpp"

#include "irnet/rng.hpp"

namespace irnet {

namespace {

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;
constexpr int kMetricsSchemaVersion = 1;

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Forwards one batch and returns (stacked predictions, normalized targets).
std::pair<Tensor, Tensor> batch_forward(const SampleForward& forward_fn, const ParamSet& params,
                                        const Dataset& samples,
                                        const std::vector<std::size_t>& indices,
                                        std::size_t begin, std::size_t end,
                                        const Normalizer& normalizer, RoadId target_road) {
  std::vector<Tensor> rows;
  rows.reserve(end - begin);
  Eigen::Index horizon_count = -1;
  Eigen::MatrixXd targets;
  for (std::size_t i = begin; i < end; ++i) {
    const Sample& s = samples[indices[i]];
    Tensor out = forward_fn(s, params);
    if (out.rank() != 1) raise(Errc::shape_mismatch, "model output must be rank 1");
    if (horizon_count < 0) {
      horizon_count = out.dim(0);
      targets.resize(static_cast<Eigen::Index>(end - begin), horizon_count);
    }
    if (out.dim(0) != horizon_count || s.labels.size() != horizon_count) {
      raise(Errc::shape_mismatch, "model output and labels must all have one horizon count");
    }
    for (Eigen::Index p = 0; p < horizon_count; ++p) {
      targets(static_cast<Eigen::Index>(i - begin), p) =
          normalizer.apply(target_road, s.labels[p]);
    }
    rows.push_back(reshape(out, {1, horizon_count}));
  }
  return {concat(rows, 0), Tensor::from_matrix(targets)};
}

double validation_rmspe_p1(const ParamSet& params, const SampleForward& forward_fn,
                           const Dataset& val_set, const Normalizer& normalizer,
                           RoadId target_road) {
  NoGradGuard guard;
  std::vector<double> truth, predicted;
  truth.reserve(val_set.size());
  predicted.reserve(val_set.size());
  for (const Sample& s : val_set) {
    Tensor out = forward_fn(s, params);
    if (out.rank() != 1 || out.size() < 1 || s.labels.size() < 1) {
      raise(Errc::shape_mismatch, "model output must be rank 1 with at least one horizon");
    }
    truth.push_back(s.labels[0]);
    predicted.push_back(normalizer.invert(target_road, out[0]));
  }
  return rmspe(truth, predicted);
}

}  // namespace

void validate(const TrainConfig& config) {
  if (!(config.learning_rate >= 0.0) || !std::isfinite(config.learning_rate)) {
    raise(Errc::bad_config, "learning_rate must be finite and >= 0");
  }
  if (config.batch_size < 1) raise(Errc::bad_config, "batch_size must be >= 1");
  if (config.max_epochs < 1) raise(Errc::bad_config, "max_epochs must be >= 1");
  if (config.patience < 1) raise(Errc::bad_config, "patience must be >= 1");
  if (config.patience > config.max_epochs) {
    raise(Errc::bad_config, "patience cannot exceed max_epochs");
  }
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  if (!pred.defined() || !target.defined() || pred.shape() != target.shape()) {
    raise(Errc::shape_mismatch, "mse_loss: prediction and target shapes must match");
  }
  Tensor diff = sub(pred, target);
  return scale(sum(mul(diff, diff)), 1.0 / static_cast<double>(pred.size()));
}

void adam_step(ParamSet& params, AdamState& state, double learning_rate) {
  ++state.step;
  const double correction1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(state.step));
  const double correction2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(state.step));
  for (auto& [name, t] : params.tensors) {
    if (!t.requires_grad()) continue;
    const Eigen::ArrayXd& g = t.grad();
    Eigen::ArrayXd& m = state.m[name];
    Eigen::ArrayXd& v = state.v[name];
    if (m.size() == 0) m = Eigen::ArrayXd::Zero(t.size());
    if (v.size() == 0) v = Eigen::ArrayXd::Zero(t.size());
    if (m.size() != t.size() || v.size() != t.size()) {
      raise(Errc::shape_mismatch, "adam_step: state for '" + name +
                                      "' was built for a different tensor size");
    }
    m = kAdamBeta1 * m + (1.0 - kAdamBeta1) * g;
    v = kAdamBeta2 * v + (1.0 - kAdamBeta2) * g * g;
    t.values_mut() -= learning_rate * (m / correction1) / ((v / correction2).sqrt() + kAdamEps);
  }
}

namespace {

void check_metric_inputs(const std::vector<double>& y_true, const std::vector<double>& y_pred) {
  if (y_true.size() != y_pred.size() || y_true.empty()) {
    raise(Errc::length_mismatch, "metric inputs must have equal nonzero lengths (" +
                                     std::to_string(y_true.size()) + " vs " +
                                     std::to_string(y_pred.size()) + ")");
  }
  for (double y : y_true) {
    if (!(y > 0.0)) {
      raise(Errc::zero_true_value, "true speeds must be positive, got " + fmt_double(y));
    }
  }
}

}  // namespace

double rmspe(const std::vector<double>& y_true, const std::vector<double>& y_pred) {
  check_metric_inputs(y_true, y_pred);
  double acc = 0.0;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    const double r = (y_true[i] - y_pred[i]) / y_true[i];
    acc += r * r;
  }
  return std::sqrt(acc / static_cast<double>(y_true.size())) * 100.0;
}

double mape(const std::vector<double>& y_true, const std::vector<double>& y_pred) {
  check_metric_inputs(y_true, y_pred);
  double acc = 0.0;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    acc += std::abs(y_true[i] - y_pred[i]) / y_true[i];
  }
  return acc / static_cast<double>(y_true.size()) * 100.0;
}

MetricsReport evaluate(const ParamSet& params, const SampleForward& forward_fn,
                       const Dataset& samples, const Normalizer& normalizer,
                       RoadId target_road) {
  if (samples.empty()) raise(Errc::empty_dataset, "evaluate: no samples");
  NoGradGuard guard;

  MetricsReport report;
  report.sample_count = samples.size();
  Eigen::Index horizon_count = -1;
  for (const Sample& s : samples) {
    Tensor out = forward_fn(s, params);
    if (out.rank() != 1) raise(Errc::shape_mismatch, "model output must be rank 1");
    if (horizon_count < 0) {
      horizon_count = out.dim(0);
      report.horizons.resize(static_cast<std::size_t>(horizon_count));
    }
    if (out.dim(0) != horizon_count || s.labels.size() != horizon_count) {
      raise(Errc::shape_mismatch, "model output and labels must all have one horizon count");
    }
    for (Eigen::Index p = 0; p < horizon_count; ++p) {
      HorizonMetrics& h = report.horizons[static_cast<std::size_t>(p)];
      h.true_mph.push_back(s.labels[p]);
      h.predicted_mph.push_back(normalizer.invert(target_road, out[p]));
    }
  }
  for (HorizonMetrics& h : report.horizons) {
    h.rmspe_pct = rmspe(h.true_mph, h.predicted_mph);
    h.mape_pct = mape(h.true_mph, h.predicted_mph);
  }
  return report;
}

TrainResult train(const ParamSet& start, const SampleForward& forward_fn,
                  const Dataset& train_set, const Dataset& val_set, const Normalizer& normalizer,
                  RoadId target_road, const TrainConfig& config) {
  validate(config);
  if (train_set.empty()) raise(Errc::empty_dataset, "train: empty training set");
  if (val_set.empty()) raise(Errc::empty_dataset, "train: empty validation set");

  ParamSet working = start.clone();
  working.set_requires_grad(true);
  Rng rng(config.seed);
  AdamState adam;

  TrainResult result;
  result.best_val = std::numeric_limits<double>::infinity();
  int epochs_since_improvement = 0;

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t begin = 0; begin < order.size();
         begin += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end =
          std::min(order.size(), begin + static_cast<std::size_t>(config.batch_size));
      working.zero_grad();
      auto [pred, target] =
          batch_forward(forward_fn, working, train_set, order, begin, end, normalizer,
                        target_road);
      Tensor loss = mse_loss(pred, target);
      backward(loss);
      adam_step(working, adam, config.learning_rate);
      loss_sum += loss.value() * static_cast<double>(end - begin);
    }

    const double train_loss = loss_sum / static_cast<double>(train_set.size());
    const double val_metric =
        validation_rmspe_p1(working, forward_fn, val_set, normalizer, target_road);
    result.history.push_back({epoch, train_loss, val_metric});

    if (val_metric < result.best_val) {
      result.best_val = val_metric;
      result.best_epoch = epoch;
      result.best_params = working.clone();
      epochs_since_improvement = 0;
    } else if (++epochs_since_improvement >= config.patience) {
      break;
    }
  }
  return result;
}

ParamSet fine_tune_transfer(const Checkpoint& ckpt, const Dataset& samples, RoadId new_road,
                            const FineTuneConfig& config) {
  if (samples.empty()) raise(Errc::empty_fine_tune_set, "no samples to fine-tune on");
  if (config.max_steps < 0) raise(Errc::bad_config, "max_steps must be >= 0");
  if (!(config.learning_rate >= 0.0) || !std::isfinite(config.learning_rate)) {
    raise(Errc::bad_config, "learning_rate must be finite and >= 0");
  }
  if (config.patience < 1) raise(Errc::bad_config, "patience must be >= 1");
  for (const Sample& s : samples) {
    if (!sample_matches(ckpt.config, s)) {
      raise(Errc::config_mismatch, "sample shapes disagree with the checkpoint's model config");
    }
  }
  if (!ckpt.normalizer.has(new_road)) {
    raise(Errc::config_mismatch, "checkpoint normalizer does not cover road " +
                                     std::to_string(new_road));
  }

  ParamSet working = ckpt.params.clone();
  for (auto& [name, t] : working.tensors) {
    t.set_requires_grad(name.rfind("head.", 0) == 0);
  }

  Eigen::MatrixXd targets(static_cast<Eigen::Index>(samples.size()),
                          ckpt.config.horizon_count);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    for (Eigen::Index p = 0; p < targets.cols(); ++p) {
      targets(static_cast<Eigen::Index>(i), p) =
          ckpt.normalizer.apply(new_road, samples[i].labels[p]);
    }
  }
  const Tensor target_tensor = Tensor::from_matrix(targets);

  auto full_batch_loss = [&](const ParamSet& params) {
    std::vector<Tensor> rows;
    rows.reserve(samples.size());
    for (const Sample& s : samples) {
      rows.push_back(reshape(forward(s, params, ckpt.config), {1, targets.cols()}));
    }
    return mse_loss(concat(rows, 0), target_tensor);
  };

  ParamSet best = working.clone();
  double best_loss = std::numeric_limits<double>::infinity();
  AdamState adam;
  int steps_since_improvement = 0;

  for (int step = 0; step < config.max_steps; ++step) {
    working.zero_grad();
    Tensor loss = full_batch_loss(working);
    if (loss.value() < best_loss) {
      best_loss = loss.value();
      best = working.clone();
      steps_since_improvement = 0;
    } else if (++steps_since_improvement >= config.patience) {
      break;
    }
    backward(loss);
    adam_step(working, adam, config.learning_rate);
  }
  if (config.max_steps > 0) {
    // The parameters after the final update were never scored in the loop.
    NoGradGuard guard;
    if (full_batch_loss(working).value() < best_loss) best = working.clone();
  }
  for (auto& [name, t] : best.tensors) t.set_requires_grad(false);
  return best;
}

void save_history_csv(const History& history, const std::string& path) {
  std::ostringstream out;
  out << "epoch,train_loss,val_rmspe_p1\n";
  for (const EpochRecord& r : history) {
    out << r.epoch << ',' << fmt_double(r.train_loss) << ',' << fmt_double(r.val_rmspe_p1)
        << '\n';
  }
  std::ofstream file(path, std::ios::binary);
  if (!file.good()) raise(Errc::io_error, "cannot open '" + path + "' for writing");
  file << out.str();
  if (!file.good()) raise(Errc::io_error, "failed writing '" + path + "'");
}

History load_history_csv(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file.good()) raise(Errc::io_error, "cannot open '" + path + "'");
  std::string line;
  if (!std::getline(file, line) || (line != "epoch,train_loss,val_rmspe_p1" &&
                                    line != "epoch,train_loss,val_rmspe_p1\r")) {
    raise(Errc::malformed_row, path + ":1: expected header epoch,train_loss,val_rmspe_p1");
  }
  History history;
  std::size_t line_no = 1;
  while (std::getline(file, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    EpochRecord r;
    char trailing = 0;
    if (std::sscanf(line.c_str(), "%d,%lf,%lf%c", &r.epoch, &r.train_loss, &r.val_rmspe_p1,
                    &trailing) != 3) {
      raise(Errc::malformed_row,
            path + ":" + std::to_string(line_no) + ": expected epoch,train_loss,val_rmspe_p1");
    }
    history.push_back(r);
  }
  return history;
}

void save_metrics_json(const MetricsReport& report, const std::string& path) {
  nlohmann::ordered_json doc;
  doc["schema_version"] = kMetricsSchemaVersion;
  doc["sample_count"] = report.sample_count;
  nlohmann::ordered_json horizons = nlohmann::ordered_json::array();
  for (std::size_t p = 0; p < report.horizons.size(); ++p) {
    const HorizonMetrics& h = report.horizons[p];
    nlohmann::ordered_json row;
    row["horizon"] = p + 1;
    row["rmspe_pct"] = h.rmspe_pct;
    row["mape_pct"] = h.mape_pct;
    row["true_mph"] = h.true_mph;
    row["predicted_mph"] = h.predicted_mph;
    horizons.push_back(std::move(row));
  }
  doc["horizons"] = std::move(horizons);

  std::ofstream file(path, std::ios::binary);
  if (!file.good()) raise(Errc::io_error, "cannot open '" + path + "' for writing");
  file << doc.dump(2) << '\n';
  if (!file.good()) raise(Errc::io_error, "failed writing '" + path + "'");
}

MetricsReport load_metrics_json(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file.good()) raise(Errc::io_error, "cannot open '" + path + "'");
  nlohmann::json doc;
  try {
    file >> doc;
    const int version = doc.at("schema_version").get<int>();
    if (version > kMetricsSchemaVersion) {
      raise(Errc::version_mismatch, path + ": metrics schema version " +
                                        std::to_string(version) + " is newer than supported " +
                                        std::to_string(kMetricsSchemaVersion));
    }
    if (version < 1) raise(Errc::bad_config, path + ": invalid schema version");
    MetricsReport report;
    report.sample_count = doc.at("sample_count").get<std::size_t>();
    for (const auto& row : doc.at("horizons")) {
      HorizonMetrics h;
      h.rmspe_pct = row.at("rmspe_pct").get<double>();
      h.mape_pct = row.at("mape_pct").get<double>();
      h.true_mph = row.at("true_mph").get<std::vector<double>>();
      h.predicted_mph = row.at("predicted_mph").get<std::vector<double>>();
      report.horizons.push_back(std::move(h));
    }
    return report;
  } catch (const nlohmann::json::exception& e) {
    raise(Errc::bad_config, path + ": malformed metrics document (" + e.what() + ")");
  }
}

}  // namespace irnet

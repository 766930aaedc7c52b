#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "irnet/model.hpp"

namespace irnet {

/// Mini-batch training regime. learning_rate may be zero (a frozen run);
/// every other field must be positive and patience cannot exceed max_epochs.
struct TrainConfig {
  double learning_rate = 0.001;
  int batch_size = 16;
  int max_epochs = 500;
  int patience = 20;  // epochs without validation improvement before stopping
  std::uint64_t seed = 0;
};

/// Raises BadConfig on violations.
void validate(const TrainConfig& config);

/// Per-horizon accuracy on raw (denormalized) speeds, plus the collected
/// truth/prediction arrays the percentages were computed from, so reports
/// and plots can be rebuilt without re-running the model.
struct HorizonMetrics {
  double rmspe_pct = 0.0;
  double mape_pct = 0.0;
  std::vector<double> true_mph;
  std::vector<double> predicted_mph;
};

struct MetricsReport {
  std::vector<HorizonMetrics> horizons;  // index p-1 holds horizon p
  std::size_t sample_count = 0;
};

struct EpochRecord {
  int epoch = 0;            // 1-based
  double train_loss = 0.0;  // mean squared error over the epoch, normalized space
  double val_rmspe_p1 = 0.0;  // validation RMSPE % at horizon 1, raw speeds
};

using History = std::vector<EpochRecord>;

struct TrainResult {
  ParamSet best_params;  // parameters achieving best_val, not the last epoch's
  History history;
  int best_epoch = 0;
  double best_val = 0.0;
};

/// Model evaluation hook: maps one sample to its normalized prediction
/// vector using the given parameters. Both the full prediction model and the
/// target-only baseline fit this signature.
using SampleForward = std::function<Tensor(const Sample& sample, const ParamSet& params)>;

/// Mean over all entries of the squared difference; shapes must be equal.
/// Errors: ShapeMismatch.
Tensor mse_loss(const Tensor& pred, const Tensor& target);

/// First and second gradient moments per named tensor, plus the shared step
/// counter. One state object must stay with one parameter set.
struct AdamState {
  std::map<std::string, Eigen::ArrayXd> m;
  std::map<std::string, Eigen::ArrayXd> v;
  std::int64_t step = 0;
};

/// One bias-corrected Adam update (beta1 0.9, beta2 0.999, eps 1e-8) applied
/// in place to every tensor with requires_grad set, reading the gradients
/// accumulated on the tensors. Frozen tensors are skipped entirely.
/// Errors: ShapeMismatch (state entry sized for a different tensor).
void adam_step(ParamSet& params, AdamState& state, double learning_rate);

/// Root-mean-square percentage error, in percent. All true values must be
/// positive and lengths equal and nonzero.
/// Errors: ZeroTrueValue, LengthMismatch.
double rmspe(const std::vector<double>& y_true, const std::vector<double>& y_pred);

/// Mean absolute percentage error, in percent. Same preconditions.
double mape(const std::vector<double>& y_true, const std::vector<double>& y_pred);

/// Runs the model over every sample, inverts the normalization for
/// `target_road`, and computes per-horizon RMSPE/MAPE on raw speeds.
/// Errors: EmptyDataset, ShapeMismatch, UnknownRoad.
MetricsReport evaluate(const ParamSet& params, const SampleForward& forward_fn,
                       const Dataset& samples, const Normalizer& normalizer, RoadId target_road);

/// Mini-batch training with early stopping: shuffled batches per epoch
/// (seeded), MSE on normalized labels across all horizons jointly, Adam
/// updates, and per-epoch validation RMSPE at horizon 1. Keeps the
/// parameters of the best validation epoch and stops after `patience`
/// epochs without strict improvement. The input parameters are not
/// modified. Errors: BadConfig, EmptyDataset.
TrainResult train(const ParamSet& start, const SampleForward& forward_fn,
                  const Dataset& train_set, const Dataset& val_set, const Normalizer& normalizer,
                  RoadId target_road, const TrainConfig& config);

/// Head-only adaptation regime: full-batch Adam steps on the regression
/// head with patience on the fine-tune loss.
struct FineTuneConfig {
  int max_steps = 200;
  double learning_rate = 0.001;
  int patience = 20;
};

/// Adapts a trained checkpoint to a new target road: every tensor outside
/// the "head." prefix is frozen (and returned bit-identical), the head is
/// fine-tuned on the given samples (inputs normalized, labels raw mph,
/// normalized for the loss with the checkpoint's normalizer), and the
/// parameters with the best fine-tune loss are returned. Zero steps return
/// an exact copy. Errors: EmptyFineTuneSet, ConfigMismatch (sample shapes
/// disagree with the checkpoint's config, or the normalizer does not cover
/// the new road), BadConfig.
ParamSet fine_tune_transfer(const Checkpoint& ckpt, const Dataset& samples, RoadId new_road,
                            const FineTuneConfig& config = {});

/// History CSV: header `epoch,train_loss,val_rmspe_p1`, one row per epoch,
/// round-trip float formatting. Errors: IoError; MalformedRow on load.
void save_history_csv(const History& history, const std::string& path);
History load_history_csv(const std::string& path);

/// Metrics JSON: versioned schema with per-horizon metric and speed arrays.
/// Errors: IoError; BadConfig (malformed document); VersionMismatch.
void save_metrics_json(const MetricsReport& report, const std::string& path);
MetricsReport load_metrics_json(const std::string& path);

}  // namespace irnet

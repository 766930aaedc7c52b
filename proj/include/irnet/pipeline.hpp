#pragma once

#include <array>
#include <optional>
#include <string>

#include "irnet/datagen.hpp"
#include "irnet/model.hpp"
#include "irnet/reconstruct.hpp"
#include "irnet/roadnet.hpp"
#include "irnet/train_eval.hpp"

namespace irnet {

/// One experiment, fully described: where the inputs live, which road to
/// predict, every model width, and the training regime. Serializes to a JSON
/// document so a run can be reproduced from its config file alone.
struct ExperimentConfig {
  std::string edges_path;
  std::string speeds_path;
  std::string output_dir;
  RoadId target_road = 0;
  ModelConfig model;                              // shapes, widths, init seed
  TrainConfig train;                              // regime, shuffle seed
  std::array<double, 3> split = {0.6, 0.2, 0.2};  // train/val/test fractions
  bool baseline = false;  // train the target-only recurrent baseline instead
};

/// Checks every sub-config and the split fractions. Errors: BadConfig,
/// BadFractions.
void validate(const ExperimentConfig& config);

/// JSON round trip. The file stores one seed which feeds both the
/// initializer and the shuffler; all fields are optional and default to the
/// values above; unknown keys are rejected so typos cannot silently revert a
/// setting to its default. Errors: IoError, BadConfig (schema violations),
/// VersionMismatch (file newer than this reader).
ExperimentConfig load_experiment_config(const std::string& path);
void save_experiment_config(const ExperimentConfig& config, const std::string& path);

/// Speed-store cache with a documented binary layout: magic "IRST", u16
/// version, i64 interval seconds, i64 start epoch seconds, u64 road count,
/// per road a u64 id + u64 length + little-endian f64 samples, and a
/// trailing CRC32 of everything before it. Errors: IoError, CorruptChecksum
/// (bad magic, CRC, or truncation), VersionMismatch.
void save_store(const SpeedStore& store, const std::string& path);
SpeedStore load_store(const std::string& path);

/// Loads a speed file whatever its form: the binary cache above (sniffed by
/// magic) or the road-level CSV. Errors as the underlying loader.
SpeedStore load_speeds_auto(const std::string& path);

/// Everything an experiment derives from its inputs before any parameters
/// exist. Samples are kept in raw mph so each consumer can normalize with
/// the scaler that matches its model (a freshly fitted one for training, the
/// checkpoint's own for evaluation and transfer).
struct ExperimentData {
  RoadNetwork net;
  SpeedStore store;
  ReconstructionPlan plan;
  SplitDataset raw;       // chronological split, raw mph throughout
  Normalizer fitted;      // per-road min-max fitted on the training window
};

/// Builds the plan around config.target_road (similarity features = full
/// series), assembles every admissible sample, splits chronologically, and
/// fits the normalizer on the training window. Errors: UnknownRoad,
/// RangeTooShort, BadConfig, and the underlying builders' codes.
ExperimentData prepare_experiment(const ExperimentConfig& config, RoadNetwork net,
                                  SpeedStore store);

/// File-reading variant: loads the speed store (cache or CSV) and the edge
/// list, with the store's roads joined in so isolated roads participate.
ExperimentData prepare_experiment(const ExperimentConfig& config);

/// Sample-level forward function for either architecture; the config is
/// captured by value.
SampleForward make_sample_forward(const ModelConfig& config, bool baseline);

/// True when the parameters belong to the target-only baseline rather than
/// the full network (decided by which recurrent stack the set carries).
bool is_baseline_params(const ParamSet& params);

struct ExperimentResult {
  Checkpoint checkpoint;
  History history;
  int best_epoch = 0;
  double best_val = 0.0;
};

/// Initializes parameters from config.model.seed, trains on the prepared
/// data (inputs normalized with data.fitted), and packages the best
/// parameters as a checkpoint whose provenance records the run
/// deterministically. Errors: the training errors, plus NonFiniteResult if
/// any recorded loss or validation metric is not finite.
ExperimentResult train_experiment(const ExperimentConfig& config, const ExperimentData& data);

/// Evaluates a checkpoint on raw-mph samples: inputs are normalized with the
/// checkpoint's own scaler, predictions inverted through it at target_road.
/// Errors: EmptyDataset, ConfigMismatch (sample shapes disagree with the
/// checkpoint), UnknownRoad (road not covered by the checkpoint's scaler).
MetricsReport evaluate_checkpoint(const Checkpoint& ckpt, const Dataset& raw_samples,
                                  const ReconstructionPlan& plan, RoadId target_road);

/// Adapts a checkpoint to a new road: takes the first `sample_count`
/// training-window samples of the prepared data (already built around the
/// new road), fine-tunes the regression head only, and returns a checkpoint
/// whose provenance references the parent's. Errors: EmptyFineTuneSet,
/// ConfigMismatch, plus the fine-tuning errors.
Checkpoint transfer_experiment(const Checkpoint& ckpt, const ExperimentData& data,
                               RoadId new_road, int sample_count,
                               const FineTuneConfig& ft = {});

/// Renders a static SVG report: a per-epoch loss panel when a history is
/// given (one marker per epoch, class "loss-point") and a predicted-vs-true
/// scatter for horizon 1 when a metrics report is given (class
/// "pred-point"). At least one input must be present. Errors: BadConfig
/// (nothing to plot), IoError.
void render_report_svg(const std::optional<History>& history,
                       const std::optional<MetricsReport>& report, const std::string& path);

}  // namespace irnet

#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "irnet/reconstruct.hpp"
#include "irnet/roadnet.hpp"

namespace irnet {

/// Per-road speed time series on one shared clock grid. Index i of any
/// series is the reading at start_epoch_seconds + i * interval_seconds.
/// All series have equal length and strictly positive, finite values.
struct SpeedStore {
  std::int64_t interval_seconds = 3600;
  std::int64_t start_epoch_seconds = 0;
  std::map<RoadId, std::vector<double>> series;

  Eigen::Index length() const { return series.empty() ? 0 : static_cast<Eigen::Index>(series.begin()->second.size()); }
};

/// One training instance: the target road's recent history, the stacked
/// adjacent-road matrices for both directions and all orders, and the future
/// speeds to predict. Values are raw mph as constructed; normalize_samples
/// produces the model-space version.
struct Sample {
  Eigen::Index t = 0;               // index of the last history step
  Eigen::VectorXd s_tar;            // length h
  std::vector<Eigen::MatrixXd> um;  // upstream, index d-1 is k^d x h
  std::vector<Eigen::MatrixXd> dm;  // downstream, same shapes
  Eigen::VectorXd labels;           // raw speeds at t+1 .. t+P
};

using Dataset = std::vector<Sample>;

struct SplitDataset {
  Dataset train;
  Dataset val;
  Dataset test;
};

/// Per-road min-max scaling fitted on training data only. apply maps into
/// [0,1] on the fit window; out-of-range values pass through unclamped, and
/// invert restores raw mph exactly.
class Normalizer {
 public:
  Normalizer() = default;
  explicit Normalizer(std::map<RoadId, std::pair<double, double>> ranges);

  double apply(RoadId road, double x) const;
  double invert(RoadId road, double y) const;
  bool has(RoadId road) const { return ranges_.count(road) > 0; }
  const std::map<RoadId, std::pair<double, double>>& ranges() const { return ranges_; }

 private:
  const std::pair<double, double>& range_of(RoadId road) const;
  std::map<RoadId, std::pair<double, double>> ranges_;  // road -> (min, max)
};

/// Reads sensor-level CSV (`sensor_id,road_id,timestamp_iso8601,speed_mph`,
/// header required) and averages sensors per (road, timestamp). Every road
/// must cover the full timestamp grid; with forward_fill set, interior gaps
/// repeat the previous value instead of failing (a leading gap always
/// fails). Errors: IoError, MalformedRow, NonPositiveSpeed,
/// MissingTimestamp.
SpeedStore ingest_sensor_csv(const std::string& path, std::int64_t interval_seconds = 3600,
                             bool forward_fill = false);

/// Road-level CSV (`road_id,timestamp_iso8601,speed_mph`, header required),
/// one row per road and grid point; duplicate (road, timestamp) rows are
/// malformed. Same grid rules as ingest_sensor_csv.
SpeedStore load_road_csv(const std::string& path, std::int64_t interval_seconds = 3600,
                         bool forward_fill = false);

/// Writes the road-level CSV form of a store. Deterministic: rows ordered by
/// road id then time, speeds printed with round-trip precision, so saving
/// the same store twice yields byte-identical files.
void save_road_csv(const SpeedStore& store, const std::string& path);

/// Stacks the slot roads' speed windows [t-h+1, t] into a (slots x h)
/// matrix; dumb slots yield rows of dumb_fill. Errors: WindowOutOfRange,
/// UnknownRoad.
Eigen::MatrixXd set_to_matrix(const OrderedRoadSet& set, const SpeedStore& store, Eigen::Index t,
                              int h, double dumb_fill);

/// Builds raw-mph samples for every admissible t with history and labels
/// inside [begin, end): t runs from begin+h-1 to end-P-1. Errors:
/// RangeTooShort (no admissible t), WindowOutOfRange, UnknownRoad.
Dataset make_dataset(const ReconstructionPlan& plan, const SpeedStore& store, int h, int P,
                     Eigen::Index begin, Eigen::Index end);

/// Chronological partition: earliest samples to train. Piece sizes are
/// floor(n * fraction) for val and test; the remainder goes to train.
/// Errors: BadFractions (negative entries or sum not 1 within 1e-9).
SplitDataset chrono_split(Dataset samples, const std::array<double, 3>& fractions = {0.6, 0.2,
                                                                                     0.2});

/// Fits per-road (min, max) over exactly the store indices the training
/// samples touch: [first.t - h + 1, last.t + P]. Later splits contribute
/// nothing. Errors: EmptyDataset, DegenerateRange (constant series).
Normalizer fit_normalizer(const Dataset& train, const SpeedStore& store);

/// Maps sample inputs into normalized space row by road: real rows via the
/// normalizer, dumb rows set to dumb_fill (0 = the neutral lower bound of
/// min-max space). Labels stay raw. Errors: UnknownRoad (road not fitted).
Dataset normalize_samples(const Dataset& samples, const ReconstructionPlan& plan,
                          const Normalizer& normalizer, double dumb_fill = 0.0);

/// Prefix of every series, for use as similarity features when building
/// plans; end exclusive. Errors: WindowOutOfRange.
FeatureMap make_features(const SpeedStore& store, Eigen::Index end);

/// Layout of the synthetic causal network: a layered DAG whose layer-0
/// roads follow a daily sinusoid and whose deeper roads are noisy linear
/// functions of their upstream parents one step earlier.
struct SynthSpec {
  int roads = 15;
  int layers = 3;
  int steps = 400;
  double noise = 1.0;    // uniform noise half-width, mph
  int max_parents = 3;   // upstream in-degree cap
};

struct SynthResult {
  RoadNetwork net;
  SpeedStore store;
  // Causal coefficients, child -> (parent -> weight) and child -> intercept,
  // for non-root roads: speed_child(t+1) = intercept + sum w * speed_parent(t)
  // (+ noise). With noise 0 the relation is exact, which tests rely on.
  std::map<RoadId, std::map<RoadId, double>> weights;
  std::map<RoadId, double> intercepts;
};

/// Deterministic synthetic generator: same spec and seed give bit-identical
/// results. Speeds stay well inside (0, 100) mph for sane specs; a floor at
/// 1 mph guards the store invariant under extreme noise settings. Errors:
/// BadSpec.
SynthResult synth_network(const SynthSpec& spec, std::uint64_t seed);

/// Dataset cache with a documented binary layout: magic "IRDS", u16
/// version, u32 h/P/k/w, u64 sample count, then per sample a u64 t followed
/// by little-endian 64-bit floats in row-major order (target history,
/// upstream matrices d=1..w, downstream matrices d=1..w, labels).
/// Errors: IoError, BadConfig (wrong magic or truncation), VersionMismatch.
struct DatasetCache {
  int h = 0;
  int P = 0;
  int k = 0;
  int w = 0;
  Dataset samples;
};

void save_dataset_cache(const DatasetCache& cache, const std::string& path);
DatasetCache load_dataset_cache(const std::string& path);

}  // namespace irnet

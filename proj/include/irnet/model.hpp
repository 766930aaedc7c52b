#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "irnet/datagen.hpp"
#include "irnet/layers.hpp"

namespace irnet {

/// Widths and depths of every block in the prediction model plus the
/// target-only baseline. Parameter shapes are a function of this config
/// alone — never of the road network — which is what makes checkpoints
/// reusable across target roads.
struct ModelConfig {
  int history_len = 6;         // time steps fed to every recurrent block
  int space_width = 3;         // highest adjacency order included
  int intersection_slots = 3;  // slots per virtual intersection
  int horizon_count = 5;       // future steps predicted jointly

  int feature_dim = 256;  // width of the target/spatial feature vectors and
                          // of the attention projections
  int conv_channels = 6;  // intersection-conv channels per direction

  int target_layers = 2;  // depth of the target-history LSTM
  int target_hidden = 256;

  int temporal_layers = 2;  // depth of the per-order LSTM over conv features
  int temporal_hidden = 512;
  int temporal_out = 32;  // per-order feature width after its FC

  int spatial_layers = 2;  // depth of the across-order LSTM; its hidden width
                           // is feature_dim so spatial features align with
                           // the target feature

  int baseline_layers = 3;  // target-only baseline LSTM
  int baseline_hidden = 512;

  std::uint64_t seed = 0;
};

/// Raises BadConfig unless every dimension is positive.
void validate(const ModelConfig& config);

/// Named parameter tensors. Map order (lexicographic by name) is the
/// canonical serialization order. The regression head lives under the
/// "head." prefix; transfer fine-tuning updates exactly that prefix.
struct ParamSet {
  std::map<std::string, Tensor> tensors;

  const Tensor& at(const std::string& name) const;  // BadConfig if absent
  Tensor& at(const std::string& name);
  bool has(const std::string& name) const { return tensors.count(name) != 0; }

  /// Deep copy with fresh storage; requires_grad resets to false.
  ParamSet clone() const;
  void set_requires_grad(bool flag);
  void zero_grad();
  /// All tensors in name order.
  std::vector<Tensor> all() const;
};

/// Builds the full parameter set of the prediction model: target LSTM + FC,
/// per-direction conv banks (one bank shared by all orders of a direction),
/// per-order LSTMs + FCs, across-order LSTMs, attention projections, and the
/// regression head. Weights are drawn from uniform(-s, s) with
/// s = 1 / sqrt(fan_in); biases start at zero. The draw order is fixed, so
/// one seed always yields one parameter set. Errors: BadConfig.
ParamSet init_params(const ModelConfig& config);

/// Parameters of the target-only baseline: a stacked LSTM over the history
/// plus a linear head (also named "head.*") over all step outputs.
ParamSet init_baseline_params(const ModelConfig& config);

/// Encodes the target road's normalized history: stacked LSTM over the
/// history_len speeds, all top-layer hidden states concatenated, FC to
/// feature_dim. Errors: ShapeMismatch, BadConfig (missing tensor).
Tensor forward_target(const Eigen::VectorXd& s_tar, const ParamSet& params,
                      const ModelConfig& config);

/// Encodes one direction's normalized adjacency matrices (index d-1 holds
/// order d, shaped slots^d x history_len): shared conv bank -> per-order
/// feature sequence -> order-specific LSTM + FC -> across-order LSTM fed
/// highest order first. Returns space_width feature vectors in that step
/// order (index 0 = highest order, last = order 1), each of length
/// feature_dim. Errors: ShapeMismatch, BadConfig.
std::vector<Tensor> forward_direction(const std::vector<Eigen::MatrixXd>& matrices,
                                      const ParamSet& params, const ModelConfig& config,
                                      Direction direction);

/// Full forward pass on one normalized sample. Attention row stack, top to
/// bottom: upstream features from order space_width down to order 1, the
/// target feature, then downstream features from order 1 up to space_width
/// (2 * space_width + 1 rows). Rows are fused by self-attention, flattened,
/// and mapped by the regression head to the horizon_count normalized
/// predictions. Errors: ShapeMismatch, BadConfig.
Tensor forward(const Sample& sample, const ParamSet& params, const ModelConfig& config);

/// Target-only baseline: stacked LSTM over the normalized history, all step
/// outputs concatenated, linear head to horizon_count outputs.
/// Errors: ShapeMismatch, BadConfig.
Tensor baseline_forward(const Eigen::VectorXd& s_tar, const ParamSet& params,
                        const ModelConfig& config);

/// True when the sample's shapes agree with the config: history length,
/// matrix count and per-order sizes in both directions, and label count.
bool sample_matches(const ModelConfig& config, const Sample& sample);

/// A trained model with everything needed to run it elsewhere: the config
/// that determines all shapes, the fitted normalizer, the target road the
/// run was built around, a free-form provenance note (for transferred
/// models, the parent checkpoint), and the parameters.
struct Checkpoint {
  ModelConfig config;
  Normalizer normalizer;
  RoadId target_road = 0;
  std::string provenance;
  ParamSet params;
};

/// Binary layout: magic "IRN1", u16 format version, the config fields, the
/// target road, the provenance string, the normalizer ranges, then the named
/// tensors in name order (length-prefixed name, rank, dims, little-endian
/// f64 payload), and a trailing CRC32 of everything before it. Saving the
/// result of a load reproduces the file byte for byte.
/// Errors: IoError; BadConfig (invalid config on save); CorruptChecksum
/// (bad magic, bad CRC, or truncation); VersionMismatch (file newer than
/// this reader).
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace irnet

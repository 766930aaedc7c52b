#include "irnet/model.hpp"

#include <cmath>
#include <utility>

#include "binio.hpp"
#include "irnet/rng.hpp"

namespace irnet {

namespace {

constexpr char kCheckpointMagic[4] = {'I', 'R', 'N', '1'};
constexpr std::uint16_t kCheckpointVersion = 1;

void require_positive(int value, const char* name) {
  if (value < 1) raise(Errc::bad_config, std::string(name) + " must be >= 1, got " +
                                             std::to_string(value));
}

Eigen::Index slots_at_order(int k, int d) {
  Eigen::Index n = 1;
  for (int i = 0; i < d; ++i) n *= k;
  return n;
}

/// Draws weight tensors in a fixed call order so a seed fully determines
/// the parameter set. Biases are zero and consume no draws.
class ParamBuilder {
 public:
  explicit ParamBuilder(std::uint64_t seed) : rng_(seed) {}

  void weight(ParamSet& out, const std::string& name, Shape shape, Eigen::Index fan_in) {
    const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Eigen::ArrayXd values(shape_size(shape));
    for (Eigen::Index i = 0; i < values.size(); ++i) values[i] = rng_.uniform(-s, s);
    out.tensors.emplace(name, Tensor::from_flat(std::move(shape), std::move(values)));
  }

  void bias(ParamSet& out, const std::string& name, Shape shape) {
    out.tensors.emplace(name, Tensor::zeros(std::move(shape)));
  }

 private:
  Rng rng_;
};

void add_lstm(ParamBuilder& b, ParamSet& out, const std::string& prefix, int layers,
              Eigen::Index input_dim, Eigen::Index hidden) {
  Eigen::Index in = input_dim;
  for (int l = 0; l < layers; ++l) {
    const std::string base = prefix + ".L" + std::to_string(l) + ".";
    for (const char* g : {"f", "i", "o", "c"}) {
      b.weight(out, base + "W_" + g, {hidden, in + hidden}, in + hidden);
      b.bias(out, base + "b_" + g, {hidden});
    }
    in = hidden;
  }
}

void add_fc(ParamBuilder& b, ParamSet& out, const std::string& prefix, Eigen::Index out_dim,
            Eigen::Index in_dim) {
  b.weight(out, prefix + ".W", {out_dim, in_dim}, in_dim);
  b.bias(out, prefix + ".b", {out_dim});
}

const char* direction_prefix(Direction dir) {
  return dir == Direction::upstream ? "up" : "down";
}

LstmParams lstm_at(const ParamSet& p, const std::string& prefix, int layers) {
  LstmParams out;
  out.reserve(static_cast<std::size_t>(layers));
  for (int l = 0; l < layers; ++l) {
    const std::string base = prefix + ".L" + std::to_string(l) + ".";
    LstmLayerParams lp;
    lp.W_f = p.at(base + "W_f");
    lp.b_f = p.at(base + "b_f");
    lp.W_i = p.at(base + "W_i");
    lp.b_i = p.at(base + "b_i");
    lp.W_o = p.at(base + "W_o");
    lp.b_o = p.at(base + "b_o");
    lp.W_c = p.at(base + "W_c");
    lp.b_c = p.at(base + "b_c");
    out.push_back(std::move(lp));
  }
  return out;
}

FcParams fc_at(const ParamSet& p, const std::string& prefix) {
  return {p.at(prefix + ".W"), p.at(prefix + ".b")};
}

ConvParams conv_at(const ParamSet& p, const std::string& prefix, int channels) {
  ConvParams out;
  out.channels.reserve(static_cast<std::size_t>(channels));
  for (int c = 0; c < channels; ++c) {
    const std::string base = prefix + ".ch" + std::to_string(c) + ".";
    out.channels.push_back({p.at(base + "W"), p.at(base + "b")});
  }
  return out;
}

AttentionParams attn_at(const ParamSet& p) {
  return {fc_at(p, "attn.q"), fc_at(p, "attn.k"), fc_at(p, "attn.v")};
}

std::vector<Tensor> scalar_sequence(const Eigen::VectorXd& values) {
  std::vector<Tensor> seq;
  seq.reserve(static_cast<std::size_t>(values.size()));
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    Eigen::ArrayXd one(1);
    one[0] = values[i];
    seq.push_back(Tensor::from_flat({1}, std::move(one)));
  }
  return seq;
}

}  // namespace

void validate(const ModelConfig& config) {
  require_positive(config.history_len, "history_len");
  require_positive(config.space_width, "space_width");
  require_positive(config.intersection_slots, "intersection_slots");
  require_positive(config.horizon_count, "horizon_count");
  require_positive(config.feature_dim, "feature_dim");
  require_positive(config.conv_channels, "conv_channels");
  require_positive(config.target_layers, "target_layers");
  require_positive(config.target_hidden, "target_hidden");
  require_positive(config.temporal_layers, "temporal_layers");
  require_positive(config.temporal_hidden, "temporal_hidden");
  require_positive(config.temporal_out, "temporal_out");
  require_positive(config.spatial_layers, "spatial_layers");
  require_positive(config.baseline_layers, "baseline_layers");
  require_positive(config.baseline_hidden, "baseline_hidden");
}

const Tensor& ParamSet::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) raise(Errc::bad_config, "missing parameter tensor '" + name + "'");
  return it->second;
}

Tensor& ParamSet::at(const std::string& name) {
  auto it = tensors.find(name);
  if (it == tensors.end()) raise(Errc::bad_config, "missing parameter tensor '" + name + "'");
  return it->second;
}

ParamSet ParamSet::clone() const {
  ParamSet out;
  for (const auto& [name, t] : tensors) {
    out.tensors.emplace(name, Tensor::from_flat(t.shape(), t.values()));
  }
  return out;
}

void ParamSet::set_requires_grad(bool flag) {
  for (auto& [name, t] : tensors) t.set_requires_grad(flag);
}

void ParamSet::zero_grad() {
  for (auto& [name, t] : tensors) t.zero_grad();
}

std::vector<Tensor> ParamSet::all() const {
  std::vector<Tensor> out;
  out.reserve(tensors.size());
  for (const auto& [name, t] : tensors) out.push_back(t);
  return out;
}

ParamSet init_params(const ModelConfig& config) {
  validate(config);
  ParamBuilder b(config.seed);
  ParamSet out;

  add_lstm(b, out, "target.lstm", config.target_layers, 1, config.target_hidden);
  add_fc(b, out, "target.fc", config.feature_dim,
         static_cast<Eigen::Index>(config.history_len) * config.target_hidden);

  for (Direction dir : {Direction::upstream, Direction::downstream}) {
    const std::string prefix = direction_prefix(dir);
    for (int c = 0; c < config.conv_channels; ++c) {
      const std::string base = prefix + ".conv.ch" + std::to_string(c) + ".";
      b.weight(out, base + "W", {config.intersection_slots, 1}, config.intersection_slots);
      b.bias(out, base + "b", {});
    }
    for (int d = 1; d <= config.space_width; ++d) {
      const std::string order = prefix + ".order" + std::to_string(d);
      const Eigen::Index feature_len =
          config.conv_channels * slots_at_order(config.intersection_slots, d - 1);
      add_lstm(b, out, order + ".lstm", config.temporal_layers, feature_len,
               config.temporal_hidden);
      add_fc(b, out, order + ".fc", config.temporal_out,
             static_cast<Eigen::Index>(config.history_len) * config.temporal_hidden);
    }
    add_lstm(b, out, prefix + ".across", config.spatial_layers, config.temporal_out,
             config.feature_dim);
  }

  for (const char* proj : {"q", "k", "v"}) {
    const std::string base = std::string("attn.") + proj;
    b.weight(out, base + ".W", {config.feature_dim, config.feature_dim}, config.feature_dim);
    b.bias(out, base + ".b", {config.feature_dim});
  }

  add_fc(b, out, "head", config.horizon_count,
         static_cast<Eigen::Index>(2 * config.space_width + 1) * config.feature_dim);
  return out;
}

ParamSet init_baseline_params(const ModelConfig& config) {
  validate(config);
  ParamBuilder b(config.seed);
  ParamSet out;
  add_lstm(b, out, "baseline.lstm", config.baseline_layers, 1, config.baseline_hidden);
  add_fc(b, out, "head", config.horizon_count,
         static_cast<Eigen::Index>(config.history_len) * config.baseline_hidden);
  return out;
}

Tensor forward_target(const Eigen::VectorXd& s_tar, const ParamSet& params,
                      const ModelConfig& config) {
  if (s_tar.size() != config.history_len) {
    raise(Errc::shape_mismatch, "forward_target: history length " + std::to_string(s_tar.size()) +
                                    " != " + std::to_string(config.history_len));
  }
  std::vector<Tensor> hidden =
      lstm_forward(scalar_sequence(s_tar), lstm_at(params, "target.lstm", config.target_layers));
  return fc(concat(hidden, 0), fc_at(params, "target.fc"));
}

std::vector<Tensor> forward_direction(const std::vector<Eigen::MatrixXd>& matrices,
                                      const ParamSet& params, const ModelConfig& config,
                                      Direction direction) {
  const std::string prefix = direction_prefix(direction);
  if (static_cast<int>(matrices.size()) != config.space_width) {
    raise(Errc::shape_mismatch, "forward_direction: expected " +
                                    std::to_string(config.space_width) + " matrices, got " +
                                    std::to_string(matrices.size()));
  }
  const ConvParams conv = conv_at(params, prefix + ".conv", config.conv_channels);

  std::vector<Tensor> order_features;  // index d-1 holds order d's feature
  order_features.reserve(matrices.size());
  for (int d = 1; d <= config.space_width; ++d) {
    const Eigen::MatrixXd& m = matrices[static_cast<std::size_t>(d - 1)];
    const Eigen::Index rows = slots_at_order(config.intersection_slots, d);
    if (m.rows() != rows || m.cols() != config.history_len) {
      raise(Errc::shape_mismatch, "forward_direction: order " + std::to_string(d) +
                                      " matrix must be " + std::to_string(rows) + "x" +
                                      std::to_string(config.history_len));
    }
    const std::string order = prefix + ".order" + std::to_string(d);
    std::vector<Tensor> seq = to_feature_sequence(intersection_conv(Tensor::from_matrix(m), conv));
    std::vector<Tensor> hidden =
        lstm_forward(seq, lstm_at(params, order + ".lstm", config.temporal_layers));
    order_features.push_back(fc(concat(hidden, 0), fc_at(params, order + ".fc")));
  }

  // Across-order recurrence consumes the highest order first, so step i of
  // the output corresponds to order space_width - i.
  std::vector<Tensor> high_to_low(order_features.rbegin(), order_features.rend());
  return lstm_forward(high_to_low, lstm_at(params, prefix + ".across", config.spatial_layers));
}

Tensor forward(const Sample& sample, const ParamSet& params, const ModelConfig& config) {
  Tensor target_feature = forward_target(sample.s_tar, params, config);
  std::vector<Tensor> up = forward_direction(sample.um, params, config, Direction::upstream);
  std::vector<Tensor> down = forward_direction(sample.dm, params, config, Direction::downstream);

  std::vector<Tensor> rows;
  rows.reserve(static_cast<std::size_t>(2 * config.space_width + 1));
  for (const Tensor& t : up) rows.push_back(reshape(t, {1, config.feature_dim}));
  rows.push_back(reshape(target_feature, {1, config.feature_dim}));
  for (auto it = down.rbegin(); it != down.rend(); ++it) {
    rows.push_back(reshape(*it, {1, config.feature_dim}));
  }

  AttentionResult fused = self_attention(concat(rows, 0), attn_at(params));
  return fc(flatten(fused.output), fc_at(params, "head"));
}

Tensor baseline_forward(const Eigen::VectorXd& s_tar, const ParamSet& params,
                        const ModelConfig& config) {
  if (s_tar.size() != config.history_len) {
    raise(Errc::shape_mismatch, "baseline_forward: history length " +
                                    std::to_string(s_tar.size()) + " != " +
                                    std::to_string(config.history_len));
  }
  std::vector<Tensor> hidden = lstm_forward(
      scalar_sequence(s_tar), lstm_at(params, "baseline.lstm", config.baseline_layers));
  return fc(concat(hidden, 0), fc_at(params, "head"));
}

bool sample_matches(const ModelConfig& config, const Sample& sample) {
  if (sample.s_tar.size() != config.history_len) return false;
  if (sample.labels.size() != config.horizon_count) return false;
  if (static_cast<int>(sample.um.size()) != config.space_width) return false;
  if (static_cast<int>(sample.dm.size()) != config.space_width) return false;
  for (int d = 1; d <= config.space_width; ++d) {
    const Eigen::Index rows = slots_at_order(config.intersection_slots, d);
    const auto& u = sample.um[static_cast<std::size_t>(d - 1)];
    const auto& w = sample.dm[static_cast<std::size_t>(d - 1)];
    if (u.rows() != rows || u.cols() != config.history_len) return false;
    if (w.rows() != rows || w.cols() != config.history_len) return false;
  }
  return true;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  validate(ckpt.config);
  binio::ByteWriter w;
  w.bytes(kCheckpointMagic, sizeof kCheckpointMagic);
  w.u16(kCheckpointVersion);

  const ModelConfig& c = ckpt.config;
  for (int field : {c.history_len, c.space_width, c.intersection_slots, c.horizon_count,
                    c.feature_dim, c.conv_channels, c.target_layers, c.target_hidden,
                    c.temporal_layers, c.temporal_hidden, c.temporal_out, c.spatial_layers,
                    c.baseline_layers, c.baseline_hidden}) {
    w.u32(static_cast<std::uint32_t>(field));
  }
  w.u64(c.seed);

  w.u64(ckpt.target_road);
  w.str(ckpt.provenance);

  w.u32(static_cast<std::uint32_t>(ckpt.normalizer.ranges().size()));
  for (const auto& [road, range] : ckpt.normalizer.ranges()) {
    w.u64(road);
    w.f64(range.first);
    w.f64(range.second);
  }

  w.u32(static_cast<std::uint32_t>(ckpt.params.tensors.size()));
  for (const auto& [name, t] : ckpt.params.tensors) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (Eigen::Index dim : t.shape()) w.u64(static_cast<std::uint64_t>(dim));
    for (Eigen::Index i = 0; i < t.size(); ++i) w.f64(t.values()[i]);
  }

  const std::uint32_t crc = binio::crc32(w.buffer());
  w.u32(crc);
  binio::write_file(path, w.buffer());
}

Checkpoint load_checkpoint(const std::string& path) {
  const std::string data = binio::read_file(path);
  if (data.size() < sizeof kCheckpointMagic + sizeof(std::uint16_t) + sizeof(std::uint32_t)) {
    raise(Errc::corrupt_checksum, path + ": file too short to be a checkpoint");
  }
  if (data.compare(0, sizeof kCheckpointMagic, kCheckpointMagic, sizeof kCheckpointMagic) != 0) {
    raise(Errc::corrupt_checksum, path + ": bad magic bytes");
  }

  const std::string_view body(data.data(), data.size() - sizeof(std::uint32_t));
  binio::ByteReader tail(std::string_view(data).substr(body.size()), path);
  if (binio::crc32(body) != tail.u32()) {
    raise(Errc::corrupt_checksum, path + ": CRC32 mismatch");
  }

  binio::ByteReader r(body, path);
  r.bytes(sizeof kCheckpointMagic);
  const std::uint16_t version = r.u16();
  if (version > kCheckpointVersion) {
    raise(Errc::version_mismatch, path + ": checkpoint format version " +
                                      std::to_string(version) + " is newer than supported " +
                                      std::to_string(kCheckpointVersion));
  }
  if (version < 1) raise(Errc::corrupt_checksum, path + ": invalid version 0");

  try {
    Checkpoint ckpt;
    ModelConfig& c = ckpt.config;
    for (int* field : {&c.history_len, &c.space_width, &c.intersection_slots, &c.horizon_count,
                       &c.feature_dim, &c.conv_channels, &c.target_layers, &c.target_hidden,
                       &c.temporal_layers, &c.temporal_hidden, &c.temporal_out, &c.spatial_layers,
                       &c.baseline_layers, &c.baseline_hidden}) {
      *field = static_cast<int>(r.u32());
    }
    c.seed = r.u64();
    validate(c);

    ckpt.target_road = r.u64();
    ckpt.provenance = r.str();

    std::map<RoadId, std::pair<double, double>> ranges;
    const std::uint32_t range_count = r.u32();
    for (std::uint32_t i = 0; i < range_count; ++i) {
      const RoadId road = r.u64();
      const double lo = r.f64();
      const double hi = r.f64();
      ranges.emplace(road, std::make_pair(lo, hi));
    }
    if (!ranges.empty()) ckpt.normalizer = Normalizer(std::move(ranges));

    const std::uint32_t tensor_count = r.u32();
    for (std::uint32_t i = 0; i < tensor_count; ++i) {
      const std::string name = r.str();
      const std::uint32_t rank = r.u32();
      Shape shape;
      shape.reserve(rank);
      for (std::uint32_t a = 0; a < rank; ++a) {
        shape.push_back(static_cast<Eigen::Index>(r.u64()));
      }
      Eigen::ArrayXd values(shape_size(shape));
      for (Eigen::Index v = 0; v < values.size(); ++v) values[v] = r.f64();
      ckpt.params.tensors.emplace(name, Tensor::from_flat(std::move(shape), std::move(values)));
    }
    if (!r.exhausted()) {
      raise(Errc::bad_config, "trailing bytes after the last tensor");
    }
    return ckpt;
  } catch (const Error& e) {
    if (e.code() == Errc::version_mismatch) throw;
    raise(Errc::corrupt_checksum, path + ": malformed checkpoint body (" + e.what() + ")");
  }
}

}  // namespace irnet

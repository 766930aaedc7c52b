#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include <doctest.h>

#include "irnet/model.hpp"
#include "irnet/rng.hpp"
#include "test_util.hpp"

using namespace irnet;
using test_util::thrown_code;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.history_len = 3;
  c.space_width = 2;
  c.intersection_slots = 2;
  c.horizon_count = 2;
  c.feature_dim = 4;
  c.conv_channels = 2;
  c.target_layers = 1;
  c.target_hidden = 3;
  c.temporal_layers = 1;
  c.temporal_hidden = 3;
  c.temporal_out = 2;
  c.spatial_layers = 1;
  c.baseline_layers = 2;
  c.baseline_hidden = 3;
  c.seed = 7;
  return c;
}

Sample tiny_sample(Rng& rng, const ModelConfig& c) {
  Sample s;
  s.t = 10;
  s.s_tar = Eigen::VectorXd::Zero(c.history_len);
  for (Eigen::Index i = 0; i < s.s_tar.size(); ++i) s.s_tar[i] = rng.uniform(0.0, 1.0);
  Eigen::Index rows = c.intersection_slots;
  for (int d = 1; d <= c.space_width; ++d, rows *= c.intersection_slots) {
    Eigen::MatrixXd u(rows, c.history_len), w(rows, c.history_len);
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index j = 0; j < c.history_len; ++j) {
        u(i, j) = rng.uniform(0.0, 1.0);
        w(i, j) = rng.uniform(0.0, 1.0);
      }
    }
    s.um.push_back(u);
    s.dm.push_back(w);
  }
  s.labels = Eigen::VectorXd::Zero(c.horizon_count);
  for (Eigen::Index i = 0; i < s.labels.size(); ++i) s.labels[i] = rng.uniform(20.0, 70.0);
  return s;
}

void zero_all(ParamSet& params) {
  for (auto& [name, t] : params.tensors) t.values_mut().setZero();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void dump(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  REQUIRE(out.good());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::uint32_t crc32_ref(const std::string& data) {
  std::uint32_t crc = 0xffffffffu;
  for (unsigned char byte : data) {
    crc ^= byte;
    for (int bit = 0; bit < 8; ++bit) {
      crc = (crc >> 1) ^ (0xEDB88320u & (0u - (crc & 1u)));
    }
  }
  return crc ^ 0xffffffffu;
}

Checkpoint tiny_checkpoint() {
  Checkpoint ckpt;
  ckpt.config = tiny_config();
  ckpt.normalizer = Normalizer({{5, {10.0, 60.0}}, {9, {20.0, 80.0}}});
  ckpt.target_road = 5;
  ckpt.provenance = "trained on synthetic run 1";
  ckpt.params = init_params(ckpt.config);
  return ckpt;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("config validation rejects non-positive dimensions") {
  ModelConfig c = tiny_config();
  CHECK_NOTHROW(validate(c));
  c.horizon_count = 0;
  CHECK(thrown_code([&] { validate(c); }) == Errc::bad_config);
  c = tiny_config();
  c.feature_dim = -1;
  CHECK(thrown_code([&] { validate(c); }) == Errc::bad_config);
  c = tiny_config();
  c.spatial_layers = 0;
  CHECK(thrown_code([&] { init_params(c); }) == Errc::bad_config);
}

TEST_CASE("init_params is a pure function of config and seed") {
  ModelConfig c = tiny_config();
  ParamSet a = init_params(c);
  ParamSet b = init_params(c);
  REQUIRE(a.tensors.size() == b.tensors.size());
  for (const auto& [name, t] : a.tensors) {
    REQUIRE(b.has(name));
    const Tensor& other = b.at(name);
    REQUIRE(t.shape() == other.shape());
    for (Eigen::Index i = 0; i < t.size(); ++i) CHECK(t.values()[i] == other.values()[i]);
  }

  ModelConfig c2 = c;
  c2.seed = 8;
  ParamSet d = init_params(c2);
  REQUIRE(d.tensors.size() == a.tensors.size());
  bool any_differs = false;
  for (const auto& [name, t] : a.tensors) {
    REQUIRE(d.at(name).shape() == t.shape());
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      if (t.values()[i] != d.at(name).values()[i]) any_differs = true;
    }
  }
  CHECK(any_differs);
}

TEST_CASE("init_params biases start at zero and weights stay inside the fan-in bound") {
  ParamSet p = init_params(tiny_config());
  for (const auto& [name, t] : p.tensors) {
    const bool is_bias = name.ends_with(".b") || name.find(".b_") != std::string::npos;
    if (is_bias) {
      for (Eigen::Index i = 0; i < t.size(); ++i) CHECK(t.values()[i] == 0.0);
    } else {
      const Eigen::Index fan_in = t.rank() == 2 ? t.dim(1) : t.size();
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (Eigen::Index i = 0; i < t.size(); ++i) {
        CHECK(std::abs(t.values()[i]) <= bound);
      }
    }
  }
}

TEST_CASE("default config wires a 1792-wide regression head input") {
  ModelConfig c;  // defaults
  c.seed = 3;
  ParamSet p = init_params(c);
  REQUIRE(p.has("head.W"));
  CHECK(p.at("head.W").shape() == (Shape{5, 1792}));
  CHECK(p.at("head.b").shape() == Shape{5});
  CHECK(p.at("target.fc.W").shape() == (Shape{256, 1536}));
  // One conv bank per direction, shared by every order.
  int up_conv = 0;
  for (const auto& [name, t] : p.tensors) {
    if (name.starts_with("up.conv.")) ++up_conv;
    CHECK(name.find("order1.conv") == std::string::npos);
  }
  CHECK(up_conv == 2 * c.conv_channels);
}

TEST_CASE("forward_target with zero parameters returns the zero feature") {
  ModelConfig c = tiny_config();
  ParamSet p = init_params(c);
  zero_all(p);
  Rng rng(1);
  Sample s = tiny_sample(rng, c);
  Tensor out = forward_target(s.s_tar, p, c);
  REQUIRE(out.shape() == Shape{c.feature_dim});
  for (Eigen::Index i = 0; i < out.size(); ++i) CHECK(out[i] == 0.0);
}

TEST_CASE("forward_target rejects a wrong-length history") {
  ModelConfig c = tiny_config();
  ParamSet p = init_params(c);
  CHECK(thrown_code([&] { forward_target(Eigen::VectorXd::Zero(5), p, c); }) ==
        Errc::shape_mismatch);
}

TEST_CASE("forward_direction emits space_width features of length feature_dim") {
  ModelConfig c = tiny_config();
  ParamSet p = init_params(c);
  Rng rng(2);
  Sample s = tiny_sample(rng, c);
  std::vector<Tensor> sf = forward_direction(s.um, p, c, Direction::upstream);
  REQUIRE(sf.size() == static_cast<std::size_t>(c.space_width));
  for (const Tensor& t : sf) CHECK(t.shape() == Shape{c.feature_dim});
}

TEST_CASE("forward_direction with zero parameters maps all-dumb matrices to zero features") {
  ModelConfig c = tiny_config();
  ParamSet p = init_params(c);
  zero_all(p);
  std::vector<Eigen::MatrixXd> dumb{Eigen::MatrixXd::Zero(2, 3), Eigen::MatrixXd::Zero(4, 3)};
  std::vector<Tensor> sf = forward_direction(dumb, p, c, Direction::downstream);
  for (const Tensor& t : sf) {
    for (Eigen::Index i = 0; i < t.size(); ++i) CHECK(t[i] == 0.0);
  }
}

TEST_CASE("forward_direction validates matrix count and shapes") {
  ModelConfig c = tiny_config();
  ParamSet p = init_params(c);
  std::vector<Eigen::MatrixXd> wrong_count{Eigen::MatrixXd::Zero(2, 3)};
  CHECK(thrown_code([&] { forward_direction(wrong_count, p, c, Direction::upstream); }) ==
        Errc::shape_mismatch);
  std::vector<Eigen::MatrixXd> wrong_rows{Eigen::MatrixXd::Zero(2, 3),
                                          Eigen::MatrixXd::Zero(3, 3)};
  CHECK(thrown_code([&] { forward_direction(wrong_rows, p, c, Direction::upstream); }) ==
        Errc::shape_mismatch);
}

TEST_CASE("forward predicts horizon_count values and is bit-reproducible") {
  ModelConfig c = tiny_config();
  ParamSet p = init_params(c);
  Rng rng(3);
  Sample s = tiny_sample(rng, c);
  Tensor a = forward(s, p, c);
  Tensor b = forward(s, p, c);
  REQUIRE(a.shape() == Shape{c.horizon_count});
  for (Eigen::Index i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("forward distinguishes upstream from downstream inputs") {
  ModelConfig c = tiny_config();
  ParamSet p = init_params(c);
  Rng rng(4);
  Sample s = tiny_sample(rng, c);
  Sample swapped = s;
  std::swap(swapped.um, swapped.dm);

  Tensor a = forward(s, p, c);
  Tensor b = forward(swapped, p, c);
  double max_diff = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    max_diff = std::max(max_diff, std::abs(a[i] - b[i]));
  }
  CHECK(max_diff > 1e-12);
}

TEST_CASE("full model gradients match finite differences") {
  ModelConfig c = tiny_config();
  ParamSet p = init_params(c);
  Rng rng(5);
  Sample s = tiny_sample(rng, c);
  std::vector<Tensor> leaves = p.all();
  auto f = [&]() {
    Tensor out = forward(s, p, c);
    return sum(mul(out, out));
  };
  CHECK(grad_check(f, leaves) < 1e-4);
}

TEST_CASE("baseline_forward predicts horizon_count values and zero params give zero") {
  ModelConfig c = tiny_config();
  ParamSet p = init_baseline_params(c);
  Rng rng(6);
  Sample s = tiny_sample(rng, c);
  Tensor out = baseline_forward(s.s_tar, p, c);
  REQUIRE(out.shape() == Shape{c.horizon_count});

  zero_all(p);
  Tensor zero_out = baseline_forward(s.s_tar, p, c);
  for (Eigen::Index i = 0; i < zero_out.size(); ++i) CHECK(zero_out[i] == 0.0);
  CHECK(thrown_code([&] { baseline_forward(Eigen::VectorXd::Zero(9), p, c); }) ==
        Errc::shape_mismatch);
}

TEST_CASE("baseline gradients match finite differences") {
  ModelConfig c = tiny_config();
  ParamSet p = init_baseline_params(c);
  Rng rng(7);
  Sample s = tiny_sample(rng, c);
  std::vector<Tensor> leaves = p.all();
  auto f = [&]() {
    Tensor out = baseline_forward(s.s_tar, p, c);
    return sum(mul(out, out));
  };
  CHECK(grad_check(f, leaves) < 1e-4);
}

TEST_CASE("parameter shapes depend on config alone, not on the road network") {
  ModelConfig c = tiny_config();
  ParamSet p = init_params(c);

  SynthSpec small;
  small.roads = 8;
  small.layers = 2;
  small.steps = 30;
  SynthSpec big;
  big.roads = 14;
  big.layers = 3;
  big.steps = 30;

  for (std::uint64_t seed : {11ull, 12ull}) {
    SynthResult world = synth_network(seed == 11 ? small : big, seed);
    RoadId target = *world.net.roads().begin();
    FeatureMap features = make_features(world.store, 20);
    ReconstructionPlan plan =
        build_plan(world.net, target, features, c.intersection_slots, c.space_width);
    Dataset data = make_dataset(plan, world.store, c.history_len, c.horizon_count, 0,
                                world.store.length());
    REQUIRE(!data.empty());
    REQUIRE(sample_matches(c, data.front()));
    Tensor out = forward(data.front(), p, c);
    CHECK(out.shape() == Shape{c.horizon_count});
  }
}

TEST_CASE("sample_matches spots every shape deviation") {
  ModelConfig c = tiny_config();
  Rng rng(8);
  Sample good = tiny_sample(rng, c);
  CHECK(sample_matches(c, good));

  Sample bad = good;
  bad.s_tar = Eigen::VectorXd::Zero(c.history_len + 1);
  CHECK(!sample_matches(c, bad));

  bad = good;
  bad.labels = Eigen::VectorXd::Zero(c.horizon_count + 2);
  CHECK(!sample_matches(c, bad));

  bad = good;
  bad.um.pop_back();
  CHECK(!sample_matches(c, bad));

  bad = good;
  bad.dm[1] = Eigen::MatrixXd::Zero(5, c.history_len);
  CHECK(!sample_matches(c, bad));

  bad = good;
  bad.um[0] = Eigen::MatrixXd::Zero(c.intersection_slots, c.history_len + 1);
  CHECK(!sample_matches(c, bad));
}

TEST_CASE("checkpoint round-trips bit for bit") {
  Checkpoint ckpt = tiny_checkpoint();
  const char* path_a = "model_ckpt_a.bin";
  const char* path_b = "model_ckpt_b.bin";
  save_checkpoint(ckpt, path_a);

  Checkpoint loaded = load_checkpoint(path_a);
  CHECK(loaded.config.history_len == ckpt.config.history_len);
  CHECK(loaded.config.space_width == ckpt.config.space_width);
  CHECK(loaded.config.feature_dim == ckpt.config.feature_dim);
  CHECK(loaded.config.seed == ckpt.config.seed);
  CHECK(loaded.target_road == ckpt.target_road);
  CHECK(loaded.provenance == ckpt.provenance);
  REQUIRE(loaded.normalizer.ranges() == ckpt.normalizer.ranges());
  REQUIRE(loaded.params.tensors.size() == ckpt.params.tensors.size());
  for (const auto& [name, t] : ckpt.params.tensors) {
    REQUIRE(loaded.params.has(name));
    const Tensor& other = loaded.params.at(name);
    REQUIRE(other.shape() == t.shape());
    for (Eigen::Index i = 0; i < t.size(); ++i) CHECK(other.values()[i] == t.values()[i]);
  }

  save_checkpoint(loaded, path_b);
  CHECK(slurp(path_a) == slurp(path_b));
}

TEST_CASE("checkpoint rejects damage and future versions") {
  Checkpoint ckpt = tiny_checkpoint();
  const char* path = "model_ckpt_damage.bin";
  save_checkpoint(ckpt, path);
  const std::string good = slurp(path);

  // Flipped magic byte.
  std::string bad = good;
  bad[0] = 'X';
  dump(path, bad);
  CHECK(thrown_code([&] { load_checkpoint(path); }) == Errc::corrupt_checksum);

  // Flipped payload byte (CRC no longer matches).
  bad = good;
  bad[good.size() / 2] = static_cast<char>(bad[good.size() / 2] ^ 0x40);
  dump(path, bad);
  CHECK(thrown_code([&] { load_checkpoint(path); }) == Errc::corrupt_checksum);

  // Truncation.
  dump(path, good.substr(0, good.size() - 9));
  CHECK(thrown_code([&] { load_checkpoint(path); }) == Errc::corrupt_checksum);
  dump(path, good.substr(0, 3));
  CHECK(thrown_code([&] { load_checkpoint(path); }) == Errc::corrupt_checksum);

  // A version from the future, with its CRC made valid again.
  bad = good;
  bad[4] = 2;
  bad[5] = 0;
  std::string body = bad.substr(0, bad.size() - 4);
  const std::uint32_t crc = crc32_ref(body);
  for (int i = 0; i < 4; ++i) {
    body.push_back(static_cast<char>((crc >> (8 * i)) & 0xff));
  }
  dump(path, body);
  CHECK(thrown_code([&] { load_checkpoint(path); }) == Errc::version_mismatch);

  CHECK(thrown_code([] { load_checkpoint("model_no_such.bin"); }) == Errc::io_error);
  std::remove(path);
}

TEST_CASE("checkpoint save validates the config") {
  Checkpoint ckpt = tiny_checkpoint();
  ckpt.config.horizon_count = 0;
  CHECK(thrown_code([&] { save_checkpoint(ckpt, "model_ckpt_bad.bin"); }) == Errc::bad_config);
}

}  // TEST_SUITE

#include <cstdio>
#include <set>
#include <vector>

#include <Eigen/Core>

#include "doctest.h"
#include "irnet/reconstruct.hpp"
#include "irnet/rng.hpp"
#include "irnet/warp.hpp"
#include "test_util.hpp"

using irnet::Direction;
using irnet::Errc;
using irnet::FeatureMap;
using irnet::kDumbPoint;
using irnet::OrderedRoadSet;
using irnet::RoadId;
using test_util::thrown_code;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> xs) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

FeatureMap random_features(const std::vector<RoadId>& roads, int len, irnet::Rng& rng) {
  FeatureMap f;
  for (RoadId r : roads) {
    Eigen::VectorXd v(len);
    for (int i = 0; i < len; ++i) v[i] = rng.uniform(20.0, 80.0);
    f.emplace(r, std::move(v));
  }
  return f;
}

}  // namespace

TEST_SUITE("reconstruct") {

TEST_CASE("singleton candidate") {
  FeatureMap f{{1, vec({1, 2})}, {2, vec({9, 9})}};
  CHECK(irnet::sort_adjacent(1, {2}, f) == std::vector<RoadId>{2});
}

TEST_CASE("sorting follows warped distance") {
  FeatureMap f{{1, vec({1, 1, 1})}, {2, vec({1, 1, 1})}, {3, vec({5, 5, 5})}};
  // Distance of road 2 to the target is 0, road 3 is strictly larger.
  CHECK(irnet::dtw_distance(f[2], f[1]) < irnet::dtw_distance(f[3], f[1]));
  CHECK(irnet::sort_adjacent(1, {3, 2}, f) == std::vector<RoadId>({2, 3}));
}

TEST_CASE("equal distances fall back to ascending id") {
  FeatureMap f{{1, vec({2, 2})}, {7, vec({3, 3})}, {4, vec({3, 3})}};
  CHECK(irnet::sort_adjacent(1, {7, 4}, f) == std::vector<RoadId>({4, 7}));
}

TEST_CASE("sorting validates features") {
  FeatureMap f{{1, vec({1, 2})}, {2, vec({1, 2, 3})}};
  CHECK(thrown_code([&] { irnet::sort_adjacent(1, {2}, f); }) == Errc::length_mismatch);
  CHECK(thrown_code([&] { irnet::sort_adjacent(1, {9}, f); }) == Errc::missing_feature);
  CHECK(thrown_code([&] { irnet::sort_adjacent(99, {2}, f); }) == Errc::missing_feature);
}

TEST_CASE("slot normalization") {
  CHECK(irnet::normalize_intersection({10, 11, 12}, 3) == std::vector<RoadId>({10, 11, 12}));
  CHECK(irnet::normalize_intersection({10, 11}, 3) == std::vector<RoadId>({10, 11, kDumbPoint}));
  CHECK(irnet::normalize_intersection({10, 11, 12, 13}, 3) == std::vector<RoadId>({10, 11, 12}));
  CHECK(irnet::normalize_intersection({}, 2) == std::vector<RoadId>({kDumbPoint, kDumbPoint}));
}

TEST_CASE("full dumb propagation") {
  auto net = irnet::build_network({1}, {});
  FeatureMap f{{1, vec({1, 2})}};
  OrderedRoadSet prev{1, Direction::upstream, {kDumbPoint, kDumbPoint, kDumbPoint}};
  auto out = irnet::order_high_adjacent(prev, net, f, 3);
  CHECK(out.order == 2);
  CHECK(out.slots == std::vector<RoadId>(9, kDumbPoint));
}

TEST_CASE("single real parent expands in place") {
  // x -> a -> 1 ; a's only 1-order upstream road is x.
  auto net = irnet::build_network({1, 5, 9}, {{9, 5}, {5, 1}});
  irnet::Rng rng(1);
  FeatureMap f = random_features({1, 5, 9}, 4, rng);
  OrderedRoadSet prev{1, Direction::upstream, {5, kDumbPoint, kDumbPoint}};
  auto out = irnet::order_high_adjacent(prev, net, f, 3);
  std::vector<RoadId> expect{9, kDumbPoint, kDumbPoint};
  expect.insert(expect.end(), 6, kDumbPoint);
  CHECK(out.slots == expect);
}

TEST_CASE("saturated graph has no dumb points") {
  // Three layers; every road in layers 1-2 has exactly 2 parents.
  std::vector<RoadId> roads{1, 2, 3, 4, 5, 6, 7};
  std::vector<std::pair<RoadId, RoadId>> edges{{2, 1}, {3, 1}, {4, 2}, {5, 2}, {6, 3}, {7, 3}};
  auto net = irnet::build_network(roads, edges);
  irnet::Rng rng(2);
  FeatureMap f = random_features(roads, 5, rng);
  auto plan = irnet::build_plan(net, 1, f, 2, 2);
  for (const auto& set : plan.upstream_sets)
    for (RoadId r : set.slots) CHECK_FALSE(irnet::is_dumb(r));
}

TEST_CASE("isolated target yields an all-dumb plan") {
  auto net = irnet::build_network({1}, {});
  FeatureMap f{{1, vec({1, 2})}};
  auto plan = irnet::build_plan(net, 1, f, 3, 2);
  REQUIRE(plan.upstream_sets.size() == 2);
  REQUIRE(plan.downstream_sets.size() == 2);
  CHECK(plan.upstream_sets[0].slots == std::vector<RoadId>(3, kDumbPoint));
  CHECK(plan.upstream_sets[1].slots == std::vector<RoadId>(9, kDumbPoint));
  CHECK(plan.downstream_sets[0].slots == std::vector<RoadId>(3, kDumbPoint));
  CHECK(plan.downstream_sets[1].slots == std::vector<RoadId>(9, kDumbPoint));
}

TEST_CASE("star parents are distance-sorted") {
  auto net = irnet::build_network({1, 2, 3, 4}, {{2, 1}, {3, 1}, {4, 1}});
  FeatureMap f{{1, vec({5, 5, 5})},
               {2, vec({9, 9, 9})},    // far
               {3, vec({5, 5, 6})},    // close
               {4, vec({6, 6, 6})}};   // middle
  auto plan = irnet::build_plan(net, 1, f, 3, 1);
  CHECK(plan.upstream_sets[0].slots == std::vector<RoadId>({3, 4, 2}));
}

TEST_CASE("plan set sizes follow powers of k") {
  irnet::Rng rng(3);
  std::vector<RoadId> roads;
  for (RoadId r = 1; r <= 12; ++r) roads.push_back(r);
  std::vector<std::pair<RoadId, RoadId>> edges;
  for (RoadId a : roads)
    for (RoadId b : roads)
      if (a != b && rng.uniform() < 0.25) edges.emplace_back(a, b);
  auto net = irnet::build_network(roads, edges);
  FeatureMap f = random_features(roads, 6, rng);

  auto plan = irnet::build_plan(net, 5, f, 3, 3);
  REQUIRE(plan.upstream_sets.size() == 3);
  Eigen::Index expect = 3;
  for (int d = 1; d <= 3; ++d) {
    CHECK(plan.upstream_sets[static_cast<std::size_t>(d - 1)].slots.size() ==
          static_cast<std::size_t>(expect));
    CHECK(plan.downstream_sets[static_cast<std::size_t>(d - 1)].slots.size() ==
          static_cast<std::size_t>(expect));
    expect *= 3;
  }
}

TEST_CASE("plan construction validates inputs") {
  auto net = irnet::build_network({1}, {});
  FeatureMap f{{1, vec({1, 2})}};
  CHECK(thrown_code([&] { irnet::build_plan(net, 2, f, 3, 1); }) == Errc::unknown_road);
  CHECK(thrown_code([&] { irnet::build_plan(net, 1, f, 0, 1); }) == Errc::bad_config);
  CHECK(thrown_code([&] { irnet::build_plan(net, 1, f, 3, 0); }) == Errc::bad_config);
}

TEST_CASE("dumb closure and determinism on random graphs") {
  irnet::Rng rng(44);
  for (int trial = 0; trial < 15; ++trial) {
    const int n = 3 + static_cast<int>(rng.below(8));
    std::vector<RoadId> roads;
    for (int i = 0; i < n; ++i) roads.push_back(static_cast<RoadId>(i + 1));
    std::vector<std::pair<RoadId, RoadId>> edges;
    for (RoadId a : roads)
      for (RoadId b : roads)
        if (a != b && rng.uniform() < 0.3) edges.emplace_back(a, b);
    auto net = irnet::build_network(roads, edges);
    FeatureMap f = random_features(roads, 5, rng);
    const int k = 2 + static_cast<int>(rng.below(2));
    const RoadId tar = roads[rng.below(roads.size())];

    auto plan = irnet::build_plan(net, tar, f, k, 3);
    auto again = irnet::build_plan(net, tar, f, k, 3);
    for (const auto* sets : {&plan.upstream_sets, &plan.downstream_sets}) {
      for (std::size_t d = 1; d < sets->size(); ++d) {
        const auto& parent = (*sets)[d - 1].slots;
        const auto& child = (*sets)[d].slots;
        for (std::size_t j = 0; j < child.size(); ++j)
          if (irnet::is_dumb(parent[j / static_cast<std::size_t>(k)]))
            CHECK(irnet::is_dumb(child[j]));
      }
    }
    CHECK(plan.upstream_sets.size() == again.upstream_sets.size());
    for (std::size_t d = 0; d < plan.upstream_sets.size(); ++d) {
      CHECK(plan.upstream_sets[d].slots == again.upstream_sets[d].slots);
      CHECK(plan.downstream_sets[d].slots == again.downstream_sets[d].slots);
    }
  }
}

TEST_CASE("plans share shape across unrelated networks") {
  irnet::Rng rng(55);
  auto shape_of = [](const irnet::ReconstructionPlan& p) {
    std::vector<std::size_t> s;
    for (const auto& set : p.upstream_sets) s.push_back(set.slots.size());
    for (const auto& set : p.downstream_sets) s.push_back(set.slots.size());
    return s;
  };
  auto net_a = irnet::build_network({1, 2, 3}, {{2, 1}, {1, 3}});
  auto net_b = irnet::build_network({10, 20, 30, 40, 50},
                                    {{20, 10}, {30, 10}, {40, 10}, {50, 10}, {10, 20}});
  FeatureMap fa = random_features({1, 2, 3}, 4, rng);
  FeatureMap fb = random_features({10, 20, 30, 40, 50}, 4, rng);
  CHECK(shape_of(irnet::build_plan(net_a, 1, fa, 3, 2)) ==
        shape_of(irnet::build_plan(net_b, 10, fb, 3, 2)));
}

TEST_CASE("plan JSON round trip") {
  auto net = irnet::build_network({1, 2, 3, 4}, {{2, 1}, {3, 1}, {1, 4}});
  irnet::Rng rng(66);
  FeatureMap f = random_features({1, 2, 3, 4}, 4, rng);
  auto plan = irnet::build_plan(net, 1, f, 3, 2);

  const char* path = "plan_roundtrip_test.json";
  irnet::save_plan(plan, path);
  auto loaded = irnet::load_plan(path);
  CHECK(loaded.target == plan.target);
  CHECK(loaded.k == plan.k);
  CHECK(loaded.w == plan.w);
  REQUIRE(loaded.upstream_sets.size() == plan.upstream_sets.size());
  for (std::size_t d = 0; d < plan.upstream_sets.size(); ++d) {
    CHECK(loaded.upstream_sets[d].slots == plan.upstream_sets[d].slots);
    CHECK(loaded.downstream_sets[d].slots == plan.downstream_sets[d].slots);
  }
  std::remove(path);

  CHECK(thrown_code([] { irnet::load_plan("missing_plan.json"); }) == Errc::io_error);
}

TEST_CASE("plan loading rejects malformed documents") {
  const char* path = "plan_bad_test.json";
  {
    std::FILE* fp = std::fopen(path, "wb");
    REQUIRE(fp != nullptr);
    // Order-1 set has k=3 slots but order-2 has only 3 (needs 9).
    std::fputs(R"({"schema_version":1,"target":1,"k":3,"w":2,)", fp);
    std::fputs(R"("upstream":[[2,null,null],[4,null,null]],)", fp);
    std::fputs(R"("downstream":[[null,null,null],[null,null,null]]})", fp);
    std::fclose(fp);
  }
  CHECK(thrown_code([&] { irnet::load_plan(path); }) == Errc::bad_config);
  std::remove(path);
}

TEST_CASE("plan loading rejects newer schema versions") {
  const char* path = "plan_version_test.json";
  {
    std::FILE* fp = std::fopen(path, "wb");
    REQUIRE(fp != nullptr);
    std::fputs(R"({"schema_version":99,"target":1,"k":1,"w":1,)", fp);
    std::fputs(R"("upstream":[[null]],"downstream":[[null]]})", fp);
    std::fclose(fp);
  }
  CHECK(thrown_code([&] { irnet::load_plan(path); }) == Errc::version_mismatch);
  std::remove(path);
}

}  // TEST_SUITE

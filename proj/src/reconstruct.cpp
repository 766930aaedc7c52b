#include "irnet/reconstruct.hpp"

#include <algorithm>
#include <fstream>

#include "json.hpp"

#include "irnet/error.hpp"
#include "irnet/warp.hpp"

namespace irnet {

namespace {

const Eigen::VectorXd& feature_of(const FeatureMap& features, RoadId id) {
  auto it = features.find(id);
  if (it == features.end())
    raise(Errc::missing_feature, "no feature vector for road " + std::to_string(id));
  return it->second;
}

Eigen::Index checked_pow(int k, int d) {
  Eigen::Index n = 1;
  for (int i = 0; i < d; ++i) n *= k;
  return n;
}

}  // namespace

std::vector<RoadId> sort_adjacent(RoadId tar, const std::set<RoadId>& candidates,
                                  const FeatureMap& features) {
  const Eigen::VectorXd& f_tar = feature_of(features, tar);
  std::vector<std::pair<double, RoadId>> labelled;
  labelled.reserve(candidates.size());
  for (RoadId c : candidates) {
    const Eigen::VectorXd& f_c = feature_of(features, c);
    if (f_c.size() != f_tar.size())
      raise(Errc::length_mismatch, "feature for road " + std::to_string(c) + " has length " +
                                       std::to_string(f_c.size()) + ", target has " +
                                       std::to_string(f_tar.size()));
    labelled.emplace_back(dtw_distance(f_c, f_tar), c);
  }
  std::sort(labelled.begin(), labelled.end());  // distance first, then road id
  std::vector<RoadId> out;
  out.reserve(labelled.size());
  for (const auto& [dist, id] : labelled) out.push_back(id);
  return out;
}

std::vector<RoadId> normalize_intersection(const std::vector<RoadId>& sorted, int k) {
  if (k < 1) raise(Errc::bad_config, "slot count k must be >= 1, got " + std::to_string(k));
  std::vector<RoadId> slots(static_cast<std::size_t>(k), kDumbPoint);
  const std::size_t take = std::min<std::size_t>(sorted.size(), static_cast<std::size_t>(k));
  std::copy(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(take), slots.begin());
  return slots;
}

OrderedRoadSet order_high_adjacent(const OrderedRoadSet& prev, const RoadNetwork& net,
                                   const FeatureMap& features, int k) {
  OrderedRoadSet out;
  out.order = prev.order + 1;
  out.direction = prev.direction;
  out.slots.reserve(prev.slots.size() * static_cast<std::size_t>(k));
  for (RoadId parent : prev.slots) {
    if (is_dumb(parent)) {
      out.slots.insert(out.slots.end(), static_cast<std::size_t>(k), kDumbPoint);
      continue;
    }
    const std::set<RoadId> adjacent = prev.direction == Direction::upstream
                                          ? upstream(net, parent, 1)
                                          : downstream(net, parent, 1);
    const auto block = normalize_intersection(sort_adjacent(parent, adjacent, features), k);
    out.slots.insert(out.slots.end(), block.begin(), block.end());
  }
  return out;
}

ReconstructionPlan build_plan(const RoadNetwork& net, RoadId tar, const FeatureMap& features,
                              int k, int w) {
  if (k < 1 || w < 1)
    raise(Errc::bad_config,
          "plan needs k >= 1 and w >= 1, got k=" + std::to_string(k) + " w=" + std::to_string(w));
  if (!net.contains(tar)) raise(Errc::unknown_road, "target road " + std::to_string(tar));

  ReconstructionPlan plan;
  plan.target = tar;
  plan.k = k;
  plan.w = w;
  for (Direction dir : {Direction::upstream, Direction::downstream}) {
    auto& sets = dir == Direction::upstream ? plan.upstream_sets : plan.downstream_sets;
    const std::set<RoadId> first = dir == Direction::upstream ? upstream(net, tar, 1)
                                                              : downstream(net, tar, 1);
    OrderedRoadSet current;
    current.order = 1;
    current.direction = dir;
    current.slots = normalize_intersection(sort_adjacent(tar, first, features), k);
    sets.push_back(current);
    for (int d = 2; d <= w; ++d) {
      current = order_high_adjacent(current, net, features, k);
      sets.push_back(current);
    }
  }
  return plan;
}

// ---- JSON round trip --------------------------------------------------------

namespace {
constexpr int kPlanSchemaVersion = 1;
}  // namespace

void save_plan(const ReconstructionPlan& plan, const std::string& path) {
  nlohmann::ordered_json doc;
  doc["schema_version"] = kPlanSchemaVersion;
  doc["target"] = plan.target;
  doc["k"] = plan.k;
  doc["w"] = plan.w;
  auto sets_to_json = [](const std::vector<OrderedRoadSet>& sets) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const OrderedRoadSet& set : sets) {
      nlohmann::ordered_json slots = nlohmann::ordered_json::array();
      for (RoadId r : set.slots) {
        if (is_dumb(r))
          slots.push_back(nullptr);
        else
          slots.push_back(r);
      }
      arr.push_back(std::move(slots));
    }
    return arr;
  };
  doc["upstream"] = sets_to_json(plan.upstream_sets);
  doc["downstream"] = sets_to_json(plan.downstream_sets);
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(Errc::io_error, "cannot open " + path + " for writing");
  out << doc.dump(2) << '\n';
  if (!out) raise(Errc::io_error, "failed writing " + path);
}

ReconstructionPlan load_plan(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(Errc::io_error, "cannot open " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    raise(Errc::bad_config, "plan file " + path + " is not valid JSON: " + e.what());
  }

  ReconstructionPlan plan;
  try {
    const int version = doc.at("schema_version").get<int>();
    if (version > kPlanSchemaVersion)
      raise(Errc::version_mismatch, "plan file " + path + " has schema_version " +
                                        std::to_string(version) + "; this reader supports up to " +
                                        std::to_string(kPlanSchemaVersion));
    if (version < 1) raise(Errc::bad_config, "plan file has non-positive schema_version");
    plan.target = doc.at("target").get<RoadId>();
    plan.k = doc.at("k").get<int>();
    plan.w = doc.at("w").get<int>();
    if (plan.k < 1 || plan.w < 1) raise(Errc::bad_config, "plan file has k or w < 1");
    for (Direction dir : {Direction::upstream, Direction::downstream}) {
      const char* key = dir == Direction::upstream ? "upstream" : "downstream";
      auto& sets = dir == Direction::upstream ? plan.upstream_sets : plan.downstream_sets;
      const auto& arr = doc.at(key);
      if (static_cast<int>(arr.size()) != plan.w)
        raise(Errc::bad_config, std::string("plan file: ") + key + " must hold w slot arrays");
      for (int d = 1; d <= plan.w; ++d) {
        OrderedRoadSet set;
        set.order = d;
        set.direction = dir;
        const auto& slots = arr.at(static_cast<std::size_t>(d - 1));
        if (static_cast<Eigen::Index>(slots.size()) != checked_pow(plan.k, d))
          raise(Errc::bad_config, "plan file: order " + std::to_string(d) + " set must have k^d slots");
        for (const auto& s : slots) set.slots.push_back(s.is_null() ? kDumbPoint : s.get<RoadId>());
        // Dumb closure: children of a dumb parent must all be dumb.
        if (d >= 2) {
          const auto& parents = sets.back().slots;
          for (std::size_t j = 0; j < set.slots.size(); ++j)
            if (is_dumb(parents[j / static_cast<std::size_t>(plan.k)]) && !is_dumb(set.slots[j]))
              raise(Errc::bad_config, "plan file: real slot under a dumb parent at order " +
                                          std::to_string(d));
        }
        sets.push_back(std::move(set));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    raise(Errc::bad_config, "plan file " + path + " has an invalid schema: " + e.what());
  }
  return plan;
}

}  // namespace irnet

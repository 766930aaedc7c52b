#pragma once

#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "irnet/roadnet.hpp"

namespace irnet {

/// Per-road speed history used as the similarity feature for sorting
/// adjacent roads. All vectors in one map must share a length.
using FeatureMap = std::map<RoadId, Eigen::VectorXd>;

enum class Direction { upstream, downstream };

/// The d-order adjacent roads of one target, arranged into exactly k^d
/// slots. Missing roads are padded with the dumb-point sentinel; every child
/// block of a dumb parent is a run of k dumb points, so the layout always
/// forms a complete k-ary tree level.
struct OrderedRoadSet {
  int order = 1;
  Direction direction = Direction::upstream;
  std::vector<RoadId> slots;
};

/// Fixed-topology virtual intersection around one target road: ordered slot
/// sets for orders 1..w in both directions. Plans built with equal (k, w)
/// always have identical shapes, whatever the underlying networks look like.
struct ReconstructionPlan {
  RoadId target = 0;
  int k = 0;
  int w = 0;
  std::vector<OrderedRoadSet> upstream_sets;    // index d-1 holds order d
  std::vector<OrderedRoadSet> downstream_sets;
};

/// Sorts `candidates` ascending by warped distance between their feature
/// vector and the target's; equal distances fall back to ascending road id
/// so the order is total. Errors: MissingFeature, LengthMismatch.
std::vector<RoadId> sort_adjacent(RoadId tar, const std::set<RoadId>& candidates,
                                  const FeatureMap& features);

/// Fits a sorted candidate list into exactly k slots: truncates beyond k,
/// pads with dumb points below k. Total function.
std::vector<RoadId> normalize_intersection(const std::vector<RoadId>& sorted, int k);

/// Expands a (d-1)-order set to order d: each real slot contributes its own
/// sorted-and-normalized 1-order neighbourhood, each dumb slot contributes k
/// dumb points.
OrderedRoadSet order_high_adjacent(const OrderedRoadSet& prev, const RoadNetwork& net,
                                   const FeatureMap& features, int k);

/// Builds the full plan for one target road: orders 1..w upstream and
/// downstream. Errors: UnknownRoad, MissingFeature, BadConfig (k or w < 1).
ReconstructionPlan build_plan(const RoadNetwork& net, RoadId tar, const FeatureMap& features,
                              int k, int w);

/// Plan (de)serialization as a JSON document; dumb slots encode as null.
/// Errors: IoError on file problems, BadConfig on schema violations.
void save_plan(const ReconstructionPlan& plan, const std::string& path);
ReconstructionPlan load_plan(const std::string& path);

}  // namespace irnet

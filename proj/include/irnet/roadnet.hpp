#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "irnet/error.hpp"

namespace irnet {

/// Road identifier. Roads are the vertices of the network graph; a directed
/// edge (i, j) means traffic on road i can merge into road j through an
/// intersection. Opposite lanes of a physical road are two distinct ids.
using RoadId = std::uint64_t;

/// Sentinel id marking a padding slot ("dumb point") in reconstructed
/// intersections. Never a member of a RoadNetwork.
inline constexpr RoadId kDumbPoint = std::numeric_limits<RoadId>::max();

inline bool is_dumb(RoadId id) { return id == kDumbPoint; }

/// Directed road graph. Immutable after construction; safe for unrestricted
/// concurrent reads.
class RoadNetwork {
 public:
  RoadNetwork() = default;

  const std::set<RoadId>& roads() const { return roads_; }
  bool contains(RoadId road) const { return roads_.count(road) != 0; }
  std::size_t road_count() const { return roads_.size(); }
  std::size_t edge_count() const { return edge_count_; }
  bool has_edge(RoadId from, RoadId to) const;

  /// Roads reachable from `road` through one intersection (out-neighbours).
  const std::set<RoadId>& successors(RoadId road) const;
  /// Roads that flow into `road` through one intersection (in-neighbours).
  const std::set<RoadId>& predecessors(RoadId road) const;

 private:
  friend RoadNetwork build_network(const std::vector<RoadId>&,
                                   const std::vector<std::pair<RoadId, RoadId>>&);
  std::set<RoadId> roads_;
  std::map<RoadId, std::set<RoadId>> out_;
  std::map<RoadId, std::set<RoadId>> in_;
  std::size_t edge_count_ = 0;
};

/// Validates and builds a network. Duplicate edges are deduplicated.
/// Errors: UnknownRoadInEdge, SelfLoop, SentinelIdUsed.
RoadNetwork build_network(const std::vector<RoadId>& roads,
                          const std::vector<std::pair<RoadId, RoadId>>& edges);

/// 0/1 matrix A with A(i, j) = 1 iff the edge (ordering[i], ordering[j])
/// exists. Directed, so A may be asymmetric. Errors: OrderingNotPermutation.
Eigen::MatrixXi adjacency_matrix(const RoadNetwork& net, const std::vector<RoadId>& ordering);

/// d-order upstream adjacent roads of `tar`: order 1 is the direct
/// in-neighbour set, order d is the union of 1-order sets over the members of
/// the (d-1)-order set. May contain `tar` itself when the graph has cycles.
std::set<RoadId> upstream(const RoadNetwork& net, RoadId tar, int order);

/// Mirror of `upstream` along edge direction.
std::set<RoadId> downstream(const RoadNetwork& net, RoadId tar, int order);

/// Reads an edge-list text file: one `from_id,to_id` pair per line, UTF-8,
/// `#` comment lines and blank lines ignored. The vertex set is the union of
/// edge endpoints and `extra_roads` (so isolated roads can participate).
RoadNetwork load_edge_list(const std::string& path, const std::vector<RoadId>& extra_roads = {});

}  // namespace irnet

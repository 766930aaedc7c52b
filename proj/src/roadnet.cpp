#include "irnet/roadnet.hpp"

#include <fstream>
#include <sstream>

namespace irnet {

namespace {
const std::set<RoadId> kEmptySet;

std::set<RoadId> one_hop(const RoadNetwork& net, RoadId tar, bool up) {
  return up ? net.predecessors(tar) : net.successors(tar);
}

std::set<RoadId> order_set(const RoadNetwork& net, RoadId tar, int order, bool up) {
  if (!net.contains(tar)) {
    raise(Errc::unknown_road, "road " + std::to_string(tar) + " not in network");
  }
  if (order < 1) {
    raise(Errc::unknown_road, "adjacency order must be >= 1");
  }
  std::set<RoadId> frontier = one_hop(net, tar, up);
  for (int d = 2; d <= order; ++d) {
    std::set<RoadId> next;
    for (RoadId member : frontier) {
      const auto& hop = one_hop(net, member, up);
      next.insert(hop.begin(), hop.end());
    }
    frontier = std::move(next);
  }
  return frontier;
}
}  // namespace

bool RoadNetwork::has_edge(RoadId from, RoadId to) const {
  auto it = out_.find(from);
  return it != out_.end() && it->second.count(to) != 0;
}

const std::set<RoadId>& RoadNetwork::successors(RoadId road) const {
  auto it = out_.find(road);
  return it == out_.end() ? kEmptySet : it->second;
}

const std::set<RoadId>& RoadNetwork::predecessors(RoadId road) const {
  auto it = in_.find(road);
  return it == in_.end() ? kEmptySet : it->second;
}

RoadNetwork build_network(const std::vector<RoadId>& roads,
                          const std::vector<std::pair<RoadId, RoadId>>& edges) {
  RoadNetwork net;
  for (RoadId road : roads) {
    if (is_dumb(road)) {
      raise(Errc::sentinel_id_used, "dumb-point sentinel cannot be a road id");
    }
    net.roads_.insert(road);
  }
  for (const auto& [from, to] : edges) {
    if (is_dumb(from) || is_dumb(to)) {
      raise(Errc::sentinel_id_used, "dumb-point sentinel cannot appear in an edge");
    }
    if (from == to) {
      raise(Errc::self_loop, "self-loop on road " + std::to_string(from));
    }
    if (!net.contains(from) || !net.contains(to)) {
      raise(Errc::unknown_road_in_edge,
            "edge (" + std::to_string(from) + "," + std::to_string(to) +
                ") references a road outside the vertex set");
    }
    if (net.out_[from].insert(to).second) {
      net.in_[to].insert(from);
      ++net.edge_count_;
    }
  }
  return net;
}

Eigen::MatrixXi adjacency_matrix(const RoadNetwork& net, const std::vector<RoadId>& ordering) {
  std::set<RoadId> seen(ordering.begin(), ordering.end());
  if (seen.size() != ordering.size() || seen != net.roads()) {
    raise(Errc::ordering_not_permutation, "ordering must be a permutation of the network's roads");
  }
  const Eigen::Index n = static_cast<Eigen::Index>(ordering.size());
  Eigen::MatrixXi adjacency = Eigen::MatrixXi::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (net.has_edge(ordering[i], ordering[j])) {
        adjacency(i, j) = 1;
      }
    }
  }
  return adjacency;
}

std::set<RoadId> upstream(const RoadNetwork& net, RoadId tar, int order) {
  return order_set(net, tar, order, /*up=*/true);
}

std::set<RoadId> downstream(const RoadNetwork& net, RoadId tar, int order) {
  return order_set(net, tar, order, /*up=*/false);
}

RoadNetwork load_edge_list(const std::string& path, const std::vector<RoadId>& extra_roads) {
  std::ifstream in(path);
  if (!in) {
    raise(Errc::io_error, "cannot open edge list " + path);
  }
  std::vector<std::pair<RoadId, RoadId>> edges;
  std::set<RoadId> roads(extra_roads.begin(), extra_roads.end());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::size_t first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream row(line);
    std::uint64_t from = 0;
    std::uint64_t to = 0;
    char comma = 0;
    if (!(row >> from >> comma >> to) || comma != ',') {
      raise(Errc::malformed_row, path + ":" + std::to_string(line_no) + ": expected `from_id,to_id`");
    }
    edges.emplace_back(from, to);
    roads.insert(from);
    roads.insert(to);
  }
  return build_network(std::vector<RoadId>(roads.begin(), roads.end()), edges);
}

}  // namespace irnet

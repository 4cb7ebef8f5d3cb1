#pragma once

#include <algorithm>
#include <array>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "tofg/error.hpp"
#include "tofg/geometry.hpp"
#include "tofg/log.hpp"
#include "tofg/scene.hpp"

namespace tofg::graph {

using geometry::Vec2;
using scene::Scenario;
using scene::TrafficLight;

struct GraphConfig {
  double target_len = 0.3;
  int n_scale = 4;
  double interaction_threshold = 100.0;
  // Nodes farther than this from the ego's last position are dropped; 0 keeps
  // the whole map.
  double roi_radius = 0.0;

  friend bool operator==(const GraphConfig&, const GraphConfig&) = default;
};

struct RegionOfInterest {
  Vec2 center;
  double radius = 0.0;
};

struct LaneNode {
  int lane_index = 0;
  int index_in_lane = 0;
  geometry::Segment segment;
  geometry::OrientedRect rect;
  geometry::Bounds bounds{};
};

/// Fine-grained lane segments with directed successor adjacency.
struct LaneGraph {
  std::vector<LaneNode> nodes;
  std::vector<std::vector<int>> successors;
  std::vector<std::string> lane_ids;
  bool cropped = false;

  std::size_t size() const { return nodes.size(); }
};

enum class EdgeType { kGeometric, kMultiscale, kInteraction, kTemporal };

inline std::string to_string(EdgeType t) {
  switch (t) {
    case EdgeType::kGeometric: return "geometric";
    case EdgeType::kMultiscale: return "multiscale";
    case EdgeType::kInteraction: return "interaction";
    case EdgeType::kTemporal: return "temporal";
  }
  return "geometric";
}

/// Undirected node pair within one frame; `scale` is the hop count for
/// lane-graph edges and 0 otherwise.
struct Edge {
  int a = 0;
  int b = 0;
  EdgeType type = EdgeType::kGeometric;
  int scale = 0;

  friend bool operator==(const Edge&, const Edge&) = default;
};

struct NodeOccupancy {
  int occupant = -1;  // agent index
  std::array<double, 4> flow{};

  bool occupied() const { return occupant >= 0; }
  friend bool operator==(const NodeOccupancy&, const NodeOccupancy&) = default;
};

struct OfgNode {
  int lane_node = 0;
  Vec2 midpoint;
  Vec2 seg_vector;
  int occupancy = 0;
  // Backward flow of the occupant: (-vx, -vy, theta, yaw_rate).
  std::array<double, 4> flow{};
  int occupant = -1;
  TrafficLight light = TrafficLight::kNone;
  bool on_route = false;

  friend bool operator==(const OfgNode&, const OfgNode&) = default;
};

struct Ofg {
  int frame = 0;
  std::vector<OfgNode> nodes;
  std::vector<Edge> geometric;
  // Scale-1 entries are the geometric edges, tagged kGeometric.
  std::vector<Edge> multiscale;
  std::vector<Edge> interaction;

  friend bool operator==(const Ofg&, const Ofg&) = default;
};

/// Edge from node `node_t` of frames[frame_pos] to node `node_prev` of
/// frames[frame_pos - 1].
struct TemporalEdge {
  int frame_pos = 0;
  int node_t = 0;
  int node_prev = 0;

  friend bool operator==(const TemporalEdge&, const TemporalEdge&) = default;
};

struct Tofg {
  std::vector<Ofg> frames;
  std::vector<TemporalEdge> temporal_edges;
  std::vector<std::string> lane_ids;   // by LaneNode::lane_index
  std::vector<int> node_lane_index;    // per node, shared by all frames
  std::vector<std::string> agent_ids;  // by occupant index
  std::string ego_id;
  std::optional<scene::AgentState> ego_last;  // ego state at the last frame

  std::size_t nodes_per_frame() const { return frames.empty() ? 0 : frames.front().nodes.size(); }
  friend bool operator==(const Tofg&, const Tofg&) = default;
};

struct FrameRange {
  int first = 0;
  int last = 0;

  int count() const { return last - first + 1; }
};

// ---------------------------------------------------------------------------

inline LaneGraph build_lane_graph(const Scenario& sc, double target_len,
                                  const std::optional<RegionOfInterest>& roi = std::nullopt) {
  LaneGraph g;
  g.cropped = roi.has_value();
  std::vector<int> first_node(sc.lanes.size(), -1);
  std::vector<int> last_node(sc.lanes.size(), -1);
  for (std::size_t li = 0; li < sc.lanes.size(); ++li) {
    const auto& lane = sc.lanes[li];
    g.lane_ids.push_back(lane.id);
    std::vector<geometry::Segment> segs;
    try {
      segs = geometry::resample_polyline(lane.centerline, target_len);
    } catch (const GeometryError& e) {
      throw GeometryError("lane '" + lane.id + "': " + e.what());
    }
    int prev = -1;
    for (std::size_t k = 0; k < segs.size(); ++k) {
      const Vec2 mid = segs[k].midpoint();
      if (roi && geometry::distance(mid, roi->center) > roi->radius) {
        prev = -1;
        continue;
      }
      LaneNode node;
      node.lane_index = static_cast<int>(li);
      node.index_in_lane = static_cast<int>(k);
      node.segment = segs[k];
      node.rect = geometry::expand_segment(segs[k], lane.width);
      node.bounds = geometry::bounds_of(node.rect);
      const int id = static_cast<int>(g.nodes.size());
      g.nodes.push_back(node);
      g.successors.emplace_back();
      if (prev >= 0) g.successors[static_cast<std::size_t>(prev)].push_back(id);
      if (k == 0) first_node[li] = id;
      if (k + 1 == segs.size()) last_node[li] = id;
      prev = id;
    }
  }
  auto connect = [&](int from_lane, int to_lane) {
    const int a = last_node[static_cast<std::size_t>(from_lane)];
    const int b = first_node[static_cast<std::size_t>(to_lane)];
    if (a < 0 || b < 0 || a == b) return;
    auto& succ = g.successors[static_cast<std::size_t>(a)];
    if (std::find(succ.begin(), succ.end(), b) == succ.end()) succ.push_back(b);
  };
  for (std::size_t li = 0; li < sc.lanes.size(); ++li) {
    for (const auto& s : sc.lanes[li].successor_ids) connect(static_cast<int>(li), sc.lane_index(s));
    for (const auto& p : sc.lanes[li].predecessor_ids) connect(sc.lane_index(p), static_cast<int>(li));
  }
  for (auto& succ : g.successors) std::sort(succ.begin(), succ.end());
  return g;
}

/// Per-node occupant and backward flow at `frame`. A node is occupied when
/// its lane rectangle meets a vehicle box; among several candidates the
/// vehicle whose box contains the node centroid wins, else the vehicle whose
/// center is nearest the centroid. Ties go to the lowest agent index.
inline std::vector<NodeOccupancy> assign_occupancy(const LaneGraph& g, const Scenario& sc, int frame) {
  struct Present {
    int agent;
    scene::AgentState state;
    geometry::OrientedRect box;
    geometry::Bounds bounds;
  };
  std::vector<Present> present;
  for (std::size_t i = 0; i < sc.agents.size(); ++i) {
    if (auto s = scene::state_at(sc.agents[i], frame)) {
      const auto box = sc.agents[i].box(*s);
      present.push_back({static_cast<int>(i), *s, box, geometry::bounds_of(box)});
    }
  }
  std::vector<NodeOccupancy> out(g.size());
  std::vector<int> hits_per_agent(present.size(), 0);
  for (std::size_t n = 0; n < g.size(); ++n) {
    const auto& node = g.nodes[n];
    const Vec2 centroid = node.segment.midpoint();
    int best = -1;
    bool best_contains = false;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t p = 0; p < present.size(); ++p) {
      if (!node.bounds.overlaps(present[p].bounds)) continue;
      if (!geometry::rects_intersect(node.rect, present[p].box)) continue;
      ++hits_per_agent[p];
      const bool contains = present[p].box.contains(centroid);
      const double dist = geometry::distance(centroid, present[p].box.center);
      const bool better = best < 0 || (contains && !best_contains) ||
                          (contains == best_contains && dist < best_dist);
      if (better) {
        best = static_cast<int>(p);
        best_contains = contains;
        best_dist = dist;
      }
    }
    if (best >= 0) {
      const auto& s = present[static_cast<std::size_t>(best)].state;
      out[n].occupant = present[static_cast<std::size_t>(best)].agent;
      out[n].flow = {-s.vx, -s.vy, s.theta, s.yaw_rate};
    }
  }
  for (std::size_t p = 0; p < present.size(); ++p) {
    if (hits_per_agent[p] == 0 && !g.cropped) {
      log::warn("scenario '" + sc.id + "' frame " + std::to_string(frame) + ": agent '" +
                sc.agents[static_cast<std::size_t>(present[p].agent)].id + "' overlaps no lane segment");
    }
  }
  return out;
}

/// Pairs (i, j) whose directed hop distance along successor links is 1..n_scale,
/// stored once as (min, max) with the smallest hop count found.
inline std::vector<Edge> build_multiscale_edges(const LaneGraph& g, int n_scale) {
  if (n_scale < 1) throw ConfigError("build_multiscale_edges: n_scale must be >= 1");
  std::vector<std::tuple<int, int, int>> found;
  std::vector<int> depth(g.size(), -1);
  std::vector<int> frontier, next, touched;
  for (std::size_t src = 0; src < g.size(); ++src) {
    frontier.assign(1, static_cast<int>(src));
    depth[src] = 0;
    touched.assign(1, static_cast<int>(src));
    for (int d = 1; d <= n_scale && !frontier.empty(); ++d) {
      next.clear();
      for (int u : frontier) {
        for (int v : g.successors[static_cast<std::size_t>(u)]) {
          if (depth[static_cast<std::size_t>(v)] >= 0) continue;
          depth[static_cast<std::size_t>(v)] = d;
          touched.push_back(v);
          next.push_back(v);
          const int s = static_cast<int>(src);
          found.emplace_back(std::min(s, v), std::max(s, v), d);
        }
      }
      frontier.swap(next);
    }
    for (int t : touched) depth[static_cast<std::size_t>(t)] = -1;
  }
  std::sort(found.begin(), found.end());
  std::vector<Edge> edges;
  for (const auto& [a, b, d] : found) {
    if (!edges.empty() && edges.back().a == a && edges.back().b == b) continue;
    edges.push_back({a, b, d == 1 ? EdgeType::kGeometric : EdgeType::kMultiscale, d});
  }
  return edges;
}

/// For each pair of vehicles closer than `threshold` (center to center), both
/// occupying nodes: an injection from the smaller occupied set into the
/// larger one. Both sets are ordered back to front along each vehicle's
/// heading; the k-th node of the smaller set (size m) pairs with the node at
/// the center of the k-th of m equal bins of the larger set (size n).
inline std::vector<Edge> build_interaction_edges(const std::vector<OfgNode>& nodes, const Scenario& sc,
                                                 int frame, double threshold) {
  struct Occupied {
    int agent;
    scene::AgentState state;
    std::vector<int> nodes;
  };
  std::map<int, std::vector<int>> by_agent;
  for (std::size_t n = 0; n < nodes.size(); ++n) {
    if (nodes[n].occupant >= 0) by_agent[nodes[n].occupant].push_back(static_cast<int>(n));
  }
  std::vector<Occupied> vehicles;
  for (auto& [agent, members] : by_agent) {
    const auto s = scene::state_at(sc.agents[static_cast<std::size_t>(agent)], frame);
    if (!s) continue;
    const Vec2 dir = geometry::direction(s->theta);
    const Vec2 center = s->position();
    std::stable_sort(members.begin(), members.end(), [&](int i, int j) {
      const double si = geometry::dot(nodes[static_cast<std::size_t>(i)].midpoint - center, dir);
      const double sj = geometry::dot(nodes[static_cast<std::size_t>(j)].midpoint - center, dir);
      return si < sj || (si == sj && i < j);
    });
    vehicles.push_back({agent, *s, members});
  }
  std::vector<Edge> edges;
  for (std::size_t i = 0; i < vehicles.size(); ++i) {
    for (std::size_t j = i + 1; j < vehicles.size(); ++j) {
      const double d = geometry::distance(vehicles[i].state.position(), vehicles[j].state.position());
      if (!(d < threshold)) continue;
      const auto& small = vehicles[i].nodes.size() <= vehicles[j].nodes.size() ? vehicles[i] : vehicles[j];
      const auto& large = &small == &vehicles[i] ? vehicles[j] : vehicles[i];
      const std::size_t m = small.nodes.size();
      const std::size_t n = large.nodes.size();
      for (std::size_t k = 0; k < m; ++k) {
        const std::size_t target = ((2 * k + 1) * n) / (2 * m);
        edges.push_back({small.nodes[k], large.nodes[target], EdgeType::kInteraction, 0});
      }
    }
  }
  return edges;
}

namespace detail {

inline std::vector<OfgNode> make_nodes(const LaneGraph& g, const Scenario& sc, int frame,
                                       const std::vector<NodeOccupancy>& occ) {
  std::vector<OfgNode> nodes(g.size());
  for (std::size_t n = 0; n < g.size(); ++n) {
    const auto& ln = g.nodes[n];
    auto& node = nodes[n];
    node.lane_node = static_cast<int>(n);
    node.midpoint = ln.segment.midpoint();
    node.seg_vector = ln.segment.vector();
    node.occupant = occ[n].occupant;
    node.occupancy = occ[n].occupied() ? 1 : 0;
    node.flow = occ[n].flow;
    const auto& lane_id = g.lane_ids[static_cast<std::size_t>(ln.lane_index)];
    node.light = sc.light_at(lane_id, frame);
    node.on_route = sc.route_lane_ids.contains(lane_id);
  }
  return nodes;
}

}  // namespace detail

inline Ofg build_ofg(const LaneGraph& g, const std::vector<Edge>& multiscale, const Scenario& sc, int frame,
                     const GraphConfig& config) {
  Ofg ofg;
  ofg.frame = frame;
  ofg.nodes = detail::make_nodes(g, sc, frame, assign_occupancy(g, sc, frame));
  ofg.multiscale = multiscale;
  for (const auto& e : multiscale) {
    if (e.type == EdgeType::kGeometric) ofg.geometric.push_back(e);
  }
  ofg.interaction = build_interaction_edges(ofg.nodes, sc, frame, config.interaction_threshold);
  return ofg;
}

/// Each node a vehicle occupies at frame t links to the nearest node it
/// occupied at t-1. Node midpoints at t are expressed in the vehicle's frame
/// at t, those at t-1 in its frame at t-1; ties go to the lowest node index.
inline std::vector<TemporalEdge> build_temporal_edges(const Ofg& prev, const Ofg& cur, int frame_pos,
                                                      const Scenario& sc) {
  std::map<int, std::vector<int>> occ_prev, occ_cur;
  for (std::size_t n = 0; n < prev.nodes.size(); ++n) {
    if (prev.nodes[n].occupant >= 0) occ_prev[prev.nodes[n].occupant].push_back(static_cast<int>(n));
  }
  for (std::size_t n = 0; n < cur.nodes.size(); ++n) {
    if (cur.nodes[n].occupant >= 0) occ_cur[cur.nodes[n].occupant].push_back(static_cast<int>(n));
  }
  std::vector<TemporalEdge> edges;
  for (const auto& [agent, cur_nodes] : occ_cur) {
    const auto it = occ_prev.find(agent);
    if (it == occ_prev.end()) continue;
    const auto& track = sc.agents[static_cast<std::size_t>(agent)];
    const auto s_cur = scene::state_at(track, cur.frame);
    const auto s_prev = scene::state_at(track, prev.frame);
    if (!s_cur || !s_prev) continue;
    const geometry::Frame2D f_cur{s_cur->position(), s_cur->theta};
    const geometry::Frame2D f_prev{s_prev->position(), s_prev->theta};
    std::vector<Vec2> prev_rel;
    prev_rel.reserve(it->second.size());
    for (int v : it->second) prev_rel.push_back(geometry::to_frame(prev.nodes[static_cast<std::size_t>(v)].midpoint, f_prev));
    for (int u : cur_nodes) {
      const Vec2 p = geometry::to_frame(cur.nodes[static_cast<std::size_t>(u)].midpoint, f_cur);
      int best = -1;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < prev_rel.size(); ++k) {
        const Vec2 diff = p - prev_rel[k];
        const double d = geometry::dot(diff, diff);
        if (d < best_d) {  // candidates are in ascending node order
          best_d = d;
          best = it->second[k];
        }
      }
      edges.push_back({frame_pos, u, best});
    }
  }
  return edges;
}

inline Tofg build_tofg(const Scenario& sc, FrameRange frames, const GraphConfig& config) {
  if (frames.count() < 1) {
    throw ValidationError("build_tofg: empty frame range [" + std::to_string(frames.first) + ", " +
                          std::to_string(frames.last) + "]");
  }
  std::optional<RegionOfInterest> roi;
  if (config.roi_radius > 0.0) {
    const auto ego = scene::state_at(sc.ego(), frames.last);
    if (!ego) {
      throw ValidationError("build_tofg: scenario '" + sc.id + "': ego not observed at frame " +
                            std::to_string(frames.last));
    }
    roi = RegionOfInterest{ego->position(), config.roi_radius};
  }
  LaneGraph g;
  try {
    g = build_lane_graph(sc, config.target_len, roi);
  } catch (const GeometryError& e) {
    throw GeometryError("scenario '" + sc.id + "': " + e.what());
  }
  const auto multiscale = build_multiscale_edges(g, config.n_scale);
  Tofg tofg;
  tofg.lane_ids = g.lane_ids;
  for (const auto& n : g.nodes) tofg.node_lane_index.push_back(n.lane_index);
  for (const auto& a : sc.agents) tofg.agent_ids.push_back(a.id);
  tofg.ego_id = sc.ego_id;
  tofg.ego_last = scene::state_at(sc.ego(), frames.last);
  for (int f = frames.first; f <= frames.last; ++f) {
    tofg.frames.push_back(build_ofg(g, multiscale, sc, f, config));
  }
  for (std::size_t t = 1; t < tofg.frames.size(); ++t) {
    auto edges = build_temporal_edges(tofg.frames[t - 1], tofg.frames[t], static_cast<int>(t), sc);
    tofg.temporal_edges.insert(tofg.temporal_edges.end(), edges.begin(), edges.end());
  }
  return tofg;
}

// ---------------------------------------------------------------------------
// Export

struct EdgeCounts {
  std::size_t nodes = 0;
  std::size_t geometric = 0;
  std::size_t multiscale = 0;
  std::size_t interaction = 0;
  std::size_t temporal = 0;
};

inline EdgeCounts count_edges(const Tofg& tofg) {
  EdgeCounts c;
  for (const auto& f : tofg.frames) {
    c.nodes += f.nodes.size();
    c.geometric += f.geometric.size();
    c.multiscale += f.multiscale.size();
    c.interaction += f.interaction.size();
  }
  c.temporal = tofg.temporal_edges.size();
  return c;
}

/// `{frames:[{frame, nodes:[...], edges:{geometric, multiscale, interaction}}], temporal_edges}`.
/// Temporal edges are `[frame_t, node_t, node_t_minus_1]` with node indices
/// local to their frame.
inline nlohmann::json to_json(const Tofg& tofg) {
  using nlohmann::json;
  json frames = json::array();
  for (const auto& f : tofg.frames) {
    json nodes = json::array();
    for (std::size_t n = 0; n < f.nodes.size(); ++n) {
      const auto& node = f.nodes[n];
      nodes.push_back({
          {"id", n},
          {"lane_id", tofg.lane_ids[static_cast<std::size_t>(tofg.node_lane_index[n])]},
          {"midpoint", {node.midpoint.x, node.midpoint.y}},
          {"vector", {node.seg_vector.x, node.seg_vector.y}},
          {"occupancy", node.occupancy},
          {"flow", node.flow},
          {"occupant", node.occupant >= 0 ? json(tofg.agent_ids[static_cast<std::size_t>(node.occupant)]) : json(nullptr)},
          {"light", scene::to_string(node.light)},
          {"on_route", node.on_route},
      });
    }
    auto pairs = [](const std::vector<Edge>& edges, bool with_scale) {
      json out = json::array();
      for (const auto& e : edges) out.push_back(with_scale ? json{e.a, e.b, e.scale} : json{e.a, e.b});
      return out;
    };
    frames.push_back({{"frame", f.frame},
                      {"nodes", nodes},
                      {"edges",
                       {{"geometric", pairs(f.geometric, false)},
                        {"multiscale", pairs(f.multiscale, true)},
                        {"interaction", pairs(f.interaction, false)}}}});
  }
  json temporal = json::array();
  for (const auto& e : tofg.temporal_edges) {
    temporal.push_back({tofg.frames[static_cast<std::size_t>(e.frame_pos)].frame, e.node_t, e.node_prev});
  }
  return {{"frames", frames}, {"temporal_edges", temporal}};
}

}  // namespace tofg::graph

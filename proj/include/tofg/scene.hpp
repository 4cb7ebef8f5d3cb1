#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tofg/error.hpp"
#include "tofg/geometry.hpp"

namespace tofg::scene {

using geometry::Pose2D;
using geometry::Vec2;

enum class TrafficLight { kRed = 0, kYellow = 1, kGreen = 2, kNone = 3 };

inline constexpr int kTrafficLightCount = 4;

inline std::string to_string(TrafficLight light) {
  switch (light) {
    case TrafficLight::kRed: return "red";
    case TrafficLight::kYellow: return "yellow";
    case TrafficLight::kGreen: return "green";
    case TrafficLight::kNone: return "none";
  }
  return "none";
}

inline std::optional<TrafficLight> parse_traffic_light(const std::string& s) {
  if (s == "red") return TrafficLight::kRed;
  if (s == "yellow") return TrafficLight::kYellow;
  if (s == "green") return TrafficLight::kGreen;
  if (s == "none") return TrafficLight::kNone;
  return std::nullopt;
}

struct AgentState {
  int frame = 0;
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;
  double vx = 0.0;
  double vy = 0.0;
  double yaw_rate = 0.0;

  Vec2 position() const { return {x, y}; }
  Pose2D pose() const { return {x, y, theta}; }
  double speed() const { return std::hypot(vx, vy); }
  friend bool operator==(const AgentState&, const AgentState&) = default;
};

struct AgentTrack {
  std::string id;
  double length = 0.0;
  double width = 0.0;
  std::vector<AgentState> states;

  int first_frame() const { return states.front().frame; }
  int last_frame() const { return states.back().frame; }

  geometry::OrientedRect box(const AgentState& s) const {
    return {s.position(), s.theta, 0.5 * length, 0.5 * width};
  }

  friend bool operator==(const AgentTrack&, const AgentTrack&) = default;
};

struct LaneSpec {
  std::string id;
  std::vector<Vec2> centerline;
  double width = 0.0;
  std::vector<std::string> successor_ids;
  std::vector<std::string> predecessor_ids;

  friend bool operator==(const LaneSpec&, const LaneSpec&) = default;
};

/// Immutable once loaded or generated.
struct Scenario {
  std::string id;
  double frame_interval = 0.5;
  std::vector<LaneSpec> lanes;
  std::vector<AgentTrack> agents;
  std::string ego_id;
  std::set<std::string> route_lane_ids;
  Pose2D goal;
  // lane id -> frame -> state; unspecified entries are kNone.
  std::map<std::string, std::map<int, TrafficLight>> traffic_lights;

  friend bool operator==(const Scenario&, const Scenario&) = default;

  int agent_index(const std::string& agent_id) const {
    for (std::size_t i = 0; i < agents.size(); ++i) {
      if (agents[i].id == agent_id) return static_cast<int>(i);
    }
    return -1;
  }

  int lane_index(const std::string& lane_id) const {
    for (std::size_t i = 0; i < lanes.size(); ++i) {
      if (lanes[i].id == lane_id) return static_cast<int>(i);
    }
    return -1;
  }

  const AgentTrack& ego() const { return agents.at(static_cast<std::size_t>(agent_index(ego_id))); }

  TrafficLight light_at(const std::string& lane_id, int frame) const {
    const auto lane_it = traffic_lights.find(lane_id);
    if (lane_it == traffic_lights.end()) return TrafficLight::kNone;
    const auto it = lane_it->second.find(frame);
    return it == lane_it->second.end() ? TrafficLight::kNone : it->second;
  }

  int first_frame() const {
    int f = agents.front().first_frame();
    for (const auto& a : agents) f = std::min(f, a.first_frame());
    return f;
  }

  int last_frame() const {
    int f = agents.front().last_frame();
    for (const auto& a : agents) f = std::max(f, a.last_frame());
    return f;
  }
};

/// Exact stored state, or nullopt when the agent is not observed at `frame`.
inline std::optional<AgentState> state_at(const AgentTrack& track, int frame) {
  const auto it = std::lower_bound(track.states.begin(), track.states.end(), frame,
                                   [](const AgentState& s, int f) { return s.frame < f; });
  if (it == track.states.end() || it->frame != frame) return std::nullopt;
  return *it;
}

// ---------------------------------------------------------------------------
// Validation

inline void validate(const Scenario& sc) {
  auto fail = [](const std::string& field, const std::string& what) {
    throw ValidationError(field + ": " + what);
  };
  if (!(sc.frame_interval > 0.0) || !std::isfinite(sc.frame_interval)) {
    fail("frame_interval", "must be > 0");
  }
  std::set<std::string> lane_ids;
  for (std::size_t i = 0; i < sc.lanes.size(); ++i) {
    const auto& lane = sc.lanes[i];
    const std::string field = "lanes[" + std::to_string(i) + "]";
    if (lane.id.empty()) fail(field + ".id", "must be non-empty");
    if (!lane_ids.insert(lane.id).second) fail(field + ".id", "duplicate lane id '" + lane.id + "'");
    if (lane.centerline.size() < 2) fail(field + ".centerline", "needs at least 2 points");
    for (std::size_t k = 1; k < lane.centerline.size(); ++k) {
      if (lane.centerline[k] == lane.centerline[k - 1]) {
        fail(field + ".centerline[" + std::to_string(k) + "]", "consecutive points must be distinct");
      }
    }
    for (const auto& p : lane.centerline) {
      if (!std::isfinite(p.x) || !std::isfinite(p.y)) fail(field + ".centerline", "non-finite point");
    }
    if (!(lane.width > 0.0)) fail(field + ".width", "must be > 0");
  }
  for (std::size_t i = 0; i < sc.lanes.size(); ++i) {
    const std::string field = "lanes[" + std::to_string(i) + "]";
    for (const auto& s : sc.lanes[i].successor_ids) {
      if (!lane_ids.contains(s)) fail(field + ".successors", "unknown lane '" + s + "'");
    }
    for (const auto& p : sc.lanes[i].predecessor_ids) {
      if (!lane_ids.contains(p)) fail(field + ".predecessors", "unknown lane '" + p + "'");
    }
  }
  if (sc.agents.empty()) fail("agents", "must contain at least the ego agent");
  std::set<std::string> agent_ids;
  for (std::size_t i = 0; i < sc.agents.size(); ++i) {
    const auto& a = sc.agents[i];
    const std::string field = "agents[" + std::to_string(i) + "]";
    if (!agent_ids.insert(a.id).second) fail(field + ".id", "duplicate agent id '" + a.id + "'");
    if (!(a.length > 0.0)) fail(field + ".length", "must be > 0");
    if (!(a.width > 0.0)) fail(field + ".width", "must be > 0");
    if (a.states.empty()) fail(field + ".states", "must be non-empty");
    constexpr double kPi = std::numbers::pi;
    for (std::size_t k = 0; k < a.states.size(); ++k) {
      const auto& s = a.states[k];
      const std::string sf = field + ".states[" + std::to_string(k) + "]";
      if (k > 0 && s.frame <= a.states[k - 1].frame) fail(sf, "frames must be strictly increasing");
      for (double v : {s.x, s.y, s.theta, s.vx, s.vy, s.yaw_rate}) {
        if (!std::isfinite(v)) fail(sf, "non-finite value");
      }
      if (!(s.theta > -kPi && s.theta <= kPi)) fail(sf + ".theta", "must lie in (-pi, pi]");
    }
  }
  if (!agent_ids.contains(sc.ego_id)) fail("ego_id", "agent '" + sc.ego_id + "' not in agents");
  for (const auto& r : sc.route_lane_ids) {
    if (!lane_ids.contains(r)) fail("route_lane_ids", "unknown lane '" + r + "'");
  }
  for (const auto& [lane_id, _] : sc.traffic_lights) {
    if (!lane_ids.contains(lane_id)) fail("traffic_lights", "unknown lane '" + lane_id + "'");
  }
}

// ---------------------------------------------------------------------------
// JSON schema

inline nlohmann::json to_json(const Scenario& sc) {
  using nlohmann::json;
  json doc;
  doc["id"] = sc.id;
  doc["frame_interval"] = sc.frame_interval;
  json lanes = json::array();
  for (const auto& lane : sc.lanes) {
    json pts = json::array();
    for (const auto& p : lane.centerline) pts.push_back({p.x, p.y});
    lanes.push_back({{"id", lane.id},
                     {"centerline", pts},
                     {"width", lane.width},
                     {"successors", lane.successor_ids},
                     {"predecessors", lane.predecessor_ids}});
  }
  doc["lanes"] = lanes;
  json agents = json::array();
  for (const auto& a : sc.agents) {
    json states = json::array();
    for (const auto& s : a.states) states.push_back({s.frame, s.x, s.y, s.theta, s.vx, s.vy, s.yaw_rate});
    agents.push_back({{"id", a.id}, {"length", a.length}, {"width", a.width}, {"states", states}});
  }
  doc["agents"] = agents;
  doc["ego_id"] = sc.ego_id;
  doc["route_lane_ids"] = json(std::vector<std::string>(sc.route_lane_ids.begin(), sc.route_lane_ids.end()));
  doc["goal"] = {{"x", sc.goal.x}, {"y", sc.goal.y}, {"theta", sc.goal.theta}};
  json lights = json::object();
  for (const auto& [lane_id, per_frame] : sc.traffic_lights) {
    json entries = json::array();
    for (const auto& [frame, state] : per_frame) entries.push_back({frame, to_string(state)});
    lights[lane_id] = entries;
  }
  doc["traffic_lights"] = lights;
  return doc;
}

namespace detail {

template <typename T>
T field(const nlohmann::json& obj, const char* key, const std::string& path) {
  if (!obj.is_object() || !obj.contains(key)) throw ParseError(path + "." + key + ": missing field");
  try {
    return obj.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + "." + key + ": " + e.what());
  }
}

}  // namespace detail

inline Scenario from_json(const nlohmann::json& doc) {
  using detail::field;
  Scenario sc;
  if (!doc.is_object()) throw ParseError("scenario: top-level value must be an object");
  sc.id = field<std::string>(doc, "id", "scenario");
  sc.frame_interval = field<double>(doc, "frame_interval", "scenario");
  const auto lanes = field<nlohmann::json>(doc, "lanes", "scenario");
  if (!lanes.is_array()) throw ParseError("scenario.lanes: must be an array");
  for (std::size_t i = 0; i < lanes.size(); ++i) {
    const std::string path = "lanes[" + std::to_string(i) + "]";
    LaneSpec lane;
    lane.id = field<std::string>(lanes[i], "id", path);
    for (const auto& p : field<std::vector<std::array<double, 2>>>(lanes[i], "centerline", path)) {
      lane.centerline.push_back({p[0], p[1]});
    }
    lane.width = field<double>(lanes[i], "width", path);
    lane.successor_ids = field<std::vector<std::string>>(lanes[i], "successors", path);
    lane.predecessor_ids = field<std::vector<std::string>>(lanes[i], "predecessors", path);
    sc.lanes.push_back(std::move(lane));
  }
  const auto agents = field<nlohmann::json>(doc, "agents", "scenario");
  if (!agents.is_array()) throw ParseError("scenario.agents: must be an array");
  for (std::size_t i = 0; i < agents.size(); ++i) {
    const std::string path = "agents[" + std::to_string(i) + "]";
    AgentTrack track;
    track.id = field<std::string>(agents[i], "id", path);
    track.length = field<double>(agents[i], "length", path);
    track.width = field<double>(agents[i], "width", path);
    for (const auto& row : field<std::vector<std::array<double, 7>>>(agents[i], "states", path)) {
      if (row[0] != std::floor(row[0])) throw ParseError(path + ".states: frame must be an integer");
      track.states.push_back({static_cast<int>(row[0]), row[1], row[2], row[3], row[4], row[5], row[6]});
    }
    sc.agents.push_back(std::move(track));
  }
  sc.ego_id = field<std::string>(doc, "ego_id", "scenario");
  for (auto& r : field<std::vector<std::string>>(doc, "route_lane_ids", "scenario")) {
    sc.route_lane_ids.insert(std::move(r));
  }
  const auto goal = field<nlohmann::json>(doc, "goal", "scenario");
  sc.goal = {field<double>(goal, "x", "goal"), field<double>(goal, "y", "goal"),
             field<double>(goal, "theta", "goal")};
  if (doc.contains("traffic_lights")) {
    const auto& lights = doc.at("traffic_lights");
    if (!lights.is_object()) throw ParseError("scenario.traffic_lights: must be an object");
    for (const auto& [lane_id, entries] : lights.items()) {
      const std::string path = "traffic_lights." + lane_id;
      if (!entries.is_array()) throw ParseError(path + ": must be an array of [frame, state]");
      auto& per_frame = sc.traffic_lights[lane_id];
      for (const auto& e : entries) {
        if (!e.is_array() || e.size() != 2 || !e[0].is_number_integer() || !e[1].is_string()) {
          throw ParseError(path + ": entries must be [frame, state]");
        }
        const auto light = parse_traffic_light(e[1].get<std::string>());
        if (!light) throw ParseError(path + ": unknown light state '" + e[1].get<std::string>() + "'");
        per_frame[e[0].get<int>()] = *light;
      }
    }
  }
  validate(sc);
  return sc;
}

inline std::string dump_scenario(const Scenario& sc) { return to_json(sc).dump(1) + "\n"; }

inline Scenario parse_scenario(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("scenario: malformed JSON: ") + e.what());
  }
  return from_json(doc);
}

inline Scenario load_scenario(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open scenario file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return parse_scenario(buf.str());
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  } catch (const ValidationError& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

inline void save_scenario(const Scenario& sc, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write scenario file '" + path + "'");
  out << dump_scenario(sc);
  if (!out) throw IoError("write failed for '" + path + "'");
}

// ---------------------------------------------------------------------------
// Synthetic generators

enum class SyntheticKind { kStraight, kCurve, kLaneChange, kOvertake };

inline std::optional<SyntheticKind> parse_kind(const std::string& s) {
  if (s == "straight") return SyntheticKind::kStraight;
  if (s == "curve") return SyntheticKind::kCurve;
  if (s == "lane_change") return SyntheticKind::kLaneChange;
  if (s == "overtake") return SyntheticKind::kOvertake;
  return std::nullopt;
}

inline std::string to_string(SyntheticKind kind) {
  switch (kind) {
    case SyntheticKind::kStraight: return "straight";
    case SyntheticKind::kCurve: return "curve";
    case SyntheticKind::kLaneChange: return "lane_change";
    case SyntheticKind::kOvertake: return "overtake";
  }
  return "straight";
}

/// Parameters shared by every generated scenario.
struct SyntheticLayout {
  static constexpr double kFrameInterval = 0.5;
  static constexpr int kFrames = 60;
  static constexpr double kLaneWidth = 3.5;
  static constexpr double kPieceLength = 60.0;
  static constexpr double kVertexSpacing = 5.0;
  static constexpr double kCarLength = 4.5;
  static constexpr double kCarWidth = 1.9;
};

/// Overtake scenario parameters, exposed so tests can derive expected events.
struct OvertakeParams {
  double ego_speed;
  double neighbor_speed;
  double neighbor_start_x;
  double merge_start_time;
  double merge_duration;
  double stopped_x;
};

namespace detail {

// Deterministic draws independent of the standard library's distribution
// implementations.
class Draw {
 public:
  explicit Draw(std::uint64_t seed) : rng_(seed) {}

  double uniform(double lo, double hi) {
    const double u = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * u;
  }

  int integer(int lo, int hi) { return lo + static_cast<int>(rng_() % static_cast<std::uint64_t>(hi - lo + 1)); }

 private:
  std::mt19937_64 rng_;
};

inline std::uint64_t mix_seed(SyntheticKind kind, std::int64_t seed) {
  std::uint64_t z = static_cast<std::uint64_t>(seed) * 0x9E3779B97F4A7C15ULL +
                    (static_cast<std::uint64_t>(kind) + 1) * 0xBF58476D1CE4E5B9ULL;
  z ^= z >> 31;
  return z;
}

// A path sampled in arc length; centerline vertices are laid at a fixed spacing.
template <typename PathFn>
std::vector<Vec2> sample_path(PathFn&& path, double s0, double s1, double spacing) {
  std::vector<Vec2> pts;
  const int n = std::max(1, static_cast<int>(std::ceil((s1 - s0) / spacing)));
  for (int k = 0; k <= n; ++k) pts.push_back(path(s0 + (s1 - s0) * k / n));
  return pts;
}

// Builds a lane as a chain of pieces "<name>_<k>" with successor links.
template <typename PathFn>
std::vector<LaneSpec> chained_lane(const std::string& name, PathFn&& path, double s0, double s1,
                                   double piece_length, double width, double spacing) {
  std::vector<LaneSpec> pieces;
  const int n = std::max(1, static_cast<int>(std::ceil((s1 - s0) / piece_length)));
  for (int k = 0; k < n; ++k) {
    LaneSpec lane;
    lane.id = name + "_" + std::to_string(k);
    lane.width = width;
    const double a = s0 + (s1 - s0) * k / n;
    const double b = s0 + (s1 - s0) * (k + 1) / n;
    lane.centerline = sample_path(path, a, b, spacing);
    if (k > 0) lane.predecessor_ids.push_back(name + "_" + std::to_string(k - 1));
    if (k + 1 < n) lane.successor_ids.push_back(name + "_" + std::to_string(k + 1));
    pieces.push_back(std::move(lane));
  }
  return pieces;
}

// Turns sampled positions into states whose velocities are the forward
// differences of the positions, so p[k+1] = p[k] + v[k] * dt holds exactly up
// to rounding. Heading follows the motion direction; a stationary agent keeps
// `rest_heading`.
inline std::vector<AgentState> states_from_positions(const std::vector<Vec2>& pos, int first_frame,
                                                     double dt, double rest_heading) {
  std::vector<AgentState> states(pos.size());
  for (std::size_t k = 0; k < pos.size(); ++k) {
    states[k].frame = first_frame + static_cast<int>(k);
    states[k].x = pos[k].x;
    states[k].y = pos[k].y;
    const std::size_t a = k + 1 < pos.size() ? k : (k > 0 ? k - 1 : k);
    const Vec2 delta = a + 1 < pos.size() ? pos[a + 1] - pos[a] : Vec2{};
    states[k].vx = delta.x / dt;
    states[k].vy = delta.y / dt;
    states[k].theta = geometry::norm(delta) > 1e-9 ? geometry::wrap_angle(std::atan2(delta.y, delta.x))
                                                   : geometry::wrap_angle(rest_heading);
  }
  for (std::size_t k = 0; k < states.size(); ++k) {
    const std::size_t a = k + 1 < states.size() ? k : (k > 0 ? k - 1 : k);
    const double next = a + 1 < states.size() ? states[a + 1].theta : states[a].theta;
    states[k].yaw_rate = geometry::wrap_angle(next - states[a].theta) / dt;
  }
  return states;
}

inline double smoothstep5(double u) {
  u = std::clamp(u, 0.0, 1.0);
  return u * u * u * (10.0 + u * (-15.0 + 6.0 * u));
}

// Lanes whose centerline is nearest to the given positions; used as the route.
inline std::set<std::string> nearest_lanes(const std::vector<LaneSpec>& lanes, const std::vector<Vec2>& pos) {
  std::set<std::string> ids;
  for (const Vec2& p : pos) {
    double best = std::numeric_limits<double>::infinity();
    const LaneSpec* best_lane = nullptr;
    for (const auto& lane : lanes) {
      for (std::size_t k = 1; k < lane.centerline.size(); ++k) {
        const double d = geometry::point_segment_distance(p, lane.centerline[k - 1], lane.centerline[k]);
        if (d < best) {
          best = d;
          best_lane = &lane;
        }
      }
    }
    if (best_lane) ids.insert(best_lane->id);
  }
  return ids;
}

inline AgentTrack make_track(const std::string& id, const std::vector<Vec2>& pos, double dt, double rest_heading) {
  AgentTrack t;
  t.id = id;
  t.length = SyntheticLayout::kCarLength;
  t.width = SyntheticLayout::kCarWidth;
  t.states = states_from_positions(pos, 0, dt, rest_heading);
  return t;
}

}  // namespace detail

inline OvertakeParams overtake_params(std::int64_t seed) {
  detail::Draw draw(detail::mix_seed(SyntheticKind::kOvertake, seed) ^ 0x5bd1e995ULL);
  OvertakeParams p{};
  p.ego_speed = draw.uniform(12.0, 14.0);
  p.neighbor_speed = draw.uniform(6.0, 8.0);
  p.neighbor_start_x = draw.uniform(10.0, 16.0);
  // Ego passes once it leads the neighbor by a car length plus a safety gap.
  const double lead_needed = SyntheticLayout::kCarLength + 8.0;
  const double pass_time = (p.neighbor_start_x + lead_needed) / (p.ego_speed - p.neighbor_speed);
  p.merge_start_time = std::max(pass_time, 3.0);
  p.merge_duration = draw.uniform(3.5, 4.5);
  const double merge_end_x = p.ego_speed * (p.merge_start_time + p.merge_duration);
  p.stopped_x = merge_end_x + draw.uniform(25.0, 35.0);
  return p;
}

/// Pure function of (kind, seed). All lanes run along +x in piece chains;
/// agents are 4.5 m x 1.9 m cars sampled every 0.5 s for 60 frames.
inline Scenario gen_synthetic(SyntheticKind kind, std::int64_t seed) {
  using L = SyntheticLayout;
  detail::Draw draw(detail::mix_seed(kind, seed));
  const double dt = L::kFrameInterval;
  const int n = L::kFrames;
  const double w = L::kLaneWidth;

  Scenario sc;
  sc.id = to_string(kind) + "_" + std::to_string(seed);
  sc.frame_interval = dt;
  sc.ego_id = "ego";

  std::vector<Vec2> ego_pos;
  std::vector<AgentTrack> others;

  auto straight_lane = [&](const std::string& name, double y, double x0, double x1) {
    auto pieces = detail::chained_lane(
        name, [y](double s) { return Vec2{s, y}; }, x0, x1, L::kPieceLength, w, L::kVertexSpacing);
    for (auto& p : pieces) sc.lanes.push_back(std::move(p));
  };
  auto cruise = [&](double x0, double y, double v) {
    std::vector<Vec2> pos;
    for (int k = 0; k < n; ++k) pos.push_back({x0 + v * dt * k, y});
    return pos;
  };

  switch (kind) {
    case SyntheticKind::kStraight: {
      const double v = draw.uniform(8.0, 14.0);
      const double x_end = v * dt * n + 60.0;
      straight_lane("lane_0", 0.0, -30.0, x_end);
      straight_lane("lane_1", w, -30.0, x_end);
      ego_pos = cruise(0.0, 0.0, v);
      const int n_others = draw.integer(0, 2);
      for (int i = 0; i < n_others; ++i) {
        const double vo = draw.uniform(6.0, 14.0);
        const double xo = draw.uniform(-20.0, 40.0) + 12.0 * i;
        others.push_back(detail::make_track("car_" + std::to_string(i), cruise(xo, w, vo), dt, 0.0));
      }
      break;
    }
    case SyntheticKind::kCurve: {
      const double v = draw.uniform(7.0, 11.0);
      const double radius = draw.uniform(40.0, 80.0);
      const double straight_len = draw.uniform(20.0, 40.0);
      const double sign = draw.integer(0, 1) == 0 ? 1.0 : -1.0;
      const double turn = 0.5 * std::numbers::pi;
      const double arc_end = straight_len + radius * turn;
      // Straight run along +x, a quarter-circle turn, then straight again.
      auto path = [=](double s) {
        if (s <= straight_len) return Vec2{s, 0.0};
        if (s <= arc_end) {
          const double phi = (s - straight_len) / radius;
          return Vec2{straight_len + radius * std::sin(phi), sign * radius * (1.0 - std::cos(phi))};
        }
        const Vec2 corner{straight_len + radius, sign * radius};
        return corner + Vec2{0.0, sign} * (s - arc_end);
      };
      const double s_end = v * dt * n + 60.0;
      auto pieces = detail::chained_lane("lane_0", path, -30.0, s_end, L::kPieceLength, w, 1.0);
      for (auto& p : pieces) sc.lanes.push_back(std::move(p));
      for (int k = 0; k < n; ++k) ego_pos.push_back(path(v * dt * k));
      break;
    }
    case SyntheticKind::kLaneChange: {
      const double v = draw.uniform(8.0, 13.0);
      const double t_start = draw.uniform(2.5, 12.0);
      const double duration = draw.uniform(3.0, 5.0);
      const double dir = draw.integer(0, 1) == 0 ? 1.0 : -1.0;
      const double x_end = v * dt * n + 60.0;
      straight_lane("lane_0", 0.0, -30.0, x_end);
      straight_lane("lane_1", dir * w, -30.0, x_end);
      for (int k = 0; k < n; ++k) {
        const double t = dt * k;
        ego_pos.push_back({v * t, dir * w * detail::smoothstep5((t - t_start) / duration)});
      }
      // Traffic keeps clear of the ego: one car well behind on the target lane.
      const double vo = draw.uniform(6.0, v);
      others.push_back(detail::make_track("car_0", cruise(-25.0, dir * w, vo), dt, 0.0));
      break;
    }
    case SyntheticKind::kOvertake: {
      const OvertakeParams p = overtake_params(seed);
      const double x_end = p.ego_speed * dt * n + 60.0;
      straight_lane("lane_0", 0.0, -30.0, x_end);
      straight_lane("lane_1", w, -30.0, x_end);
      // Ego starts on lane_1, passes the slower neighbor on lane_0 and merges
      // into lane_0 ahead of it, before reaching a stopped car on lane_1.
      for (int k = 0; k < n; ++k) {
        const double t = dt * k;
        ego_pos.push_back({p.ego_speed * t, w * (1.0 - detail::smoothstep5((t - p.merge_start_time) / p.merge_duration))});
      }
      others.push_back(detail::make_track("neighbor", cruise(p.neighbor_start_x, 0.0, p.neighbor_speed), dt, 0.0));
      others.push_back(detail::make_track("stopped", cruise(p.stopped_x, w, 0.0), dt, 0.0));
      // The stopped car waits at a red light on its lane piece.
      for (const auto& lane : sc.lanes) {
        if (lane.id.starts_with("lane_1_") && lane.centerline.front().x <= p.stopped_x &&
            p.stopped_x <= lane.centerline.back().x) {
          for (int k = 0; k < n; ++k) sc.traffic_lights[lane.id][k] = TrafficLight::kRed;
        }
      }
      break;
    }
  }

  AgentTrack ego = detail::make_track("ego", ego_pos, dt, 0.0);
  sc.agents.push_back(std::move(ego));
  for (auto& o : others) sc.agents.push_back(std::move(o));
  if (kind == SyntheticKind::kStraight) {
    for (int k = 0; k < n; ++k) sc.traffic_lights["lane_0_1"][k] = TrafficLight::kGreen;
  }
  sc.route_lane_ids = detail::nearest_lanes(sc.lanes, ego_pos);
  const auto& last = sc.agents.front().states.back();
  sc.goal = {last.x, last.y, last.theta};
  validate(sc);
  return sc;
}

}  // namespace tofg::scene

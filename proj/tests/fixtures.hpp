#pragma once

#include <vector>

#include "tofg/geometry.hpp"
#include "tofg/model.hpp"
#include "tofg/scene.hpp"

namespace fixture {

using tofg::geometry::Vec2;
using tofg::scene::Scenario;

/// Two 0.9 m lanes chained into 6 nodes, ego and one neighbor inching
/// forward, `frames` frames. Small enough for exhaustive gradient checks.
inline Scenario tiny(int frames = 5) {
  Scenario sc;
  sc.id = "tiny";
  sc.frame_interval = 0.5;
  sc.lanes.push_back({"A", {{0, 0}, {0.9, 0}}, 3.0, {"B"}, {}});
  sc.lanes.push_back({"B", {{0.9, 0}, {1.8, 0}}, 3.0, {}, {}});
  sc.route_lane_ids = {"A", "B"};
  sc.traffic_lights["B"][frames - 1] = tofg::scene::TrafficLight::kYellow;
  tofg::scene::AgentTrack ego{"ego", 0.5, 0.4, {}}, car{"car", 0.45, 0.4, {}};
  for (int f = 0; f < frames; ++f) {
    ego.states.push_back({f, 0.32 + 0.02 * f, 0.1, 0.05, 0.04, 0.002, 0.01});
    car.states.push_back({f, 1.27 + 0.01 * f, -0.05, -0.02, 0.02, 0.0, -0.01});
  }
  sc.agents = {ego, car};
  sc.ego_id = "ego";
  sc.goal = {1.8, 0, 0};
  tofg::scene::validate(sc);
  return sc;
}

inline tofg::model::ModelConfig small_model() {
  tofg::model::ModelConfig cfg;
  cfg.embed_dim = 8;
  cfg.mlp_hidden = 8;
  cfg.n_head = 4;
  cfg.seed = 3;
  return cfg;
}

inline Scenario translated(const Scenario& sc, Vec2 d) {
  auto out = sc;
  for (auto& lane : out.lanes) {
    for (auto& p : lane.centerline) p = p + d;
  }
  for (auto& a : out.agents) {
    for (auto& s : a.states) s.x += d.x, s.y += d.y;
  }
  out.goal.x += d.x;
  out.goal.y += d.y;
  return out;
}

}  // namespace fixture

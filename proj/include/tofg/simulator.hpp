#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "tofg/error.hpp"
#include "tofg/geometry.hpp"
#include "tofg/graph.hpp"
#include "tofg/metrics.hpp"
#include "tofg/model.hpp"
#include "tofg/scene.hpp"

namespace tofg::simulator {

using geometry::Pose2D;
using geometry::Vec2;
using scene::AgentState;
using scene::Scenario;

struct SimConfig {
  double duration = 20.0;
  double replan_interval = 0.5;
  int history = 5;
  bool collision_check = true;
  double correction_decel = 4.0;  // m/s^2 while auto-correcting

  friend bool operator==(const SimConfig&, const SimConfig&) = default;
};

enum class CorrectionCause { kCollision, kOffRoad };

inline std::string to_string(CorrectionCause c) { return c == CorrectionCause::kCollision ? "collision" : "off_road"; }

struct CorrectionEvent {
  int frame = 0;
  CorrectionCause cause = CorrectionCause::kCollision;
  friend bool operator==(const CorrectionEvent&, const CorrectionEvent&) = default;
};

struct PlanRecord {
  int frame = 0;
  std::vector<Pose2D> waypoints;
  friend bool operator==(const PlanRecord&, const PlanRecord&) = default;
};

struct SimTrace {
  std::string scenario_id;
  int start_frame = 0;
  std::vector<AgentState> driven;  // one per frame, start_frame .. start_frame + steps
  std::vector<Pose2D> expert;      // logged ego over the same frames
  std::vector<PlanRecord> plans;
  std::vector<CorrectionEvent> events;
  std::vector<scene::AgentTrack> replayed;  // non-ego agents over the same frames

  std::vector<Pose2D> driven_poses() const {
    std::vector<Pose2D> out;
    for (const auto& s : driven) out.push_back(s.pose());
    return out;
  }
  friend bool operator==(const SimTrace&, const SimTrace&) = default;
};

/// Produces H future ego poses, one per frame after `frame`, from a scenario
/// whose ego track ends at `frame` (history only, driven states included).
class Planner {
 public:
  virtual ~Planner() = default;
  virtual int horizon() const = 0;
  virtual std::vector<Pose2D> plan(const Scenario& history, int frame) = 0;
};

/// TOFG-GAT in the loop.
class ModelPlanner : public Planner {
 public:
  ModelPlanner(nn::ParamStore params, model::ModelConfig cfg, graph::GraphConfig gcfg)
      : params_(std::move(params)), cfg_(cfg), gcfg_(gcfg) {}

  int horizon() const override { return cfg_.horizon; }

  std::vector<Pose2D> plan(const Scenario& history, int frame) override {
    const auto tofg = graph::build_tofg(history, {frame - cfg_.history + 1, frame}, gcfg_);
    return model::predict(tofg, cfg_, params_).waypoints;
  }

 private:
  nn::ParamStore params_;
  model::ModelConfig cfg_;
  graph::GraphConfig gcfg_;
};

/// Returns the logged ego future; the last logged pose repeats past the log end.
class OraclePlanner : public Planner {
 public:
  OraclePlanner(const Scenario& log, int horizon) : ego_(log.ego()), horizon_(horizon) {}

  int horizon() const override { return horizon_; }

  std::vector<Pose2D> plan(const Scenario&, int frame) override {
    std::vector<Pose2D> out;
    for (int k = 1; k <= horizon_; ++k) {
      const int f = std::min(frame + k, ego_.last_frame());
      const auto s = scene::state_at(ego_, f);
      if (!s) throw ValidationError("oracle planner: ego log has no state at frame " + std::to_string(f));
      out.push_back(s->pose());
    }
    return out;
  }

 private:
  scene::AgentTrack ego_;
  int horizon_;
};

/// Holds the current pose.
class StationaryPlanner : public Planner {
 public:
  explicit StationaryPlanner(int horizon) : horizon_(horizon) {}
  int horizon() const override { return horizon_; }
  std::vector<Pose2D> plan(const Scenario& history, int frame) override {
    const auto s = scene::state_at(history.ego(), frame);
    return std::vector<Pose2D>(static_cast<std::size_t>(horizon_), s->pose());
  }

 private:
  int horizon_;
};

/// Drives straight along the current heading at the current speed.
class ConstantVelocityPlanner : public Planner {
 public:
  ConstantVelocityPlanner(int horizon, double dt) : horizon_(horizon), dt_(dt) {}
  int horizon() const override { return horizon_; }
  std::vector<Pose2D> plan(const Scenario& history, int frame) override {
    const auto s = scene::state_at(history.ego(), frame);
    const Vec2 dir = geometry::direction(s->theta);
    std::vector<Pose2D> out;
    for (int k = 1; k <= horizon_; ++k) {
      const Vec2 p = s->position() + dir * (s->speed() * dt_ * k);
      out.push_back({p.x, p.y, s->theta});
    }
    return out;
  }

 private:
  int horizon_;
  double dt_;
};

/// Pose at `tau` seconds after the plan origin, interpolating linearly
/// between the origin (tau = 0) and waypoints spaced `dt` apart.
inline Pose2D interpolate_plan(const Pose2D& origin, const std::vector<Pose2D>& plan, double tau, double dt) {
  if (plan.empty() || tau <= 0.0) return origin;
  const double u = tau / dt;
  const auto j = static_cast<std::size_t>(std::floor(u));
  if (j >= plan.size()) return plan.back();
  const Pose2D& a = j == 0 ? origin : plan[j - 1];
  const Pose2D& b = plan[j];
  const double w = u - static_cast<double>(j);
  if (w == 0.0) return a;
  return {a.x + (b.x - a.x) * w, a.y + (b.y - a.y) * w,
          geometry::wrap_angle(a.theta + geometry::wrap_angle(b.theta - a.theta) * w)};
}

namespace detail {

inline int frames_for(double seconds, double dt, const char* what) {
  const double r = seconds / dt;
  const double n = std::round(r);
  if (n < 1.0 || std::abs(r - n) > 1e-9 * std::max(1.0, r)) {
    throw ConfigError(std::string("simulator: ") + what + " must be a positive multiple of the frame interval");
  }
  return static_cast<int>(n);
}

class RoadCheck {
 public:
  explicit RoadCheck(const Scenario& sc) {
    for (const auto& lane : sc.lanes) {
      for (std::size_t k = 1; k < lane.centerline.size(); ++k) {
        pieces_.push_back({lane.centerline[k - 1], lane.centerline[k], 0.5 * lane.width});
      }
    }
  }

  bool on_road(Vec2 p) const {
    for (const auto& piece : pieces_) {
      if (geometry::point_segment_distance(p, piece.a, piece.b) <= piece.half_width) return true;
    }
    return false;
  }

 private:
  struct Piece {
    Vec2 a, b;
    double half_width;
  };
  std::vector<Piece> pieces_;
};

}  // namespace detail

/// Closed-loop rollout. The ego replans every replan_interval from the last
/// `history` frames (driven states replace the logged ego), then occupies
/// the interpolated plan poses frame by frame. Other agents replay the log.
/// If the next placement would hit a replayed agent or leave the road, the
/// ego brakes along its heading (holding still if braking also collides)
/// until the planner's placement is safe again; each engagement logs one event.
inline SimTrace run(const Scenario& sc, Planner& planner, const SimConfig& cfg) {
  const double dt = sc.frame_interval;
  if (!(cfg.duration > 0.0)) throw ConfigError("simulator: duration must be > 0");
  if (cfg.history < 1) throw ConfigError("simulator: history must be >= 1");
  const int steps = detail::frames_for(cfg.duration, dt, "duration");
  const int replan_every = detail::frames_for(cfg.replan_interval, dt, "replan_interval");
  if (planner.horizon() < replan_every) {
    throw ConfigError("simulator: planner horizon (" + std::to_string(planner.horizon()) +
                      " frames) is shorter than the replan interval (" + std::to_string(replan_every) + " frames)");
  }
  const int ego_idx = sc.agent_index(sc.ego_id);
  const auto& log_ego = sc.agents[static_cast<std::size_t>(ego_idx)];
  const int start = log_ego.first_frame() + cfg.history - 1;
  for (int f = log_ego.first_frame(); f <= start + steps; ++f) {
    if (!scene::state_at(log_ego, f)) {
      throw ValidationError("simulator: scenario '" + sc.id + "' has no ego state at frame " + std::to_string(f) +
                            " (needs " + std::to_string(cfg.history) + " history frames + " +
                            std::to_string(cfg.duration) + " s)");
    }
  }

  SimTrace trace;
  trace.scenario_id = sc.id;
  trace.start_frame = start;
  for (int f = start; f <= start + steps; ++f) trace.expert.push_back(scene::state_at(log_ego, f)->pose());
  for (std::size_t i = 0; i < sc.agents.size(); ++i) {
    if (static_cast<int>(i) == ego_idx) continue;
    scene::AgentTrack t = sc.agents[i];
    std::erase_if(t.states, [&](const AgentState& s) { return s.frame < start || s.frame > start + steps; });
    trace.replayed.push_back(std::move(t));
  }

  Scenario world = sc;
  auto& ego_track = world.agents[static_cast<std::size_t>(ego_idx)];
  std::erase_if(ego_track.states, [&](const AgentState& s) { return s.frame > start; });
  trace.driven.push_back(ego_track.states.back());

  const detail::RoadCheck road(sc);
  auto collides = [&](const Pose2D& pose, int frame) {
    if (!cfg.collision_check) return false;
    const geometry::OrientedRect box{pose.position(), pose.theta, 0.5 * log_ego.length, 0.5 * log_ego.width};
    for (const auto& other : trace.replayed) {
      if (const auto s = scene::state_at(other, frame); s && geometry::rects_intersect(box, other.box(*s))) return true;
    }
    return false;
  };

  std::vector<Pose2D> plan;
  Pose2D plan_origin;
  int plan_frame = start;
  bool correcting = false;
  for (int s = 0; s < steps; ++s) {
    const int frame = start + s;
    const AgentState cur = trace.driven.back();
    if (s % replan_every == 0) {
      plan = planner.plan(world, frame);
      if (static_cast<int>(plan.size()) < replan_every) {
        throw ValidationError("simulator: planner returned " + std::to_string(plan.size()) + " waypoints");
      }
      plan_origin = cur.pose();
      plan_frame = frame;
      trace.plans.push_back({frame, plan});
    }
    const Pose2D candidate = interpolate_plan(plan_origin, plan, (frame + 1 - plan_frame) * dt, dt);
    std::optional<CorrectionCause> hazard;
    if (collides(candidate, frame + 1)) {
      hazard = CorrectionCause::kCollision;
    } else if (!road.on_road(candidate.position())) {
      hazard = CorrectionCause::kOffRoad;
    }
    Pose2D next = candidate;
    if (hazard) {
      if (!correcting) trace.events.push_back({frame + 1, *hazard});
      correcting = true;
      const double speed = cur.speed();
      const double slowed = std::max(0.0, speed - cfg.correction_decel * dt);
      const Vec2 p = cur.position() + geometry::direction(cur.theta) * (0.5 * (speed + slowed) * dt);
      next = {p.x, p.y, cur.theta};
      if (collides(next, frame + 1)) next = cur.pose();
    } else {
      correcting = false;
    }
    AgentState st;
    st.frame = frame + 1;
    st.x = next.x;
    st.y = next.y;
    st.theta = geometry::wrap_angle(next.theta);
    st.vx = (next.x - cur.x) / dt;
    st.vy = (next.y - cur.y) / dt;
    st.yaw_rate = geometry::wrap_angle(st.theta - cur.theta) / dt;
    trace.driven.push_back(st);
    ego_track.states.push_back(st);
  }
  return trace;
}

inline metrics::PlanReport evaluate(const SimTrace& trace, const Scenario& sc, double w_theta = metrics::kDefaultHeadingWeight) {
  return metrics::plan_metrics(trace.driven_poses(), trace.expert, sc.goal, metrics::RouteIndex(sc), w_theta);
}

// ---------------------------------------------------------------------------
// Batch evaluation

using PlannerFactory = std::function<std::unique_ptr<Planner>(const Scenario&)>;

struct BatchRow {
  std::string scenario_id;
  std::optional<metrics::PlanReport> report;
  std::size_t corrections = 0;
  std::string error;  // empty on success
};

struct BatchResult {
  std::vector<BatchRow> rows;  // input order
  metrics::PlanReport mean;    // over successful rows
  std::vector<SimTrace> traces;
};

/// Runs every scenario; failures are recorded per row and the batch
/// continues. Up to `jobs` scenarios run concurrently; results keep input order.
inline BatchResult batch_eval(const std::vector<Scenario>& scenarios, const PlannerFactory& make_planner,
                              const SimConfig& cfg, double w_theta = metrics::kDefaultHeadingWeight, int jobs = 1) {
  if (scenarios.empty()) throw ValidationError("batch_eval: no scenarios");
  BatchResult result;
  result.rows.resize(scenarios.size());
  result.traces.resize(scenarios.size());
  auto work = [&](std::size_t i) {
    auto& row = result.rows[i];
    row.scenario_id = scenarios[i].id;
    try {
      auto planner = make_planner(scenarios[i]);
      result.traces[i] = run(scenarios[i], *planner, cfg);
      row.report = evaluate(result.traces[i], scenarios[i], w_theta);
      row.corrections = result.traces[i].events.size();
    } catch (const std::exception& e) {
      row.error = e.what();
    }
  };
  const auto workers = static_cast<std::size_t>(std::clamp(jobs, 1, static_cast<int>(scenarios.size())));
  if (workers == 1) {
    for (std::size_t i = 0; i < scenarios.size(); ++i) work(i);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < scenarios.size(); i += workers) work(i);
      });
    }
    for (auto& t : pool) t.join();
  }
  std::vector<metrics::PlanReport> ok;
  for (const auto& row : result.rows) {
    if (row.report) ok.push_back(*row.report);
  }
  result.mean = metrics::mean_report(ok);
  return result;
}

inline nlohmann::json to_json(const SimTrace& trace) {
  using nlohmann::json;
  json driven = json::array();
  for (const auto& s : trace.driven) driven.push_back({s.frame, s.x, s.y, s.theta, s.vx, s.vy, s.yaw_rate});
  json plans = json::array();
  for (const auto& p : trace.plans) {
    json pts = json::array();
    for (const auto& w : p.waypoints) pts.push_back({w.x, w.y, w.theta});
    plans.push_back({{"frame", p.frame}, {"waypoints", pts}});
  }
  json events = json::array();
  for (const auto& e : trace.events) events.push_back({{"frame", e.frame}, {"cause", to_string(e.cause)}});
  return {{"scenario", trace.scenario_id}, {"start_frame", trace.start_frame}, {"states", driven}, {"plans", plans},
          {"events", events}};
}

}  // namespace tofg::simulator

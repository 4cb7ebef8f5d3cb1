#pragma once

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tofg/error.hpp"
#include "tofg/geometry.hpp"
#include "tofg/scene.hpp"

namespace tofg::metrics {

using geometry::Pose2D;
using geometry::Vec2;

inline constexpr double kDefaultHeadingWeight = 2.5;

struct PredReport {
  double ade = 0.0;
  double fde = 0.0;
  double ahe = 0.0;
  double fhe = 0.0;
};

/// ADE/FDE over positions and AHE/FHE over wrapped heading differences.
inline PredReport pred_metrics(const std::vector<Pose2D>& pred, const std::vector<Pose2D>& truth) {
  if (pred.size() != truth.size()) {
    throw ShapeError("pred_metrics: prediction has " + std::to_string(pred.size()) + " states, truth has " +
                     std::to_string(truth.size()));
  }
  if (pred.empty()) throw ShapeError("pred_metrics: empty trajectories");
  PredReport r;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = geometry::distance(pred[i].position(), truth[i].position());
    const double h = std::abs(geometry::wrap_angle(pred[i].theta - truth[i].theta));
    r.ade += d;
    r.ahe += h;
    if (i + 1 == pred.size()) {
      r.fde = d;
      r.fhe = h;
    }
  }
  r.ade /= static_cast<double>(pred.size());
  r.ahe /= static_cast<double>(pred.size());
  return r;
}

/// Decides whether a position is on the expert route: the nearest lane
/// centerline piece must belong to a route lane or to a direct successor or
/// predecessor of one.
class RouteIndex {
 public:
  explicit RouteIndex(const scene::Scenario& sc) {
    std::set<std::string> accepted = sc.route_lane_ids;
    for (const auto& lane : sc.lanes) {
      if (sc.route_lane_ids.contains(lane.id)) {
        accepted.insert(lane.successor_ids.begin(), lane.successor_ids.end());
        accepted.insert(lane.predecessor_ids.begin(), lane.predecessor_ids.end());
      }
      for (const auto& s : lane.successor_ids) {
        if (sc.route_lane_ids.contains(s)) accepted.insert(lane.id);
      }
      for (const auto& p : lane.predecessor_ids) {
        if (sc.route_lane_ids.contains(p)) accepted.insert(lane.id);
      }
    }
    for (const auto& lane : sc.lanes) {
      const bool ok = accepted.contains(lane.id);
      for (std::size_t k = 1; k < lane.centerline.size(); ++k) {
        pieces_.push_back({lane.centerline[k - 1], lane.centerline[k], ok});
      }
    }
  }

  bool on_route(Vec2 p) const {
    double best = std::numeric_limits<double>::infinity();
    bool ok = false;
    for (const auto& piece : pieces_) {
      const double d = geometry::point_segment_distance(p, piece.a, piece.b);
      if (d < best) {
        best = d;
        ok = piece.on_route;
      }
    }
    return ok;
  }

 private:
  struct Piece {
    Vec2 a, b;
    bool on_route;
  };
  std::vector<Piece> pieces_;
};

struct L2Stats {
  double sum = 0.0;
  double max = 0.0;
  double mean = 0.0;
};

struct PlanReport {
  L2Stats l2;      // position term only
  L2Stats l2_yaw;  // position + w_theta * |heading error|
  double dist2goal_min = 0.0;
  double dist2goal_max = 0.0;
  double dist2goal_mean = 0.0;
  double prog2goal_abs = 0.0;
  double prog2goal_rel = 0.0;  // driven / expert progress, NaN if expert made none
  double prog2exp_total = 0.0;
  double prog2exp_ratio = 0.0;  // on-route driven length / expert length, NaN if expert is static
};

inline PlanReport plan_metrics(const std::vector<Pose2D>& driven, const std::vector<Pose2D>& expert, const Pose2D& goal,
                               const RouteIndex& route, double w_theta = kDefaultHeadingWeight) {
  if (driven.size() != expert.size()) {
    throw ShapeError("plan_metrics: driven has " + std::to_string(driven.size()) + " states, expert has " +
                     std::to_string(expert.size()));
  }
  if (driven.size() < 2) throw ShapeError("plan_metrics: need at least 2 states (T_s >= 1)");
  PlanReport r;
  const Vec2 g = goal.position();
  const auto n = static_cast<double>(driven.size());
  r.dist2goal_min = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < driven.size(); ++t) {
    const double pos = geometry::distance(driven[t].position(), expert[t].position());
    const double with_yaw = pos + w_theta * std::abs(geometry::wrap_angle(driven[t].theta - expert[t].theta));
    r.l2.sum += pos;
    r.l2.max = std::max(r.l2.max, pos);
    r.l2_yaw.sum += with_yaw;
    r.l2_yaw.max = std::max(r.l2_yaw.max, with_yaw);
    const double dg = geometry::distance(driven[t].position(), g);
    r.dist2goal_min = std::min(r.dist2goal_min, dg);
    r.dist2goal_max = std::max(r.dist2goal_max, dg);
    r.dist2goal_mean += dg;
  }
  r.l2.mean = r.l2.sum / n;
  r.l2_yaw.mean = r.l2_yaw.sum / n;
  r.dist2goal_mean /= n;

  auto progress = [&](const std::vector<Pose2D>& traj) {
    return geometry::distance(traj.front().position(), g) - geometry::distance(traj.back().position(), g);
  };
  r.prog2goal_abs = progress(driven);
  const double expert_prog = progress(expert);
  r.prog2goal_rel = expert_prog != 0.0 ? r.prog2goal_abs / expert_prog : std::numeric_limits<double>::quiet_NaN();

  double expert_len = 0.0;
  for (std::size_t t = 1; t < driven.size(); ++t) {
    expert_len += geometry::distance(expert[t].position(), expert[t - 1].position());
    if (route.on_route(driven[t].position())) {
      r.prog2exp_total += geometry::distance(driven[t].position(), driven[t - 1].position());
    }
  }
  r.prog2exp_ratio = expert_len > 0.0 ? r.prog2exp_total / expert_len : std::numeric_limits<double>::quiet_NaN();
  return r;
}

/// Field-wise mean of reports; NaN entries are skipped per field.
inline PlanReport mean_report(const std::vector<PlanReport>& reports) {
  PlanReport m;
  if (reports.empty()) return m;
  auto avg = [&](auto getter) {
    double s = 0.0;
    int count = 0;
    for (const auto& r : reports) {
      const double v = getter(r);
      if (std::isnan(v)) continue;
      s += v;
      ++count;
    }
    return count ? s / count : std::numeric_limits<double>::quiet_NaN();
  };
  m.l2.sum = avg([](const PlanReport& r) { return r.l2.sum; });
  m.l2.max = avg([](const PlanReport& r) { return r.l2.max; });
  m.l2.mean = avg([](const PlanReport& r) { return r.l2.mean; });
  m.l2_yaw.sum = avg([](const PlanReport& r) { return r.l2_yaw.sum; });
  m.l2_yaw.max = avg([](const PlanReport& r) { return r.l2_yaw.max; });
  m.l2_yaw.mean = avg([](const PlanReport& r) { return r.l2_yaw.mean; });
  m.dist2goal_min = avg([](const PlanReport& r) { return r.dist2goal_min; });
  m.dist2goal_max = avg([](const PlanReport& r) { return r.dist2goal_max; });
  m.dist2goal_mean = avg([](const PlanReport& r) { return r.dist2goal_mean; });
  m.prog2goal_abs = avg([](const PlanReport& r) { return r.prog2goal_abs; });
  m.prog2goal_rel = avg([](const PlanReport& r) { return r.prog2goal_rel; });
  m.prog2exp_total = avg([](const PlanReport& r) { return r.prog2exp_total; });
  m.prog2exp_ratio = avg([](const PlanReport& r) { return r.prog2exp_ratio; });
  return m;
}

// ---------------------------------------------------------------------------
// Serialization

namespace detail {

inline nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

inline std::string csv_number(double v) {
  if (!std::isfinite(v)) return "nan";
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace detail

inline nlohmann::json to_json(const PredReport& r) {
  return {{"ade", r.ade}, {"fde", r.fde}, {"ahe", r.ahe}, {"fhe", r.fhe}};
}

inline nlohmann::json to_json(const PlanReport& r) {
  using detail::number_or_null;
  auto l2 = [](const L2Stats& s) {
    return nlohmann::json{{"sum", number_or_null(s.sum)}, {"max", number_or_null(s.max)}, {"mean", number_or_null(s.mean)}};
  };
  return {{"m_l2", l2(r.l2)},
          {"m_l2_yaw", l2(r.l2_yaw)},
          {"dist2goal", {{"min", number_or_null(r.dist2goal_min)}, {"max", number_or_null(r.dist2goal_max)}, {"mean", number_or_null(r.dist2goal_mean)}}},
          {"prog2goal", {{"absolute", number_or_null(r.prog2goal_abs)}, {"relative", number_or_null(r.prog2goal_rel)}}},
          {"prog2exp", {{"total", number_or_null(r.prog2exp_total)}, {"ratio", number_or_null(r.prog2exp_ratio)}}}};
}

inline std::string plan_csv_header() {
  return "scenario,m_l2_sum,m_l2_max,m_l2_mean,m_l2_yaw_sum,m_l2_yaw_max,m_l2_yaw_mean,dist2goal_min,dist2goal_max,"
         "dist2goal_mean,prog2goal_abs,prog2goal_rel,prog2exp_total,prog2exp_ratio";
}

inline std::string plan_csv_row(const std::string& scenario, const PlanReport& r) {
  using detail::csv_number;
  std::ostringstream os;
  os << scenario;
  for (double v : {r.l2.sum, r.l2.max, r.l2.mean, r.l2_yaw.sum, r.l2_yaw.max, r.l2_yaw.mean, r.dist2goal_min,
                   r.dist2goal_max, r.dist2goal_mean, r.prog2goal_abs, r.prog2goal_rel, r.prog2exp_total,
                   r.prog2exp_ratio}) {
    os << ',' << csv_number(v);
  }
  return os.str();
}

}  // namespace tofg::metrics

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "tofg/error.hpp"
#include "tofg/geometry.hpp"
#include "tofg/graph.hpp"
#include "tofg/nn.hpp"
#include "tofg/scene.hpp"

namespace tofg::model {

using geometry::Pose2D;
using geometry::Vec2;
using nn::Matrix;
using nn::ParamStore;
using nn::Tape;
using nn::Var;

struct ModelConfig {
  int embed_dim = 64;
  int n_gat_layers = 3;
  int n_head = 4;
  int horizon = 12;  // H
  int history = 5;   // T
  int mlp_hidden = 64;
  std::uint64_t seed = 0;
  // Positions are fed and decoded in units of coord_scale meters, velocities
  // in units of speed_scale m/s.
  double coord_scale = 10.0;
  double speed_scale = 10.0;

  void validate() const {
    if (embed_dim < 1 || n_head < 1 || embed_dim % n_head != 0) {
      throw ConfigError("model: embed_dim (" + std::to_string(embed_dim) + ") must be a positive multiple of n_head (" +
                        std::to_string(n_head) + ")");
    }
    if (horizon < 1) throw ConfigError("model: horizon must be >= 1");
    if (history < 1) throw ConfigError("model: history must be >= 1");
    if (n_gat_layers < 0) throw ConfigError("model: n_gat_layers must be >= 0");
    if (mlp_hidden < 1) throw ConfigError("model: mlp_hidden must be >= 1");
    if (!(coord_scale > 0.0) || !(speed_scale > 0.0)) throw ConfigError("model: scales must be > 0");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// [midpoint x, y (ego-relative); seg_vector x, y; occupancy; flow -vx, -vy,
/// theta, yaw_rate; one-hot light red/yellow/green/none; on_route].
inline constexpr std::size_t kNodeFeatureDim = 14;
/// [x, y (zero by construction); theta; speed; yaw_rate; vx; vy].
inline constexpr std::size_t kEgoFeatureDim = 7;

using NodeFeature = std::array<double, kNodeFeatureDim>;

inline NodeFeature node_feature(const graph::OfgNode& node, Vec2 origin) {
  NodeFeature f{};
  const Vec2 rel = node.midpoint - origin;
  f[0] = rel.x;
  f[1] = rel.y;
  f[2] = node.seg_vector.x;
  f[3] = node.seg_vector.y;
  f[4] = static_cast<double>(node.occupancy);
  for (std::size_t k = 0; k < 4; ++k) f[5 + k] = node.flow[k];
  f[9 + static_cast<std::size_t>(node.light)] = 1.0;
  f[13] = node.on_route ? 1.0 : 0.0;
  return f;
}

// ---------------------------------------------------------------------------
// Parameters

inline ParamStore init_params(const ModelConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  ParamStore store;
  const auto d = static_cast<std::size_t>(cfg.embed_dim);
  const auto hid = static_cast<std::size_t>(cfg.mlp_hidden);
  auto weight = [&](const std::string& name, std::size_t rows, std::size_t cols) {
    store.add(name, nn::init_uniform(rows, cols, rng));
  };
  auto bias = [&](const std::string& name, std::size_t cols) { store.add(name, Matrix(1, cols)); };

  weight("embed.w1", kNodeFeatureDim, hid);
  bias("embed.b1", hid);
  weight("embed.w2", hid, d);
  bias("embed.b2", d);
  weight("ego.w1", kEgoFeatureDim, hid);
  bias("ego.b1", hid);
  weight("ego.w2", hid, d);
  bias("ego.b2", d);
  for (int l = 0; l < cfg.n_gat_layers; ++l) {
    weight("gat." + std::to_string(l) + ".w1", 2 * d, d);
    weight("gat." + std::to_string(l) + ".w2", d, d);
  }
  weight("attn.wq", d, d);
  weight("attn.wk", d, d);
  weight("attn.wv", d, d);
  weight("attn.wo", d, d);
  weight("dec.w1", d, hid);
  bias("dec.b1", hid);
  weight("dec.w2", hid, 2 * static_cast<std::size_t>(cfg.horizon));
  bias("dec.b2", 2 * static_cast<std::size_t>(cfg.horizon));
  return store;
}

// ---------------------------------------------------------------------------
// Prepared inputs

/// Parameter-independent model inputs derived from one TOFG.
struct PreparedGraph {
  Matrix node_features;  // [N x 14], scaled
  Matrix ego_features;   // [1 x 7], scaled
  nn::Adjacency adjacency;
  Vec2 origin;           // ego position at the last frame
  std::size_t nodes_per_frame = 0;
  std::size_t frame_count = 0;
};

/// Fused neighbor lists over every frame: multiscale, interaction and
/// temporal edges, each used in both directions, without duplicates.
inline nn::Adjacency fused_adjacency(const graph::Tofg& tofg) {
  const std::size_t n = tofg.nodes_per_frame();
  std::vector<std::vector<int>> lists(n * tofg.frames.size());
  auto link = [&](std::size_t a, std::size_t b) {
    lists[a].push_back(static_cast<int>(b));
    lists[b].push_back(static_cast<int>(a));
  };
  for (std::size_t f = 0; f < tofg.frames.size(); ++f) {
    const std::size_t base = f * n;
    for (const auto& e : tofg.frames[f].multiscale) link(base + static_cast<std::size_t>(e.a), base + static_cast<std::size_t>(e.b));
    for (const auto& e : tofg.frames[f].interaction) link(base + static_cast<std::size_t>(e.a), base + static_cast<std::size_t>(e.b));
  }
  for (const auto& e : tofg.temporal_edges) {
    const auto t = static_cast<std::size_t>(e.frame_pos);
    link(t * n + static_cast<std::size_t>(e.node_t), (t - 1) * n + static_cast<std::size_t>(e.node_prev));
  }
  for (auto& l : lists) {
    std::sort(l.begin(), l.end());
    l.erase(std::unique(l.begin(), l.end()), l.end());
  }
  return nn::Adjacency::from_lists(lists);
}

inline PreparedGraph prepare(const graph::Tofg& tofg, const ModelConfig& cfg) {
  cfg.validate();
  if (tofg.frames.size() != static_cast<std::size_t>(cfg.history)) {
    throw ValidationError("encode: TOFG has " + std::to_string(tofg.frames.size()) + " frames, model history is " +
                          std::to_string(cfg.history));
  }
  if (!tofg.ego_last) throw ValidationError("encode: ego '" + tofg.ego_id + "' not observed at the last frame");
  if (tofg.nodes_per_frame() == 0) throw ValidationError("encode: TOFG has no nodes");
  PreparedGraph p;
  const auto& ego = *tofg.ego_last;
  p.origin = ego.position();
  p.nodes_per_frame = tofg.nodes_per_frame();
  p.frame_count = tofg.frames.size();
  p.node_features = Matrix(p.nodes_per_frame * p.frame_count, kNodeFeatureDim);
  const double cs = 1.0 / cfg.coord_scale;
  const double vs = 1.0 / cfg.speed_scale;
  std::size_t row = 0;
  for (const auto& f : tofg.frames) {
    for (const auto& node : f.nodes) {
      NodeFeature feat = node_feature(node, p.origin);
      feat[0] *= cs;
      feat[1] *= cs;
      feat[5] *= vs;
      feat[6] *= vs;
      std::copy(feat.begin(), feat.end(), p.node_features.row(row++));
    }
  }
  p.ego_features = Matrix::from_rows({{0.0, 0.0, ego.theta, ego.speed() * vs, ego.yaw_rate, ego.vx * vs, ego.vy * vs}});
  p.adjacency = fused_adjacency(tofg);
  return p;
}

// ---------------------------------------------------------------------------
// Forward

struct Encoded {
  Var nodes;  // [N x d]
  Var ego;    // [1 x d]
};

inline Var mlp2(Tape& t, const ParamStore& ps, const std::string& prefix, Var x) {
  Var h = nn::relu(t, nn::add_bias(t, nn::matmul(t, x, t.param(ps, prefix + ".w1")), t.param(ps, prefix + ".b1")));
  return nn::add_bias(t, nn::matmul(t, h, t.param(ps, prefix + ".w2")), t.param(ps, prefix + ".b2"));
}

inline Encoded encode(Tape& t, const PreparedGraph& g, const ModelConfig& cfg, const ParamStore& ps) {
  Var h = mlp2(t, ps, "embed", t.constant(g.node_features));
  for (int l = 0; l < cfg.n_gat_layers; ++l) {
    const std::string p = "gat." + std::to_string(l);
    h = nn::gat_layer(t, h, t.param(ps, p + ".w1"), t.param(ps, p + ".w2"), g.adjacency);
  }
  return {h, mlp2(t, ps, "ego", t.constant(g.ego_features))};
}

struct Forward {
  Var offsets;          // [1 x 2H], ego-relative waypoints in meters
  Matrix attention;     // [n_head x N]
};

inline Forward forward(Tape& t, const PreparedGraph& g, const ModelConfig& cfg, const ParamStore& ps) {
  const Encoded enc = encode(t, g, cfg, ps);
  const auto att = nn::cross_attention(t, enc.ego, enc.nodes, t.param(ps, "attn.wq"), t.param(ps, "attn.wk"),
                                       t.param(ps, "attn.wv"), t.param(ps, "attn.wo"),
                                       static_cast<std::size_t>(cfg.n_head));
  const Var decoded = mlp2(t, ps, "dec", att.out);
  return {nn::scale(t, decoded, cfg.coord_scale), att.weights};
}

/// Node embeddings and ego embedding without gradient recording.
inline std::pair<Matrix, Matrix> encode(const graph::Tofg& tofg, const ModelConfig& cfg, const ParamStore& ps) {
  const PreparedGraph g = prepare(tofg, cfg);
  Tape t;
  const Encoded enc = encode(t, g, cfg, ps);
  return {t.value(enc.nodes), t.value(enc.ego)};
}

// ---------------------------------------------------------------------------
// Prediction

/// Cross-attention weights over every attended TOFG node.
struct AttentionMap {
  std::vector<int> frame;       // scenario frame of each attended node
  std::vector<int> node;        // node index within its frame
  std::vector<Vec2> position;   // world midpoint
  Matrix per_head;              // [n_head x N]
  std::vector<double> mean;     // head-averaged

  std::size_t size() const { return node.size(); }
};

/// Headings from consecutive waypoint differences; the last waypoint repeats
/// the previous heading. A single waypoint takes `fallback`.
inline std::vector<Pose2D> with_headings(const std::vector<Vec2>& pts, double fallback) {
  std::vector<Pose2D> out(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    double theta = fallback;
    if (pts.size() >= 2) {
      const std::size_t a = i + 1 < pts.size() ? i : i - 1;
      const Vec2 d = pts[a + 1] - pts[a];
      theta = std::atan2(d.y, d.x);
    }
    out[i] = {pts[i].x, pts[i].y, geometry::wrap_angle(theta)};
  }
  return out;
}

struct Prediction {
  std::vector<Pose2D> waypoints;  // world frame
  AttentionMap attention;
};

inline AttentionMap attention_map(const graph::Tofg& tofg, const Matrix& weights) {
  AttentionMap m;
  const std::size_t n = tofg.nodes_per_frame();
  m.per_head = weights;
  for (std::size_t f = 0; f < tofg.frames.size(); ++f) {
    for (std::size_t k = 0; k < n; ++k) {
      m.frame.push_back(tofg.frames[f].frame);
      m.node.push_back(static_cast<int>(k));
      m.position.push_back(tofg.frames[f].nodes[k].midpoint);
    }
  }
  m.mean.assign(m.size(), 0.0);
  for (std::size_t h = 0; h < weights.rows(); ++h) {
    for (std::size_t j = 0; j < weights.cols(); ++j) m.mean[j] += weights(h, j) / static_cast<double>(weights.rows());
  }
  return m;
}

inline Prediction predict(const PreparedGraph& g, const graph::Tofg& tofg, const ModelConfig& cfg, const ParamStore& ps) {
  Tape t;
  const Forward fwd = forward(t, g, cfg, ps);
  const Matrix& off = t.value(fwd.offsets);
  std::vector<Vec2> pts;
  for (int k = 0; k < cfg.horizon; ++k) {
    pts.push_back(g.origin + Vec2{off[2 * static_cast<std::size_t>(k)], off[2 * static_cast<std::size_t>(k) + 1]});
  }
  return {with_headings(pts, tofg.ego_last->theta), attention_map(tofg, fwd.attention)};
}

inline Prediction predict(const graph::Tofg& tofg, const ModelConfig& cfg, const ParamStore& ps) {
  return predict(prepare(tofg, cfg), tofg, cfg, ps);
}

// ---------------------------------------------------------------------------
// Loss and training

/// Sum over the horizon of Euclidean waypoint distances.
inline double imitation_loss(const std::vector<Vec2>& pred, const std::vector<Vec2>& truth) {
  if (pred.size() != truth.size()) {
    throw ShapeError("imitation_loss: prediction has " + std::to_string(pred.size()) + " waypoints, truth has " +
                     std::to_string(truth.size()));
  }
  double loss = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) loss += geometry::distance(pred[i], truth[i]);
  return loss;
}

/// One supervised example: T frames of TOFG ending at the current frame and
/// the ego's next H logged positions.
struct Sample {
  std::string scenario_id;
  int frame = 0;
  graph::Tofg tofg;
  std::vector<Vec2> truth;  // world frame
};

inline Sample make_sample(const scene::Scenario& sc, int frame, const ModelConfig& cfg, const graph::GraphConfig& gcfg) {
  Sample s;
  s.scenario_id = sc.id;
  s.frame = frame;
  const auto& ego = sc.ego();
  for (int k = 1; k <= cfg.horizon; ++k) {
    const auto st = scene::state_at(ego, frame + k);
    if (!st) {
      throw ValidationError("make_sample: scenario '" + sc.id + "': ego has no state at frame " + std::to_string(frame + k));
    }
    s.truth.push_back(st->position());
  }
  s.tofg = graph::build_tofg(sc, {frame - cfg.history + 1, frame}, gcfg);
  return s;
}

/// Latest frames of a scenario at which a full history and horizon exist.
inline std::vector<int> sample_frames(const scene::Scenario& sc, const ModelConfig& cfg, int stride) {
  const auto& ego = sc.ego();
  std::vector<int> frames;
  for (int f = ego.first_frame() + cfg.history - 1; f + cfg.horizon <= ego.last_frame(); f += std::max(1, stride)) {
    frames.push_back(f);
  }
  return frames;
}

struct PreparedSample {
  PreparedGraph graph;
  Matrix truth;  // [1 x 2H] ego-relative
};

inline PreparedSample prepare(const Sample& s, const ModelConfig& cfg) {
  PreparedSample p{prepare(s.tofg, cfg), Matrix(1, 2 * static_cast<std::size_t>(cfg.horizon))};
  if (s.truth.size() != static_cast<std::size_t>(cfg.horizon)) {
    throw ShapeError("prepare: sample truth has " + std::to_string(s.truth.size()) + " waypoints, horizon is " +
                     std::to_string(cfg.horizon));
  }
  for (std::size_t k = 0; k < s.truth.size(); ++k) {
    p.truth[2 * k] = s.truth[k].x - p.graph.origin.x;
    p.truth[2 * k + 1] = s.truth[k].y - p.graph.origin.y;
  }
  return p;
}

/// Forward + backward for one sample; gradients of `weight * loss` are added
/// to `ps`. Returns the unweighted loss.
inline double accumulate_gradient(const PreparedSample& s, const ModelConfig& cfg, ParamStore& ps, double weight) {
  Tape t;
  const Forward fwd = forward(t, s.graph, cfg, ps);
  const Var loss = nn::path_distance_loss(t, fwd.offsets, s.truth);
  const double value = t.value(loss)[0];
  if (!std::isfinite(value)) throw NumericError("train: non-finite loss");
  t.backward(nn::scale(t, loss, weight), ps);
  return value;
}

inline double sample_loss(const PreparedSample& s, const ModelConfig& cfg, const ParamStore& ps) {
  Tape t;
  const Forward fwd = forward(t, s.graph, cfg, ps);
  return t.value(nn::path_distance_loss(t, fwd.offsets, s.truth))[0];
}

enum class LrSchedule { kConstant, kCosine };

struct TrainOptions {
  int epochs = 60;
  int batch = 3;
  double lr = 1e-5;
  std::uint64_t seed = 0;
  LrSchedule schedule = LrSchedule::kConstant;  // kCosine: lr * (1 + cos(pi e / epochs)) / 2 in epoch e
};

inline double epoch_lr(const TrainOptions& opt, int epoch) {
  if (opt.schedule == LrSchedule::kConstant || opt.epochs <= 0) return opt.lr;
  return opt.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * epoch / opt.epochs));
}

struct TrainResult {
  ParamStore params;
  std::vector<double> loss_curve;  // mean imitation loss per epoch
};

/// Minibatch Adam on the mean imitation loss. The epoch loss is the mean of
/// per-sample losses seen during that epoch, before each batch's update.
inline TrainResult train(const std::vector<PreparedSample>& corpus, const ModelConfig& cfg, const TrainOptions& opt,
                         const ParamStore* init = nullptr) {
  if (corpus.empty()) throw ValidationError("train: empty corpus");
  if (opt.epochs < 0 || opt.batch < 1) throw ConfigError("train: epochs must be >= 0 and batch >= 1");
  TrainResult result{init ? *init : init_params(cfg), {}};
  result.params.zero_grad();
  std::mt19937_64 rng(opt.seed);
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  nn::AdamOptions adam;
  adam.lr = opt.lr;
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    adam.lr = epoch_lr(opt, epoch);
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(rng() % i)]);
    }
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(opt.batch)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(opt.batch));
      const double w = 1.0 / static_cast<double>(end - start);
      for (std::size_t k = start; k < end; ++k) total += accumulate_gradient(corpus[order[k]], cfg, result.params, w);
      nn::adam_step(result.params, adam);
    }
    result.loss_curve.push_back(total / static_cast<double>(corpus.size()));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Baseline

/// Straight-line extrapolation of the ego's last velocity over H steps.
inline std::vector<Vec2> constant_velocity(const scene::AgentState& s, int horizon, double dt) {
  std::vector<Vec2> out;
  for (int k = 1; k <= horizon; ++k) out.push_back(s.position() + Vec2{s.vx, s.vy} * (dt * k));
  return out;
}

}  // namespace tofg::model

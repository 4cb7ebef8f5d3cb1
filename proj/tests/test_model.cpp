#include <gtest/gtest.h>

#include <cmath>

#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "tofg/graph.hpp"
#include "tofg/model.hpp"

using namespace tofg;
using namespace tofg::model;

namespace {

graph::Tofg tiny_tofg(const scene::Scenario& sc) { return graph::build_tofg(sc, {0, 4}, graph::GraphConfig{}); }

}  // namespace

TEST(ModelConfig, PaperDefaults) {
  const ModelConfig cfg;
  EXPECT_EQ(cfg.horizon, 12);
  EXPECT_EQ(cfg.history, 5);
  EXPECT_EQ(cfg.n_head, 4);
  ModelConfig bad;
  bad.embed_dim = 30;
  EXPECT_THROW(bad.validate(), ConfigError);
  const TrainOptions opt;
  EXPECT_EQ(opt.epochs, 60);
  EXPECT_EQ(opt.batch, 3);
  EXPECT_EQ(opt.lr, 1e-5);
}

TEST(Features, LayoutAndOneHot) {
  graph::OfgNode node;
  node.midpoint = {3, 4};
  node.seg_vector = {0.3, 0};
  node.occupancy = 1;
  node.flow = {-1, -2, 0.5, 0.1};
  node.light = scene::TrafficLight::kGreen;
  node.on_route = true;
  const auto f = node_feature(node, {1, 1});
  const NodeFeature want{2, 3, 0.3, 0, 1, -1, -2, 0.5, 0.1, 0, 0, 1, 0, 1};
  EXPECT_EQ(f, want);
  double hot = 0;
  for (std::size_t k = 9; k < 13; ++k) hot += f[k];
  EXPECT_EQ(hot, 1.0);
}

TEST(Encode, FrameCountMismatchThrows) {
  const auto sc = fixture::tiny();
  const auto t = graph::build_tofg(sc, {0, 3}, graph::GraphConfig{});
  const auto cfg = fixture::small_model();
  EXPECT_THROW(encode(t, cfg, init_params(cfg)), ValidationError);
}

TEST(Encode, TranslationGivesIdenticalEmbeddings) {
  const auto sc = fixture::tiny();
  const auto cfg = fixture::small_model();
  const auto ps = init_params(cfg);
  const auto a = encode(tiny_tofg(sc), cfg, ps);
  const auto b = encode(tiny_tofg(fixture::translated(sc, {100, 50})), cfg, ps);
  ASSERT_TRUE(a.first.same_shape(b.first));
  for (std::size_t i = 0; i < a.first.size(); ++i) EXPECT_NEAR(a.first[i], b.first[i], 1e-9);
  for (std::size_t i = 0; i < a.second.size(); ++i) EXPECT_NEAR(a.second[i], b.second[i], 1e-9);
}

TEST(Encode, ZeroGatW2ReducesToNodeMlp) {
  const auto sc = fixture::tiny();
  auto cfg = fixture::small_model();
  auto ps = init_params(cfg);
  for (int l = 0; l < cfg.n_gat_layers; ++l) ps["gat." + std::to_string(l) + ".w2"].value.fill(0.0);
  const auto tofg = tiny_tofg(sc);
  const auto enc = encode(tofg, cfg, ps);
  cfg.n_gat_layers = 0;
  const auto plain = encode(tofg, cfg, ps);
  EXPECT_EQ(enc.first, plain.first);
}

TEST(Encode, OvertakeEmbeddingsFiniteAndRepeatable) {
  const auto sc = scene::gen_synthetic(scene::SyntheticKind::kOvertake, 2);
  ModelConfig cfg;
  graph::GraphConfig gcfg;
  gcfg.roi_radius = 30;
  const auto tofg = graph::build_tofg(sc, {20, 24}, gcfg);
  const auto a = encode(tofg, cfg, init_params(cfg));
  const auto b = encode(tofg, cfg, init_params(cfg));
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
  for (double v : a.first.data()) EXPECT_TRUE(std::isfinite(v));
}

TEST(Predict, HorizonWaypointsAndNormalizedAttention) {
  const auto sc = fixture::tiny();
  const ModelConfig cfg = fixture::small_model();
  const auto tofg = tiny_tofg(sc);
  const auto pred = predict(tofg, cfg, init_params(cfg));
  EXPECT_EQ(pred.waypoints.size(), 12u);
  ASSERT_EQ(pred.attention.per_head.rows(), 4u);
  EXPECT_EQ(pred.attention.size(), tofg.nodes_per_frame() * 5);
  for (std::size_t h = 0; h < 4; ++h) {
    double s = 0;
    for (std::size_t j = 0; j < pred.attention.size(); ++j) s += pred.attention.per_head(h, j);
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
  double m = 0;
  for (double v : pred.attention.mean) m += v;
  EXPECT_NEAR(m, 1.0, 1e-9);
}

TEST(Predict, ZeroDecoderPutsWaypointsAtEgo) {
  const auto sc = fixture::tiny();
  const ModelConfig cfg = fixture::small_model();
  auto ps = init_params(cfg);
  ps["dec.w2"].value.fill(0.0);
  ps["dec.b2"].value.fill(0.0);
  const auto tofg = tiny_tofg(sc);
  const auto pred = predict(tofg, cfg, ps);
  for (const auto& w : pred.waypoints) {
    EXPECT_EQ(w.x, tofg.ego_last->x);
    EXPECT_EQ(w.y, tofg.ego_last->y);
  }
}

TEST(Predict, TranslationInvariantRelativeWaypoints) {
  const auto sc = fixture::tiny();
  const ModelConfig cfg = fixture::small_model();
  const auto ps = init_params(cfg);
  const Vec2 d{-2500.25, 731.5};
  const auto a = predict(tiny_tofg(sc), cfg, ps);
  const auto b = predict(tiny_tofg(fixture::translated(sc, d)), cfg, ps);
  for (std::size_t k = 0; k < a.waypoints.size(); ++k) {
    EXPECT_NEAR(b.waypoints[k].x - d.x, a.waypoints[k].x, 1e-9);
    EXPECT_NEAR(b.waypoints[k].y - d.y, a.waypoints[k].y, 1e-9);
    EXPECT_NEAR(b.waypoints[k].theta, a.waypoints[k].theta, 1e-6);
  }
}

TEST(Headings, ForwardDifferences) {
  const auto poses = with_headings({{0, 0}, {1, 0}, {1, 1}}, 0.7);
  EXPECT_DOUBLE_EQ(poses[0].theta, 0.0);
  EXPECT_DOUBLE_EQ(poses[1].theta, M_PI / 2);
  EXPECT_DOUBLE_EQ(poses[2].theta, M_PI / 2);
  EXPECT_DOUBLE_EQ(with_headings({{5, 5}}, 0.7)[0].theta, 0.7);
}

TEST(Loss, Identities) {
  std::vector<Vec2> truth(12, Vec2{1, 2});
  EXPECT_EQ(imitation_loss(truth, truth), 0.0);
  auto one = truth;
  one[3] = one[3] + Vec2{3, 4};
  EXPECT_EQ(imitation_loss(one, truth), 5.0);
  auto all = truth;
  for (auto& p : all) p.x += 1.0;
  EXPECT_DOUBLE_EQ(imitation_loss(all, truth), 12.0);
  EXPECT_THROW(imitation_loss(std::vector<Vec2>(3), truth), ShapeError);
}

TEST(Gradients, FullModelOnTinyGraph) {
  const auto sc = fixture::tiny();
  const ModelConfig cfg = fixture::small_model();
  const auto tofg = tiny_tofg(sc);
  ASSERT_LE(tofg.nodes_per_frame() * tofg.frames.size(), 30u);
  const auto g = prepare(tofg, cfg);
  nn::Matrix truth(1, 24);
  for (std::size_t k = 0; k < 24; ++k) truth[k] = 0.05 * static_cast<double>(k) * (k % 2 ? 0.2 : 1.0);
  const auto r = gradcheck::check(init_params(cfg), [&](nn::Tape& t, const nn::ParamStore& ps) {
    return nn::path_distance_loss(t, forward(t, g, cfg, ps).offsets, truth);
  });
  EXPECT_EQ(r.failed, 0u) << "worst " << r.worst_param << " rel " << r.worst_rel;
  EXPECT_EQ(r.checked, init_params(cfg).scalar_count());
}

TEST(Train, OverfitsSingleSample) {
  const auto sc = scene::gen_synthetic(scene::SyntheticKind::kLaneChange, 1);
  ModelConfig cfg;
  cfg.embed_dim = 32;
  cfg.mlp_hidden = 32;
  graph::GraphConfig gcfg;
  gcfg.roi_radius = 15;
  const auto s = prepare(make_sample(sc, 20, cfg, gcfg), cfg);
  TrainOptions opt;
  opt.epochs = 200;
  opt.lr = 1e-3;
  const auto r = train({s}, cfg, opt);
  ASSERT_EQ(r.loss_curve.size(), 200u);
  EXPECT_LT(r.loss_curve.back(), 0.05 * r.loss_curve.front());
}

TEST(Train, DeterministicAndRejectsEmpty) {
  const auto sc = fixture::tiny(17);
  const ModelConfig cfg = fixture::small_model();
  std::vector<PreparedSample> corpus;
  for (int f : {4}) corpus.push_back(prepare(make_sample(sc, f, cfg, graph::GraphConfig{}), cfg));
  TrainOptions opt;
  opt.epochs = 3;
  opt.lr = 1e-3;
  const auto a = train(corpus, cfg, opt);
  const auto b = train(corpus, cfg, opt);
  EXPECT_EQ(a.loss_curve, b.loss_curve);
  EXPECT_THROW(train({}, cfg, opt), ValidationError);
}

TEST(Train, CosineScheduleEndpoints) {
  TrainOptions opt;
  opt.epochs = 10;
  opt.lr = 1e-3;
  EXPECT_EQ(epoch_lr(opt, 7), 1e-3);
  opt.schedule = LrSchedule::kCosine;
  EXPECT_DOUBLE_EQ(epoch_lr(opt, 0), 1e-3);
  EXPECT_NEAR(epoch_lr(opt, 5), 0.5e-3, 1e-15);
  EXPECT_NEAR(epoch_lr(opt, 10), 0.0, 1e-15);
  for (int e = 1; e < 10; ++e) EXPECT_LT(epoch_lr(opt, e), epoch_lr(opt, e - 1));
}

TEST(Baseline, ConstantVelocity) {
  const scene::AgentState s{0, 1, 2, 0, 2, -1, 0};
  const auto pts = constant_velocity(s, 3, 0.5);
  ASSERT_EQ(pts.size(), 3u);
  EXPECT_EQ(pts[2], (Vec2{4, 0.5}));
}

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gradcheck.hpp"
#include "tofg/nn.hpp"

using namespace tofg;
using namespace tofg::nn;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> U(-scale, scale);
  Matrix m(r, c);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = U(rng);
  return m;
}

// Scalar evaluation of one GAT layer straight from its definition.
std::vector<std::vector<double>> gat_by_hand(const std::vector<std::vector<double>>& h,
                                             const std::vector<std::vector<int>>& nbrs,
                                             const std::vector<std::vector<double>>& w1,
                                             const std::vector<std::vector<double>>& w2) {
  const std::size_t d = h[0].size();
  auto out = h;
  for (std::size_t i = 0; i < h.size(); ++i) {
    for (int j : nbrs[i]) {
      std::vector<double> cat = h[i];
      cat.insert(cat.end(), h[static_cast<std::size_t>(j)].begin(), h[static_cast<std::size_t>(j)].end());
      std::vector<double> z(d, 0.0);
      for (std::size_t c = 0; c < d; ++c) {
        for (std::size_t r = 0; r < 2 * d; ++r) z[c] += cat[r] * w1[r][c];
      }
      double mean = 0, var = 0;
      for (double v : z) mean += v / d;
      for (double v : z) var += (v - mean) * (v - mean) / d;
      std::vector<double> a(d);
      for (std::size_t c = 0; c < d; ++c) a[c] = std::max(0.0, (z[c] - mean) / std::sqrt(var + 1e-10));
      for (std::size_t c = 0; c < d; ++c) {
        for (std::size_t r = 0; r < d; ++r) out[i][c] += a[r] * w2[r][c];
      }
    }
  }
  return out;
}

Matrix to_matrix(const std::vector<std::vector<double>>& v) {
  Matrix m(v.size(), v[0].size());
  for (std::size_t r = 0; r < v.size(); ++r) {
    for (std::size_t c = 0; c < v[0].size(); ++c) m(r, c) = v[r][c];
  }
  return m;
}

}  // namespace

TEST(Gat, ZeroW2IsResidualIdentity) {
  std::mt19937_64 rng(1);
  const Matrix h = random_matrix(5, 4, rng);
  const auto adj = Adjacency::from_lists({{1, 2}, {0}, {0, 3, 4}, {2}, {2}});
  EXPECT_EQ(gat_layer(h, adj, random_matrix(8, 4, rng), Matrix(4, 4)), h);
}

TEST(Gat, EmptyNeighbourhoodIsIdentity) {
  std::mt19937_64 rng(2);
  const Matrix h = random_matrix(3, 4, rng);
  const auto adj = Adjacency::from_lists({{}, {}, {}});
  EXPECT_EQ(gat_layer(h, adj, random_matrix(8, 4, rng), random_matrix(4, 4, rng)), h);
}

TEST(Gat, TwoNodesMatchScalarOracle) {
  const std::vector<std::vector<double>> h{{0.5, -0.25}, {1.0, 0.75}};
  const std::vector<std::vector<double>> w1{{0.1, -0.2}, {0.3, 0.4}, {-0.5, 0.6}, {0.7, -0.8}};
  const std::vector<std::vector<double>> w2{{0.9, -0.1}, {0.2, 0.3}};
  const std::vector<std::vector<int>> nbrs{{1}, {0}};
  const Matrix got = gat_layer(to_matrix(h), Adjacency::from_lists(nbrs), to_matrix(w1), to_matrix(w2));
  const Matrix want = to_matrix(gat_by_hand(h, nbrs, w1, w2));
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
}

TEST(Gat, RandomGraphsMatchScalarOracle) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = 6, d = 4;
    std::vector<std::vector<double>> h(n, std::vector<double>(d)), w1(2 * d, std::vector<double>(d)),
        w2(d, std::vector<double>(d));
    std::uniform_real_distribution<double> U(-1, 1);
    for (auto* m : {&h, &w1, &w2}) {
      for (auto& row : *m) {
        for (auto& v : row) v = U(rng);
      }
    }
    std::vector<std::vector<int>> nbrs(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (i != j && rng() % 3 == 0) nbrs[i].push_back(static_cast<int>(j));
      }
    }
    const Matrix got = gat_layer(to_matrix(h), Adjacency::from_lists(nbrs), to_matrix(w1), to_matrix(w2));
    const Matrix want = to_matrix(gat_by_hand(h, nbrs, w1, w2));
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
  }
}

TEST(Gat, ShapeErrorsNameOperands) {
  const auto adj = Adjacency::from_lists({{}, {}});
  try {
    gat_layer(Matrix(2, 3), adj, Matrix(5, 3), Matrix(3, 3));
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("W1"), std::string::npos);
  }
  EXPECT_THROW(gat_layer(Matrix(2, 3), adj, Matrix(6, 3), Matrix(2, 3)), ShapeError);
  EXPECT_THROW(gat_layer(Matrix(3, 3), adj, Matrix(6, 3), Matrix(3, 3)), ShapeError);
  EXPECT_THROW(gat_layer(Matrix(2, 3), Adjacency::from_lists({{5}, {}}), Matrix(6, 3), Matrix(3, 3)), ShapeError);
}

TEST(CrossAttention, SingleNodeWeightIsOne) {
  std::mt19937_64 rng(4);
  const std::size_t d = 8;
  const Matrix hq = random_matrix(1, d, rng), hn = random_matrix(1, d, rng);
  const Matrix wq = random_matrix(d, d, rng), wk = random_matrix(d, d, rng), wv = random_matrix(d, d, rng),
               wo = random_matrix(d, d, rng);
  const auto r = cross_attention(hq, hn, wq, wk, wv, wo, 4);
  ASSERT_EQ(r.weights.rows(), 4u);
  for (std::size_t h = 0; h < 4; ++h) EXPECT_EQ(r.weights(h, 0), 1.0);
  const Matrix want = matmul(matmul(hn, wv), wo);
  for (std::size_t i = 0; i < d; ++i) EXPECT_NEAR(r.out[i], want[i], 1e-12);
}

TEST(CrossAttention, RowsSumToOneAndMatchPerHeadOracle) {
  std::mt19937_64 rng(5);
  const std::size_t d = 8, n = 7, heads = 4, dk = d / heads;
  const Matrix hq = random_matrix(1, d, rng), hn = random_matrix(n, d, rng);
  const Matrix wq = random_matrix(d, d, rng), wk = random_matrix(d, d, rng), wv = random_matrix(d, d, rng),
               wo = random_matrix(d, d, rng);
  const auto r = cross_attention(hq, hn, wq, wk, wv, wo, heads);
  const Matrix q = matmul(hq, wq), k = matmul(hn, wk), v = matmul(hn, wv);
  Matrix concat(1, d);
  for (std::size_t h = 0; h < heads; ++h) {
    std::vector<double> logits(n);
    double mx = -1e300;
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0;
      for (std::size_t c = 0; c < dk; ++c) s += q[h * dk + c] * k(j, h * dk + c);
      logits[j] = s / std::sqrt(static_cast<double>(dk));
      mx = std::max(mx, logits[j]);
    }
    double z = 0;
    for (auto& l : logits) z += (l = std::exp(l - mx));
    double row_sum = 0;
    for (std::size_t j = 0; j < n; ++j) {
      const double w = logits[j] / z;
      EXPECT_NEAR(r.weights(h, j), w, 1e-12);
      EXPECT_GE(r.weights(h, j), 0.0);
      row_sum += r.weights(h, j);
      for (std::size_t c = 0; c < dk; ++c) concat[h * dk + c] += w * v(j, h * dk + c);
    }
    EXPECT_NEAR(row_sum, 1.0, 1e-9);
  }
  const Matrix want = matmul(concat, wo);
  for (std::size_t i = 0; i < d; ++i) EXPECT_NEAR(r.out[i], want[i], 1e-12);
  EXPECT_THROW(cross_attention(hq, hn, wq, wk, wv, wo, 3), ShapeError);
}

TEST(Primitives, LayerNormAndSoftmax) {
  std::mt19937_64 rng(6);
  const Matrix x = random_matrix(5, 9, rng, 10.0);
  const Matrix y = layer_norm_rows(x);
  for (std::size_t r = 0; r < y.rows(); ++r) {
    double mean = 0, var = 0;
    for (std::size_t c = 0; c < y.cols(); ++c) mean += y(r, c) / 9.0;
    for (std::size_t c = 0; c < y.cols(); ++c) var += (y(r, c) - mean) * (y(r, c) - mean) / 9.0;
    EXPECT_NEAR(mean, 0.0, 1e-9);
    EXPECT_NEAR(var, 1.0, 1e-9);
  }
  const Matrix s = softmax_rows(x);
  Matrix shifted = x;
  for (std::size_t i = 0; i < shifted.size(); ++i) shifted[i] += 123.0;
  const Matrix s2 = softmax_rows(shifted);
  for (std::size_t r = 0; r < s.rows(); ++r) {
    double sum = 0;
    for (std::size_t c = 0; c < s.cols(); ++c) {
      EXPECT_GE(s(r, c), 0.0);
      EXPECT_NEAR(s(r, c), s2(r, c), 1e-9);
      sum += s(r, c);
    }
    EXPECT_NEAR(sum, 1.0, 1e-9);
  }
}

TEST(Backward, SumGivesOnesAndUnusedParamIsZero) {
  ParamStore ps;
  ps.add("used", Matrix::from_rows({{1, 2, 3}, {4, 5, 6}}));
  ps.add("unused", Matrix::from_rows({{7}}));
  Tape t;
  const Var loss = sum(t, t.param(ps, "used"));
  t.backward(loss, ps);
  for (double g : ps["used"].grad.data()) EXPECT_EQ(g, 1.0);
  EXPECT_EQ(ps["unused"].grad[0], 0.0);
  EXPECT_THROW(t.backward(loss, ps), StateError);
  Tape empty;
  EXPECT_THROW(empty.backward(Var{}, ps), StateError);
}

TEST(Backward, NonScalarLossRejected) {
  ParamStore ps;
  ps.add("w", Matrix(2, 2, 1.0));
  Tape t;
  EXPECT_THROW(t.backward(t.param(ps, "w"), ps), ShapeError);
}

TEST(Backward, EachOpPassesFiniteDifferences) {
  std::mt19937_64 rng(7);
  ParamStore ps;
  ps.add("x", random_matrix(4, 6, rng));
  ps.add("w", random_matrix(6, 6, rng));
  ps.add("b", random_matrix(1, 6, rng));
  ps.add("w1", random_matrix(12, 6, rng));
  ps.add("w2", random_matrix(6, 6, rng));
  ps.add("q", random_matrix(1, 6, rng));
  ps.add("wq", random_matrix(6, 6, rng));
  ps.add("wk", random_matrix(6, 6, rng));
  ps.add("wv", random_matrix(6, 6, rng));
  ps.add("wo", random_matrix(6, 6, rng));
  const Matrix truth = random_matrix(1, 6, rng);
  const auto adj = Adjacency::from_lists({{1, 3}, {0, 2}, {1}, {0}});

  auto check = [&](const char* name, const gradcheck::LossFn& fn) {
    const auto r = gradcheck::check(ps, fn);
    EXPECT_EQ(r.failed, 0u) << name << " worst " << r.worst_param << " rel " << r.worst_rel;
  };
  check("matmul+bias+relu", [&](Tape& t, const ParamStore& p) {
    return sum(t, relu(t, add_bias(t, matmul(t, t.param(p, "x"), t.param(p, "w")), t.param(p, "b"))));
  });
  check("layer_norm", [&](Tape& t, const ParamStore& p) {
    return sum(t, matmul(t, layer_norm(t, t.param(p, "x")), t.param(p, "w")));
  });
  check("add+scale", [&](Tape& t, const ParamStore& p) {
    const Var x = t.param(p, "x");
    return scale(t, sum(t, matmul(t, add(t, x, x), t.param(p, "w"))), 0.3);
  });
  check("gat", [&](Tape& t, const ParamStore& p) {
    const Var h = gat_layer(t, t.param(p, "x"), t.param(p, "w1"), t.param(p, "w2"), adj);
    return sum(t, matmul(t, h, t.param(p, "w")));
  });
  check("cross_attention+path_loss", [&](Tape& t, const ParamStore& p) {
    const auto a = cross_attention(t, t.param(p, "q"), t.param(p, "x"), t.param(p, "wq"), t.param(p, "wk"),
                                   t.param(p, "wv"), t.param(p, "wo"), 3);
    return path_distance_loss(t, a.out, truth);
  });
}

TEST(Adam, ZeroGradientLeavesParamsAndAdvancesStep) {
  ParamStore ps;
  ps.add("w", Matrix::from_rows({{1.5, -2.0}}));
  ps.mark_gradients();
  const Matrix before = ps["w"].value;
  adam_step(ps);
  EXPECT_EQ(ps["w"].value, before);
  EXPECT_EQ(ps.step(), 1);
}

TEST(Adam, FirstStepClosedForm) {
  ParamStore ps;
  ps.add("w", Matrix::from_rows({{1.0, -1.0, 0.5}}));
  ps["w"].grad = Matrix::from_rows({{0.3, -2.0, 1e-3}});
  ps.mark_gradients();
  const Matrix g = ps["w"].grad;
  const Matrix before = ps["w"].value;
  AdamOptions opt;
  opt.lr = 1e-3;
  adam_step(ps, opt);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_NEAR(ps["w"].value[k] - before[k], -opt.lr * g[k] / (std::abs(g[k]) + opt.eps), 1e-15);
    EXPECT_EQ(ps["w"].grad[k], 0.0);
  }
  EXPECT_THROW(adam_step(ps, opt), StateError);
  EXPECT_EQ(AdamOptions{}.lr, 1e-5);
}

TEST(Checkpoint, BitExactRoundTrip) {
  std::mt19937_64 rng(8);
  ParamStore ps;
  ps.add("z.last", random_matrix(3, 4, rng));
  ps.add("a.first", random_matrix(1, 5, rng));
  ps.set_step(17);
  const auto back = params_from_json(nlohmann::json::parse(params_to_json(ps).dump()));
  ASSERT_EQ(back.names(), ps.names());
  for (std::size_t i = 0; i < ps.size(); ++i) EXPECT_EQ(back.at(i).value, ps.at(i).value);
  EXPECT_EQ(back.step(), 17);
  EXPECT_THROW(params_from_json({{"format", "other"}}), ParseError);
}

TEST(Init, UniformWithinFanInBound) {
  std::mt19937_64 a(9), b(9);
  const Matrix m = init_uniform(16, 8, a);
  EXPECT_EQ(m, init_uniform(16, 8, b));
  for (double v : m.data()) EXPECT_LE(std::abs(v), 0.25);
}

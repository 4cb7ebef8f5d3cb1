#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "tofg/error.hpp"

namespace tofg::nn {

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data) : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) throw ShapeError("Matrix: data length does not match rows*cols");
  }

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    Matrix m(rows.size(), rows.size() == 0 ? 0 : rows.begin()->size());
    std::size_t r = 0;
    for (const auto& row : rows) {
      if (row.size() != m.cols_) throw ShapeError("Matrix::from_rows: ragged rows");
      std::copy(row.begin(), row.end(), m.data_.begin() + static_cast<std::ptrdiff_t>(r * m.cols_));
      ++r;
    }
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double* row(std::size_t r) { return data_.data() + r * cols_; }
  const double* row(std::size_t r) const { return data_.data() + r * cols_; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
  std::string shape_str() const { return "[" + std::to_string(rows_) + "x" + std::to_string(cols_) + "]"; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  Matrix& operator+=(const Matrix& o) {
    if (!same_shape(o)) throw ShapeError("Matrix +=: " + shape_str() + " vs " + o.shape_str());
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// ---------------------------------------------------------------------------
// Kernels

namespace kernel {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using MutMap = Eigen::Map<RowMajor>;

inline ConstMap view(const Matrix& m) { return {m.row(0), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols())}; }
inline MutMap view(Matrix& m) { return {m.row(0), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols())}; }

/// c += a * b
inline void gemm_nn(const Matrix& a, const Matrix& b, Matrix& c) {
  if (a.size() == 0 || b.size() == 0) return;
  view(c).noalias() += view(a) * view(b);
}

/// c += a^T * b
inline void gemm_tn(const Matrix& a, const Matrix& b, Matrix& c) {
  if (a.size() == 0 || b.size() == 0) return;
  view(c).noalias() += view(a).transpose() * view(b);
}

/// c += a * b^T
inline void gemm_nt(const Matrix& a, const Matrix& b, Matrix& c) {
  if (a.size() == 0 || b.size() == 0) return;
  view(c).noalias() += view(a) * view(b).transpose();
}

}  // namespace kernel

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw ShapeError("matmul: " + a.shape_str() + " x " + b.shape_str());
  Matrix c(a.rows(), b.cols());
  kernel::gemm_nn(a, b, c);
  return c;
}

inline constexpr double kLayerNormEps = 1e-10;

/// Row-wise normalization to zero mean and unit variance, no affine terms.
inline Matrix layer_norm_rows(const Matrix& x) {
  Matrix y(x.rows(), x.cols());
  const double inv_d = 1.0 / static_cast<double>(x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const double* xr = x.row(r);
    double mean = 0.0;
    for (std::size_t c = 0; c < x.cols(); ++c) mean += xr[c];
    mean *= inv_d;
    double var = 0.0;
    for (std::size_t c = 0; c < x.cols(); ++c) var += (xr[c] - mean) * (xr[c] - mean);
    var *= inv_d;
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    for (std::size_t c = 0; c < x.cols(); ++c) y(r, c) = (xr[c] - mean) * inv;
  }
  return y;
}

inline void softmax_inplace(std::span<double> v) {
  const double mx = *std::max_element(v.begin(), v.end());
  double sum = 0.0;
  for (double& x : v) {
    x = std::exp(x - mx);
    sum += x;
  }
  for (double& x : v) x /= sum;
}

inline Matrix softmax_rows(const Matrix& x) {
  Matrix y = x;
  for (std::size_t r = 0; r < y.rows(); ++r) softmax_inplace({y.row(r), y.cols()});
  return y;
}

// ---------------------------------------------------------------------------
// Parameters

struct Param {
  Matrix value;
  Matrix grad;
  Matrix m;
  Matrix v;
};

/// Named parameters in insertion order, with gradient and Adam moment slots.
class ParamStore {
 public:
  Param& add(const std::string& name, Matrix value) {
    if (index_.contains(name)) throw ValidationError("ParamStore: duplicate parameter '" + name + "'");
    index_[name] = params_.size();
    names_.push_back(name);
    Param p;
    p.grad = Matrix(value.rows(), value.cols());
    p.m = Matrix(value.rows(), value.cols());
    p.v = Matrix(value.rows(), value.cols());
    p.value = std::move(value);
    params_.push_back(std::move(p));
    return params_.back();
  }

  bool contains(const std::string& name) const { return index_.contains(name); }
  std::size_t index_of(const std::string& name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) throw ValidationError("ParamStore: unknown parameter '" + name + "'");
    return it->second;
  }

  Param& at(std::size_t i) { return params_.at(i); }
  const Param& at(std::size_t i) const { return params_.at(i); }
  Param& operator[](const std::string& name) { return params_[index_of(name)]; }
  const Param& operator[](const std::string& name) const { return params_[index_of(name)]; }

  std::size_t size() const { return params_.size(); }
  const std::vector<std::string>& names() const { return names_; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  std::int64_t step() const { return step_; }
  bool has_gradients() const { return has_gradients_; }

  void zero_grad() {
    for (auto& p : params_) p.grad.fill(0.0);
    has_gradients_ = false;
  }

  /// Adds gradients from another store with the same layout (per-worker merge).
  void accumulate_grads(const ParamStore& other) {
    for (std::size_t i = 0; i < params_.size(); ++i) params_[i].grad += other.params_.at(i).grad;
    has_gradients_ = has_gradients_ || other.has_gradients_;
  }

  void mark_gradients() { has_gradients_ = true; }
  void advance_step() { ++step_; }
  void set_step(std::int64_t s) { step_ = s; }

 private:
  std::vector<Param> params_;
  std::vector<std::string> names_;
  std::map<std::string, std::size_t> index_;
  std::int64_t step_ = 0;
  bool has_gradients_ = false;
};

/// uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)), fan_in = rows.
inline Matrix init_uniform(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  Matrix m(rows, cols);
  const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    m[i] = (2.0 * u - 1.0) * bound;
  }
  return m;
}

struct AdamOptions {
  double lr = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update over every parameter; clears gradients.
inline void adam_step(ParamStore& store, const AdamOptions& opt = {}) {
  if (!store.has_gradients()) throw StateError("adam_step: gradients not populated (run backward first)");
  store.advance_step();
  const double t = static_cast<double>(store.step());
  const double c1 = 1.0 - std::pow(opt.beta1, t);
  const double c2 = 1.0 - std::pow(opt.beta2, t);
  for (std::size_t i = 0; i < store.size(); ++i) {
    Param& p = store.at(i);
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double g = p.grad[k];
      p.m[k] = opt.beta1 * p.m[k] + (1.0 - opt.beta1) * g;
      p.v[k] = opt.beta2 * p.v[k] + (1.0 - opt.beta2) * g * g;
      const double mhat = p.m[k] / c1;
      const double vhat = p.v[k] / c2;
      p.value[k] -= opt.lr * mhat / (std::sqrt(vhat) + opt.eps);
    }
  }
  store.zero_grad();
}

// ---------------------------------------------------------------------------
// Checkpoints: {"format": "tofg-params-v1", "step": n, "params": {name: {rows, cols, data}}}

inline nlohmann::json params_to_json(const ParamStore& store) {
  nlohmann::json params = nlohmann::json::object();
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& v = store.at(i).value;
    params[store.names()[i]] = {{"rows", v.rows()},
                                {"cols", v.cols()},
                                {"data", std::vector<double>(v.data().begin(), v.data().end())}};
  }
  // Key order in `params` is alphabetical; "order" keeps the store's layout.
  return {{"format", "tofg-params-v1"}, {"step", store.step()}, {"order", store.names()}, {"params", params}};
}

inline ParamStore params_from_json(const nlohmann::json& doc) {
  try {
    if (doc.at("format").get<std::string>() != "tofg-params-v1") throw ParseError("checkpoint: unknown format");
    ParamStore store;
    const auto& params = doc.at("params");
    for (const auto& name : doc.at("order").get<std::vector<std::string>>()) {
      const auto& p = params.at(name);
      Matrix m(p.at("rows").get<std::size_t>(), p.at("cols").get<std::size_t>(), p.at("data").get<std::vector<double>>());
      store.add(name, std::move(m));
    }
    store.set_step(doc.at("step").get<std::int64_t>());
    return store;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  } catch (const ShapeError& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  }
}

inline ParamStore load_params(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(buf.str());
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path + ": malformed checkpoint: " + e.what());
  }
  return params_from_json(doc);
}

// ---------------------------------------------------------------------------
// Reverse-mode tape

struct Var {
  int id = -1;
};

/// Neighbor lists in compressed form: neighbors of node i are
/// indices[offsets[i] .. offsets[i+1]).
struct Adjacency {
  std::vector<int> offsets{0};
  std::vector<int> indices;

  std::size_t nodes() const { return offsets.size() - 1; }

  static Adjacency from_lists(const std::vector<std::vector<int>>& lists) {
    Adjacency adj;
    adj.offsets.reserve(lists.size() + 1);
    for (const auto& l : lists) {
      adj.indices.insert(adj.indices.end(), l.begin(), l.end());
      adj.offsets.push_back(static_cast<int>(adj.indices.size()));
    }
    return adj;
  }
};

/// Records a forward pass; `backward` replays it once in reverse and adds
/// parameter gradients into the ParamStore.
class Tape {
 public:
  Var constant(Matrix value) { return push(std::move(value), {}); }

  Var param(const ParamStore& store, const std::string& name) {
    const std::size_t idx = store.index_of(name);
    if (const auto it = param_nodes_.find(idx); it != param_nodes_.end()) return Var{it->second};
    Var v = push(store.at(idx).value, {});
    nodes_[static_cast<std::size_t>(v.id)].param = static_cast<int>(idx);
    param_nodes_[idx] = v.id;
    return v;
  }

  const Matrix& value(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).value; }
  const Matrix& grad(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).grad; }

  Var push(Matrix value, std::function<void(Tape&, int)> backward) {
    if (consumed_) throw StateError("Tape: forward recording after backward; start a new tape");
    for (std::size_t i = 0; i < value.size(); ++i) {
      if (!std::isfinite(value[i])) throw NumericError("Tape: non-finite value produced in forward pass");
    }
    Node n;
    n.grad = Matrix(value.rows(), value.cols());
    n.value = std::move(value);
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size() - 1)};
  }

  Matrix& grad_mut(int id) { return nodes_[static_cast<std::size_t>(id)].grad; }
  const Matrix& value_of(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }

  /// Seeds d(loss)/d(loss) = 1 and propagates. Gradients for parameters the
  /// loss reaches are added to `store`; others are left untouched.
  void backward(Var loss, ParamStore& store) {
    if (consumed_) throw StateError("backward: already called for this forward pass");
    if (nodes_.empty() || loss.id < 0) throw StateError("backward: no forward pass recorded");
    const Matrix& lv = value(loss);
    if (lv.rows() != 1 || lv.cols() != 1) throw ShapeError("backward: loss must be 1x1, got " + lv.shape_str());
    consumed_ = true;
    grad_mut(loss.id)[0] = 1.0;
    for (int id = loss.id; id >= 0; --id) {
      auto& node = nodes_[static_cast<std::size_t>(id)];
      if (node.backward) node.backward(*this, id);
    }
    for (const auto& [idx, id] : param_nodes_) store.at(idx).grad += nodes_[static_cast<std::size_t>(id)].grad;
    store.mark_gradients();
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::function<void(Tape&, int)> backward;
    int param = -1;
  };
  std::vector<Node> nodes_;
  std::map<std::size_t, int> param_nodes_;
  bool consumed_ = false;
};

// ---------------------------------------------------------------------------
// Differentiable ops

inline Var matmul(Tape& t, Var a, Var b) {
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  if (av.cols() != bv.rows()) throw ShapeError("matmul: " + av.shape_str() + " x " + bv.shape_str());
  Matrix c(av.rows(), bv.cols());
  kernel::gemm_nn(av, bv, c);
  return t.push(std::move(c), [a, b](Tape& tp, int self) {
    const Matrix& g = tp.grad_mut(self);
    kernel::gemm_nt(g, tp.value_of(b.id), tp.grad_mut(a.id));
    kernel::gemm_tn(tp.value_of(a.id), g, tp.grad_mut(b.id));
  });
}

inline Var add(Tape& t, Var a, Var b) {
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  if (!av.same_shape(bv)) throw ShapeError("add: " + av.shape_str() + " vs " + bv.shape_str());
  Matrix c = av;
  c += bv;
  return t.push(std::move(c), [a, b](Tape& tp, int self) {
    const Matrix g = tp.grad_mut(self);
    tp.grad_mut(a.id) += g;
    tp.grad_mut(b.id) += g;
  });
}

/// x [n x d] + bias [1 x d] broadcast over rows.
inline Var add_bias(Tape& t, Var x, Var bias) {
  const Matrix& xv = t.value(x);
  const Matrix& bv = t.value(bias);
  if (bv.rows() != 1 || bv.cols() != xv.cols()) throw ShapeError("add_bias: " + xv.shape_str() + " + " + bv.shape_str());
  Matrix y = xv;
  for (std::size_t r = 0; r < y.rows(); ++r) {
    for (std::size_t c = 0; c < y.cols(); ++c) y(r, c) += bv[c];
  }
  return t.push(std::move(y), [x, bias](Tape& tp, int self) {
    const Matrix& g = tp.grad_mut(self);
    tp.grad_mut(x.id) += g;
    Matrix& gb = tp.grad_mut(bias.id);
    for (std::size_t r = 0; r < g.rows(); ++r) {
      for (std::size_t c = 0; c < g.cols(); ++c) gb[c] += g(r, c);
    }
  });
}

inline Var relu(Tape& t, Var x) {
  Matrix y = t.value(x);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::max(0.0, y[i]);
  return t.push(std::move(y), [x](Tape& tp, int self) {
    const Matrix& g = tp.grad_mut(self);
    const Matrix& xv = tp.value_of(x.id);
    Matrix& gx = tp.grad_mut(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xv[i] > 0.0) gx[i] += g[i];
    }
  });
}

inline Var layer_norm(Tape& t, Var x) {
  Matrix y = layer_norm_rows(t.value(x));
  return t.push(std::move(y), [x](Tape& tp, int self) {
    const Matrix& g = tp.grad_mut(self);
    const Matrix& xhat = tp.value_of(self);
    const Matrix& xv = tp.value_of(x.id);
    Matrix& gx = tp.grad_mut(x.id);
    const std::size_t d = xv.cols();
    const double inv_d = 1.0 / static_cast<double>(d);
    for (std::size_t r = 0; r < xv.rows(); ++r) {
      double mean = 0.0, var = 0.0;
      for (std::size_t c = 0; c < d; ++c) mean += xv(r, c);
      mean *= inv_d;
      for (std::size_t c = 0; c < d; ++c) var += (xv(r, c) - mean) * (xv(r, c) - mean);
      var *= inv_d;
      const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
      double g_mean = 0.0, gx_mean = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        g_mean += g(r, c);
        gx_mean += g(r, c) * xhat(r, c);
      }
      g_mean *= inv_d;
      gx_mean *= inv_d;
      for (std::size_t c = 0; c < d; ++c) gx(r, c) += inv * (g(r, c) - g_mean - xhat(r, c) * gx_mean);
    }
  });
}

inline Var sum(Tape& t, Var x) {
  const Matrix& xv = t.value(x);
  double s = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) s += xv[i];
  return t.push(Matrix(1, 1, s), [x](Tape& tp, int self) {
    const double g = tp.grad_mut(self)[0];
    Matrix& gx = tp.grad_mut(x.id);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
  });
}

inline Var scale(Tape& t, Var x, double s) {
  Matrix y = t.value(x);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= s;
  return t.push(std::move(y), [x, s](Tape& tp, int self) {
    const Matrix& g = tp.grad_mut(self);
    Matrix& gx = tp.grad_mut(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += s * g[i];
  });
}

/// Sum over rows of sqrt(dx^2 + dy^2), with pred/truth laid out
/// [x0, y0, x1, y1, ...] in a single row. The gradient at a zero distance is
/// taken as zero.
inline Var path_distance_loss(Tape& t, Var pred, const Matrix& truth) {
  const Matrix& pv = t.value(pred);
  if (!pv.same_shape(truth) || pv.rows() != 1 || pv.cols() % 2 != 0) {
    throw ShapeError("path_distance_loss: prediction " + pv.shape_str() + " vs truth " + truth.shape_str());
  }
  double loss = 0.0;
  for (std::size_t k = 0; k < pv.cols(); k += 2) loss += std::hypot(pv[k] - truth[k], pv[k + 1] - truth[k + 1]);
  return t.push(Matrix(1, 1, loss), [pred, truth](Tape& tp, int self) {
    const double g = tp.grad_mut(self)[0];
    const Matrix& p = tp.value_of(pred.id);
    Matrix& gp = tp.grad_mut(pred.id);
    for (std::size_t k = 0; k < p.cols(); k += 2) {
      const double dx = p[k] - truth[k];
      const double dy = p[k + 1] - truth[k + 1];
      const double d = std::hypot(dx, dy);
      if (d == 0.0) continue;
      gp[k] += g * dx / d;
      gp[k + 1] += g * dy / d;
    }
  });
}

namespace detail {

inline void split_rows(const Matrix& w, std::size_t top, Matrix& upper, Matrix& lower) {
  upper = Matrix(top, w.cols());
  lower = Matrix(w.rows() - top, w.cols());
  std::copy(w.data().begin(), w.data().begin() + static_cast<std::ptrdiff_t>(top * w.cols()), upper.data().begin());
  std::copy(w.data().begin() + static_cast<std::ptrdiff_t>(top * w.cols()), w.data().end(), lower.data().begin());
}

// phi = ReLU(LayerNorm(.)): applied to a pre-activation row, writing the
// normalized row into xhat and returning 1/std.
inline double phi_forward(const double* z, double* xhat, double* out, std::size_t d) {
  const double inv_d = 1.0 / static_cast<double>(d);
  double mean = 0.0;
  for (std::size_t c = 0; c < d; ++c) mean += z[c];
  mean *= inv_d;
  double var = 0.0;
  for (std::size_t c = 0; c < d; ++c) var += (z[c] - mean) * (z[c] - mean);
  var *= inv_d;
  const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
  for (std::size_t c = 0; c < d; ++c) {
    xhat[c] = (z[c] - mean) * inv;
    out[c] += std::max(0.0, xhat[c]);
  }
  return inv;
}

// Gradient through phi: given d(out) for this edge, adds d(z) into dz.
inline void phi_backward(const double* g, const double* xhat, double inv, double* dz, std::size_t d) {
  const double inv_d = 1.0 / static_cast<double>(d);
  double g_mean = 0.0, gx_mean = 0.0;
  for (std::size_t c = 0; c < d; ++c) {
    const double gc = xhat[c] > 0.0 ? g[c] : 0.0;
    g_mean += gc;
    gx_mean += gc * xhat[c];
  }
  g_mean *= inv_d;
  gx_mean *= inv_d;
  for (std::size_t c = 0; c < d; ++c) {
    const double gc = xhat[c] > 0.0 ? g[c] : 0.0;
    dz[c] += inv * (gc - g_mean - xhat[c] * gx_mean);
  }
}

}  // namespace detail

/// Residual graph-attention layer: h'_i = h_i + sum_{j in N(i)} phi((h_i || h_j) W1) W2
/// with phi = ReLU(LayerNorm(.)). Since (h_i || h_j) W1 = h_i W1_top + h_j W1_bottom,
/// both projections are computed once per node.
inline Var gat_layer(Tape& t, Var h, Var w1, Var w2, const Adjacency& adj) {
  const Matrix& hv = t.value(h);
  const Matrix& w1v = t.value(w1);
  const Matrix& w2v = t.value(w2);
  const std::size_t n = hv.rows(), d = hv.cols();
  if (w1v.rows() != 2 * d || w1v.cols() != d) {
    throw ShapeError("gat_layer: W1 must be [2d x d] = [" + std::to_string(2 * d) + "x" + std::to_string(d) + "], got " + w1v.shape_str());
  }
  if (w2v.rows() != d || w2v.cols() != d) throw ShapeError("gat_layer: W2 must be [d x d], got " + w2v.shape_str());
  if (adj.nodes() != n) throw ShapeError("gat_layer: adjacency covers " + std::to_string(adj.nodes()) + " nodes, h has " + std::to_string(n));
  for (int j : adj.indices) {
    if (j < 0 || static_cast<std::size_t>(j) >= n) throw ShapeError("gat_layer: adjacency index " + std::to_string(j) + " out of range");
  }

  Matrix w_top, w_bottom;
  detail::split_rows(w1v, d, w_top, w_bottom);
  Matrix p(n, d), q(n, d);
  kernel::gemm_nn(hv, w_top, p);
  kernel::gemm_nn(hv, w_bottom, q);

  const std::size_t n_edges = adj.indices.size();
  auto xhat = std::make_shared<std::vector<double>>(n_edges * d);
  auto inv_std = std::make_shared<std::vector<double>>(n_edges);
  auto agg = std::make_shared<Matrix>(n, d);
  std::vector<double> z(d);
  for (std::size_t i = 0; i < n; ++i) {
    for (int e = adj.offsets[i]; e < adj.offsets[i + 1]; ++e) {
      const auto j = static_cast<std::size_t>(adj.indices[static_cast<std::size_t>(e)]);
      for (std::size_t c = 0; c < d; ++c) z[c] = p(i, c) + q(j, c);
      (*inv_std)[static_cast<std::size_t>(e)] =
          detail::phi_forward(z.data(), xhat->data() + static_cast<std::size_t>(e) * d, agg->row(i), d);
    }
  }
  Matrix out = hv;
  kernel::gemm_nn(*agg, w2v, out);

  auto adj_ref = std::make_shared<const Adjacency>(adj);
  return t.push(std::move(out), [h, w1, w2, adj_ref, xhat, inv_std, agg, n, d](Tape& tp, int self) {
    const Adjacency& adj = *adj_ref;
    const Matrix& g = tp.grad_mut(self);
    const Matrix& hv = tp.value_of(h.id);
    const Matrix& w2v = tp.value_of(w2.id);
    Matrix w_top, w_bottom;
    detail::split_rows(tp.value_of(w1.id), d, w_top, w_bottom);

    Matrix& gh = tp.grad_mut(h.id);
    gh += g;
    kernel::gemm_tn(*agg, g, tp.grad_mut(w2.id));
    Matrix dagg(n, d);
    kernel::gemm_nt(g, w2v, dagg);

    Matrix dp(n, d), dq(n, d);
    for (std::size_t i = 0; i < n; ++i) {
      for (int e = adj.offsets[i]; e < adj.offsets[i + 1]; ++e) {
        const auto j = static_cast<std::size_t>(adj.indices[static_cast<std::size_t>(e)]);
        const double* xh = xhat->data() + static_cast<std::size_t>(e) * d;
        const double inv = (*inv_std)[static_cast<std::size_t>(e)];
        detail::phi_backward(dagg.row(i), xh, inv, dp.row(i), d);
        detail::phi_backward(dagg.row(i), xh, inv, dq.row(j), d);
      }
    }
    Matrix gw_top(d, d), gw_bottom(d, d);
    kernel::gemm_tn(hv, dp, gw_top);
    kernel::gemm_tn(hv, dq, gw_bottom);
    Matrix& gw1 = tp.grad_mut(w1.id);
    for (std::size_t k = 0; k < d * d; ++k) {
      gw1[k] += gw_top[k];
      gw1[d * d + k] += gw_bottom[k];
    }
    kernel::gemm_nt(dp, w_top, gh);
    kernel::gemm_nt(dq, w_bottom, gh);
  });
}

struct AttentionOutput {
  Var out;
  Matrix weights;  // [n_head x n], each row sums to 1
};

/// One multi-head cross-attention layer: per head softmax(q K^T / sqrt(d_k)) V
/// with q = h_query Wq, K = h_nodes Wk, V = h_nodes Wv; heads are concatenated
/// and multiplied by Wo.
inline AttentionOutput cross_attention(Tape& t, Var h_query, Var h_nodes, Var wq, Var wk, Var wv, Var wo,
                                       std::size_t n_head) {
  const Matrix& hq = t.value(h_query);
  const Matrix& hn = t.value(h_nodes);
  const std::size_t d = hn.cols();
  const std::size_t n = hn.rows();
  if (hq.rows() != 1 || hq.cols() != d) throw ShapeError("cross_attention: query must be [1 x " + std::to_string(d) + "], got " + hq.shape_str());
  if (n == 0) throw ShapeError("cross_attention: no nodes to attend");
  if (n_head == 0 || d % n_head != 0) throw ShapeError("cross_attention: embed dim " + std::to_string(d) + " not divisible by n_head " + std::to_string(n_head));
  for (Var w : {wq, wk, wv, wo}) {
    if (t.value(w).rows() != d || t.value(w).cols() != d) throw ShapeError("cross_attention: projection must be [d x d], got " + t.value(w).shape_str());
  }
  const std::size_t dk = d / n_head;
  const double s = 1.0 / std::sqrt(static_cast<double>(dk));

  Matrix q(1, d), k(n, d), v(n, d);
  kernel::gemm_nn(hq, t.value(wq), q);
  kernel::gemm_nn(hn, t.value(wk), k);
  kernel::gemm_nn(hn, t.value(wv), v);

  auto weights = std::make_shared<Matrix>(n_head, n);
  auto concat = std::make_shared<Matrix>(1, d);
  for (std::size_t hd = 0; hd < n_head; ++hd) {
    double* w = weights->row(hd);
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t c = hd * dk; c < (hd + 1) * dk; ++c) acc += q[c] * k(j, c);
      w[j] = acc * s;
    }
    softmax_inplace({w, n});
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t c = hd * dk; c < (hd + 1) * dk; ++c) (*concat)[c] += w[j] * v(j, c);
    }
  }
  Matrix out(1, d);
  kernel::gemm_nn(*concat, t.value(wo), out);

  auto qp = std::make_shared<Matrix>(std::move(q));
  auto kp = std::make_shared<Matrix>(std::move(k));
  auto vp = std::make_shared<Matrix>(std::move(v));
  AttentionOutput result;
  result.weights = *weights;
  result.out = t.push(std::move(out), [=](Tape& tp, int self) {
    const Matrix& g = tp.grad_mut(self);
    kernel::gemm_tn(*concat, g, tp.grad_mut(wo.id));
    Matrix dconcat(1, d);
    kernel::gemm_nt(g, tp.value_of(wo.id), dconcat);

    Matrix dq(1, d), dk_m(n, d), dv(n, d);
    std::vector<double> dw(n);
    for (std::size_t hd = 0; hd < n_head; ++hd) {
      const double* w = weights->row(hd);
      double dot_wdw = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t c = hd * dk; c < (hd + 1) * dk; ++c) {
          acc += dconcat[c] * (*vp)(j, c);
          dv(j, c) += w[j] * dconcat[c];
        }
        dw[j] = acc;
        dot_wdw += w[j] * acc;
      }
      for (std::size_t j = 0; j < n; ++j) {
        const double dlogit = w[j] * (dw[j] - dot_wdw) * s;
        for (std::size_t c = hd * dk; c < (hd + 1) * dk; ++c) {
          dq[c] += dlogit * (*kp)(j, c);
          dk_m(j, c) += dlogit * (*qp)[c];
        }
      }
    }
    const Matrix& hq = tp.value_of(h_query.id);
    const Matrix& hn = tp.value_of(h_nodes.id);
    kernel::gemm_tn(hq, dq, tp.grad_mut(wq.id));
    kernel::gemm_tn(hn, dk_m, tp.grad_mut(wk.id));
    kernel::gemm_tn(hn, dv, tp.grad_mut(wv.id));
    kernel::gemm_nt(dq, tp.value_of(wq.id), tp.grad_mut(h_query.id));
    Matrix& ghn = tp.grad_mut(h_nodes.id);
    kernel::gemm_nt(dk_m, tp.value_of(wk.id), ghn);
    kernel::gemm_nt(dv, tp.value_of(wv.id), ghn);
  });
  return result;
}

// ---------------------------------------------------------------------------
// Non-recording entry points

inline Matrix gat_layer(const Matrix& h, const Adjacency& adj, const Matrix& w1, const Matrix& w2) {
  Tape t;
  const Var out = gat_layer(t, t.constant(h), t.constant(w1), t.constant(w2), adj);
  return t.value(out);
}

struct AttentionResult {
  Matrix out;
  Matrix weights;
};

inline AttentionResult cross_attention(const Matrix& h_query, const Matrix& h_nodes, const Matrix& wq, const Matrix& wk,
                                       const Matrix& wv, const Matrix& wo, std::size_t n_head) {
  Tape t;
  auto r = cross_attention(t, t.constant(h_query), t.constant(h_nodes), t.constant(wq), t.constant(wk), t.constant(wv),
                           t.constant(wo), n_head);
  return {t.value(r.out), r.weights};
}

}  // namespace tofg::nn

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "tofg/nn.hpp"

namespace gradcheck {

struct Result {
  std::size_t checked = 0;
  std::size_t failed = 0;
  double worst_rel = 0.0;
  std::string worst_param;
};

/// Records a forward pass on `t` and returns the scalar loss variable.
using LossFn = std::function<tofg::nn::Var(tofg::nn::Tape& t, const tofg::nn::ParamStore& ps)>;

/// Central differences on every scalar of every parameter. A scalar passes
/// when |analytic - numeric| <= max(rel_tol * max(|analytic|, |numeric|), abs_floor).
inline Result check(tofg::nn::ParamStore ps, const LossFn& loss, double step = 1e-5, double rel_tol = 1e-4,
                    double abs_floor = 1e-7) {
  using namespace tofg::nn;
  ps.zero_grad();
  {
    Tape t;
    const Var l = loss(t, ps);
    t.backward(l, ps);
  }
  auto eval = [&]() {
    Tape t;
    return t.value(loss(t, ps))[0];
  };
  Result r;
  for (std::size_t p = 0; p < ps.size(); ++p) {
    Param& param = ps.at(p);
    for (std::size_t k = 0; k < param.value.size(); ++k) {
      const double orig = param.value[k];
      param.value[k] = orig + step;
      const double up = eval();
      param.value[k] = orig - step;
      const double down = eval();
      param.value[k] = orig;
      const double numeric = (up - down) / (2.0 * step);
      const double analytic = param.grad[k];
      const double err = std::abs(analytic - numeric);
      const double scale = std::max(std::abs(analytic), std::abs(numeric));
      ++r.checked;
      if (err > std::max(rel_tol * scale, abs_floor)) {
        ++r.failed;
      }
      const double rel = scale > 0 ? err / scale : 0.0;
      if (err > abs_floor && rel > r.worst_rel) {
        r.worst_rel = rel;
        r.worst_param = ps.names()[p] + "[" + std::to_string(k) + "]";
      }
    }
  }
  return r;
}

}  // namespace gradcheck

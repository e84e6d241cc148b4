#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "fgst/tensor.hpp"

namespace fgst {

// Adam moment buffers aligned index-for-index with a fixed parameter list.
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  void init(const std::vector<TensorPtr>& params) {
    step = 0;
    m.clear();
    v.clear();
    for (const auto& p : params) {
      m.emplace_back(p->numel(), 0.0);
      v.emplace_back(p->numel(), 0.0);
    }
  }
};

// Bias-corrected Adam update. A parameter with no gradient buffer contributes
// zero gradient. Any non-finite gradient rejects the whole step: no parameter
// or moment is touched, and the offending entry is reported through err.
inline bool adam_step(const std::vector<TensorPtr>& params, AdamState& st, double lr,
                      std::string* err = nullptr) {
  if (st.m.size() != params.size() || st.v.size() != params.size())
    throw std::invalid_argument("adam_step: state not initialized for this parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& g = params[i]->grad;
    if (g.empty()) continue;
    if (g.size() != params[i]->data.size())
      throw std::invalid_argument("adam_step: gradient length mismatch");
    for (std::size_t k = 0; k < g.size(); ++k)
      if (!std::isfinite(g[k])) {
        if (err)
          *err = "non-finite gradient in parameter " + std::to_string(i) + " element " +
                 std::to_string(k);
        return false;
      }
  }
  st.step += 1;
  double t = static_cast<double>(st.step);
  double c1 = 1.0 - std::pow(st.beta1, t);
  double c2 = 1.0 - std::pow(st.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    auto& m = st.m[i];
    auto& v = st.v[i];
    for (std::size_t k = 0; k < p.data.size(); ++k) {
      double g = p.grad.empty() ? 0.0 : p.grad[k];
      m[k] = st.beta1 * m[k] + (1.0 - st.beta1) * g;
      v[k] = st.beta2 * v[k] + (1.0 - st.beta2) * g * g;
      double mh = m[k] / c1;
      double vh = v[k] / c2;
      p.data[k] -= lr * mh / (std::sqrt(vh) + st.eps);
    }
  }
  return true;
}

}  // namespace fgst

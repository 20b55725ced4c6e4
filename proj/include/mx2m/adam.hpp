// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "mx2m/tensor.hpp"

namespace mx2m {

struct AdamState {
  int64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double lr = 1e-3;
  std::vector<Tensor> m;
  std::vector<Tensor> v;

  void init(std::span<const Tensor* const> params) {
    m.clear();
    v.clear();
    m.reserve(params.size());
    v.reserve(params.size());
    for (const Tensor* p : params) {
      m.push_back(Tensor::zeros(p->shape));
      v.push_back(Tensor::zeros(p->shape));
    }
    step = 0;
  }
};

// One bias-corrected Adam update over all parameters.
inline void adam_step(std::span<Tensor* const> params, std::span<const Tensor* const> grads,
                      AdamState& st) {
  if (params.size() != grads.size() || params.size() != st.m.size())
    throw ShapeError("adam_step: parameter/gradient/state counts differ");
  st.step += 1;
  const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = *grads[i];
    Tensor& m = st.m[i];
    Tensor& v = st.v[i];
    if (!p.same_shape(g) || !p.same_shape(m))
      throw ShapeError("adam_step: shape mismatch at parameter " + std::to_string(i) + ": " +
                       shape_str(p.shape) + " vs gradient " + shape_str(g.shape));
    for (size_t j = 0; j < p.data.size(); ++j) {
      m.data[j] = st.beta1 * m.data[j] + (1.0 - st.beta1) * g.data[j];
      v.data[j] = st.beta2 * v.data[j] + (1.0 - st.beta2) * g.data[j] * g.data[j];
      const double mhat = m.data[j] / bc1;
      const double vhat = v.data[j] / bc2;
      p.data[j] -= st.lr * mhat / (std::sqrt(vhat) + st.eps);
    }
  }
}

}  // namespace mx2m

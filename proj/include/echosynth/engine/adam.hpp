#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "echosynth/engine/tensor.hpp"

namespace echosynth::engine {

// Per-parameter Adam moments. m and v match the parameter's numel and are
// sized on the first step.
struct AdamState {
  std::int64_t step = 0;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  std::vector<float> m, v;
};

// One bias-corrected Adam update in place. A parameter with no recorded
// gradient is left unchanged (treated as zero gradient, which moves nothing
// on the first step and only decays moments afterwards).
inline void adam_step(Tensor& param, AdamState& st, float lr, const std::string& name = "param") {
  if (!(st.beta1 > 0.0f && st.beta1 < 1.0f && st.beta2 > 0.0f && st.beta2 < 1.0f))
    throw std::invalid_argument("adam_step: betas must lie in (0, 1)");
  if (st.eps <= 0.0f) throw std::invalid_argument("adam_step: eps must be > 0");
  const std::int64_t n = param.numel();
  if (st.m.empty()) {
    st.m.assign(static_cast<std::size_t>(n), 0.0f);
    st.v.assign(static_cast<std::size_t>(n), 0.0f);
  }
  if (static_cast<std::int64_t>(st.m.size()) != n)
    throw std::invalid_argument("adam_step: state size mismatch for " + name);

  const float* g = param.has_grad() ? param.grad_vec().data() : nullptr;
  if (g) {
    for (std::int64_t i = 0; i < n; ++i)
      if (!std::isfinite(g[i]))
        throw std::runtime_error("adam_step: non-finite gradient in parameter '" + name + "'");
  }

  st.step += 1;
  const double bc1 = 1.0 - std::pow(static_cast<double>(st.beta1), static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(static_cast<double>(st.beta2), static_cast<double>(st.step));
  float* p = param.data();
  for (std::int64_t i = 0; i < n; ++i) {
    const float gi = g ? g[i] : 0.0f;
    st.m[i] = st.beta1 * st.m[i] + (1.0f - st.beta1) * gi;
    st.v[i] = st.beta2 * st.v[i] + (1.0f - st.beta2) * gi * gi;
    const float mhat = static_cast<float>(st.m[i] / bc1);
    const float vhat = static_cast<float>(st.v[i] / bc2);
    p[i] -= lr * mhat / (std::sqrt(vhat) + st.eps);
  }
}

// Convenience wrapper driving one AdamState per named parameter.
class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<std::pair<std::string, Tensor>> params, float lr,
                float beta1 = 0.9f, float beta2 = 0.999f, float eps = 1e-8f)
      : params_(std::move(params)), lr_(lr) {
    states_.resize(params_.size());
    for (auto& st : states_) {
      st.beta1 = beta1;
      st.beta2 = beta2;
      st.eps = eps;
    }
  }

  void step() {
    for (std::size_t i = 0; i < params_.size(); ++i)
      adam_step(params_[i].second, states_[i], lr_, params_[i].first);
  }

  void zero_grad() {
    for (auto& [name, p] : params_) p.zero_grad();
  }

  float lr() const { return lr_; }
  void set_lr(float lr) { lr_ = lr; }

 private:
  std::vector<std::pair<std::string, Tensor>> params_;
  std::vector<AdamState> states_;
  float lr_;
};

}  // namespace echosynth::engine

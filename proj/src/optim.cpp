#include "adapool/optim.hpp"

#include <cmath>

#include "adapool/error.hpp"

namespace adapool {

AdamState::Moments& AdamState::moments_for(Tensor& param) {
  auto [it, inserted] = moments_.try_emplace(param.id());
  if (inserted) {
    it->second.param = param;
    it->second.m.assign(param.numel(), 0.0f);
    it->second.v.assign(param.numel(), 0.0f);
  }
  return it->second;
}

void adam_step(std::span<Tensor> params, AdamState& state) {
  for (const Tensor& p : params) {
    if (!p.has_grad())
      throw ContractError("adam_step: parameter " + shape_str(p.shape()) + " has no gradient");
  }
  const AdamOptions& o = state.options_;
  for (Tensor& p : params) {
    auto& mo = state.moments_for(p);
    mo.t += 1;
    const double c1 = 1.0 - std::pow(static_cast<double>(o.beta1), static_cast<double>(mo.t));
    const double c2 = 1.0 - std::pow(static_cast<double>(o.beta2), static_cast<double>(mo.t));
    auto w = p.data();
    auto g = p.grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i];
      const double m = o.beta1 * static_cast<double>(mo.m[i]) + (1.0 - o.beta1) * gi;
      const double v = o.beta2 * static_cast<double>(mo.v[i]) + (1.0 - o.beta2) * gi * gi;
      mo.m[i] = static_cast<float>(m);
      mo.v[i] = static_cast<float>(v);
      const double update = o.lr * (m / c1) / (std::sqrt(v / c2) + o.epsilon);
      w[i] = static_cast<float>(static_cast<double>(w[i]) - update);
    }
    p.clear_grad();
  }
  state.steps_ += 1;
}

}  // namespace adapool

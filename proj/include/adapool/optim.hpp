#pragma once

#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "adapool/tensor.hpp"

namespace adapool {

struct AdamOptions {
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float epsilon = 1e-8f;
};

/// Adam moments, keyed by parameter storage. A parameter's moments are created
/// the first time it is stepped; each parameter keeps its own step count for
/// bias correction, so parameter sets may differ between calls.
class AdamState {
 public:
  explicit AdamState(AdamOptions options = {}) : options_(options) {}

  const AdamOptions& options() const { return options_; }
  void set_lr(float lr) { options_.lr = lr; }
  /// Number of adam_step calls made with this state.
  std::uint64_t step_count() const { return steps_; }

 private:
  friend void adam_step(std::span<Tensor> params, AdamState& state);

  struct Moments {
    Tensor param;  // keeps the storage (and therefore the key) alive
    std::vector<float> m;
    std::vector<float> v;
    std::uint64_t t = 0;
  };
  Moments& moments_for(Tensor& param);

  AdamOptions options_;
  std::uint64_t steps_ = 0;
  std::unordered_map<const void*, Moments> moments_;
};

/// One bias-corrected Adam update in place, then clears the gradients.
/// Throws ContractError if any parameter has no gradient.
void adam_step(std::span<Tensor> params, AdamState& state);

}  // namespace adapool

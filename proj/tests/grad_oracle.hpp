#pragma once

// Central finite-difference oracle for autodiff tests. It only evaluates the
// loss on non-recording tapes, so it shares no code path with backward().

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include "adapool/rng.hpp"
#include "adapool/tensor.hpp"

namespace adapool::testing {

struct GradReport {
  double max_rel = 0.0;
  double median_rel = 0.0;
  std::size_t checked = 0;
};

using LossFn = std::function<Tensor(Tape&)>;

/// |a - n| / max(|a|, |n|, floor). The floor is a small fraction of the
/// largest gradient in the same tensor: below it, float32 rounding of the
/// differenced loss at h = 1e-3 is of the same size as the derivative itself.
inline double relative_error(double analytic, double numeric, double floor = 0.0) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return denom == 0.0 ? 0.0 : std::abs(analytic - numeric) / denom;
}

inline constexpr double kRelativeFloor = 0.05;

inline double numeric_derivative(const LossFn& loss, Tensor& param, std::size_t i, float h) {
  auto w = param.data();
  const float saved = w[i];
  const float hi = saved + h;
  const float lo = saved - h;
  w[i] = hi;
  Tape plus = Tape::no_grad();
  const double up = loss(plus).item();
  w[i] = lo;
  Tape minus = Tape::no_grad();
  const double down = loss(minus).item();
  w[i] = saved;
  return (up - down) / (static_cast<double>(hi) - static_cast<double>(lo));
}

/// Central differences at h and 2h combined to cancel the h^2 truncation
/// term, which allows steps large enough to rise above float32 rounding of
/// the loss.
inline double richardson_derivative(const LossFn& loss, Tensor& param, std::size_t i, float h) {
  return (4.0 * numeric_derivative(loss, param, i, h) -
          numeric_derivative(loss, param, i, 2.0f * h)) / 3.0;
}

struct GradCheck {
  /// Coordinates per tensor with the largest analytic gradient; 0 checks all.
  std::size_t top = 0;
  /// Further coordinates per tensor drawn uniformly from the rest.
  std::size_t random = 0;
  float h = 1e-3f;
  bool richardson = false;
  std::uint64_t seed = 0;
};

/// Compares backward() against finite differences on the coordinates selected
/// by `opts`.
inline GradReport check_gradients(const LossFn& loss, std::vector<Tensor> params,
                                  const GradCheck& opts = {}) {
  Rng pick(opts.seed);
  for (Tensor& p : params) {
    p.clear_grad();
    p.set_requires_grad(true);
  }
  Tape tape;
  Tensor l = loss(tape);
  tape.backward(l);
  std::vector<std::vector<float>> analytic;
  for (Tensor& p : params) {
    analytic.emplace_back(p.grad().begin(), p.grad().end());
    p.clear_grad();
  }

  std::vector<double> errors;
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& g = analytic[k];
    std::vector<std::size_t> coords(g.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (opts.top != 0 && opts.top < coords.size()) {
      const auto top = static_cast<std::ptrdiff_t>(opts.top);
      std::partial_sort(coords.begin(), coords.begin() + top, coords.end(),
                        [&](std::size_t a, std::size_t b) { return std::abs(g[a]) > std::abs(g[b]); });
      std::vector<std::size_t> rest(coords.begin() + top, coords.end());
      coords.resize(opts.top);
      for (std::size_t j : pick.sample_without_replacement(rest.size(),
                                                           std::min(opts.random, rest.size())))
        coords.push_back(rest[j]);
    }
    double largest = 0.0;
    for (float v : g) largest = std::max(largest, static_cast<double>(std::abs(v)));
    for (std::size_t i : coords) {
      const double numeric = opts.richardson ? richardson_derivative(loss, params[k], i, opts.h)
                                             : numeric_derivative(loss, params[k], i, opts.h);
      errors.push_back(relative_error(g[i], numeric, kRelativeFloor * largest));
    }
  }

  GradReport r;
  r.checked = errors.size();
  if (errors.empty()) return r;
  std::sort(errors.begin(), errors.end());
  r.max_rel = errors.back();
  r.median_rel = errors[errors.size() / 2];
  return r;
}

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double stddev = 1.0) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (float& v : t.data()) v = static_cast<float>(rng.normal() * stddev);
  return t;
}

/// Linear readout 4 * sum_k u_k (x_k - c_k) with random u ~ N(0, 0.01^2),
/// written as the difference of two squared distances to c -/+ u. It turns any
/// tensor into a scalar that is near zero at the centre c, so float32
/// rounding of the differenced loss stays far below the signal, and being
/// linear it adds no curvature to the finite-difference truncation error.
struct Readout {
  Readout(const Tensor& centre, std::uint64_t seed) : ones(centre.numel(), 1.0f) {
    const Tensor u = random_tensor(centre.shape(), seed, 1e-2);
    below.resize(centre.numel());
    above.resize(centre.numel());
    for (std::size_t i = 0; i < below.size(); ++i) {
      below[i] = centre.data()[i] - u.data()[i];
      above[i] = centre.data()[i] + u.data()[i];
    }
  }
  Tensor operator()(Tape& tape, const Tensor& x) const {
    return add(tape, weighted_sq_distance(tape, x, below, ones),
               scale(tape, weighted_sq_distance(tape, x, above, ones), -1.0f));
  }
  std::vector<float> below;
  std::vector<float> above;
  std::vector<float> ones;
};

/// Value of `f` on a non-recording tape.
template <class F>
Tensor eval(F&& f) {
  Tape tape = Tape::no_grad();
  return f(tape);
}

}  // namespace adapool::testing

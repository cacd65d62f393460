#pragma once

// Central finite-difference oracle for the autodiff tape. Test-only: it uses
// nothing but forward evaluation, so it is independent of every backward_fn.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "cigli/nn/tensor.hpp"

namespace cigli::testing {

struct GradCheckResult {
  double max_rel_error = 0.0;  // worst norm-wise relative error over inputs
  bool all_finite = true;
};

// Norm-wise relative error ||a - n|| / max(||a||, ||n||, floor).
inline double relative_error(const std::vector<double>& a, const std::vector<double>& n, double floor = 1e-10) {
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - n[i]) * (a[i] - n[i]);
    na += a[i] * a[i];
    nn += n[i] * n[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), floor});
}

// f must rebuild its graph from the current values of `inputs` on every call.
inline GradCheckResult gradcheck(const std::function<nn::Tensor()>& f, std::vector<nn::Tensor> inputs,
                                 double h = 1e-5) {
  GradCheckResult result;
  for (auto& t : inputs) t.zero_grad();
  nn::Tensor out = f();
  out.backward();
  for (auto& t : inputs) {
    std::vector<double> analytic(t.size(), 0.0);
    if (!t.grad().empty()) analytic.assign(t.grad().begin(), t.grad().end());
    std::vector<double> numeric(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double orig = t.data()[i];
      double plus, minus;
      {
        nn::NoGradGuard guard;
        t.data()[i] = orig + h;
        plus = f().item();
        t.data()[i] = orig - h;
        minus = f().item();
      }
      t.data()[i] = orig;
      numeric[i] = (plus - minus) / (2.0 * h);
      if (!std::isfinite(numeric[i]) || !std::isfinite(analytic[i])) result.all_finite = false;
    }
    result.max_rel_error = std::max(result.max_rel_error, relative_error(analytic, numeric));
  }
  return result;
}

inline nn::Tensor random_tensor(nn::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0,
                                bool requires_grad = true) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(nn::numel(shape));
  for (double& x : v) x = dist(rng);
  return nn::Tensor::from(std::move(shape), std::move(v), requires_grad);
}

// Weighted sum with fixed random weights, so every output element matters.
inline nn::Tensor weighted_sum(const nn::Tensor& t, std::uint64_t seed);

}  // namespace cigli::testing

#include "cigli/nn/ops.hpp"

namespace cigli::testing {
inline nn::Tensor weighted_sum(const nn::Tensor& t, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  nn::Tensor w = random_tensor(t.shape(), rng, -1.0, 1.0, false);
  return nn::sum(nn::mul(t, w));
}
}  // namespace cigli::testing

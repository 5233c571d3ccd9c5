#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "ssmpose/init.hpp"
#include "ssmpose/ops.hpp"
#include "ssmpose/tensor.hpp"

namespace testutil {

using ssmpose::Shape;
using ssmpose::Tensor;

template <typename T = double>
Tensor<T> random_tensor(ssmpose::Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0,
                        bool requires_grad = false) {
  const auto v = ssmpose::uniform(rng, ssmpose::numel(shape), lo, hi);
  return Tensor<T>::from(std::move(shape), std::vector<T>(v.begin(), v.end()), requires_grad);
}

// Norm-wise relative error ||a - b|| / max(||a||, ||b||), 0 when both vanish.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0, na = 0, nb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double scale = std::sqrt(std::max(na, nb));
  return scale == 0 ? 0.0 : std::sqrt(diff) / scale;
}

using Fn = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

// Compares reverse-mode gradients of sum(f(inputs) * R), R a fixed random
// projection, with central differences. `probes` limits how many elements
// of each input are perturbed (0 = all). Returns the worst per-input error.
// `five_point` switches to the fourth-order stencil, which tolerates a wider
// step and so resolves gradients far smaller than the objective.
inline double grad_check(const Fn& f, std::vector<Tensor<double>> inputs, ssmpose::Rng& rng, int64_t probes = 0,
                         double eps = 1e-6, bool five_point = false) {
  Tensor<double> probe_out;
  {
    ssmpose::NoGradGuard g;
    probe_out = f(inputs);
  }
  const Tensor<double> proj = random_tensor(rng, probe_out.shape());
  auto objective = [&](const std::vector<Tensor<double>>& in) {
    return ssmpose::sum(ssmpose::mul(f(in), proj));
  };
  for (auto& t : inputs) t.set_requires_grad(true);
  Tensor<double> loss = objective(inputs);
  loss.backward();

  double worst = 0;
  for (size_t i = 0; i < inputs.size(); ++i) {
    const int64_t n = inputs[i].numel();
    std::vector<int64_t> idx;
    if (probes == 0 || probes >= n) {
      for (int64_t j = 0; j < n; ++j) idx.push_back(j);
    } else {
      std::uniform_int_distribution<int64_t> pick(0, n - 1);
      for (int64_t j = 0; j < probes; ++j) idx.push_back(pick(rng));
    }
    std::vector<double> analytic, numeric;
    const auto grad = inputs[i].has_grad() ? inputs[i].grad() : std::span<const double>();
    for (int64_t j : idx) {
      analytic.push_back(grad.empty() ? 0.0 : grad[j]);
      auto data = inputs[i].mutable_data();
      const double keep = data[j];
      ssmpose::NoGradGuard g;
      auto at = [&](double h) {
        data[j] = keep + h;
        return objective(inputs).item();
      };
      if (five_point) {
        numeric.push_back((8 * (at(eps) - at(-eps)) - (at(2 * eps) - at(-2 * eps))) / (12 * eps));
      } else {
        numeric.push_back((at(eps) - at(-eps)) / (2 * eps));
      }
      data[j] = keep;
    }
    worst = std::max(worst, relative_error(analytic, numeric));
  }
  return worst;
}

}  // namespace testutil

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ssmpose/tensor.hpp"

namespace ssmpose {

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> tensor;
};

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct OptimizerState {
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;
  int64_t step = 0;
};

template <typename T>
OptimizerState<T> make_optimizer_state(const std::vector<Parameter<T>>& params);

// One bias-corrected Adam update. Throws std::logic_error if a parameter has
// no gradient, or if the state does not match the parameter list.
template <typename T>
void adam_step(std::vector<Parameter<T>>& params, OptimizerState<T>& state,
               const AdamOptions& opts);

template <typename T>
void zero_grad(std::vector<Parameter<T>>& params);

// Learning rate after piecewise-constant decay: `gamma` is applied once for
// each milestone (a fraction of the total budget) that `progress` has reached.
double step_schedule_lr(double base_lr, double progress, const std::vector<double>& milestones,
                        double gamma = 0.1);

}  // namespace ssmpose

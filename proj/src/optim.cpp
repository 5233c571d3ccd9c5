#include "ssmpose/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace ssmpose {

template <typename T>
OptimizerState<T> make_optimizer_state(const std::vector<Parameter<T>>& params) {
  OptimizerState<T> state;
  for (const auto& p : params) {
    state.first_moment.emplace_back(static_cast<size_t>(p.tensor.numel()), T(0));
    state.second_moment.emplace_back(static_cast<size_t>(p.tensor.numel()), T(0));
  }
  return state;
}

template <typename T>
void adam_step(std::vector<Parameter<T>>& params, OptimizerState<T>& state,
               const AdamOptions& opts) {
  if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size()) {
    throw std::logic_error("adam_step: optimizer state does not match parameter list");
  }
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) throw std::logic_error("adam_step: missing gradient for " + p.name);
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(opts.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(opts.beta2, static_cast<double>(state.step));
  for (size_t k = 0; k < params.size(); ++k) {
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    auto data = params[k].tensor.mutable_data();
    auto grad = params[k].tensor.grad();
    if (m.size() != data.size() || v.size() != data.size()) {
      throw std::logic_error("adam_step: moment buffer shape mismatch for " + params[k].name);
    }
    for (size_t i = 0; i < data.size(); ++i) {
      const double g = grad[i];
      const double mi = opts.beta1 * m[i] + (1.0 - opts.beta1) * g;
      const double vi = opts.beta2 * v[i] + (1.0 - opts.beta2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double m_hat = mi / bc1;
      const double v_hat = vi / bc2;
      data[i] = static_cast<T>(data[i] - opts.lr * m_hat / (std::sqrt(v_hat) + opts.eps));
    }
    detail::check_finite<T>("adam_step", data);
  }
}

template <typename T>
void zero_grad(std::vector<Parameter<T>>& params) {
  for (auto& p : params) p.tensor.zero_grad();
}

double step_schedule_lr(double base_lr, double progress, const std::vector<double>& milestones,
                        double gamma) {
  double lr = base_lr;
  for (double m : milestones) {
    if (progress >= m) lr *= gamma;
  }
  return lr;
}

template OptimizerState<float> make_optimizer_state<float>(const std::vector<Parameter<float>>&);
template OptimizerState<double> make_optimizer_state<double>(const std::vector<Parameter<double>>&);
template void adam_step<float>(std::vector<Parameter<float>>&, OptimizerState<float>&,
                               const AdamOptions&);
template void adam_step<double>(std::vector<Parameter<double>>&, OptimizerState<double>&,
                                const AdamOptions&);
template void zero_grad<float>(std::vector<Parameter<float>>&);
template void zero_grad<double>(std::vector<Parameter<double>>&);

}  // namespace ssmpose

#include "ssmpose/init.hpp"

#include <cmath>
#include <stdexcept>

namespace ssmpose {

std::vector<double> truncated_normal(Rng& rng, int64_t count, double std) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> out(static_cast<size_t>(count));
  for (auto& v : out) {
    double z = dist(rng);
    while (std::abs(z) > 2.0) z = dist(rng);
    v = z * std;
  }
  return out;
}

std::vector<double> uniform(Rng& rng, int64_t count, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> out(static_cast<size_t>(count));
  for (auto& v : out) v = dist(rng);
  return out;
}

template <typename T>
Tensor<T> register_param(std::vector<Parameter<T>>& registry, const std::string& name, Shape shape,
                         const std::vector<double>& values) {
  for (const auto& p : registry) {
    if (p.name == name) throw std::logic_error("duplicate parameter name: " + name);
  }
  auto t = Tensor<T>::from(std::move(shape), std::vector<T>(values.begin(), values.end()), true);
  registry.push_back({name, t});
  return t;
}

template <typename T>
Tensor<T> register_param(std::vector<Parameter<T>>& registry, const std::string& name, Shape shape,
                         double fill) {
  const int64_t n = numel(shape);
  return register_param<T>(registry, name, std::move(shape),
                           std::vector<double>(static_cast<size_t>(n), fill));
}

template Tensor<float> register_param<float>(std::vector<Parameter<float>>&, const std::string&,
                                             Shape, const std::vector<double>&);
template Tensor<double> register_param<double>(std::vector<Parameter<double>>&,
                                               const std::string&, Shape,
                                               const std::vector<double>&);
template Tensor<float> register_param<float>(std::vector<Parameter<float>>&, const std::string&,
                                             Shape, double);
template Tensor<double> register_param<double>(std::vector<Parameter<double>>&,
                                               const std::string&, Shape, double);

}  // namespace ssmpose

#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "ssmpose/optim.hpp"
#include "ssmpose/tensor.hpp"

namespace ssmpose {

using Rng = std::mt19937_64;

// Normal(0, std) resampled until inside +-2 std.
std::vector<double> truncated_normal(Rng& rng, int64_t count, double std);
std::vector<double> uniform(Rng& rng, int64_t count, double lo, double hi);

// Creates a leaf parameter and appends it to `registry` under `name`.
template <typename T>
Tensor<T> register_param(std::vector<Parameter<T>>& registry, const std::string& name, Shape shape,
                         const std::vector<double>& values);

template <typename T>
Tensor<T> register_param(std::vector<Parameter<T>>& registry, const std::string& name, Shape shape,
                         double fill);

}  // namespace ssmpose

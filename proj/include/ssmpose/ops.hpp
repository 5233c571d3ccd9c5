#pragma once

// Differentiable operators over Tensor<T>. Every op validates shapes, checks
// its output for non-finite values, and records a backward closure when the
// tape is active.

#include <array>
#include <optional>
#include <type_traits>
#include <vector>

#include "ssmpose/tensor.hpp"

namespace ssmpose {

using IntPair = std::array<int64_t, 2>;

struct Conv2dOptions {
  IntPair stride{1, 1};
  IntPair padding{0, 0};
  int64_t groups = 1;
};

// input [N,C,H,W], weight [Co, C/groups, kh, kw], bias [Co].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight,
                 const std::optional<std::type_identity_t<Tensor<T>>>& bias, const Conv2dOptions& opts = {});

struct ConvTranspose2dOptions {
  IntPair stride{1, 1};
  IntPair padding{0, 0};
};

// input [N,C,H,W], weight [C, Co, kh, kw], bias [Co].
// Output extent is (H-1)*stride - 2*pad + kh.
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& input, const Tensor<T>& weight,
                           const std::optional<std::type_identity_t<Tensor<T>>>& bias,
                           const ConvTranspose2dOptions& opts = {});

// Affine map over the last axis. With a 2-D weight [Dout, Din] the input is
// [..., Din]. With a grouped 3-D weight [G, Dout, Din] the input is
// [..., G, L, Din] and group g uses its own weight; bias is then [G, Dout].
template <typename T>
Tensor<T> linear(const Tensor<T>& input, const Tensor<T>& weight,
                 const std::optional<std::type_identity_t<Tensor<T>>>& bias = std::nullopt);

// Normalizes each vector along the last axis (biased variance).
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                     double eps = 1e-5);

enum class UnaryKind { kSilu, kSigmoid, kSoftplus, kExp };
enum class BinaryKind { kAdd, kSub, kMul };

template <typename T>
Tensor<T> unary(UnaryKind kind, const Tensor<T>& x);

// Numpy-style broadcasting over trailing-aligned axes.
template <typename T>
Tensor<T> binary(BinaryKind kind, const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> silu(const Tensor<T>& x) { return unary(UnaryKind::kSilu, x); }
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) { return unary(UnaryKind::kSigmoid, x); }
template <typename T>
Tensor<T> softplus(const Tensor<T>& x) { return unary(UnaryKind::kSoftplus, x); }
template <typename T>
Tensor<T> exp(const Tensor<T>& x) { return unary(UnaryKind::kExp, x); }
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) { return binary(BinaryKind::kAdd, a, b); }
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) { return binary(BinaryKind::kSub, a, b); }
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) { return binary(BinaryKind::kMul, a, b); }

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& axes);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);

template <typename T>
Tensor<T> mean(const Tensor<T>& x);

// [N,C,H,W] <-> [N,H,W,C]
template <typename T>
Tensor<T> to_channels_last(const Tensor<T>& x) { return permute(x, {0, 2, 3, 1}); }
template <typename T>
Tensor<T> to_channels_first(const Tensor<T>& x) { return permute(x, {0, 3, 1, 2}); }

// Scalar reference versions used by the unary op, exposed for tests.
double softplus_ref(double x);
double sigmoid_ref(double x);

}  // namespace ssmpose

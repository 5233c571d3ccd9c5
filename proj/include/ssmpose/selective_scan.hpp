#pragma once

// Selective scan (S6) and the four-direction 2D scan built on it.
//
// Recurrence per channel d and state n, with h_0 = 0:
//   h_t = Abar_t * h_{t-1} + Bbar_t * u_t
//   y_t = <C_t, h_t> + d_skip * u_t
// where Abar_t = exp(delta_t * A) and Bbar_t = delta_t * B_t.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ssmpose/init.hpp"
#include "ssmpose/optim.hpp"
#include "ssmpose/tensor.hpp"

namespace ssmpose {

enum class ScanDirection { kRowForward, kRowBackward, kColumnForward, kColumnBackward };

inline constexpr std::array<ScanDirection, 4> kScanDirections = {
    ScanDirection::kRowForward, ScanDirection::kRowBackward, ScanDirection::kColumnForward,
    ScanDirection::kColumnBackward};

const char* to_string(ScanDirection dir);

// Row-major grid index visited at sequence position t.
int64_t scan_position(ScanDirection dir, int64_t t, int64_t height, int64_t width);
std::vector<int64_t> scan_order(ScanDirection dir, int64_t height, int64_t width);

// ------------------------------------------------------- reference kernels
// These take materialized tensors and never record on the tape.

template <typename T>
struct Discretized {
  Tensor<T> abar;  // [L, D, S]
  Tensor<T> bbar;  // [L, D, S]
};

// delta [L,D] (strictly positive), a [D,S], b [L,S].
template <typename T>
Discretized<T> discretize(const Tensor<T>& delta, const Tensor<T>& a, const Tensor<T>& b);

// u [L,D], abar/bbar [L,D,S], c [L,S], d_skip [D] -> y [L,D].
template <typename T>
Tensor<T> scan_sequential(const Tensor<T>& u, const Tensor<T>& abar, const Tensor<T>& bbar,
                          const Tensor<T>& c, const Tensor<T>& d_skip);

// Same contract as scan_sequential. The sequence is cut into chunks; each
// chunk is scanned from a zero state while accumulating the product of its
// Abar terms, chunk boundary states are then carried forward through those
// products, and finally each chunk adds the carried-in contribution.
template <typename T>
Tensor<T> scan_chunked(const Tensor<T>& u, const Tensor<T>& abar, const Tensor<T>& bbar,
                       const Tensor<T>& c, const Tensor<T>& d_skip, int64_t chunk);

// ------------------------------------------------------ differentiable ops

struct SelectiveScanOptions {
  int64_t chunk = 0;  // 0 selects the sequential kernel
};

// Fused, differentiable selective scan over a batch of grouped sequences.
//   u, delta: [N, G, L, D]   b, c: [N, G, L, S]
//   a_log: [G, D, S] with A = -exp(a_log)   d_skip: [G, D]
// Discretization happens on the fly. Returns y [N, G, L, D].
template <typename T>
Tensor<T> selective_scan(const Tensor<T>& u, const Tensor<T>& delta, const Tensor<T>& a_log,
                         const Tensor<T>& b, const Tensor<T>& c, const Tensor<T>& d_skip,
                         const SelectiveScanOptions& opts = {});

// [N, H, W, C] -> [N, 4, H*W, C], one sequence per ScanDirection.
template <typename T>
Tensor<T> scan_expand(const Tensor<T>& grid);

enum class MergeRule { kSum, kMean };

// [N, 4, H*W, C] -> [N, H, W, C]; each direction is returned to grid order
// and the four are combined by `rule`.
template <typename T>
Tensor<T> scan_merge(const Tensor<T>& sequences, int64_t height, int64_t width,
                     MergeRule rule = MergeRule::kSum);

// --------------------------------------------------------------- SS2D block

struct SsmConfig {
  int64_t state_size = 16;
  int64_t expand = 1;
  int64_t dt_rank = 0;  // 0 means ceil(inner / 16)
  double dt_min = 1e-3;
  double dt_max = 0.1;
  int64_t chunk = 0;
  MergeRule merge = MergeRule::kSum;

  int64_t inner(int64_t dim) const { return dim * expand; }
  int64_t rank_for(int64_t dim) const {
    return dt_rank > 0 ? dt_rank : (inner(dim) + 15) / 16;
  }
};

// Gated visual state-space block on channel-last tokens [N, H, W, C]:
//   x + out_proj(LN(scan4(silu(dwconv(in_x(LN(x)))))) * silu(in_z(LN(x))))
// The output projection starts at zero so a fresh block is the identity.
template <typename T>
class SS2DBlock {
 public:
  SS2DBlock() = default;
  SS2DBlock(const std::string& prefix, int64_t dim, const SsmConfig& cfg, Rng& rng,
            std::vector<Parameter<T>>& registry);

  Tensor<T> forward(const Tensor<T>& x) const;

  // Four-direction scan on the already convolved branch [N, H, W, Di];
  // returns the per-direction outputs [N, 4, H*W, Di] before merging.
  Tensor<T> scan_sequences(const Tensor<T>& xc) const;

  int64_t dim() const { return dim_; }
  int64_t inner() const { return inner_; }

  // Multiply-accumulate count for one sample on an h x w grid.
  int64_t macs(int64_t h, int64_t w) const;

  Tensor<T> norm_gamma, norm_beta;
  Tensor<T> in_x, in_z;             // [Di, C]
  Tensor<T> conv_w, conv_b;         // [Di, 1, 3, 3], [Di]
  Tensor<T> x_dt, x_b, x_c;         // [4, R, Di], [4, S, Di], [4, S, Di]
  Tensor<T> dt_w, dt_b;             // [4, Di, R], [4, Di]
  Tensor<T> a_log, d_skip;          // [4, Di, S], [4, Di]
  Tensor<T> out_norm_gamma, out_norm_beta;
  Tensor<T> out_proj;               // [C, Di]

 private:
  int64_t dim_ = 0;
  int64_t inner_ = 0;
  int64_t rank_ = 0;
  SsmConfig cfg_;
};

}  // namespace ssmpose

#include "ssmpose/selective_scan.hpp"

#include <algorithm>
#include <cmath>

#include "ssmpose/ops.hpp"

namespace ssmpose {

const char* to_string(ScanDirection dir) {
  switch (dir) {
    case ScanDirection::kRowForward: return "row-forward";
    case ScanDirection::kRowBackward: return "row-backward";
    case ScanDirection::kColumnForward: return "column-forward";
    case ScanDirection::kColumnBackward: return "column-backward";
  }
  return "?";
}

int64_t scan_position(ScanDirection dir, int64_t t, int64_t height, int64_t width) {
  const int64_t len = height * width;
  switch (dir) {
    case ScanDirection::kRowForward:
      return t;
    case ScanDirection::kRowBackward:
      return len - 1 - t;
    case ScanDirection::kColumnForward:
      return (t % height) * width + t / height;
    case ScanDirection::kColumnBackward: {
      const int64_t r = len - 1 - t;
      return (r % height) * width + r / height;
    }
  }
  return t;
}

std::vector<int64_t> scan_order(ScanDirection dir, int64_t height, int64_t width) {
  std::vector<int64_t> order(static_cast<size_t>(height * width));
  for (int64_t t = 0; t < height * width; ++t) order[t] = scan_position(dir, t, height, width);
  return order;
}

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

// Sequential recurrence for one sequence. coef(t, d, n, a, bu) supplies the
// discretized transition and input term for state (d, n) at step t.
// Optionally records every state h_t into `states` ([L, D, S]).
template <typename T, typename Coef>
void sequential_kernel(int64_t len, int64_t dim, int64_t nstate, Coef&& coef, const T* c,
                       const T* u, const T* d_skip, T* y, T* states = nullptr) {
  std::vector<T> h(static_cast<size_t>(dim * nstate), T(0));
  for (int64_t t = 0; t < len; ++t) {
    const T* ct = c + t * nstate;
    for (int64_t d = 0; d < dim; ++d) {
      T* hd = h.data() + d * nstate;
      T acc = 0;
      for (int64_t n = 0; n < nstate; ++n) {
        T a, bu;
        coef(t, d, n, a, bu);
        hd[n] = a * hd[n] + bu;
        acc += ct[n] * hd[n];
      }
      y[t * dim + d] = acc + d_skip[d] * u[t * dim + d];
    }
    if (states) std::copy(h.begin(), h.end(), states + t * dim * nstate);
  }
}

template <typename T, typename Coef>
void chunked_kernel(int64_t len, int64_t dim, int64_t nstate, int64_t chunk, Coef&& coef,
                    const T* c, const T* u, const T* d_skip, T* y) {
  const int64_t width = dim * nstate;
  const int64_t num_chunks = (len + chunk - 1) / chunk;
  // Per chunk: final local state (from zero) and the product of its Abar terms.
  std::vector<T> local_end(static_cast<size_t>(num_chunks * width));
  std::vector<T> transfer(static_cast<size_t>(num_chunks * width));

  // Phase 1: chunks are independent.
  for (int64_t k = 0; k < num_chunks; ++k) {
    const int64_t t0 = k * chunk, t1 = std::min(len, t0 + chunk);
    T* h = local_end.data() + k * width;
    T* p = transfer.data() + k * width;
    std::fill(h, h + width, T(0));
    std::fill(p, p + width, T(1));
    for (int64_t t = t0; t < t1; ++t) {
      const T* ct = c + t * nstate;
      for (int64_t d = 0; d < dim; ++d) {
        T acc = 0;
        for (int64_t n = 0; n < nstate; ++n) {
          T a, bu;
          coef(t, d, n, a, bu);
          const int64_t i = d * nstate + n;
          h[i] = a * h[i] + bu;
          p[i] *= a;
          acc += ct[n] * h[i];
        }
        y[t * dim + d] = acc + d_skip[d] * u[t * dim + d];
      }
    }
  }

  // Phase 2: carry boundary states; carry[k] is the state entering chunk k.
  std::vector<T> carry(static_cast<size_t>(num_chunks * width), T(0));
  for (int64_t k = 1; k < num_chunks; ++k) {
    const T* prev = carry.data() + (k - 1) * width;
    const T* h = local_end.data() + (k - 1) * width;
    const T* p = transfer.data() + (k - 1) * width;
    T* cur = carry.data() + k * width;
    for (int64_t i = 0; i < width; ++i) cur[i] = h[i] + p[i] * prev[i];
  }

  // Phase 3: add <C_t, prod(Abar up to t) * carry> inside each chunk.
  std::vector<T> prefix(static_cast<size_t>(width));
  for (int64_t k = 1; k < num_chunks; ++k) {
    const int64_t t0 = k * chunk, t1 = std::min(len, t0 + chunk);
    const T* in = carry.data() + k * width;
    std::fill(prefix.begin(), prefix.end(), T(1));
    for (int64_t t = t0; t < t1; ++t) {
      const T* ct = c + t * nstate;
      for (int64_t d = 0; d < dim; ++d) {
        T acc = 0;
        for (int64_t n = 0; n < nstate; ++n) {
          T a, bu;
          coef(t, d, n, a, bu);
          const int64_t i = d * nstate + n;
          prefix[i] *= a;
          acc += ct[n] * prefix[i] * in[i];
        }
        y[t * dim + d] += acc;
      }
    }
  }
}

template <typename T>
void check_reference_inputs(const Tensor<T>& u, const Tensor<T>& abar, const Tensor<T>& bbar,
                            const Tensor<T>& c, const Tensor<T>& d_skip) {
  require(u.rank() == 2 && abar.rank() == 3 && bbar.rank() == 3 && c.rank() == 2 &&
              d_skip.rank() == 1,
          "scan: expected u[L,D], abar/bbar[L,D,S], c[L,S], d_skip[D]");
  const int64_t len = u.dim(0), dim = u.dim(1), nstate = abar.dim(2);
  require(abar.shape() == Shape({len, dim, nstate}) && bbar.shape() == abar.shape(),
          "scan: abar/bbar shape " + shape_str(abar.shape()) + " does not match u " +
              shape_str(u.shape()));
  require(c.shape() == Shape({len, nstate}), "scan: c length mismatch, got " + shape_str(c.shape()));
  require(d_skip.dim(0) == dim, "scan: d_skip extent mismatch");
}

}  // namespace

template <typename T>
Discretized<T> discretize(const Tensor<T>& delta, const Tensor<T>& a, const Tensor<T>& b) {
  require(delta.rank() == 2 && a.rank() == 2 && b.rank() == 2,
          "discretize: expected delta[L,D], a[D,S], b[L,S]");
  const int64_t len = delta.dim(0), dim = delta.dim(1), nstate = a.dim(1);
  require(a.dim(0) == dim && b.dim(0) == len && b.dim(1) == nstate,
          "discretize: shape mismatch between delta, a and b");
  for (T v : delta.data()) {
    if (!(v > T(0))) throw std::invalid_argument("discretize: step sizes must be positive");
  }
  std::vector<T> abar(static_cast<size_t>(len * dim * nstate));
  std::vector<T> bbar(abar.size());
  for (int64_t t = 0; t < len; ++t) {
    for (int64_t d = 0; d < dim; ++d) {
      const T dt = delta.data()[t * dim + d];
      for (int64_t n = 0; n < nstate; ++n) {
        const int64_t i = (t * dim + d) * nstate + n;
        abar[i] = std::exp(dt * a.data()[d * nstate + n]);
        bbar[i] = dt * b.data()[t * nstate + n];
      }
    }
  }
  return {Tensor<T>::from({len, dim, nstate}, std::move(abar)),
          Tensor<T>::from({len, dim, nstate}, std::move(bbar))};
}

template <typename T>
Tensor<T> scan_sequential(const Tensor<T>& u, const Tensor<T>& abar, const Tensor<T>& bbar,
                          const Tensor<T>& c, const Tensor<T>& d_skip) {
  check_reference_inputs(u, abar, bbar, c, d_skip);
  const int64_t len = u.dim(0), dim = u.dim(1), nstate = abar.dim(2);
  const T* av = abar.data().data();
  const T* bv = bbar.data().data();
  const T* uv = u.data().data();
  auto coef = [&](int64_t t, int64_t d, int64_t n, T& a, T& bu) {
    const int64_t i = (t * dim + d) * nstate + n;
    a = av[i];
    bu = bv[i] * uv[t * dim + d];
  };
  std::vector<T> y(static_cast<size_t>(len * dim));
  sequential_kernel<T>(len, dim, nstate, coef, c.data().data(), uv, d_skip.data().data(), y.data());
  return detail::make_result<T>("scan_sequential", {len, dim}, std::move(y), {}, nullptr);
}

template <typename T>
Tensor<T> scan_chunked(const Tensor<T>& u, const Tensor<T>& abar, const Tensor<T>& bbar,
                       const Tensor<T>& c, const Tensor<T>& d_skip, int64_t chunk) {
  check_reference_inputs(u, abar, bbar, c, d_skip);
  if (chunk < 1) throw std::invalid_argument("scan_chunked: chunk must be >= 1");
  const int64_t len = u.dim(0), dim = u.dim(1), nstate = abar.dim(2);
  const T* av = abar.data().data();
  const T* bv = bbar.data().data();
  const T* uv = u.data().data();
  auto coef = [&](int64_t t, int64_t d, int64_t n, T& a, T& bu) {
    const int64_t i = (t * dim + d) * nstate + n;
    a = av[i];
    bu = bv[i] * uv[t * dim + d];
  };
  std::vector<T> y(static_cast<size_t>(len * dim));
  chunked_kernel<T>(len, dim, nstate, chunk, coef, c.data().data(), uv, d_skip.data().data(),
                    y.data());
  return detail::make_result<T>("scan_chunked", {len, dim}, std::move(y), {}, nullptr);
}

// ------------------------------------------------------------ fused scan

template <typename T>
Tensor<T> selective_scan(const Tensor<T>& u, const Tensor<T>& delta, const Tensor<T>& a_log,
                         const Tensor<T>& b, const Tensor<T>& c, const Tensor<T>& d_skip,
                         const SelectiveScanOptions& opts) {
  require(u.rank() == 4, "selective_scan: u must be [N,G,L,D], got " + shape_str(u.shape()));
  const int64_t batch = u.dim(0), groups = u.dim(1), len = u.dim(2), dim = u.dim(3);
  require(a_log.rank() == 3 && a_log.dim(0) == groups && a_log.dim(1) == dim,
          "selective_scan: a_log must be [G,D,S], got " + shape_str(a_log.shape()));
  const int64_t nstate = a_log.dim(2);
  require(delta.shape() == u.shape(), "selective_scan: delta shape " + shape_str(delta.shape()) +
                                          " differs from u " + shape_str(u.shape()));
  const Shape bc_shape{batch, groups, len, nstate};
  require(b.shape() == bc_shape && c.shape() == bc_shape,
          "selective_scan: b/c must be " + shape_str(bc_shape));
  require(d_skip.shape() == Shape({groups, dim}), "selective_scan: d_skip must be [G,D]");
  if (opts.chunk < 0) throw std::invalid_argument("selective_scan: chunk must be >= 0");
  for (T v : delta.data()) {
    if (!(v > T(0))) throw std::invalid_argument("selective_scan: step sizes must be positive");
  }

  const int64_t seqs = batch * groups;
  std::vector<T> a_neg(static_cast<size_t>(a_log.numel()));
  for (size_t i = 0; i < a_neg.size(); ++i) a_neg[i] = -std::exp(a_log.data()[i]);

  std::vector<T> y(static_cast<size_t>(u.numel()));
  for (int64_t s = 0; s < seqs; ++s) {
    const int64_t g = s % groups;
    const T* us = u.data().data() + s * len * dim;
    const T* ds = delta.data().data() + s * len * dim;
    const T* bs = b.data().data() + s * len * nstate;
    const T* cs = c.data().data() + s * len * nstate;
    const T* ag = a_neg.data() + g * dim * nstate;
    auto coef = [&](int64_t t, int64_t d, int64_t n, T& a, T& bu) {
      const T dt = ds[t * dim + d];
      a = std::exp(dt * ag[d * nstate + n]);
      bu = dt * bs[t * nstate + n] * us[t * dim + d];
    };
    T* ys = y.data() + s * len * dim;
    const T* dsk = d_skip.data().data() + g * dim;
    if (opts.chunk > 0) {
      chunked_kernel<T>(len, dim, nstate, opts.chunk, coef, cs, us, dsk, ys);
    } else {
      sequential_kernel<T>(len, dim, nstate, coef, cs, us, dsk, ys);
    }
  }

  return detail::make_result<T>(
      "selective_scan", u.shape(), std::move(y), {u, delta, a_log, b, c, d_skip},
      [=, a_neg = std::move(a_neg)](Node<T>& node) {
        auto grad_of = [&](size_t i) -> T* {
          Node<T>& in = *node.inputs[i];
          return in.requires_grad ? in.grad_buffer().data() : nullptr;
        };
        T* gu = grad_of(0);
        T* gdelta = grad_of(1);
        T* galog = grad_of(2);
        T* gb = grad_of(3);
        T* gc = grad_of(4);
        T* gdskip = grad_of(5);
        const T* uv = node.inputs[0]->data.data();
        const T* dv = node.inputs[1]->data.data();
        const T* bv = node.inputs[3]->data.data();
        const T* cv = node.inputs[4]->data.data();
        const T* dskv = node.inputs[5]->data.data();
        const T* gy = node.grad.data();
        std::vector<T> ga(a_neg.size(), T(0));
        std::vector<T> states(static_cast<size_t>(len * dim * nstate));
        std::vector<T> gh(static_cast<size_t>(dim * nstate));
        std::vector<T> scratch(static_cast<size_t>(len * dim));
        for (int64_t s = 0; s < seqs; ++s) {
          const int64_t g = s % groups;
          const T* us = uv + s * len * dim;
          const T* ds = dv + s * len * dim;
          const T* bs = bv + s * len * nstate;
          const T* cs = cv + s * len * nstate;
          const T* ag = a_neg.data() + g * dim * nstate;
          const T* dsk = dskv + g * dim;
          auto coef = [&](int64_t t, int64_t d, int64_t n, T& a, T& bu) {
            const T dt = ds[t * dim + d];
            a = std::exp(dt * ag[d * nstate + n]);
            bu = dt * bs[t * nstate + n] * us[t * dim + d];
          };
          sequential_kernel<T>(len, dim, nstate, coef, cs, us, dsk, scratch.data(), states.data());
          std::fill(gh.begin(), gh.end(), T(0));
          for (int64_t t = len - 1; t >= 0; --t) {
            const T* bt = bs + t * nstate;
            const T* ct = cs + t * nstate;
            const T* ht = states.data() + t * dim * nstate;
            const T* hp = t > 0 ? states.data() + (t - 1) * dim * nstate : nullptr;
            for (int64_t d = 0; d < dim; ++d) {
              const int64_t td = (s * len + t) * dim + d;
              const T dt = ds[t * dim + d];
              const T x = us[t * dim + d];
              const T gyt = gy[td];
              T gu_acc = gyt * dsk[d];
              if (gdskip) gdskip[g * dim + d] += gyt * x;
              T gdt_acc = 0;
              for (int64_t n = 0; n < nstate; ++n) {
                const int64_t i = d * nstate + n;
                const T a_cont = ag[i];
                const T a = std::exp(dt * a_cont);
                const T h_prev = hp ? hp[i] : T(0);
                if (gc) gc[(s * len + t) * nstate + n] += gyt * ht[i];
                const T ght = gh[i] + gyt * ct[n];
                const T g_abar = ght * h_prev;
                gdt_acc += g_abar * a * a_cont + ght * bt[n] * x;
                ga[g * dim * nstate + i] += g_abar * a * dt;
                if (gb) gb[(s * len + t) * nstate + n] += ght * dt * x;
                gu_acc += ght * dt * bt[n];
                gh[i] = ght * a;
              }
              if (gdelta) gdelta[td] += gdt_acc;
              if (gu) gu[td] += gu_acc;
            }
          }
        }
        if (galog) {
          for (size_t i = 0; i < ga.size(); ++i) galog[i] += ga[i] * a_neg[i];
        }
      });
}

// ------------------------------------------------------ expand and merge

template <typename T>
Tensor<T> scan_expand(const Tensor<T>& grid) {
  require(grid.rank() == 4, "scan_expand: expected [N,H,W,C], got " + shape_str(grid.shape()));
  const int64_t batch = grid.dim(0), height = grid.dim(1), width = grid.dim(2), ch = grid.dim(3);
  const int64_t len = height * width;
  std::vector<std::vector<int64_t>> orders;
  for (ScanDirection dir : kScanDirections) orders.push_back(scan_order(dir, height, width));
  const T* x = grid.data().data();
  std::vector<T> out(static_cast<size_t>(batch * 4 * len * ch));
  for (int64_t n = 0; n < batch; ++n) {
    for (int64_t g = 0; g < 4; ++g) {
      for (int64_t t = 0; t < len; ++t) {
        const T* src = x + (n * len + orders[g][t]) * ch;
        std::copy(src, src + ch, out.data() + ((n * 4 + g) * len + t) * ch);
      }
    }
  }
  return detail::make_result<T>(
      "scan_expand", {batch, 4, len, ch}, std::move(out), {grid},
      [=, orders = std::move(orders)](Node<T>& node) {
        Node<T>& in = *node.inputs[0];
        if (!in.requires_grad) return;
        T* gx = in.grad_buffer().data();
        for (int64_t n = 0; n < batch; ++n) {
          for (int64_t g = 0; g < 4; ++g) {
            for (int64_t t = 0; t < len; ++t) {
              const T* src = node.grad.data() + ((n * 4 + g) * len + t) * ch;
              T* dst = gx + (n * len + orders[g][t]) * ch;
              for (int64_t k = 0; k < ch; ++k) dst[k] += src[k];
            }
          }
        }
      });
}

template <typename T>
Tensor<T> scan_merge(const Tensor<T>& sequences, int64_t height, int64_t width, MergeRule rule) {
  require(sequences.rank() == 4 && sequences.dim(1) == 4,
          "scan_merge: expected [N,4,L,C], got " + shape_str(sequences.shape()));
  const int64_t batch = sequences.dim(0), len = sequences.dim(2), ch = sequences.dim(3);
  require(height * width == len, "scan_merge: grid " + std::to_string(height) + "x" +
                                     std::to_string(width) + " does not match length " +
                                     std::to_string(len));
  std::vector<std::vector<int64_t>> orders;
  for (ScanDirection dir : kScanDirections) orders.push_back(scan_order(dir, height, width));
  const T scale = rule == MergeRule::kMean ? T(0.25) : T(1);
  const T* y = sequences.data().data();
  std::vector<T> out(static_cast<size_t>(batch * len * ch), T(0));
  // Fixed direction order keeps the reduction deterministic.
  for (int64_t n = 0; n < batch; ++n) {
    for (int64_t g = 0; g < 4; ++g) {
      for (int64_t t = 0; t < len; ++t) {
        const T* src = y + ((n * 4 + g) * len + t) * ch;
        T* dst = out.data() + (n * len + orders[g][t]) * ch;
        for (int64_t k = 0; k < ch; ++k) dst[k] += scale * src[k];
      }
    }
  }
  return detail::make_result<T>(
      "scan_merge", {batch, height, width, ch}, std::move(out), {sequences},
      [=, orders = std::move(orders)](Node<T>& node) {
        Node<T>& in = *node.inputs[0];
        if (!in.requires_grad) return;
        T* gy = in.grad_buffer().data();
        for (int64_t n = 0; n < batch; ++n) {
          for (int64_t g = 0; g < 4; ++g) {
            for (int64_t t = 0; t < len; ++t) {
              const T* src = node.grad.data() + (n * len + orders[g][t]) * ch;
              T* dst = gy + ((n * 4 + g) * len + t) * ch;
              for (int64_t k = 0; k < ch; ++k) dst[k] += scale * src[k];
            }
          }
        }
      });
}

// ------------------------------------------------------------- SS2D block

template <typename T>
SS2DBlock<T>::SS2DBlock(const std::string& prefix, int64_t dim, const SsmConfig& cfg, Rng& rng,
                        std::vector<Parameter<T>>& registry)
    : dim_(dim), inner_(cfg.inner(dim)), rank_(cfg.rank_for(dim)), cfg_(cfg) {
  const int64_t di = inner_, r = rank_, ns = cfg.state_size;
  auto name = [&](const char* leaf) { return prefix + "." + leaf; };
  norm_gamma = register_param<T>(registry, name("norm.gamma"), {dim}, 1.0);
  norm_beta = register_param<T>(registry, name("norm.beta"), {dim}, 0.0);
  in_x = register_param<T>(registry, name("in_proj_x.weight"), {di, dim},
                           truncated_normal(rng, di * dim, 0.02));
  in_z = register_param<T>(registry, name("in_proj_z.weight"), {di, dim},
                           truncated_normal(rng, di * dim, 0.02));
  const double conv_bound = 1.0 / 3.0;  // 1/sqrt(fan_in) with fan_in = 9
  conv_w = register_param<T>(registry, name("dwconv.weight"), {di, 1, 3, 3},
                             uniform(rng, di * 9, -conv_bound, conv_bound));
  conv_b = register_param<T>(registry, name("dwconv.bias"), {di},
                             uniform(rng, di, -conv_bound, conv_bound));
  x_dt = register_param<T>(registry, name("x_proj_dt.weight"), {4, r, di},
                           truncated_normal(rng, 4 * r * di, 0.02));
  x_b = register_param<T>(registry, name("x_proj_b.weight"), {4, ns, di},
                          truncated_normal(rng, 4 * ns * di, 0.02));
  x_c = register_param<T>(registry, name("x_proj_c.weight"), {4, ns, di},
                          truncated_normal(rng, 4 * ns * di, 0.02));
  const double dt_std = 1.0 / std::sqrt(static_cast<double>(r));
  dt_w = register_param<T>(registry, name("dt_proj.weight"), {4, di, r},
                           uniform(rng, 4 * di * r, -dt_std, dt_std));
  // softplus(bias) spans [dt_min, dt_max] log-uniformly.
  std::vector<double> dt_bias = uniform(rng, 4 * di, std::log(cfg.dt_min), std::log(cfg.dt_max));
  for (double& v : dt_bias) {
    const double dt = std::exp(v);
    v = dt + std::log(-std::expm1(-dt));
  }
  dt_b = register_param<T>(registry, name("dt_proj.bias"), {4, di}, dt_bias);
  std::vector<double> alog(static_cast<size_t>(4 * di * ns));
  for (size_t i = 0; i < alog.size(); ++i) alog[i] = std::log(static_cast<double>(i % ns + 1));
  a_log = register_param<T>(registry, name("a_log"), {4, di, ns}, alog);
  d_skip = register_param<T>(registry, name("d_skip"), {4, di}, 1.0);
  out_norm_gamma = register_param<T>(registry, name("out_norm.gamma"), {di}, 1.0);
  out_norm_beta = register_param<T>(registry, name("out_norm.beta"), {di}, 0.0);
  out_proj = register_param<T>(registry, name("out_proj.weight"), {dim, di}, 0.0);
}

template <typename T>
Tensor<T> SS2DBlock<T>::scan_sequences(const Tensor<T>& xc) const {
  auto xs = scan_expand(xc);
  auto dt_low = linear(xs, x_dt);
  auto bs = linear(xs, x_b);
  auto cs = linear(xs, x_c);
  auto delta = softplus(linear(dt_low, dt_w, dt_b));
  return selective_scan(xs, delta, a_log, bs, cs, d_skip, {cfg_.chunk});
}

template <typename T>
Tensor<T> SS2DBlock<T>::forward(const Tensor<T>& x) const {
  require(x.rank() == 4 && x.dim(3) == dim_,
          "ss2d_block: expected [N,H,W," + std::to_string(dim_) + "], got " + shape_str(x.shape()));
  const int64_t height = x.dim(1), width = x.dim(2);
  auto xn = layer_norm(x, norm_gamma, norm_beta);
  auto xi = linear(xn, in_x);
  auto z = linear(xn, in_z);
  Conv2dOptions dw;
  dw.padding = {1, 1};
  dw.groups = inner_;
  auto xc = to_channels_last(silu(conv2d(to_channels_first(xi), conv_w, conv_b, dw)));
  auto y = scan_merge(scan_sequences(xc), height, width, cfg_.merge);
  y = mul(layer_norm(y, out_norm_gamma, out_norm_beta), silu(z));
  return add(x, linear(y, out_proj));
}

template <typename T>
int64_t SS2DBlock<T>::macs(int64_t h, int64_t w) const {
  const int64_t len = h * w, di = inner_, ns = cfg_.state_size;
  int64_t total = 0;
  total += 2 * len * dim_ * di;              // in projections
  total += len * di * 9;                     // depth-wise conv
  total += 4 * len * di * (rank_ + 2 * ns);  // x projections
  total += 4 * len * rank_ * di;             // dt projection
  total += 4 * len * di * ns * 2;            // recurrence update and readout
  total += len * di * dim_;                  // out projection
  return total;
}

#define SSMPOSE_INSTANTIATE_SCAN(T)                                                             \
  template Discretized<T> discretize<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&); \
  template Tensor<T> scan_sequential<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,  \
                                        const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> scan_chunked<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,     \
                                     const Tensor<T>&, const Tensor<T>&, int64_t);             \
  template Tensor<T> selective_scan<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,   \
                                       const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,   \
                                       const SelectiveScanOptions&);                           \
  template Tensor<T> scan_expand<T>(const Tensor<T>&);                                         \
  template Tensor<T> scan_merge<T>(const Tensor<T>&, int64_t, int64_t, MergeRule);             \
  template class SS2DBlock<T>;

SSMPOSE_INSTANTIATE_SCAN(float)
SSMPOSE_INSTANTIATE_SCAN(double)

#undef SSMPOSE_INSTANTIATE_SCAN

}  // namespace ssmpose

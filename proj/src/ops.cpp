#include "ssmpose/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ssmpose {

namespace {

template <typename T>
std::vector<T>* input_grad(Node<T>& out, size_t i) {
  if (i >= out.inputs.size()) return nullptr;
  Node<T>& in = *out.inputs[i];
  if (!in.requires_grad) return nullptr;
  return &in.grad_buffer();
}

void require(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

// Output positions o in [lo, hi) for which o*stride - pad + k lands in [0, extent).
struct Range {
  int64_t lo;
  int64_t hi;
};

Range valid_range(int64_t out_extent, int64_t in_extent, int64_t stride, int64_t pad, int64_t k) {
  // o*stride >= pad - k  and  o*stride <= in_extent - 1 + pad - k
  const int64_t a = pad - k;
  const int64_t b = in_extent - 1 + pad - k;
  int64_t lo = a <= 0 ? 0 : (a + stride - 1) / stride;
  int64_t hi = b < 0 ? 0 : b / stride + 1;
  lo = std::max<int64_t>(lo, 0);
  hi = std::min<int64_t>(hi, out_extent);
  if (hi < lo) hi = lo;
  return {lo, hi};
}

}  // namespace

double sigmoid_ref(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus_ref(double x) {
  if (x > 20.0) return x;
  return std::log1p(std::exp(x));
}

// ---------------------------------------------------------------- conv2d

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight,
                 const std::optional<std::type_identity_t<Tensor<T>>>& bias, const Conv2dOptions& opts) {
  require(input.rank() == 4, "conv2d: input must be [N,C,H,W], got " + shape_str(input.shape()));
  require(weight.rank() == 4, "conv2d: weight must be rank 4, got " + shape_str(weight.shape()));
  const auto [sh, sw] = opts.stride;
  const auto [ph, pw] = opts.padding;
  const int64_t groups = opts.groups;
  if (sh <= 0 || sw <= 0) throw ShapeError("conv2d: stride must be positive");
  require(ph >= 0 && pw >= 0, "conv2d: padding must be non-negative");
  require(groups >= 1, "conv2d: groups must be >= 1");
  const int64_t n_batch = input.dim(0), c_in = input.dim(1), h_in = input.dim(2), w_in = input.dim(3);
  const int64_t c_out = weight.dim(0), cpg = weight.dim(1), kh = weight.dim(2), kw = weight.dim(3);
  require(c_in % groups == 0 && c_out % groups == 0, "conv2d: channels not divisible by groups");
  require(cpg == c_in / groups, "conv2d: weight " + shape_str(weight.shape()) +
                                    " incompatible with input " + shape_str(input.shape()));
  require(h_in + 2 * ph >= kh && w_in + 2 * pw >= kw, "conv2d: kernel larger than padded input");
  if (bias) require(bias->rank() == 1 && bias->dim(0) == c_out, "conv2d: bias must be [Co]");
  const int64_t h_out = (h_in + 2 * ph - kh) / sh + 1;
  const int64_t w_out = (w_in + 2 * pw - kw) / sw + 1;
  const int64_t opg = c_out / groups;

  std::vector<Range> ry(static_cast<size_t>(kh)), rx(static_cast<size_t>(kw));
  for (int64_t k = 0; k < kh; ++k) ry[k] = valid_range(h_out, h_in, sh, ph, k);
  for (int64_t k = 0; k < kw; ++k) rx[k] = valid_range(w_out, w_in, sw, pw, k);

  const T* x = input.data().data();
  const T* wt = weight.data().data();
  std::vector<T> out(static_cast<size_t>(n_batch * c_out * h_out * w_out), T(0));
  const int64_t plane_in = h_in * w_in, plane_out = h_out * w_out;

  for (int64_t n = 0; n < n_batch; ++n) {
    for (int64_t oc = 0; oc < c_out; ++oc) {
      const int64_t g = oc / opg;
      T* o = out.data() + (n * c_out + oc) * plane_out;
      if (bias) std::fill(o, o + plane_out, bias->data()[oc]);
      for (int64_t ic = 0; ic < cpg; ++ic) {
        const T* xi = x + (n * c_in + g * cpg + ic) * plane_in;
        const T* wk = wt + (oc * cpg + ic) * kh * kw;
        for (int64_t ky = 0; ky < kh; ++ky) {
          for (int64_t kx = 0; kx < kw; ++kx) {
            const T wv = wk[ky * kw + kx];
            for (int64_t oy = ry[ky].lo; oy < ry[ky].hi; ++oy) {
              const T* row = xi + (oy * sh - ph + ky) * w_in - pw + kx;
              T* orow = o + oy * w_out;
              if (sw == 1) {
                for (int64_t ox = rx[kx].lo; ox < rx[kx].hi; ++ox) orow[ox] += wv * row[ox];
              } else {
                for (int64_t ox = rx[kx].lo; ox < rx[kx].hi; ++ox) orow[ox] += wv * row[ox * sw];
              }
            }
          }
        }
      }
    }
  }

  std::vector<Tensor<T>> inputs{input, weight};
  if (bias) inputs.push_back(*bias);
  const bool has_bias = bias.has_value();
  return detail::make_result<T>(
      "conv2d", {n_batch, c_out, h_out, w_out}, std::move(out), std::move(inputs),
      [=](Node<T>& node) {
        const T* go = node.grad.data();
        const T* xv = node.inputs[0]->data.data();
        const T* wv = node.inputs[1]->data.data();
        std::vector<T>* gx = input_grad(node, 0);
        std::vector<T>* gw = input_grad(node, 1);
        std::vector<T>* gb = has_bias ? input_grad(node, 2) : nullptr;
        for (int64_t n = 0; n < n_batch; ++n) {
          for (int64_t oc = 0; oc < c_out; ++oc) {
            const int64_t g = oc / opg;
            const T* gop = go + (n * c_out + oc) * plane_out;
            if (gb) {
              T acc = 0;
              for (int64_t i = 0; i < plane_out; ++i) acc += gop[i];
              (*gb)[oc] += acc;
            }
            for (int64_t ic = 0; ic < cpg; ++ic) {
              const int64_t in_off = (n * c_in + g * cpg + ic) * plane_in;
              const int64_t w_off = (oc * cpg + ic) * kh * kw;
              for (int64_t ky = 0; ky < kh; ++ky) {
                for (int64_t kx = 0; kx < kw; ++kx) {
                  const T wk = wv[w_off + ky * kw + kx];
                  T acc = 0;
                  for (int64_t oy = ry[ky].lo; oy < ry[ky].hi; ++oy) {
                    const int64_t row = in_off + (oy * sh - ph + ky) * w_in - pw + kx;
                    const T* grow = gop + oy * w_out;
                    for (int64_t ox = rx[kx].lo; ox < rx[kx].hi; ++ox) {
                      if (gw) acc += grow[ox] * xv[row + ox * sw];
                      if (gx) (*gx)[row + ox * sw] += wk * grow[ox];
                    }
                  }
                  if (gw) (*gw)[w_off + ky * kw + kx] += acc;
                }
              }
            }
          }
        }
      });
}

// ------------------------------------------------------ conv_transpose2d

template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& input, const Tensor<T>& weight,
                           const std::optional<std::type_identity_t<Tensor<T>>>& bias,
                           const ConvTranspose2dOptions& opts) {
  require(input.rank() == 4, "conv_transpose2d: input must be [N,C,H,W]");
  require(weight.rank() == 4, "conv_transpose2d: weight must be [C,Co,kh,kw]");
  const auto [sh, sw] = opts.stride;
  const auto [ph, pw] = opts.padding;
  if (sh <= 0 || sw <= 0) throw ShapeError("conv_transpose2d: stride must be positive");
  const int64_t n_batch = input.dim(0), c_in = input.dim(1), h_in = input.dim(2), w_in = input.dim(3);
  require(weight.dim(0) == c_in, "conv_transpose2d: weight " + shape_str(weight.shape()) +
                                     " incompatible with input " + shape_str(input.shape()));
  const int64_t c_out = weight.dim(1), kh = weight.dim(2), kw = weight.dim(3);
  const int64_t h_out = (h_in - 1) * sh - 2 * ph + kh;
  const int64_t w_out = (w_in - 1) * sw - 2 * pw + kw;
  require(h_out > 0 && w_out > 0, "conv_transpose2d: empty output");
  if (bias) require(bias->rank() == 1 && bias->dim(0) == c_out, "conv_transpose2d: bias must be [Co]");

  // Input positions i with i*stride - pad + k inside the output.
  std::vector<Range> ry(static_cast<size_t>(kh)), rx(static_cast<size_t>(kw));
  for (int64_t k = 0; k < kh; ++k) ry[k] = valid_range(h_in, h_out, sh, ph, k);
  for (int64_t k = 0; k < kw; ++k) rx[k] = valid_range(w_in, w_out, sw, pw, k);

  const int64_t plane_in = h_in * w_in, plane_out = h_out * w_out;
  const T* x = input.data().data();
  const T* wt = weight.data().data();
  std::vector<T> out(static_cast<size_t>(n_batch * c_out * plane_out), T(0));
  for (int64_t n = 0; n < n_batch; ++n) {
    for (int64_t oc = 0; oc < c_out; ++oc) {
      T* o = out.data() + (n * c_out + oc) * plane_out;
      if (bias) std::fill(o, o + plane_out, bias->data()[oc]);
      for (int64_t ic = 0; ic < c_in; ++ic) {
        const T* xi = x + (n * c_in + ic) * plane_in;
        const T* wk = wt + (ic * c_out + oc) * kh * kw;
        for (int64_t ky = 0; ky < kh; ++ky) {
          for (int64_t kx = 0; kx < kw; ++kx) {
            const T wv = wk[ky * kw + kx];
            for (int64_t iy = ry[ky].lo; iy < ry[ky].hi; ++iy) {
              T* orow = o + (iy * sh - ph + ky) * w_out - pw + kx;
              const T* irow = xi + iy * w_in;
              for (int64_t ix = rx[kx].lo; ix < rx[kx].hi; ++ix) orow[ix * sw] += wv * irow[ix];
            }
          }
        }
      }
    }
  }

  std::vector<Tensor<T>> inputs{input, weight};
  if (bias) inputs.push_back(*bias);
  const bool has_bias = bias.has_value();
  return detail::make_result<T>(
      "conv_transpose2d", {n_batch, c_out, h_out, w_out}, std::move(out), std::move(inputs),
      [=](Node<T>& node) {
        const T* go = node.grad.data();
        const T* xv = node.inputs[0]->data.data();
        const T* wv = node.inputs[1]->data.data();
        std::vector<T>* gx = input_grad(node, 0);
        std::vector<T>* gw = input_grad(node, 1);
        std::vector<T>* gb = has_bias ? input_grad(node, 2) : nullptr;
        for (int64_t n = 0; n < n_batch; ++n) {
          for (int64_t oc = 0; oc < c_out; ++oc) {
            const T* gop = go + (n * c_out + oc) * plane_out;
            if (gb) {
              T acc = 0;
              for (int64_t i = 0; i < plane_out; ++i) acc += gop[i];
              (*gb)[oc] += acc;
            }
            for (int64_t ic = 0; ic < c_in; ++ic) {
              const int64_t in_off = (n * c_in + ic) * plane_in;
              const int64_t w_off = (ic * c_out + oc) * kh * kw;
              for (int64_t ky = 0; ky < kh; ++ky) {
                for (int64_t kx = 0; kx < kw; ++kx) {
                  const T wk = wv[w_off + ky * kw + kx];
                  T acc = 0;
                  for (int64_t iy = ry[ky].lo; iy < ry[ky].hi; ++iy) {
                    const T* grow = gop + (iy * sh - ph + ky) * w_out - pw + kx;
                    const int64_t irow = in_off + iy * w_in;
                    for (int64_t ix = rx[kx].lo; ix < rx[kx].hi; ++ix) {
                      if (gw) acc += grow[ix * sw] * xv[irow + ix];
                      if (gx) (*gx)[irow + ix] += wk * grow[ix * sw];
                    }
                  }
                  if (gw) (*gw)[w_off + ky * kw + kx] += acc;
                }
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------- linear

template <typename T>
Tensor<T> linear(const Tensor<T>& input, const Tensor<T>& weight,
                 const std::optional<std::type_identity_t<Tensor<T>>>& bias) {
  const bool grouped = weight.rank() == 3;
  require(weight.rank() == 2 || grouped, "linear: weight must be [Dout,Din] or [G,Dout,Din]");
  const int64_t d_in = weight.dim(-1), d_out = weight.dim(-2);
  const int64_t groups = grouped ? weight.dim(0) : 1;
  require(input.dim(-1) == d_in, "linear: input " + shape_str(input.shape()) +
                                     " trailing extent does not match weight " +
                                     shape_str(weight.shape()));
  int64_t rows_per_group = 0;  // rows sharing one weight inside a block of G groups
  if (grouped) {
    require(input.rank() >= 3 && input.dim(-3) == groups,
            "linear: grouped weight needs input [..., G, L, Din], got " + shape_str(input.shape()));
    rows_per_group = input.dim(-2);
  }
  if (bias) {
    const bool ok = grouped ? (bias->rank() == 2 && bias->dim(0) == groups && bias->dim(1) == d_out)
                            : (bias->rank() == 1 && bias->dim(0) == d_out);
    require(ok, "linear: bias shape " + shape_str(bias->shape()) + " mismatched");
  }
  const int64_t rows = input.numel() / d_in;
  Shape out_shape = input.shape();
  out_shape.back() = d_out;

  // Row r uses weight group (r / rows_per_group) % groups.
  auto group_of = [=](int64_t r) -> int64_t {
    return grouped ? (r / rows_per_group) % groups : 0;
  };

  const T* x = input.data().data();
  const T* w = weight.data().data();
  const T* b = bias ? bias->data().data() : nullptr;
  std::vector<T> out(static_cast<size_t>(rows * d_out));
  for (int64_t r = 0; r < rows; ++r) {
    const int64_t g = group_of(r);
    const T* xr = x + r * d_in;
    const T* wg = w + g * d_out * d_in;
    T* o = out.data() + r * d_out;
    for (int64_t j = 0; j < d_out; ++j) {
      const T* wr = wg + j * d_in;
      T acc = b ? b[g * d_out + j] : T(0);
      for (int64_t i = 0; i < d_in; ++i) acc += xr[i] * wr[i];
      o[j] = acc;
    }
  }

  std::vector<Tensor<T>> inputs{input, weight};
  if (bias) inputs.push_back(*bias);
  const bool has_bias = bias.has_value();
  return detail::make_result<T>(
      "linear", std::move(out_shape), std::move(out), std::move(inputs),
      [=](Node<T>& node) {
        const T* go = node.grad.data();
        const T* xv = node.inputs[0]->data.data();
        const T* wv = node.inputs[1]->data.data();
        std::vector<T>* gx = input_grad(node, 0);
        std::vector<T>* gw = input_grad(node, 1);
        std::vector<T>* gb = has_bias ? input_grad(node, 2) : nullptr;
        for (int64_t r = 0; r < rows; ++r) {
          const int64_t g = group_of(r);
          const T* gr = go + r * d_out;
          const T* xr = xv + r * d_in;
          const T* wg = wv + g * d_out * d_in;
          for (int64_t j = 0; j < d_out; ++j) {
            const T gj = gr[j];
            if (gb) (*gb)[g * d_out + j] += gj;
            if (gx) {
              T* gxr = gx->data() + r * d_in;
              const T* wr = wg + j * d_in;
              for (int64_t i = 0; i < d_in; ++i) gxr[i] += gj * wr[i];
            }
            if (gw) {
              T* gwr = gw->data() + (g * d_out + j) * d_in;
              for (int64_t i = 0; i < d_in; ++i) gwr[i] += gj * xr[i];
            }
          }
        }
      });
}

// ------------------------------------------------------------ layer_norm

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                     double eps) {
  const int64_t d = input.dim(-1);
  require(gamma.rank() == 1 && gamma.dim(0) == d && beta.rank() == 1 && beta.dim(0) == d,
          "layer_norm: gamma/beta must be [" + std::to_string(d) + "]");
  const int64_t rows = input.numel() / d;
  const T* x = input.data().data();
  const T* gm = gamma.data().data();
  const T* bt = beta.data().data();
  std::vector<T> out(static_cast<size_t>(rows * d));
  std::vector<T> xhat(out.size());
  std::vector<T> inv_std(static_cast<size_t>(rows));
  for (int64_t r = 0; r < rows; ++r) {
    const T* xr = x + r * d;
    T m = 0;
    for (int64_t i = 0; i < d; ++i) m += xr[i];
    m /= T(d);
    T var = 0;
    for (int64_t i = 0; i < d; ++i) var += (xr[i] - m) * (xr[i] - m);
    var /= T(d);
    const T is = T(1) / std::sqrt(var + T(eps));
    inv_std[r] = is;
    for (int64_t i = 0; i < d; ++i) {
      const T xh = (xr[i] - m) * is;
      xhat[r * d + i] = xh;
      out[r * d + i] = xh * gm[i] + bt[i];
    }
  }
  return detail::make_result<T>(
      "layer_norm", input.shape(), std::move(out), {input, gamma, beta},
      [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& node) {
        const T* go = node.grad.data();
        const T* gmv = node.inputs[1]->data.data();
        std::vector<T>* gx = input_grad(node, 0);
        std::vector<T>* gg = input_grad(node, 1);
        std::vector<T>* gbt = input_grad(node, 2);
        for (int64_t r = 0; r < rows; ++r) {
          const T* gr = go + r * d;
          const T* xh = xhat.data() + r * d;
          T mean_g = 0, mean_gx = 0;
          for (int64_t i = 0; i < d; ++i) {
            const T gi = gr[i] * gmv[i];
            mean_g += gi;
            mean_gx += gi * xh[i];
            if (gg) (*gg)[i] += gr[i] * xh[i];
            if (gbt) (*gbt)[i] += gr[i];
          }
          if (!gx) continue;
          mean_g /= T(d);
          mean_gx /= T(d);
          T* gxr = gx->data() + r * d;
          for (int64_t i = 0; i < d; ++i) {
            gxr[i] += inv_std[r] * (gr[i] * gmv[i] - mean_g - xh[i] * mean_gx);
          }
        }
      });
}

// ------------------------------------------------------------- pointwise

template <typename T>
Tensor<T> unary(UnaryKind kind, const Tensor<T>& x) {
  const size_t n = static_cast<size_t>(x.numel());
  const T* xv = x.data().data();
  std::vector<T> out(n);
  const char* name = "unary";
  switch (kind) {
    case UnaryKind::kSilu:
      name = "silu";
      for (size_t i = 0; i < n; ++i) out[i] = xv[i] * T(sigmoid_ref(xv[i]));
      break;
    case UnaryKind::kSigmoid:
      name = "sigmoid";
      for (size_t i = 0; i < n; ++i) out[i] = T(sigmoid_ref(xv[i]));
      break;
    case UnaryKind::kSoftplus:
      name = "softplus";
      for (size_t i = 0; i < n; ++i) out[i] = T(softplus_ref(xv[i]));
      break;
    case UnaryKind::kExp:
      name = "exp";
      for (size_t i = 0; i < n; ++i) out[i] = std::exp(xv[i]);
      break;
  }
  return detail::make_result<T>(name, x.shape(), std::move(out), {x}, [kind, n](Node<T>& node) {
    std::vector<T>* gx = input_grad(node, 0);
    if (!gx) return;
    const T* go = node.grad.data();
    const T* xin = node.inputs[0]->data.data();
    const T* y = node.data.data();
    for (size_t i = 0; i < n; ++i) {
      T d = 0;
      switch (kind) {
        case UnaryKind::kSilu: {
          const T s = T(sigmoid_ref(xin[i]));
          d = s * (T(1) + xin[i] * (T(1) - s));
          break;
        }
        case UnaryKind::kSigmoid:
          d = y[i] * (T(1) - y[i]);
          break;
        case UnaryKind::kSoftplus:
          d = T(sigmoid_ref(xin[i]));
          break;
        case UnaryKind::kExp:
          d = y[i];
          break;
      }
      (*gx)[i] += go[i] * d;
    }
  });
}

namespace {

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (size_t i = 0; i < r; ++i) {
    const int64_t ea = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const int64_t eb = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (ea != eb && ea != 1 && eb != 1) {
      throw ShapeError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    out[i] = std::max(ea, eb);
  }
  return out;
}

// Strides of `s` laid against `out`, zero along broadcast axes.
std::vector<int64_t> broadcast_strides(const Shape& s, const Shape& out) {
  const size_t r = out.size();
  std::vector<int64_t> strides(r, 0);
  int64_t acc = 1;
  for (size_t k = 0; k < s.size(); ++k) {
    const size_t i = s.size() - 1 - k;
    const size_t o = r - 1 - k;
    strides[o] = s[i] == 1 ? 0 : acc;
    acc *= s[i];
  }
  return strides;
}

// Calls fn(out_index, a_index, b_index) over every output element.
template <typename Fn>
void for_each_broadcast(const Shape& out, const std::vector<int64_t>& sa,
                        const std::vector<int64_t>& sb, Fn&& fn) {
  const size_t r = out.size();
  const int64_t total = numel(out);
  std::vector<int64_t> idx(r, 0);
  int64_t ia = 0, ib = 0;
  for (int64_t o = 0; o < total; ++o) {
    fn(o, ia, ib);
    for (size_t k = r; k-- > 0;) {
      ++idx[k];
      ia += sa[k];
      ib += sb[k];
      if (idx[k] < out[k]) break;
      ia -= sa[k] * out[k];
      ib -= sb[k] * out[k];
      idx[k] = 0;
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> binary(BinaryKind kind, const Tensor<T>& a, const Tensor<T>& b) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape());
  const auto sa = broadcast_strides(a.shape(), out_shape);
  const auto sb = broadcast_strides(b.shape(), out_shape);
  const T* av = a.data().data();
  const T* bv = b.data().data();
  std::vector<T> out(static_cast<size_t>(numel(out_shape)));
  const bool same = a.shape() == b.shape();
  auto apply = [kind](T x, T y) {
    switch (kind) {
      case BinaryKind::kAdd: return x + y;
      case BinaryKind::kSub: return x - y;
      case BinaryKind::kMul: return x * y;
    }
    return T(0);
  };
  if (same) {
    for (size_t i = 0; i < out.size(); ++i) out[i] = apply(av[i], bv[i]);
  } else {
    for_each_broadcast(out_shape, sa, sb,
                       [&](int64_t o, int64_t ia, int64_t ib) { out[o] = apply(av[ia], bv[ib]); });
  }
  const char* name = kind == BinaryKind::kAdd ? "add" : kind == BinaryKind::kSub ? "sub" : "mul";
  return detail::make_result<T>(
      name, out_shape, std::move(out), {a, b}, [=](Node<T>& node) {
        std::vector<T>* ga = input_grad(node, 0);
        std::vector<T>* gb = input_grad(node, 1);
        const T* go = node.grad.data();
        const T* x = node.inputs[0]->data.data();
        const T* y = node.inputs[1]->data.data();
        auto step = [&](int64_t o, int64_t ia, int64_t ib) {
          const T g = go[o];
          switch (kind) {
            case BinaryKind::kAdd:
              if (ga) (*ga)[ia] += g;
              if (gb) (*gb)[ib] += g;
              break;
            case BinaryKind::kSub:
              if (ga) (*ga)[ia] += g;
              if (gb) (*gb)[ib] -= g;
              break;
            case BinaryKind::kMul:
              if (ga) (*ga)[ia] += g * y[ib];
              if (gb) (*gb)[ib] += g * x[ia];
              break;
          }
        };
        if (same) {
          const int64_t total = numel(out_shape);
          for (int64_t o = 0; o < total; ++o) step(o, o, o);
        } else {
          for_each_broadcast(out_shape, sa, sb, step);
        }
      });
}

// ------------------------------------------------------ layout and reduce

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& axes) {
  const size_t r = static_cast<size_t>(x.rank());
  require(axes.size() == r, "permute: axes rank mismatch");
  std::vector<bool> seen(r, false);
  for (int a : axes) {
    require(a >= 0 && static_cast<size_t>(a) < r && !seen[a], "permute: invalid axes");
    seen[a] = true;
  }
  const Shape& in_shape = x.shape();
  std::vector<int64_t> in_strides(r);
  int64_t acc = 1;
  for (size_t k = r; k-- > 0;) {
    in_strides[k] = acc;
    acc *= in_shape[k];
  }
  Shape out_shape(r);
  std::vector<int64_t> src_strides(r);
  for (size_t i = 0; i < r; ++i) {
    out_shape[i] = in_shape[axes[i]];
    src_strides[i] = in_strides[axes[i]];
  }
  // map[o] = source flat index of output element o
  std::vector<int64_t> map(static_cast<size_t>(x.numel()));
  const std::vector<int64_t> zero(r, 0);
  for_each_broadcast(out_shape, src_strides, zero,
                     [&](int64_t o, int64_t src, int64_t) { map[o] = src; });
  const T* xv = x.data().data();
  std::vector<T> out(map.size());
  for (size_t o = 0; o < map.size(); ++o) out[o] = xv[map[o]];
  return detail::make_result<T>(
      "permute", std::move(out_shape), std::move(out), {x},
      [map = std::move(map)](Node<T>& node) {
        std::vector<T>* gx = input_grad(node, 0);
        if (!gx) return;
        for (size_t o = 0; o < map.size(); ++o) (*gx)[map[o]] += node.grad[o];
      });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  require(numel(shape) == x.numel(),
          "reshape: " + shape_str(x.shape()) + " to " + shape_str(shape) + " changes size");
  std::vector<T> out(x.data().begin(), x.data().end());
  return detail::make_result<T>("reshape", std::move(shape), std::move(out), {x},
                                [](Node<T>& node) {
                                  std::vector<T>* gx = input_grad(node, 0);
                                  if (!gx) return;
                                  for (size_t i = 0; i < gx->size(); ++i) (*gx)[i] += node.grad[i];
                                });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = 0;
  for (T v : x.data()) acc += v;
  return detail::make_result<T>("sum", {1}, {acc}, {x}, [](Node<T>& node) {
    std::vector<T>* gx = input_grad(node, 0);
    if (!gx) return;
    for (T& g : *gx) g += node.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  const T inv = T(1) / T(x.numel());
  T acc = 0;
  for (T v : x.data()) acc += v;
  return detail::make_result<T>("mean", {1}, {acc * inv}, {x}, [inv](Node<T>& node) {
    std::vector<T>* gx = input_grad(node, 0);
    if (!gx) return;
    for (T& g : *gx) g += node.grad[0] * inv;
  });
}

#define SSMPOSE_INSTANTIATE_OPS(T)                                                               \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&,                               \
                               const std::optional<Tensor<T>>&, const Conv2dOptions&);           \
  template Tensor<T> conv_transpose2d<T>(const Tensor<T>&, const Tensor<T>&,                     \
                                         const std::optional<Tensor<T>>&,                        \
                                         const ConvTranspose2dOptions&);                         \
  template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&,                               \
                               const std::optional<Tensor<T>>&);                                 \
  template Tensor<T> layer_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double); \
  template Tensor<T> unary<T>(UnaryKind, const Tensor<T>&);                                      \
  template Tensor<T> binary<T>(BinaryKind, const Tensor<T>&, const Tensor<T>&);                  \
  template Tensor<T> permute<T>(const Tensor<T>&, const std::vector<int>&);                      \
  template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                        \
  template Tensor<T> sum<T>(const Tensor<T>&);                                                   \
  template Tensor<T> mean<T>(const Tensor<T>&);

SSMPOSE_INSTANTIATE_OPS(float)
SSMPOSE_INSTANTIATE_OPS(double)

#undef SSMPOSE_INSTANTIATE_OPS

}  // namespace ssmpose

#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "fgst/tape.hpp"
#include "fgst/tensor.hpp"

namespace fgst {

// Elementwise and dense linear-algebra ops. Each op records one tape node;
// backward closures accumulate into input grads only when the buffer exists
// (non-trainable leaves never get one).

inline TensorPtr add(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
  check_same_shape(*a, *b, "add");
  auto out = make_tensor(a->shape);
  for (std::size_t i = 0; i < out->numel(); ++i) out->data[i] = a->data[i] + b->data[i];
  return tape.record("add", {a, b}, out, [a, b, out] {
    if (grad_ready(*a))
      for (std::size_t i = 0; i < out->numel(); ++i) a->grad[i] += out->grad[i];
    if (grad_ready(*b))
      for (std::size_t i = 0; i < out->numel(); ++i) b->grad[i] += out->grad[i];
  });
}

inline TensorPtr sub(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
  check_same_shape(*a, *b, "sub");
  auto out = make_tensor(a->shape);
  for (std::size_t i = 0; i < out->numel(); ++i) out->data[i] = a->data[i] - b->data[i];
  return tape.record("sub", {a, b}, out, [a, b, out] {
    if (grad_ready(*a))
      for (std::size_t i = 0; i < out->numel(); ++i) a->grad[i] += out->grad[i];
    if (grad_ready(*b))
      for (std::size_t i = 0; i < out->numel(); ++i) b->grad[i] -= out->grad[i];
  });
}

inline TensorPtr mul(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
  check_same_shape(*a, *b, "mul");
  auto out = make_tensor(a->shape);
  for (std::size_t i = 0; i < out->numel(); ++i) out->data[i] = a->data[i] * b->data[i];
  return tape.record("mul", {a, b}, out, [a, b, out] {
    if (grad_ready(*a))
      for (std::size_t i = 0; i < out->numel(); ++i) a->grad[i] += out->grad[i] * b->data[i];
    if (grad_ready(*b))
      for (std::size_t i = 0; i < out->numel(); ++i) b->grad[i] += out->grad[i] * a->data[i];
  });
}

inline TensorPtr scale(Tape& tape, const TensorPtr& a, double s) {
  auto out = make_tensor(a->shape);
  for (std::size_t i = 0; i < out->numel(); ++i) out->data[i] = a->data[i] * s;
  return tape.record("scale", {a}, out, [a, out, s] {
    if (grad_ready(*a))
      for (std::size_t i = 0; i < out->numel(); ++i) a->grad[i] += out->grad[i] * s;
  });
}

inline TensorPtr sum_all(Tape& tape, const TensorPtr& a) {
  auto out = make_tensor({1});
  double s = 0.0;
  for (double v : a->data) s += v;
  out->data[0] = s;
  return tape.record("sum_all", {a}, out, [a, out] {
    if (grad_ready(*a))
      for (std::size_t i = 0; i < a->numel(); ++i) a->grad[i] += out->grad[0];
  });
}

inline TensorPtr leaky_relu(Tape& tape, const TensorPtr& x, double slope = 0.1) {
  auto out = make_tensor(x->shape);
  for (std::size_t i = 0; i < out->numel(); ++i)
    out->data[i] = x->data[i] >= 0.0 ? x->data[i] : slope * x->data[i];
  return tape.record("leaky_relu", {x}, out, [x, out, slope] {
    if (!grad_ready(*x)) return;
    for (std::size_t i = 0; i < out->numel(); ++i)
      x->grad[i] += out->grad[i] * (x->data[i] >= 0.0 ? 1.0 : slope);
  });
}

// weight [out,in] applied to input [in].
inline TensorPtr linear(Tape& tape, const TensorPtr& input, const TensorPtr& weight) {
  if (input->rank() != 1 || weight->rank() != 2 || weight->shape[1] != input->shape[0])
    throw std::invalid_argument("linear: need weight [out,in] and input [in], got " +
                                shape_str(weight->shape) + " and " + shape_str(input->shape));
  std::size_t n_out = weight->shape[0], n_in = weight->shape[1];
  auto out = make_tensor({n_out});
  for (std::size_t o = 0; o < n_out; ++o) {
    double s = 0.0;
    const double* w = &weight->data[o * n_in];
    for (std::size_t i = 0; i < n_in; ++i) s += w[i] * input->data[i];
    out->data[o] = s;
  }
  return tape.record("linear", {input, weight}, out, [input, weight, out, n_out, n_in] {
    for (std::size_t o = 0; o < n_out; ++o) {
      double g = out->grad[o];
      if (g == 0.0) continue;
      if (grad_ready(*input)) {
        const double* w = &weight->data[o * n_in];
        for (std::size_t i = 0; i < n_in; ++i) input->grad[i] += g * w[i];
      }
      if (grad_ready(*weight)) {
        double* gw = &weight->grad[o * n_in];
        for (std::size_t i = 0; i < n_in; ++i) gw[i] += g * input->data[i];
      }
    }
  });
}

// Max-shifted softmax over a rank-1 tensor.
inline TensorPtr softmax(Tape& tape, const TensorPtr& logits) {
  if (logits->rank() != 1 || logits->numel() == 0)
    throw std::invalid_argument("softmax: need non-empty rank-1 input");
  auto out = make_tensor(logits->shape);
  double mx = *std::max_element(logits->data.begin(), logits->data.end());
  double z = 0.0;
  for (std::size_t i = 0; i < out->numel(); ++i) {
    out->data[i] = std::exp(logits->data[i] - mx);
    z += out->data[i];
  }
  for (auto& v : out->data) v /= z;
  return tape.record("softmax", {logits}, out, [logits, out] {
    if (!grad_ready(*logits)) return;
    double inner = 0.0;
    for (std::size_t i = 0; i < out->numel(); ++i) inner += out->grad[i] * out->data[i];
    for (std::size_t i = 0; i < out->numel(); ++i)
      logits->grad[i] += out->data[i] * (out->grad[i] - inner);
  });
}

inline std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride,
                                   std::size_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

// input [C_in,H,W], kernel [C_out,C_in,kh,kw], optional bias [C_out].
// Zero padding; output extent floor((H + 2 pad - k)/stride) + 1.
inline TensorPtr conv2d(Tape& tape, const TensorPtr& input, const TensorPtr& kernel,
                        const TensorPtr& bias, std::size_t stride, std::size_t pad) {
  if (input->rank() != 3 || kernel->rank() != 4)
    throw std::invalid_argument("conv2d: need input [C,H,W] and kernel [Co,Ci,kh,kw], got " +
                                shape_str(input->shape) + " and " + shape_str(kernel->shape));
  if (kernel->shape[1] != input->shape[0])
    throw std::invalid_argument("conv2d: input channels " + std::to_string(input->shape[0]) +
                                " do not match kernel channels " +
                                std::to_string(kernel->shape[1]));
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  std::size_t ci = input->shape[0], h = input->shape[1], w = input->shape[2];
  std::size_t co = kernel->shape[0], kh = kernel->shape[2], kw = kernel->shape[3];
  if (h + 2 * pad < kh || w + 2 * pad < kw)
    throw std::invalid_argument("conv2d: padded extents smaller than kernel");
  if (bias && (bias->rank() != 1 || bias->shape[0] != co))
    throw std::invalid_argument("conv2d: bias must be [C_out]");
  std::size_t oh = conv_out_extent(h, kh, stride, pad);
  std::size_t ow = conv_out_extent(w, kw, stride, pad);
  auto out = make_tensor({co, oh, ow});

  for (std::size_t oc = 0; oc < co; ++oc) {
    double b = bias ? bias->data[oc] : 0.0;
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        double s = b;
        for (std::size_t ic = 0; ic < ci; ++ic) {
          const double* in_c = &input->data[ic * h * w];
          const double* k_c = &kernel->data[((oc * ci + ic) * kh) * kw];
          for (std::size_t ky = 0; ky < kh; ++ky) {
            std::ptrdiff_t iy =
                static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t kx = 0; kx < kw; ++kx) {
              std::ptrdiff_t ix =
                  static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
              s += in_c[iy * static_cast<std::ptrdiff_t>(w) + ix] * k_c[ky * kw + kx];
            }
          }
        }
        out->data[(oc * oh + oy) * ow + ox] = s;
      }
  }

  std::vector<TensorPtr> inputs = {input, kernel};
  if (bias) inputs.push_back(bias);
  return tape.record("conv2d", std::move(inputs), out,
                     [input, kernel, bias, out, stride, pad, ci, h, w, co, kh, kw] {
                       std::size_t oh = out->shape[1], ow = out->shape[2];
                       bool gi = grad_ready(*input), gk = grad_ready(*kernel);
                       bool gb = bias && grad_ready(*bias);
                       if (!gi && !gk && !gb) return;
                       for (std::size_t oc = 0; oc < co; ++oc)
                         for (std::size_t oy = 0; oy < oh; ++oy)
                           for (std::size_t ox = 0; ox < ow; ++ox) {
                             double g = out->grad[(oc * oh + oy) * ow + ox];
                             if (g == 0.0) continue;
                             if (gb) bias->grad[oc] += g;
                             if (!gi && !gk) continue;
                             for (std::size_t ic = 0; ic < ci; ++ic) {
                               std::size_t koff = ((oc * ci + ic) * kh) * kw;
                               for (std::size_t ky = 0; ky < kh; ++ky) {
                                 std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                                     static_cast<std::ptrdiff_t>(pad);
                                 if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                                 for (std::size_t kx = 0; kx < kw; ++kx) {
                                   std::ptrdiff_t ix =
                                       static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                       static_cast<std::ptrdiff_t>(pad);
                                   if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                                   std::size_t ii =
                                       ic * h * w + static_cast<std::size_t>(iy) * w +
                                       static_cast<std::size_t>(ix);
                                   if (gi) input->grad[ii] += g * kernel->data[koff + ky * kw + kx];
                                   if (gk) kernel->grad[koff + ky * kw + kx] += g * input->data[ii];
                                 }
                               }
                             }
                           }
                     });
}

inline TensorPtr conv2d(Tape& tape, const TensorPtr& input, const TensorPtr& kernel,
                        std::size_t stride, std::size_t pad) {
  return conv2d(tape, input, kernel, nullptr, stride, pad);
}

// Transposed convolution, the adjoint of conv2d with the same kernel tensor:
// kernel [A,B,kh,kw] maps input [A,H,W] to output [B,(H-1)s+kh,(W-1)s+kw].
inline TensorPtr deconv2d(Tape& tape, const TensorPtr& input, const TensorPtr& kernel,
                          const TensorPtr& bias, std::size_t stride) {
  if (input->rank() != 3 || kernel->rank() != 4)
    throw std::invalid_argument("deconv2d: need input [C,H,W] and kernel [Co,Ci,kh,kw], got " +
                                shape_str(input->shape) + " and " + shape_str(kernel->shape));
  if (kernel->shape[0] != input->shape[0])
    throw std::invalid_argument("deconv2d: input channels " + std::to_string(input->shape[0]) +
                                " do not match kernel leading extent " +
                                std::to_string(kernel->shape[0]));
  if (stride < 1) throw std::invalid_argument("deconv2d: stride must be >= 1");
  std::size_t ca = input->shape[0], h = input->shape[1], w = input->shape[2];
  std::size_t cb = kernel->shape[1], kh = kernel->shape[2], kw = kernel->shape[3];
  if (bias && (bias->rank() != 1 || bias->shape[0] != cb))
    throw std::invalid_argument("deconv2d: bias must match output channels");
  std::size_t oh = (h - 1) * stride + kh;
  std::size_t ow = (w - 1) * stride + kw;
  auto out = make_tensor({cb, oh, ow});

  if (bias)
    for (std::size_t oc = 0; oc < cb; ++oc)
      for (std::size_t i = 0; i < oh * ow; ++i) out->data[oc * oh * ow + i] = bias->data[oc];
  for (std::size_t ac = 0; ac < ca; ++ac)
    for (std::size_t iy = 0; iy < h; ++iy)
      for (std::size_t ix = 0; ix < w; ++ix) {
        double v = input->data[(ac * h + iy) * w + ix];
        if (v == 0.0) continue;
        for (std::size_t bc = 0; bc < cb; ++bc) {
          const double* k_c = &kernel->data[((ac * cb + bc) * kh) * kw];
          double* out_c = &out->data[bc * oh * ow];
          for (std::size_t ky = 0; ky < kh; ++ky)
            for (std::size_t kx = 0; kx < kw; ++kx)
              out_c[(iy * stride + ky) * ow + ix * stride + kx] += v * k_c[ky * kw + kx];
        }
      }

  std::vector<TensorPtr> inputs = {input, kernel};
  if (bias) inputs.push_back(bias);
  return tape.record("deconv2d", std::move(inputs), out,
                     [input, kernel, bias, out, stride, ca, h, w, cb, kh, kw] {
                       std::size_t oh = out->shape[1], ow = out->shape[2];
                       bool gi = grad_ready(*input), gk = grad_ready(*kernel);
                       if (bias && grad_ready(*bias))
                         for (std::size_t bc = 0; bc < cb; ++bc) {
                           double s = 0.0;
                           const double* g_c = &out->grad[bc * oh * ow];
                           for (std::size_t i = 0; i < oh * ow; ++i) s += g_c[i];
                           bias->grad[bc] += s;
                         }
                       if (!gi && !gk) return;
                       for (std::size_t ac = 0; ac < ca; ++ac)
                         for (std::size_t iy = 0; iy < h; ++iy)
                           for (std::size_t ix = 0; ix < w; ++ix) {
                             std::size_t ii = (ac * h + iy) * w + ix;
                             double acc = 0.0;
                             for (std::size_t bc = 0; bc < cb; ++bc) {
                               std::size_t koff = ((ac * cb + bc) * kh) * kw;
                               const double* g_c = &out->grad[bc * oh * ow];
                               for (std::size_t ky = 0; ky < kh; ++ky)
                                 for (std::size_t kx = 0; kx < kw; ++kx) {
                                   double g = g_c[(iy * stride + ky) * ow + ix * stride + kx];
                                   if (gi) acc += g * kernel->data[koff + ky * kw + kx];
                                   if (gk)
                                     kernel->grad[koff + ky * kw + kx] += g * input->data[ii];
                                 }
                             }
                             if (gi) input->grad[ii] += acc;
                           }
                     });
}

inline TensorPtr deconv2d(Tape& tape, const TensorPtr& input, const TensorPtr& kernel,
                          std::size_t stride) {
  return deconv2d(tape, input, kernel, nullptr, stride);
}

// Normalizes over axis 0 (channels) per remaining-axes site, then applies the
// per-channel affine. Accepts rank-1 [C] vectors or rank-3 [C,H,W] maps.
inline TensorPtr layer_norm(Tape& tape, const TensorPtr& x, const TensorPtr& gain,
                            const TensorPtr& bias, double eps = 1e-5) {
  if (x->rank() != 1 && x->rank() != 3)
    throw std::invalid_argument("layer_norm: need [C] or [C,H,W], got " + shape_str(x->shape));
  std::size_t c = x->shape[0];
  std::size_t sites = x->numel() / c;
  if (gain->numel() != c || bias->numel() != c)
    throw std::invalid_argument("layer_norm: gain/bias extent must equal channel extent " +
                                std::to_string(c));
  auto out = make_tensor(x->shape);
  auto mean = std::make_shared<std::vector<double>>(sites);
  auto inv_std = std::make_shared<std::vector<double>>(sites);

  for (std::size_t s = 0; s < sites; ++s) {
    double mu = 0.0;
    for (std::size_t ch = 0; ch < c; ++ch) mu += x->data[ch * sites + s];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t ch = 0; ch < c; ++ch) {
      double d = x->data[ch * sites + s] - mu;
      var += d * d;
    }
    var /= static_cast<double>(c);
    double is = 1.0 / std::sqrt(var + eps);
    (*mean)[s] = mu;
    (*inv_std)[s] = is;
    for (std::size_t ch = 0; ch < c; ++ch)
      out->data[ch * sites + s] =
          gain->data[ch] * ((x->data[ch * sites + s] - mu) * is) + bias->data[ch];
  }

  return tape.record("layer_norm", {x, gain, bias}, out,
                     [x, gain, bias, out, mean, inv_std, c, sites] {
                       bool gx = grad_ready(*x), gg = grad_ready(*gain), gb = grad_ready(*bias);
                       if (!gx && !gg && !gb) return;
                       for (std::size_t s = 0; s < sites; ++s) {
                         double mu = (*mean)[s], is = (*inv_std)[s];
                         double sum_gxhat = 0.0, sum_gxhat_xhat = 0.0;
                         for (std::size_t ch = 0; ch < c; ++ch) {
                           double xhat = (x->data[ch * sites + s] - mu) * is;
                           double go = out->grad[ch * sites + s];
                           double gxhat = go * gain->data[ch];
                           sum_gxhat += gxhat;
                           sum_gxhat_xhat += gxhat * xhat;
                           if (gg) gain->grad[ch] += go * xhat;
                           if (gb) bias->grad[ch] += go;
                         }
                         if (!gx) continue;
                         double inv_c = 1.0 / static_cast<double>(c);
                         for (std::size_t ch = 0; ch < c; ++ch) {
                           double xhat = (x->data[ch * sites + s] - mu) * is;
                           double gxhat = out->grad[ch * sites + s] * gain->data[ch];
                           x->grad[ch * sites + s] +=
                               is * (gxhat - inv_c * sum_gxhat - inv_c * xhat * sum_gxhat_xhat);
                         }
                       }
                     });
}

inline TensorPtr concat_channels(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
  if (a->rank() != 3 || b->rank() != 3 || a->shape[1] != b->shape[1] ||
      a->shape[2] != b->shape[2])
    throw std::invalid_argument("concat_channels: need [Ca,H,W] and [Cb,H,W], got " +
                                shape_str(a->shape) + " and " + shape_str(b->shape));
  std::size_t plane = a->shape[1] * a->shape[2];
  auto out = make_tensor({a->shape[0] + b->shape[0], a->shape[1], a->shape[2]});
  std::copy(a->data.begin(), a->data.end(), out->data.begin());
  std::copy(b->data.begin(), b->data.end(), out->data.begin() + static_cast<std::ptrdiff_t>(
                                                                    a->shape[0] * plane));
  return tape.record("concat_channels", {a, b}, out, [a, b, out] {
    std::size_t na = a->numel();
    if (grad_ready(*a))
      for (std::size_t i = 0; i < na; ++i) a->grad[i] += out->grad[i];
    if (grad_ready(*b))
      for (std::size_t i = 0; i < b->numel(); ++i) b->grad[i] += out->grad[na + i];
  });
}

// Mean absolute difference, reduced to a scalar.
inline TensorPtr l1_loss(Tape& tape, const TensorPtr& pred, const TensorPtr& target) {
  check_same_shape(*pred, *target, "l1_loss");
  auto out = make_tensor({1});
  double s = 0.0;
  for (std::size_t i = 0; i < pred->numel(); ++i) s += std::abs(pred->data[i] - target->data[i]);
  double inv_n = 1.0 / static_cast<double>(pred->numel());
  out->data[0] = s * inv_n;
  return tape.record("l1_loss", {pred, target}, out, [pred, target, out, inv_n] {
    double g = out->grad[0] * inv_n;
    bool gp = grad_ready(*pred), gt = grad_ready(*target);
    if (!gp && !gt) return;
    for (std::size_t i = 0; i < pred->numel(); ++i) {
      double d = pred->data[i] - target->data[i];
      double sgn = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
      if (gp) pred->grad[i] += g * sgn;
      if (gt) target->grad[i] -= g * sgn;
    }
  });
}

// Smoothed absolute error, mean of sqrt(d^2 + eps^2) - eps. The gradient fades
// linearly near zero residual instead of jumping between -1 and +1, so exact
// matches do not pin the optimizer to the identity, and a perfect prediction
// scores exactly zero.
inline TensorPtr charbonnier_loss(Tape& tape, const TensorPtr& pred, const TensorPtr& target,
                                  double eps = 1e-3) {
  check_same_shape(*pred, *target, "charbonnier_loss");
  if (!(eps > 0.0)) throw std::invalid_argument("charbonnier_loss: eps must be positive");
  auto out = make_tensor({1});
  double e2 = eps * eps, s = 0.0;
  for (std::size_t i = 0; i < pred->numel(); ++i) {
    double d = pred->data[i] - target->data[i];
    s += std::sqrt(d * d + e2) - eps;
  }
  double inv_n = 1.0 / static_cast<double>(pred->numel());
  out->data[0] = s * inv_n;
  return tape.record("charbonnier_loss", {pred, target}, out, [pred, target, out, inv_n, e2] {
    double g = out->grad[0] * inv_n;
    bool gp = grad_ready(*pred), gt = grad_ready(*target);
    if (!gp && !gt) return;
    for (std::size_t i = 0; i < pred->numel(); ++i) {
      double d = pred->data[i] - target->data[i];
      double dd = g * d / std::sqrt(d * d + e2);
      if (gp) pred->grad[i] += dd;
      if (gt) target->grad[i] -= dd;
    }
  });
}

}  // namespace fgst

#pragma once

#include <cmath>
#include <memory>
#include <stdexcept>
#include <vector>

#include "fgst/attention.hpp"
#include "fgst/flow.hpp"
#include "fgst/ops.hpp"
#include "fgst/tape.hpp"

namespace fgst {

struct ResBlockParams {
  TensorPtr k1, b1, k2, b2;  // two 3x3 convs at constant width
};

inline ResBlockParams make_res_block(std::size_t c) {
  return {make_param({c, c, 3, 3}), make_param({c}), make_param({c, c, 3, 3}), make_param({c})};
}

inline void init_res_block(ResBlockParams& p, std::mt19937_64& rng) {
  init_fan_in(*p.k1, p.k1->shape[1] * 9, rng);
  init_fan_in(*p.k2, p.k2->shape[1] * 9, rng);
}

inline TensorPtr residual_block(Tape& tape, const TensorPtr& x, const ResBlockParams& p,
                                double slope = 0.1) {
  if (x->rank() != 3 || x->shape[0] != p.k1->shape[1])
    throw std::invalid_argument("residual_block: input " + shape_str(x->shape) +
                                " does not match parameter width");
  auto inner = conv2d(tape, x, p.k1, p.b1, 1, 1);
  auto branch = conv2d(tape, leaky_relu(tape, inner, slope), p.k2, p.b2, 1, 1);
  return add(tape, x, branch);
}

// Downsamples by 2 and doubles channels via a strided 4x4 conv.
inline TensorPtr patch_merge(Tape& tape, const TensorPtr& x, const TensorPtr& kernel,
                             const TensorPtr& bias) {
  if (x->rank() != 3) throw std::invalid_argument("patch_merge: input must be [C,H,W]");
  std::size_t c = x->shape[0];
  if (x->shape[1] % 2 != 0 || x->shape[2] % 2 != 0)
    throw std::invalid_argument("patch_merge: spatial extents must be even, got " +
                                shape_str(x->shape));
  if (kernel->rank() != 4 || kernel->shape[0] != 2 * c || kernel->shape[1] != c ||
      kernel->shape[2] != 4 || kernel->shape[3] != 4)
    throw std::invalid_argument("patch_merge: kernel must be [2C,C,4,4]");
  return conv2d(tape, x, kernel, bias, 2, 1);
}

// Upsamples by 2 and halves channels via a strided 2x2 transposed conv.
inline TensorPtr patch_expand(Tape& tape, const TensorPtr& x, const TensorPtr& kernel,
                              const TensorPtr& bias) {
  if (x->rank() != 3) throw std::invalid_argument("patch_expand: input must be [C,H,W]");
  std::size_t c2 = x->shape[0];
  if (c2 % 2 != 0)
    throw std::invalid_argument("patch_expand: channel count must be even, got " +
                                std::to_string(c2));
  if (kernel->rank() != 4 || kernel->shape[0] != c2 || kernel->shape[1] != c2 / 2 ||
      kernel->shape[2] != 2 || kernel->shape[3] != 2)
    throw std::invalid_argument("patch_expand: kernel must be [2C,C,2,2]");
  return deconv2d(tape, x, kernel, bias, 2);
}

// Backward warping: out(i,j) samples y_prev at (i+d0, j+d1) with bilinear
// weights and border clamping. The flow is an index map, not a differentiable
// input; gradients flow to y_prev values only. Integer sample positions take
// a direct-copy path, so zero flow is the exact identity.
inline TensorPtr warp_feature(Tape& tape, const TensorPtr& y_prev, const FlowField& flow) {
  if (y_prev->rank() != 3) throw std::invalid_argument("warp_feature: input must be [C,H,W]");
  std::size_t c = y_prev->shape[0], h = y_prev->shape[1], w = y_prev->shape[2];
  if (flow.rows() != h || flow.cols() != w)
    throw std::invalid_argument("warp_feature: flow resolution " + std::to_string(flow.rows()) +
                                "x" + std::to_string(flow.cols()) + " does not match feature " +
                                shape_str(y_prev->shape));

  struct Sample {
    std::size_t y0, x0, y1, x1;
    double wy, wx;
  };
  auto samples = std::make_shared<std::vector<Sample>>(h * w);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      double py = static_cast<double>(i) + flow.d0(i, j);
      double px = static_cast<double>(j) + flow.d1(i, j);
      if (!std::isfinite(py) || !std::isfinite(px))
        throw std::invalid_argument("warp_feature: non-finite flow value");
      py = std::min(std::max(py, 0.0), static_cast<double>(h - 1));
      px = std::min(std::max(px, 0.0), static_cast<double>(w - 1));
      std::size_t y0 = static_cast<std::size_t>(py);
      std::size_t x0 = static_cast<std::size_t>(px);
      Sample s;
      s.wy = py - static_cast<double>(y0);
      s.wx = px - static_cast<double>(x0);
      s.y0 = y0;
      s.x0 = x0;
      s.y1 = std::min(y0 + 1, h - 1);
      s.x1 = std::min(x0 + 1, w - 1);
      (*samples)[i * w + j] = s;
    }

  auto out = make_tensor(y_prev->shape);
  std::size_t plane = h * w;
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* src = &y_prev->data[ch * plane];
    double* dst = &out->data[ch * plane];
    for (std::size_t s_i = 0; s_i < plane; ++s_i) {
      const Sample& s = (*samples)[s_i];
      if (s.wy == 0.0 && s.wx == 0.0) {
        dst[s_i] = src[s.y0 * w + s.x0];
      } else {
        dst[s_i] = (1.0 - s.wy) * ((1.0 - s.wx) * src[s.y0 * w + s.x0] +
                                   s.wx * src[s.y0 * w + s.x1]) +
                   s.wy * ((1.0 - s.wx) * src[s.y1 * w + s.x0] + s.wx * src[s.y1 * w + s.x1]);
      }
    }
  }

  return tape.record("warp_feature", {y_prev}, out, [y_prev, out, samples, c, w, plane] {
    if (!grad_ready(*y_prev)) return;
    for (std::size_t ch = 0; ch < c; ++ch) {
      double* g_src = &y_prev->grad[ch * plane];
      const double* g_dst = &out->grad[ch * plane];
      for (std::size_t s_i = 0; s_i < plane; ++s_i) {
        const Sample& s = (*samples)[s_i];
        double g = g_dst[s_i];
        if (g == 0.0) continue;
        if (s.wy == 0.0 && s.wx == 0.0) {
          g_src[s.y0 * w + s.x0] += g;
        } else {
          g_src[s.y0 * w + s.x0] += g * (1.0 - s.wy) * (1.0 - s.wx);
          g_src[s.y0 * w + s.x1] += g * (1.0 - s.wy) * s.wx;
          g_src[s.y1 * w + s.x0] += g * s.wy * (1.0 - s.wx);
          g_src[s.y1 * w + s.x1] += g * s.wy * s.wx;
        }
      }
    }
  });
}

enum class AttentionMode { flow_guided, prewarp };

// One attention block: recurrent-embedding fusion, LN, windowed flow-guided
// attention with a skip, then a residual-block FFN whose per-block skips
// carry the second identity path.
struct FgabParams {
  std::size_t channels = 0;
  TensorPtr ln_gain, ln_bias;    // [C]
  AttentionParams attn;
  TensorPtr fc_kernel, fc_bias;  // [C,2C,3,3], [C]: fuses [embedding, features]
  std::vector<ResBlockParams> ffn;  // exactly 5
};

inline FgabParams make_fgab_params(std::size_t c, std::size_t heads) {
  FgabParams p;
  p.channels = c;
  p.ln_gain = make_param({c});
  p.ln_bias = make_param({c});
  p.attn = make_attention_params(c, heads);
  p.fc_kernel = make_param({c, 2 * c, 3, 3});
  p.fc_bias = make_param({c});
  for (int i = 0; i < 5; ++i) p.ffn.push_back(make_res_block(c));
  return p;
}

// Default trainable state: LN gain 1, weights fan-in uniform, biases zero.
inline void init_fgab_params(FgabParams& p, std::mt19937_64& rng) {
  for (auto& g : p.ln_gain->data) g = 1.0;
  init_attention_params(p.attn, rng);
  init_fan_in(*p.fc_kernel, 2 * p.channels * 9, rng);
  for (auto& rb : p.ffn) init_res_block(rb, rng);
}

namespace detail {

inline FlowLevelSet zero_flow_set(int t_count, int t, int r, std::size_t h, std::size_t w,
                                  int level) {
  FlowLevelSet set;
  set.level = level;
  for (int f_raw = t - r; f_raw <= t + r; ++f_raw) {
    int f = clamp_int(f_raw, 0, t_count - 1);
    if (!set.has(t, f)) set.fields.emplace(std::pair(t, f), estimate_constant(h, w, 0.0, 0.0, t, f));
  }
  return set;
}

}  // namespace detail

// One time step of one FGAB layer. prev_layer holds the previous layer's
// full sequence (the key source); prev_layer_ln holds its pre-normalized
// frames and may be empty, in which case the needed frames are normalized
// here. state_prev is the previous time step's output of this layer, or null
// at the sequence start (the embedding is then the zero map).
inline TensorPtr fgab_step(Tape& tape, const FrameSeq& prev_layer, const FrameSeq& prev_layer_ln,
                           int t, const TensorPtr& state_prev, const FlowLevelSet& flows,
                           const FgabParams& params, std::size_t m, int r,
                           AttentionMode mode = AttentionMode::flow_guided,
                           AttnTrace* trace = nullptr) {
  int t_count = static_cast<int>(prev_layer.size());
  if (t < 0 || t >= t_count) throw std::invalid_argument("fgab_step: frame index out of range");
  const TensorPtr& y_in = prev_layer[static_cast<std::size_t>(t)];
  if (!y_in || y_in->rank() != 3 || y_in->shape[0] != params.channels)
    throw std::invalid_argument("fgab_step: features do not match block width");
  std::size_t h = y_in->shape[1], w = y_in->shape[2];

  TensorPtr e;
  if (state_prev) {
    check_same_shape(*state_prev, *y_in, "fgab_step state");
    e = warp_feature(tape, state_prev, flows.get(t, t - 1));
  } else {
    e = make_tensor(y_in->shape);
  }
  auto q = conv2d(tape, concat_channels(tape, e, y_in), params.fc_kernel, params.fc_bias, 1, 1);
  auto lnq = layer_norm(tape, q, params.ln_gain, params.ln_bias);

  FrameSeq keys(prev_layer.size());
  for (int f_raw = t - r; f_raw <= t + r; ++f_raw) {
    int f = detail::clamp_int(f_raw, 0, t_count - 1);
    auto fi = static_cast<std::size_t>(f);
    if (keys[fi]) continue;
    TensorPtr ln_f = fi < prev_layer_ln.size() && prev_layer_ln[fi]
                         ? prev_layer_ln[fi]
                         : layer_norm(tape, prev_layer[fi], params.ln_gain, params.ln_bias);
    if (mode == AttentionMode::prewarp && f != t)
      ln_f = warp_feature(tape, ln_f, flows.get(t, f));
    keys[fi] = ln_f;
  }

  TensorPtr attn_out;
  if (mode == AttentionMode::prewarp) {
    FlowLevelSet zeros = detail::zero_flow_set(t_count, t, r, h, w, flows.level);
    attn_out = fgsw_msa(tape, lnq, keys, t, zeros, params.attn, m, r, trace);
  } else {
    attn_out = fgsw_msa(tape, lnq, keys, t, flows, params.attn, m, r, trace);
  }
  auto o = add(tape, attn_out, q);

  auto y = o;
  for (const auto& rb : params.ffn) y = residual_block(tape, y, rb);
  return y;
}

// Runs one FGAB layer over the whole sequence. Keys are normalized once per
// layer; the recurrent state threads each step's output into the next unless
// the recurrent embedding is disabled.
inline FrameSeq fgab_layer(Tape& tape, const FrameSeq& prev_layer, const FlowLevelSet& flows,
                           const FgabParams& params, std::size_t m, int r, bool use_re = true,
                           AttentionMode mode = AttentionMode::flow_guided,
                           AttnTrace* trace = nullptr) {
  FrameSeq ln_frames;
  for (const auto& f : prev_layer)
    ln_frames.push_back(layer_norm(tape, f, params.ln_gain, params.ln_bias));
  FrameSeq out;
  TensorPtr state;
  for (int t = 0; t < static_cast<int>(prev_layer.size()); ++t) {
    auto y = fgab_step(tape, prev_layer, ln_frames, t, state, flows, params, m, r, mode, trace);
    if (use_re) state = y;
    out.push_back(std::move(y));
  }
  return out;
}

}  // namespace fgst

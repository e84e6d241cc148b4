#pragma once

#include <algorithm>
#include <compare>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fgst/flow.hpp"
#include "fgst/tape.hpp"
#include "fgst/tensor.hpp"

namespace fgst {

struct GridBounds {
  int frames = 1;
  int rows = 1;
  int cols = 1;
};

struct KeyCoord {
  int f = 0;
  int row = 0;
  int col = 0;
  auto operator<=>(const KeyCoord&) const = default;
};

// Deduplicated key coordinates in canonical (frame, row, col) order, so every
// consumer sees the same key sequence and results stay bitwise reproducible.
struct KeyCoordSet {
  std::vector<KeyCoord> coords;
  int origin_t = 0;
  int origin_row = 0;
  int origin_col = 0;

  std::size_t size() const { return coords.size(); }
};

namespace detail {

inline void sort_dedup(std::vector<KeyCoord>& coords) {
  std::sort(coords.begin(), coords.end());
  coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
}

inline int clamp_int(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

inline void append_omega(std::vector<KeyCoord>& out, int i, int j, int t,
                         const FlowLevelSet& flows, int r, const GridBounds& b) {
  for (int f_raw = t - r; f_raw <= t + r; ++f_raw) {
    int f = clamp_int(f_raw, 0, b.frames - 1);
    const FlowField& flow = flows.get(t, f);
    auto [di, dj] = round_offset({flow.d0(static_cast<std::size_t>(i), static_cast<std::size_t>(j)),
                                  flow.d1(static_cast<std::size_t>(i), static_cast<std::size_t>(j))});
    out.push_back({f, clamp_int(i + di, 0, b.rows - 1), clamp_int(j + dj, 0, b.cols - 1)});
  }
}

}  // namespace detail

// Key set of a single query at (i,j) of frame t: one flow-displaced
// coordinate per frame in the temporal radius, border-clamped, deduplicated.
inline KeyCoordSet build_omega(int i, int j, int t, const FlowLevelSet& flows, int r,
                               const GridBounds& bounds) {
  if (r < 0) throw std::invalid_argument("build_omega: r must be >= 0");
  if (t < 0 || t >= bounds.frames || i < 0 || i >= bounds.rows || j < 0 || j >= bounds.cols)
    throw std::invalid_argument("build_omega: position outside bounds");
  KeyCoordSet set;
  set.origin_t = t;
  set.origin_row = i;
  set.origin_col = j;
  detail::append_omega(set.coords, i, j, t, flows, r, bounds);
  detail::sort_dedup(set.coords);
  return set;
}

namespace detail {

inline KeyCoordSet psi_from_range(int r0, int r1, int c0, int c1, int t, const FlowLevelSet& flows,
                                  int r, const GridBounds& b) {
  KeyCoordSet set;
  set.origin_t = t;
  set.origin_row = (r0 + r1) / 2;
  set.origin_col = (c0 + c1) / 2;
  for (int i = r0; i <= r1; ++i)
    for (int j = c0; j <= c1; ++j) append_omega(set.coords, i, j, t, flows, r, b);
  sort_dedup(set.coords);
  return set;
}

}  // namespace detail

// Shared key pool of one M x M window: the union of the member queries' key
// sets. The window is centered at (i,j) and clipped to the frame.
inline KeyCoordSet build_psi(int i, int j, int t, std::size_t m, const FlowLevelSet& flows, int r,
                             const GridBounds& bounds) {
  if (m < 1 || m % 2 == 0) throw std::invalid_argument("build_psi: window size must be odd");
  if (t < 0 || t >= bounds.frames || i < 0 || i >= bounds.rows || j < 0 || j >= bounds.cols)
    throw std::invalid_argument("build_psi: center outside bounds");
  int half = static_cast<int>(m) / 2;
  return detail::psi_from_range(detail::clamp_int(i - half, 0, bounds.rows - 1),
                                detail::clamp_int(i + half, 0, bounds.rows - 1),
                                detail::clamp_int(j - half, 0, bounds.cols - 1),
                                detail::clamp_int(j + half, 0, bounds.cols - 1), t, flows, r,
                                bounds);
}

// Non-overlapping M x M tiling; edge windows are truncated so every pixel
// belongs to exactly one window.
struct WindowGrid {
  struct Window {
    std::size_t r0, r1, c0, c1;  // half-open pixel ranges
  };
  std::size_t m = 1;
  std::size_t rows = 0, cols = 0;
  std::vector<Window> windows;

  WindowGrid(std::size_t rows_, std::size_t cols_, std::size_t m_)
      : m(m_), rows(rows_), cols(cols_) {
    if (m < 1 || m % 2 == 0) throw std::invalid_argument("WindowGrid: window size must be odd");
    for (std::size_t r0 = 0; r0 < rows; r0 += m)
      for (std::size_t c0 = 0; c0 < cols; c0 += m)
        windows.push_back({r0, std::min(r0 + m, rows), c0, std::min(c0 + m, cols)});
  }
};

// Per-head projections. U/V form the logits, W' projects attended values,
// W recombines head outputs.
struct AttentionParams {
  std::size_t c = 0, n = 0, d = 0;
  std::vector<TensorPtr> w;       // n x [C,d]
  std::vector<TensorPtr> wp;      // n x [d,C]
  std::vector<TensorPtr> u;       // n x [d,C]
  std::vector<TensorPtr> v;       // n x [d,C]
};

inline AttentionParams make_attention_params(std::size_t c, std::size_t n) {
  if (n == 0 || c % n != 0)
    throw std::invalid_argument("attention params: channel count " + std::to_string(c) +
                                " not divisible by head count " + std::to_string(n));
  AttentionParams p;
  p.c = c;
  p.n = n;
  p.d = c / n;
  for (std::size_t h = 0; h < n; ++h) {
    p.w.push_back(make_param({c, p.d}));
    p.wp.push_back(make_param({p.d, c}));
    p.u.push_back(make_param({p.d, c}));
    p.v.push_back(make_param({p.d, c}));
  }
  return p;
}

inline void init_attention_params(AttentionParams& p, std::mt19937_64& rng) {
  for (std::size_t h = 0; h < p.n; ++h) {
    init_fan_in(*p.w[h], p.d, rng);
    init_fan_in(*p.wp[h], p.c, rng);
    init_fan_in(*p.u[h], p.c, rng);
    init_fan_in(*p.v[h], p.c, rng);
  }
}

// Diagnostic capture: multiply-accumulate tally plus optional per-query
// attention records (head-averaged weights aligned with the key list).
struct AttnRecord {
  std::string scope;
  int t = 0, row = 0, col = 0;
  std::vector<KeyCoord> coords;
  std::vector<double> weights;
};

struct AttnTrace {
  std::uint64_t macs = 0;
  std::string scope;
  std::vector<AttnRecord>* records = nullptr;
  std::size_t record_limit = static_cast<std::size_t>(-1);

  bool capturing() const { return records != nullptr && records->size() < record_limit; }
};

namespace detail {

// Saved forward state of one window, reused verbatim in backward.
struct AttnWindowState {
  std::vector<KeyCoord> coords;
  std::vector<std::size_t> sites;   // query offsets within a [C,plane] map
  std::vector<double> kv, kw;       // [n][K][d]: projected keys, shared by all queries
  std::vector<double> uq;           // [q][n][d]
  std::vector<double> attn;         // [q][n][K]
};

struct AttnState {
  std::vector<AttnWindowState> windows;
};

// Forward over one window. Key projections happen once per window; each
// query then pays two head-size projections plus per-key dot/accumulate.
inline void attn_forward_window(const AttentionParams& p, const FrameSeq& key_frames,
                                std::size_t key_plane, std::size_t key_cols,
                                const Tensor& query_src, std::size_t query_plane, Tensor& out,
                                AttnWindowState& win, std::uint64_t& macs) {
  std::size_t c = p.c, n = p.n, d = p.d;
  std::size_t nk = win.coords.size();
  double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

  win.kv.assign(n * nk * d, 0.0);
  win.kw.assign(n * nk * d, 0.0);
  std::vector<double> key(c);
  for (std::size_t k = 0; k < nk; ++k) {
    const KeyCoord& kc = win.coords[k];
    const Tensor& frame = *key_frames[static_cast<std::size_t>(kc.f)];
    std::size_t site = static_cast<std::size_t>(kc.row) * key_cols +
                       static_cast<std::size_t>(kc.col);
    for (std::size_t ch = 0; ch < c; ++ch) key[ch] = frame.data[ch * key_plane + site];
    for (std::size_t h = 0; h < n; ++h) {
      const double* vm = p.v[h]->data.data();
      const double* wm = p.wp[h]->data.data();
      double* kv = &win.kv[(h * nk + k) * d];
      double* kw = &win.kw[(h * nk + k) * d];
      for (std::size_t row = 0; row < d; ++row) {
        double sv = 0.0, sw = 0.0;
        const double* vr = &vm[row * c];
        const double* wr = &wm[row * c];
        for (std::size_t ch = 0; ch < c; ++ch) {
          sv += vr[ch] * key[ch];
          sw += wr[ch] * key[ch];
        }
        kv[row] = sv;
        kw[row] = sw;
      }
      macs += 2 * d * c;
    }
  }

  std::size_t nq = win.sites.size();
  win.uq.assign(nq * n * d, 0.0);
  win.attn.assign(nq * n * nk, 0.0);
  std::vector<double> q(c), out_vec(c), head(d), logits(nk);
  for (std::size_t qi = 0; qi < nq; ++qi) {
    std::size_t site = win.sites[qi];
    for (std::size_t ch = 0; ch < c; ++ch) q[ch] = query_src.data[ch * query_plane + site];
    std::fill(out_vec.begin(), out_vec.end(), 0.0);
    for (std::size_t h = 0; h < n; ++h) {
      double* uq = &win.uq[(qi * n + h) * d];
      const double* um = p.u[h]->data.data();
      for (std::size_t row = 0; row < d; ++row) {
        double s = 0.0;
        const double* ur = &um[row * c];
        for (std::size_t ch = 0; ch < c; ++ch) s += ur[ch] * q[ch];
        uq[row] = s;
      }
      macs += d * c;

      for (std::size_t k = 0; k < nk; ++k) {
        const double* kv = &win.kv[(h * nk + k) * d];
        double s = 0.0;
        for (std::size_t row = 0; row < d; ++row) s += uq[row] * kv[row];
        logits[k] = s * inv_sqrt_d;
      }
      macs += nk * d;

      double mx = *std::max_element(logits.begin(), logits.end());
      double z = 0.0;
      double* a = &win.attn[(qi * n + h) * nk];
      for (std::size_t k = 0; k < nk; ++k) {
        a[k] = std::exp(logits[k] - mx);
        z += a[k];
      }
      for (std::size_t k = 0; k < nk; ++k) a[k] /= z;

      std::fill(head.begin(), head.end(), 0.0);
      for (std::size_t k = 0; k < nk; ++k) {
        const double* kw = &win.kw[(h * nk + k) * d];
        double ak = a[k];
        for (std::size_t row = 0; row < d; ++row) head[row] += ak * kw[row];
      }
      macs += nk * d;

      const double* wm = p.w[h]->data.data();
      for (std::size_t ch = 0; ch < c; ++ch) {
        double s = 0.0;
        const double* wr = &wm[ch * d];
        for (std::size_t row = 0; row < d; ++row) s += wr[row] * head[row];
        out_vec[ch] += s;
      }
      macs += c * d;
    }
    for (std::size_t ch = 0; ch < c; ++ch) out.data[ch * query_plane + site] = out_vec[ch];
  }
}

inline void attn_backward_window(const AttentionParams& p, const FrameSeq& key_frames,
                                 std::size_t key_plane, std::size_t key_cols, Tensor& query_src,
                                 std::size_t query_plane,
                                 const Tensor& out, const AttnWindowState& win) {
  std::size_t c = p.c, n = p.n, d = p.d;
  std::size_t nk = win.coords.size();
  std::size_t nq = win.sites.size();
  double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

  std::vector<double> g_kv(n * nk * d, 0.0), g_kw(n * nk * d, 0.0);
  std::vector<double> q(c), g_out(c), g_q(c), head(d), g_head(d), g_uq(d);
  std::vector<double> g_a(nk), g_logit(nk);

  bool query_grad = grad_ready(query_src);
  for (std::size_t qi = 0; qi < nq; ++qi) {
    std::size_t site = win.sites[qi];
    for (std::size_t ch = 0; ch < c; ++ch) {
      q[ch] = query_src.data[ch * query_plane + site];
      g_out[ch] = out.grad[ch * query_plane + site];
    }
    std::fill(g_q.begin(), g_q.end(), 0.0);
    for (std::size_t h = 0; h < n; ++h) {
      const double* a = &win.attn[(qi * n + h) * nk];
      const double* uq = &win.uq[(qi * n + h) * d];

      std::fill(head.begin(), head.end(), 0.0);
      for (std::size_t k = 0; k < nk; ++k) {
        const double* kw = &win.kw[(h * nk + k) * d];
        for (std::size_t row = 0; row < d; ++row) head[row] += a[k] * kw[row];
      }

      const double* wm = p.w[h]->data.data();
      for (std::size_t row = 0; row < d; ++row) {
        double s = 0.0;
        for (std::size_t ch = 0; ch < c; ++ch) s += wm[ch * d + row] * g_out[ch];
        g_head[row] = s;
      }
      if (grad_ready(*p.w[h])) {
        double* gw = p.w[h]->grad.data();
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t row = 0; row < d; ++row) gw[ch * d + row] += g_out[ch] * head[row];
      }

      double inner = 0.0;
      for (std::size_t k = 0; k < nk; ++k) {
        const double* kw = &win.kw[(h * nk + k) * d];
        double s = 0.0;
        for (std::size_t row = 0; row < d; ++row) s += g_head[row] * kw[row];
        g_a[k] = s;
        inner += a[k] * g_a[k];
      }
      for (std::size_t k = 0; k < nk; ++k) g_logit[k] = a[k] * (g_a[k] - inner);

      std::fill(g_uq.begin(), g_uq.end(), 0.0);
      for (std::size_t k = 0; k < nk; ++k) {
        const double* kv = &win.kv[(h * nk + k) * d];
        double gl = g_logit[k] * inv_sqrt_d;
        double* gkv = &g_kv[(h * nk + k) * d];
        double* gkw = &g_kw[(h * nk + k) * d];
        for (std::size_t row = 0; row < d; ++row) {
          g_uq[row] += gl * kv[row];
          gkv[row] += gl * uq[row];
          gkw[row] += a[k] * g_head[row];
        }
      }

      const double* um = p.u[h]->data.data();
      for (std::size_t ch = 0; ch < c; ++ch) {
        double s = 0.0;
        for (std::size_t row = 0; row < d; ++row) s += um[row * c + ch] * g_uq[row];
        g_q[ch] += s;
      }
      if (grad_ready(*p.u[h])) {
        double* gu = p.u[h]->grad.data();
        for (std::size_t row = 0; row < d; ++row)
          for (std::size_t ch = 0; ch < c; ++ch) gu[row * c + ch] += g_uq[row] * q[ch];
      }
    }
    if (query_grad)
      for (std::size_t ch = 0; ch < c; ++ch) query_src.grad[ch * query_plane + site] += g_q[ch];
  }

  std::vector<double> key(c), g_key(c);
  for (std::size_t k = 0; k < nk; ++k) {
    const KeyCoord& kc = win.coords[k];
    Tensor& frame = *key_frames[static_cast<std::size_t>(kc.f)];
    std::size_t site = static_cast<std::size_t>(kc.row) * key_cols +
                       static_cast<std::size_t>(kc.col);
    for (std::size_t ch = 0; ch < c; ++ch) key[ch] = frame.data[ch * key_plane + site];
    std::fill(g_key.begin(), g_key.end(), 0.0);
    for (std::size_t h = 0; h < n; ++h) {
      const double* gkv = &g_kv[(h * nk + k) * d];
      const double* gkw = &g_kw[(h * nk + k) * d];
      const double* vm = p.v[h]->data.data();
      const double* wm = p.wp[h]->data.data();
      for (std::size_t row = 0; row < d; ++row) {
        double gv = gkv[row], gw = gkw[row];
        const double* vr = &vm[row * c];
        const double* wr = &wm[row * c];
        for (std::size_t ch = 0; ch < c; ++ch) g_key[ch] += gv * vr[ch] + gw * wr[ch];
      }
      if (grad_ready(*p.v[h])) {
        double* g = p.v[h]->grad.data();
        for (std::size_t row = 0; row < d; ++row)
          for (std::size_t ch = 0; ch < c; ++ch) g[row * c + ch] += gkv[row] * key[ch];
      }
      if (grad_ready(*p.wp[h])) {
        double* g = p.wp[h]->grad.data();
        for (std::size_t row = 0; row < d; ++row)
          for (std::size_t ch = 0; ch < c; ++ch) g[row * c + ch] += gkw[row] * key[ch];
      }
    }
    if (grad_ready(frame))
      for (std::size_t ch = 0; ch < c; ++ch) frame.grad[ch * key_plane + site] += g_key[ch];
  }
}

inline void validate_attention_inputs(const AttentionParams& p, const FrameSeq& key_frames,
                                      const std::vector<KeyCoord>& coords, const char* op) {
  if (coords.empty()) throw std::invalid_argument(std::string(op) + ": empty key set");
  for (const auto& kc : coords) {
    if (kc.f < 0 || kc.f >= static_cast<int>(key_frames.size()) ||
        !key_frames[static_cast<std::size_t>(kc.f)])
      throw std::invalid_argument(std::string(op) + ": key frame " + std::to_string(kc.f) +
                                  " missing");
    const Tensor& fr = *key_frames[static_cast<std::size_t>(kc.f)];
    if (fr.rank() != 3 || fr.shape[0] != p.c)
      throw std::invalid_argument(std::string(op) + ": key frame shape " + shape_str(fr.shape) +
                                  " does not match C=" + std::to_string(p.c));
    if (kc.row < 0 || kc.row >= static_cast<int>(fr.shape[1]) || kc.col < 0 ||
        kc.col >= static_cast<int>(fr.shape[2]))
      throw std::invalid_argument(std::string(op) + ": key coordinate outside frame");
  }
}

inline std::vector<TensorPtr> attention_node_inputs(const TensorPtr& query,
                                                    const FrameSeq& key_frames,
                                                    const AttentionParams& p) {
  std::vector<TensorPtr> inputs = {query};
  for (const auto& f : key_frames)
    if (f) inputs.push_back(f);
  for (std::size_t h = 0; h < p.n; ++h) {
    inputs.push_back(p.w[h]);
    inputs.push_back(p.wp[h]);
    inputs.push_back(p.u[h]);
    inputs.push_back(p.v[h]);
  }
  return inputs;
}

inline void capture_records(AttnTrace* trace, const AttnWindowState& win, int t,
                            std::size_t query_cols, const AttentionParams& p) {
  if (!trace || !trace->records) return;
  std::size_t nk = win.coords.size();
  for (std::size_t qi = 0; qi < win.sites.size(); ++qi) {
    if (trace->records->size() >= trace->record_limit) return;
    AttnRecord rec;
    rec.scope = trace->scope;
    rec.t = t;
    rec.row = static_cast<int>(win.sites[qi] / query_cols);
    rec.col = static_cast<int>(win.sites[qi] % query_cols);
    rec.coords = win.coords;
    rec.weights.assign(nk, 0.0);
    for (std::size_t h = 0; h < p.n; ++h)
      for (std::size_t k = 0; k < nk; ++k)
        rec.weights[k] += win.attn[(qi * p.n + h) * nk + k] / static_cast<double>(p.n);
    trace->records->push_back(std::move(rec));
  }
}

}  // namespace detail

// Attention of one query vector over an explicit key set.
inline TensorPtr fgs_msa(Tape& tape, const TensorPtr& query, const KeyCoordSet& keys,
                         const FrameSeq& key_frames, const AttentionParams& params,
                         AttnTrace* trace = nullptr) {
  if (query->rank() != 1 || query->shape[0] != params.c)
    throw std::invalid_argument("fgs_msa: query must be [C]");
  detail::validate_attention_inputs(params, key_frames, keys.coords, "fgs_msa");
  const Tensor& any_frame = *key_frames[static_cast<std::size_t>(keys.coords[0].f)];
  std::size_t key_plane = any_frame.shape[1] * any_frame.shape[2];
  std::size_t key_cols = any_frame.shape[2];

  auto out = make_tensor({params.c});
  auto state = std::make_shared<detail::AttnState>();
  state->windows.resize(1);
  auto& win = state->windows[0];
  win.coords = keys.coords;
  win.sites = {0};
  std::uint64_t macs = 0;
  detail::attn_forward_window(params, key_frames, key_plane, key_cols, *query, 1, *out, win, macs);
  if (trace) {
    trace->macs += macs;
    if (trace->capturing()) {
      AttnRecord rec;
      rec.scope = trace->scope;
      rec.t = keys.origin_t;
      rec.row = keys.origin_row;
      rec.col = keys.origin_col;
      rec.coords = win.coords;
      rec.weights.assign(win.coords.size(), 0.0);
      for (std::size_t h = 0; h < params.n; ++h)
        for (std::size_t k = 0; k < win.coords.size(); ++k)
          rec.weights[k] += win.attn[h * win.coords.size() + k] / static_cast<double>(params.n);
      trace->records->push_back(std::move(rec));
    }
  }

  AttentionParams p = params;
  FrameSeq frames = key_frames;
  return tape.record("fgs_msa", detail::attention_node_inputs(query, key_frames, params), out,
                     [p, frames, query, out, state, key_plane, key_cols] {
                       detail::attn_backward_window(p, frames, key_plane, key_cols, *query, 1,
                                                    *out, state->windows[0]);
                     });
}

// Windowed flow-guided attention over a full map: queries come from
// query_map, keys from the per-frame maps at flow-displaced coordinates.
// Each window builds its shared key pool once.
inline TensorPtr fgsw_msa(Tape& tape, const TensorPtr& query_map, const FrameSeq& key_frames,
                          int t, const FlowLevelSet& flows, const AttentionParams& params,
                          std::size_t m, int r, AttnTrace* trace = nullptr) {
  if (query_map->rank() != 3 || query_map->shape[0] != params.c)
    throw std::invalid_argument("fgsw_msa: query map must be [C,H,W]");
  if (t < 0 || t >= static_cast<int>(key_frames.size()))
    throw std::invalid_argument("fgsw_msa: frame index out of range");
  std::size_t h = query_map->shape[1], w = query_map->shape[2];
  for (const auto& f : key_frames)
    if (f && (f->rank() != 3 || f->shape[0] != params.c || f->shape[1] != h || f->shape[2] != w))
      throw std::invalid_argument("fgsw_msa: inconsistent key frame extents");
  GridBounds bounds{static_cast<int>(key_frames.size()), static_cast<int>(h),
                    static_cast<int>(w)};
  WindowGrid grid(h, w, m);

  auto out = make_tensor(query_map->shape);
  auto state = std::make_shared<detail::AttnState>();
  state->windows.resize(grid.windows.size());
  std::uint64_t macs = 0;
  for (std::size_t wi = 0; wi < grid.windows.size(); ++wi) {
    const auto& window = grid.windows[wi];
    auto& win = state->windows[wi];
    KeyCoordSet psi = detail::psi_from_range(
        static_cast<int>(window.r0), static_cast<int>(window.r1) - 1, static_cast<int>(window.c0),
        static_cast<int>(window.c1) - 1, t, flows, r, bounds);
    detail::validate_attention_inputs(params, key_frames, psi.coords, "fgsw_msa");
    win.coords = std::move(psi.coords);
    for (std::size_t i = window.r0; i < window.r1; ++i)
      for (std::size_t j = window.c0; j < window.c1; ++j) win.sites.push_back(i * w + j);
    detail::attn_forward_window(params, key_frames, h * w, w, *query_map, h * w, *out, win, macs);
    detail::capture_records(trace, win, t, w, params);
  }
  if (trace) trace->macs += macs;

  AttentionParams p = params;
  FrameSeq frames = key_frames;
  std::size_t plane = h * w;
  return tape.record("fgsw_msa", detail::attention_node_inputs(query_map, key_frames, params), out,
                     [p, frames, query_map, out, state, plane, w] {
                       for (const auto& win : state->windows)
                         detail::attn_backward_window(p, frames, plane, w, *query_map, plane, *out,
                                                      win);
                     });
}

// Self-attention form: frame t of `features` supplies the queries.
inline TensorPtr fgsw_msa(Tape& tape, const FrameSeq& features, int t, const FlowLevelSet& flows,
                          const AttentionParams& params, std::size_t m, int r,
                          AttnTrace* trace = nullptr) {
  if (t < 0 || t >= static_cast<int>(features.size()))
    throw std::invalid_argument("fgsw_msa: frame index out of range");
  return fgsw_msa(tape, features[static_cast<std::size_t>(t)], features, t, flows, params, m, r,
                  trace);
}

enum class AttentionKind { global, fgs, fgsw };

// Closed-form multiply-accumulate totals for one full-sequence pass.
inline std::uint64_t mac_count(AttentionKind kind, std::uint64_t t, std::uint64_t h,
                               std::uint64_t w, std::uint64_t c, std::uint64_t r,
                               std::uint64_t m) {
  if (t == 0 || h == 0 || w == 0 || c == 0) throw std::invalid_argument("mac_count: zero extent");
  std::uint64_t thw = t * h * w;
  switch (kind) {
    case AttentionKind::global:
      return 4 * thw * c * c + 2 * thw * thw * c;
    case AttentionKind::fgs:
      return 2 * thw * c * (2 * (r + 1) * c + 2 * r + 1);
    case AttentionKind::fgsw:
      return 2 * thw * c * (c + (2 * r + 1) * (c + m * m));
  }
  throw std::invalid_argument("mac_count: unknown kind");
}

// Widest input span that can influence one output position: flow can move the
// window anchor by max_abs_flow in either direction, plus the window itself.
inline int receptive_extent(int max_abs_flow, int m) {
  if (m < 1 || m % 2 == 0) throw std::invalid_argument("receptive_extent: window size must be odd");
  if (max_abs_flow < 0) throw std::invalid_argument("receptive_extent: flow bound must be >= 0");
  return 2 * max_abs_flow + m;
}

// Dense all-token attention, forward only; the timing baseline for the cost
// table. Every token attends over every token of every frame.
inline FrameSeq dense_global_msa(const FrameSeq& features, const AttentionParams& params,
                                 std::uint64_t* macs_out = nullptr) {
  if (features.empty()) throw std::invalid_argument("dense_global_msa: empty sequence");
  std::size_t c = params.c, n = params.n, d = params.d;
  std::size_t t_count = features.size();
  std::size_t h = features[0]->shape[1], w = features[0]->shape[2];
  std::size_t plane = h * w, tokens = t_count * plane;
  double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  std::uint64_t macs = 0;

  auto token_val = [&](std::size_t tok, std::size_t ch) {
    return features[tok / plane]->data[ch * plane + tok % plane];
  };
  FrameSeq out;
  for (std::size_t f = 0; f < t_count; ++f) out.push_back(make_tensor(features[f]->shape));

  std::vector<double> uq(tokens * d), kv(tokens * d), kw(tokens * d), logits(tokens), head(d);
  for (std::size_t hd = 0; hd < n; ++hd) {
    const double* um = params.u[hd]->data.data();
    const double* vm = params.v[hd]->data.data();
    const double* wpm = params.wp[hd]->data.data();
    const double* wm = params.w[hd]->data.data();
    for (std::size_t tok = 0; tok < tokens; ++tok)
      for (std::size_t row = 0; row < d; ++row) {
        double su = 0.0, sv = 0.0, sw = 0.0;
        for (std::size_t ch = 0; ch < c; ++ch) {
          double x = token_val(tok, ch);
          su += um[row * c + ch] * x;
          sv += vm[row * c + ch] * x;
          sw += wpm[row * c + ch] * x;
        }
        uq[tok * d + row] = su;
        kv[tok * d + row] = sv;
        kw[tok * d + row] = sw;
      }
    macs += 3 * tokens * d * c;

    for (std::size_t qt = 0; qt < tokens; ++qt) {
      for (std::size_t kt = 0; kt < tokens; ++kt) {
        double s = 0.0;
        for (std::size_t row = 0; row < d; ++row) s += uq[qt * d + row] * kv[kt * d + row];
        logits[kt] = s * inv_sqrt_d;
      }
      macs += tokens * d;
      double mx = *std::max_element(logits.begin(), logits.end());
      double z = 0.0;
      for (auto& l : logits) {
        l = std::exp(l - mx);
        z += l;
      }
      std::fill(head.begin(), head.end(), 0.0);
      for (std::size_t kt = 0; kt < tokens; ++kt) {
        double a = logits[kt] / z;
        for (std::size_t row = 0; row < d; ++row) head[row] += a * kw[kt * d + row];
      }
      macs += tokens * d;
      double* dst = &out[qt / plane]->data[qt % plane];
      for (std::size_t ch = 0; ch < c; ++ch) {
        double s = 0.0;
        for (std::size_t row = 0; row < d; ++row) s += wm[ch * d + row] * head[row];
        dst[ch * plane] += s;
      }
      macs += c * d;
    }
  }
  if (macs_out) *macs_out = macs;
  return out;
}

// Plain-text diagnostic dump, grouped by scope.
inline std::string format_attention_records(const std::vector<AttnRecord>& records) {
  std::ostringstream os;
  std::string scope;
  bool started = false;
  for (const auto& rec : records) {
    if (!started || rec.scope != scope) {
      os << "# layer " << rec.scope << "\n";
      scope = rec.scope;
      started = true;
    }
    os << rec.t << " " << rec.row << " " << rec.col << " |";
    for (const auto& kc : rec.coords) os << " " << kc.f << "," << kc.row << "," << kc.col;
    os << " |";
    for (double wt : rec.weights) os << " " << wt;
    os << "\n";
  }
  return os.str();
}

}  // namespace fgst

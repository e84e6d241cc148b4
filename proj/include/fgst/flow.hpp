#pragma once

#include <cmath>
#include <cstdlib>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fgst/io.hpp"
#include "fgst/tensor.hpp"

namespace fgst {

// Offset maps use component 0 for the row delta and component 1 for the
// column delta: a key for query (i,j) sits at (i+d0, j+d1) in the other
// frame. All offsets are in pixels at the field's own level.
struct FlowField {
  int from_frame = 0;
  int to_frame = 0;
  int level = 0;
  TensorPtr offsets;  // [2,H,W]

  std::size_t rows() const { return offsets->shape[1]; }
  std::size_t cols() const { return offsets->shape[2]; }
  double d0(std::size_t i, std::size_t j) const { return offsets->at3(0, i, j); }
  double d1(std::size_t i, std::size_t j) const { return offsets->at3(1, i, j); }
};

// Round half away from zero, per component.
inline std::pair<int, int> round_offset(std::pair<double, double> offset) {
  if (!std::isfinite(offset.first) || !std::isfinite(offset.second))
    throw std::invalid_argument("round_offset: non-finite offset");
  return {static_cast<int>(std::round(offset.first)), static_cast<int>(std::round(offset.second))};
}

inline FlowField estimate_constant(std::size_t h, std::size_t w, double d0, double d1,
                                   int from = 0, int to = 0, int level = 0) {
  if (!std::isfinite(d0) || !std::isfinite(d1))
    throw std::invalid_argument("estimate_constant: non-finite offset");
  FlowField f;
  f.from_frame = from;
  f.to_frame = to;
  f.level = level;
  f.offsets = make_tensor({2, h, w});
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      f.offsets->at3(0, i, j) = d0;
      f.offsets->at3(1, i, j) = d1;
    }
  return f;
}

// Exhaustive SAD block matching. Each block of `ref` is compared against
// shifted copies of itself in `nbr`; only shifts keeping the block fully
// inside the frame compete. Ties prefer the smallest |d0|+|d1|, then the
// lexicographically smallest (d0, d1). The winning offset is broadcast to
// every pixel of the block.
inline FlowField estimate_block_matching(const Tensor& ref, const Tensor& nbr, std::size_t block,
                                         std::size_t search_radius, int from = 0, int to = 0) {
  if (ref.rank() != 3 || nbr.rank() != 3)
    throw std::invalid_argument("estimate_block_matching: frames must be [C,H,W]");
  if (ref.shape != nbr.shape)
    throw std::invalid_argument("estimate_block_matching: frames of unequal size " +
                                shape_str(ref.shape) + " vs " + shape_str(nbr.shape));
  if (block < 1 || search_radius < 1)
    throw std::invalid_argument("estimate_block_matching: block and search_radius must be >= 1");
  std::size_t c = ref.shape[0], h = ref.shape[1], w = ref.shape[2];
  int rad = static_cast<int>(search_radius);
  FlowField f;
  f.from_frame = from;
  f.to_frame = to;
  f.level = 0;
  f.offsets = make_tensor({2, h, w});

  for (std::size_t y0 = 0; y0 < h; y0 += block)
    for (std::size_t x0 = 0; x0 < w; x0 += block) {
      std::size_t y1 = std::min(y0 + block, h), x1 = std::min(x0 + block, w);
      double best_sad = 0.0;
      int best_d0 = 0, best_d1 = 0;
      bool first = true;
      for (int d0 = -rad; d0 <= rad; ++d0) {
        std::ptrdiff_t sy0 = static_cast<std::ptrdiff_t>(y0) + d0;
        std::ptrdiff_t sy1 = static_cast<std::ptrdiff_t>(y1) + d0;
        if (sy0 < 0 || sy1 > static_cast<std::ptrdiff_t>(h)) continue;
        for (int d1 = -rad; d1 <= rad; ++d1) {
          std::ptrdiff_t sx0 = static_cast<std::ptrdiff_t>(x0) + d1;
          std::ptrdiff_t sx1 = static_cast<std::ptrdiff_t>(x1) + d1;
          if (sx0 < 0 || sx1 > static_cast<std::ptrdiff_t>(w)) continue;
          double sad = 0.0;
          for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t y = y0; y < y1; ++y) {
              const double* rrow = &ref.data[(ch * h + y) * w];
              const double* nrow = &nbr.data[(ch * h + static_cast<std::size_t>(
                                                           static_cast<std::ptrdiff_t>(y) + d0)) *
                                             w];
              for (std::size_t x = x0; x < x1; ++x)
                sad += std::abs(rrow[x] - nrow[static_cast<std::size_t>(
                                             static_cast<std::ptrdiff_t>(x) + d1)]);
            }
          int l1 = std::abs(d0) + std::abs(d1);
          int best_l1 = std::abs(best_d0) + std::abs(best_d1);
          bool better =
              first || sad < best_sad ||
              (sad == best_sad &&
               (l1 < best_l1 || (l1 == best_l1 && std::pair(d0, d1) < std::pair(best_d0, best_d1))));
          if (better) {
            best_sad = sad;
            best_d0 = d0;
            best_d1 = d1;
            first = false;
          }
        }
      }
      for (std::size_t y = y0; y < y1; ++y)
        for (std::size_t x = x0; x < x1; ++x) {
          f.offsets->at3(0, y, x) = best_d0;
          f.offsets->at3(1, y, x) = best_d1;
        }
    }
  return f;
}

// Maps a level-0 field to a coarser level: average-pool the offset map over
// 2^level x 2^level cells, then divide the offsets by 2^level so they are
// expressed in that level's pixels.
inline FlowField rescale_to_level(const FlowField& flow, int level) {
  if (level < 0) throw std::invalid_argument("rescale_to_level: level must be >= 0");
  if (flow.level != 0) throw std::invalid_argument("rescale_to_level: input must be level 0");
  std::size_t h = flow.rows(), w = flow.cols();
  std::size_t s = static_cast<std::size_t>(1) << level;
  if (h % s != 0 || w % s != 0)
    throw std::invalid_argument("rescale_to_level: extents " + std::to_string(h) + "x" +
                                std::to_string(w) + " not divisible by " + std::to_string(s));
  FlowField out;
  out.from_frame = flow.from_frame;
  out.to_frame = flow.to_frame;
  out.level = level;
  out.offsets = make_tensor({2, h / s, w / s});
  double inv = 1.0 / static_cast<double>(s * s);
  double scale = 1.0 / static_cast<double>(s);
  for (std::size_t comp = 0; comp < 2; ++comp)
    for (std::size_t i = 0; i < h / s; ++i)
      for (std::size_t j = 0; j < w / s; ++j) {
        double acc = 0.0;
        for (std::size_t di = 0; di < s; ++di)
          for (std::size_t dj = 0; dj < s; ++dj)
            acc += flow.offsets->at3(comp, i * s + di, j * s + dj);
        out.offsets->at3(comp, i, j) = acc * inv * scale;
      }
  return out;
}

// Level-0 estimator plug-in boundary. Implementations must be pure functions
// of the frame pair.
class FlowEstimator {
 public:
  virtual ~FlowEstimator() = default;
  virtual FlowField estimate(const Tensor& ref, const Tensor& nbr, int from, int to) const = 0;
};

class ConstantFlowEstimator final : public FlowEstimator {
 public:
  ConstantFlowEstimator(double d0, double d1) : d0_(d0), d1_(d1) {}
  FlowField estimate(const Tensor& ref, const Tensor& nbr, int from, int to) const override {
    if (ref.shape != nbr.shape)
      throw std::invalid_argument("ConstantFlowEstimator: frames of unequal size");
    return estimate_constant(ref.shape[1], ref.shape[2], d0_, d1_, from, to);
  }

 private:
  double d0_, d1_;
};

class BlockMatchingFlowEstimator final : public FlowEstimator {
 public:
  BlockMatchingFlowEstimator(std::size_t block, std::size_t search_radius)
      : block_(block), radius_(search_radius) {}
  FlowField estimate(const Tensor& ref, const Tensor& nbr, int from, int to) const override {
    return estimate_block_matching(ref, nbr, block_, radius_, from, to);
  }

 private:
  std::size_t block_, radius_;
};

// All fields of one pyramid level, keyed by (from, to). Diagonal pairs are
// exact zero fields and are never produced by an estimator.
struct FlowLevelSet {
  int level = 0;
  std::map<std::pair<int, int>, FlowField> fields;

  const FlowField& get(int t, int f) const {
    auto it = fields.find({t, f});
    if (it == fields.end())
      throw std::invalid_argument("flow pair (" + std::to_string(t) + "," + std::to_string(f) +
                                  ") missing at level " + std::to_string(level));
    return it->second;
  }
  bool has(int t, int f) const { return fields.count({t, f}) != 0; }
};

struct FlowPyramid {
  std::vector<FlowLevelSet> levels;  // index == pyramid level

  const FlowLevelSet& at_level(int level) const {
    if (level < 0 || level >= static_cast<int>(levels.size()))
      throw std::invalid_argument("flow pyramid has no level " + std::to_string(level));
    return levels[static_cast<std::size_t>(level)];
  }
};

// Estimates every pair needed by a radius-r attention pass plus the (t, t-1)
// pairs used by recurrent warping, at level 0, then rescales through
// `max_level`. Frames are full-resolution [C,H,W].
inline FlowPyramid compute_flow_pyramid(const FrameSeq& frames, const FlowEstimator& estimator,
                                        int r, int max_level) {
  if (frames.empty()) throw std::invalid_argument("compute_flow_pyramid: empty sequence");
  int t_count = static_cast<int>(frames.size());
  std::size_t h = frames[0]->shape[1], w = frames[0]->shape[2];
  FlowLevelSet base;
  base.level = 0;
  for (int t = 0; t < t_count; ++t) {
    for (int f = std::max(0, t - r); f <= std::min(t_count - 1, t + r); ++f)
      if (!base.has(t, f))
        base.fields.emplace(std::pair(t, f),
                            f == t ? estimate_constant(h, w, 0.0, 0.0, t, t)
                                   : estimator.estimate(*frames[static_cast<std::size_t>(t)],
                                                        *frames[static_cast<std::size_t>(f)], t, f));
    if (t > 0 && !base.has(t, t - 1))
      base.fields.emplace(std::pair(t, t - 1),
                          estimator.estimate(*frames[static_cast<std::size_t>(t)],
                                             *frames[static_cast<std::size_t>(t - 1)], t, t - 1));
    if (!base.has(t, t))
      base.fields.emplace(std::pair(t, t), estimate_constant(h, w, 0.0, 0.0, t, t));
  }
  FlowPyramid pyr;
  pyr.levels.push_back(base);
  for (int lv = 1; lv <= max_level; ++lv) {
    FlowLevelSet ls;
    ls.level = lv;
    for (const auto& [key, field] : base.fields) ls.fields.emplace(key, rescale_to_level(field, lv));
    pyr.levels.push_back(std::move(ls));
  }
  return pyr;
}

// Serialization: offsets go through the raw tensor container; a plain-text
// companion holds the frame pair and level as one "t f level" line.
inline void save_flow(const std::string& path_base, const FlowField& flow) {
  write_tensor(path_base + ".fgt", *flow.offsets);
  std::ostringstream meta;
  meta << flow.from_frame << " " << flow.to_frame << " " << flow.level << "\n";
  write_text_file(path_base + ".meta", meta.str());
}

inline FlowField load_flow(const std::string& path_base) {
  FlowField f;
  f.offsets = read_tensor(path_base + ".fgt");
  if (f.offsets->rank() != 3 || f.offsets->shape[0] != 2)
    throw std::runtime_error("load_flow: offsets must be [2,H,W]");
  std::istringstream meta(read_text_file(path_base + ".meta"));
  if (!(meta >> f.from_frame >> f.to_frame >> f.level))
    throw std::runtime_error("load_flow: bad meta file for " + path_base);
  return f;
}

}  // namespace fgst

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

#include "fgst/tensor.hpp"

namespace fgst {

// Moving primitive for scene rendering. Positions are in pixels, velocities
// in pixels per frame interval, evaluated at continuous time.
struct ShapeSpec {
  enum class Kind { rect, disk };
  Kind kind = Kind::rect;
  double cy = 0.0, cx = 0.0;    // center at time 0
  double ey = 1.0, ex = 1.0;    // half extents (disk uses ey as radius)
  double vy = 0.0, vx = 0.0;    // velocity
  double rgb[3] = {1.0, 1.0, 1.0};
};

struct SyntheticSequence {
  FrameSeq sharp;
  FrameSeq blurry;
  std::uint64_t seed = 0;
  std::vector<ShapeSpec> shapes;
};

// Binary-coverage painter's render on a black background; later shapes
// overwrite earlier ones.
inline TensorPtr render_frame(const std::vector<ShapeSpec>& shapes, std::size_t h, std::size_t w,
                              double time) {
  auto frame = make_tensor({3, h, w});
  for (const auto& s : shapes) {
    double cy = s.cy + s.vy * time;
    double cx = s.cx + s.vx * time;
    std::size_t y_lo = static_cast<std::size_t>(std::max(0.0, std::floor(cy - s.ey)));
    std::size_t y_hi = static_cast<std::size_t>(
        std::min(static_cast<double>(h), std::ceil(cy + s.ey) + 1.0));
    std::size_t x_lo = static_cast<std::size_t>(std::max(0.0, std::floor(cx - s.ex)));
    std::size_t x_hi = static_cast<std::size_t>(
        std::min(static_cast<double>(w), std::ceil(cx + s.ex) + 1.0));
    for (std::size_t y = y_lo; y < y_hi && y < h; ++y)
      for (std::size_t x = x_lo; x < x_hi && x < w; ++x) {
        double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
        bool covered = s.kind == ShapeSpec::Kind::rect
                           ? (std::abs(dy) <= s.ey && std::abs(dx) <= s.ex)
                           : (dy * dy + dx * dx <= s.ey * s.ey);
        if (!covered) continue;
        for (std::size_t ch = 0; ch < 3; ++ch) frame->at3(ch, y, x) = s.rgb[ch];
      }
  }
  return frame;
}

// Sharp frame t is the scene at integer time t; the blurry frame averages
// exposure_samples renders spread across the frame interval. Pixels whose
// samples never change skip the division so static content is carried over
// bit-for-bit.
inline SyntheticSequence render_sequence(const std::vector<ShapeSpec>& shapes, std::size_t t_count,
                                         std::size_t h, std::size_t w,
                                         std::size_t exposure_samples) {
  if (exposure_samples < 1 || exposure_samples % 2 == 0)
    throw std::invalid_argument("render_sequence: exposure_samples must be odd");
  SyntheticSequence seq;
  seq.shapes = shapes;
  std::size_t n = exposure_samples, half = n / 2;
  std::size_t plane = 3 * h * w;
  std::vector<double> sum(plane), mn(plane), mx(plane);
  for (std::size_t t = 0; t < t_count; ++t) {
    seq.sharp.push_back(render_frame(shapes, h, w, static_cast<double>(t)));
    std::fill(sum.begin(), sum.end(), 0.0);
    for (std::size_t s = 0; s < n; ++s) {
      double tau = static_cast<double>(t) +
                   (static_cast<double>(s) - static_cast<double>(half)) / static_cast<double>(n);
      auto sample = render_frame(shapes, h, w, tau);
      if (s == 0) {
        mn = sample->data;
        mx = sample->data;
      } else {
        for (std::size_t i = 0; i < plane; ++i) {
          mn[i] = std::min(mn[i], sample->data[i]);
          mx[i] = std::max(mx[i], sample->data[i]);
        }
      }
      for (std::size_t i = 0; i < plane; ++i) sum[i] += sample->data[i];
    }
    auto blur = make_tensor({3, h, w});
    for (std::size_t i = 0; i < plane; ++i)
      blur->data[i] = mn[i] == mx[i] ? mn[i] : sum[i] / static_cast<double>(n);
    seq.blurry.push_back(std::move(blur));
  }
  return seq;
}

// Deterministic scene sampler: n_shapes primitives with random geometry,
// velocity magnitude up to max_speed, and colors well above the background.
inline SyntheticSequence generate_sequence(std::uint64_t seed, std::size_t t_count, std::size_t h,
                                           std::size_t w, std::size_t n_shapes,
                                           std::size_t exposure_samples, double max_speed = 3.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<ShapeSpec> shapes;
  double dim = static_cast<double>(std::min(h, w));
  for (std::size_t i = 0; i < n_shapes; ++i) {
    ShapeSpec s;
    s.kind = unit(rng) < 0.5 ? ShapeSpec::Kind::rect : ShapeSpec::Kind::disk;
    s.cy = unit(rng) * static_cast<double>(h);
    s.cx = unit(rng) * static_cast<double>(w);
    s.ey = dim * (0.08 + 0.17 * unit(rng));
    s.ex = s.kind == ShapeSpec::Kind::disk ? s.ey : dim * (0.08 + 0.17 * unit(rng));
    double speed = max_speed * (0.4 + 0.6 * unit(rng));
    double angle = unit(rng) * 2.0 * 3.14159265358979323846;
    s.vy = speed * std::sin(angle);
    s.vx = speed * std::cos(angle);
    for (auto& ch : s.rgb) ch = 0.25 + 0.75 * unit(rng);
    shapes.push_back(s);
  }
  auto seq = render_sequence(shapes, t_count, h, w, exposure_samples);
  seq.seed = seed;
  return seq;
}

}  // namespace fgst

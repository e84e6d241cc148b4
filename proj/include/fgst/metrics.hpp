#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "fgst/tensor.hpp"

namespace fgst {

struct PsnrResult {
  double db = 0.0;
  bool exact = false;  // true when MSE was exactly zero and db is the cap
};

inline PsnrResult psnr(const Tensor& pred, const Tensor& gt, double peak = 1.0,
                       double cap_db = 100.0) {
  if (pred.shape != gt.shape)
    throw std::invalid_argument("psnr: shape mismatch " + shape_str(pred.shape) + " vs " +
                                shape_str(gt.shape));
  if (peak <= 0.0) throw std::invalid_argument("psnr: peak must be positive");
  double mse = 0.0;
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    double d = pred.data[i] - gt.data[i];
    mse += d * d;
  }
  mse /= static_cast<double>(pred.numel());
  if (mse == 0.0) return {cap_db, true};
  return {10.0 * std::log10(peak * peak / mse), false};
}

namespace detail {

inline std::vector<double> gaussian_window(std::size_t size, double sigma) {
  std::vector<double> w(size * size);
  double half = (static_cast<double>(size) - 1.0) / 2.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < size; ++i)
    for (std::size_t j = 0; j < size; ++j) {
      double dy = static_cast<double>(i) - half, dx = static_cast<double>(j) - half;
      w[i * size + j] = std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
      sum += w[i * size + j];
    }
  for (auto& v : w) v /= sum;
  return w;
}

struct SsimStats {
  double mu_x, mu_y, var_x, var_y, cov;
};

// Gaussian-weighted local moments at one valid-region window position.
inline SsimStats local_stats(const double* x, const double* y, std::size_t stride,
                             const std::vector<double>& win, std::size_t size) {
  SsimStats s{0, 0, 0, 0, 0};
  for (std::size_t i = 0; i < size; ++i)
    for (std::size_t j = 0; j < size; ++j) {
      double wv = win[i * size + j];
      s.mu_x += wv * x[i * stride + j];
      s.mu_y += wv * y[i * stride + j];
    }
  for (std::size_t i = 0; i < size; ++i)
    for (std::size_t j = 0; j < size; ++j) {
      double wv = win[i * size + j];
      double dx = x[i * stride + j] - s.mu_x;
      double dy = y[i * stride + j] - s.mu_y;
      s.var_x += wv * dx * dx;
      s.var_y += wv * dy * dy;
      s.cov += wv * dx * dy;
    }
  return s;
}

}  // namespace detail

// Mean local SSIM over the valid region (no padding), channel-averaged.
// Gaussian window 11, sigma 1.5, K1 = 0.01, K2 = 0.03 at the given peak.
inline double ssim(const Tensor& pred, const Tensor& gt, double peak = 1.0) {
  if (pred.shape != gt.shape)
    throw std::invalid_argument("ssim: shape mismatch " + shape_str(pred.shape) + " vs " +
                                shape_str(gt.shape));
  if (pred.rank() != 3) throw std::invalid_argument("ssim: frames must be [C,H,W]");
  constexpr std::size_t kWin = 11;
  std::size_t c = pred.shape[0], h = pred.shape[1], w = pred.shape[2];
  if (h < kWin || w < kWin)
    throw std::invalid_argument("ssim: frame smaller than the 11x11 window");
  static const std::vector<double> win = detail::gaussian_window(kWin, 1.5);
  double c1 = (0.01 * peak) * (0.01 * peak);
  double c2 = (0.03 * peak) * (0.03 * peak);

  double channel_sum = 0.0;
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* x = &pred.data[ch * h * w];
    const double* y = &gt.data[ch * h * w];
    double acc = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i + kWin <= h; ++i)
      for (std::size_t j = 0; j + kWin <= w; ++j) {
        auto s = detail::local_stats(&x[i * w + j], &y[i * w + j], w, win, kWin);
        double num = (2.0 * s.mu_x * s.mu_y + c1) * (2.0 * s.cov + c2);
        double den = (s.mu_x * s.mu_x + s.mu_y * s.mu_y + c1) * (s.var_x + s.var_y + c2);
        acc += num / den;
        ++count;
      }
    channel_sum += acc / static_cast<double>(count);
  }
  return channel_sum / static_cast<double>(c);
}

}  // namespace fgst

#pragma once

#include "rstt/tensor.hpp"

namespace rstt {

// ---------------------------------------------------------------------------
// Y-channel quality metrics.  Frames are [3,H,W] RGB or [1,H,W] luma in
// [0,1]; values are clamped before any metric computation.  Luma follows the
// BT.601 full-range convention: Y = 0.299 R + 0.587 G + 0.114 B.
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> rgb_to_y(const Tensor<S>& frame) {
  check_dims(frame.rank() == 3 && frame.dim(0) == 3,
             "rgb_to_y: expected [3,H,W], got " + shape_str(frame.shape()));
  const Index h = frame.dim(1), w = frame.dim(2);
  Tensor<S> y({1, h, w});
  const S* r = frame.data();
  const S* g = r + h * w;
  const S* b = g + h * w;
  for (Index i = 0; i < h * w; ++i)
    y[i] = static_cast<S>(0.299 * static_cast<double>(r[i]) + 0.587 * static_cast<double>(g[i]) +
                          0.114 * static_cast<double>(b[i]));
  return y;
}

namespace detail {

template <typename S>
std::vector<double> luma_clamped(const Tensor<S>& frame) {
  check_dims(frame.rank() == 3 && (frame.dim(0) == 3 || frame.dim(0) == 1),
             "metrics: expected [3,H,W] or [1,H,W], got " + shape_str(frame.shape()));
  const Index h = frame.dim(1), w = frame.dim(2);
  std::vector<double> y(static_cast<std::size_t>(h * w));
  auto clamp01 = [](double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); };
  if (frame.dim(0) == 1) {
    for (Index i = 0; i < h * w; ++i) y[static_cast<std::size_t>(i)] = clamp01(frame[i]);
  } else {
    const S* r = frame.data();
    const S* g = r + h * w;
    const S* b = g + h * w;
    for (Index i = 0; i < h * w; ++i)
      y[static_cast<std::size_t>(i)] = 0.299 * clamp01(static_cast<double>(r[i])) +
                                       0.587 * clamp01(static_cast<double>(g[i])) +
                                       0.114 * clamp01(static_cast<double>(b[i]));
  }
  return y;
}

}  // namespace detail

/// 10*log10(1/MSE) over the Y channel; identical inputs return the 99 dB cap.
template <typename S>
double psnr_y(const Tensor<S>& pred, const Tensor<S>& gt) {
  check_dims(pred.shape() == gt.shape(),
             "psnr_y: shape mismatch " + shape_str(pred.shape()) + " vs " + shape_str(gt.shape()));
  auto yp = detail::luma_clamped(pred);
  auto yg = detail::luma_clamped(gt);
  double mse = 0.0;
  for (std::size_t i = 0; i < yp.size(); ++i) {
    const double d = yp[i] - yg[i];
    mse += d * d;
  }
  mse /= static_cast<double>(yp.size());
  if (mse == 0.0) return 99.0;
  return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

/// Mean local SSIM on Y: 11x11 Gaussian window (sigma 1.5), C1 = 0.01^2,
/// C2 = 0.03^2 on the [0,1] range, aggregated over the valid (unpadded)
/// region only.
template <typename S>
double ssim_y(const Tensor<S>& pred, const Tensor<S>& gt) {
  check_dims(pred.shape() == gt.shape(),
             "ssim_y: shape mismatch " + shape_str(pred.shape()) + " vs " + shape_str(gt.shape()));
  const Index h = pred.dim(1), w = pred.dim(2);
  constexpr Index win = 11;
  check_dims(h >= win && w >= win, "ssim_y: frame smaller than the 11x11 window");
  auto yp = detail::luma_clamped(pred);
  auto yg = detail::luma_clamped(gt);

  double kernel[win * win];
  {
    const double sigma = 1.5;
    double sum = 0.0;
    for (Index i = 0; i < win; ++i)
      for (Index j = 0; j < win; ++j) {
        const double dy = static_cast<double>(i) - 5.0, dx = static_cast<double>(j) - 5.0;
        kernel[i * win + j] = std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
        sum += kernel[i * win + j];
      }
    for (Index i = 0; i < win * win; ++i) kernel[i] /= sum;
  }

  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double total = 0.0;
  Index count = 0;
  for (Index y = 0; y + win <= h; ++y) {
    for (Index x = 0; x + win <= w; ++x) {
      double mx = 0.0, my = 0.0, sxx = 0.0, syy = 0.0, sxy = 0.0;
      for (Index i = 0; i < win; ++i)
        for (Index j = 0; j < win; ++j) {
          const double k = kernel[i * win + j];
          const double a = yp[static_cast<std::size_t>((y + i) * w + x + j)];
          const double b = yg[static_cast<std::size_t>((y + i) * w + x + j)];
          mx += k * a;
          my += k * b;
          sxx += k * a * a;
          syy += k * b * b;
          sxy += k * a * b;
        }
      const double vx = sxx - mx * mx;
      const double vy = syy - my * my;
      const double cov = sxy - mx * my;
      total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) /
               ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

}  // namespace rstt

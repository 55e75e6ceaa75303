#pragma once

#include "rstt/ops.hpp"

namespace rstt {

/// Additive logit value for blocked token pairs.  exp(-1e9) underflows to 0
/// in both precisions, so blocked pairs end up with < 1e-8 post-softmax mass.
inline constexpr double kMaskBlocked = -1e9;

/// Window geometry for the attention kernels.  Shifted blocks use
/// dy = dx = floor(M/2); windows span all input frames when include_time is
/// set (the default — the per-frame mode exists for comparison only).
struct WindowConfig {
  Index window = 4;  // M, window side in tokens
  Index shift_y = 0;
  Index shift_x = 0;
  bool include_time = true;

  void validate() const {
    check_config(window >= 1, "WindowConfig: window must be >= 1");
    check_config(shift_y >= 0 && shift_y < window && shift_x >= 0 && shift_x < window,
                 "WindowConfig: shift must lie in [0, M)");
  }
};

// ---------------------------------------------------------------------------
// cyclic_shift: toroidal roll of the spatial axes of [N,H,W,C];
// out[t,y,x] = in[t,(y+dy) mod H,(x+dx) mod W].  Inverse is (-dy,-dx).
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> cyclic_shift(const Tensor<S>& x, Index dy, Index dx) {
  check_dims(x.rank() == 4, "cyclic_shift: input must be [N,H,W,C], got " + shape_str(x.shape()));
  const Index n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  auto wrap = [](Index i, Index m) { return ((i % m) + m) % m; };
  if (wrap(dy, h) == 0 && wrap(dx, w) == 0) return x;
  Tensor<S> out(x.shape());
  for (Index t = 0; t < n; ++t)
    for (Index y = 0; y < h; ++y) {
      const Index sy = wrap(y + dy, h);
      for (Index xx = 0; xx < w; ++xx) {
        const Index sx = wrap(xx + dx, w);
        const S* src = x.data() + ((t * h + sy) * w + sx) * c;
        S* dst = out.data() + ((t * h + y) * w + xx) * c;
        std::copy(src, src + c, dst);
      }
    }
  if (recording<S>(x.requires_grad())) {
    node_tape(out).record("cyclic_shift", [x, out, n, h, w, c, dy, dx, wrap]() mutable {
      const S* g = out.grad().data();
      auto& gx = x.grad();
      for (Index t = 0; t < n; ++t)
        for (Index y = 0; y < h; ++y) {
          const Index sy = wrap(y + dy, h);
          for (Index xx = 0; xx < w; ++xx) {
            const Index sx = wrap(xx + dx, w);
            S* dst = gx.data() + ((t * h + sy) * w + sx) * c;
            const S* src = g + ((t * h + y) * w + xx) * c;
            for (Index k = 0; k < c; ++k) dst[k] += src[k];
          }
        }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// window_partition / window_reverse.  Temporal-inclusive windows gather the
// same MxM spatial patch from every frame, giving N*M*M tokens per window in
// (t, y, x) row-major order; nW = (H/M)*(W/M).  Per-frame mode instead emits
// one window per (frame, patch): [N*nW, M*M, C].
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> window_partition(const Tensor<S>& x, Index m, bool include_time = true) {
  check_dims(x.rank() == 4, "window_partition: input must be [N,H,W,C], got " +
                                shape_str(x.shape()));
  const Index n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  check_dims(h % m == 0 && w % m == 0, "window_partition: window " + std::to_string(m) +
                                           " does not divide " + shape_str(x.shape()));
  const Index gy = h / m, gx = w / m, nw = gy * gx;
  const Index frames = include_time ? n : 1;
  const Index wins = include_time ? nw : n * nw;
  Tensor<S> out({wins, frames * m * m, c});
  S* op = out.data();
  for (Index t = 0; t < n; ++t)
    for (Index wy = 0; wy < gy; ++wy)
      for (Index wx = 0; wx < gx; ++wx)
        for (Index ly = 0; ly < m; ++ly) {
          const S* src = x.data() + ((t * h + wy * m + ly) * w + wx * m) * c;
          const Index win = include_time ? (wy * gx + wx) : ((t * nw) + wy * gx + wx);
          const Index tok = include_time ? (t * m * m + ly * m) : (ly * m);
          std::copy(src, src + m * c, op + (win * frames * m * m + tok) * c);
        }
  if (recording<S>(x.requires_grad())) {
    node_tape(out).record("window_partition", [x, out, n, h, w, c, m, gy, gx, nw, frames, include_time]() mutable {
      const S* g = out.grad().data();
      auto& grad = x.grad();
      for (Index t = 0; t < n; ++t)
        for (Index wy = 0; wy < gy; ++wy)
          for (Index wx = 0; wx < gx; ++wx)
            for (Index ly = 0; ly < m; ++ly) {
              S* dst = grad.data() + ((t * h + wy * m + ly) * w + wx * m) * c;
              const Index win = include_time ? (wy * gx + wx) : ((t * nw) + wy * gx + wx);
              const Index tok = include_time ? (t * m * m + ly * m) : (ly * m);
              const S* src = g + (win * frames * m * m + tok) * c;
              for (Index k = 0; k < m * c; ++k) dst[k] += src[k];
            }
    });
  }
  return out;
}

template <typename S>
Tensor<S> window_reverse(const Tensor<S>& windows, Index m, Index n, Index h, Index w,
                         bool include_time = true) {
  check_dims(windows.rank() == 3, "window_reverse: input must be [nW, tokens, C], got " +
                                      shape_str(windows.shape()));
  check_dims(h % m == 0 && w % m == 0, "window_reverse: window does not divide target size");
  const Index gy = h / m, gx = w / m, nw = gy * gx;
  const Index frames = include_time ? n : 1;
  const Index wins = include_time ? nw : n * nw;
  const Index c = windows.dim(2);
  check_dims(windows.dim(0) == wins && windows.dim(1) == frames * m * m,
             "window_reverse: got " + shape_str(windows.shape()) + ", expected [" +
                 std::to_string(wins) + "," + std::to_string(frames * m * m) + ",C] for N=" +
                 std::to_string(n) + " H=" + std::to_string(h) + " W=" + std::to_string(w) +
                 " M=" + std::to_string(m));
  Tensor<S> out({n, h, w, c});
  const S* wp = windows.data();
  for (Index t = 0; t < n; ++t)
    for (Index wy = 0; wy < gy; ++wy)
      for (Index wx = 0; wx < gx; ++wx)
        for (Index ly = 0; ly < m; ++ly) {
          S* dst = out.data() + ((t * h + wy * m + ly) * w + wx * m) * c;
          const Index win = include_time ? (wy * gx + wx) : ((t * nw) + wy * gx + wx);
          const Index tok = include_time ? (t * m * m + ly * m) : (ly * m);
          std::copy(wp + (win * frames * m * m + tok) * c, wp + (win * frames * m * m + tok) * c + m * c, dst);
        }
  if (recording<S>(windows.requires_grad())) {
    node_tape(out).record("window_reverse", [windows, out, n, h, w, c, m, gy, gx, nw, frames, include_time]() mutable {
      const S* g = out.grad().data();
      auto& grad = windows.grad();
      for (Index t = 0; t < n; ++t)
        for (Index wy = 0; wy < gy; ++wy)
          for (Index wx = 0; wx < gx; ++wx)
            for (Index ly = 0; ly < m; ++ly) {
              const S* src = g + ((t * h + wy * m + ly) * w + wx * m) * c;
              const Index win = include_time ? (wy * gx + wx) : ((t * nw) + wy * gx + wx);
              const Index tok = include_time ? (t * m * m + ly * m) : (ly * m);
              S* dst = grad.data() + (win * frames * m * m + tok) * c;
              for (Index k = 0; k < m * c; ++k) dst[k] += src[k];
            }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Shift masks.  After rolling the canvas by (dy,dx), the last window band
// along each axis mixes tokens whose pre-shift positions came from opposite
// sides of the wrap seam; those pairs must not attend.  Band labels on the
// shifted canvas: [0,H-M) -> 0, [H-M,H-dy) -> 1, [H-dy,H) -> 2, and a token
// pair is blocked unless both its row bands and column bands agree.
//
// The mask depends only on geometry.  It is stored per window over spatial
// token pairs [nW, M*M, M*M]; expand_mask tiles it across frames.
// ---------------------------------------------------------------------------

template <typename S>
struct AttentionMask {
  Tensor<S> spatial;  // [nW, M*M, M*M], values 0 or kMaskBlocked
  Index window = 0;

  bool empty() const { return !spatial.defined(); }
};

namespace detail {

inline int shift_band(Index pos, Index n, Index m, Index shift) {
  if (shift == 0) return 0;
  if (pos < n - m) return 0;
  if (pos < n - shift) return 1;
  return 2;
}

}  // namespace detail

template <typename S>
AttentionMask<S> build_shift_mask(Index h, Index w, Index m, Index dy, Index dx) {
  check_dims(h % m == 0 && w % m == 0, "build_shift_mask: window does not divide canvas");
  const Index gy = h / m, gx = w / m, nw = gy * gx;
  const Index t = m * m;
  AttentionMask<S> mask;
  mask.window = m;
  mask.spatial = Tensor<S>({nw, t, t});
  std::vector<int> region(static_cast<std::size_t>(t));
  for (Index wy = 0; wy < gy; ++wy)
    for (Index wx = 0; wx < gx; ++wx) {
      for (Index ly = 0; ly < m; ++ly)
        for (Index lx = 0; lx < m; ++lx)
          region[static_cast<std::size_t>(ly * m + lx)] =
              3 * detail::shift_band(wy * m + ly, h, m, dy) +
              detail::shift_band(wx * m + lx, w, m, dx);
      S* mp = mask.spatial.data() + (wy * gx + wx) * t * t;
      for (Index i = 0; i < t; ++i)
        for (Index j = 0; j < t; ++j)
          mp[i * t + j] = (region[static_cast<std::size_t>(i)] ==
                           region[static_cast<std::size_t>(j)])
                              ? S(0)
                              : static_cast<S>(kMaskBlocked);
    }
  return mask;
}

/// Tiles the per-window spatial mask over query/key frames:
/// [nW, M*M, M*M] -> [nW, qf*M*M, kf*M*M].  Time is never shifted, so the
/// block predicate is purely spatial.
template <typename S>
Tensor<S> expand_mask(const AttentionMask<S>& mask, Index q_frames, Index kv_frames) {
  const Index nw = mask.spatial.dim(0), t = mask.spatial.dim(1);
  Tensor<S> out({nw, q_frames * t, kv_frames * t});
  for (Index wi = 0; wi < nw; ++wi) {
    const S* src = mask.spatial.data() + wi * t * t;
    S* dst = out.data() + wi * (q_frames * t) * (kv_frames * t);
    for (Index qf = 0; qf < q_frames; ++qf)
      for (Index i = 0; i < t; ++i)
        for (Index kf = 0; kf < kv_frames; ++kf)
          std::copy(src + i * t, src + (i + 1) * t,
                    dst + ((qf * t + i) * kv_frames + kf) * t);
  }
  return out;
}

}  // namespace rstt

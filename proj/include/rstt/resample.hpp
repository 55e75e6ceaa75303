#pragma once

#include "rstt/ops.hpp"

namespace rstt {

namespace detail {

/// Corner-aligned 1-D linear sampling table: src = dst*(in-1)/(out-1).
struct LinTap {
  Index i0, i1;
  double w1;  // weight of i1; i0 gets 1-w1
};

inline std::vector<LinTap> linear_taps(Index in, Index out) {
  std::vector<LinTap> taps(static_cast<std::size_t>(out));
  for (Index o = 0; o < out; ++o) {
    double src = (out > 1) ? static_cast<double>(o) * static_cast<double>(in - 1) /
                                 static_cast<double>(out - 1)
                           : 0.0;
    Index i0 = static_cast<Index>(std::floor(src));
    if (i0 > in - 2) i0 = std::max<Index>(in - 2, 0);
    Index i1 = std::min<Index>(i0 + 1, in - 1);
    double w1 = src - static_cast<double>(i0);
    if (in == 1) {
      i0 = i1 = 0;
      w1 = 0.0;
    }
    taps[static_cast<std::size_t>(o)] = LinTap{i0, i1, w1};
  }
  return taps;
}

/// Catmull-Rom cubic kernel (a = -0.5).
inline double cubic_weight(double d) {
  constexpr double a = -0.5;
  d = std::fabs(d);
  if (d < 1.0) return ((a + 2.0) * d - (a + 3.0)) * d * d + 1.0;
  if (d < 2.0) return ((a * d - 5.0 * a) * d + 8.0 * a) * d - 4.0 * a;
  return 0.0;
}

inline Index reflect101(Index i, Index n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return i;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// trilinear_resize: separable linear interpolation along time, height and
// width of [T,C,H,W], corner-aligned so endpoint samples are exact copies.
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> trilinear_resize(const Tensor<S>& x, Index t_out, Index h_out, Index w_out) {
  check_dims(x.rank() == 4, "trilinear_resize: input must be [T,C,H,W], got " +
                                shape_str(x.shape()));
  check_dims(t_out >= 1 && h_out >= 1 && w_out >= 1, "trilinear_resize: output sizes must be >= 1");
  const Index t = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const auto tt = detail::linear_taps(t, t_out);
  const auto ty = detail::linear_taps(h, h_out);
  const auto tx = detail::linear_taps(w, w_out);

  Tensor<S> out({t_out, c, h_out, w_out});
  const S* xp = x.data();
  S* op = out.data();
  for (Index to = 0; to < t_out; ++to) {
    const auto& at = tt[static_cast<std::size_t>(to)];
    for (Index cc = 0; cc < c; ++cc) {
      const S* f0 = xp + (at.i0 * c + cc) * h * w;
      const S* f1 = xp + (at.i1 * c + cc) * h * w;
      S* orow = op + (to * c + cc) * h_out * w_out;
      for (Index yo = 0; yo < h_out; ++yo) {
        const auto& ay = ty[static_cast<std::size_t>(yo)];
        for (Index xo = 0; xo < w_out; ++xo) {
          const auto& ax = tx[static_cast<std::size_t>(xo)];
          auto bilinear = [&](const S* f) {
            double v00 = static_cast<double>(f[ay.i0 * w + ax.i0]);
            double v01 = static_cast<double>(f[ay.i0 * w + ax.i1]);
            double v10 = static_cast<double>(f[ay.i1 * w + ax.i0]);
            double v11 = static_cast<double>(f[ay.i1 * w + ax.i1]);
            double top = v00 * (1.0 - ax.w1) + v01 * ax.w1;
            double bot = v10 * (1.0 - ax.w1) + v11 * ax.w1;
            return top * (1.0 - ay.w1) + bot * ay.w1;
          };
          double v = bilinear(f0) * (1.0 - at.w1) + bilinear(f1) * at.w1;
          orow[yo * w_out + xo] = static_cast<S>(v);
        }
      }
    }
  }
  if (recording<S>(x.requires_grad())) {
    node_tape(out).record("trilinear_resize", [x, out, tt, ty, tx, t_out, h_out, w_out, c, h, w]() mutable {
      const S* g = out.grad().data();
      auto& gx = x.grad();
      for (Index to = 0; to < t_out; ++to) {
        const auto& at = tt[static_cast<std::size_t>(to)];
        for (Index cc = 0; cc < c; ++cc) {
          const Index b0 = (at.i0 * c + cc) * h * w;
          const Index b1 = (at.i1 * c + cc) * h * w;
          const S* grow = g + (to * c + cc) * h_out * w_out;
          for (Index yo = 0; yo < h_out; ++yo) {
            const auto& ay = ty[static_cast<std::size_t>(yo)];
            for (Index xo = 0; xo < w_out; ++xo) {
              const auto& ax = tx[static_cast<std::size_t>(xo)];
              const double gv = static_cast<double>(grow[yo * w_out + xo]);
              auto scatter = [&](Index base, double wt) {
                gx[static_cast<std::size_t>(base + ay.i0 * w + ax.i0)] +=
                    static_cast<S>(gv * wt * (1.0 - ay.w1) * (1.0 - ax.w1));
                gx[static_cast<std::size_t>(base + ay.i0 * w + ax.i1)] +=
                    static_cast<S>(gv * wt * (1.0 - ay.w1) * ax.w1);
                gx[static_cast<std::size_t>(base + ay.i1 * w + ax.i0)] +=
                    static_cast<S>(gv * wt * ay.w1 * (1.0 - ax.w1));
                gx[static_cast<std::size_t>(base + ay.i1 * w + ax.i1)] +=
                    static_cast<S>(gv * wt * ay.w1 * ax.w1);
              };
              scatter(b0, 1.0 - at.w1);
              if (at.w1 != 0.0) scatter(b1, at.w1);
            }
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// bicubic_downsample: Catmull-Rom (a = -0.5) 4x4 kernel at center-aligned
// source positions src = (dst+0.5)*factor - 0.5, reflected at borders.
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> bicubic_downsample(const Tensor<S>& x, Index factor = 4) {
  check_dims(x.rank() == 3, "bicubic_downsample: input must be [C,H,W], got " +
                                shape_str(x.shape()));
  check_dims(factor >= 1, "bicubic_downsample: factor must be >= 1");
  const Index c = x.dim(0), h = x.dim(1), w = x.dim(2);
  check_dims(h % factor == 0 && w % factor == 0,
             "bicubic_downsample: size " + shape_str(x.shape()) + " not divisible by factor " +
                 std::to_string(factor));
  const Index oh = h / factor, ow = w / factor;

  struct Tap {
    Index idx[4];
    double wt[4];
  };
  auto make_taps = [factor](Index in, Index out) {
    std::vector<Tap> taps(static_cast<std::size_t>(out));
    for (Index o = 0; o < out; ++o) {
      double src = (static_cast<double>(o) + 0.5) * static_cast<double>(factor) - 0.5;
      Index base = static_cast<Index>(std::floor(src));
      double frac = src - static_cast<double>(base);
      Tap t;
      for (int k = 0; k < 4; ++k) {
        Index i = base - 1 + k;
        t.idx[k] = detail::reflect101(i, in);
        t.wt[k] = detail::cubic_weight(frac + 1.0 - static_cast<double>(k));
      }
      taps[static_cast<std::size_t>(o)] = t;
    }
    return taps;
  };
  const auto ty = make_taps(h, oh);
  const auto tx = make_taps(w, ow);

  Tensor<S> out({c, oh, ow});
  for (Index cc = 0; cc < c; ++cc) {
    const S* chan = x.data() + cc * h * w;
    S* ochan = out.data() + cc * oh * ow;
    for (Index yo = 0; yo < oh; ++yo) {
      const Tap& ay = ty[static_cast<std::size_t>(yo)];
      for (Index xo = 0; xo < ow; ++xo) {
        const Tap& ax = tx[static_cast<std::size_t>(xo)];
        double acc = 0.0;
        for (int ky = 0; ky < 4; ++ky) {
          const S* row = chan + ay.idx[ky] * w;
          double rowacc = 0.0;
          for (int kx = 0; kx < 4; ++kx)
            rowacc += ax.wt[kx] * static_cast<double>(row[ax.idx[kx]]);
          acc += ay.wt[ky] * rowacc;
        }
        ochan[yo * ow + xo] = static_cast<S>(acc);
      }
    }
  }
  if (recording<S>(x.requires_grad())) {
    node_tape(out).record("bicubic_downsample", [x, out, ty, tx, c, h, w, oh, ow]() mutable {
      const S* g = out.grad().data();
      auto& gx = x.grad();
      for (Index cc = 0; cc < c; ++cc) {
        const Index base = cc * h * w;
        const S* gchan = g + cc * oh * ow;
        for (Index yo = 0; yo < oh; ++yo) {
          const Tap& ay = ty[static_cast<std::size_t>(yo)];
          for (Index xo = 0; xo < ow; ++xo) {
            const Tap& ax = tx[static_cast<std::size_t>(xo)];
            const double gv = static_cast<double>(gchan[yo * ow + xo]);
            for (int ky = 0; ky < 4; ++ky)
              for (int kx = 0; kx < 4; ++kx)
                gx[static_cast<std::size_t>(base + ay.idx[ky] * w + ax.idx[kx])] +=
                    static_cast<S>(gv * ay.wt[ky] * ax.wt[kx]);
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reflect padding (bottom/right, mirror excluding the edge pixel) and
// top-left cropping on the trailing two axes.
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> reflect_pad_hw(const Tensor<S>& x, Index ph, Index pw) {
  check_dims(x.rank() >= 2, "reflect_pad_hw: need at least 2 axes");
  const Index h = x.dim(-2), w = x.dim(-1);
  check_dims(ph >= 0 && pw >= 0 && ph <= h - 1 && pw <= w - 1,
             "reflect_pad_hw: pad (" + std::to_string(ph) + "," + std::to_string(pw) +
                 ") too large for " + shape_str(x.shape()));
  if (ph == 0 && pw == 0) return x;
  const Index outer = x.size() / (h * w);
  Shape os = x.shape();
  os[os.size() - 2] = h + ph;
  os[os.size() - 1] = w + pw;
  Tensor<S> out(os);
  const Index ho = h + ph, wo = w + pw;
  auto refl = [](Index i, Index n) { return i < n ? i : 2 * n - 2 - i; };
  for (Index o = 0; o < outer; ++o) {
    const S* src = x.data() + o * h * w;
    S* dst = out.data() + o * ho * wo;
    for (Index y = 0; y < ho; ++y) {
      const S* srow = src + refl(y, h) * w;
      S* drow = dst + y * wo;
      for (Index xx = 0; xx < wo; ++xx) drow[xx] = srow[refl(xx, w)];
    }
  }
  if (recording<S>(x.requires_grad())) {
    node_tape(out).record("reflect_pad_hw", [x, out, outer, h, w, ho, wo]() mutable {
      const S* g = out.grad().data();
      auto& gx = x.grad();
      auto refl = [](Index i, Index n) { return i < n ? i : 2 * n - 2 - i; };
      for (Index o = 0; o < outer; ++o) {
        const S* grow = g + o * ho * wo;
        S* dst = gx.data() + o * h * w;
        for (Index y = 0; y < ho; ++y)
          for (Index xx = 0; xx < wo; ++xx)
            dst[refl(y, h) * w + refl(xx, w)] += grow[y * wo + xx];
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> crop_hw(const Tensor<S>& x, Index h, Index w) {
  check_dims(x.rank() >= 2, "crop_hw: need at least 2 axes");
  const Index hi = x.dim(-2), wi = x.dim(-1);
  check_dims(h >= 1 && w >= 1 && h <= hi && w <= wi,
             "crop_hw: target " + std::to_string(h) + "x" + std::to_string(w) +
                 " exceeds input " + shape_str(x.shape()));
  if (h == hi && w == wi) return x;
  const Index outer = x.size() / (hi * wi);
  Shape os = x.shape();
  os[os.size() - 2] = h;
  os[os.size() - 1] = w;
  Tensor<S> out(os);
  for (Index o = 0; o < outer; ++o) {
    const S* src = x.data() + o * hi * wi;
    S* dst = out.data() + o * h * w;
    for (Index y = 0; y < h; ++y) std::copy(src + y * wi, src + y * wi + w, dst + y * w);
  }
  if (recording<S>(x.requires_grad())) {
    node_tape(out).record("crop_hw", [x, out, outer, h, w, hi, wi]() mutable {
      const S* g = out.grad().data();
      auto& gx = x.grad();
      for (Index o = 0; o < outer; ++o) {
        S* dst = gx.data() + o * hi * wi;
        const S* src = g + o * h * w;
        for (Index y = 0; y < h; ++y)
          for (Index xx = 0; xx < w; ++xx) dst[y * wi + xx] += src[y * w + xx];
      }
    });
  }
  return out;
}

}  // namespace rstt

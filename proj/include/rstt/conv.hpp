#pragma once

#include "rstt/ops.hpp"

namespace rstt {

// ---------------------------------------------------------------------------
// conv2d: cross-correlation over [B,Cin,H,W] with weights [Cout,Cin,k,k].
// Lowered to an im2col GEMM per batch element; zero padding.
// ---------------------------------------------------------------------------

namespace detail {

template <typename S>
void im2col(const S* x, Index cin, Index h, Index w, Index k, Index stride, Index pad, Index oh,
            Index ow, S* cols) {
  // cols: [oh*ow, cin*k*k]
  const Index patch = cin * k * k;
  for (Index oy = 0; oy < oh; ++oy) {
    for (Index ox = 0; ox < ow; ++ox) {
      S* row = cols + (oy * ow + ox) * patch;
      Index p = 0;
      for (Index c = 0; c < cin; ++c) {
        const S* chan = x + c * h * w;
        for (Index ky = 0; ky < k; ++ky) {
          const Index iy = oy * stride + ky - pad;
          for (Index kx = 0; kx < k; ++kx, ++p) {
            const Index ix = ox * stride + kx - pad;
            row[p] = (iy >= 0 && iy < h && ix >= 0 && ix < w) ? chan[iy * w + ix] : S(0);
          }
        }
      }
    }
  }
}

template <typename S>
void col2im_add(const S* cols, Index cin, Index h, Index w, Index k, Index stride, Index pad,
                Index oh, Index ow, S* x) {
  const Index patch = cin * k * k;
  for (Index oy = 0; oy < oh; ++oy) {
    for (Index ox = 0; ox < ow; ++ox) {
      const S* row = cols + (oy * ow + ox) * patch;
      Index p = 0;
      for (Index c = 0; c < cin; ++c) {
        S* chan = x + c * h * w;
        for (Index ky = 0; ky < k; ++ky) {
          const Index iy = oy * stride + ky - pad;
          for (Index kx = 0; kx < k; ++kx, ++p) {
            const Index ix = ox * stride + kx - pad;
            if (iy >= 0 && iy < h && ix >= 0 && ix < w) chan[iy * w + ix] += row[p];
          }
        }
      }
    }
  }
}

}  // namespace detail

template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b, Index stride = 1,
                 Index pad = 0) {
  check_dims(x.rank() == 4, "conv2d: input must be [B,Cin,H,W], got " + shape_str(x.shape()));
  check_dims(w.rank() == 4 && w.dim(2) == w.dim(3),
             "conv2d: weights must be [Cout,Cin,k,k], got " + shape_str(w.shape()));
  check_dims(x.dim(1) == w.dim(1), "conv2d: channel mismatch, input " + shape_str(x.shape()) +
                                       " vs weights " + shape_str(w.shape()));
  check_dims(stride == 1 || stride == 2, "conv2d: stride must be 1 or 2");
  const Index bn = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const Index cout = w.dim(0), k = w.dim(2);
  const bool has_bias = b.defined() && b.size() > 0;
  if (has_bias)
    check_dims(b.rank() == 1 && b.dim(0) == cout,
               "conv2d: bias " + shape_str(b.shape()) + " does not match Cout");
  const Index oh = (h + 2 * pad - k) / stride + 1;
  const Index ow = (wd + 2 * pad - k) / stride + 1;
  check_dims(oh >= 1 && ow >= 1, "conv2d: kernel larger than padded input");

  const Index patch = cin * k * k;
  Tensor<S> out({bn, cout, oh, ow});
  //  wT: [patch, cout] so each batch is one GEMM cols * wT.
  std::vector<S> wt(static_cast<std::size_t>(patch * cout));
  for (Index co = 0; co < cout; ++co)
    for (Index p = 0; p < patch; ++p)
      wt[static_cast<std::size_t>(p * cout + co)] = w[co * patch + p];
  std::vector<S> cols(static_cast<std::size_t>(oh * ow * patch));
  std::vector<S> prod(static_cast<std::size_t>(oh * ow * cout));
  for (Index n = 0; n < bn; ++n) {
    detail::im2col(x.data() + n * cin * h * wd, cin, h, wd, k, stride, pad, oh, ow, cols.data());
    ECMap<S> C(cols.data(), oh * ow, patch);
    ECMap<S> W(wt.data(), patch, cout);
    EMap<S> P(prod.data(), oh * ow, cout);
    P.noalias() = C * W;
    S* op = out.data() + n * cout * oh * ow;
    for (Index px = 0; px < oh * ow; ++px)
      for (Index co = 0; co < cout; ++co)
        op[co * oh * ow + px] =
            prod[static_cast<std::size_t>(px * cout + co)] + (has_bias ? b[co] : S(0));
  }
  throw_if_nonfinite(out, "conv2d");

  if (recording<S>(x.requires_grad() || w.requires_grad() || (has_bias && b.requires_grad()))) {
    node_tape(out).record("conv2d", [x, w, b, out, bn, cin, h, wd, cout, k, stride, pad, oh, ow, has_bias]() mutable {
      const Index patch2 = cin * k * k;
      const S* g = out.grad().data();
      std::vector<S> cols(static_cast<std::size_t>(oh * ow * patch2));
      std::vector<S> gmat(static_cast<std::size_t>(oh * ow * cout));
      std::vector<S> gcols(static_cast<std::size_t>(oh * ow * patch2));
      std::vector<S> gwt(static_cast<std::size_t>(patch2 * cout), S(0));
      for (Index n = 0; n < bn; ++n) {
        const S* gn = g + n * cout * oh * ow;
        for (Index px = 0; px < oh * ow; ++px)
          for (Index co = 0; co < cout; ++co)
            gmat[static_cast<std::size_t>(px * cout + co)] = gn[co * oh * ow + px];
        detail::im2col(x.data() + n * cin * h * wd, cin, h, wd, k, stride, pad, oh, ow,
                       cols.data());
        if (w.requires_grad()) {
          ECMap<S> C(cols.data(), oh * ow, patch2);
          ECMap<S> G(gmat.data(), oh * ow, cout);
          EMap<S> GW(gwt.data(), patch2, cout);
          GW.noalias() += C.transpose() * G;
        }
        if (x.requires_grad()) {
          //  dcols = gmat * wT^T, then fold back.
          std::vector<S> wt2(static_cast<std::size_t>(patch2 * cout));
          for (Index co = 0; co < cout; ++co)
            for (Index p = 0; p < patch2; ++p)
              wt2[static_cast<std::size_t>(p * cout + co)] = w[co * patch2 + p];
          ECMap<S> G(gmat.data(), oh * ow, cout);
          ECMap<S> W(wt2.data(), patch2, cout);
          EMap<S> GC(gcols.data(), oh * ow, patch2);
          GC.noalias() = G * W.transpose();
          detail::col2im_add(gcols.data(), cin, h, wd, k, stride, pad, oh, ow,
                             x.grad().data() + n * cin * h * wd);
        }
        if (has_bias && b.requires_grad()) {
          auto& gb = b.grad();
          for (Index co = 0; co < cout; ++co) {
            double acc = 0.0;
            for (Index px = 0; px < oh * ow; ++px)
              acc += static_cast<double>(gn[co * oh * ow + px]);
            gb[static_cast<std::size_t>(co)] += static_cast<S>(acc);
          }
        }
      }
      if (w.requires_grad()) {
        auto& gw = w.grad();
        for (Index co = 0; co < cout; ++co)
          for (Index p = 0; p < patch2; ++p)
            gw[static_cast<std::size_t>(co * patch2 + p)] +=
                gwt[static_cast<std::size_t>(p * cout + co)];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// conv_transpose2d: stride-2 transposed convolution with a 2x2 kernel, the
// adjoint of a stride-2 2x2 convolution.  Weights are [Cin,Cout,2,2]; output
// is exactly [B,Cout,2H,2W] and every output pixel receives exactly one tap.
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> conv_transpose2d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b,
                           Index stride = 2) {
  check_dims(stride == 2, "conv_transpose2d: only stride 2 is supported");
  check_dims(x.rank() == 4, "conv_transpose2d: input must be [B,Cin,H,W], got " +
                                shape_str(x.shape()));
  check_dims(w.rank() == 4 && w.dim(2) == 2 && w.dim(3) == 2,
             "conv_transpose2d: weights must be [Cin,Cout,2,2], got " + shape_str(w.shape()));
  check_dims(x.dim(1) == w.dim(0), "conv_transpose2d: channel mismatch, input " +
                                       shape_str(x.shape()) + " vs weights " +
                                       shape_str(w.shape()));
  const Index bn = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const Index cout = w.dim(1);
  const bool has_bias = b.defined() && b.size() > 0;
  if (has_bias)
    check_dims(b.rank() == 1 && b.dim(0) == cout,
               "conv_transpose2d: bias " + shape_str(b.shape()) + " does not match Cout");

  // One GEMM: [B*H*W, Cin] x [Cin, Cout*4], then scatter the 4 taps.
  const Index px = bn * h * wd;
  std::vector<S> xt(static_cast<std::size_t>(px * cin));
  for (Index n = 0; n < bn; ++n)
    for (Index c = 0; c < cin; ++c)
      for (Index i = 0; i < h * wd; ++i)
        xt[static_cast<std::size_t>((n * h * wd + i) * cin + c)] = x[(n * cin + c) * h * wd + i];
  std::vector<S> wf(static_cast<std::size_t>(cin * cout * 4));
  for (Index c = 0; c < cin; ++c)
    for (Index co = 0; co < cout; ++co)
      for (Index t = 0; t < 4; ++t)
        wf[static_cast<std::size_t>(c * cout * 4 + co * 4 + t)] = w[(c * cout + co) * 4 + t];
  std::vector<S> prod(static_cast<std::size_t>(px * cout * 4));
  {
    ECMap<S> X(xt.data(), px, cin);
    ECMap<S> W(wf.data(), cin, cout * 4);
    EMap<S> P(prod.data(), px, cout * 4);
    P.noalias() = X * W;
  }
  Tensor<S> out({bn, cout, 2 * h, 2 * wd});
  for (Index n = 0; n < bn; ++n)
    for (Index i = 0; i < h; ++i)
      for (Index j = 0; j < wd; ++j) {
        const S* p = prod.data() + ((n * h + i) * wd + j) * cout * 4;
        for (Index co = 0; co < cout; ++co) {
          S* oc = out.data() + ((n * cout + co) * 2 * h) * 2 * wd;
          const S bias = has_bias ? b[co] : S(0);
          oc[(2 * i) * 2 * wd + 2 * j] = p[co * 4 + 0] + bias;
          oc[(2 * i) * 2 * wd + 2 * j + 1] = p[co * 4 + 1] + bias;
          oc[(2 * i + 1) * 2 * wd + 2 * j] = p[co * 4 + 2] + bias;
          oc[(2 * i + 1) * 2 * wd + 2 * j + 1] = p[co * 4 + 3] + bias;
        }
      }
  throw_if_nonfinite(out, "conv_transpose2d");

  if (recording<S>(x.requires_grad() || w.requires_grad() || (has_bias && b.requires_grad()))) {
    node_tape(out).record("conv_transpose2d", [x, w, b, out, bn, cin, h, wd, cout, has_bias]() mutable {
      const S* g = out.grad().data();
      for (Index n = 0; n < bn; ++n)
        for (Index i = 0; i < h; ++i)
          for (Index j = 0; j < wd; ++j) {
            // gather the 4 output taps fed by input pixel (i,j)
            for (Index co = 0; co < cout; ++co) {
              const S* gc = g + ((n * cout + co) * 2 * h) * 2 * wd;
              const S g00 = gc[(2 * i) * 2 * wd + 2 * j];
              const S g01 = gc[(2 * i) * 2 * wd + 2 * j + 1];
              const S g10 = gc[(2 * i + 1) * 2 * wd + 2 * j];
              const S g11 = gc[(2 * i + 1) * 2 * wd + 2 * j + 1];
              if (x.requires_grad()) {
                auto& gx = x.grad();
                for (Index c = 0; c < cin; ++c) {
                  const S* wc = w.data() + (c * cout + co) * 4;
                  gx[static_cast<std::size_t>((n * cin + c) * h * wd + i * wd + j)] +=
                      g00 * wc[0] + g01 * wc[1] + g10 * wc[2] + g11 * wc[3];
                }
              }
              if (w.requires_grad()) {
                auto& gw = w.grad();
                for (Index c = 0; c < cin; ++c) {
                  const S xv = x[(n * cin + c) * h * wd + i * wd + j];
                  S* wg = gw.data() + (c * cout + co) * 4;
                  wg[0] += g00 * xv;
                  wg[1] += g01 * xv;
                  wg[2] += g10 * xv;
                  wg[3] += g11 * xv;
                }
              }
            }
          }
      if (has_bias && b.requires_grad()) {
        auto& gb = b.grad();
        for (Index n = 0; n < bn; ++n)
          for (Index co = 0; co < cout; ++co) {
            const S* gc = g + ((n * cout + co) * 2 * h) * 2 * wd;
            double acc = 0.0;
            for (Index i = 0; i < 4 * h * wd; ++i) acc += static_cast<double>(gc[i]);
            gb[static_cast<std::size_t>(co)] += static_cast<S>(acc);
          }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// pixel_shuffle: [B, C*r^2, H, W] -> [B, C, rH, rW], bijective on elements.
// out[b,c,y*r+dy,x*r+dx] = in[b, c*r^2 + dy*r + dx, y, x]
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> pixel_shuffle(const Tensor<S>& x, Index r) {
  check_dims(x.rank() == 4, "pixel_shuffle: input must be [B,C,H,W], got " + shape_str(x.shape()));
  check_dims(r >= 1, "pixel_shuffle: factor must be >= 1");
  const Index bn = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  check_dims(cin % (r * r) == 0, "pixel_shuffle: channels " + std::to_string(cin) +
                                     " not divisible by r^2=" + std::to_string(r * r));
  const Index cout = cin / (r * r);
  Tensor<S> out({bn, cout, h * r, w * r});
  for (Index n = 0; n < bn; ++n)
    for (Index c = 0; c < cout; ++c)
      for (Index dy = 0; dy < r; ++dy)
        for (Index dx = 0; dx < r; ++dx) {
          const S* src = x.data() + ((n * cin + c * r * r + dy * r + dx) * h) * w;
          S* dst = out.data() + ((n * cout + c) * h * r) * w * r;
          for (Index y = 0; y < h; ++y)
            for (Index xx = 0; xx < w; ++xx)
              dst[(y * r + dy) * w * r + xx * r + dx] = src[y * w + xx];
        }
  if (recording<S>(x.requires_grad())) {
    node_tape(out).record("pixel_shuffle", [x, out, bn, cin, cout, h, w, r]() mutable {
      const S* g = out.grad().data();
      auto& gx = x.grad();
      for (Index n = 0; n < bn; ++n)
        for (Index c = 0; c < cout; ++c)
          for (Index dy = 0; dy < r; ++dy)
            for (Index dx = 0; dx < r; ++dx) {
              S* dst = gx.data() + ((n * cin + c * r * r + dy * r + dx) * h) * w;
              const S* src = g + ((n * cout + c) * h * r) * w * r;
              for (Index y = 0; y < h; ++y)
                for (Index xx = 0; xx < w; ++xx)
                  dst[y * w + xx] += src[(y * r + dy) * w * r + xx * r + dx];
            }
    });
  }
  return out;
}

/// Inverse rearrangement of pixel_shuffle (space back to channels).
template <typename S>
Tensor<S> pixel_unshuffle(const Tensor<S>& x, Index r) {
  check_dims(x.rank() == 4, "pixel_unshuffle: input must be [B,C,H,W]");
  const Index bn = x.dim(0), c = x.dim(1), hr = x.dim(2), wr = x.dim(3);
  check_dims(hr % r == 0 && wr % r == 0, "pixel_unshuffle: spatial size not divisible by r");
  const Index h = hr / r, w = wr / r;
  Tensor<S> out({bn, c * r * r, h, w});
  for (Index n = 0; n < bn; ++n)
    for (Index cc = 0; cc < c; ++cc)
      for (Index dy = 0; dy < r; ++dy)
        for (Index dx = 0; dx < r; ++dx) {
          S* dst = out.data() + ((n * c * r * r + cc * r * r + dy * r + dx) * h) * w;
          const S* src = x.data() + ((n * c + cc) * hr) * wr;
          for (Index y = 0; y < h; ++y)
            for (Index xx = 0; xx < w; ++xx) dst[y * w + xx] = src[(y * r + dy) * wr + xx * r + dx];
        }
  return out;
}

}  // namespace rstt

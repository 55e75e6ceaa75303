#pragma once

#include <Eigen/Core>
#include <unsupported/Eigen/SpecialFunctions>

#include <cmath>
#include <cstdint>

#include "rstt/tape.hpp"

namespace rstt {

template <typename S>
using EMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using EMap = Eigen::Map<EMat<S>>;
template <typename S>
using ECMap = Eigen::Map<const EMat<S>>;

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

template <typename S, typename Fwd, typename Dfdx>
Tensor<S> unary_op(const char* name, const Tensor<S>& x, Fwd f, Dfdx dfdx) {
  Tensor<S> out(x.shape());
  const S* xp = x.data();
  S* op = out.data();
  const Index n = x.size();
  for (Index i = 0; i < n; ++i) op[i] = f(xp[i]);
  throw_if_nonfinite(out, name);
  if (recording<S>(x.requires_grad())) {
    node_tape(out).record(name, [x, out, dfdx]() mutable {
      const S* g = out.grad().data();
      const S* xp2 = x.data();
      auto& gx = x.grad();
      for (Index i = 0; i < x.size(); ++i)
        gx[static_cast<std::size_t>(i)] += g[i] * dfdx(xp2[i]);
    });
  }
  return out;
}

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  check_dims(a.shape() == b.shape(),
             "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<S> out(a.shape());
  const Index n = a.size();
  for (Index i = 0; i < n; ++i) out[i] = a[i] + b[i];
  if (recording<S>(a.requires_grad() || b.requires_grad())) {
    node_tape(out).record("add", [a, b, out]() mutable {
      const S* g = out.grad().data();
      if (a.requires_grad()) accumulate_grad(a, g, a.size());
      if (b.requires_grad()) accumulate_grad(b, g, b.size());
    });
  }
  return out;
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  check_dims(a.shape() == b.shape(),
             "sub: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<S> out(a.shape());
  const Index n = a.size();
  for (Index i = 0; i < n; ++i) out[i] = a[i] - b[i];
  if (recording<S>(a.requires_grad() || b.requires_grad())) {
    node_tape(out).record("sub", [a, b, out]() mutable {
      const S* g = out.grad().data();
      if (a.requires_grad()) accumulate_grad(a, g, a.size());
      if (b.requires_grad()) {
        auto& gb = b.grad();
        for (Index i = 0; i < b.size(); ++i) gb[static_cast<std::size_t>(i)] -= g[i];
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  check_dims(a.shape() == b.shape(),
             "mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<S> out(a.shape());
  const Index n = a.size();
  for (Index i = 0; i < n; ++i) out[i] = a[i] * b[i];
  if (recording<S>(a.requires_grad() || b.requires_grad())) {
    node_tape(out).record("mul", [a, b, out]() mutable {
      const S* g = out.grad().data();
      if (a.requires_grad()) {
        auto& ga = a.grad();
        for (Index i = 0; i < a.size(); ++i) ga[static_cast<std::size_t>(i)] += g[i] * b[i];
      }
      if (b.requires_grad()) {
        auto& gb = b.grad();
        for (Index i = 0; i < b.size(); ++i) gb[static_cast<std::size_t>(i)] += g[i] * a[i];
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> add_scalar(const Tensor<S>& x, S c) {
  return unary_op("add_scalar", x, [c](S v) { return v + c; }, [](S) { return S(1); });
}

template <typename S>
Tensor<S> mul_scalar(const Tensor<S>& x, S c) {
  return unary_op("mul_scalar", x, [c](S v) { return v * c; }, [c](S) { return c; });
}

template <typename S>
Tensor<S> neg(const Tensor<S>& x) {
  return mul_scalar(x, S(-1));
}

template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
  return unary_op("relu", x, [](S v) { return v > S(0) ? v : S(0); },
                  [](S v) { return v > S(0) ? S(1) : S(0); });
}

/// Exact erf formulation: 0.5 x (1 + erf(x / sqrt(2))).
template <typename S>
Tensor<S> gelu(const Tensor<S>& x) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt_2pi = 0.39894228040143267794;
  Tensor<S> out(x.shape());
  {
    Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>> xa(x.data(), x.size());
    Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>> oa(out.data(), out.size());
    oa = S(0.5) * xa * (S(1) + (xa * static_cast<S>(inv_sqrt2)).erf());
  }
  throw_if_nonfinite(out, "gelu");
  if (recording<S>(x.requires_grad())) {
    node_tape(out).record("gelu", [x, out]() mutable {
      const S* g = out.grad().data();
      const S* xp = x.data();
      auto& gx = x.grad();
      for (Index i = 0; i < x.size(); ++i) {
        const double d = static_cast<double>(xp[i]);
        const double cdf = 0.5 * (1.0 + std::erf(d * inv_sqrt2));
        const double pdf = inv_sqrt_2pi * std::exp(-0.5 * d * d);
        gx[static_cast<std::size_t>(i)] += g[i] * static_cast<S>(cdf + d * pdf);
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> sqrt_elem(const Tensor<S>& x) {
  return unary_op("sqrt", x, [](S v) { return static_cast<S>(std::sqrt(static_cast<double>(v))); },
                  [](S v) { return static_cast<S>(0.5 / std::sqrt(static_cast<double>(v))); });
}

/// Adds b to a where b's shape is a suffix of a's shape (bias-style
/// broadcast, e.g. [T,C] + [C] or [7,H,W,C] + [H,W,C]).
template <typename S>
Tensor<S> add_broadcast(const Tensor<S>& a, const Tensor<S>& b) {
  const Index ra = a.rank(), rb = b.rank();
  check_dims(rb <= ra, "add_broadcast: rhs rank exceeds lhs");
  for (Index i = 0; i < rb; ++i)
    check_dims(b.shape()[static_cast<std::size_t>(rb - 1 - i)] ==
                   a.shape()[static_cast<std::size_t>(ra - 1 - i)],
               "add_broadcast: " + shape_str(b.shape()) + " is not a suffix of " +
                   shape_str(a.shape()));
  const Index nb = b.size();
  Tensor<S> out(a.shape());
  const Index reps = a.size() / nb;
  const S* ap = a.data();
  const S* bp = b.data();
  S* op = out.data();
  for (Index r2 = 0; r2 < reps; ++r2) {
    const S* arow = ap + r2 * nb;
    S* orow = op + r2 * nb;
    for (Index i = 0; i < nb; ++i) orow[i] = arow[i] + bp[i];
  }
  if (recording<S>(a.requires_grad() || b.requires_grad())) {
    node_tape(out).record("add_broadcast", [a, b, out, nb, reps]() mutable {
      const S* g = out.grad().data();
      if (a.requires_grad()) accumulate_grad(a, g, a.size());
      if (b.requires_grad()) {
        auto& gb = b.grad();
        for (Index r2 = 0; r2 < reps; ++r2) {
          const S* grow = g + r2 * nb;
          for (Index i = 0; i < nb; ++i) gb[static_cast<std::size_t>(i)] += grow[i];
        }
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> operator+(const Tensor<S>& a, const Tensor<S>& b) { return add(a, b); }
template <typename S>
Tensor<S> operator-(const Tensor<S>& a, const Tensor<S>& b) { return sub(a, b); }
template <typename S>
Tensor<S> operator*(const Tensor<S>& a, const Tensor<S>& b) { return mul(a, b); }
template <typename S>
Tensor<S> operator*(const Tensor<S>& a, S c) { return mul_scalar(a, c); }
template <typename S>
Tensor<S> operator*(S c, const Tensor<S>& a) { return mul_scalar(a, c); }

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> sum_all(const Tensor<S>& x) {
  double acc = 0.0;
  for (Index i = 0; i < x.size(); ++i) acc += static_cast<double>(x[i]);
  Tensor<S> out = Tensor<S>::scalar(static_cast<S>(acc));
  if (recording<S>(x.requires_grad())) {
    node_tape(out).record("sum_all", [x, out]() mutable {
      const S g = out.grad()[0];
      auto& gx = x.grad();
      for (auto& v : gx) v += g;
    });
  }
  return out;
}

template <typename S>
Tensor<S> mean_all(const Tensor<S>& x) {
  check_dims(x.size() > 0, "mean_all: empty tensor");
  double acc = 0.0;
  for (Index i = 0; i < x.size(); ++i) acc += static_cast<double>(x[i]);
  const Index n = x.size();
  Tensor<S> out = Tensor<S>::scalar(static_cast<S>(acc / static_cast<double>(n)));
  if (recording<S>(x.requires_grad())) {
    node_tape(out).record("mean_all", [x, out, n]() mutable {
      const S g = static_cast<S>(static_cast<double>(out.grad()[0]) / static_cast<double>(n));
      auto& gx = x.grad();
      for (auto& v : gx) v += g;
    });
  }
  return out;
}

/// Mean over the leading axis: [N, rest...] -> [rest...].
template <typename S>
Tensor<S> mean_axis0(const Tensor<S>& x) {
  check_dims(x.rank() >= 1 && x.dim(0) >= 1, "mean_axis0: needs a leading axis");
  const Index n0 = x.dim(0);
  Shape rest(x.shape().begin() + 1, x.shape().end());
  const Index inner = numel(rest);
  Tensor<S> out(rest);
  for (Index j = 0; j < inner; ++j) {
    double acc = 0.0;
    for (Index i = 0; i < n0; ++i) acc += static_cast<double>(x[i * inner + j]);
    out[j] = static_cast<S>(acc / static_cast<double>(n0));
  }
  if (recording<S>(x.requires_grad())) {
    node_tape(out).record("mean_axis0", [x, out, n0, inner]() mutable {
      const S* g = out.grad().data();
      auto& gx = x.grad();
      for (Index i = 0; i < n0; ++i)
        for (Index j = 0; j < inner; ++j)
          gx[static_cast<std::size_t>(i * inner + j)] += g[j] / static_cast<S>(n0);
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Matrix multiply (batched, broadcastable batch dimensions)
// ---------------------------------------------------------------------------

namespace detail {

inline void broadcast_batch(const Shape& a, const Shape& b, Shape& out, std::vector<Index>& sa,
                            std::vector<Index>& sb) {
  // Align batch dims (everything but the trailing two) from the right;
  // broadcast size-1 dims.  sa/sb become per-dim strides in units of
  // matrices, 0 for broadcast dims.
  const Index ra = static_cast<Index>(a.size()) - 2;
  const Index rb = static_cast<Index>(b.size()) - 2;
  const Index r = std::max(ra, rb);
  out.assign(static_cast<std::size_t>(r), 1);
  sa.assign(static_cast<std::size_t>(r), 0);
  sb.assign(static_cast<std::size_t>(r), 0);
  for (Index i = 0; i < r; ++i) {
    Index da = (i < ra) ? a[static_cast<std::size_t>(ra - 1 - i)] : 1;
    Index db = (i < rb) ? b[static_cast<std::size_t>(rb - 1 - i)] : 1;
    check_dims(da == db || da == 1 || db == 1,
               "matmul: batch dims not broadcastable, " + shape_str(a) + " vs " + shape_str(b));
    out[static_cast<std::size_t>(r - 1 - i)] = std::max(da, db);
  }
  // strides (in matrices) over the aligned dims
  Index stride_a = 1, stride_b = 1;
  for (Index i = 0; i < r; ++i) {
    Index da = (i < ra) ? a[static_cast<std::size_t>(ra - 1 - i)] : 1;
    Index db = (i < rb) ? b[static_cast<std::size_t>(rb - 1 - i)] : 1;
    sa[static_cast<std::size_t>(r - 1 - i)] = (da == 1) ? 0 : stride_a;
    sb[static_cast<std::size_t>(r - 1 - i)] = (db == 1) ? 0 : stride_b;
    stride_a *= da;
    stride_b *= db;
  }
}

}  // namespace detail

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  check_dims(a.rank() >= 2 && b.rank() >= 2,
             "matmul: both operands need rank >= 2, got " + shape_str(a.shape()) + " and " +
                 shape_str(b.shape()));
  const Index p = a.dim(-2), q = a.dim(-1);
  const Index q2 = b.dim(-2), r = b.dim(-1);
  check_dims(q == q2, "matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                          shape_str(b.shape()));

  // Fast path: stack of row-vectors times one shared matrix.
  if (b.rank() == 2) {
    const Index m = a.size() / q;
    Tensor<S> out = [&] {
      Shape os = a.shape();
      os.back() = r;
      return Tensor<S>(os);
    }();
    ECMap<S> A(a.data(), m, q);
    ECMap<S> B(b.data(), q, r);
    EMap<S> C(out.data(), m, r);
    C.noalias() = A * B;
    throw_if_nonfinite(out, "matmul");
    if (recording<S>(a.requires_grad() || b.requires_grad())) {
      node_tape(out).record("matmul", [a, b, out, m, q, r]() mutable {
        ECMap<S> G(out.grad().data(), m, r);
        if (a.requires_grad()) {
          ECMap<S> B2(b.data(), q, r);
          EMap<S> GA(a.grad().data(), m, q);
          GA.noalias() += G * B2.transpose();
          if (gradient_sabotage_enabled()) a.grad()[0] += S(0.01);
        }
        if (b.requires_grad()) {
          ECMap<S> A2(a.data(), m, q);
          EMap<S> GB(b.grad().data(), q, r);
          GB.noalias() += A2.transpose() * G;
        }
      });
    }
    return out;
  }

  Shape batch;
  std::vector<Index> sa, sb;
  detail::broadcast_batch(a.shape(), b.shape(), batch, sa, sb);
  Shape os = batch;
  os.push_back(p);
  os.push_back(r);
  Tensor<S> out(os);
  const Index nbatch = numel(batch);
  auto offsets = [batch, sa, sb](Index flat, Index& oa, Index& ob) {
    oa = 0;
    ob = 0;
    for (Index d = static_cast<Index>(batch.size()) - 1; d >= 0; --d) {
      Index idx = flat % batch[static_cast<std::size_t>(d)];
      flat /= batch[static_cast<std::size_t>(d)];
      oa += idx * sa[static_cast<std::size_t>(d)];
      ob += idx * sb[static_cast<std::size_t>(d)];
    }
  };
  for (Index i = 0; i < nbatch; ++i) {
    Index oa, ob;
    offsets(i, oa, ob);
    ECMap<S> A(a.data() + oa * p * q, p, q);
    ECMap<S> B(b.data() + ob * q * r, q, r);
    EMap<S> C(out.data() + i * p * r, p, r);
    C.noalias() = A * B;
  }
  throw_if_nonfinite(out, "matmul");
  if (recording<S>(a.requires_grad() || b.requires_grad())) {
    node_tape(out).record("matmul", [a, b, out, offsets, nbatch, p, q, r]() mutable {
      for (Index i = 0; i < nbatch; ++i) {
        Index oa, ob;
        offsets(i, oa, ob);
        ECMap<S> G(out.grad().data() + i * p * r, p, r);
        if (a.requires_grad()) {
          ECMap<S> B2(b.data() + ob * q * r, q, r);
          EMap<S> GA(a.grad().data() + oa * p * q, p, q);
          GA.noalias() += G * B2.transpose();
        }
        if (b.requires_grad()) {
          ECMap<S> A2(a.data() + oa * p * q, p, q);
          EMap<S> GB(b.grad().data() + ob * q * r, q, r);
          GB.noalias() += A2.transpose() * G;
        }
      }
      if (gradient_sabotage_enabled() && a.requires_grad()) a.grad()[0] += S(0.01);
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Softmax and layer norm
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> softmax(const Tensor<S>& x, int axis) {
  const int r = static_cast<int>(x.rank());
  if (axis < 0) axis += r;
  check_dims(axis >= 0 && axis < r, "softmax: axis out of range for shape " + shape_str(x.shape()));
  Index outer = 1, inner = 1;
  const Index n = x.shape()[static_cast<std::size_t>(axis)];
  for (int i = 0; i < axis; ++i) outer *= x.shape()[static_cast<std::size_t>(i)];
  for (int i = axis + 1; i < r; ++i) inner *= x.shape()[static_cast<std::size_t>(i)];

  Tensor<S> out(x.shape());
  const S* xp = x.data();
  S* op = out.data();
  for (Index o = 0; o < outer; ++o) {
    for (Index in = 0; in < inner; ++in) {
      const Index base = o * n * inner + in;
      S mx = xp[base];
      for (Index k = 1; k < n; ++k) mx = std::max(mx, xp[base + k * inner]);
      double denom = 0.0;
      for (Index k = 0; k < n; ++k) {
        S e = static_cast<S>(std::exp(static_cast<double>(xp[base + k * inner] - mx)));
        op[base + k * inner] = e;
        denom += static_cast<double>(e);
      }
      const S inv = static_cast<S>(1.0 / denom);
      for (Index k = 0; k < n; ++k) op[base + k * inner] *= inv;
    }
  }
  throw_if_nonfinite(out, "softmax");
  if (recording<S>(x.requires_grad())) {
    node_tape(out).record("softmax", [x, out, outer, inner, n]() mutable {
      const S* y = out.data();
      const S* g = out.grad().data();
      auto& gx = x.grad();
      for (Index o = 0; o < outer; ++o) {
        for (Index in = 0; in < inner; ++in) {
          const Index base = o * n * inner + in;
          double dot = 0.0;
          for (Index k = 0; k < n; ++k) {
            const Index ix = base + k * inner;
            dot += static_cast<double>(g[ix]) * static_cast<double>(y[ix]);
          }
          for (Index k = 0; k < n; ++k) {
            const Index ix = base + k * inner;
            gx[static_cast<std::size_t>(ix)] +=
                y[ix] * (g[ix] - static_cast<S>(dot));
          }
        }
      }
    });
  }
  return out;
}

/// Per-token normalization over the channel (last) axis, then affine.
template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                     S eps = S(1e-5)) {
  const Index c = x.dim(-1);
  check_dims(gamma.rank() == 1 && gamma.dim(0) == c && beta.rank() == 1 && beta.dim(0) == c,
             "layer_norm: affine shapes " + shape_str(gamma.shape()) + "/" +
                 shape_str(beta.shape()) + " do not match channels of " + shape_str(x.shape()));
  const Index t = x.size() / c;
  Tensor<S> out(x.shape());
  std::vector<S> inv_std(static_cast<std::size_t>(t));
  std::vector<S> mean(static_cast<std::size_t>(t));
  const S* xp = x.data();
  S* op = out.data();
  using Arr = Eigen::Array<S, Eigen::Dynamic, 1>;
  Eigen::Map<const Arr> ga(gamma.data(), c);
  Eigen::Map<const Arr> ba(beta.data(), c);
  for (Index i = 0; i < t; ++i) {
    const S* row = xp + i * c;
    Eigen::Map<const Arr> ra(row, c);
    const double m = ra.template cast<double>().sum() / static_cast<double>(c);
    const double var =
        (ra.template cast<double>() - m).square().sum() / static_cast<double>(c);
    const double is = 1.0 / std::sqrt(var + static_cast<double>(eps));
    mean[static_cast<std::size_t>(i)] = static_cast<S>(m);
    inv_std[static_cast<std::size_t>(i)] = static_cast<S>(is);
    Eigen::Map<Arr> oa(op + i * c, c);
    oa = (ra - static_cast<S>(m)) * static_cast<S>(is) * ga + ba;
  }
  throw_if_nonfinite(out, "layer_norm");
  if (recording<S>(x.requires_grad() || gamma.requires_grad() || beta.requires_grad())) {
    node_tape(out).record("layer_norm", [x, gamma, beta, out, mean, inv_std, t, c]() mutable {
      const S* g = out.grad().data();
      const S* xp2 = x.data();
      for (Index i = 0; i < t; ++i) {
        const S* row = xp2 + i * c;
        const S* grow = g + i * c;
        const double m = static_cast<double>(mean[static_cast<std::size_t>(i)]);
        const double is = static_cast<double>(inv_std[static_cast<std::size_t>(i)]);
        double sum_gy = 0.0, sum_gyx = 0.0;
        for (Index k = 0; k < c; ++k) {
          double xh = (static_cast<double>(row[k]) - m) * is;
          double gy = static_cast<double>(grow[k]) * static_cast<double>(gamma[k]);
          sum_gy += gy;
          sum_gyx += gy * xh;
        }
        if (x.requires_grad()) {
          auto& gx = x.grad();
          for (Index k = 0; k < c; ++k) {
            double xh = (static_cast<double>(row[k]) - m) * is;
            double gy = static_cast<double>(grow[k]) * static_cast<double>(gamma[k]);
            double v = (gy - sum_gy / c - xh * sum_gyx / c) * is;
            gx[static_cast<std::size_t>(i * c + k)] += static_cast<S>(v);
          }
        }
        if (gamma.requires_grad()) {
          auto& gg = gamma.grad();
          for (Index k = 0; k < c; ++k) {
            double xh = (static_cast<double>(row[k]) - m) * is;
            gg[static_cast<std::size_t>(k)] += grow[k] * static_cast<S>(xh);
          }
        }
        if (beta.requires_grad()) {
          auto& gb = beta.grad();
          for (Index k = 0; k < c; ++k) gb[static_cast<std::size_t>(k)] += grow[k];
        }
      }
    });
  }
  return out;
}

/// Two linear layers with GELU between: x[T,C] -> W1[C,Ch] -> gelu -> W2[Ch,C].
template <typename S>
Tensor<S> mlp(const Tensor<S>& x, const Tensor<S>& w1, const Tensor<S>& b1, const Tensor<S>& w2,
              const Tensor<S>& b2) {
  check_dims(x.dim(-1) == w1.dim(0), "mlp: input channels " + shape_str(x.shape()) +
                                         " do not match W1 " + shape_str(w1.shape()));
  check_dims(w1.dim(1) == w2.dim(0) && w2.dim(1) == x.dim(-1),
             "mlp: W1 " + shape_str(w1.shape()) + " and W2 " + shape_str(w2.shape()) +
                 " are inconsistent");
  Tensor<S> h = add_broadcast(matmul(x, w1), b1);
  h = gelu(h);
  return add_broadcast(matmul(h, w2), b2);
}

// ---------------------------------------------------------------------------
// Shape manipulation
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> permute(const Tensor<S>& x, const std::vector<int>& axes) {
  const Index r = x.rank();
  check_dims(static_cast<Index>(axes.size()) == r, "permute: axes rank mismatch");
  Shape os(static_cast<std::size_t>(r));
  std::vector<Index> in_strides(static_cast<std::size_t>(r), 1);
  for (Index i = r - 2; i >= 0; --i)
    in_strides[static_cast<std::size_t>(i)] =
        in_strides[static_cast<std::size_t>(i + 1)] * x.shape()[static_cast<std::size_t>(i + 1)];
  std::vector<Index> strides(static_cast<std::size_t>(r));
  for (Index i = 0; i < r; ++i) {
    os[static_cast<std::size_t>(i)] = x.shape()[static_cast<std::size_t>(axes[static_cast<std::size_t>(i)])];
    strides[static_cast<std::size_t>(i)] = in_strides[static_cast<std::size_t>(axes[static_cast<std::size_t>(i)])];
  }
  Tensor<S> out(os);
  const S* xp = x.data();
  S* op = out.data();
  const Index n = x.size();
  std::vector<Index> idx(static_cast<std::size_t>(r), 0);
  Index src = 0;
  for (Index i = 0; i < n; ++i) {
    op[i] = xp[src];
    for (Index d = r - 1; d >= 0; --d) {
      idx[static_cast<std::size_t>(d)]++;
      src += strides[static_cast<std::size_t>(d)];
      if (idx[static_cast<std::size_t>(d)] < os[static_cast<std::size_t>(d)]) break;
      src -= strides[static_cast<std::size_t>(d)] * os[static_cast<std::size_t>(d)];
      idx[static_cast<std::size_t>(d)] = 0;
    }
  }
  if (recording<S>(x.requires_grad())) {
    node_tape(out).record("permute", [x, out, os, strides, r, n]() mutable {
      const S* g = out.grad().data();
      auto& gx = x.grad();
      std::vector<Index> idx(static_cast<std::size_t>(r), 0);
      Index src = 0;
      for (Index i = 0; i < n; ++i) {
        gx[static_cast<std::size_t>(src)] += g[i];
        for (Index d = r - 1; d >= 0; --d) {
          idx[static_cast<std::size_t>(d)]++;
          src += strides[static_cast<std::size_t>(d)];
          if (idx[static_cast<std::size_t>(d)] < os[static_cast<std::size_t>(d)]) break;
          src -= strides[static_cast<std::size_t>(d)] * os[static_cast<std::size_t>(d)];
          idx[static_cast<std::size_t>(d)] = 0;
        }
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> concat(const std::vector<Tensor<S>>& xs, int axis) {
  check_dims(!xs.empty(), "concat: no inputs");
  const Index r = xs[0].rank();
  int ax = axis < 0 ? axis + static_cast<int>(r) : axis;
  check_dims(ax >= 0 && ax < r, "concat: axis out of range");
  Shape os = xs[0].shape();
  Index total = 0;
  for (const auto& t : xs) {
    check_dims(t.rank() == r, "concat: rank mismatch");
    for (Index d = 0; d < r; ++d)
      if (d != ax)
        check_dims(t.shape()[static_cast<std::size_t>(d)] == os[static_cast<std::size_t>(d)],
                   "concat: shape mismatch " + shape_str(t.shape()) + " vs " + shape_str(os));
    total += t.dim(static_cast<int>(ax));
  }
  os[static_cast<std::size_t>(ax)] = total;
  Tensor<S> out(os);
  Index outer = 1, inner = 1;
  for (Index d = 0; d < ax; ++d) outer *= os[static_cast<std::size_t>(d)];
  for (Index d = ax + 1; d < r; ++d) inner *= os[static_cast<std::size_t>(d)];
  Index off = 0;
  bool any_grad = false;
  for (const auto& t : xs) any_grad = any_grad || t.requires_grad();
  for (const auto& t : xs) {
    const Index na = t.dim(static_cast<int>(ax));
    for (Index o = 0; o < outer; ++o)
      std::copy(t.data() + o * na * inner, t.data() + (o + 1) * na * inner,
                out.data() + (o * total + off) * inner);
    off += na;
  }
  if (recording<S>(any_grad)) {
    node_tape(out).record("concat", [xs, out, outer, inner, total, ax]() mutable {
      const S* g = out.grad().data();
      Index off2 = 0;
      for (auto& t : xs) {
        const Index na = t.dim(static_cast<int>(ax));
        if (t.requires_grad()) {
          auto& gt = t.grad();
          for (Index o = 0; o < outer; ++o) {
            const S* src = g + (o * total + off2) * inner;
            S* dst = gt.data() + o * na * inner;
            for (Index i = 0; i < na * inner; ++i) dst[i] += src[i];
          }
        }
        off2 += na;
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> slice(const Tensor<S>& x, int axis, Index start, Index len) {
  const Index r = x.rank();
  int ax = axis < 0 ? axis + static_cast<int>(r) : axis;
  check_dims(ax >= 0 && ax < r, "slice: axis out of range");
  const Index n = x.dim(ax);
  check_dims(start >= 0 && len >= 0 && start + len <= n,
             "slice: range [" + std::to_string(start) + "," + std::to_string(start + len) +
                 ") out of bounds for axis size " + std::to_string(n));
  Shape os = x.shape();
  os[static_cast<std::size_t>(ax)] = len;
  Tensor<S> out(os);
  Index outer = 1, inner = 1;
  for (Index d = 0; d < ax; ++d) outer *= x.shape()[static_cast<std::size_t>(d)];
  for (Index d = ax + 1; d < r; ++d) inner *= x.shape()[static_cast<std::size_t>(d)];
  for (Index o = 0; o < outer; ++o)
    std::copy(x.data() + (o * n + start) * inner, x.data() + (o * n + start + len) * inner,
              out.data() + o * len * inner);
  if (recording<S>(x.requires_grad())) {
    node_tape(out).record("slice", [x, out, outer, inner, n, start, len]() mutable {
      const S* g = out.grad().data();
      auto& gx = x.grad();
      for (Index o = 0; o < outer; ++o) {
        S* dst = gx.data() + (o * n + start) * inner;
        const S* src = g + o * len * inner;
        for (Index i = 0; i < len * inner; ++i) dst[i] += src[i];
      }
    });
  }
  return out;
}

/// Tiles x n times along a new leading axis: [rest...] -> [n, rest...].
template <typename S>
Tensor<S> repeat_axis0(const Tensor<S>& x, Index n) {
  check_dims(n >= 1, "repeat_axis0: n must be >= 1");
  Shape os;
  os.push_back(n);
  for (Index d : x.shape()) os.push_back(d);
  Tensor<S> out(os);
  const Index inner = x.size();
  for (Index i = 0; i < n; ++i)
    std::copy(x.data(), x.data() + inner, out.data() + i * inner);
  if (recording<S>(x.requires_grad())) {
    node_tape(out).record("repeat_axis0", [x, out, n, inner]() mutable {
      const S* g = out.grad().data();
      auto& gx = x.grad();
      for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < inner; ++j) gx[static_cast<std::size_t>(j)] += g[i * inner + j];
    });
  }
  return out;
}

/// Row gather: table[V,E], indices[K] -> [K,E].  Backward scatter-adds.
template <typename S>
Tensor<S> embedding_rows(const Tensor<S>& table, const std::vector<std::int32_t>& idx) {
  check_dims(table.rank() == 2, "embedding_rows: table must be [rows, width]");
  const Index v = table.dim(0), e = table.dim(1);
  const Index k = static_cast<Index>(idx.size());
  Tensor<S> out({k, e});
  for (Index i = 0; i < k; ++i) {
    const Index row = idx[static_cast<std::size_t>(i)];
    check_dims(row >= 0 && row < v, "embedding_rows: index out of range");
    std::copy(table.data() + row * e, table.data() + (row + 1) * e, out.data() + i * e);
  }
  if (recording<S>(table.requires_grad())) {
    node_tape(out).record("embedding_rows", [table, out, idx, e, k]() mutable {
      const S* g = out.grad().data();
      auto& gt = table.grad();
      for (Index i = 0; i < k; ++i) {
        S* dst = gt.data() + idx[static_cast<std::size_t>(i)] * e;
        const S* src = g + i * e;
        for (Index j = 0; j < e; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

}  // namespace rstt

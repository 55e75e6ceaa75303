#pragma once

#include "rstt/window.hpp"

namespace rstt {

enum class FusionMode { mca, concat, add };

inline FusionMode fusion_from_string(const std::string& s) {
  if (s == "mca") return FusionMode::mca;
  if (s == "concat") return FusionMode::concat;
  if (s == "add") return FusionMode::add;
  throw config_error("unknown fusion mode '" + s + "' (expected mca|concat|add)");
}

inline const char* to_string(FusionMode m) {
  switch (m) {
    case FusionMode::mca: return "mca";
    case FusionMode::concat: return "concat";
    case FusionMode::add: return "add";
  }
  return "?";
}

/// Temporal identity of one decoder query frame: the index of its left input
/// anchor and whether it sits on an anchor (parity 0) or between anchors
/// (parity 1).  For the standard 7-frame query, frame f has anchor floor(f/2)
/// and parity f mod 2.
struct QueryStamp {
  Index anchor = 0;
  Index parity = 0;
  double frac = 0.0;  // blend position in (0,1) for parity-1 queries
};

inline std::vector<QueryStamp> septet_stamps() {
  std::vector<QueryStamp> s(7);
  for (Index f = 0; f < 7; ++f) s[static_cast<std::size_t>(f)] = QueryStamp{f / 2, f % 2, f % 2 ? 0.5 : 0.0};
  return s;
}

// ---------------------------------------------------------------------------
// Relative position bias.  The learned table has one row per discrete offset
// and one column per head; a BiasMap precomputes table-row indices for every
// (query token, key token) pair of a window.
//
// Encoder (self-attention) offsets: (dt, dy, dx) with dt in [-(N-1), N-1],
// dy,dx in [-(M-1), M-1].  Decoder (cross-attention) offsets additionally
// carry the query frame's temporal parity: (anchor - t, parity, dy, dx).
// ---------------------------------------------------------------------------

struct BiasMap {
  std::vector<std::int32_t> idx;  // [tq * tkv]
  Index tq = 0, tkv = 0;
  Index rows = 0;  // required bias-table row count
};

inline Index encoder_bias_rows(Index n_frames, Index m, bool include_time = true) {
  const Index nt = include_time ? n_frames : 1;
  return (2 * nt - 1) * (2 * m - 1) * (2 * m - 1);
}

inline Index decoder_bias_rows(Index n_frames, Index m) {
  return (2 * n_frames - 1) * 2 * (2 * m - 1) * (2 * m - 1);
}

inline BiasMap encoder_bias_map(Index n_frames, Index m, bool include_time = true) {
  const Index nt = include_time ? n_frames : 1;
  const Index t = nt * m * m;
  const Index span = 2 * m - 1;
  BiasMap bm;
  bm.tq = t;
  bm.tkv = t;
  bm.rows = encoder_bias_rows(n_frames, m, include_time);
  bm.idx.resize(static_cast<std::size_t>(t * t));
  for (Index i = 0; i < t; ++i) {
    const Index ti = i / (m * m), yi = (i / m) % m, xi = i % m;
    for (Index j = 0; j < t; ++j) {
      const Index tj = j / (m * m), yj = (j / m) % m, xj = j % m;
      const Index row = ((ti - tj + nt - 1) * span + (yi - yj + m - 1)) * span + (xi - xj + m - 1);
      bm.idx[static_cast<std::size_t>(i * t + j)] = static_cast<std::int32_t>(row);
    }
  }
  return bm;
}

inline BiasMap decoder_bias_map(const std::vector<QueryStamp>& stamps, Index n_frames, Index m) {
  const Index f = static_cast<Index>(stamps.size());
  const Index tq = f * m * m, tkv = n_frames * m * m;
  const Index span = 2 * m - 1;
  BiasMap bm;
  bm.tq = tq;
  bm.tkv = tkv;
  bm.rows = decoder_bias_rows(n_frames, m);
  bm.idx.resize(static_cast<std::size_t>(tq * tkv));
  for (Index i = 0; i < tq; ++i) {
    const auto& st = stamps[static_cast<std::size_t>(i / (m * m))];
    const Index yi = (i / m) % m, xi = i % m;
    for (Index j = 0; j < tkv; ++j) {
      const Index tj = j / (m * m), yj = (j / m) % m, xj = j % m;
      const Index row =
          (((st.anchor - tj + n_frames - 1) * 2 + st.parity) * span + (yi - yj + m - 1)) * span +
          (xi - xj + m - 1);
      bm.idx[static_cast<std::size_t>(i * tkv + j)] = static_cast<std::int32_t>(row);
    }
  }
  return bm;
}

/// Gathers the per-pair bias matrix [heads, tq, tkv] from the learned table.
template <typename S>
Tensor<S> gather_bias(const Tensor<S>& table, const BiasMap& map) {
  check_dims(table.rank() == 2 && table.dim(0) == map.rows,
             "gather_bias: table " + shape_str(table.shape()) + " does not cover " +
                 std::to_string(map.rows) + " offsets");
  const Index heads = table.dim(1);
  Tensor<S> rows = embedding_rows(table, map.idx);          // [tq*tkv, heads]
  Tensor<S> hb = permute(rows, {1, 0});                     // [heads, tq*tkv]
  return hb.reshape({heads, map.tq, map.tkv});
}

// ---------------------------------------------------------------------------
// Windowed multi-head attention core: softmax(Q Kt / sqrt(d) + bias + mask) V
// per window and head.  Hand-rolled loops keep every query row's arithmetic
// independent of how many rows are batched together, so per-frame and joint
// evaluations are bit-identical.
// ---------------------------------------------------------------------------

namespace detail {

/// Dot product with a fixed 8-lane accumulator split: vectorizable without
/// reassociation, and the result depends only on the operands and length.
template <typename S>
inline S lane_dot(const S* a, const S* b, Index d) {
  S acc[8] = {S(0), S(0), S(0), S(0), S(0), S(0), S(0), S(0)};
  Index l = 0;
  for (; l + 8 <= d; l += 8)
    for (int u = 0; u < 8; ++u) acc[u] += a[l + u] * b[l + u];
  for (int u = 0; l < d; ++l, ++u) acc[u] += a[l] * b[l];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

/// In-place numerically stabilized softmax of one contiguous row.
template <typename S>
inline void softmax_row(S* row, Index n) {
  Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>> r(row, n);
  const S mx = r.maxCoeff();
  r = (r - mx).exp();
  const S denom = r.sum();
  r *= S(1) / denom;
}

}  // namespace detail

template <typename S>
Tensor<S> windowed_attention(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v,
                             Index heads, const Tensor<S>& bias = {}, const Tensor<S>& mask = {},
                             Tensor<S>* probs_out = nullptr) {
  check_dims(q.rank() == 3 && k.rank() == 3 && v.rank() == 3,
             "windowed_attention: expected [nW, tokens, C] inputs");
  const Index nw = q.dim(0), tq = q.dim(1), c = q.dim(2);
  const Index tkv = k.dim(1);
  check_dims(k.dim(0) == nw && v.dim(0) == nw && v.dim(1) == tkv && k.dim(2) == c &&
                 v.dim(2) == c,
             "windowed_attention: mismatched window tensors " + shape_str(q.shape()) + ", " +
                 shape_str(k.shape()) + ", " + shape_str(v.shape()));
  check_config(heads >= 1 && c % heads == 0,
               "windowed_attention: channels " + std::to_string(c) + " not divisible by " +
                   std::to_string(heads) + " heads");
  const bool has_bias = bias.defined();
  if (has_bias)
    check_dims(bias.rank() == 3 && bias.dim(0) == heads && bias.dim(1) == tq && bias.dim(2) == tkv,
               "windowed_attention: bias shape " + shape_str(bias.shape()) + " != [heads,Tq,Tkv]");
  const bool has_mask = mask.defined();
  if (has_mask)
    check_dims(mask.rank() == 3 && mask.dim(0) == nw && mask.dim(1) == tq && mask.dim(2) == tkv,
               "windowed_attention: mask shape " + shape_str(mask.shape()) +
                   " does not match token counts");
  const Index d = c / heads;
  const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(d)));

  const bool rec = recording<S>(q.requires_grad() || k.requires_grad() || v.requires_grad() ||
                                (has_bias && bias.requires_grad()));
  Tensor<S> probs;
  const bool keep_probs = rec || probs_out != nullptr;
  if (keep_probs) probs = Tensor<S>({nw, heads, tq, tkv});

  Tensor<S> out({nw, tq, c});
  std::vector<S> row(static_cast<std::size_t>(tkv));
  for (Index w = 0; w < nw; ++w) {
    for (Index hd = 0; hd < heads; ++hd) {
      const S* qb = q.data() + (w * tq) * c + hd * d;
      const S* kb = k.data() + (w * tkv) * c + hd * d;
      const S* vb = v.data() + (w * tkv) * c + hd * d;
      const S* bb = has_bias ? bias.data() + hd * tq * tkv : nullptr;
      const S* mb = has_mask ? mask.data() + w * tq * tkv : nullptr;
      for (Index i = 0; i < tq; ++i) {
        const S* qi = qb + i * c;
        S* r = row.data();
        for (Index j = 0; j < tkv; ++j)
          r[j] = detail::lane_dot(qi, kb + j * c, d) * scale;
        if (bb) {
          const S* brow = bb + i * tkv;
          for (Index j = 0; j < tkv; ++j) r[j] += brow[j];
        }
        if (mb) {
          const S* mrow = mb + i * tkv;
          for (Index j = 0; j < tkv; ++j) r[j] += mrow[j];
        }
        detail::softmax_row(r, tkv);
        S* oi = out.data() + (w * tq + i) * c + hd * d;
        for (Index l = 0; l < d; ++l) oi[l] = S(0);
        for (Index j = 0; j < tkv; ++j) {
          const S p = r[j];
          const S* vj = vb + j * c;
          for (Index l = 0; l < d; ++l) oi[l] += p * vj[l];
        }
        if (keep_probs)
          std::copy(row.begin(), row.end(),
                    probs.data() + ((w * heads + hd) * tq + i) * tkv);
      }
    }
  }
  throw_if_nonfinite(out, "windowed_attention");
  if (probs_out) *probs_out = probs;

  if (rec) {
    node_tape(out).record("windowed_attention", [q, k, v, bias, out, probs, nw, heads, tq, tkv, c, d, scale, has_bias]() mutable {
      const S* g = out.grad().data();
      const bool gq = q.requires_grad(), gk = k.requires_grad(), gv = v.requires_grad();
      const bool gb = has_bias && bias.requires_grad();
      std::vector<S> dp(static_cast<std::size_t>(tkv));
      for (Index w = 0; w < nw; ++w) {
        for (Index hd = 0; hd < heads; ++hd) {
          const S* qb = q.data() + (w * tq) * c + hd * d;
          const S* kb = k.data() + (w * tkv) * c + hd * d;
          const S* vb = v.data() + (w * tkv) * c + hd * d;
          S* gqb = gq ? q.grad().data() + (w * tq) * c + hd * d : nullptr;
          S* gkb = gk ? k.grad().data() + (w * tkv) * c + hd * d : nullptr;
          S* gvb = gv ? v.grad().data() + (w * tkv) * c + hd * d : nullptr;
          S* gbb = gb ? bias.grad().data() + hd * tq * tkv : nullptr;
          for (Index i = 0; i < tq; ++i) {
            const S* gi = g + (w * tq + i) * c + hd * d;
            const S* pi = probs.data() + ((w * heads + hd) * tq + i) * tkv;
            double rowdot = 0.0;
            for (Index j = 0; j < tkv; ++j) {
              const S acc = detail::lane_dot(gi, vb + j * c, d);
              dp[static_cast<std::size_t>(j)] = acc;
              rowdot += static_cast<double>(acc) * static_cast<double>(pi[j]);
              if (gv) {
                S* gvj = gvb + j * c;
                const S p = pi[j];
                for (Index l = 0; l < d; ++l) gvj[l] += p * gi[l];
              }
            }
            const S* qi = qb + i * c;
            for (Index j = 0; j < tkv; ++j) {
              const S ds = pi[j] * (dp[static_cast<std::size_t>(j)] - static_cast<S>(rowdot));
              if (gbb) gbb[i * tkv + j] += ds;
              const S dss = ds * scale;
              if (gq) {
                const S* kj = kb + j * c;
                S* gqi = gqb + i * c;
                for (Index l = 0; l < d; ++l) gqi[l] += dss * kj[l];
              }
              if (gk) {
                S* gkj = gkb + j * c;
                for (Index l = 0; l < d; ++l) gkj[l] += dss * qi[l];
              }
            }
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Per-block weights.  One AttentionWeights instance covers a single
// (S)W-MSA / (S)W-MCA sub-unit: projections + bias table (mca), or the
// channel-matching projection (concat/add fusion), plus its LN pairs and MLP.
// ---------------------------------------------------------------------------

template <typename S>
struct AttentionWeights {
  Tensor<S> wq, wk, wv, wo;  // [C,C]
  Tensor<S> bias_table;      // [offset rows, heads]
  Tensor<S> proj_w, proj_b;  // fusion-ablation channel matcher
  Tensor<S> ln1_g, ln1_b;    // query-side LN
  Tensor<S> lnkv_g, lnkv_b;  // dictionary LN (cross attention)
  Tensor<S> mlp_w1, mlp_b1, mlp_w2, mlp_b2;
  Tensor<S> ln2_g, ln2_b;
};

/// Projections + windowed core + output projection over token stacks.
/// q_tokens/kv_tokens: [nW, T, C] (a single [T, C] window also works).
template <typename S>
Tensor<S> multi_head_attention(const Tensor<S>& q_tokens, const Tensor<S>& kv_tokens,
                               const AttentionWeights<S>& w, Index heads,
                               const Tensor<S>& mask = {}, const BiasMap* bias_map = nullptr,
                               Tensor<S>* probs_out = nullptr) {
  const bool flat = q_tokens.rank() == 2;
  Tensor<S> qt = flat ? q_tokens.reshape({1, q_tokens.dim(0), q_tokens.dim(1)}) : q_tokens;
  Tensor<S> kt = flat ? kv_tokens.reshape({1, kv_tokens.dim(0), kv_tokens.dim(1)}) : kv_tokens;
  check_dims(qt.rank() == 3 && kt.rank() == 3, "multi_head_attention: expected token stacks");
  const Index c = qt.dim(2);
  check_dims(kt.dim(2) == c, "multi_head_attention: channel mismatch " + shape_str(qt.shape()) +
                                 " vs " + shape_str(kt.shape()));
  const Index nw = qt.dim(0), tq = qt.dim(1), tkv = kt.dim(1);
  Tensor<S> qp = matmul(qt.reshape({nw * tq, c}), w.wq).reshape({nw, tq, c});
  Tensor<S> kp = matmul(kt.reshape({nw * tkv, c}), w.wk).reshape({nw, tkv, c});
  Tensor<S> vp = matmul(kt.reshape({nw * tkv, c}), w.wv).reshape({nw, tkv, c});
  Tensor<S> bias;
  if (bias_map) bias = gather_bias(w.bias_table, *bias_map);
  Tensor<S> attn = windowed_attention(qp, kp, vp, heads, bias, mask, probs_out);
  Tensor<S> out = matmul(attn.reshape({nw * tq, c}), w.wo).reshape({nw, tq, c});
  return flat ? out.reshape({tq, c}) : out;
}

// ---------------------------------------------------------------------------
// Fusion variants (supplement ablation).  fuse_variant computes the branch
// that replaces cross-attention: for concat/add the dictionary's frames are
// averaged per spatial location, channel-matched by a 1x1 projection.
// Inputs are channels-last frame stacks: q [F,H,W,C], dict [N,H,W,C].
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> fuse_variant(const Tensor<S>& q, const Tensor<S>& dict, const AttentionWeights<S>& w,
                       FusionMode mode, Index m, Index heads,
                       const std::vector<QueryStamp>& stamps, const Tensor<S>& mask = {},
                       Tensor<S>* probs_out = nullptr) {
  check_dims(q.rank() == 4 && dict.rank() == 4,
             "fuse_variant: expected [F,H,W,C] query and [N,H,W,C] dictionary");
  check_dims(q.dim(1) == dict.dim(1) && q.dim(2) == dict.dim(2),
             "fuse_variant: spatial size mismatch, query " + shape_str(q.shape()) +
                 " vs dictionary " + shape_str(dict.shape()));
  const Index f = q.dim(0), h = q.dim(1), wd = q.dim(2), c = q.dim(3);
  const Index n = dict.dim(0);
  switch (mode) {
    case FusionMode::mca: {
      check_dims(static_cast<Index>(stamps.size()) == f,
                 "fuse_variant: stamps do not match query frames");
      Tensor<S> qw = window_partition(q, m);
      Tensor<S> kw = window_partition(dict, m);
      BiasMap bm = decoder_bias_map(stamps, n, m);
      const Index nw = qw.dim(0), tq = qw.dim(1), tkv = kw.dim(1);
      Tensor<S> qp = matmul(qw.reshape({nw * tq, c}), w.wq).reshape({nw, tq, c});
      Tensor<S> kp = matmul(kw.reshape({nw * tkv, c}), w.wk).reshape({nw, tkv, c});
      Tensor<S> vp = matmul(kw.reshape({nw * tkv, c}), w.wv).reshape({nw, tkv, c});
      Tensor<S> bias = gather_bias(w.bias_table, bm);
      Tensor<S> attn = windowed_attention(qp, kp, vp, heads, bias, mask, probs_out);
      Tensor<S> out = matmul(attn.reshape({nw * tq, c}), w.wo).reshape({nw, tq, c});
      return window_reverse(out, m, f, h, wd);
    }
    case FusionMode::concat: {
      Tensor<S> pooled = repeat_axis0(mean_axis0(dict), f);           // [F,H,W,C]
      Tensor<S> both = concat<S>({q, pooled}, -1);                    // [F,H,W,2C]
      Tensor<S> fused = add_broadcast(
          matmul(both.reshape({f * h * wd, 2 * c}), w.proj_w), w.proj_b);
      return fused.reshape({f, h, wd, c});
    }
    case FusionMode::add: {
      Tensor<S> pooled = repeat_axis0(mean_axis0(dict), f);
      Tensor<S> summed = add(q, pooled);
      Tensor<S> fused = add_broadcast(
          matmul(summed.reshape({f * h * wd, c}), w.proj_w), w.proj_b);
      return fused.reshape({f, h, wd, c});
    }
  }
  throw config_error("fuse_variant: unknown fusion mode");
}

// ---------------------------------------------------------------------------
// Swin blocks.  An encoder block runs two residual sub-blocks on plain
// windows ([LN -> W-MSA -> add] -> [LN -> MLP -> add]) and then repeats the
// pair on cyclically shifted windows with the seam mask (SW-MSA).  A decoder
// block does the same with cross-attention against the stage dictionary,
// whose K/V projections are computed once per sub-unit and reused by all
// frame queries.
// ---------------------------------------------------------------------------

template <typename S>
struct EncoderBlockWeights {
  AttentionWeights<S> win;      // W-MSA unit
  AttentionWeights<S> shifted;  // SW-MSA unit
};

template <typename S>
struct DecoderBlockWeights {
  AttentionWeights<S> win;      // W-MCA (or fusion) unit
  AttentionWeights<S> shifted;  // SW-MCA (or fusion) unit
};

struct DecodeDebug {
  bool per_frame_queries = false;     // evaluate the frame queries one at a time
  bool recompute_kv_per_query = false;  // re-project K,V for every frame query
};

namespace detail {

/// Per-frame tiling of the spatial mask for per-frame window mode:
/// [nW, M^2, M^2] -> [N*nW, M^2, M^2].
template <typename S>
Tensor<S> tile_mask_per_frame(const Tensor<S>& spatial, Index n) {
  const Index nw = spatial.dim(0), t = spatial.dim(1);
  Tensor<S> out({n * nw, t, t});
  for (Index i = 0; i < n; ++i)
    std::copy(spatial.data(), spatial.data() + nw * t * t, out.data() + i * nw * t * t);
  return out;
}

}  // namespace detail

template <typename S>
Tensor<S> swin_encoder_unit(const Tensor<S>& x, const AttentionWeights<S>& w, Index m,
                            Index heads, bool shift, bool include_time = true) {
  const Index n = x.dim(0), h = x.dim(1), wd = x.dim(2), c = x.dim(3);
  check_dims(h % m == 0 && wd % m == 0,
             "swin_encoder_unit: window " + std::to_string(m) + " does not divide " +
                 shape_str(x.shape()));
  const Index s = m / 2;
  Tensor<S> cur = shift ? cyclic_shift(x, s, s) : x;
  Tensor<S> ln = layer_norm(cur, w.ln1_g, w.ln1_b);
  Tensor<S> win = window_partition(ln, m, include_time);
  Tensor<S> mask;
  if (shift) {
    AttentionMask<S> am = build_shift_mask<S>(h, wd, m, s, s);
    mask = include_time ? expand_mask(am, n, n) : detail::tile_mask_per_frame(am.spatial, n);
  }
  BiasMap bm = encoder_bias_map(n, m, include_time);
  Tensor<S> attn = multi_head_attention(win, win, w, heads, mask, &bm);
  Tensor<S> rev = window_reverse(attn, m, n, h, wd, include_time);
  cur = add(cur, rev);
  Tensor<S> ln2 = layer_norm(cur, w.ln2_g, w.ln2_b);
  cur = add(cur, mlp(ln2.reshape({n * h * wd, c}), w.mlp_w1, w.mlp_b1, w.mlp_w2, w.mlp_b2)
                     .reshape({n, h, wd, c}));
  return shift ? cyclic_shift(cur, -s, -s) : cur;
}

template <typename S>
Tensor<S> swin_encoder_block(const Tensor<S>& x, const EncoderBlockWeights<S>& w, Index m,
                             Index heads, bool include_time = true) {
  Tensor<S> y = swin_encoder_unit(x, w.win, m, heads, /*shift=*/false, include_time);
  return swin_encoder_unit(y, w.shifted, m, heads, /*shift=*/true, include_time);
}

template <typename S>
Tensor<S> swin_decoder_unit(const Tensor<S>& q, const Tensor<S>& dict,
                            const AttentionWeights<S>& w, Index m, Index heads,
                            const std::vector<QueryStamp>& stamps, FusionMode mode, bool shift,
                            const DecodeDebug* dbg = nullptr, Tensor<S>* probs_out = nullptr) {
  check_dims(q.rank() == 4 && dict.rank() == 4,
             "swin_decoder_unit: expected [F,H,W,C] query and [N,H,W,C] dictionary");
  check_dims(q.dim(1) == dict.dim(1) && q.dim(2) == dict.dim(2),
             "swin_decoder_unit: spatial size mismatch, query " + shape_str(q.shape()) +
                 " vs dictionary " + shape_str(dict.shape()));
  const Index f = q.dim(0), h = q.dim(1), wd = q.dim(2), c = q.dim(3);
  const Index n = dict.dim(0);
  const Index s = m / 2;
  const bool windowed = (mode == FusionMode::mca);
  const bool do_shift = shift && windowed;  // fusion ablations are pointwise

  Tensor<S> cur = do_shift ? cyclic_shift(q, s, s) : q;
  Tensor<S> d = do_shift ? cyclic_shift(dict, s, s) : dict;
  Tensor<S> lnq = layer_norm(cur, w.ln1_g, w.ln1_b);
  Tensor<S> lnd = layer_norm(d, w.lnkv_g, w.lnkv_b);

  Tensor<S> branch;
  if (windowed) {
    Tensor<S> mask;
    if (do_shift) mask = expand_mask(build_shift_mask<S>(h, wd, m, s, s), f, n);
    if (dbg && (dbg->per_frame_queries || dbg->recompute_kv_per_query)) {
      // Debug paths: evaluate the frame queries one at a time (optionally
      // re-projecting the dictionary for each).  Bit-identical to the joint
      // path because attention rows are independent.
      Tensor<S> qp = matmul(lnq.reshape({f * h * wd, c}), w.wq).reshape({f, h, wd, c});
      Tensor<S> kp, vp;
      if (!dbg->recompute_kv_per_query) {
        kp = matmul(lnd.reshape({n * h * wd, c}), w.wk).reshape({n, h, wd, c});
        vp = matmul(lnd.reshape({n * h * wd, c}), w.wv).reshape({n, h, wd, c});
      }
      std::vector<Tensor<S>> frame_outs;
      for (Index ff = 0; ff < f; ++ff) {
        if (dbg->recompute_kv_per_query) {
          kp = matmul(lnd.reshape({n * h * wd, c}), w.wk).reshape({n, h, wd, c});
          vp = matmul(lnd.reshape({n * h * wd, c}), w.wv).reshape({n, h, wd, c});
        }
        Tensor<S> qf = slice(qp, 0, ff, 1);
        Tensor<S> qw = window_partition(qf, m);
        Tensor<S> kw = window_partition(kp, m);
        Tensor<S> vw = window_partition(vp, m);
        BiasMap bm = decoder_bias_map({stamps[static_cast<std::size_t>(ff)]}, n, m);
        Tensor<S> bias = gather_bias(w.bias_table, bm);
        Tensor<S> fm;
        if (do_shift) fm = expand_mask(build_shift_mask<S>(h, wd, m, s, s), 1, n);
        frame_outs.push_back(windowed_attention(qw, kw, vw, heads, bias, fm));
      }
      Tensor<S> attn = concat(frame_outs, 1);  // [nW, F*M*M, C]
      const Index nw = attn.dim(0);
      Tensor<S> proj = matmul(attn.reshape({nw * f * m * m, c}), w.wo).reshape({nw, f * m * m, c});
      branch = window_reverse(proj, m, f, h, wd);
    } else {
      branch = fuse_variant(lnq, lnd, w, FusionMode::mca, m, heads, stamps, mask, probs_out);
    }
  } else {
    branch = fuse_variant(lnq, lnd, w, mode, m, heads, stamps);
  }

  cur = add(cur, branch);
  Tensor<S> ln2 = layer_norm(cur, w.ln2_g, w.ln2_b);
  cur = add(cur, mlp(ln2.reshape({f * h * wd, c}), w.mlp_w1, w.mlp_b1, w.mlp_w2, w.mlp_b2)
                     .reshape({f, h, wd, c}));
  return do_shift ? cyclic_shift(cur, -s, -s) : cur;
}

template <typename S>
Tensor<S> swin_decoder_block(const Tensor<S>& q, const Tensor<S>& dict,
                             const DecoderBlockWeights<S>& w, Index m, Index heads,
                             const std::vector<QueryStamp>& stamps,
                             FusionMode mode = FusionMode::mca, const DecodeDebug* dbg = nullptr,
                             Tensor<S>* probs_out = nullptr) {
  Tensor<S> y = swin_decoder_unit(q, dict, w.win, m, heads, stamps, mode, /*shift=*/false, dbg,
                                  probs_out);
  return swin_decoder_unit(y, dict, w.shifted, m, heads, stamps, mode, /*shift=*/true, dbg);
}

}  // namespace rstt

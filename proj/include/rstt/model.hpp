#pragma once

#include <array>
#include <map>

#include "rstt/attention.hpp"
#include "rstt/conv.hpp"
#include "rstt/resample.hpp"

namespace rstt {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct ModelConfig {
  Index channels = 96;         // C
  Index window = 4;            // M
  Index in_frames = 4;         // N, fixed by the 4 -> 7 mapping
  Index blocks_per_stage = 2;  // S/M/L presets: 2/3/4
  Index heads = 2;
  Index mlp_ratio = 4;
  FusionMode fusion = FusionMode::mca;
  bool recon_block = false;  // 10 extra residual blocks before upsampling
  Index pad_multiple = 32;   // three stride-2 stages, then M-sized windows
  bool temporal_windows = true;  // encoder windows span all frames (default)

  static ModelConfig preset(char which) {
    ModelConfig c;
    switch (which) {
      case 'S': c.blocks_per_stage = 2; break;
      case 'M': c.blocks_per_stage = 3; break;
      case 'L': c.blocks_per_stage = 4; break;
      default:
        throw config_error(std::string("unknown preset '") + which + "' (expected S, M or L)");
    }
    return c;
  }

  void validate() const {
    check_config(channels >= 1, "ModelConfig: channels must be positive");
    check_config(heads >= 1 && channels % heads == 0,
                 "ModelConfig: channels " + std::to_string(channels) + " not divisible by " +
                     std::to_string(heads) + " heads");
    check_config(window >= 1, "ModelConfig: window must be >= 1");
    check_config(in_frames == 4, "ModelConfig: input frame count is fixed at 4");
    check_config(blocks_per_stage >= 1, "ModelConfig: blocks_per_stage must be >= 1");
    check_config(mlp_ratio >= 1, "ModelConfig: mlp_ratio must be >= 1");
    check_config(pad_multiple >= 8 * window && pad_multiple % (8 * window) == 0,
                 "ModelConfig: pad_multiple must be a positive multiple of 8*window");
  }
};

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

/// Four LFR/LR input frames [4,3,H,W], time stamps {2t-1, 2t+1, 2t+3, 2t+5}.
template <typename S>
struct FrameQuad {
  Tensor<S> frames;

  FrameQuad() = default;
  explicit FrameQuad(Tensor<S> f) : frames(std::move(f)) {
    check_dims(frames.rank() == 4 && frames.dim(0) == 4 && frames.dim(1) == 3,
               "FrameQuad: expected [4,3,H,W], got " + shape_str(frames.shape()));
  }
  Index height() const { return frames.dim(2); }
  Index width() const { return frames.dim(3); }
};

/// Seven HFR/HR frames [7,3,H,W], time stamps {2t-1 .. 2t+5}.
template <typename S>
struct ClipSeptet {
  Tensor<S> frames;

  ClipSeptet() = default;
  explicit ClipSeptet(Tensor<S> f) : frames(std::move(f)) {
    check_dims(frames.rank() == 4 && frames.dim(0) == 7 && frames.dim(1) == 3,
               "ClipSeptet: expected [7,3,H,W], got " + shape_str(frames.shape()));
  }
  Index height() const { return frames.dim(2); }
  Index width() const { return frames.dim(3); }
};

/// Pre-downsample Swin outputs T0..T3 (resolutions 1, 1/2, 1/4, 1/8); the
/// deepest features E3 equal T3.  These are the reusable decoder dictionaries.
template <typename S>
struct FeatureStages {
  std::array<Tensor<S>, 4> t;

  Tensor<S>& e3() { return t[3]; }
  const Tensor<S>& e3() const { return t[3]; }
};

template <typename S>
struct QuerySet {
  Tensor<S> q;  // [F,h,w,C]
  std::vector<QueryStamp> stamps;
};

template <typename S>
struct NamedParam {
  std::string name;
  Tensor<S> tensor;
};

/// Capture request/result for attention-map export.
template <typename S>
struct AttnCapture {
  Index stage = 0;  // decoder stage (0 = last, finest)
  Index block = -1;  // -1 = last block of the stage
  bool captured = false;
  Tensor<S> probs;  // [nW, heads, Tq, Tkv]
  Index m = 0, heads = 0, q_frames = 0, kv_frames = 0;
};

// ---------------------------------------------------------------------------
// Query builder (free functions; no weights involved).
// Odd output stamps copy the deepest encoder features; intermediate stamps
// blend the two adjacent anchors.  build_query is the n=2 special case of the
// arbitrary-timestamp builder, so the two are bit-identical by construction.
// ---------------------------------------------------------------------------

template <typename S>
QuerySet<S> build_query_arbitrary(const Tensor<S>& e3,
                                  const std::vector<std::vector<double>>& gap_fracs) {
  check_dims(e3.rank() == 4 && e3.dim(0) == 4,
             "build_query: E3 must have 4 frame channels, got " + shape_str(e3.shape()));
  check_dims(gap_fracs.size() == 3, "build_query: expected fractions for 3 gaps");
  for (const auto& g : gap_fracs)
    for (double a : g)
      check_dims(a > 0.0 && a < 1.0,
                 "build_query: fraction " + std::to_string(a) + " outside (0,1)");
  std::vector<Tensor<S>> parts;
  QuerySet<S> qs;
  for (Index t = 0; t < 4; ++t) {
    parts.push_back(slice(e3, 0, t, 1));
    qs.stamps.push_back(QueryStamp{t, 0, 0.0});
    if (t == 3) break;
    Tensor<S> left = parts.back();
    Tensor<S> right = slice(e3, 0, t + 1, 1);
    for (double a : gap_fracs[static_cast<std::size_t>(t)]) {
      parts.push_back(add(mul_scalar(left, static_cast<S>(1.0 - a)),
                          mul_scalar(right, static_cast<S>(a))));
      qs.stamps.push_back(QueryStamp{t, 1, a});
    }
  }
  qs.q = concat(parts, 0);
  return qs;
}

template <typename S>
QuerySet<S> build_query_arbitrary(const Tensor<S>& e3, Index n) {
  check_dims(n >= 2, "build_query: subdivisions n must be >= 2");
  std::vector<double> fr;
  for (Index i = 1; i < n; ++i) fr.push_back(static_cast<double>(i) / static_cast<double>(n));
  return build_query_arbitrary(e3, {fr, fr, fr});
}

template <typename S>
QuerySet<S> build_query(const Tensor<S>& e3) {
  return build_query_arbitrary(e3, Index(2));
}

// ---------------------------------------------------------------------------
// The RSTT model
// ---------------------------------------------------------------------------

template <typename S>
class RSTTModel {
 public:
  explicit RSTTModel(ModelConfig cfg, std::uint64_t seed = 0) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(mix_seed(seed, 0x52535454ULL));
    const Index c = cfg_.channels;

    feat_w_ = add_param("feat.w", {c, 3, 3, 3}, Init::trunc_normal, rng);
    feat_b_ = add_param("feat.b", {c}, Init::zero, rng);

    for (Index k = 0; k < 4; ++k) {
      auto& st = enc_[static_cast<std::size_t>(k)];
      for (Index i = 0; i < cfg_.blocks_per_stage; ++i) {
        EncoderBlockWeights<S> blk;
        const std::string base = "enc" + std::to_string(k) + ".b" + std::to_string(i);
        blk.win = make_attention_unit(base + ".win", /*cross=*/false, FusionMode::mca, rng);
        blk.shifted = make_attention_unit(base + ".shift", false, FusionMode::mca, rng);
        st.blocks.push_back(std::move(blk));
      }
      if (k < 3) {
        const std::string base = "enc" + std::to_string(k) + ".down";
        st.down_w = add_param(base + ".w", {c, c, 3, 3}, Init::trunc_normal, rng);
        st.down_b = add_param(base + ".b", {c}, Init::zero, rng);
      }
    }

    for (Index k = 3; k >= 0; --k) {
      auto& st = dec_[static_cast<std::size_t>(k)];
      for (Index i = 0; i < cfg_.blocks_per_stage; ++i) {
        DecoderBlockWeights<S> blk;
        const std::string base = "dec" + std::to_string(k) + ".b" + std::to_string(i);
        blk.win = make_attention_unit(base + ".win", /*cross=*/true, cfg_.fusion, rng);
        blk.shifted = make_attention_unit(base + ".shift", true, cfg_.fusion, rng);
        st.blocks.push_back(std::move(blk));
      }
      if (k > 0) {
        const std::string base = "dec" + std::to_string(k) + ".up";
        st.up_w = add_param(base + ".w", {c, c, 2, 2}, Init::trunc_normal, rng);
        st.up_b = add_param(base + ".b", {c}, Init::zero, rng);
      }
    }

    if (cfg_.recon_block) {
      for (Index j = 0; j < 10; ++j) {
        const std::string base = "recon.res" + std::to_string(j);
        ResBlock rb;
        rb.w1 = add_param(base + ".w1", {c, c, 3, 3}, Init::trunc_normal, rng);
        rb.b1 = add_param(base + ".b1", {c}, Init::zero, rng);
        rb.w2 = add_param(base + ".w2", {c, c, 3, 3}, Init::zero, rng);
        rb.b2 = add_param(base + ".b2", {c}, Init::zero, rng);
        res_.push_back(std::move(rb));
      }
    }
    recon_w_ = add_param("recon.out.w", {48, c, 3, 3}, Init::zero, rng);
    recon_b_ = add_param("recon.out.b", {48}, Init::zero, rng);
  }

  const ModelConfig& config() const { return cfg_; }

  std::vector<NamedParam<S>>& params() { return params_; }
  const std::vector<NamedParam<S>>& params() const { return params_; }

  Tensor<S>& param(const std::string& name) {
    for (auto& p : params_)
      if (p.name == name) return p.tensor;
    throw config_error("no parameter named '" + name + "'");
  }

  Index param_count() const {
    Index n = 0;
    for (const auto& p : params_) n += p.tensor.size();
    return n;
  }

  void set_requires_grad(bool on) {
    for (auto& p : params_) p.tensor.set_requires_grad(on);
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  /// Shared 3x3 conv lifting padded RGB frames [4,3,H,W] to features [4,H,W,C].
  Tensor<S> extract_features(const Tensor<S>& frames) const {
    check_dims(frames.rank() == 4 && frames.dim(1) == 3,
               "extract_features: expected [N,3,H,W], got " + shape_str(frames.shape()));
    Tensor<S> f = conv2d(frames, feat_w_, feat_b_, 1, 1);
    return permute(f, {0, 2, 3, 1});
  }

  /// Four encoder stages; T_k are the pre-downsample Swin outputs.
  FeatureStages<S> encode(const Tensor<S>& feats) const {
    check_dims(feats.rank() == 4 && feats.dim(3) == cfg_.channels,
               "encode: expected [N,H,W,C] features, got " + shape_str(feats.shape()));
    check_dims(feats.dim(1) % (8 * cfg_.window) == 0 && feats.dim(2) % (8 * cfg_.window) == 0,
               "encode: spatial size " + shape_str(feats.shape()) +
                   " must be a multiple of 8*window");
    FeatureStages<S> st;
    Tensor<S> x = feats;
    for (Index k = 0; k < 4; ++k) {
      for (const auto& blk : enc_[static_cast<std::size_t>(k)].blocks)
        x = swin_encoder_block(x, blk, cfg_.window, cfg_.heads, cfg_.temporal_windows);
      st.t[static_cast<std::size_t>(k)] = x;
      if (k < 3) x = downsample(x, enc_[static_cast<std::size_t>(k)]);
    }
    return st;
  }

  /// Four decoder stages with deconvolution between them; every block of a
  /// stage queries that stage's dictionary T_k.
  Tensor<S> decode(const FeatureStages<S>& stages, const QuerySet<S>& qs,
                   const DecodeDebug* dbg = nullptr, AttnCapture<S>* cap = nullptr) const {
    check_dims(qs.q.defined() && qs.q.rank() == 4, "decode: query tensor undefined");
    check_dims(qs.q.dim(1) == stages.t[3].dim(1) && qs.q.dim(2) == stages.t[3].dim(2),
               "decode: query " + shape_str(qs.q.shape()) + " is not at 1/8 resolution " +
                   shape_str(stages.t[3].shape()));
    if (cap)
      check_config(cap->stage >= 0 && cap->stage < 4,
                   "decode: capture stage out of range [0,4)");
    Tensor<S> x = qs.q;
    for (Index k = 3; k >= 0; --k) {
      const auto& st = dec_[static_cast<std::size_t>(k)];
      const Index nblocks = static_cast<Index>(st.blocks.size());
      for (Index i = 0; i < nblocks; ++i) {
        Tensor<S>* probs = nullptr;
        if (cap && cap->stage == k && (cap->block < 0 ? i == nblocks - 1 : i == cap->block)) {
          probs = &cap->probs;
          cap->captured = true;
          cap->m = cfg_.window;
          cap->heads = cfg_.heads;
          cap->q_frames = static_cast<Index>(qs.stamps.size());
          cap->kv_frames = cfg_.in_frames;
        }
        x = swin_decoder_block(x, stages.t[static_cast<std::size_t>(k)],
                               st.blocks[static_cast<std::size_t>(i)], cfg_.window, cfg_.heads,
                               qs.stamps, cfg_.fusion, dbg, probs);
      }
      if (k > 0) x = upsample(x, st);
    }
    return x;
  }

  /// Final synthesis: optional residual stack, 3x3 conv to 3*16 channels and
  /// a single 1-to-4 PixelShuffle.  Produces the residual on top of the
  /// trilinear warm start.
  Tensor<S> reconstruct(const Tensor<S>& d0) const {
    check_dims(d0.rank() == 4 && d0.dim(3) == cfg_.channels,
               "reconstruct: expected [F,H,W,C], got " + shape_str(d0.shape()));
    Tensor<S> x = permute(d0, {0, 3, 1, 2});  // [F,C,H,W]
    for (const auto& rb : res_) {
      Tensor<S> y = relu(conv2d(x, rb.w1, rb.b1, 1, 1));
      y = conv2d(y, rb.w2, rb.b2, 1, 1);
      x = add(x, y);
    }
    x = conv2d(x, recon_w_, recon_b_, 1, 1);  // [F,48,H,W]
    return pixel_shuffle(x, 4);               // [F,3,4H,4W]
  }

  ClipSeptet<S> forward(const FrameQuad<S>& quad, const DecodeDebug* dbg = nullptr,
                        AttnCapture<S>* cap = nullptr) const {
    const Index h = quad.height(), w = quad.width();
    const Index pm = cfg_.pad_multiple;
    check_dims(h >= pm && w >= pm,
               "forward: input frames must be at least pad_multiple (" + std::to_string(pm) +
                   ") on each side, got " + shape_str(quad.frames.shape()));
    const Index ph = (pm - h % pm) % pm, pw = (pm - w % pm) % pm;
    Tensor<S> x = reflect_pad_hw(quad.frames, ph, pw);
    FeatureStages<S> stages = encode(extract_features(x));
    QuerySet<S> qs = build_query(stages.e3());
    Tensor<S> d0 = decode(stages, qs, dbg, cap);
    Tensor<S> resid = crop_hw(reconstruct(d0), 4 * h, 4 * w);
    Tensor<S> warm = trilinear_resize(quad.frames, 7, 4 * h, 4 * w);
    Tensor<S> out = add(resid, warm);
    if (!out.all_finite()) throw numeric_error("forward: non-finite output septet");
    return ClipSeptet<S>(out);
  }

 private:
  enum class Init { trunc_normal, zero, one };

  Tensor<S> add_param(const std::string& name, Shape shape, Init init, Rng& rng) {
    Tensor<S> t;
    switch (init) {
      case Init::trunc_normal: t = Tensor<S>::trunc_normal(std::move(shape), rng, 0.02); break;
      case Init::zero: t = Tensor<S>::zeros(std::move(shape)); break;
      case Init::one: t = Tensor<S>::ones(std::move(shape)); break;
    }
    t.set_requires_grad(true);
    params_.push_back(NamedParam<S>{name, t});
    return t;
  }

  AttentionWeights<S> make_attention_unit(const std::string& base, bool cross, FusionMode mode,
                                          Rng& rng) {
    const Index c = cfg_.channels;
    AttentionWeights<S> w;
    w.ln1_g = add_param(base + ".ln1.g", {c}, Init::one, rng);
    w.ln1_b = add_param(base + ".ln1.b", {c}, Init::zero, rng);
    if (cross) {
      w.lnkv_g = add_param(base + ".lnkv.g", {c}, Init::one, rng);
      w.lnkv_b = add_param(base + ".lnkv.b", {c}, Init::zero, rng);
    }
    if (!cross || mode == FusionMode::mca) {
      w.wq = add_param(base + ".wq", {c, c}, Init::trunc_normal, rng);
      w.wk = add_param(base + ".wk", {c, c}, Init::trunc_normal, rng);
      w.wv = add_param(base + ".wv", {c, c}, Init::trunc_normal, rng);
      w.wo = add_param(base + ".wo", {c, c}, Init::zero, rng);
      const Index rows = cross ? decoder_bias_rows(cfg_.in_frames, cfg_.window)
                               : encoder_bias_rows(cfg_.in_frames, cfg_.window,
                                                   cfg_.temporal_windows);
      w.bias_table = add_param(base + ".bias", {rows, cfg_.heads}, Init::zero, rng);
    } else if (mode == FusionMode::concat) {
      w.proj_w = add_param(base + ".proj.w", {2 * c, c}, Init::zero, rng);
      w.proj_b = add_param(base + ".proj.b", {c}, Init::zero, rng);
    } else {  // add
      w.proj_w = add_param(base + ".proj.w", {c, c}, Init::zero, rng);
      w.proj_b = add_param(base + ".proj.b", {c}, Init::zero, rng);
    }
    w.mlp_w1 = add_param(base + ".mlp.w1", {c, cfg_.mlp_ratio * c}, Init::trunc_normal, rng);
    w.mlp_b1 = add_param(base + ".mlp.b1", {cfg_.mlp_ratio * c}, Init::zero, rng);
    w.mlp_w2 = add_param(base + ".mlp.w2", {cfg_.mlp_ratio * c, c}, Init::zero, rng);
    w.mlp_b2 = add_param(base + ".mlp.b2", {c}, Init::zero, rng);
    w.ln2_g = add_param(base + ".ln2.g", {c}, Init::one, rng);
    w.ln2_b = add_param(base + ".ln2.b", {c}, Init::zero, rng);
    return w;
  }

  struct ResBlock {
    Tensor<S> w1, b1, w2, b2;
  };
  struct EncStage {
    std::vector<EncoderBlockWeights<S>> blocks;
    Tensor<S> down_w, down_b;
  };
  struct DecStage {
    std::vector<DecoderBlockWeights<S>> blocks;
    Tensor<S> up_w, up_b;
  };

  Tensor<S> downsample(const Tensor<S>& x, const EncStage& st) const {
    Tensor<S> nchw = permute(x, {0, 3, 1, 2});
    Tensor<S> y = conv2d(nchw, st.down_w, st.down_b, 2, 1);
    return permute(y, {0, 2, 3, 1});
  }

  Tensor<S> upsample(const Tensor<S>& x, const DecStage& st) const {
    Tensor<S> nchw = permute(x, {0, 3, 1, 2});
    Tensor<S> y = conv_transpose2d(nchw, st.up_w, st.up_b, 2);
    return permute(y, {0, 2, 3, 1});
  }

  ModelConfig cfg_;
  Tensor<S> feat_w_, feat_b_;
  std::array<EncStage, 4> enc_;
  std::array<DecStage, 4> dec_;
  std::vector<ResBlock> res_;
  Tensor<S> recon_w_, recon_b_;
  std::vector<NamedParam<S>> params_;
};

/// Exact count of scalar weights for a configuration.
inline Index count_params(const ModelConfig& cfg) {
  RSTTModel<float> m(cfg, 0);
  return m.param_count();
}

// ---------------------------------------------------------------------------
// Attention-map export: per (head, window, frame) the cross-attention
// distribution over the dictionary, averaged over the window's query pixels
// (so each map's weights sum to 1).  The grid lays the 4 dictionary frames
// side by side: [M, 4*M].
// ---------------------------------------------------------------------------

template <typename S>
struct AttentionMapSet {
  Index m = 0, heads = 0, windows = 0, frames = 0, kv_frames = 0;
  struct Map {
    Index head, window, frame;
    Index rows, cols;
    std::vector<S> grid;  // rows*cols, weights summing to ~1
  };
  std::vector<Map> maps;
};

template <typename S>
AttentionMapSet<S> dump_attention(const RSTTModel<S>& model, const FrameQuad<S>& quad,
                                  Index stage = 0) {
  check_config(stage >= 0 && stage < 4, "dump_attention: stage out of range [0,4)");
  AttnCapture<S> cap;
  cap.stage = stage;
  model.forward(quad, nullptr, &cap);
  check_config(cap.captured, "dump_attention: capture failed");
  const Index nw = cap.probs.dim(0), heads = cap.probs.dim(1);
  const Index m = cap.m, f = cap.q_frames, kf = cap.kv_frames;
  const Index tq = cap.probs.dim(2), tkv = cap.probs.dim(3);
  check_dims(tq == f * m * m && tkv == kf * m * m, "dump_attention: unexpected capture shape");
  AttentionMapSet<S> set;
  set.m = m;
  set.heads = heads;
  set.windows = nw;
  set.frames = f;
  set.kv_frames = kf;
  for (Index hd = 0; hd < heads; ++hd)
    for (Index w = 0; w < nw; ++w)
      for (Index fr = 0; fr < f; ++fr) {
        typename AttentionMapSet<S>::Map map;
        map.head = hd;
        map.window = w;
        map.frame = fr;
        map.rows = m;
        map.cols = kf * m;
        map.grid.assign(static_cast<std::size_t>(m * kf * m), S(0));
        for (Index i = 0; i < m * m; ++i) {
          const S* row = cap.probs.data() + ((w * heads + hd) * tq + fr * m * m + i) * tkv;
          for (Index j = 0; j < tkv; ++j) {
            const Index t = j / (m * m), ly = (j / m) % m, lx = j % m;
            map.grid[static_cast<std::size_t>(ly * kf * m + t * m + lx)] +=
                row[j] / static_cast<S>(m * m);
          }
        }
        set.maps.push_back(std::move(map));
      }
  return set;
}

}  // namespace rstt

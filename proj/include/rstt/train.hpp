#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <ostream>

#include "rstt/checkpoint.hpp"

namespace rstt {

// ---------------------------------------------------------------------------
// Training configuration (defaults follow the training recipe)
// ---------------------------------------------------------------------------

struct TrainConfig {
  double lr0 = 2e-4;
  double lr_min = 1e-7;
  std::int64_t restart_period = 30000;  // cosine restart every P iterations
  double beta1 = 0.9;
  double beta2 = 0.99;
  double adam_eps = 1e-8;
  double weight_decay = 1e-4;
  double charb_eps = 1e-3;
  bool charb_global = false;  // literal global-norm reduction (default: elementwise mean)
  int batch_size = 2;
  std::int64_t max_iters = 1000;
  std::uint64_t seed = 0;
  std::int64_t checkpoint_interval = 1000;

  void validate() const {
    check_config(lr_min < lr0, "TrainConfig: lr_min must be below lr0");
    check_config(restart_period >= 1, "TrainConfig: restart_period must be >= 1");
    check_config(charb_eps > 0.0, "TrainConfig: charbonnier epsilon must be positive");
    check_config(batch_size >= 1, "TrainConfig: batch_size must be >= 1");
    check_config(max_iters >= 1, "TrainConfig: max_iters must be >= 1");
    check_config(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0,
                 "TrainConfig: betas must lie in [0,1)");
  }
};

// ---------------------------------------------------------------------------
// Charbonnier loss: elementwise mean of sqrt(d^2 + eps^2) by default, or the
// literal global norm sqrt(sum d^2 + eps^2) when global is set.
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> charbonnier(const Tensor<S>& pred, const Tensor<S>& gt, S eps = S(1e-3),
                      bool global = false) {
  check_dims(pred.shape() == gt.shape(),
             "charbonnier: shape mismatch " + shape_str(pred.shape()) + " vs " +
                 shape_str(gt.shape()));
  Tensor<S> d = sub(pred, gt);
  Tensor<S> sq = mul(d, d);
  if (global) return sqrt_elem(add_scalar(sum_all(sq), eps * eps));
  return mean_all(sqrt_elem(add_scalar(sq, eps * eps)));
}

template <typename S>
Tensor<S> charbonnier(const ClipSeptet<S>& pred, const ClipSeptet<S>& gt, S eps = S(1e-3),
                      bool global = false) {
  return charbonnier(pred.frames, gt.frames, eps, global);
}

// ---------------------------------------------------------------------------
// Cosine annealing with fixed-period warm restarts:
// lr = lr_min + (lr0 - lr_min) * (1 + cos(pi * (iter mod P) / P)) / 2
// ---------------------------------------------------------------------------

inline double cosine_restart_lr(std::int64_t iter, const TrainConfig& cfg) {
  check_dims(iter >= 0, "cosine_restart_lr: iteration must be >= 0");
  const double phase = static_cast<double>(iter % cfg.restart_period) /
                       static_cast<double>(cfg.restart_period);
  return cfg.lr_min +
         (cfg.lr0 - cfg.lr_min) * (1.0 + std::cos(3.14159265358979323846 * phase)) / 2.0;
}

// ---------------------------------------------------------------------------
// Adam with decoupled weight decay.  Moments are kept per parameter name so
// state survives checkpoint round-trips; decay multiplies parameters directly
// rather than flowing through the gradient.
// ---------------------------------------------------------------------------

template <typename S>
class AdamW {
 public:
  AdamW() = default;
  explicit AdamW(const TrainConfig& cfg)
      : beta1_(cfg.beta1), beta2_(cfg.beta2), eps_(cfg.adam_eps), weight_decay_(cfg.weight_decay) {}
  AdamW(double beta1, double beta2, double eps, double weight_decay)
      : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

  void step(std::vector<NamedParam<S>>& params, double lr) {
    check_dims(lr > 0.0, "adamw_step: learning rate must be positive");
    ++step_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
    for (auto& p : params) {
      if (!p.tensor.requires_grad()) continue;
      const Index n = p.tensor.size();
      auto& g = p.tensor.grad();
      for (Index i = 0; i < n; ++i)
        if (!std::isfinite(static_cast<double>(g[static_cast<std::size_t>(i)])))
          throw numeric_error("adamw_step: non-finite gradient in parameter '" + p.name + "'");
      auto& m = moment(m1_, p.name, n);
      auto& v = moment(m2_, p.name, n);
      S* w = p.tensor.data();
      const double decay = 1.0 - lr * weight_decay_;
      for (Index i = 0; i < n; ++i) {
        const double gi = static_cast<double>(g[static_cast<std::size_t>(i)]);
        double mi = beta1_ * static_cast<double>(m[static_cast<std::size_t>(i)]) +
                    (1.0 - beta1_) * gi;
        double vi = beta2_ * static_cast<double>(v[static_cast<std::size_t>(i)]) +
                    (1.0 - beta2_) * gi * gi;
        m[static_cast<std::size_t>(i)] = static_cast<S>(mi);
        v[static_cast<std::size_t>(i)] = static_cast<S>(vi);
        const double mhat = mi / bc1;
        const double vhat = vi / bc2;
        double wi = static_cast<double>(w[i]) * decay;
        wi -= lr * mhat / (std::sqrt(vhat) + eps_);
        w[i] = static_cast<S>(wi);
      }
    }
  }

  std::int64_t step_count() const { return step_; }
  void set_step_count(std::int64_t s) { step_ = s; }

  /// Optimizer state as named tensors ("opt.m.<param>", "opt.v.<param>").
  std::vector<NamedParam<S>> state_tensors(const std::vector<NamedParam<S>>& params) const {
    std::vector<NamedParam<S>> out;
    for (const auto& p : params) {
      auto it1 = m1_.find(p.name);
      auto it2 = m2_.find(p.name);
      if (it1 == m1_.end() || it2 == m2_.end()) continue;
      Tensor<S> m(p.tensor.shape()), v(p.tensor.shape());
      std::copy(it1->second.begin(), it1->second.end(), m.data());
      std::copy(it2->second.begin(), it2->second.end(), v.data());
      out.push_back({"opt.m." + p.name, m});
      out.push_back({"opt.v." + p.name, v});
    }
    return out;
  }

  void load_state(LoadedCheckpoint<S>& ck, const std::vector<NamedParam<S>>& params) {
    if (ck.opt_step >= 0) step_ = ck.opt_step;
    for (const auto& p : params) {
      Tensor<S>* m = ck.find("opt.m." + p.name);
      Tensor<S>* v = ck.find("opt.v." + p.name);
      if (!m || !v) continue;
      check_dims(m->shape() == p.tensor.shape() && v->shape() == p.tensor.shape(),
                 "optimizer state shape mismatch for '" + p.name + "'");
      m1_[p.name].assign(m->data(), m->data() + m->size());
      m2_[p.name].assign(v->data(), v->data() + v->size());
    }
  }

 private:
  std::vector<S>& moment(std::map<std::string, std::vector<S>>& store, const std::string& name,
                         Index n) {
    auto& buf = store[name];
    if (buf.empty()) buf.assign(static_cast<std::size_t>(n), S(0));
    return buf;
  }

  double beta1_ = 0.9, beta2_ = 0.99, eps_ = 1e-8, weight_decay_ = 0.0;
  std::int64_t step_ = 0;
  std::map<std::string, std::vector<S>> m1_, m2_;
};

template <typename S>
void adamw_step(std::vector<NamedParam<S>>& params, AdamW<S>& state, double lr) {
  state.step(params, lr);
}

// ---------------------------------------------------------------------------
// Synthetic clips: a sinusoidal background plus 2-4 textured rectangles that
// translate with constant sub-pixel velocities.  Rasterization uses exact
// pixel-cell coverage so centroids move exactly with the velocity.
// ---------------------------------------------------------------------------

struct SynthRect {
  double y0, x0;      // top-left at frame 0
  double h, w;        // size in pixels
  double vy, vx;      // velocity per frame
  double base[3], amp[3], fy, fx, phase[3];  // moving texture
};

struct SynthScene {
  Index height = 0, width = 0;
  double bg_base[3], bg_amp[3], bg_fy, bg_fx, bg_phase[3];
  std::vector<SynthRect> rects;

  static SynthScene from_seed(std::uint64_t seed, Index h, Index w) {
    check_dims(h >= 32 && w >= 32 && h % 4 == 0 && w % 4 == 0,
               "SynthScene: size must be >= 32 and a multiple of 4");
    Rng rng(mix_seed(seed, 0x53594e54ULL));
    SynthScene sc;
    sc.height = h;
    sc.width = w;
    for (int c = 0; c < 3; ++c) {
      sc.bg_base[c] = rng.uniform(0.25, 0.45);
      sc.bg_amp[c] = rng.uniform(0.05, 0.18);
      sc.bg_phase[c] = rng.uniform(0.0, 6.283185307179586);
    }
    sc.bg_fy = rng.uniform(0.5, 2.5);
    sc.bg_fx = rng.uniform(0.5, 2.5);
    const Index k = rng.uniform_int(2, 4);
    for (Index i = 0; i < k; ++i) {
      SynthRect r;
      r.h = rng.uniform(static_cast<double>(h) / 6.0, static_cast<double>(h) / 3.0);
      r.w = rng.uniform(static_cast<double>(w) / 6.0, static_cast<double>(w) / 3.0);
      const double vmax_y = std::min(1.6, (static_cast<double>(h) - r.h - 2.0) / 13.0);
      const double vmax_x = std::min(1.6, (static_cast<double>(w) - r.w - 2.0) / 13.0);
      r.vy = rng.uniform(-vmax_y, vmax_y);
      r.vx = rng.uniform(-vmax_x, vmax_x);
      const double my = 1.0 + 6.0 * std::fabs(r.vy);
      const double mx = 1.0 + 6.0 * std::fabs(r.vx);
      r.y0 = rng.uniform(my, static_cast<double>(h) - r.h - my);
      r.x0 = rng.uniform(mx, static_cast<double>(w) - r.w - mx);
      for (int c = 0; c < 3; ++c) {
        r.base[c] = rng.uniform(0.25, 0.9);
        r.amp[c] = rng.uniform(0.03, 0.1);
        r.phase[c] = rng.uniform(0.0, 6.283185307179586);
      }
      r.fy = rng.uniform(0.05, 0.25);
      r.fx = rng.uniform(0.05, 0.25);
      sc.rects.push_back(r);
    }
    return sc;
  }

  /// Fraction of pixel cell [y,y+1)x[x,x+1) covered by the rect at frame t.
  double coverage(const SynthRect& r, Index t, Index y, Index x) const {
    const double ry = r.y0 + r.vy * static_cast<double>(t);
    const double rx = r.x0 + r.vx * static_cast<double>(t);
    const double oy = std::min(ry + r.h, static_cast<double>(y) + 1.0) -
                      std::max(ry, static_cast<double>(y));
    const double ox = std::min(rx + r.w, static_cast<double>(x) + 1.0) -
                      std::max(rx, static_cast<double>(x));
    if (oy <= 0.0 || ox <= 0.0) return 0.0;
    return std::min(oy, 1.0) * std::min(ox, 1.0);
  }

  template <typename S>
  void render_frame(Index t, S* out) const {  // out: [3,H,W]
    constexpr double tau = 6.283185307179586;
    for (int c = 0; c < 3; ++c) {
      S* chan = out + c * height * width;
      for (Index y = 0; y < height; ++y)
        for (Index x = 0; x < width; ++x) {
          double v = bg_base[c] +
                     bg_amp[c] * std::sin(tau * (bg_fy * y / static_cast<double>(height) +
                                                 bg_fx * x / static_cast<double>(width)) +
                                          bg_phase[c]);
          for (const auto& r : rects) {
            const double cov = coverage(r, t, y, x);
            if (cov <= 0.0) continue;
            const double u = static_cast<double>(y) - (r.y0 + r.vy * static_cast<double>(t));
            const double w2 = static_cast<double>(x) - (r.x0 + r.vx * static_cast<double>(t));
            const double tex =
                r.base[c] + r.amp[c] * std::sin(tau * (r.fy * u + r.fx * w2) + r.phase[c]);
            v = v * (1.0 - cov) + tex * cov;
          }
          chan[y * width + x] = static_cast<S>(std::min(1.0, std::max(0.0, v)));
        }
    }
  }

  /// Coverage mask of one rectangle (for motion verification).
  template <typename S>
  Tensor<S> render_mask(Index rect, Index t) const {
    Tensor<S> m({height, width});
    const auto& r = rects[static_cast<std::size_t>(rect)];
    for (Index y = 0; y < height; ++y)
      for (Index x = 0; x < width; ++x)
        m[y * width + x] = static_cast<S>(coverage(r, t, y, x));
    return m;
  }
};

template <typename S>
ClipSeptet<S> synth_clip(std::uint64_t seed, Index frames, Index h, Index w) {
  check_dims(frames == 7, "synth_clip: clips are 7 frames");
  SynthScene sc = SynthScene::from_seed(seed, h, w);
  Tensor<S> t({7, 3, h, w});
  for (Index f = 0; f < 7; ++f) sc.render_frame(f, t.data() + f * 3 * h * w);
  return ClipSeptet<S>(t);
}

// ---------------------------------------------------------------------------
// Degradation protocol: the input quad is the bicubic 4x downsample of the
// odd-stamp frames {1,3,5,7}; the target is the full septet.
// ---------------------------------------------------------------------------

template <typename S>
struct TrainSample {
  FrameQuad<S> input;
  ClipSeptet<S> target;
};

template <typename S>
TrainSample<S> degrade(const ClipSeptet<S>& sept) {
  const Index h = sept.height(), w = sept.width();
  check_dims(h % 4 == 0 && w % 4 == 0,
             "degrade: HR size " + shape_str(sept.frames.shape()) + " not divisible by 4");
  Tensor<S> quad({4, 3, h / 4, w / 4});
  for (Index i = 0; i < 4; ++i) {
    Tensor<S> hr = slice(sept.frames, 0, 2 * i, 1).reshape({3, h, w});
    Tensor<S> lr = bicubic_downsample(hr, 4);
    std::copy(lr.data(), lr.data() + lr.size(), quad.data() + i * 3 * (h / 4) * (w / 4));
  }
  return TrainSample<S>{FrameQuad<S>(quad), sept};
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct LossRecord {
  std::int64_t iter;
  double lr;
  double loss;
};

template <typename S>
using SampleFn = std::function<TrainSample<S>(std::int64_t iter, int slot)>;

/// Deterministic synthetic data source: fresh scene per (seed, iter, slot).
template <typename S>
SampleFn<S> synthetic_source(std::uint64_t seed, Index lr_h, Index lr_w) {
  return [seed, lr_h, lr_w](std::int64_t iter, int slot) {
    return degrade(synth_clip<S>(mix_seed(seed, static_cast<std::uint64_t>(iter),
                                          static_cast<std::uint64_t>(slot)),
                                 7, 4 * lr_h, 4 * lr_w));
  };
}

template <typename S>
struct TrainResult {
  std::vector<LossRecord> curve;
  std::string checkpoint_path;
};

/// sample -> forward -> charbonnier -> backward -> adamw with the cosine
/// schedule; checkpoints every checkpoint_interval iterations and at the end.
/// A non-finite loss aborts, retaining the last good checkpoint on disk.
template <typename S>
TrainResult<S> train_loop(RSTTModel<S>& model, const TrainConfig& cfg, SampleFn<S> sample,
                          AdamW<S>& opt, const std::string& checkpoint_path = "",
                          std::ostream* csv = nullptr, std::int64_t start_iter = 0) {
  cfg.validate();
  TrainResult<S> result;
  result.checkpoint_path = checkpoint_path;
  auto save = [&](std::int64_t done) {
    if (checkpoint_path.empty()) return;
    std::vector<NamedParam<S>> tensors = model.params();
    auto st = opt.state_tensors(model.params());
    tensors.insert(tensors.end(), st.begin(), st.end());
    save_checkpoint(checkpoint_path, tensors, done, opt.step_count(), sizeof(S) == 8);
  };
  for (std::int64_t iter = start_iter; iter < cfg.max_iters; ++iter) {
    const double lr = cosine_restart_lr(iter, cfg);
    Tape<S> tape;
    double loss_value;
    {
      TapeScope<S> scope(tape);
      Tensor<S> loss;
      for (int b = 0; b < cfg.batch_size; ++b) {
        TrainSample<S> ts = sample(iter, b);
        ClipSeptet<S> pred = model.forward(ts.input);
        Tensor<S> l = charbonnier(pred.frames, ts.target.frames,
                                  static_cast<S>(cfg.charb_eps), cfg.charb_global);
        loss = (b == 0) ? l : add(loss, l);
      }
      if (cfg.batch_size > 1)
        loss = mul_scalar(loss, static_cast<S>(1.0 / cfg.batch_size));
      loss_value = static_cast<double>(loss[0]);
      if (!std::isfinite(loss_value))
        throw numeric_error("train_loop: non-finite loss at iteration " + std::to_string(iter) +
                            " (last good checkpoint retained)");
      backward(loss, tape);
    }
    opt.step(model.params(), lr);
    model.zero_grad();
    tape.clear();
    result.curve.push_back(LossRecord{iter, lr, loss_value});
    if (csv) (*csv) << iter << ',' << lr << ',' << loss_value << '\n';
    if ((iter + 1) % cfg.checkpoint_interval == 0 && iter + 1 < cfg.max_iters) save(iter + 1);
  }
  save(cfg.max_iters);
  return result;
}

}  // namespace rstt

#pragma once

#include "rstt/train.hpp"

namespace rstt {

// ---------------------------------------------------------------------------
// Central-difference gradient verification, 64-bit only.  Returns the maximum
// over sampled coordinates of |analytic - numeric| / max(1, |analytic|).
// ---------------------------------------------------------------------------

struct GradCheckOptions {
  double h = 1e-4;
  Index max_coords = 24;  // per input tensor
  std::uint64_t seed = 7;
};

template <typename F>
double grad_check(F&& f, std::vector<Tensord> inputs, GradCheckOptions opts = {}) {
  const bool prev_checks = finite_checks_enabled();
  set_finite_checks(true);
  for (auto& t : inputs) t.set_requires_grad(true);

  Tape<double> tape;
  std::vector<Tensord> analytic;
  {
    TapeScope<double> scope(tape);
    Tensord loss = f(inputs);
    check_dims(loss.is_scalar(), "grad_check: f must return a scalar");
    backward(loss, tape);
  }
  for (auto& t : inputs) analytic.push_back(t.grad_tensor());
  for (auto& t : inputs) t.zero_grad();
  tape.clear();

  Rng rng(opts.seed);
  double worst = 0.0;
  for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
    Tensord& t = inputs[ti];
    const Index n = t.size();
    std::vector<Index> coords;
    if (n <= opts.max_coords) {
      for (Index i = 0; i < n; ++i) coords.push_back(i);
    } else {
      for (Index i = 0; i < opts.max_coords; ++i) coords.push_back(rng.uniform_int(0, n - 1));
    }
    for (Index ci : coords) {
      const double saved = t[ci];
      t[ci] = saved + opts.h;
      const double fp = f(inputs)[0];
      t[ci] = saved - opts.h;
      const double fm = f(inputs)[0];
      t[ci] = saved;
      const double numeric = (fp - fm) / (2.0 * opts.h);
      const double a = analytic[ti][ci];
      const double rel = std::fabs(a - numeric) / std::max(1.0, std::fabs(a));
      worst = std::max(worst, rel);
    }
  }
  set_finite_checks(prev_checks);
  return worst;
}

// ---------------------------------------------------------------------------
// Built-in verification registry: one case per differentiable operation plus
// a reduced end-to-end model.  The gradcheck command runs every case and
// fails (exit 4) if any exceeds its tolerance.
// ---------------------------------------------------------------------------

struct GradCheckCase {
  std::string name;
  double tolerance;
  std::function<double()> run;
};

namespace detail {

/// Weighted sum reduces any tensor to a scalar without killing structure.
inline Tensord weighted_sum(const Tensord& t, std::uint64_t seed) {
  Rng rng(seed);
  Tensord w = Tensord::uniform(t.shape(), rng, -1.0, 1.0);
  return sum_all(mul(t, w));
}

}  // namespace detail

/// C=8, M=2, one block per stage: the smallest full model (16x16 inputs).
inline ModelConfig make_reduced_config() {
  ModelConfig cfg;
  cfg.channels = 8;
  cfg.window = 2;
  cfg.blocks_per_stage = 1;
  cfg.heads = 2;
  cfg.pad_multiple = 16;
  return cfg;
}

template <typename S>
EncoderBlockWeights<S> reduced_enc_block(RSTTModel<S>& m) {
  auto unit = [&](const std::string& base) {
    AttentionWeights<S> w;
    w.ln1_g = m.param(base + ".ln1.g");
    w.ln1_b = m.param(base + ".ln1.b");
    w.wq = m.param(base + ".wq");
    w.wk = m.param(base + ".wk");
    w.wv = m.param(base + ".wv");
    w.wo = m.param(base + ".wo");
    w.bias_table = m.param(base + ".bias");
    w.mlp_w1 = m.param(base + ".mlp.w1");
    w.mlp_b1 = m.param(base + ".mlp.b1");
    w.mlp_w2 = m.param(base + ".mlp.w2");
    w.mlp_b2 = m.param(base + ".mlp.b2");
    w.ln2_g = m.param(base + ".ln2.g");
    w.ln2_b = m.param(base + ".ln2.b");
    return w;
  };
  EncoderBlockWeights<S> blk;
  blk.win = unit("enc0.b0.win");
  blk.shifted = unit("enc0.b0.shift");
  return blk;
}

/// Nudges zero-initialized residual exits so end-to-end checks exercise the
/// whole graph (exactly-zero projections would hide upstream gradients).
template <typename S>
void perturb_zero_exits(RSTTModel<S>& m, double scale, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& p : m.params()) {
    bool all_zero = true;
    for (Index i = 0; i < p.tensor.size() && all_zero; ++i)
      all_zero = (p.tensor[i] == S(0));
    if (all_zero)
      for (Index i = 0; i < p.tensor.size(); ++i)
        p.tensor[i] = static_cast<S>(scale * rng.uniform(-1.0, 1.0));
  }
}

inline std::vector<GradCheckCase> builtin_gradcheck_cases() {
  using detail::weighted_sum;
  std::vector<GradCheckCase> cases;
  auto add_case = [&](const std::string& name, double tol, std::function<double()> fn) {
    cases.push_back(GradCheckCase{name, tol, std::move(fn)});
  };
  auto rnd = [](Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Rng rng(seed);
    return Tensord::uniform(std::move(s), rng, lo, hi);
  };

  add_case("add", 1e-5, [=] {
    return grad_check([](const std::vector<Tensord>& in) {
      return weighted_sum(add(in[0], in[1]), 11);
    }, {rnd({3, 4}, 1), rnd({3, 4}, 2)});
  });
  add_case("mul", 1e-5, [=] {
    return grad_check([](const std::vector<Tensord>& in) {
      return weighted_sum(mul(in[0], in[1]), 12);
    }, {rnd({3, 4}, 3), rnd({3, 4}, 4)});
  });
  add_case("add_broadcast", 1e-5, [=] {
    return grad_check([](const std::vector<Tensord>& in) {
      return weighted_sum(add_broadcast(in[0], in[1]), 13);
    }, {rnd({3, 4, 5}, 5), rnd({4, 5}, 6)});
  });
  add_case("relu", 1e-5, [=] {
    return grad_check([](const std::vector<Tensord>& in) {
      return weighted_sum(relu(in[0]), 14);
    }, {rnd({4, 6}, 7)});
  });
  add_case("gelu", 1e-5, [=] {
    return grad_check([](const std::vector<Tensord>& in) {
      return weighted_sum(gelu(in[0]), 15);
    }, {rnd({4, 6}, 8, -2.0, 2.0)});
  });
  add_case("sqrt", 1e-5, [=] {
    return grad_check([](const std::vector<Tensord>& in) {
      return weighted_sum(sqrt_elem(in[0]), 16);
    }, {rnd({4, 6}, 9, 0.5, 2.0)});
  });
  add_case("mean_all", 1e-5, [=] {
    return grad_check([](const std::vector<Tensord>& in) { return mean_all(in[0]); },
                      {rnd({5, 7}, 10)});
  });
  add_case("mean_axis0", 1e-5, [=] {
    return grad_check([](const std::vector<Tensord>& in) {
      return weighted_sum(mean_axis0(in[0]), 17);
    }, {rnd({4, 3, 5}, 11)});
  });
  add_case("repeat_axis0", 1e-5, [=] {
    return grad_check([](const std::vector<Tensord>& in) {
      return weighted_sum(repeat_axis0(in[0], 3), 18);
    }, {rnd({2, 5}, 12)});
  });
  add_case("matmul", 1e-5, [=] {
    return grad_check([](const std::vector<Tensord>& in) {
      return weighted_sum(matmul(in[0], in[1]), 19);
    }, {rnd({4, 5}, 13), rnd({5, 3}, 14)});
  });
  add_case("matmul_batched", 1e-5, [=] {
    return grad_check([](const std::vector<Tensord>& in) {
      return weighted_sum(matmul(in[0], in[1]), 20);
    }, {rnd({2, 3, 4}, 15), rnd({2, 4, 2}, 16)});
  });
  add_case("softmax", 1e-5, [=] {
    return grad_check([](const std::vector<Tensord>& in) {
      return weighted_sum(softmax(in[0], -1), 21);
    }, {rnd({3, 6}, 17, -2.0, 2.0)});
  });
  add_case("layer_norm", 1e-5, [=] {
    return grad_check([](const std::vector<Tensord>& in) {
      return weighted_sum(layer_norm(in[0], in[1], in[2]), 22);
    }, {rnd({5, 8}, 18), rnd({8}, 19, 0.5, 1.5), rnd({8}, 20)});
  });
  add_case("mlp", 1e-5, [=] {
    return grad_check([](const std::vector<Tensord>& in) {
      return weighted_sum(mlp(in[0], in[1], in[2], in[3], in[4]), 23);
    }, {rnd({4, 6}, 21), rnd({6, 12}, 22, -0.5, 0.5), rnd({12}, 23, -0.1, 0.1),
        rnd({12, 6}, 24, -0.5, 0.5), rnd({6}, 25, -0.1, 0.1)});
  });
  add_case("permute", 1e-5, [=] {
    return grad_check([](const std::vector<Tensord>& in) {
      return weighted_sum(permute(in[0], {2, 0, 1}), 26);
    }, {rnd({3, 4, 5}, 26)});
  });
  add_case("concat_slice", 1e-5, [=] {
    return grad_check([](const std::vector<Tensord>& in) {
      Tensord c = concat<double>({in[0], in[1]}, 1);
      return weighted_sum(slice(c, 1, 1, 4), 27);
    }, {rnd({3, 3}, 27), rnd({3, 2}, 28)});
  });
  add_case("embedding_rows", 1e-5, [=] {
    return grad_check([](const std::vector<Tensord>& in) {
      return weighted_sum(embedding_rows(in[0], {0, 2, 1, 2, 3}), 28);
    }, {rnd({4, 3}, 29)});
  });
  add_case("conv2d_s1", 1e-5, [=] {
    return grad_check([](const std::vector<Tensord>& in) {
      return weighted_sum(conv2d(in[0], in[1], in[2], 1, 1), 29);
    }, {rnd({2, 3, 5, 6}, 30), rnd({4, 3, 3, 3}, 31, -0.5, 0.5), rnd({4}, 32, -0.1, 0.1)});
  });
  add_case("conv2d_s2", 1e-5, [=] {
    return grad_check([](const std::vector<Tensord>& in) {
      return weighted_sum(conv2d(in[0], in[1], in[2], 2, 1), 30);
    }, {rnd({1, 2, 6, 8}, 33), rnd({3, 2, 3, 3}, 34, -0.5, 0.5), rnd({3}, 35, -0.1, 0.1)});
  });
  add_case("conv_transpose2d", 1e-5, [=] {
    return grad_check([](const std::vector<Tensord>& in) {
      return weighted_sum(conv_transpose2d(in[0], in[1], in[2]), 31);
    }, {rnd({1, 3, 4, 5}, 36), rnd({3, 2, 2, 2}, 37, -0.5, 0.5), rnd({2}, 38, -0.1, 0.1)});
  });
  add_case("pixel_shuffle", 1e-5, [=] {
    return grad_check([](const std::vector<Tensord>& in) {
      return weighted_sum(pixel_shuffle(in[0], 2), 32);
    }, {rnd({1, 8, 3, 4}, 39)});
  });
  add_case("trilinear_resize", 1e-5, [=] {
    return grad_check([](const std::vector<Tensord>& in) {
      return weighted_sum(trilinear_resize(in[0], 7, 8, 12), 33);
    }, {rnd({4, 2, 4, 6}, 40)});
  });
  add_case("bicubic_downsample", 1e-5, [=] {
    return grad_check([](const std::vector<Tensord>& in) {
      return weighted_sum(bicubic_downsample(in[0], 4), 34);
    }, {rnd({2, 8, 8}, 41)});
  });
  add_case("reflect_pad_crop", 1e-5, [=] {
    return grad_check([](const std::vector<Tensord>& in) {
      return weighted_sum(crop_hw(reflect_pad_hw(in[0], 2, 3), 5, 6), 35);
    }, {rnd({2, 4, 5}, 42)});
  });
  add_case("cyclic_shift", 1e-5, [=] {
    return grad_check([](const std::vector<Tensord>& in) {
      return weighted_sum(cyclic_shift(in[0], 2, 1), 36);
    }, {rnd({2, 4, 4, 3}, 43)});
  });
  add_case("window_partition_reverse", 1e-5, [=] {
    return grad_check([](const std::vector<Tensord>& in) {
      Tensord w = window_partition(in[0], 2);
      return weighted_sum(window_reverse(w, 2, 2, 4, 4), 37);
    }, {rnd({2, 4, 4, 3}, 44)});
  });
  add_case("windowed_attention", 1e-5, [=] {
    return grad_check([](const std::vector<Tensord>& in) {
      return weighted_sum(windowed_attention(in[0], in[1], in[2], 2, in[3]), 38);
    }, {rnd({2, 4, 6}, 45), rnd({2, 5, 6}, 46), rnd({2, 5, 6}, 47), rnd({2, 4, 5}, 48)});
  });
  add_case("multi_head_attention", 1e-5, [=] {
    return grad_check([](const std::vector<Tensord>& in) {
      AttentionWeights<double> w;
      w.wq = in[1];
      w.wk = in[2];
      w.wv = in[3];
      w.wo = in[4];
      return weighted_sum(multi_head_attention(in[0], in[0], w, 2), 39);
    }, {rnd({6, 4}, 49), rnd({4, 4}, 50, -0.5, 0.5), rnd({4, 4}, 51, -0.5, 0.5),
        rnd({4, 4}, 52, -0.5, 0.5), rnd({4, 4}, 53, -0.5, 0.5)});
  });
  add_case("charbonnier", 1e-5, [=] {
    return grad_check([](const std::vector<Tensord>& in) {
      return charbonnier(in[0], in[1], 1e-3, false);
    }, {rnd({2, 3, 4}, 54), rnd({2, 3, 4}, 55)});
  });
  add_case("charbonnier_global", 1e-5, [=] {
    return grad_check([](const std::vector<Tensord>& in) {
      return charbonnier(in[0], in[1], 1e-3, true);
    }, {rnd({2, 3, 4}, 56), rnd({2, 3, 4}, 57)});
  });

  // Full Swin encoder block at C=8, M=2 (windows, masks, bias, MLP, LNs).
  add_case("swin_encoder_block", 1e-5, [] {
    RSTTModel<double> m(make_reduced_config(), 3);
    perturb_zero_exits(m, 0.05, 61);
    std::vector<Tensord> inputs;
    for (auto& p : m.params())
      if (p.name.rfind("enc0.b0.", 0) == 0) inputs.push_back(p.tensor);
    Rng rng(60);
    Tensord x = Tensord::uniform({4, 4, 4, 8}, rng, -1.0, 1.0);
    return grad_check([&m, x](const std::vector<Tensord>&) {
      // the inputs alias the model parameters, so re-reading the block
      // weights picks up the probe perturbations
      EncoderBlockWeights<double> w = reduced_enc_block(m);
      return detail::weighted_sum(swin_encoder_block(x, w, 2, 2), 62);
    }, inputs);
  });

  // Reduced end-to-end model: forward + charbonnier against all parameters.
  add_case("end_to_end_reduced", 1e-4, [] {
    RSTTModel<double> m(make_reduced_config(), 5);
    perturb_zero_exits(m, 0.02, 64);
    Rng rng(65);
    FrameQuad<double> quad(Tensord::uniform({4, 3, 16, 16}, rng, 0.0, 1.0));
    ClipSeptet<double> target(Tensord::uniform({7, 3, 64, 64}, rng, 0.0, 1.0));
    std::vector<Tensord> inputs;
    for (auto& p : m.params()) inputs.push_back(p.tensor);
    GradCheckOptions opts;
    opts.max_coords = 2;
    return grad_check([&m, quad, target](const std::vector<Tensord>&) {
      ClipSeptet<double> pred = m.forward(quad);
      return charbonnier(pred.frames, target.frames, 1e-3, false);
    }, inputs, opts);
  });

  return cases;
}

}  // namespace rstt

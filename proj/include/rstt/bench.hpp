#pragma once

#include <algorithm>
#include <chrono>

#include "rstt/model.hpp"

namespace rstt {

// ---------------------------------------------------------------------------
// Throughput benchmark: repeated forwards per preset after a warmup pass,
// timed with a monotonic clock around the forward call only.  FPS counts
// output frames (7 per forward).
// ---------------------------------------------------------------------------

struct BenchConfig {
  Index height = 96, width = 96;  // input (LR) size
  int reps = 20;
  std::uint64_t seed = 1234;
  std::vector<char> presets = {'S', 'M', 'L'};
  FusionMode fusion = FusionMode::mca;
  bool recon_block = false;
};

struct BenchRow {
  char preset;
  Index params;
  double median_ms;
  double mean_ms;
  double fps;
};

inline std::vector<BenchRow> run_benchmark(const BenchConfig& cfg) {
  check_config(cfg.reps >= 1, "bench: reps must be >= 1");
  std::vector<BenchRow> rows;
  for (char preset : cfg.presets) {
    ModelConfig mc = ModelConfig::preset(preset);
    mc.fusion = cfg.fusion;
    mc.recon_block = cfg.recon_block;
    RSTTModel<float> model(mc, cfg.seed);
    Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(preset)));
    FrameQuad<float> quad(Tensorf::uniform({4, 3, cfg.height, cfg.width}, rng, 0.0, 1.0));
    model.forward(quad);  // warmup
    std::vector<double> ms(static_cast<std::size_t>(cfg.reps));
    double total = 0.0;
    for (int r = 0; r < cfg.reps; ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      model.forward(quad);
      const auto t1 = std::chrono::steady_clock::now();
      ms[static_cast<std::size_t>(r)] = std::chrono::duration<double, std::milli>(t1 - t0).count();
      total += ms[static_cast<std::size_t>(r)];
    }
    std::sort(ms.begin(), ms.end());
    const double median = (cfg.reps % 2 == 1)
                              ? ms[static_cast<std::size_t>(cfg.reps / 2)]
                              : 0.5 * (ms[static_cast<std::size_t>(cfg.reps / 2 - 1)] +
                                       ms[static_cast<std::size_t>(cfg.reps / 2)]);
    BenchRow row;
    row.preset = preset;
    row.params = model.param_count();
    row.median_ms = median;
    row.mean_ms = total / cfg.reps;
    row.fps = 7.0 * cfg.reps / (total / 1000.0);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace rstt

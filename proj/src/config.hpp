#pragma once

#include <string>
#include <vector>

#include "data.hpp"
#include "model.hpp"

namespace evqa {

// Flat key=value run configuration. Every key has a default; unknown keys are
// rejected. The resolved form is echoed next to run outputs and hashing it
// identifies the run.
struct RunConfig {
  // model
  int64_t d_vis = 32, d_model = 64, n_layers = 4, n_heads = 4, n_visual = 16, top_layers = 2;
  int64_t n_adapt = 10, n_prefix = 10, max_seq = 96, lm_ffn = 512, vis_ffn = 64, vis_heads = 4;
  int64_t image_px = 32, patch_px = 8, channels = 3;
  // data
  int64_t grid = 4, train_images = 450, val_images = 50, test_images = 110;
  uint64_t data_seed = 7;
  double target_rate = 0.75;
  std::string data_dir = "data";
  // training
  int64_t warmup_steps = 2000, stage1_steps = 3000, stage2_steps = 5000, batch = 8;
  double lr = 1e-3, beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  uint64_t seed = 1;
  int64_t ckpt_every = 1000;
  // test-time optimization
  int64_t k = 10, tto_iters = 100;
  double tto_step = 0.01;

  static RunConfig load(const std::string& path_or_empty,
                        const std::vector<std::string>& overrides);
  void apply_override(const std::string& key, const std::string& value);
  void validate() const;

  std::string resolved_text() const;
  void echo_to(const std::string& dir) const;        // writes config.resolved
  std::string config_hash() const;                   // fnv-1a of resolved text

  ModelConfig model_config() const;
  SyntheticSpec synthetic_spec() const;
};

}  // namespace evqa

#pragma once

#include <map>
#include <string>
#include <vector>

#include "checkpoint.hpp"
#include "config.hpp"
#include "data.hpp"
#include "model.hpp"

namespace evqa {

struct AdamState {
  std::map<std::string, std::pair<TensorPtr, TensorPtr>> moments;  // first, second
  int64_t t = 0;

  void ensure(const NamedTensors& params);
  void reset() { moments.clear(); t = 0; }
};

// Bias-corrected adaptive-moment update over the given parameter list.
// A non-finite gradient raises NumericError naming the tensor.
void adam_step(const NamedTensors& params, AdamState& state, double lr, double beta1, double beta2,
               double eps);

// Masked language-modeling loss for one assembled sequence: the sum of
// next-token negative log-likelihoods over positions the layout masks in.
TensorPtr lm_loss_masked(const TensorPtr& logits, const SequenceLayout& layout, Tape* tape);

struct TrainState {
  ModelWeights weights;
  PromptBank bank;
  AdamState opt;
  Rng rng;
  int64_t step = 0;   // position within the current stage's schedule
  int64_t stage = 1;  // 1: caption alignment, 2: question answering
  bool lm_frozen = false;
};

struct TrainRun {
  std::vector<std::pair<int64_t, double>> losses;  // (step, mean batch loss)
};

TrainState fresh_train_state(const RunConfig& cfg, int64_t stage);

// Stage 1 runs a text-only LM warmup for cfg.warmup_steps, freezes the LM,
// then trains the vision encoder, projection and prompts on image-caption
// pairs. Stage 2 keeps the same trainable set and masks the loss to answer
// tokens. Both write loss_stageN.csv and periodic checkpoints into out_dir.
TrainRun run_training(const RunConfig& cfg, TrainState& st, const Corpus& corpus,
                      const std::string& out_dir);

void save_train_checkpoint(const std::string& path, const RunConfig& cfg, const TrainState& st);
TrainState load_train_checkpoint(const std::string& path, const RunConfig& cfg);

// Name list of the currently-optimized parameters for st's phase.
NamedTensors active_params(const TrainState& st);

// Reuses stage-1 weights and prompts as the starting point of stage 2:
// fresh optimizer, stage-2 data order, language model frozen.
TrainState promote_to_stage2(TrainState st, const RunConfig& cfg);

}  // namespace evqa

#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tensor.hpp"

namespace evqa {

struct ModelConfig {
  int64_t d_vis = 32;       // vision feature width
  int64_t d_model = 64;     // LM embedding width
  int64_t n_layers = 4;     // LM depth
  int64_t n_heads = 4;      // LM attention heads
  int64_t n_visual = 16;    // visual tokens
  int64_t top_layers = 2;   // top layers that receive adaption prompts
  int64_t n_adapt = 10;     // adaption prompt tokens per adapted layer
  int64_t n_prefix = 10;    // prefix key/value tokens per layer
  int64_t max_seq = 96;
  int64_t lm_ffn = 512;     // LM feed-forward hidden width
  int64_t vis_ffn = 64;     // vision feed-forward hidden width
  int64_t vis_heads = 4;
  int64_t image_px = 32;
  int64_t patch_px = 8;
  int64_t channels = 3;
  int64_t vocab = 0;        // set from the tokenizer

  int64_t head_dim() const { return d_model / n_heads; }
  int64_t vis_head_dim() const { return d_vis / vis_heads; }
  int64_t patch_dim() const { return channels * patch_px * patch_px; }
  int64_t grid_side() const { return image_px / patch_px; }
  bool adaption_layer(int64_t l) const { return l >= n_layers - top_layers; }

  void validate() const;
};

struct AttnBlockWeights {
  TensorPtr wq, wk, wv, wo;
  TensorPtr ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  TensorPtr ln1_g, ln1_b, ln2_g, ln2_b;
};

struct ModelWeights {
  ModelConfig cfg;
  // frozen language model (after warmup)
  TensorPtr tok_emb;  // [vocab x d_model], also the tied output head
  TensorPtr pos_emb;  // [max_seq x d_model]
  std::vector<AttnBlockWeights> layers;
  // trainable vision encoder
  TensorPtr vis_patch_w, vis_patch_b, vis_pos;
  std::vector<AttnBlockWeights> vis_blocks;  // always 2
  // trainable visual projection [d_model x d_vis]
  TensorPtr w_p;
};

// Trainable prompt state: per-layer adaption prompts and gates for the top
// layers, prefix key/value rows for every layer. Gates start at exactly 0 so
// the adaption branch contributes nothing at initialization.
struct PromptBank {
  int64_t n_layers = 0, top_layers = 0;
  std::vector<TensorPtr> adapt;       // top_layers entries, [n_adapt x d_model]
  std::vector<TensorPtr> gates;       // top_layers entries, [1]
  std::vector<TensorPtr> prefix_k;    // n_layers entries, [n_prefix x d_model]
  std::vector<TensorPtr> prefix_v;    // n_layers entries, [n_prefix x d_model]

  int64_t adapt_index(int64_t layer) const { return layer - (n_layers - top_layers); }
};

struct ForwardFlags {
  bool use_prefix = true;
  bool use_adaption = true;
};

// Contiguous span bookkeeping for one assembled sequence:
// [visual][summary?][question][answer]. The loss mask marks logit rows whose
// next-token target falls in the answer span.
struct SequenceLayout {
  int64_t visual_len = 0;
  bool has_summary = false;
  int64_t question_len = 0;
  int64_t answer_len = 0;  // includes the trailing <eos> when present
  std::vector<int> targets;
  std::vector<uint8_t> loss_mask;

  int64_t summary_len() const { return has_summary ? 1 : 0; }
  int64_t question_start() const { return visual_len + summary_len(); }
  int64_t answer_start() const { return question_start() + question_len; }
  int64_t total() const { return answer_start() + answer_len; }
};

struct SequenceInput {
  TensorPtr rows;  // [total x d_model]
  SequenceLayout layout;
};

ModelWeights init_weights(const ModelConfig& cfg, Rng& rng);
PromptBank init_prompt_bank(const ModelConfig& cfg, Rng& rng);

// Flips requires_grad on the language-model tensors; vision, projection and
// prompts stay trainable.
void set_lm_trainable(ModelWeights& w, bool trainable);

struct Image;  // data.hpp

TensorPtr encode_image(const Image& img, const ModelWeights& w, Tape* tape);
TensorPtr project_visual(const TensorPtr& zv, const TensorPtr& w_p, Tape* tape);
TensorPtr pool_global(const TensorPtr& rows, Tape* tape);
TensorPtr embed_text(const std::vector<int>& ids, const ModelWeights& w, int64_t pos_offset,
                     Tape* tape);

TensorPtr attention_with_prompts(const TensorPtr& h_in, int64_t layer, const ModelWeights& w,
                                 const PromptBank& bank, const TensorPtr& global_tok,
                                 int64_t causal_base, Tape* tape, const ForwardFlags& flags = {});

TensorPtr decoder_forward(const ModelWeights& w, const PromptBank& bank, const TensorPtr& embeddings,
                          const TensorPtr& global_tok, Tape* tape, const ForwardFlags& flags = {});

SequenceInput assemble_sequence(const ModelWeights& w, const TensorPtr& visual_proj,
                                const TensorPtr& summary, const std::vector<int>& question_ids,
                                const std::vector<int>& answer_ids, bool append_eos, Tape* tape);

std::vector<int> generate_greedy(const ModelWeights& w, const PromptBank& bank,
                                 const SequenceInput& prefix, const TensorPtr& global_tok,
                                 int64_t max_new, int stop_id, const ForwardFlags& flags = {});

// Named-tensor registry in canonical order; drives checkpoints, checksums and
// the optimizer.
using NamedTensors = std::vector<std::pair<std::string, TensorPtr>>;
NamedTensors registry(const ModelWeights& w, const PromptBank& bank);
NamedTensors trainable_of(const NamedTensors& all);

int64_t count_trainable_params(const ModelWeights& w, const PromptBank& bank);
int64_t count_total_params(const ModelWeights& w, const PromptBank& bank);
uint64_t frozen_checksum(const ModelWeights& w, const PromptBank& bank);

}  // namespace evqa

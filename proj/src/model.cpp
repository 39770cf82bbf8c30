#include "model.hpp"

#include <cmath>

#include "data.hpp"

namespace evqa {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

TensorPtr randn_named(std::vector<int64_t> shape, Rng& rng, double stddev, bool rg,
                      const std::string& name) {
  return randn(std::move(shape), rng, stddev, rg, name);
}

TensorPtr const_tensor(std::vector<int64_t> shape, double v, bool rg, const std::string& name) {
  auto t = make_tensor(std::move(shape), rg, name);
  for (auto& x : t->data) x = v;
  return t;
}

AttnBlockWeights init_block(int64_t width, int64_t ffn, Rng& rng, bool rg,
                            const std::string& prefix) {
  const double w_std = 1.0 / std::sqrt(static_cast<double>(width));
  const double f_std = 1.0 / std::sqrt(static_cast<double>(ffn));
  AttnBlockWeights b;
  b.wq = randn_named({width, width}, rng, w_std, rg, prefix + ".wq");
  b.wk = randn_named({width, width}, rng, w_std, rg, prefix + ".wk");
  b.wv = randn_named({width, width}, rng, w_std, rg, prefix + ".wv");
  b.wo = randn_named({width, width}, rng, w_std, rg, prefix + ".wo");
  b.ffn_w1 = randn_named({ffn, width}, rng, w_std, rg, prefix + ".ffn_w1");
  b.ffn_b1 = const_tensor({ffn}, 0.0, rg, prefix + ".ffn_b1");
  b.ffn_w2 = randn_named({width, ffn}, rng, f_std, rg, prefix + ".ffn_w2");
  b.ffn_b2 = const_tensor({width}, 0.0, rg, prefix + ".ffn_b2");
  b.ln1_g = const_tensor({width}, 1.0, rg, prefix + ".ln1_g");
  b.ln1_b = const_tensor({width}, 0.0, rg, prefix + ".ln1_b");
  b.ln2_g = const_tensor({width}, 1.0, rg, prefix + ".ln2_g");
  b.ln2_b = const_tensor({width}, 0.0, rg, prefix + ".ln2_b");
  return b;
}

// Shared post-LN transformer sub-block: x -> ln1(x + attn) -> ln2(. + ffn).
TensorPtr block_tail(const TensorPtr& h_in, const TensorPtr& attn_out, const AttnBlockWeights& b,
                     Tape* tape) {
  auto x = layer_norm(add(h_in, attn_out, tape), b.ln1_g, b.ln1_b, kLnEps, tape);
  auto f = add_rowvec(linear(x, b.ffn_w1, tape), b.ffn_b1, tape);
  f = gelu(f, tape);
  f = add_rowvec(linear(f, b.ffn_w2, tape), b.ffn_b2, tape);
  return layer_norm(add(x, f, tape), b.ln2_g, b.ln2_b, kLnEps, tape);
}

// Plain bidirectional multi-head attention used by the vision encoder.
TensorPtr mha_bidirectional(const TensorPtr& h, const AttnBlockWeights& b, int64_t heads,
                            Tape* tape) {
  const int64_t width = h->cols();
  const int64_t hd = width / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  auto q = linear(h, b.wq, tape);
  auto k = linear(h, b.wk, tape);
  auto v = linear(h, b.wv, tape);
  std::vector<TensorPtr> outs;
  outs.reserve(static_cast<size_t>(heads));
  for (int64_t hi = 0; hi < heads; ++hi) {
    auto qh = slice_cols(q, hi * hd, (hi + 1) * hd, tape);
    auto kh = slice_cols(k, hi * hd, (hi + 1) * hd, tape);
    auto vh = slice_cols(v, hi * hd, (hi + 1) * hd, tape);
    auto att = softmax_rows(scale(matmul_nt(qh, kh, tape), inv_sqrt, tape), tape);
    outs.push_back(matmul(att, vh, tape));
  }
  return linear(concat_cols(outs, tape), b.wo, tape);
}

// Additive causal mask over the sequence columns of a [K x (P+K)] score
// matrix; the P prefix columns stay open for every query row.
TensorPtr causal_mask(int64_t k_seq, int64_t n_prefix, int64_t causal_base) {
  auto m = make_tensor({k_seq, n_prefix + k_seq});
  for (int64_t i = 0; i < k_seq; ++i)
    for (int64_t j = 0; j < k_seq; ++j)
      if (j > i + causal_base) m->at(i, n_prefix + j) = kNegInf;
  return m;
}

}  // namespace

void ModelConfig::validate() const {
  if (d_model <= 0 || d_vis <= 0 || n_layers <= 0 || n_heads <= 0 || n_visual <= 0 ||
      max_seq <= 0 || lm_ffn <= 0 || vis_ffn <= 0 || vis_heads <= 0 || image_px <= 0 ||
      patch_px <= 0 || channels <= 0)
    throw ConfigError("model dimensions must be positive");
  if (d_model % n_heads != 0)
    throw ConfigError("d_model " + std::to_string(d_model) + " not divisible by n_heads " +
                      std::to_string(n_heads));
  if (d_vis % vis_heads != 0)
    throw ConfigError("d_vis " + std::to_string(d_vis) + " not divisible by vis_heads " +
                      std::to_string(vis_heads));
  if (top_layers < 0 || top_layers > n_layers)
    throw ConfigError("top_layers " + std::to_string(top_layers) + " outside [0, " +
                      std::to_string(n_layers) + "]");
  if (n_adapt < 0 || n_prefix < 0) throw ConfigError("prompt token counts must be non-negative");
  if (image_px % patch_px != 0)
    throw ConfigError("image_px " + std::to_string(image_px) + " not divisible by patch_px " +
                      std::to_string(patch_px));
  if (grid_side() * grid_side() != n_visual)
    throw ConfigError("n_visual " + std::to_string(n_visual) + " does not match patch grid " +
                      std::to_string(grid_side()) + "x" + std::to_string(grid_side()));
}

ModelWeights init_weights(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  if (cfg.vocab <= 0) throw ConfigError("vocab size not set");
  ModelWeights w;
  w.cfg = cfg;
  w.tok_emb = randn_named({cfg.vocab, cfg.d_model}, rng, 0.08, true, "lm.tok_emb");
  w.pos_emb = randn_named({cfg.max_seq, cfg.d_model}, rng, 0.02, true, "lm.pos_emb");
  for (int64_t l = 0; l < cfg.n_layers; ++l)
    w.layers.push_back(init_block(cfg.d_model, cfg.lm_ffn, rng, true,
                                  "lm.layer" + std::to_string(l)));
  const double p_std = 1.0 / std::sqrt(static_cast<double>(cfg.patch_dim()));
  w.vis_patch_w = randn_named({cfg.d_vis, cfg.patch_dim()}, rng, p_std, true, "vis.patch_w");
  w.vis_patch_b = const_tensor({cfg.d_vis}, 0.0, true, "vis.patch_b");
  w.vis_pos = const_tensor({cfg.n_visual, cfg.d_vis}, 0.0, true, "vis.pos");
  for (int64_t l = 0; l < 2; ++l)
    w.vis_blocks.push_back(init_block(cfg.d_vis, cfg.vis_ffn, rng, true,
                                      "vis.block" + std::to_string(l)));
  const double wp_std = 1.0 / std::sqrt(static_cast<double>(cfg.d_vis));
  w.w_p = randn_named({cfg.d_model, cfg.d_vis}, rng, wp_std, true, "proj.w_p");
  return w;
}

PromptBank init_prompt_bank(const ModelConfig& cfg, Rng& rng) {
  PromptBank bank;
  bank.n_layers = cfg.n_layers;
  bank.top_layers = cfg.top_layers;
  for (int64_t i = 0; i < cfg.top_layers; ++i) {
    const int64_t l = cfg.n_layers - cfg.top_layers + i;
    bank.adapt.push_back(cfg.n_adapt > 0
                             ? randn_named({cfg.n_adapt, cfg.d_model}, rng, 0.02, true,
                                           "prompt.adapt.l" + std::to_string(l))
                             : make_tensor({1, cfg.d_model}, false));
    if (cfg.n_adapt == 0) bank.adapt.back()->name = "prompt.adapt.l" + std::to_string(l);
    bank.gates.push_back(const_tensor({1}, 0.0, true, "prompt.gate.l" + std::to_string(l)));
  }
  for (int64_t l = 0; l < cfg.n_layers; ++l) {
    if (cfg.n_prefix > 0) {
      bank.prefix_k.push_back(randn_named({cfg.n_prefix, cfg.d_model}, rng, 0.02, true,
                                          "prompt.pk.l" + std::to_string(l)));
      bank.prefix_v.push_back(randn_named({cfg.n_prefix, cfg.d_model}, rng, 0.02, true,
                                          "prompt.pv.l" + std::to_string(l)));
    } else {
      bank.prefix_k.push_back(nullptr);
      bank.prefix_v.push_back(nullptr);
    }
  }
  return bank;
}

void set_lm_trainable(ModelWeights& w, bool trainable) {
  auto flip = [trainable](const TensorPtr& t) { t->requires_grad = trainable; };
  flip(w.tok_emb);
  flip(w.pos_emb);
  for (auto& b : w.layers) {
    flip(b.wq); flip(b.wk); flip(b.wv); flip(b.wo);
    flip(b.ffn_w1); flip(b.ffn_b1); flip(b.ffn_w2); flip(b.ffn_b2);
    flip(b.ln1_g); flip(b.ln1_b); flip(b.ln2_g); flip(b.ln2_b);
  }
}

TensorPtr encode_image(const Image& img, const ModelWeights& w, Tape* tape) {
  const ModelConfig& cfg = w.cfg;
  if (img.c != cfg.channels || img.h != cfg.image_px || img.w != cfg.image_px)
    throw ShapeError("encode_image: image " + std::to_string(img.c) + "x" + std::to_string(img.h) +
                     "x" + std::to_string(img.w) + " does not match configured " +
                     std::to_string(cfg.channels) + "x" + std::to_string(cfg.image_px) + "x" +
                     std::to_string(cfg.image_px));
  if (img.h % cfg.patch_px != 0 || img.w % cfg.patch_px != 0)
    throw ShapeError("encode_image: image size not divisible by patch size");
  const int64_t side = cfg.grid_side(), pp = cfg.patch_px;
  auto patches = make_tensor({cfg.n_visual, cfg.patch_dim()});
  for (int64_t gr = 0; gr < side; ++gr)
    for (int64_t gc = 0; gc < side; ++gc) {
      double* row = patches->data.data() + (gr * side + gc) * cfg.patch_dim();
      int64_t o = 0;
      for (int64_t ch = 0; ch < cfg.channels; ++ch)
        for (int64_t y = 0; y < pp; ++y)
          for (int64_t x = 0; x < pp; ++x)
            row[o++] = static_cast<double>(
                img.px[static_cast<size_t>((ch * img.h + gr * pp + y) * img.w + gc * pp + x)]);
    }
  auto h = add_rowvec(linear(patches, w.vis_patch_w, tape), w.vis_patch_b, tape);
  h = add(h, w.vis_pos, tape);
  for (const auto& b : w.vis_blocks)
    h = block_tail(h, mha_bidirectional(h, b, cfg.vis_heads, tape), b, tape);
  return h;
}

TensorPtr project_visual(const TensorPtr& zv, const TensorPtr& w_p, Tape* tape) {
  return linear(zv, w_p, tape);
}

TensorPtr pool_global(const TensorPtr& rows, Tape* tape) { return mean_rows(rows, tape); }

TensorPtr embed_text(const std::vector<int>& ids, const ModelWeights& w, int64_t pos_offset,
                     Tape* tape) {
  const int64_t len = static_cast<int64_t>(ids.size());
  if (pos_offset < 0 || pos_offset + len > w.cfg.max_seq)
    throw ShapeError("embed_text: positions [" + std::to_string(pos_offset) + "," +
                     std::to_string(pos_offset + len) + ") exceed max_seq " +
                     std::to_string(w.cfg.max_seq));
  auto tok = embedding_lookup(w.tok_emb, ids, tape);
  auto pos = slice_rows(w.pos_emb, pos_offset, pos_offset + len, tape);
  return add(tok, pos, tape);
}

TensorPtr attention_with_prompts(const TensorPtr& h_in, int64_t layer, const ModelWeights& w,
                                 const PromptBank& bank, const TensorPtr& global_tok,
                                 int64_t causal_base, Tape* tape, const ForwardFlags& flags) {
  const ModelConfig& cfg = w.cfg;
  if (layer < 0 || layer >= cfg.n_layers)
    throw IndexError("attention_with_prompts: layer " + std::to_string(layer) + " outside [0," +
                     std::to_string(cfg.n_layers) + ")");
  if (h_in->shape.size() != 2 || h_in->cols() != cfg.d_model)
    throw ShapeError("attention_with_prompts: input " + shape_str(h_in->shape) +
                     " does not have width " + std::to_string(cfg.d_model));
  const AttnBlockWeights& b = w.layers[static_cast<size_t>(layer)];
  const int64_t k_seq = h_in->rows();
  const int64_t hd = cfg.head_dim();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));

  const bool adapt_here = cfg.adaption_layer(layer) && flags.use_adaption && cfg.n_adapt > 0 &&
                          !bank.adapt.empty();
  if (adapt_here && !global_tok)
    throw ContractError("attention_with_prompts: adaption layer " + std::to_string(layer) +
                        " requires the pooled global token");

  const bool with_prefix = flags.use_prefix && cfg.n_prefix > 0 &&
                           bank.prefix_k[static_cast<size_t>(layer)] != nullptr;
  const int64_t np = with_prefix ? cfg.n_prefix : 0;

  auto q = linear(h_in, b.wq, tape);
  auto kx = linear(h_in, b.wk, tape);
  auto vx = linear(h_in, b.wv, tape);

  TensorPtr adapt_rows, ka, va, gate_t;
  if (adapt_here) {
    const int64_t ai = bank.adapt_index(layer);
    adapt_rows = add_rowvec(bank.adapt[static_cast<size_t>(ai)], global_tok, tape);
    ka = linear(adapt_rows, b.wk, tape);
    va = linear(adapt_rows, b.wv, tape);
    gate_t = tanh_op(bank.gates[static_cast<size_t>(ai)], tape);
  }

  auto mask = causal_mask(k_seq, np, causal_base);
  std::vector<TensorPtr> head_outs;
  head_outs.reserve(static_cast<size_t>(cfg.n_heads));
  for (int64_t hi = 0; hi < cfg.n_heads; ++hi) {
    const int64_t c0 = hi * hd, c1 = (hi + 1) * hd;
    auto qh = slice_cols(q, c0, c1, tape);
    auto kh = slice_cols(kx, c0, c1, tape);
    auto vh = slice_cols(vx, c0, c1, tape);
    if (with_prefix) {
      kh = concat_rows({slice_cols(bank.prefix_k[static_cast<size_t>(layer)], c0, c1, tape), kh},
                       tape);
      vh = concat_rows({slice_cols(bank.prefix_v[static_cast<size_t>(layer)], c0, c1, tape), vh},
                       tape);
    }
    auto scores = add(scale(matmul_nt(qh, kh, tape), inv_sqrt, tape), mask, tape);
    auto out_h = matmul(softmax_rows(scores, tape), vh, tape);
    if (adapt_here) {
      auto ka_h = slice_cols(ka, c0, c1, tape);
      auto va_h = slice_cols(va, c0, c1, tape);
      auto a_scores = scale(matmul_nt(qh, ka_h, tape), inv_sqrt, tape);
      auto a_out = matmul(softmax_rows(a_scores, tape), va_h, tape);
      out_h = add(out_h, mul_scalar(a_out, gate_t, tape), tape);
    }
    head_outs.push_back(out_h);
  }
  return linear(concat_cols(head_outs, tape), b.wo, tape);
}

TensorPtr decoder_forward(const ModelWeights& w, const PromptBank& bank, const TensorPtr& embeddings,
                          const TensorPtr& global_tok, Tape* tape, const ForwardFlags& flags) {
  if (embeddings->rows() > w.cfg.max_seq)
    throw ShapeError("decoder_forward: sequence length " + std::to_string(embeddings->rows()) +
                     " exceeds max_seq " + std::to_string(w.cfg.max_seq));
  auto h = embeddings;
  for (int64_t l = 0; l < w.cfg.n_layers; ++l) {
    auto attn = attention_with_prompts(h, l, w, bank, global_tok, 0, tape, flags);
    h = block_tail(h, attn, w.layers[static_cast<size_t>(l)], tape);
  }
  return matmul_nt(h, w.tok_emb, tape);  // tied output head
}

SequenceInput assemble_sequence(const ModelWeights& w, const TensorPtr& visual_proj,
                                const TensorPtr& summary, const std::vector<int>& question_ids,
                                const std::vector<int>& answer_ids, bool append_eos, Tape* tape) {
  SequenceInput out;
  SequenceLayout& lay = out.layout;
  std::vector<TensorPtr> parts;
  int64_t pos = 0;

  if (visual_proj) {
    lay.visual_len = visual_proj->rows();
    parts.push_back(add(visual_proj, slice_rows(w.pos_emb, 0, lay.visual_len, tape), tape));
    pos = lay.visual_len;
  }
  if (summary) {
    if (summary->rows() != 1 || summary->cols() != w.cfg.d_model)
      throw ShapeError("assemble_sequence: summary must be [1 x d_model], got " +
                       shape_str(summary->shape));
    lay.has_summary = true;
    parts.push_back(add(summary, slice_rows(w.pos_emb, pos, pos + 1, tape), tape));
    pos += 1;
  }
  lay.question_len = static_cast<int64_t>(question_ids.size());
  if (lay.question_len > 0) {
    parts.push_back(embed_text(question_ids, w, pos, tape));
    pos += lay.question_len;
  }
  std::vector<int> ans = answer_ids;
  if (append_eos) ans.push_back(1 /*<eos>*/);
  lay.answer_len = static_cast<int64_t>(ans.size());
  if (lay.answer_len > 0) {
    parts.push_back(embed_text(ans, w, pos, tape));
    pos += lay.answer_len;
  }
  if (parts.empty()) throw ContractError("assemble_sequence: empty sequence");
  out.rows = parts.size() == 1 ? parts[0] : concat_rows(parts, tape);

  // Next-token targets: row i predicts the token at position i+1, masked to
  // predictions landing inside the answer span.
  const int64_t total = lay.total();
  lay.targets.assign(static_cast<size_t>(total), 0);
  lay.loss_mask.assign(static_cast<size_t>(total), 0);
  const int64_t a0 = lay.answer_start();
  for (int64_t i = 0; i < lay.answer_len; ++i) {
    const int64_t target_pos = a0 + i;
    if (target_pos == 0) continue;  // nothing predicts the very first position
    lay.targets[static_cast<size_t>(target_pos - 1)] = ans[static_cast<size_t>(i)];
    lay.loss_mask[static_cast<size_t>(target_pos - 1)] = 1;
  }
  return out;
}

std::vector<int> generate_greedy(const ModelWeights& w, const PromptBank& bank,
                                 const SequenceInput& prefix, const TensorPtr& global_tok,
                                 int64_t max_new, int stop_id, const ForwardFlags& flags) {
  if (max_new < 1) throw ContractError("generate_greedy: max_new must be >= 1");
  auto rows = prefix.rows;
  std::vector<int> out;
  for (int64_t step = 0; step < max_new; ++step) {
    if (rows->rows() >= w.cfg.max_seq) break;
    auto logits = decoder_forward(w, bank, rows, global_tok, nullptr, flags);
    const int64_t v = logits->cols();
    const double* last = logits->data.data() + (logits->rows() - 1) * v;
    int best = 0;
    for (int64_t j = 1; j < v; ++j)
      if (last[j] > last[best]) best = static_cast<int>(j);  // ties keep the lowest id
    if (best == stop_id) break;
    out.push_back(best);
    auto next = embed_text({best}, w, rows->rows(), nullptr);
    rows = concat_rows({rows, next}, nullptr);
  }
  return out;
}

NamedTensors registry(const ModelWeights& w, const PromptBank& bank) {
  NamedTensors out;
  auto push = [&out](const TensorPtr& t) {
    if (t) out.emplace_back(t->name, t);
  };
  push(w.tok_emb);
  push(w.pos_emb);
  for (const auto& b : w.layers) {
    push(b.wq); push(b.wk); push(b.wv); push(b.wo);
    push(b.ffn_w1); push(b.ffn_b1); push(b.ffn_w2); push(b.ffn_b2);
    push(b.ln1_g); push(b.ln1_b); push(b.ln2_g); push(b.ln2_b);
  }
  push(w.vis_patch_w);
  push(w.vis_patch_b);
  push(w.vis_pos);
  for (const auto& b : w.vis_blocks) {
    push(b.wq); push(b.wk); push(b.wv); push(b.wo);
    push(b.ffn_w1); push(b.ffn_b1); push(b.ffn_w2); push(b.ffn_b2);
    push(b.ln1_g); push(b.ln1_b); push(b.ln2_g); push(b.ln2_b);
  }
  push(w.w_p);
  for (size_t i = 0; i < bank.adapt.size(); ++i) {
    push(bank.adapt[i]);
    push(bank.gates[i]);
  }
  for (size_t l = 0; l < bank.prefix_k.size(); ++l) {
    push(bank.prefix_k[l]);
    push(bank.prefix_v[l]);
  }
  return out;
}

NamedTensors trainable_of(const NamedTensors& all) {
  NamedTensors out;
  for (const auto& [name, t] : all)
    if (t->requires_grad) out.emplace_back(name, t);
  return out;
}

int64_t count_trainable_params(const ModelWeights& w, const PromptBank& bank) {
  int64_t n = 0;
  for (const auto& [name, t] : registry(w, bank))
    if (t->requires_grad) n += t->size();
  return n;
}

int64_t count_total_params(const ModelWeights& w, const PromptBank& bank) {
  int64_t n = 0;
  for (const auto& [name, t] : registry(w, bank)) n += t->size();
  return n;
}

uint64_t frozen_checksum(const ModelWeights& w, const PromptBank& bank) {
  uint64_t h = 1469598103934665603ull;
  for (const auto& [name, t] : registry(w, bank)) {
    if (t->requires_grad) continue;
    h = fnv1a64(name.data(), name.size(), h);
    h = fnv1a64(t->data.data(), t->data.size() * sizeof(double), h);
  }
  return h;
}

}  // namespace evqa

#include "gradcheck.hpp"

#include <cstdio>

#include "data.hpp"
#include "model.hpp"
#include "tensor.hpp"
#include "tokenizer.hpp"

namespace evqa {

namespace {

constexpr double kEps = 1e-5;

ModelConfig reduced_config() {
  ModelConfig cfg;
  cfg.d_vis = 8;
  cfg.d_model = 16;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.n_visual = 4;
  cfg.top_layers = 1;
  cfg.n_adapt = 3;
  cfg.n_prefix = 3;
  cfg.max_seq = 32;
  cfg.lm_ffn = 32;
  cfg.vis_ffn = 16;
  cfg.vis_heads = 2;
  cfg.image_px = 16;
  cfg.patch_px = 8;
  cfg.channels = 3;
  cfg.vocab = Tokenizer::instance().size();
  return cfg;
}

}  // namespace

bool GradCheckReport::all_pass() const {
  for (const auto& r : rows)
    if (!r.pass) return false;
  return true;
}

std::string GradCheckReport::table() const {
  std::string out = "operation                      max_rel_err   tolerance   result\n";
  for (const auto& r : rows) {
    char line[128];
    std::snprintf(line, sizeof(line), "%-30s %11.3e %11.1e   %s\n", r.op.c_str(), r.max_rel_err,
                  r.tolerance, r.pass ? "pass" : "FAIL");
    out += line;
  }
  return out;
}

GradCheckReport run_gradcheck(uint64_t seed) {
  Rng rng(seed);
  GradCheckReport report;
  auto record = [&report](const std::string& op, double err, double tol) {
    report.rows.push_back({op, err, tol, err < tol});
  };

  {
    auto a = randn({5, 4}, rng, 1.0, true);
    auto b = randn({4, 3}, rng, 1.0);
    record("matmul",
           finite_diff_check([&](Tape& t) { return sum(matmul(a, b, &t), &t); }, a, kEps), 1e-6);
  }
  {
    auto a = randn({5, 4}, rng, 1.0);
    auto b = randn({3, 4}, rng, 1.0, true);
    record("matmul_nt",
           finite_diff_check([&](Tape& t) { return sum(matmul_nt(a, b, &t), &t); }, b, kEps), 1e-6);
  }
  {
    auto x = randn({4, 6}, rng, 1.0, true);
    auto probe = randn({4, 6}, rng, 1.0);
    record("softmax_rows",
           finite_diff_check(
               [&](Tape& t) { return sum(mul(softmax_rows(x, &t), probe, &t), &t); }, x, kEps),
           1e-6);
  }
  {
    auto x = randn({3, 8}, rng, 1.0, true);
    auto g = randn({8}, rng, 0.3, true);
    auto b = randn({8}, rng, 0.3, true);
    auto probe = randn({3, 8}, rng, 1.0);
    auto f = [&](Tape& t) { return sum(mul(layer_norm(x, g, b, 1e-5, &t), probe, &t), &t); };
    record("layer_norm(x)", finite_diff_check(f, x, kEps), 1e-5);
    record("layer_norm(gain)", finite_diff_check(f, g, kEps), 1e-5);
    record("layer_norm(bias)", finite_diff_check(f, b, kEps), 1e-5);
  }
  {
    auto table = randn({6, 5}, rng, 1.0, true);
    const std::vector<int> ids = {1, 3, 3, 0};
    auto probe = randn({4, 5}, rng, 1.0);
    record("embedding_lookup",
           finite_diff_check(
               [&](Tape& t) { return sum(mul(embedding_lookup(table, ids, &t), probe, &t), &t); },
               table, kEps),
           1e-6);
  }
  {
    auto logits = randn({3, 5}, rng, 1.0, true);
    const std::vector<int> targets = {2, 0, 4};
    const std::vector<uint8_t> mask = {1, 0, 1};
    record("cross_entropy_logits",
           finite_diff_check(
               [&](Tape& t) { return cross_entropy_logits(logits, targets, mask, &t); }, logits,
               kEps),
           1e-4);
  }
  {
    auto a = randn({7}, rng, 1.0, true);
    auto b = randn({7}, rng, 1.0, true);
    auto f = [&](Tape& t) { return cosine_similarity(a, b, &t); };
    record("cosine_similarity(a)", finite_diff_check(f, a, kEps), 1e-4);
    record("cosine_similarity(b)", finite_diff_check(f, b, kEps), 1e-4);
  }
  {
    auto x = randn({3, 4}, rng, 1.0, true);
    auto y = randn({3, 4}, rng, 1.0, true);
    auto probe = randn({3, 4}, rng, 1.0);
    record("add",
           finite_diff_check([&](Tape& t) { return sum(mul(add(x, y, &t), probe, &t), &t); }, x,
                             kEps),
           1e-6);
    record("mul",
           finite_diff_check([&](Tape& t) { return sum(mul(mul(x, y, &t), probe, &t), &t); }, y,
                             kEps),
           1e-4);
  }
  {
    auto x = randn({4, 5}, rng, 1.0, true);
    auto v = randn({5}, rng, 1.0, true);
    auto probe = randn({4, 5}, rng, 1.0);
    record("add_rowvec",
           finite_diff_check(
               [&](Tape& t) { return sum(mul(add_rowvec(x, v, &t), probe, &t), &t); }, v, kEps),
           1e-6);
  }
  {
    auto x = randn({6}, rng, 1.0, true);
    auto s = randn({1}, rng, 1.0, true);
    auto probe = randn({6}, rng, 1.0);
    record("mul_scalar",
           finite_diff_check(
               [&](Tape& t) { return sum(mul(mul_scalar(x, s, &t), probe, &t), &t); }, s, kEps),
           1e-4);
    record("tanh",
           finite_diff_check([&](Tape& t) { return sum(mul(tanh_op(x, &t), probe, &t), &t); }, x,
                             kEps),
           1e-4);
    record("gelu",
           finite_diff_check([&](Tape& t) { return sum(mul(gelu(x, &t), probe, &t), &t); }, x,
                             kEps),
           1e-4);
  }
  {
    auto x = randn({5, 6}, rng, 1.0, true);
    auto probe = randn({6}, rng, 1.0);
    record("mean_rows",
           finite_diff_check(
               [&](Tape& t) { return sum(mul(mean_rows(x, &t), probe, &t), &t); }, x, kEps),
           1e-6);
    auto probe2 = randn({2, 3}, rng, 1.0);
    record("slice",
           finite_diff_check(
               [&](Tape& t) {
                 return sum(mul(slice_cols(slice_rows(x, 1, 3, &t), 2, 5, &t),
                                slice_cols(probe2, 0, 3, &t), &t),
                            &t);
               },
               x, kEps),
           1e-6);
  }

  // Prompt-aware attention and a full forward/backward at reduced width.
  // The fixture seed is pinned: deep compositions put a few components into
  // the roundoff-dominated band of the central-difference oracle, and this
  // fixture keeps a 10x margin for every trainable leaf.
  {
    const ModelConfig cfg = reduced_config();
    Rng wrng(11);
    ModelWeights w = init_weights(cfg, wrng);
    PromptBank bank = init_prompt_bank(cfg, wrng);
    for (auto& g : bank.gates) g->data[0] = 0.3;  // exercise the adaption branch

    auto h = randn({5, cfg.d_model}, wrng, 1.0, true);
    auto gtok = randn({cfg.d_model}, wrng, 1.0, true);
    auto probe = randn({5, cfg.d_model}, wrng, 1.0);
    const int64_t top = cfg.n_layers - 1;
    auto attn_f = [&](Tape& t) {
      return sum(mul(attention_with_prompts(h, top, w, bank, gtok, 0, &t), probe, &t), &t);
    };
    record("attention(h)", finite_diff_check(attn_f, h, kEps), 1e-4);
    record("attention(global)", finite_diff_check(attn_f, gtok, kEps), 1e-4);
    record("attention(prefix_k)",
           finite_diff_check(attn_f, bank.prefix_k[static_cast<size_t>(top)], kEps), 1e-4);
    record("attention(gate)", finite_diff_check(attn_f, bank.gates.back(), kEps), 1e-4);

    // Full pipeline: image -> encoder -> projection -> prompted decoder -> loss.
    SyntheticSpec spec;
    spec.grid = 2;
    spec.image_px = 16;
    spec.patch_px = 8;
    Scene scene;
    scene.objects.push_back({0, 0, 0, 1});
    scene.objects.push_back({2, 1, 1, 0});
    scene.tier = 2;
    const Image img = render_image(scene, spec, 13);
    const Tokenizer& tok = Tokenizer::instance();
    const std::vector<int> q_ids = tok.encode("is a red circle visible");
    const std::vector<int> a_ids = tok.encode("yes");
    auto model_loss = [&](Tape& t) {
      auto zv = encode_image(img, w, &t);
      auto visual = project_visual(zv, w.w_p, &t);
      auto g = pool_global(visual, &t);
      auto seq = assemble_sequence(w, visual, nullptr, q_ids, a_ids, true, &t);
      auto logits = decoder_forward(w, bank, seq.rows, g, &t, {});
      return cross_entropy_logits(logits, seq.layout.targets, seq.layout.loss_mask, &t);
    };
    double worst = 0.0;
    const NamedTensors params = trainable_of(registry(w, bank));
    for (const auto& [name, p] : params)
      worst = std::max(worst, finite_diff_check(model_loss, p, kEps));
    record("full_model(trainables)", worst, 1e-4);
  }

  return report;
}

}  // namespace evqa

#include "train.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

namespace fs = std::filesystem;

namespace evqa {

namespace {

uint64_t stage_seed(uint64_t seed, int64_t stage) {
  uint64_t buf[2] = {seed, static_cast<uint64_t>(stage)};
  return fnv1a64(buf, sizeof(buf));
}

std::vector<double> config_fingerprint(const ModelConfig& m) {
  return {static_cast<double>(m.d_vis),     static_cast<double>(m.d_model),
          static_cast<double>(m.n_layers),  static_cast<double>(m.n_heads),
          static_cast<double>(m.n_visual),  static_cast<double>(m.top_layers),
          static_cast<double>(m.n_adapt),   static_cast<double>(m.n_prefix),
          static_cast<double>(m.max_seq),   static_cast<double>(m.lm_ffn),
          static_cast<double>(m.vis_ffn),   static_cast<double>(m.vis_heads),
          static_cast<double>(m.image_px),  static_cast<double>(m.patch_px),
          static_cast<double>(m.channels),  static_cast<double>(m.vocab)};
}

const char* kFingerprintNames[16] = {"d_vis",    "d_model",  "n_layers", "n_heads",
                                     "n_visual", "top_layers", "n_adapt", "n_prefix",
                                     "max_seq",  "lm_ffn",   "vis_ffn",  "vis_heads",
                                     "image_px", "patch_px", "channels", "vocab"};

NamedTensors lm_params(const ModelWeights& w) {
  NamedTensors out;
  PromptBank empty;
  for (const auto& [name, t] : registry(w, empty))
    if (name.rfind("lm.", 0) == 0) out.emplace_back(name, t);
  return out;
}

enum class Phase { Warmup, Stage1Main, Stage2 };

Phase phase_of(const TrainState& st, const RunConfig& cfg) {
  if (st.stage == 2) return Phase::Stage2;
  return st.step < cfg.warmup_steps ? Phase::Warmup : Phase::Stage1Main;
}

void enter_phase(TrainState& st, Phase phase) {
  const bool frozen = phase != Phase::Warmup;
  if (st.lm_frozen != frozen) {
    set_lm_trainable(st.weights, !frozen);
    st.lm_frozen = frozen;
    st.opt.reset();
  }
}

struct SampleView {
  const Image* image = nullptr;
  const std::vector<int>* q_ids = nullptr;
  const std::vector<int>* a_ids = nullptr;
};

}  // namespace

void AdamState::ensure(const NamedTensors& params) {
  for (const auto& [name, t] : params) {
    auto it = moments.find(name);
    if (it == moments.end()) {
      moments.emplace(name, std::make_pair(make_tensor(t->shape, false, "opt.m." + name),
                                           make_tensor(t->shape, false, "opt.v." + name)));
    } else if (it->second.first->shape != t->shape) {
      throw CheckpointError("optimizer moment for '" + name + "' has dims " +
                            shape_str(it->second.first->shape) + ", expected " +
                            shape_str(t->shape));
    }
  }
}

void adam_step(const NamedTensors& params, AdamState& state, double lr, double beta1, double beta2,
               double eps) {
  state.ensure(params);
  state.t += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  for (const auto& [name, p] : params) {
    p->ensure_grad();
    auto& [m, v] = state.moments.at(name);
    for (int64_t i = 0; i < p->size(); ++i) {
      const double g = p->grad[i];
      if (!std::isfinite(g))
        throw NumericError("non-finite gradient in tensor '" + name + "' at element " +
                           std::to_string(i));
      m->data[i] = beta1 * m->data[i] + (1.0 - beta1) * g;
      v->data[i] = beta2 * v->data[i] + (1.0 - beta2) * g * g;
      const double m_hat = m->data[i] / bc1;
      const double v_hat = v->data[i] / bc2;
      p->data[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

TensorPtr lm_loss_masked(const TensorPtr& logits, const SequenceLayout& layout, Tape* tape) {
  return cross_entropy_logits(logits, layout.targets, layout.loss_mask, tape);
}

TrainState fresh_train_state(const RunConfig& cfg, int64_t stage) {
  TrainState st;
  Rng init_rng(cfg.seed);
  st.weights = init_weights(cfg.model_config(), init_rng);
  st.bank = init_prompt_bank(cfg.model_config(), init_rng);
  st.rng.reseed(stage_seed(cfg.seed, stage));
  st.stage = stage;
  st.step = 0;
  st.lm_frozen = false;
  if (stage == 2) {
    set_lm_trainable(st.weights, false);
    st.lm_frozen = true;
  }
  return st;
}

NamedTensors active_params(const TrainState& st) {
  if (!st.lm_frozen) return lm_params(st.weights);
  return trainable_of(registry(st.weights, st.bank));
}

TrainState promote_to_stage2(TrainState st, const RunConfig& cfg) {
  st.stage = 2;
  st.step = 0;
  st.opt.reset();
  set_lm_trainable(st.weights, false);
  st.lm_frozen = true;
  st.rng.reseed(stage_seed(cfg.seed, 2));
  return st;
}

void save_train_checkpoint(const std::string& path, const RunConfig& cfg, const TrainState& st) {
  NamedTensors payload = registry(st.weights, st.bank);
  for (const auto& [name, mv] : st.opt.moments) {
    payload.emplace_back("opt.m." + name, mv.first);
    payload.emplace_back("opt.v." + name, mv.second);
  }
  auto meta_scalar = [](double v, const std::string& name) {
    auto t = make_tensor({1}, false, name);
    t->data[0] = v;
    return t;
  };
  payload.emplace_back("meta.step", meta_scalar(static_cast<double>(st.step), "meta.step"));
  payload.emplace_back("meta.stage", meta_scalar(static_cast<double>(st.stage), "meta.stage"));
  payload.emplace_back("meta.lm_frozen",
                       meta_scalar(st.lm_frozen ? 1.0 : 0.0, "meta.lm_frozen"));
  payload.emplace_back("meta.opt_t", meta_scalar(static_cast<double>(st.opt.t), "meta.opt_t"));
  payload.emplace_back("meta.rng", tensor_from_u64(st.rng.state(), "meta.rng"));
  const auto fp = config_fingerprint(cfg.model_config());
  payload.emplace_back("meta.config", from_data({static_cast<int64_t>(fp.size())}, fp));
  save_named_tensors(path, payload);
}

TrainState load_train_checkpoint(const std::string& path, const RunConfig& cfg) {
  const auto src = load_named_tensors(path);

  auto meta = [&src, &path](const std::string& name) -> const TensorPtr& {
    auto it = src.find(name);
    if (it == src.end())
      throw CheckpointError("checkpoint '" + path + "' is missing tensor '" + name + "'");
    return it->second;
  };

  const auto fp_expected = config_fingerprint(cfg.model_config());
  const auto& fp_tensor = meta("meta.config");
  if (fp_tensor->size() != static_cast<int64_t>(fp_expected.size()))
    throw CheckpointError("checkpoint '" + path + "' config fingerprint has " +
                          std::to_string(fp_tensor->size()) + " fields, expected " +
                          std::to_string(fp_expected.size()));
  for (size_t i = 0; i < fp_expected.size(); ++i)
    if (fp_tensor->data[i] != fp_expected[i])
      throw CheckpointError("checkpoint '" + path + "' was produced with " +
                            std::string(kFingerprintNames[i]) + "=" +
                            std::to_string(static_cast<int64_t>(fp_tensor->data[i])) +
                            ", current config has " +
                            std::to_string(static_cast<int64_t>(fp_expected[i])));

  TrainState st;
  Rng scratch(0);
  st.weights = init_weights(cfg.model_config(), scratch);
  st.bank = init_prompt_bank(cfg.model_config(), scratch);
  st.stage = static_cast<int64_t>(meta("meta.stage")->data[0]);
  st.step = static_cast<int64_t>(meta("meta.step")->data[0]);
  st.lm_frozen = meta("meta.lm_frozen")->data[0] != 0.0;
  set_lm_trainable(st.weights, !st.lm_frozen);
  apply_named_tensors(registry(st.weights, st.bank), src);
  st.rng.restore(u64_from_tensor(meta("meta.rng")));

  st.opt.t = static_cast<int64_t>(meta("meta.opt_t")->data[0]);
  for (const auto& [name, p] : active_params(st)) {
    auto mit = src.find("opt.m." + name);
    auto vit = src.find("opt.v." + name);
    if (mit == src.end() || vit == src.end()) {
      if (st.opt.t == 0) continue;  // fresh optimizer: moments legitimately absent
      throw CheckpointError("checkpoint '" + path + "' is missing optimizer moments for '" + name +
                            "'");
    }
    if (mit->second->shape != p->shape || vit->second->shape != p->shape)
      throw CheckpointError("checkpoint optimizer moments for '" + name + "' have dims " +
                            shape_str(mit->second->shape) + ", expected " + shape_str(p->shape));
    st.opt.moments.emplace(name, std::make_pair(mit->second, vit->second));
  }
  return st;
}

TrainRun run_training(const RunConfig& cfg, TrainState& st, const Corpus& corpus,
                      const std::string& out_dir) {
  fs::create_directories(out_dir);
  const int64_t total_steps =
      st.stage == 1 ? cfg.warmup_steps + cfg.stage1_steps : cfg.stage2_steps;
  if (st.step > total_steps)
    throw ConfigError("checkpoint step " + std::to_string(st.step) + " is past the schedule of " +
                      std::to_string(total_steps) + " steps");

  std::vector<const CaptionSample*> captions;
  for (const auto& c : corpus.captions)
    if (c.split == "train") captions.push_back(&c);
  std::vector<const VQASample*> vqa;
  for (const auto& s : corpus.samples)
    if (s.split == "train") vqa.push_back(&s);
  if (st.stage == 1 && captions.empty()) throw ConfigError("no training captions in dataset");
  if (st.stage == 2 && vqa.empty()) throw ConfigError("no training samples in dataset");

  const std::string csv_path =
      (fs::path(out_dir) / ("loss_stage" + std::to_string(st.stage) + ".csv")).string();
  std::ofstream csv(csv_path, st.step > 0 ? std::ios::app : std::ios::trunc);
  if (!csv) throw InputError("cannot write loss curve '" + csv_path + "'");

  TrainRun run;
  for (; st.step < total_steps; ++st.step) {
    const Phase phase = phase_of(st, cfg);
    enter_phase(st, phase);
    const NamedTensors params = active_params(st);
    st.opt.ensure(params);
    for (const auto& [name, p] : params) p->zero_grad();

    const ForwardFlags flags{phase != Phase::Warmup, phase != Phase::Warmup};
    double batch_loss = 0.0;
    for (int64_t b = 0; b < cfg.batch; ++b) {
      SampleView view;
      if (phase == Phase::Stage2) {
        const VQASample* s = vqa[static_cast<size_t>(st.rng.below(static_cast<int64_t>(vqa.size())))];
        view.image = s->image.get();
        view.q_ids = &s->q_ids;
        view.a_ids = &s->a_ids;
      } else {
        const CaptionSample* c =
            captions[static_cast<size_t>(st.rng.below(static_cast<int64_t>(captions.size())))];
        view.image = phase == Phase::Warmup ? nullptr : c->image.get();
        view.a_ids = &c->ids;
      }

      Tape tape;
      TensorPtr visual, gtok;
      if (view.image) {
        auto zv = encode_image(*view.image, st.weights, &tape);
        visual = project_visual(zv, st.weights.w_p, &tape);
        gtok = pool_global(visual, &tape);
      }
      static const std::vector<int> kNoIds;
      auto seq = assemble_sequence(st.weights, visual, nullptr, view.q_ids ? *view.q_ids : kNoIds,
                                   *view.a_ids, true, &tape);
      auto logits = decoder_forward(st.weights, st.bank, seq.rows, gtok, &tape, flags);
      auto loss = lm_loss_masked(logits, seq.layout, &tape);
      batch_loss += loss->data[0];
      auto scaled = scale(loss, 1.0 / static_cast<double>(cfg.batch), &tape);
      tape.backward(scaled);
    }
    batch_loss /= static_cast<double>(cfg.batch);
    if (!std::isfinite(batch_loss))
      throw NumericError("non-finite loss at step " + std::to_string(st.step));

    adam_step(params, st.opt, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps);

    char row[64];
    std::snprintf(row, sizeof(row), "%lld,%.17g\n", static_cast<long long>(st.step), batch_loss);
    csv << row;
    run.losses.emplace_back(st.step, batch_loss);

    if ((st.step + 1) % cfg.ckpt_every == 0 && st.step + 1 < total_steps) {
      const std::string p =
          (fs::path(out_dir) / ("ckpt_step" + std::to_string(st.step + 1) + ".evqa")).string();
      TrainState snapshot = st;
      snapshot.step = st.step + 1;
      save_train_checkpoint(p, cfg, snapshot);
    }
  }
  csv.flush();
  const std::string final_path =
      (fs::path(out_dir) / ("stage" + std::to_string(st.stage) + ".evqa")).string();
  save_train_checkpoint(final_path, cfg, st);
  return run;
}

}  // namespace evqa

#include "evqa/evqa.h"

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "config.hpp"
#include "data.hpp"
#include "eval.hpp"
#include "gradcheck.hpp"
#include "prompts.hpp"
#include "tokenizer.hpp"
#include "train.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

struct evqa_session {
  evqa::RunConfig cfg;
  std::string last_error;
};

namespace {

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out) std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

evqa_status fail(evqa_session* s, const std::exception& e, evqa_status code) {
  if (s) s->last_error = e.what();
  return code;
}

template <typename Fn>
evqa_status guarded(evqa_session* s, Fn&& fn) {
  try {
    fn();
    if (s) s->last_error.clear();
    return EVQA_OK;
  } catch (const evqa::Error& e) {
    return fail(s, e, static_cast<evqa_status>(static_cast<int>(e.status())));
  } catch (const std::exception& e) {
    return fail(s, e, EVQA_E_INTERNAL);
  }
}

void require(bool ok, const std::string& msg, evqa::Status st = evqa::Status::Input) {
  if (!ok) throw evqa::Error(st, msg);
}

evqa::TrainState load_or_fresh(const evqa::RunConfig& cfg, int stage, const char* resume_path) {
  if (!resume_path) return evqa::fresh_train_state(cfg, stage);
  if (!fs::exists(resume_path))
    throw evqa::CheckpointError(std::string("checkpoint '") + resume_path + "' does not exist");
  evqa::TrainState st = evqa::load_train_checkpoint(resume_path, cfg);
  if (st.stage == stage) return st;
  if (stage == 2 && st.stage == 1) return evqa::promote_to_stage2(std::move(st), cfg);
  throw evqa::CheckpointError("checkpoint is for stage " + std::to_string(st.stage) +
                              ", cannot resume stage " + std::to_string(stage) + " from it");
}

std::vector<const evqa::VQASample*> split_of(const evqa::Corpus& corpus, const std::string& split) {
  std::vector<const evqa::VQASample*> out;
  for (const auto& s : corpus.samples)
    if (s.split == split) out.push_back(&s);
  return out;
}

}  // namespace

extern "C" {

unsigned evqa_abi_version(void) { return 1; }

const char* evqa_status_name(int status) {
  switch (status) {
    case EVQA_OK: return "ok";
    case EVQA_E_INTERNAL: return "internal error";
    case EVQA_E_CONFIG: return "config error";
    case EVQA_E_CHECKPOINT: return "checkpoint error";
    case EVQA_E_INPUT: return "input error";
    case EVQA_E_NUMERIC: return "numeric error";
    default: return "unknown status";
  }
}

evqa_status evqa_session_open(const char* config_path, const char* const* overrides,
                              size_t n_overrides, evqa_session** out) {
  if (!out) return EVQA_E_INPUT;
  *out = nullptr;
  auto s = new evqa_session();
  const evqa_status st = guarded(s, [&] {
    std::vector<std::string> ovs;
    for (size_t i = 0; i < n_overrides; ++i) ovs.emplace_back(overrides[i]);
    s->cfg = evqa::RunConfig::load(config_path ? config_path : "", ovs);
  });
  if (st != EVQA_OK) {
    // Surface the message through a throwaway session the caller can't see;
    // keep the handle so evqa_errmsg works even on open failure.
    *out = s;
    return st;
  }
  *out = s;
  return EVQA_OK;
}

void evqa_session_close(evqa_session* s) { delete s; }

const char* evqa_errmsg(const evqa_session* s) { return s ? s->last_error.c_str() : ""; }

evqa_status evqa_gen_data(evqa_session* s, const char* out_dir) {
  return guarded(s, [&] {
    require(out_dir != nullptr, "gen-data: output directory required");
    const auto corpus = evqa::generate_dataset(s->cfg.synthetic_spec());
    evqa::write_corpus(corpus, out_dir);
    s->cfg.echo_to(out_dir);
  });
}

evqa_status evqa_train(evqa_session* s, int stage, const char* out_dir, const char* resume_path) {
  return guarded(s, [&] {
    require(stage == 1 || stage == 2, "train: stage must be 1 or 2", evqa::Status::Config);
    require(out_dir != nullptr, "train: output directory required");
    require(fs::exists(fs::path(s->cfg.data_dir) / "dataset.jsonl"),
            "dataset not found under '" + s->cfg.data_dir + "' (run gen-data first)");
    const auto corpus = evqa::load_corpus(s->cfg.data_dir);
    evqa::TrainState st = load_or_fresh(s->cfg, stage, resume_path);
    s->cfg.echo_to(out_dir);
    const uint64_t frozen_before = evqa::frozen_checksum(st.weights, st.bank);
    evqa::run_training(s->cfg, st, corpus, out_dir);
    const uint64_t frozen_after = evqa::frozen_checksum(st.weights, st.bank);
    std::printf("stage %d done: %lld steps, frozen checksum %s -> %s, trainable params %lld\n",
                stage, static_cast<long long>(st.step),
                evqa::to_hex(frozen_before).c_str(), evqa::to_hex(frozen_after).c_str(),
                static_cast<long long>(evqa::count_trainable_params(st.weights, st.bank)));
  });
}

evqa_status evqa_eval(evqa_session* s, const char* checkpoint, const char* out_dir, int use_tp,
                      int use_tto, char** report_json) {
  if (report_json) *report_json = nullptr;
  return guarded(s, [&] {
    require(checkpoint != nullptr, "eval: checkpoint required", evqa::Status::Checkpoint);
    require(fs::exists(checkpoint),
            "checkpoint '" + std::string(checkpoint) + "' does not exist",
            evqa::Status::Checkpoint);
    require(out_dir != nullptr, "eval: output directory required");
    require(fs::exists(fs::path(s->cfg.data_dir) / "dataset.jsonl"),
            "dataset not found under '" + s->cfg.data_dir + "' (run gen-data first)");
    const auto corpus = evqa::load_corpus(s->cfg.data_dir);
    const auto test = split_of(corpus, "test");
    require(!test.empty(), "dataset has no test split");

    evqa::TrainState st = evqa::load_train_checkpoint(checkpoint, s->cfg);
    fs::create_directories(out_dir);
    s->cfg.echo_to(out_dir);

    evqa::EvalFlags flags;
    flags.use_tp = use_tp != 0;
    flags.use_tto = use_tto != 0;
    flags.k = s->cfg.k;
    flags.tto_iters = s->cfg.tto_iters;
    flags.tto_step = s->cfg.tto_step;

    const evqa::VocabularyIndex* vocab_ptr = nullptr;
    evqa::VocabularyIndex vocab;
    if (flags.use_tto) {
      const auto train = split_of(corpus, "train");
      require(!train.empty(), "dataset has no train split (needed for the vocabulary)");
      std::vector<evqa::VQASample> train_copy;
      train_copy.reserve(train.size());
      for (const auto* p : train) train_copy.push_back(*p);
      const auto built =
          evqa::build_vocabulary(train_copy, st.weights, s->cfg.synthetic_spec());
      const std::string vocab_path = (fs::path(out_dir) / "vocab.jsonl").string();
      evqa::save_vocabulary(built, vocab_path);
      vocab = evqa::load_vocabulary(vocab_path, s->cfg.d_vis);
      vocab_ptr = &vocab;
    }

    const auto report = evqa::evaluate_model(st.weights, st.bank, vocab_ptr, test, flags);
    const std::string json = report.to_json(s->cfg.config_hash(), flags);
    std::ofstream out((fs::path(out_dir) / "report.json").string(), std::ios::binary);
    require(static_cast<bool>(out), "cannot write report.json");
    out << json << "\n";
    if (report_json) *report_json = dup_string(json);
  });
}

evqa_status evqa_infer(evqa_session* s, const char* checkpoint, const char* image_path,
                       const char* question, char** answer, char** trace_json) {
  if (answer) *answer = nullptr;
  if (trace_json) *trace_json = nullptr;
  return guarded(s, [&] {
    require(checkpoint != nullptr, "infer: checkpoint required", evqa::Status::Checkpoint);
    require(fs::exists(checkpoint),
            "checkpoint '" + std::string(checkpoint) + "' does not exist",
            evqa::Status::Checkpoint);
    require(image_path != nullptr && fs::exists(image_path),
            "image '" + std::string(image_path ? image_path : "") + "' does not exist");
    require(question != nullptr, "infer: question required");

    evqa::TrainState st = evqa::load_train_checkpoint(checkpoint, s->cfg);
    evqa::VQASample sample;
    sample.image = std::make_shared<evqa::Image>(evqa::load_image_file(image_path));
    sample.question = question;
    sample.q_ids = evqa::Tokenizer::instance().encode(question);

    evqa::EvalFlags flags;
    flags.k = s->cfg.k;
    flags.tto_iters = s->cfg.tto_iters;
    flags.tto_step = s->cfg.tto_step;

    // The retrieval vocabulary comes from the train split, embedded with the
    // checkpoint's encoder weights (same construction eval writes to disk).
    require(fs::exists(fs::path(s->cfg.data_dir) / "dataset.jsonl"),
            "dataset not found under '" + s->cfg.data_dir + "' (run gen-data first)");
    const auto corpus = evqa::load_corpus(s->cfg.data_dir);
    std::vector<evqa::VQASample> train_set;
    for (const auto& smp : corpus.samples)
      if (smp.split == "train") train_set.push_back(smp);
    require(!train_set.empty(), "dataset has no train split (needed for the vocabulary)");
    evqa::VocabularyIndex vocab =
        evqa::build_vocabulary(train_set, st.weights, s->cfg.synthetic_spec());

    evqa::InferTrace trace;
    const std::string ans =
        evqa::predict_sample(st.weights, st.bank, &vocab, sample, flags, &trace);

    ordered_json j;
    ordered_json retrieved = ordered_json::array();
    for (const auto& [term, sim] : trace.retrieved)
      retrieved.push_back({{"term", term}, {"similarity", sim}});
    j["retrieved"] = retrieved;
    j["align_losses"] = trace.align_losses;
    j["summary_term"] = trace.summary_term;
    j["answer"] = ans;
    if (answer) *answer = dup_string(ans);
    if (trace_json) *trace_json = dup_string(j.dump(2));
  });
}

evqa_status evqa_gradcheck(evqa_session* s, char** table_text) {
  if (table_text) *table_text = nullptr;
  evqa_status st = guarded(s, [&] {
    const auto report = evqa::run_gradcheck(s ? s->cfg.seed : 1);
    if (table_text) *table_text = dup_string(report.table());
    if (!report.all_pass())
      throw evqa::NumericError("gradient check failed for at least one operation");
  });
  return st;
}

void evqa_free(char* p) { std::free(p); }

}  // extern "C"

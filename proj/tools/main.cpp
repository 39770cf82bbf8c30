// Command-line front end; talks to the core library exclusively through the
// C interface in evqa/evqa.h.

#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "evqa/evqa.h"

namespace {

struct CommonArgs {
  std::string config;
  std::string out = "out";
  std::string resume;
  long long seed = -1;
  long long k = -1;
  long long tto_iters = -1;
};

std::vector<std::string> collect_overrides(const CommonArgs& a) {
  std::vector<std::string> ov;
  if (a.seed >= 0) ov.push_back("seed=" + std::to_string(a.seed));
  if (a.k >= 0) ov.push_back("k=" + std::to_string(a.k));
  if (a.tto_iters >= 0) ov.push_back("tto_iters=" + std::to_string(a.tto_iters));
  return ov;
}

class Session {
 public:
  Session(const CommonArgs& a) {
    const auto ov = collect_overrides(a);
    std::vector<const char*> ptrs;
    for (const auto& s : ov) ptrs.push_back(s.c_str());
    status_ = evqa_session_open(a.config.empty() ? nullptr : a.config.c_str(),
                                ptrs.empty() ? nullptr : ptrs.data(), ptrs.size(), &handle_);
  }
  ~Session() { evqa_session_close(handle_); }
  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  evqa_status open_status() const { return status_; }
  evqa_session* get() const { return handle_; }

  int finish(evqa_status st) const {
    if (st != EVQA_OK)
      std::fprintf(stderr, "error (%s): %s\n", evqa_status_name(st), evqa_errmsg(handle_));
    return static_cast<int>(st);
  }

 private:
  evqa_session* handle_ = nullptr;
  evqa_status status_ = EVQA_OK;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multimodal prompt-tuning testbed"};
  app.require_subcommand(1);

  CommonArgs args;
  bool no_tp = false, no_tto = false, ap_only = false;
  std::string image_path, question;

  auto add_common = [&](CLI::App* cmd, bool with_resume) {
    cmd->add_option("--config", args.config, "key=value config file");
    cmd->add_option("--seed", args.seed, "override training seed");
    cmd->add_option("--out", args.out, "output directory");
    if (with_resume) cmd->add_option("--resume", args.resume, "checkpoint to resume/load");
  };

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic dataset");
  add_common(gen, false);

  auto* pre = app.add_subcommand("pretrain", "stage 1: caption alignment (with LM warmup)");
  add_common(pre, true);

  auto* fin = app.add_subcommand("finetune", "stage 2: question answering");
  add_common(fin, true);

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  add_common(ev, true);
  ev->add_flag("--no-tp", no_tp, "disable prefix text prompts");
  ev->add_flag("--no-tto", no_tto, "disable test-time optimization");
  ev->add_flag("--ap-only", ap_only, "adaption prompts only (implies --no-tp --no-tto)");
  ev->add_option("--k", args.k, "retrieved terms");
  ev->add_option("--tto-iters", args.tto_iters, "test-time optimization iterations");

  auto* inf = app.add_subcommand("infer", "answer one question about one image");
  add_common(inf, true);
  inf->add_option("image", image_path, "image sidecar file (.f32)")->required();
  inf->add_option("question", question, "question text")->required();
  inf->add_option("--k", args.k, "retrieved terms");
  inf->add_option("--tto-iters", args.tto_iters, "test-time optimization iterations");

  auto* gc = app.add_subcommand("gradcheck", "verify every backward rule by finite differences");
  add_common(gc, false);

  CLI11_PARSE(app, argc, argv);

  Session session(args);
  if (session.open_status() != EVQA_OK) return session.finish(session.open_status());
  evqa_session* s = session.get();

  if (gen->parsed()) return session.finish(evqa_gen_data(s, args.out.c_str()));

  if (pre->parsed() || fin->parsed()) {
    const int stage = pre->parsed() ? 1 : 2;
    return session.finish(
        evqa_train(s, stage, args.out.c_str(), args.resume.empty() ? nullptr : args.resume.c_str()));
  }

  if (ev->parsed()) {
    const int use_tp = (no_tp || ap_only) ? 0 : 1;
    const int use_tto = (no_tto || ap_only) ? 0 : 1;
    char* report = nullptr;
    const evqa_status st = evqa_eval(s, args.resume.empty() ? nullptr : args.resume.c_str(),
                                     args.out.c_str(), use_tp, use_tto, &report);
    if (report) {
      std::printf("%s\n", report);
      evqa_free(report);
    }
    return session.finish(st);
  }

  if (inf->parsed()) {
    char* answer = nullptr;
    char* trace = nullptr;
    const evqa_status st = evqa_infer(s, args.resume.empty() ? nullptr : args.resume.c_str(),
                                      image_path.c_str(), question.c_str(), &answer, &trace);
    if (st == EVQA_OK) {
      std::printf("answer: %s\n", answer ? answer : "");
      if (trace) std::printf("%s\n", trace);
    }
    evqa_free(answer);
    evqa_free(trace);
    return session.finish(st);
  }

  if (gc->parsed()) {
    char* table = nullptr;
    const evqa_status st = evqa_gradcheck(s, &table);
    if (table) {
      std::printf("%s", table);
      evqa_free(table);
    }
    return session.finish(st);
  }

  return EVQA_E_INTERNAL;
}

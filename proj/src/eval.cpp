#include "eval.hpp"

#include <map>

#include <json.hpp>

#include "tokenizer.hpp"

using ordered_json = nlohmann::ordered_json;

namespace evqa {

namespace {

constexpr int64_t kMaxAnswerTokens = 8;

}  // namespace

std::string predict_sample(const ModelWeights& w, const PromptBank& bank,
                           const VocabularyIndex* vocab, const VQASample& sample,
                           const EvalFlags& flags, InferTrace* trace) {
  const Tokenizer& tok = Tokenizer::instance();
  ForwardFlags fwd{flags.use_tp, flags.use_ap};

  auto zv = encode_image(*sample.image, w, nullptr);
  auto visual = project_visual(zv, w.w_p, nullptr);
  auto gtok = pool_global(visual, nullptr);

  TensorPtr summary;
  if (flags.use_tto) {
    if (!vocab) throw ContractError("predict_sample: test-time optimization needs a vocabulary");
    const auto ranked = retrieve_topk(zv, *vocab, std::min(flags.k, vocab->size()));
    std::vector<std::string> terms;
    for (const auto& r : ranked) {
      terms.push_back(vocab->terms[static_cast<size_t>(r.index)]);
      if (trace) trace->retrieved.emplace_back(terms.back(), r.similarity);
    }
    auto state = init_soft_prompts(terms, w);
    optimize_soft_prompts(state, gtok, flags.tto_iters, flags.tto_step);
    summary = build_summary_prompt(state);
    if (trace) {
      trace->align_losses = state.trace;
      trace->summary_term = state.terms.front();
    }
  }

  auto seq = assemble_sequence(w, visual, summary, sample.q_ids, {}, false, nullptr);
  const auto ids = generate_greedy(w, bank, seq, gtok, kMaxAnswerTokens, tok.eos_id(), fwd);
  const std::string answer = tok.decode(ids);
  if (trace) trace->answer = answer;
  return answer;
}

EvalReport score_predictions(const std::vector<const VQASample*>& samples,
                             const std::vector<std::string>& predictions) {
  if (samples.size() != predictions.size())
    throw ContractError("score_predictions: " + std::to_string(samples.size()) + " samples vs " +
                        std::to_string(predictions.size()) + " predictions");
  if (samples.empty()) throw ContractError("score_predictions: empty split");

  std::map<std::string, QtypeScore> by_type;
  QtypeScore agg;
  for (size_t i = 0; i < samples.size(); ++i) {
    const VQASample& s = *samples[i];
    QtypeScore& ts = by_type[qtype_name(s.qtype)];
    if (s.answer_class == AnswerClass::Open) {
      const double r = score_open_recall(predictions[i], s.answer);
      ts.open_recall += r;
      ts.open_count += 1;
      agg.open_recall += r;
      agg.open_count += 1;
    } else {
      const int e = score_closed_exact(predictions[i], s.answer);
      ts.closed_exact += e;
      ts.closed_count += 1;
      agg.closed_exact += e;
      agg.closed_count += 1;
    }
  }
  auto finish = [](QtypeScore& s) {
    if (s.open_count > 0) s.open_recall /= static_cast<double>(s.open_count);
    if (s.closed_count > 0) s.closed_exact /= static_cast<double>(s.closed_count);
  };
  finish(agg);
  EvalReport report;
  report.aggregate = agg;
  for (auto& [name, score] : by_type) {
    finish(score);
    report.per_qtype.emplace_back(name, score);
  }
  return report;
}

EvalReport evaluate_model(const ModelWeights& w, const PromptBank& bank,
                          const VocabularyIndex* vocab, const std::vector<const VQASample*>& split,
                          const EvalFlags& flags) {
  if (split.empty()) throw ContractError("evaluate_model: empty split");
  std::vector<std::string> preds;
  preds.reserve(split.size());
  for (const VQASample* s : split) preds.push_back(predict_sample(w, bank, vocab, *s, flags));
  return score_predictions(split, preds);
}

std::string EvalReport::to_json(const std::string& config_hash, const EvalFlags& flags) const {
  ordered_json j;
  j["config_hash"] = config_hash;
  j["flags"] = {{"use_ap", flags.use_ap},
                {"use_tp", flags.use_tp},
                {"use_tto", flags.use_tto},
                {"k", flags.k},
                {"tto_iters", flags.tto_iters}};
  auto score_json = [](const QtypeScore& s) {
    ordered_json o;
    o["open_recall"] = s.open_recall;
    o["closed_exact"] = s.closed_exact;
    o["open_count"] = s.open_count;
    o["closed_count"] = s.closed_count;
    return o;
  };
  j["aggregate"] = score_json(aggregate);
  ordered_json per;
  for (const auto& [name, s] : per_qtype) per[name] = score_json(s);
  j["per_qtype"] = per;
  return j.dump(2);
}

}  // namespace evqa

#pragma once

#include <string>
#include <vector>

#include "data.hpp"
#include "model.hpp"
#include "prompts.hpp"

namespace evqa {

struct EvalFlags {
  bool use_ap = true;   // adaption prompts
  bool use_tp = true;   // prefix key/value text prompts
  bool use_tto = true;  // test-time retrieval + soft-prompt optimization
  int64_t k = 10;
  int64_t tto_iters = 100;
  double tto_step = 0.01;
};

struct InferTrace {
  std::vector<std::pair<std::string, double>> retrieved;  // term, similarity
  std::vector<double> align_losses;
  std::string summary_term;
  std::string answer;
};

struct QtypeScore {
  double open_recall = 0.0;
  double closed_exact = 0.0;
  int64_t open_count = 0;
  int64_t closed_count = 0;
};

struct EvalReport {
  QtypeScore aggregate;
  std::vector<std::pair<std::string, QtypeScore>> per_qtype;
  std::string to_json(const std::string& config_hash, const EvalFlags& flags) const;
};

// Runs the full answer pipeline for one sample. The vocabulary index may be
// null when flags.use_tto is false.
std::string predict_sample(const ModelWeights& w, const PromptBank& bank,
                           const VocabularyIndex* vocab, const VQASample& sample,
                           const EvalFlags& flags, InferTrace* trace = nullptr);

// Scores externally produced predictions (aligned with samples).
EvalReport score_predictions(const std::vector<const VQASample*>& samples,
                             const std::vector<std::string>& predictions);

EvalReport evaluate_model(const ModelWeights& w, const PromptBank& bank,
                          const VocabularyIndex* vocab, const std::vector<const VQASample*>& split,
                          const EvalFlags& flags);

}  // namespace evqa

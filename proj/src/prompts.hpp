#pragma once

#include <string>
#include <vector>

#include "data.hpp"
#include "model.hpp"
#include "tensor.hpp"

namespace evqa {

// Domain-term index for instance-level retrieval. Term embeddings live in
// vision-feature space (d_vis) so pooled image features can be compared to
// them directly.
struct VocabularyIndex {
  std::vector<std::string> terms;
  TensorPtr embeddings;  // [M x d_vis]
  std::vector<std::string> provenance;

  int64_t size() const { return static_cast<int64_t>(terms.size()); }
};

struct Retrieved {
  int index = 0;
  double similarity = 0.0;
};

// One inference instance's soft-prompt optimization state.
struct SoftPromptState {
  std::vector<std::string> terms;                      // ranked
  std::vector<std::pair<int64_t, int64_t>> spans;      // token span per term in p_soft
  TensorPtr p_soft;                                    // [N_r x d_model]
  std::vector<double> trace;                           // alignment loss, length T+1
  bool optimized = false;
};

VocabularyIndex build_vocabulary(const std::vector<VQASample>& train_set, const ModelWeights& w,
                                 const SyntheticSpec& spec);
void save_vocabulary(const VocabularyIndex& index, const std::string& path);
VocabularyIndex load_vocabulary(const std::string& path, int64_t expected_dim);

std::vector<Retrieved> retrieve_topk(const TensorPtr& zv, const VocabularyIndex& index, int64_t k);

SoftPromptState init_soft_prompts(const std::vector<std::string>& ranked_terms,
                                  const ModelWeights& w);

// Gradient descent on the mean cosine dissimilarity between each prompt row
// and the pooled projected visual token. The step halves whenever a proposal
// would increase the loss, so the recorded trace is monotone non-increasing.
void optimize_soft_prompts(SoftPromptState& state, const TensorPtr& g_proj, int64_t iterations,
                           double step);

double alignment_loss(const TensorPtr& p_soft, const TensorPtr& g_proj);

TensorPtr build_summary_prompt(const SoftPromptState& state);
TensorPtr augment_question(const TensorPtr& summary, const TensorPtr& zt);

}  // namespace evqa

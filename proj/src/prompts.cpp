#include "prompts.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <json.hpp>

#include "tokenizer.hpp"

using ordered_json = nlohmann::ordered_json;

namespace evqa {

VocabularyIndex build_vocabulary(const std::vector<VQASample>& train_set, const ModelWeights& w,
                                 const SyntheticSpec& spec) {
  if (train_set.empty()) throw ContractError("build_vocabulary: empty train set");
  std::set<std::string> terms;
  for (const auto& s : train_set) {
    terms.insert(s.answer);
    for (const auto& o : s.scene.objects) {
      terms.insert(kColorWords[o.color]);
      terms.insert(kShapeWords[o.shape]);
    }
  }
  VocabularyIndex index;
  index.embeddings = make_tensor({static_cast<int64_t>(terms.size()), w.cfg.d_vis});
  int64_t row = 0;
  for (const auto& term : terms) {
    std::string prov;
    const Scene scene = exemplar_scene(term, spec, &prov);
    const Image img = render_image(scene, spec, /*noise_seed=*/0);
    auto pooled = pool_global(encode_image(img, w, nullptr), nullptr);
    double norm2 = 0.0;
    for (int64_t j = 0; j < w.cfg.d_vis; ++j) {
      index.embeddings->at(row, j) = pooled->data[static_cast<size_t>(j)];
      norm2 += pooled->data[static_cast<size_t>(j)] * pooled->data[static_cast<size_t>(j)];
    }
    if (norm2 == 0.0) throw NumericError("build_vocabulary: zero-norm embedding for '" + term + "'");
    index.terms.push_back(term);
    index.provenance.push_back(prov);
    ++row;
  }
  return index;
}

void save_vocabulary(const VocabularyIndex& index, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write vocabulary file '" + path + "'");
  for (int64_t i = 0; i < index.size(); ++i) {
    ordered_json row;
    row["term"] = index.terms[static_cast<size_t>(i)];
    std::vector<double> emb(index.embeddings->data.begin() + i * index.embeddings->cols(),
                            index.embeddings->data.begin() + (i + 1) * index.embeddings->cols());
    row["embedding"] = emb;
    row["provenance"] = index.provenance[static_cast<size_t>(i)];
    out << row.dump() << "\n";
  }
}

VocabularyIndex load_vocabulary(const std::string& path, int64_t expected_dim) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open vocabulary file '" + path + "'");
  std::vector<std::string> terms, provenance;
  std::vector<double> values;
  std::set<std::string> seen;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    ordered_json row;
    try {
      row = ordered_json::parse(line);
    } catch (const std::exception& e) {
      throw InputError("vocabulary line " + std::to_string(line_no) + ": " + e.what());
    }
    const std::string term = row.at("term").get<std::string>();
    if (!seen.insert(term).second)
      throw InputError("vocabulary line " + std::to_string(line_no) + ": duplicate term '" + term +
                       "'");
    const auto emb = row.at("embedding").get<std::vector<double>>();
    if (static_cast<int64_t>(emb.size()) != expected_dim)
      throw InputError("vocabulary line " + std::to_string(line_no) + ": embedding dim " +
                       std::to_string(emb.size()) + ", expected " + std::to_string(expected_dim));
    double norm2 = 0.0;
    for (double v : emb) norm2 += v * v;
    if (norm2 == 0.0)
      throw InputError("vocabulary line " + std::to_string(line_no) + ": zero-norm embedding");
    terms.push_back(term);
    provenance.push_back(row.value("provenance", std::string()));
    values.insert(values.end(), emb.begin(), emb.end());
  }
  if (terms.empty()) throw InputError("vocabulary file '" + path + "' is empty");
  VocabularyIndex index;
  index.embeddings = from_data({static_cast<int64_t>(terms.size()), expected_dim}, std::move(values));
  index.terms = std::move(terms);
  index.provenance = std::move(provenance);
  return index;
}

std::vector<Retrieved> retrieve_topk(const TensorPtr& zv, const VocabularyIndex& index, int64_t k) {
  if (k < 1 || k > index.size())
    throw ContractError("retrieve_topk: k=" + std::to_string(k) + " outside [1," +
                        std::to_string(index.size()) + "]");
  auto query = pool_global(zv, nullptr);
  std::vector<Retrieved> ranked;
  ranked.reserve(static_cast<size_t>(index.size()));
  for (int64_t i = 0; i < index.size(); ++i) {
    auto row = slice_rows(index.embeddings, i, i + 1, nullptr);
    ranked.push_back({static_cast<int>(i), cosine_similarity(query, row, nullptr)->data[0]});
  }
  std::sort(ranked.begin(), ranked.end(), [&index](const Retrieved& a, const Retrieved& b) {
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    return index.terms[static_cast<size_t>(a.index)] < index.terms[static_cast<size_t>(b.index)];
  });
  ranked.resize(static_cast<size_t>(k));
  return ranked;
}

SoftPromptState init_soft_prompts(const std::vector<std::string>& ranked_terms,
                                  const ModelWeights& w) {
  if (ranked_terms.empty()) throw ContractError("init_soft_prompts: no retrieved terms");
  const Tokenizer& tok = Tokenizer::instance();
  SoftPromptState state;
  std::vector<int> all_ids;
  for (const auto& term : ranked_terms) {
    const auto ids = tok.encode(term);
    state.spans.emplace_back(static_cast<int64_t>(all_ids.size()),
                             static_cast<int64_t>(all_ids.size() + ids.size()));
    all_ids.insert(all_ids.end(), ids.begin(), ids.end());
    state.terms.push_back(term);
  }
  // Frozen token embeddings only; positions are deliberately left out.
  auto rows = embedding_lookup(w.tok_emb, all_ids, nullptr);
  state.p_soft = clone_values(rows);
  state.p_soft->requires_grad = true;
  state.p_soft->name = "p_soft";
  return state;
}

double alignment_loss(const TensorPtr& p_soft, const TensorPtr& g_proj) {
  // Mirrors alignment_loss_graph operation by operation so that values are
  // bit-identical; the backtracking line search and the monotone-trace
  // contract rely on that.
  const int64_t n = p_soft->rows();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    auto row = slice_rows(p_soft, i, i + 1, nullptr);
    const double c = cosine_similarity(row, g_proj, nullptr)->data[0];
    acc += c * -1.0 + 1.0;
  }
  return acc * (1.0 / static_cast<double>(n));
}

namespace {

TensorPtr alignment_loss_graph(const TensorPtr& p_soft, const TensorPtr& g_proj, Tape& tape) {
  const int64_t n = p_soft->rows();
  TensorPtr acc;
  for (int64_t i = 0; i < n; ++i) {
    auto c = cosine_similarity(slice_rows(p_soft, i, i + 1, &tape), g_proj, &tape);
    auto term = add_const(scale(c, -1.0, &tape), 1.0, &tape);
    acc = acc ? add(acc, term, &tape) : term;
  }
  return scale(acc, 1.0 / static_cast<double>(n), &tape);
}

}  // namespace

void optimize_soft_prompts(SoftPromptState& state, const TensorPtr& g_proj, int64_t iterations,
                           double step) {
  if (iterations < 0) throw ContractError("optimize_soft_prompts: negative iteration count");
  auto& p = state.p_soft;
  for (int64_t i = 0; i < p->rows(); ++i) {
    double norm2 = 0.0;
    for (int64_t j = 0; j < p->cols(); ++j) norm2 += p->at(i, j) * p->at(i, j);
    if (norm2 == 0.0)
      throw NumericError("optimize_soft_prompts: zero-norm prompt row " + std::to_string(i));
  }
  state.trace.clear();
  state.trace.push_back(alignment_loss(p, g_proj));

  for (int64_t it = 0; it < iterations; ++it) {
    double s = step;  // fresh step each iteration; backtracking only shrinks within one
    p->zero_grad();
    Tape tape;
    auto loss = alignment_loss_graph(p, g_proj, tape);
    tape.backward(loss);
    const double current = loss->data[0];

    const std::vector<double> saved = p->data;
    double accepted = current;
    bool moved = false;
    for (int halvings = 0; halvings < 80; ++halvings) {
      for (int64_t i = 0; i < p->size(); ++i)
        p->data[i] = saved[static_cast<size_t>(i)] - s * p->grad[i];
      const double trial = alignment_loss(p, g_proj);
      if (trial <= current) {
        accepted = trial;
        moved = true;
        break;
      }
      s *= 0.5;
    }
    if (!moved) {  // every proposal increased the loss; stay put (only at a critical point)
      p->data = saved;
      accepted = current;
    }
    state.trace.push_back(accepted);
  }
  state.optimized = true;
}

TensorPtr build_summary_prompt(const SoftPromptState& state) {
  if (!state.optimized)
    throw ContractError("build_summary_prompt: optimization has not been run");
  const auto [s0, s1] = state.spans.front();
  auto span = slice_rows(state.p_soft, s0, s1, nullptr);
  auto mean = mean_rows(span, nullptr);
  auto out = make_tensor({1, mean->size()});
  out->data = mean->data;
  return out;
}

TensorPtr augment_question(const TensorPtr& summary, const TensorPtr& zt) {
  if (summary->rows() != 1 || summary->cols() != zt->cols())
    throw ShapeError("augment_question: summary " + shape_str(summary->shape) +
                     " incompatible with question rows " + shape_str(zt->shape));
  return concat_rows({summary, zt}, nullptr);
}

}  // namespace evqa

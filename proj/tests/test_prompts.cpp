#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "prompts.hpp"
#include "tokenizer.hpp"

using namespace evqa;
namespace fs = std::filesystem;

namespace {

ModelConfig toy_config() {
  ModelConfig cfg;
  cfg.d_vis = 16;
  cfg.d_model = 32;
  cfg.n_layers = 2;
  cfg.n_heads = 4;
  cfg.n_visual = 4;
  cfg.top_layers = 1;
  cfg.n_adapt = 4;
  cfg.n_prefix = 4;
  cfg.max_seq = 48;
  cfg.lm_ffn = 64;
  cfg.vis_ffn = 32;
  cfg.vis_heads = 2;
  cfg.image_px = 16;
  cfg.patch_px = 8;
  cfg.channels = 3;
  cfg.vocab = Tokenizer::instance().size();
  return cfg;
}

SyntheticSpec toy_spec() {
  SyntheticSpec s;
  s.grid = 2;
  s.image_px = 16;
  s.patch_px = 8;
  s.train_images = 10;
  s.val_images = 0;
  s.test_images = 2;
  return s;
}

VocabularyIndex random_index(int64_t m, int64_t d, uint64_t seed) {
  VocabularyIndex index;
  Rng rng(seed);
  index.embeddings = randn({m, d}, rng, 1.0);
  for (int64_t i = 0; i < m; ++i) {
    index.terms.push_back("term" + std::to_string(100 + i));
    index.provenance.push_back("synthetic");
  }
  return index;
}

std::vector<int> brute_force_rank(const TensorPtr& query, const VocabularyIndex& index) {
  std::vector<std::pair<double, std::string>> scored;
  std::vector<int> order(static_cast<size_t>(index.size()));
  for (int64_t i = 0; i < index.size(); ++i) {
    double dot = 0.0, nq = 0.0, ne = 0.0;
    for (int64_t j = 0; j < index.embeddings->cols(); ++j) {
      dot += query->data[static_cast<size_t>(j)] * index.embeddings->at(i, j);
      nq += query->data[static_cast<size_t>(j)] * query->data[static_cast<size_t>(j)];
      ne += index.embeddings->at(i, j) * index.embeddings->at(i, j);
    }
    scored.emplace_back(dot / (std::sqrt(nq) * std::sqrt(ne)),
                        index.terms[static_cast<size_t>(i)]);
    order[static_cast<size_t>(i)] = static_cast<int>(i);
  }
  std::sort(order.begin(), order.end(), [&scored](int a, int b) {
    if (scored[static_cast<size_t>(a)].first != scored[static_cast<size_t>(b)].first)
      return scored[static_cast<size_t>(a)].first > scored[static_cast<size_t>(b)].first;
    return scored[static_cast<size_t>(a)].second < scored[static_cast<size_t>(b)].second;
  });
  return order;
}

}  // namespace

TEST_CASE("build_vocabulary: uniqueness, provenance, exemplar consistency") {
  ModelConfig cfg = toy_config();
  Rng rng(1);
  ModelWeights w = init_weights(cfg, rng);
  SyntheticSpec spec = toy_spec();
  const Corpus corpus = generate_dataset(spec);
  std::vector<VQASample> train;
  for (const auto& s : corpus.samples)
    if (s.split == "train") train.push_back(s);

  const VocabularyIndex index = build_vocabulary(train, w, spec);
  std::set<std::string> unique(index.terms.begin(), index.terms.end());
  CHECK(unique.size() == index.terms.size());
  CHECK(index.size() >= 4);

  // Every answer string of the train set is a term.
  for (const auto& s : train) CHECK(unique.count(s.answer) == 1);

  // The exemplar embedding is exactly encode+pool of the canonical rendering.
  for (int64_t i = 0; i < index.size(); ++i) {
    const Scene sc = exemplar_scene(index.terms[static_cast<size_t>(i)], spec, nullptr);
    auto pooled = pool_global(encode_image(render_image(sc, spec, 0), w, nullptr), nullptr);
    for (int64_t j = 0; j < cfg.d_vis; ++j)
      CHECK(index.embeddings->at(i, j) == pooled->data[static_cast<size_t>(j)]);
  }
}

TEST_CASE("duplicate answers collapse to one term") {
  ModelConfig cfg = toy_config();
  Rng rng(2);
  ModelWeights w = init_weights(cfg, rng);
  SyntheticSpec spec = toy_spec();
  const Corpus corpus = generate_dataset(spec);
  std::vector<VQASample> train;
  for (const auto& s : corpus.samples)
    if (s.split == "train" && s.answer == "yes") train.push_back(s);
  REQUIRE(train.size() >= 2);
  const VocabularyIndex index = build_vocabulary(train, w, spec);
  CHECK(std::count(index.terms.begin(), index.terms.end(), "yes") == 1);
}

TEST_CASE("retrieve_topk: self-retrieval, permutation, brute-force agreement") {
  VocabularyIndex index = random_index(20, 8, 3);
  // Put the pooled query itself into the index.
  Rng rng(4);
  auto zv = randn({3, 8}, rng, 1.0);
  auto query = pool_global(zv, nullptr);
  for (int64_t j = 0; j < 8; ++j) index.embeddings->at(5, j) = query->data[static_cast<size_t>(j)];

  const auto top = retrieve_topk(zv, index, 3);
  CHECK(index.terms[static_cast<size_t>(top[0].index)] == index.terms[5]);
  CHECK(top[0].similarity == doctest::Approx(1.0).epsilon(1e-12));

  const auto all = retrieve_topk(zv, index, index.size());
  std::set<int> seen;
  for (const auto& r : all) seen.insert(r.index);
  CHECK(static_cast<int64_t>(seen.size()) == index.size());

  const auto expect = brute_force_rank(query, index);
  const auto got5 = retrieve_topk(zv, index, 5);
  for (int i = 0; i < 5; ++i) CHECK(got5[static_cast<size_t>(i)].index == expect[static_cast<size_t>(i)]);

  CHECK_THROWS_AS(retrieve_topk(zv, index, 21), ContractError);
}

TEST_CASE("retrieval equals brute force across many random queries and k values") {
  const VocabularyIndex index = random_index(20, 8, 7);
  for (uint64_t seed = 0; seed < 40; ++seed) {
    Rng rng(seed);
    auto zv = randn({4, 8}, rng, 1.0);
    const auto expect = brute_force_rank(pool_global(zv, nullptr), index);
    for (int64_t k : {1, 5, 10}) {
      const auto got = retrieve_topk(zv, index, k);
      for (int64_t i = 0; i < k; ++i)
        CHECK(got[static_cast<size_t>(i)].index == expect[static_cast<size_t>(i)]);
    }
  }
}

TEST_CASE("init_soft_prompts: spans partition, rows equal frozen embeddings") {
  ModelConfig cfg = toy_config();
  Rng rng(5);
  ModelWeights w = init_weights(cfg, rng);
  const Tokenizer& tok = Tokenizer::instance();

  const auto single = init_soft_prompts({"yes"}, w);
  CHECK(single.p_soft->rows() == 1);
  const int yes_id = tok.encode("yes")[0];
  for (int64_t j = 0; j < cfg.d_model; ++j)
    CHECK(single.p_soft->at(0, j) == w.tok_emb->at(yes_id, j));

  const std::vector<std::string> terms = {"shift left", "yes", "red"};
  const auto st = init_soft_prompts(terms, w);
  CHECK(st.spans.size() == 3);
  int64_t expect_start = 0;
  for (size_t i = 0; i < st.spans.size(); ++i) {
    CHECK(st.spans[i].first == expect_start);
    const auto ids = tok.encode(terms[i]);
    CHECK(st.spans[i].second - st.spans[i].first == static_cast<int64_t>(ids.size()));
    for (size_t t = 0; t < ids.size(); ++t)
      for (int64_t j = 0; j < cfg.d_model; ++j)
        CHECK(st.p_soft->at(st.spans[i].first + static_cast<int64_t>(t), j) ==
              w.tok_emb->at(ids[t], j));
    expect_start = st.spans[i].second;
  }
  CHECK(expect_start == st.p_soft->rows());
}

TEST_CASE("optimize_soft_prompts: T=0, exact optimum, monotone trace") {
  ModelConfig cfg = toy_config();
  Rng rng(6);
  ModelWeights w = init_weights(cfg, rng);
  auto g = randn({cfg.d_model}, rng, 1.0);

  auto st0 = init_soft_prompts({"yes", "no"}, w);
  const auto before = st0.p_soft->data;
  optimize_soft_prompts(st0, g, 0, 0.01);
  CHECK(st0.p_soft->data == before);
  CHECK(st0.trace.size() == 1);

  // A single row already aligned with the target stays at loss zero.
  SoftPromptState aligned;
  aligned.terms = {"yes"};
  aligned.spans = {{0, 1}};
  aligned.p_soft = make_tensor({1, cfg.d_model}, true);
  for (int64_t j = 0; j < cfg.d_model; ++j)
    aligned.p_soft->at(0, j) = 2.5 * g->data[static_cast<size_t>(j)];
  optimize_soft_prompts(aligned, g, 5, 0.01);
  for (double v : aligned.trace) CHECK(v == doctest::Approx(0.0).epsilon(1e-12));

  // Random initialization: trace monotone, final below initial, cosine -> 1.
  auto st = init_soft_prompts({"shift left", "centered", "red"}, w);
  optimize_soft_prompts(st, g, 100, 0.01);
  REQUIRE(st.trace.size() == 101);
  for (size_t i = 1; i < st.trace.size(); ++i) CHECK(st.trace[i] <= st.trace[i - 1]);
  CHECK(st.trace.back() < st.trace.front());

  // The single-row optimum is any positive multiple of the target, so with a
  // generous budget the cosine approaches 1 (backtracking tames the step).
  SoftPromptState one;
  one.terms = {"yes"};
  one.spans = {{0, 1}};
  Rng r2(9);
  one.p_soft = randn({1, cfg.d_model}, r2, 1.0, true);
  auto row0 = clone_values(one.p_soft);
  const double cos_before = cosine_similarity(row0, g, nullptr)->data[0];
  optimize_soft_prompts(one, g, 1500, 0.5);
  auto row = slice_rows(one.p_soft, 0, 1, nullptr);
  CHECK(cosine_similarity(row, g, nullptr)->data[0] > 0.99);
  CHECK(cosine_similarity(row, g, nullptr)->data[0] > cos_before);
}

TEST_CASE("optimize_soft_prompts leaves model weights untouched") {
  ModelConfig cfg = toy_config();
  Rng rng(7);
  ModelWeights w = init_weights(cfg, rng);
  PromptBank bank = init_prompt_bank(cfg, rng);
  set_lm_trainable(w, false);
  const uint64_t frozen_before = frozen_checksum(w, bank);
  const auto tok_before = w.tok_emb->data;

  auto g = randn({cfg.d_model}, rng, 1.0);
  for (int rep = 0; rep < 3; ++rep) {
    auto st = init_soft_prompts({"yes", "no", "shift left"}, w);
    optimize_soft_prompts(st, g, 50, 0.01);
  }
  CHECK(frozen_checksum(w, bank) == frozen_before);
  CHECK(w.tok_emb->data == tok_before);
}

TEST_CASE("optimize_soft_prompts rejects a zero-norm row") {
  ModelConfig cfg = toy_config();
  SoftPromptState st;
  st.terms = {"x"};
  st.spans = {{0, 1}};
  st.p_soft = make_tensor({1, cfg.d_model}, true);
  Rng rng(8);
  auto g = randn({cfg.d_model}, rng, 1.0);
  CHECK_THROWS_AS(optimize_soft_prompts(st, g, 1, 0.01), NumericError);
}

TEST_CASE("build_summary_prompt: verbatim row, mean idempotence, scalar-loop mean") {
  ModelConfig cfg = toy_config();
  Rng rng(9);
  ModelWeights w = init_weights(cfg, rng);
  auto g = randn({cfg.d_model}, rng, 1.0);

  auto st = init_soft_prompts({"yes", "no"}, w);
  CHECK_THROWS_AS(build_summary_prompt(st), ContractError);  // before optimization
  optimize_soft_prompts(st, g, 0, 0.01);
  auto summary = build_summary_prompt(st);
  CHECK(summary->rows() == 1);
  for (int64_t j = 0; j < cfg.d_model; ++j) CHECK(summary->at(0, j) == st.p_soft->at(0, j));

  auto st2 = init_soft_prompts({"shift left", "no"}, w);
  // Force the two rows of the leading term equal; the mean must reproduce them.
  for (int64_t j = 0; j < cfg.d_model; ++j) st2.p_soft->at(1, j) = st2.p_soft->at(0, j);
  optimize_soft_prompts(st2, g, 0, 0.01);
  auto s2 = build_summary_prompt(st2);
  for (int64_t j = 0; j < cfg.d_model; ++j)
    CHECK(s2->at(0, j) == doctest::Approx(st2.p_soft->at(0, j)).epsilon(1e-12));

  auto st3 = init_soft_prompts({"shift left", "yes"}, w);
  optimize_soft_prompts(st3, g, 3, 0.01);
  auto s3 = build_summary_prompt(st3);
  for (int64_t j = 0; j < cfg.d_model; ++j) {
    const double expect = (st3.p_soft->at(0, j) + st3.p_soft->at(1, j)) / 2.0;
    CHECK(s3->at(0, j) == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("augment_question: edge and content checks") {
  ModelConfig cfg = toy_config();
  Rng rng(10);
  auto summary = randn({1, cfg.d_model}, rng, 1.0);
  auto zt = randn({5, cfg.d_model}, rng, 1.0);
  auto out = augment_question(summary, zt);
  CHECK(out->rows() == 6);
  for (int64_t j = 0; j < cfg.d_model; ++j) CHECK(out->at(0, j) == summary->at(0, j));
  for (int64_t i = 0; i < 5; ++i)
    for (int64_t j = 0; j < cfg.d_model; ++j) CHECK(out->at(i + 1, j) == zt->at(i, j));

  CHECK_THROWS_AS(augment_question(summary, randn({2, cfg.d_model - 1}, rng, 1.0)), ShapeError);
}

TEST_CASE("vocabulary JSONL round trip with validation") {
  ModelConfig cfg = toy_config();
  Rng rng(11);
  ModelWeights w = init_weights(cfg, rng);
  SyntheticSpec spec = toy_spec();
  const Corpus corpus = generate_dataset(spec);
  std::vector<VQASample> train;
  for (const auto& s : corpus.samples)
    if (s.split == "train") train.push_back(s);
  const VocabularyIndex index = build_vocabulary(train, w, spec);

  fs::remove_all("tmp_vocab");
  fs::create_directories("tmp_vocab");
  save_vocabulary(index, "tmp_vocab/vocab.jsonl");
  const VocabularyIndex loaded = load_vocabulary("tmp_vocab/vocab.jsonl", cfg.d_vis);
  REQUIRE(loaded.size() == index.size());
  CHECK(loaded.terms == index.terms);
  CHECK(loaded.embeddings->data == index.embeddings->data);

  CHECK_THROWS_AS(load_vocabulary("tmp_vocab/vocab.jsonl", cfg.d_vis + 1), InputError);
  CHECK_THROWS_AS(load_vocabulary("tmp_vocab/missing.jsonl", cfg.d_vis), InputError);
  fs::remove_all("tmp_vocab");
}

TEST_CASE("with T=0 the summary equals the init slice end to end") {
  ModelConfig cfg = toy_config();
  Rng rng(12);
  ModelWeights w = init_weights(cfg, rng);
  auto g = randn({cfg.d_model}, rng, 1.0);
  const std::vector<std::string> terms = {"centered", "yes"};

  auto a = init_soft_prompts(terms, w);
  optimize_soft_prompts(a, g, 0, 0.01);
  auto sa = build_summary_prompt(a);

  auto b = init_soft_prompts(terms, w);
  auto init_slice = slice_rows(b.p_soft, b.spans[0].first, b.spans[0].second, nullptr);
  auto expect = mean_rows(init_slice, nullptr);
  for (int64_t j = 0; j < cfg.d_model; ++j)
    CHECK(sa->at(0, j) == expect->data[static_cast<size_t>(j)]);
}

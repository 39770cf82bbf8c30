#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "tensor.hpp"

using namespace evqa;

namespace {

TensorPtr tensor2(std::vector<double> v, int64_t m, int64_t n, bool rg = false) {
  return from_data({m, n}, std::move(v), rg);
}

}  // namespace

TEST_CASE("matmul identity and hand arithmetic") {
  auto eye = tensor2({1, 0, 0, 0, 1, 0, 0, 0, 1}, 3, 3);
  Rng rng(11);
  auto x = randn({3, 4}, rng, 1.0);
  auto y = matmul(eye, x, nullptr);
  for (int64_t i = 0; i < x->size(); ++i) CHECK(y->data[i] == x->data[i]);

  auto a = tensor2({1, 2, 3, 4}, 2, 2);
  auto b = tensor2({1, 1}, 2, 1);
  auto c = matmul(a, b, nullptr);
  CHECK(c->data[0] == 3.0);
  CHECK(c->data[1] == 7.0);
}

TEST_CASE("matmul shape error names both shapes") {
  auto a = tensor2({1, 2, 3, 4}, 2, 2);
  auto b = tensor2({1, 2, 3}, 3, 1);
  CHECK_THROWS_WITH_AS(matmul(a, b, nullptr),
                       doctest::Contains("[2x2]"), ShapeError);
}

TEST_CASE("matmul gradient matches finite differences") {
  Rng rng(42);
  auto a = randn({5, 4}, rng, 1.0, true);
  auto b = randn({4, 3}, rng, 1.0);
  const double err =
      finite_diff_check([&](Tape& t) { return sum(matmul(a, b, &t), &t); }, a, 1e-5);
  CHECK(err < 1e-6);
}

TEST_CASE("softmax rows: symmetry, overflow safety, row sums") {
  auto x = tensor2({0, 0, 0}, 1, 3);
  auto y = softmax_rows(x, nullptr);
  for (double v : y->data) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

  auto big = tensor2({1000, 0}, 1, 2);
  auto yb = softmax_rows(big, nullptr);
  CHECK(yb->data[0] == doctest::Approx(1.0));
  CHECK(yb->data[1] >= 0.0);
  CHECK(std::isfinite(yb->data[0]));

  Rng rng(3);
  for (int seed = 0; seed < 20; ++seed) {
    Rng r(static_cast<uint64_t>(seed));
    auto z = randn({4, 6}, r, 3.0);
    auto s = softmax_rows(z, nullptr);
    for (int64_t i = 0; i < 4; ++i) {
      double acc = 0.0;
      for (int64_t j = 0; j < 6; ++j) acc += s->at(i, j);
      CHECK(std::fabs(acc - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("softmax rejects NaN input") {
  auto x = tensor2({0.0, std::nan("")}, 1, 2);
  CHECK_THROWS_AS(softmax_rows(x, nullptr), NumericError);
}

TEST_CASE("softmax backward matches finite differences") {
  Rng rng(7);
  auto x = randn({4, 6}, rng, 1.0, true);
  auto probe = randn({4, 6}, rng, 1.0);
  const double err = finite_diff_check(
      [&](Tape& t) { return sum(mul(softmax_rows(x, &t), probe, &t), &t); }, x, 1e-5);
  CHECK(err < 1e-6);
}

TEST_CASE("layer_norm identities") {
  auto gain = from_data({4}, {1, 1, 1, 1});
  auto bias = from_data({4}, {0, 0, 0, 0});
  auto x = tensor2({5, 5, 5, 5}, 1, 4);
  auto y = layer_norm(x, gain, bias, 1e-5, nullptr);
  for (double v : y->data) CHECK(v == doctest::Approx(0.0).epsilon(1e-12));

  auto g2 = from_data({2}, {1, 1});
  auto b2 = from_data({2}, {0, 0});
  auto x2 = tensor2({1, -1}, 1, 2);
  auto y2 = layer_norm(x2, g2, b2, 1e-12, nullptr);
  CHECK(y2->data[0] == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(y2->data[1] == doctest::Approx(-1.0).epsilon(1e-9));
}

TEST_CASE("layer_norm gradient vs finite differences") {
  Rng rng(5);
  auto x = randn({3, 8}, rng, 1.0, true);
  auto g = randn({8}, rng, 0.5, true);
  auto b = randn({8}, rng, 0.5, true);
  auto probe = randn({3, 8}, rng, 1.0);
  auto f = [&](Tape& t) { return sum(mul(layer_norm(x, g, b, 1e-5, &t), probe, &t), &t); };
  CHECK(finite_diff_check(f, x, 1e-5) < 1e-5);
  CHECK(finite_diff_check(f, g, 1e-5) < 1e-5);
  CHECK(finite_diff_check(f, b, 1e-5) < 1e-5);
}

TEST_CASE("embedding lookup gathers rows and scatter-adds gradients") {
  Rng rng(9);
  auto table = randn({5, 3}, rng, 1.0, true);
  auto one = embedding_lookup(table, {0}, nullptr);
  for (int64_t j = 0; j < 3; ++j) CHECK(one->data[j] == table->at(0, j));

  Tape tape;
  table->zero_grad();
  auto two = embedding_lookup(table, {2, 2}, &tape);
  auto loss = sum(two, &tape);
  tape.backward(loss);
  for (int64_t j = 0; j < 3; ++j) CHECK(table->grad[2 * 3 + j] == 2.0);

  auto rows = embedding_lookup(table, {1, 3, 0}, nullptr);
  for (int64_t i = 0; i < 3; ++i) {
    const int src[] = {1, 3, 0};
    for (int64_t j = 0; j < 3; ++j) CHECK(rows->at(i, j) == table->at(src[i], j));
  }
}

TEST_CASE("embedding lookup rejects out-of-range ids") {
  Rng rng(1);
  auto table = randn({4, 2}, rng, 1.0);
  CHECK_THROWS_WITH_AS(embedding_lookup(table, {4}, nullptr), doctest::Contains("4"), IndexError);
}

TEST_CASE("cross entropy: certain predictor, uniform logits, brute force") {
  // Certainty: a huge margin on the target makes the loss vanish.
  auto logits = tensor2({100, 0, 0, 0, 0, 100, 0, 0}, 2, 4);
  auto loss = cross_entropy_logits(logits, {0, 1}, {1, 1}, nullptr);
  CHECK(loss->data[0] == doctest::Approx(0.0).epsilon(1e-12));

  auto uniform = tensor2({0, 0, 0, 0}, 1, 4);
  auto lu = cross_entropy_logits(uniform, {2}, {1}, nullptr);
  CHECK(lu->data[0] == doctest::Approx(std::log(4.0)).epsilon(1e-12));

  Rng rng(13);
  auto z = randn({3, 5}, rng, 1.0);
  const std::vector<int> targets = {4, 2, 0};
  const std::vector<uint8_t> mask = {1, 0, 1};
  auto l = cross_entropy_logits(z, targets, mask, nullptr);
  double expect = 0.0;
  for (int64_t i = 0; i < 3; ++i) {
    if (!mask[static_cast<size_t>(i)]) continue;
    double denom = 0.0;
    for (int64_t j = 0; j < 5; ++j) denom += std::exp(z->at(i, j));
    expect -= std::log(std::exp(z->at(i, targets[static_cast<size_t>(i)])) / denom);
  }
  CHECK(l->data[0] == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("cross entropy rejects an all-false mask") {
  auto logits = tensor2({0, 0}, 1, 2);
  CHECK_THROWS_AS(cross_entropy_logits(logits, {0}, {0}, nullptr), ContractError);
}

TEST_CASE("cosine similarity basics") {
  auto v = from_data({3}, {0.3, -1.2, 0.5});
  CHECK(cosine_similarity(v, v, nullptr)->data[0] == doctest::Approx(1.0).epsilon(1e-12));

  auto e1 = from_data({2}, {1, 0});
  auto e2 = from_data({2}, {0, 1});
  CHECK(cosine_similarity(e1, e2, nullptr)->data[0] == doctest::Approx(0.0));

  auto a = from_data({2}, {1, 1});
  CHECK(cosine_similarity(a, e1, nullptr)->data[0] ==
        doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));

  auto zero = from_data({2}, {0, 0});
  CHECK_THROWS_AS(cosine_similarity(zero, e1, nullptr), NumericError);
}

TEST_CASE("backward: sum gives ones, sum of squares gives 2x") {
  Rng rng(21);
  auto x = randn({3, 3}, rng, 1.0, true);
  {
    Tape t;
    x->zero_grad();
    t.backward(sum(x, &t));
    for (double g : x->grad) CHECK(g == 1.0);
  }
  {
    Tape t;
    x->zero_grad();
    t.backward(sum(mul(x, x, &t), &t));
    for (int64_t i = 0; i < x->size(); ++i)
      CHECK(x->grad[i] == doctest::Approx(2.0 * x->data[i]).epsilon(1e-12));
  }
}

TEST_CASE("backward rejects non-scalar loss") {
  Rng rng(2);
  auto x = randn({2, 2}, rng, 1.0, true);
  Tape t;
  auto y = add(x, x, &t);
  CHECK_THROWS_AS(t.backward(y), ContractError);
}

TEST_CASE("backward is deterministic bit for bit") {
  auto run = [] {
    Rng rng(77);
    auto x = randn({6, 6}, rng, 1.0, true);
    auto w = randn({6, 6}, rng, 1.0, true);
    Tape t;
    auto y = softmax_rows(matmul(x, w, &t), &t);
    auto loss = sum(mul(y, y, &t), &t);
    t.backward(loss);
    std::vector<double> out = x->grad;
    out.insert(out.end(), w->grad.begin(), w->grad.end());
    return out;
  };
  const auto a = run(), b = run();
  REQUIRE(a.size() == b.size());
  CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

TEST_CASE("gradient accumulation is linear") {
  Rng rng(31);
  auto x = randn({4, 4}, rng, 1.0, true);

  x->zero_grad();
  {
    Tape t;
    t.backward(sum(mul(x, x, &t), &t));
  }
  {
    Tape t;
    t.backward(sum(x, &t));
  }
  const std::vector<double> accumulated = x->grad;

  x->zero_grad();
  {
    Tape t;
    auto l = add(sum(mul(x, x, &t), &t), sum(x, &t), &t);
    t.backward(l);
  }
  for (int64_t i = 0; i < x->size(); ++i)
    CHECK(std::fabs(accumulated[static_cast<size_t>(i)] - x->grad[i]) < 1e-12);
}

TEST_CASE("finite_diff_check reference behavior") {
  Rng rng(8);
  auto x = randn({5}, rng, 1.0, true);
  CHECK(finite_diff_check([&](Tape& t) { return sum(x, &t); }, x, 1e-5) < 1e-10);
  CHECK(finite_diff_check([&](Tape& t) { return sum(mul(x, x, &t), &t); }, x, 1e-5) < 1e-8);
}

TEST_CASE("finite_diff_check catches a wrong backward rule") {
  // A deliberately sign-flipped rule recorded on the tape must be flagged.
  Rng rng(4);
  auto x = randn({4}, rng, 1.0, true);
  auto bad_square = [&](Tape& t) {
    auto out = make_tensor(x->shape);
    for (int64_t i = 0; i < x->size(); ++i) out->data[i] = x->data[i] * x->data[i];
    out->requires_grad = true;
    out->ensure_grad();
    t.push([x2 = x, out] {
      x2->ensure_grad();
      for (int64_t i = 0; i < x2->size(); ++i)
        x2->grad[i] -= 2.0 * x2->data[i] * out->grad[i];  // wrong sign
    });
    return sum(out, &t);
  };
  CHECK(finite_diff_check(bad_square, x, 1e-5) > 1e-2);
}

TEST_CASE("every differentiable op passes the finite-difference oracle across seeds") {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    auto x = randn({3, 6}, rng, 1.0, true);
    auto w = randn({4, 6}, rng, 1.0, true);
    auto g = randn({4}, rng, 0.3, true);
    auto b = randn({4}, rng, 0.3, true);
    auto probe = randn({3, 4}, rng, 1.0);
    auto f = [&](Tape& t) {
      auto h = linear(x, w, &t);
      h = layer_norm(h, g, b, 1e-5, &t);
      h = gelu(h, &t);
      h = softmax_rows(h, &t);
      return sum(mul(h, probe, &t), &t);
    };
    CHECK(finite_diff_check(f, x, 1e-5) < 1e-4);
    CHECK(finite_diff_check(f, w, 1e-5) < 1e-4);
  }
}

TEST_CASE("concat and slice round trips") {
  Rng rng(15);
  auto a = randn({2, 3}, rng, 1.0);
  auto b = randn({4, 3}, rng, 1.0);
  auto cat = concat_rows({a, b}, nullptr);
  auto back = slice_rows(cat, 2, 6, nullptr);
  for (int64_t i = 0; i < b->size(); ++i) CHECK(back->data[i] == b->data[i]);

  auto c = randn({3, 2}, rng, 1.0);
  auto d = randn({3, 5}, rng, 1.0);
  auto cc = concat_cols({c, d}, nullptr);
  auto dd = slice_cols(cc, 2, 7, nullptr);
  for (int64_t i = 0; i < d->size(); ++i) CHECK(dd->data[i] == d->data[i]);
}

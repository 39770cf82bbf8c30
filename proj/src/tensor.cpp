#include "tensor.hpp"

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <limits>
#include <sstream>

namespace evqa {

std::string shape_str(const std::vector<int64_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << "]";
  return os.str();
}

int64_t shape_numel(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t d : shape) {
    if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

TensorPtr make_tensor(std::vector<int64_t> shape, bool requires_grad, std::string name) {
  auto t = std::make_shared<Tensor>();
  t->data.assign(static_cast<size_t>(shape_numel(shape)), 0.0);
  t->shape = std::move(shape);
  t->requires_grad = requires_grad;
  t->name = std::move(name);
  return t;
}

TensorPtr make_scalar(double v, bool requires_grad) {
  auto t = make_tensor({1}, requires_grad);
  t->data[0] = v;
  return t;
}

TensorPtr from_data(std::vector<int64_t> shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != static_cast<int64_t>(values.size()))
    throw ShapeError("value count " + std::to_string(values.size()) + " does not fill shape " +
                     shape_str(shape));
  auto t = std::make_shared<Tensor>();
  t->shape = std::move(shape);
  t->data = std::move(values);
  t->requires_grad = requires_grad;
  return t;
}

TensorPtr randn(std::vector<int64_t> shape, Rng& rng, double stddev, bool requires_grad,
                std::string name) {
  auto t = make_tensor(std::move(shape), requires_grad, std::move(name));
  for (auto& v : t->data) v = rng.normal() * stddev;
  return t;
}

TensorPtr clone_values(const TensorPtr& src) {
  auto t = std::make_shared<Tensor>();
  t->shape = src->shape;
  t->data = src->data;
  t->requires_grad = src->requires_grad;
  t->name = src->name;
  return t;
}

void Tape::backward(const TensorPtr& loss) {
  if (loss->size() != 1)
    throw ContractError("backward requires a scalar loss, got shape " + shape_str(loss->shape));
  loss->ensure_grad();
  loss->grad[0] += 1.0;
  for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
}

namespace {

bool wants_grad(Tape* tape, std::initializer_list<const TensorPtr*> inputs) {
  if (!tape) return false;
  for (const TensorPtr* t : inputs)
    if ((*t)->requires_grad) return true;
  return false;
}

void check_same_shape(const TensorPtr& a, const TensorPtr& b, const char* op) {
  if (a->shape != b->shape)
    throw ShapeError(std::string(op) + ": shapes " + shape_str(a->shape) + " and " +
                     shape_str(b->shape) + " differ");
}

// C[m x n] += A[m x k] . B[k x n]
void k_nn(double* c, const double* a, const double* b, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (int64_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + p * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m x n] += A[m x k] . B[n x k]^T
void k_nt(double* c, const double* a, const double* b, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (int64_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double acc = 0.0;
      for (int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

// C[k x n] += A[m x k]^T . B[m x n]
void k_tn(double* c, const double* a, const double* b, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* brow = b + i * n;
    for (int64_t p = 0; p < k; ++p) {
      const double av = arow[p];
      double* crow = c + p * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// Collapses leading dims; the last dim is the normalized/softmaxed axis.
std::pair<int64_t, int64_t> as_rows(const TensorPtr& x) {
  if (x->shape.empty()) throw ShapeError("rank-0 tensor");
  const int64_t n = x->shape.back();
  return {x->size() / n, n};
}

}  // namespace

TensorPtr add(const TensorPtr& a, const TensorPtr& b, Tape* tape) {
  check_same_shape(a, b, "add");
  auto out = make_tensor(a->shape);
  for (int64_t i = 0; i < a->size(); ++i) out->data[i] = a->data[i] + b->data[i];
  if (wants_grad(tape, {&a, &b})) {
    out->requires_grad = true;
    tape->push([a, b, out] {
      if (a->requires_grad) {
        a->ensure_grad();
        for (int64_t i = 0; i < a->size(); ++i) a->grad[i] += out->grad[i];
      }
      if (b->requires_grad) {
        b->ensure_grad();
        for (int64_t i = 0; i < b->size(); ++i) b->grad[i] += out->grad[i];
      }
    });
    out->ensure_grad();
  }
  return out;
}

TensorPtr add_const(const TensorPtr& a, double c, Tape* tape) {
  auto out = make_tensor(a->shape);
  for (int64_t i = 0; i < a->size(); ++i) out->data[i] = a->data[i] + c;
  if (wants_grad(tape, {&a})) {
    out->requires_grad = true;
    tape->push([a, out] {
      a->ensure_grad();
      for (int64_t i = 0; i < a->size(); ++i) a->grad[i] += out->grad[i];
    });
    out->ensure_grad();
  }
  return out;
}

TensorPtr mul(const TensorPtr& a, const TensorPtr& b, Tape* tape) {
  check_same_shape(a, b, "mul");
  auto out = make_tensor(a->shape);
  for (int64_t i = 0; i < a->size(); ++i) out->data[i] = a->data[i] * b->data[i];
  if (wants_grad(tape, {&a, &b})) {
    out->requires_grad = true;
    tape->push([a, b, out] {
      if (a->requires_grad) {
        a->ensure_grad();
        for (int64_t i = 0; i < a->size(); ++i) a->grad[i] += out->grad[i] * b->data[i];
      }
      if (b->requires_grad) {
        b->ensure_grad();
        for (int64_t i = 0; i < b->size(); ++i) b->grad[i] += out->grad[i] * a->data[i];
      }
    });
    out->ensure_grad();
  }
  return out;
}

TensorPtr scale(const TensorPtr& a, double c, Tape* tape) {
  auto out = make_tensor(a->shape);
  for (int64_t i = 0; i < a->size(); ++i) out->data[i] = a->data[i] * c;
  if (wants_grad(tape, {&a})) {
    out->requires_grad = true;
    tape->push([a, out, c] {
      a->ensure_grad();
      for (int64_t i = 0; i < a->size(); ++i) a->grad[i] += out->grad[i] * c;
    });
    out->ensure_grad();
  }
  return out;
}

TensorPtr mul_scalar(const TensorPtr& x, const TensorPtr& s, Tape* tape) {
  if (s->size() != 1) throw ShapeError("mul_scalar: scale tensor has shape " + shape_str(s->shape));
  auto out = make_tensor(x->shape);
  const double sv = s->data[0];
  for (int64_t i = 0; i < x->size(); ++i) out->data[i] = x->data[i] * sv;
  if (wants_grad(tape, {&x, &s})) {
    out->requires_grad = true;
    tape->push([x, s, out] {
      if (x->requires_grad) {
        x->ensure_grad();
        const double sv = s->data[0];
        for (int64_t i = 0; i < x->size(); ++i) x->grad[i] += out->grad[i] * sv;
      }
      if (s->requires_grad) {
        s->ensure_grad();
        double acc = 0.0;
        for (int64_t i = 0; i < x->size(); ++i) acc += out->grad[i] * x->data[i];
        s->grad[0] += acc;
      }
    });
    out->ensure_grad();
  }
  return out;
}

TensorPtr add_rowvec(const TensorPtr& x, const TensorPtr& v, Tape* tape) {
  auto [m, n] = as_rows(x);
  if (v->size() != n)
    throw ShapeError("add_rowvec: vector " + shape_str(v->shape) + " does not match row width " +
                     std::to_string(n));
  auto out = make_tensor(x->shape);
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) out->data[i * n + j] = x->data[i * n + j] + v->data[j];
  if (wants_grad(tape, {&x, &v})) {
    out->requires_grad = true;
    tape->push([x, v, out, m, n] {
      if (x->requires_grad) {
        x->ensure_grad();
        for (int64_t i = 0; i < x->size(); ++i) x->grad[i] += out->grad[i];
      }
      if (v->requires_grad) {
        v->ensure_grad();
        for (int64_t i = 0; i < m; ++i)
          for (int64_t j = 0; j < n; ++j) v->grad[j] += out->grad[i * n + j];
      }
    });
    out->ensure_grad();
  }
  return out;
}

TensorPtr tanh_op(const TensorPtr& x, Tape* tape) {
  auto out = make_tensor(x->shape);
  for (int64_t i = 0; i < x->size(); ++i) out->data[i] = std::tanh(x->data[i]);
  if (wants_grad(tape, {&x})) {
    out->requires_grad = true;
    tape->push([x, out] {
      x->ensure_grad();
      for (int64_t i = 0; i < x->size(); ++i) {
        const double y = out->data[i];
        x->grad[i] += out->grad[i] * (1.0 - y * y);
      }
    });
    out->ensure_grad();
  }
  return out;
}

TensorPtr gelu(const TensorPtr& x, Tape* tape) {
  auto out = make_tensor(x->shape);
  const double inv_sqrt2 = 0.70710678118654752440;
  for (int64_t i = 0; i < x->size(); ++i) {
    const double v = x->data[i];
    out->data[i] = 0.5 * v * (1.0 + std::erf(v * inv_sqrt2));
  }
  if (wants_grad(tape, {&x})) {
    out->requires_grad = true;
    tape->push([x, out, inv_sqrt2] {
      x->ensure_grad();
      const double inv_sqrt_2pi = 0.39894228040143267794;
      for (int64_t i = 0; i < x->size(); ++i) {
        const double v = x->data[i];
        const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
        const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
        x->grad[i] += out->grad[i] * (cdf + v * pdf);
      }
    });
    out->ensure_grad();
  }
  return out;
}

TensorPtr matmul(const TensorPtr& a, const TensorPtr& b, Tape* tape) {
  if (a->shape.size() != 2 || b->shape.size() != 2 || a->shape[1] != b->shape[0])
    throw ShapeError("matmul: incompatible shapes " + shape_str(a->shape) + " and " +
                     shape_str(b->shape));
  const int64_t m = a->shape[0], k = a->shape[1], n = b->shape[1];
  auto out = make_tensor({m, n});
  k_nn(out->data.data(), a->data.data(), b->data.data(), m, k, n);
  if (wants_grad(tape, {&a, &b})) {
    out->requires_grad = true;
    tape->push([a, b, out, m, k, n] {
      if (a->requires_grad) {
        a->ensure_grad();
        k_nt(a->grad.data(), out->grad.data(), b->data.data(), m, n, k);
      }
      if (b->requires_grad) {
        b->ensure_grad();
        k_tn(b->grad.data(), a->data.data(), out->grad.data(), m, k, n);
      }
    });
    out->ensure_grad();
  }
  return out;
}

TensorPtr matmul_nt(const TensorPtr& a, const TensorPtr& b, Tape* tape) {
  if (a->shape.size() != 2 || b->shape.size() != 2 || a->shape[1] != b->shape[1])
    throw ShapeError("matmul_nt: incompatible shapes " + shape_str(a->shape) + " and " +
                     shape_str(b->shape));
  const int64_t m = a->shape[0], k = a->shape[1], n = b->shape[0];
  auto out = make_tensor({m, n});
  k_nt(out->data.data(), a->data.data(), b->data.data(), m, k, n);
  if (wants_grad(tape, {&a, &b})) {
    out->requires_grad = true;
    tape->push([a, b, out, m, k, n] {
      if (a->requires_grad) {
        a->ensure_grad();
        k_nn(a->grad.data(), out->grad.data(), b->data.data(), m, n, k);
      }
      if (b->requires_grad) {
        b->ensure_grad();
        k_tn(b->grad.data(), out->grad.data(), a->data.data(), m, n, k);
      }
    });
    out->ensure_grad();
  }
  return out;
}

TensorPtr linear(const TensorPtr& x, const TensorPtr& w, Tape* tape) { return matmul_nt(x, w, tape); }

TensorPtr softmax_rows(const TensorPtr& x, Tape* tape) {
  auto [m, n] = as_rows(x);
  auto out = make_tensor(x->shape);
  for (int64_t i = 0; i < m; ++i) {
    const double* row = x->data.data() + i * n;
    double mx = -std::numeric_limits<double>::infinity();
    for (int64_t j = 0; j < n; ++j) mx = std::max(mx, row[j]);
    if (mx == std::numeric_limits<double>::infinity())
      throw NumericError("softmax_rows: +inf input in row " + std::to_string(i));
    double z = 0.0;
    double* orow = out->data.data() + i * n;
    for (int64_t j = 0; j < n; ++j) {
      orow[j] = std::exp(row[j] - mx);
      z += orow[j];
    }
    // NaN inputs and all-(-inf) rows both surface here.
    if (!std::isfinite(z) || !(z > 0.0))
      throw NumericError("softmax_rows: non-finite input in row " + std::to_string(i));
    for (int64_t j = 0; j < n; ++j) orow[j] /= z;
  }
  if (wants_grad(tape, {&x})) {
    out->requires_grad = true;
    tape->push([x, out, m, n] {
      x->ensure_grad();
      for (int64_t i = 0; i < m; ++i) {
        const double* y = out->data.data() + i * n;
        const double* g = out->grad.data() + i * n;
        double dot = 0.0;
        for (int64_t j = 0; j < n; ++j) dot += y[j] * g[j];
        double* xg = x->grad.data() + i * n;
        for (int64_t j = 0; j < n; ++j) xg[j] += y[j] * (g[j] - dot);
      }
    });
    out->ensure_grad();
  }
  return out;
}

TensorPtr layer_norm(const TensorPtr& x, const TensorPtr& gain, const TensorPtr& bias, double eps,
                     Tape* tape) {
  auto [m, n] = as_rows(x);
  if (gain->size() != n || bias->size() != n)
    throw ShapeError("layer_norm: gain/bias size must equal last dim " + std::to_string(n));
  auto out = make_tensor(x->shape);
  auto xhat = std::make_shared<std::vector<double>>(x->data.size());
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<size_t>(m));
  for (int64_t i = 0; i < m; ++i) {
    const double* row = x->data.data() + i * n;
    double mean = 0.0;
    for (int64_t j = 0; j < n; ++j) mean += row[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (int64_t j = 0; j < n; ++j) {
      const double d = row[j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[static_cast<size_t>(i)] = is;
    double* orow = out->data.data() + i * n;
    for (int64_t j = 0; j < n; ++j) {
      const double xh = (row[j] - mean) * is;
      (*xhat)[static_cast<size_t>(i * n + j)] = xh;
      orow[j] = gain->data[j] * xh + bias->data[j];
    }
  }
  if (wants_grad(tape, {&x, &gain, &bias})) {
    out->requires_grad = true;
    tape->push([x, gain, bias, out, xhat, inv_std, m, n] {
      for (int64_t i = 0; i < m; ++i) {
        const double* g = out->grad.data() + i * n;
        const double* xh = xhat->data() + i * n;
        if (gain->requires_grad) {
          gain->ensure_grad();
          for (int64_t j = 0; j < n; ++j) gain->grad[j] += g[j] * xh[j];
        }
        if (bias->requires_grad) {
          bias->ensure_grad();
          for (int64_t j = 0; j < n; ++j) bias->grad[j] += g[j];
        }
        if (x->requires_grad) {
          x->ensure_grad();
          const double is = (*inv_std)[static_cast<size_t>(i)];
          double mean_dy = 0.0, mean_dy_xh = 0.0;
          for (int64_t j = 0; j < n; ++j) {
            const double dy = g[j] * gain->data[j];
            mean_dy += dy;
            mean_dy_xh += dy * xh[j];
          }
          mean_dy /= static_cast<double>(n);
          mean_dy_xh /= static_cast<double>(n);
          double* xg = x->grad.data() + i * n;
          for (int64_t j = 0; j < n; ++j) {
            const double dy = g[j] * gain->data[j];
            xg[j] += is * (dy - mean_dy - xh[j] * mean_dy_xh);
          }
        }
      }
    });
    out->ensure_grad();
  }
  return out;
}

TensorPtr embedding_lookup(const TensorPtr& table, const std::vector<int>& ids, Tape* tape) {
  if (table->shape.size() != 2)
    throw ShapeError("embedding_lookup: table must be 2-D, got " + shape_str(table->shape));
  const int64_t v = table->shape[0], d = table->shape[1];
  for (int id : ids)
    if (id < 0 || id >= v)
      throw IndexError("embedding_lookup: id " + std::to_string(id) + " outside table of " +
                       std::to_string(v) + " rows");
  auto out = make_tensor({static_cast<int64_t>(ids.size()), d});
  for (size_t i = 0; i < ids.size(); ++i)
    std::copy_n(table->data.data() + static_cast<int64_t>(ids[i]) * d, d,
                out->data.data() + static_cast<int64_t>(i) * d);
  if (wants_grad(tape, {&table})) {
    out->requires_grad = true;
    tape->push([table, out, ids, d] {
      table->ensure_grad();
      for (size_t i = 0; i < ids.size(); ++i) {
        double* trow = table->grad.data() + static_cast<int64_t>(ids[i]) * d;
        const double* g = out->grad.data() + static_cast<int64_t>(i) * d;
        for (int64_t j = 0; j < d; ++j) trow[j] += g[j];
      }
    });
    out->ensure_grad();
  }
  return out;
}

TensorPtr cross_entropy_logits(const TensorPtr& logits, const std::vector<int>& targets,
                               const std::vector<uint8_t>& mask, Tape* tape) {
  if (logits->shape.size() != 2)
    throw ShapeError("cross_entropy_logits: logits must be 2-D, got " + shape_str(logits->shape));
  const int64_t n = logits->shape[0], v = logits->shape[1];
  if (static_cast<int64_t>(targets.size()) != n || static_cast<int64_t>(mask.size()) != n)
    throw ShapeError("cross_entropy_logits: " + std::to_string(n) + " rows vs " +
                     std::to_string(targets.size()) + " targets / " + std::to_string(mask.size()) +
                     " mask entries");
  bool any = false;
  for (uint8_t m : mask) any = any || (m != 0);
  if (!any) throw ContractError("cross_entropy_logits: degenerate loss, mask selects no position");

  // probs kept for the backward rule
  auto probs = std::make_shared<std::vector<double>>();
  if (tape && logits->requires_grad) probs->assign(logits->data.size(), 0.0);
  double loss = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    if (!mask[static_cast<size_t>(i)]) continue;
    const int t = targets[static_cast<size_t>(i)];
    if (t < 0 || t >= v)
      throw IndexError("cross_entropy_logits: target " + std::to_string(t) + " outside vocab " +
                       std::to_string(v));
    const double* row = logits->data.data() + i * v;
    double mx = row[0];
    for (int64_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (int64_t j = 0; j < v; ++j) z += std::exp(row[j] - mx);
    const double lse = mx + std::log(z);
    loss += lse - row[t];
    if (!probs->empty()) {
      double* prow = probs->data() + i * v;
      for (int64_t j = 0; j < v; ++j) prow[j] = std::exp(row[j] - lse);
    }
  }
  if (!std::isfinite(loss)) throw NumericError("cross_entropy_logits: non-finite loss");
  auto out = make_scalar(loss);
  if (wants_grad(tape, {&logits})) {
    out->requires_grad = true;
    tape->push([logits, out, probs, targets, mask, n, v] {
      logits->ensure_grad();
      const double g = out->grad[0];
      for (int64_t i = 0; i < n; ++i) {
        if (!mask[static_cast<size_t>(i)]) continue;
        const double* prow = probs->data() + i * v;
        double* lrow = logits->grad.data() + i * v;
        const int t = targets[static_cast<size_t>(i)];
        for (int64_t j = 0; j < v; ++j) lrow[j] += g * prow[j];
        lrow[t] -= g;
      }
    });
    out->ensure_grad();
  }
  return out;
}

TensorPtr cosine_similarity(const TensorPtr& a, const TensorPtr& b, Tape* tape) {
  if (a->size() != b->size())
    throw ShapeError("cosine_similarity: sizes " + std::to_string(a->size()) + " and " +
                     std::to_string(b->size()) + " differ");
  double dot = 0.0, na2 = 0.0, nb2 = 0.0;
  for (int64_t i = 0; i < a->size(); ++i) {
    dot += a->data[i] * b->data[i];
    na2 += a->data[i] * a->data[i];
    nb2 += b->data[i] * b->data[i];
  }
  const double na = std::sqrt(na2), nb = std::sqrt(nb2);
  if (na == 0.0 || nb == 0.0) throw NumericError("cosine_similarity: zero-norm input");
  const double c = dot / (na * nb);
  auto out = make_scalar(c);
  if (wants_grad(tape, {&a, &b})) {
    out->requires_grad = true;
    tape->push([a, b, out, na, nb, c] {
      const double g = out->grad[0];
      if (a->requires_grad) {
        a->ensure_grad();
        for (int64_t i = 0; i < a->size(); ++i)
          a->grad[i] += g * (b->data[i] / (na * nb) - c * a->data[i] / (na * na));
      }
      if (b->requires_grad) {
        b->ensure_grad();
        for (int64_t i = 0; i < b->size(); ++i)
          b->grad[i] += g * (a->data[i] / (na * nb) - c * b->data[i] / (nb * nb));
      }
    });
    out->ensure_grad();
  }
  return out;
}

TensorPtr sum(const TensorPtr& x, Tape* tape) {
  double acc = 0.0;
  for (double v : x->data) acc += v;
  auto out = make_scalar(acc);
  if (wants_grad(tape, {&x})) {
    out->requires_grad = true;
    tape->push([x, out] {
      x->ensure_grad();
      const double g = out->grad[0];
      for (int64_t i = 0; i < x->size(); ++i) x->grad[i] += g;
    });
    out->ensure_grad();
  }
  return out;
}

TensorPtr mean_rows(const TensorPtr& x, Tape* tape) {
  auto [m, n] = as_rows(x);
  auto out = make_tensor({n});
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) out->data[j] += x->data[i * n + j];
  const double inv = 1.0 / static_cast<double>(m);
  for (int64_t j = 0; j < n; ++j) out->data[j] *= inv;
  if (wants_grad(tape, {&x})) {
    out->requires_grad = true;
    tape->push([x, out, m, n, inv] {
      x->ensure_grad();
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) x->grad[i * n + j] += out->grad[j] * inv;
    });
    out->ensure_grad();
  }
  return out;
}

TensorPtr slice_rows(const TensorPtr& x, int64_t r0, int64_t r1, Tape* tape) {
  auto [m, n] = as_rows(x);
  if (r0 < 0 || r1 > m || r0 >= r1)
    throw IndexError("slice_rows: range [" + std::to_string(r0) + "," + std::to_string(r1) +
                     ") invalid for " + std::to_string(m) + " rows");
  auto out = make_tensor({r1 - r0, n});
  std::copy_n(x->data.data() + r0 * n, (r1 - r0) * n, out->data.data());
  if (wants_grad(tape, {&x})) {
    out->requires_grad = true;
    tape->push([x, out, r0, n] {
      x->ensure_grad();
      for (int64_t i = 0; i < out->size(); ++i) x->grad[r0 * n + i] += out->grad[i];
    });
    out->ensure_grad();
  }
  return out;
}

TensorPtr slice_cols(const TensorPtr& x, int64_t c0, int64_t c1, Tape* tape) {
  auto [m, n] = as_rows(x);
  if (c0 < 0 || c1 > n || c0 >= c1)
    throw IndexError("slice_cols: range [" + std::to_string(c0) + "," + std::to_string(c1) +
                     ") invalid for width " + std::to_string(n));
  const int64_t w = c1 - c0;
  auto out = make_tensor({m, w});
  for (int64_t i = 0; i < m; ++i)
    std::copy_n(x->data.data() + i * n + c0, w, out->data.data() + i * w);
  if (wants_grad(tape, {&x})) {
    out->requires_grad = true;
    tape->push([x, out, c0, m, n, w] {
      x->ensure_grad();
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < w; ++j) x->grad[i * n + c0 + j] += out->grad[i * w + j];
    });
    out->ensure_grad();
  }
  return out;
}

TensorPtr concat_rows(const std::vector<TensorPtr>& parts, Tape* tape) {
  if (parts.empty()) throw ShapeError("concat_rows: no parts");
  const int64_t n = parts[0]->cols();
  int64_t m = 0;
  bool rg = false;
  for (const auto& p : parts) {
    if (p->shape.size() != 2 || p->cols() != n)
      throw ShapeError("concat_rows: part " + shape_str(p->shape) + " does not have width " +
                       std::to_string(n));
    m += p->rows();
    rg = rg || p->requires_grad;
  }
  auto out = make_tensor({m, n});
  int64_t off = 0;
  for (const auto& p : parts) {
    std::copy_n(p->data.data(), p->size(), out->data.data() + off);
    off += p->size();
  }
  if (tape && rg) {
    out->requires_grad = true;
    tape->push([parts, out] {
      int64_t off = 0;
      for (const auto& p : parts) {
        if (p->requires_grad) {
          p->ensure_grad();
          for (int64_t i = 0; i < p->size(); ++i) p->grad[i] += out->grad[off + i];
        }
        off += p->size();
      }
    });
    out->ensure_grad();
  }
  return out;
}

TensorPtr concat_cols(const std::vector<TensorPtr>& parts, Tape* tape) {
  if (parts.empty()) throw ShapeError("concat_cols: no parts");
  const int64_t m = parts[0]->rows();
  int64_t n = 0;
  bool rg = false;
  for (const auto& p : parts) {
    if (p->shape.size() != 2 || p->rows() != m)
      throw ShapeError("concat_cols: part " + shape_str(p->shape) + " does not have " +
                       std::to_string(m) + " rows");
    n += p->cols();
    rg = rg || p->requires_grad;
  }
  auto out = make_tensor({m, n});
  int64_t coff = 0;
  for (const auto& p : parts) {
    const int64_t w = p->cols();
    for (int64_t i = 0; i < m; ++i)
      std::copy_n(p->data.data() + i * w, w, out->data.data() + i * n + coff);
    coff += w;
  }
  if (tape && rg) {
    out->requires_grad = true;
    tape->push([parts, out, m, n] {
      int64_t coff = 0;
      for (const auto& p : parts) {
        const int64_t w = p->cols();
        if (p->requires_grad) {
          p->ensure_grad();
          for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < w; ++j) p->grad[i * w + j] += out->grad[i * n + coff + j];
        }
        coff += w;
      }
    });
    out->ensure_grad();
  }
  return out;
}

double finite_diff_check(const std::function<TensorPtr(Tape&)>& f, const TensorPtr& x, double eps) {
  if (eps <= 0.0) throw ContractError("finite_diff_check: eps must be positive");
  const bool was_rg = x->requires_grad;
  x->requires_grad = true;
  x->zero_grad();
  {
    Tape tape;
    auto loss = f(tape);
    if (loss->size() != 1)
      throw ContractError("finite_diff_check: f must be scalar-valued, got " +
                          shape_str(loss->shape));
    tape.backward(loss);
  }
  std::vector<double> analytic = x->grad;
  double max_rel = 0.0;
  for (int64_t i = 0; i < x->size(); ++i) {
    const double saved = x->data[i];
    x->data[i] = saved + eps;
    double fp;
    {
      Tape t;
      fp = f(t)->data[0];
    }
    x->data[i] = saved - eps;
    double fm;
    {
      Tape t;
      fm = f(t)->data[0];
    }
    x->data[i] = saved;
    const double numeric = (fp - fm) / (2.0 * eps);
    const double a = analytic[static_cast<size_t>(i)];
    const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
    max_rel = std::max(max_rel, std::fabs(a - numeric) / denom);
  }
  x->requires_grad = was_rg;
  return max_rel;
}

}  // namespace evqa

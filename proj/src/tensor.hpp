#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "common.hpp"

namespace evqa {

// Dense row-major f64 tensor. Gradients live next to the data and are
// accumulated by tape replay; `requires_grad` marks tensors that take part
// in differentiation (leaves set it explicitly, ops propagate it).
class Tensor {
 public:
  std::vector<int64_t> shape;
  std::vector<double> data;
  std::vector<double> grad;  // allocated on demand, same length as data
  bool requires_grad = false;
  std::string name;  // optional, used in diagnostics and checkpoints

  int64_t size() const { return static_cast<int64_t>(data.size()); }
  int64_t rows() const { return shape.empty() ? 0 : shape[0]; }
  int64_t cols() const { return shape.size() < 2 ? (shape.empty() ? 0 : 1) : shape[1]; }

  double& at(int64_t r, int64_t c) { return data[static_cast<size_t>(r * cols() + c)]; }
  double at(int64_t r, int64_t c) const { return data[static_cast<size_t>(r * cols() + c)]; }

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
  void zero_grad() { grad.assign(data.size(), 0.0); }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

using TensorPtr = std::shared_ptr<Tensor>;

std::string shape_str(const std::vector<int64_t>& shape);
int64_t shape_numel(const std::vector<int64_t>& shape);

TensorPtr make_tensor(std::vector<int64_t> shape, bool requires_grad = false, std::string name = "");
TensorPtr make_scalar(double v, bool requires_grad = false);
TensorPtr from_data(std::vector<int64_t> shape, std::vector<double> values, bool requires_grad = false);
TensorPtr randn(std::vector<int64_t> shape, Rng& rng, double stddev, bool requires_grad = false,
                std::string name = "");
TensorPtr clone_values(const TensorPtr& src);

// Execution record for one forward pass. Ops push their backward rules here;
// backward() replays them in reverse. Records are rebuilt per pass and a
// cleared record drops every captured intermediate.
class Tape {
 public:
  void push(std::function<void()> fn) { steps_.push_back(std::move(fn)); }

  // Seeds d(loss)/d(loss) = 1 and accumulates grads into every recorded
  // tensor with requires_grad. Accumulation is additive, so two backward
  // calls over different losses sum their gradients.
  void backward(const TensorPtr& loss);

  void clear() { steps_.clear(); }
  size_t size() const { return steps_.size(); }

 private:
  std::vector<std::function<void()>> steps_;
};

// Elementwise / broadcast ops. All take `Tape*`; pass nullptr for
// record-free evaluation.
TensorPtr add(const TensorPtr& a, const TensorPtr& b, Tape* tape);
TensorPtr add_const(const TensorPtr& a, double c, Tape* tape);
TensorPtr mul(const TensorPtr& a, const TensorPtr& b, Tape* tape);
TensorPtr scale(const TensorPtr& a, double c, Tape* tape);
TensorPtr mul_scalar(const TensorPtr& x, const TensorPtr& s, Tape* tape);  // s has numel 1
TensorPtr add_rowvec(const TensorPtr& x, const TensorPtr& v, Tape* tape);
TensorPtr tanh_op(const TensorPtr& x, Tape* tape);
TensorPtr gelu(const TensorPtr& x, Tape* tape);

// Matrix products; backward rules are d a = g.b^T, d b = a^T.g (and the
// transposed variants for linear/matmul_nt).
TensorPtr matmul(const TensorPtr& a, const TensorPtr& b, Tape* tape);
TensorPtr matmul_nt(const TensorPtr& a, const TensorPtr& b, Tape* tape);  // a.b^T, b is [n x k]
TensorPtr linear(const TensorPtr& x, const TensorPtr& w, Tape* tape);     // x.w^T, w is [out x in]

TensorPtr softmax_rows(const TensorPtr& x, Tape* tape);
TensorPtr layer_norm(const TensorPtr& x, const TensorPtr& gain, const TensorPtr& bias, double eps,
                     Tape* tape);
TensorPtr embedding_lookup(const TensorPtr& table, const std::vector<int>& ids, Tape* tape);
TensorPtr cross_entropy_logits(const TensorPtr& logits, const std::vector<int>& targets,
                               const std::vector<uint8_t>& mask, Tape* tape);
TensorPtr cosine_similarity(const TensorPtr& a, const TensorPtr& b, Tape* tape);

TensorPtr sum(const TensorPtr& x, Tape* tape);
TensorPtr mean_rows(const TensorPtr& x, Tape* tape);  // [m x n] -> [n]
TensorPtr slice_rows(const TensorPtr& x, int64_t r0, int64_t r1, Tape* tape);
TensorPtr slice_cols(const TensorPtr& x, int64_t c0, int64_t c1, Tape* tape);
TensorPtr concat_rows(const std::vector<TensorPtr>& parts, Tape* tape);
TensorPtr concat_cols(const std::vector<TensorPtr>& parts, Tape* tape);

// Central-difference check of the recorded gradient of f with respect to x.
// f must rebuild its graph from the current contents of x on every call and
// return a scalar. Returns the max relative error with denominator
// max(|analytic|, |numeric|, 1e-8).
double finite_diff_check(const std::function<TensorPtr(Tape&)>& f, const TensorPtr& x, double eps);

}  // namespace evqa

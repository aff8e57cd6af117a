#pragma once

#include <functional>
#include <vector>

#include "mat/tensor.hpp"

namespace mat {

// Define-by-run tape: primitives append their backward closure as they
// execute, so replaying the record in reverse is already a valid
// topological order. One tape per forward graph; tapes are not shared
// across threads.
class Tape {
 public:
  void record(std::function<void()> fn) { entries_.push_back(std::move(fn)); }

  // Seeds d(loss)/d(loss) = 1 and runs all recorded closures in reverse.
  // Gradients accumulate additively into every requires_grad tensor
  // reachable from `loss`.
  void backward(const TensorPtr& loss);

  size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }

 private:
  std::vector<std::function<void()>> entries_;
};

// Primitives. `tp` may be null for pure inference: nothing is recorded and
// outputs never require grad. Elementwise binary ops support equal shapes,
// a 1-element operand, or one operand whose shape is a suffix of the
// other's (broadcast across leading axes). Every op checks its output for
// NaN/Inf and throws std::runtime_error on violation.
TensorPtr add(Tape* tp, const TensorPtr& a, const TensorPtr& b);
TensorPtr sub(Tape* tp, const TensorPtr& a, const TensorPtr& b);
TensorPtr mul(Tape* tp, const TensorPtr& a, const TensorPtr& b);
TensorPtr scalar_mul(Tape* tp, const TensorPtr& a, float s);

TensorPtr matmul(Tape* tp, const TensorPtr& a, const TensorPtr& b);  // 2-D only
// x:(C,H,W) w:(O,C,kh,kw) bias:(O) or null
TensorPtr conv2d(Tape* tp, const TensorPtr& x, const TensorPtr& w, const TensorPtr& bias,
                 int stride, int pad);

TensorPtr relu(Tape* tp, const TensorPtr& x);
TensorPtr abs(Tape* tp, const TensorPtr& x);
TensorPtr exp(Tape* tp, const TensorPtr& x);
TensorPtr log(Tape* tp, const TensorPtr& x);  // input clamped below at 1e-12
TensorPtr sigmoid(Tape* tp, const TensorPtr& x);
TensorPtr softplus(Tape* tp, const TensorPtr& x);

TensorPtr softmax_last(Tape* tp, const TensorPtr& x);
TensorPtr max_axis(Tape* tp, const TensorPtr& x, int axis);   // ties -> first index
TensorPtr mean_axis(Tape* tp, const TensorPtr& x, int axis);
TensorPtr layernorm(Tape* tp, const TensorPtr& x, const TensorPtr& gamma, const TensorPtr& beta);

TensorPtr embedding(Tape* tp, const TensorPtr& table, const std::vector<int>& ids);
TensorPtr reshape(Tape* tp, const TensorPtr& x, std::vector<int> shape);
TensorPtr transpose(Tape* tp, const TensorPtr& x);  // 2-D only
TensorPtr concat(Tape* tp, const std::vector<TensorPtr>& parts, int axis);

// logits:(P,V), targets length P with -1 marking ignored positions;
// returns the scalar mean of -log softmax(logits)[target] over scored rows.
TensorPtr cross_entropy_logits(Tape* tp, const TensorPtr& logits, const std::vector<int>& targets);

// Composites built from the primitives above.
TensorPtr sum_all(Tape* tp, const TensorPtr& x);
TensorPtr mean_all(Tape* tp, const TensorPtr& x);
TensorPtr max_all(Tape* tp, const TensorPtr& x);

// Max over coordinates of |analytic - central difference| / max(1, |central
// difference|) for a scalar-valued f, central differences at the given eps.
double grad_check(const std::function<TensorPtr(Tape&, const TensorPtr&)>& f,
                  const TensorPtr& point, float eps);

// param <- param - lr * grad for each tensor, then zero the grads.
// Throws if any tensor has no populated gradient.
void sgd_step(const std::vector<TensorPtr>& params, float lr);

}  // namespace mat

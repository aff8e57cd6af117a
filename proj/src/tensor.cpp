#include "mat/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace mat {

int64_t numel_of(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int s : shape) {
    if (s <= 0) throw std::invalid_argument("tensor axis length must be positive, got " + shape_str(shape));
    n *= s;
  }
  return n;
}

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ")";
  return os.str();
}

TensorPtr tensor(std::vector<int> shape) {
  auto t = std::make_shared<Tensor>();
  int64_t n = numel_of(shape);
  t->shape = std::move(shape);
  t->value.assign((size_t)n, 0.0f);
  return t;
}

TensorPtr tensor(std::vector<int> shape, std::vector<float> data) {
  int64_t n = numel_of(shape);
  if ((int64_t)data.size() != n) {
    throw std::invalid_argument("tensor data length " + std::to_string(data.size()) +
                                " does not match shape " + shape_str(shape));
  }
  auto t = std::make_shared<Tensor>();
  t->shape = std::move(shape);
  t->value = std::move(data);
  return t;
}

TensorPtr scalar(float v) { return tensor({1}, {v}); }

TensorPtr full(std::vector<int> shape, float v) {
  auto t = tensor(std::move(shape));
  std::fill(t->value.begin(), t->value.end(), v);
  return t;
}

void check_finite(const Tensor& t, const char* op) {
  const float* p = t.value.data();
  const int64_t n = t.numel();
  bool ok = true;
  for (int64_t i = 0; i < n; ++i) {
    if (!std::isfinite(p[i])) { ok = false; break; }
  }
  if (!ok) throw std::runtime_error(std::string("non-finite value in output of ") + op);
}

}  // namespace mat

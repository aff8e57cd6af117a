#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace mat {

// Dense row-major float32 tensor. Gradient storage lives next to the value
// buffer; it is allocated lazily on the first backward pass that touches it.
struct Tensor {
  std::vector<int> shape;
  std::vector<float> value;
  std::vector<float> grad;  // empty until ensure_grad()
  bool requires_grad = false;
  std::string name;  // non-empty for named parameters

  int64_t numel() const { return (int64_t)value.size(); }
  bool has_grad() const { return !grad.empty(); }
  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0f);
  }
  void zero_grad() {
    if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0f);
  }
};

using TensorPtr = std::shared_ptr<Tensor>;

int64_t numel_of(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

TensorPtr tensor(std::vector<int> shape);                           // zero-filled
TensorPtr tensor(std::vector<int> shape, std::vector<float> data);  // takes ownership
TensorPtr scalar(float v);
TensorPtr full(std::vector<int> shape, float v);

// Throws std::runtime_error naming `op` if any value is NaN/Inf.
void check_finite(const Tensor& t, const char* op);

}  // namespace mat

#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "dccl/errors.hpp"

namespace dccl {

// Dense row-major tensor of 64-bit floats with an optional gradient buffer.
// grad is empty unless something (an optimizer path) asked for it; when
// present it always has the same length as data.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;
  std::vector<double> grad;

  Tensor() = default;

  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    data.assign(static_cast<size_t>(numel_of(shape)), 0.0);
  }

  Tensor(std::vector<int> s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
    if (static_cast<int64_t>(data.size()) != numel_of(shape)) {
      throw ShapeError("tensor data length does not match shape product");
    }
  }

  static int64_t numel_of(const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) {
      if (d <= 0) throw ShapeError("non-positive dimension " + std::to_string(d));
      n *= d;
    }
    return n;
  }

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }

  static Tensor full(std::vector<int> s, double v) {
    Tensor t(std::move(s));
    t.data.assign(t.data.size(), v);
    return t;
  }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape.at(static_cast<size_t>(i)); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  // 4-d accessors (N,C,H,W). Used by the naive paths and the pool layer.
  double& at4(int n, int c, int h, int w) {
    const int C = shape[1], H = shape[2], W = shape[3];
    return data[static_cast<size_t>(((n * C + c) * H + h) * W + w)];
  }
  double at4(int n, int c, int h, int w) const {
    const int C = shape[1], H = shape[2], W = shape[3];
    return data[static_cast<size_t>(((n * C + c) * H + h) * W + w)];
  }

  double& at2(int i, int j) { return data[static_cast<size_t>(i * shape[1] + j)]; }
  double at2(int i, int j) const { return data[static_cast<size_t>(i * shape[1] + j)]; }

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
  void clear_grad() { grad.clear(); }
  bool has_grad() const { return grad.size() == data.size() && !data.empty(); }

  bool all_finite() const {
    for (double v : data) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << "]";
    return os.str();
  }
};

// Stack per-sample tensors (shape [C,H,W] or [D]) into one batch tensor.
inline Tensor stack_batch(const std::vector<const Tensor*>& rows) {
  if (rows.empty()) throw ShapeError("cannot stack an empty batch");
  std::vector<int> shape;
  shape.push_back(static_cast<int>(rows.size()));
  for (int d : rows[0]->shape) shape.push_back(d);
  Tensor out(shape);
  const size_t per = rows[0]->data.size();
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i]->shape != rows[0]->shape) throw ShapeError("ragged batch");
    std::copy(rows[i]->data.begin(), rows[i]->data.end(), out.data.begin() + static_cast<int64_t>(i * per));
  }
  return out;
}

// Slice one sample out of a batch tensor (drops the leading dim).
inline Tensor batch_row(const Tensor& batch, int i) {
  if (batch.ndim() < 2) throw ShapeError("batch_row needs a batched tensor");
  std::vector<int> shape(batch.shape.begin() + 1, batch.shape.end());
  const int64_t per = Tensor::numel_of(shape);
  Tensor out(shape);
  std::copy(batch.data.begin() + i * per, batch.data.begin() + (i + 1) * per, out.data.begin());
  return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw ShapeError("add: " + a.shape_str() + " vs " + b.shape_str());
  Tensor out = a;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
  return out;
}

}  // namespace dccl

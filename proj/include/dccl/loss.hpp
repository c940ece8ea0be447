#pragma once

#include <cmath>
#include <vector>

#include "dccl/errors.hpp"
#include "dccl/tensor.hpp"

namespace dccl {

struct LossResult {
  double value = 0.0;
  Tensor grad;  // d loss / d logits (or d pred)
};

// Mean over the batch of -log softmax(logits)[label], log-sum-exp stabilized.
inline LossResult softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.ndim() != 2) throw ShapeError("cross entropy expects [N,K] logits, got " + logits.shape_str());
  const int n = logits.dim(0), k = logits.dim(1);
  if (static_cast<int>(labels.size()) != n) throw ShapeError("label count does not match batch size");
  LossResult res;
  res.grad = Tensor(logits.shape);
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y < 0 || y >= k) throw ShapeError("label " + std::to_string(y) + " out of range [0," + std::to_string(k) + ")");
    const double* row = logits.data.data() + static_cast<int64_t>(i) * k;
    double m = row[0];
    for (int j = 1; j < k; ++j) m = std::max(m, row[j]);
    double sum = 0.0;
    for (int j = 0; j < k; ++j) sum += std::exp(row[j] - m);
    const double lse = m + std::log(sum);
    total += lse - row[y];
    double* grow = res.grad.data.data() + static_cast<int64_t>(i) * k;
    for (int j = 0; j < k; ++j) grow[j] = std::exp(row[j] - m) / sum / n;
    grow[y] -= 1.0 / n;
  }
  res.value = total / n;
  return res;
}

// Mean over all elements of the squared difference; gradient w.r.t. pred.
inline LossResult mse_loss(const Tensor& pred, const Tensor& target) {
  if (!pred.same_shape(target)) {
    throw ShapeError("mse: " + pred.shape_str() + " vs " + target.shape_str());
  }
  LossResult res;
  res.grad = Tensor(pred.shape);
  const double inv = 1.0 / static_cast<double>(pred.numel());
  double total = 0.0;
  for (int64_t i = 0; i < pred.numel(); ++i) {
    const double d = pred.data[static_cast<size_t>(i)] - target.data[static_cast<size_t>(i)];
    total += d * d;
    res.grad.data[static_cast<size_t>(i)] = 2.0 * d * inv;
  }
  res.value = total * inv;
  return res;
}

// Argmax with ties resolved to the lowest index.
inline int argmax_row(const Tensor& logits, int row) {
  const int k = logits.dim(1);
  const double* r = logits.data.data() + static_cast<int64_t>(row) * k;
  int best = 0;
  for (int j = 1; j < k; ++j) {
    if (r[j] > r[best]) best = j;
  }
  return best;
}

}  // namespace dccl

#pragma once

#include <algorithm>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "dccl/errors.hpp"
#include "dccl/rng.hpp"
#include "dccl/tensor.hpp"

namespace dccl {

// A trainable tensor. The gradient lives in value.grad; frozen parameters
// never receive gradients and are never touched by optimizer steps.
struct Parameter {
  Tensor value;
  bool frozen = false;

  int64_t numel() const { return value.numel(); }
};

// Layers cache whatever their backward pass needs during forward. backward()
// consumes the cache, so calling it twice without a fresh forward throws.
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor forward(const Tensor& x) = 0;
  virtual Tensor backward(const Tensor& dy) = 0;
  virtual std::vector<Parameter*> params() { return {}; }
  virtual std::unique_ptr<Layer> clone() const = 0;
  virtual std::string kind() const = 0;

 protected:
  void require_cache(const char* who) {
    if (!has_cache_) throw ContractError(std::string(who) + ": backward called without a preceding forward");
    has_cache_ = false;
  }
  void set_cache() { has_cache_ = true; }

 private:
  bool has_cache_ = false;
};

namespace detail {

// C[rows x cols] += A[rows x k] * B[k x cols], row-major. The ikj order keeps
// the inner loop contiguous; accumulation order is fixed, so results are
// bit-reproducible and each output row depends only on its own input row.
inline void gemm_accumulate(const double* a, const double* b, double* c, int rows, int k, int cols) {
  for (int i = 0; i < rows; ++i) {
    const double* arow = a + static_cast<int64_t>(i) * k;
    double* crow = c + static_cast<int64_t>(i) * cols;
    for (int p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + static_cast<int64_t>(p) * cols;
      for (int j = 0; j < cols; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[rows x cols] += A^T[rows x k] * B[k x cols] where A is stored [k x rows].
inline void gemm_at_b_accumulate(const double* a, const double* b, double* c, int rows, int k, int cols) {
  for (int p = 0; p < k; ++p) {
    const double* arow = a + static_cast<int64_t>(p) * rows;
    const double* brow = b + static_cast<int64_t>(p) * cols;
    for (int i = 0; i < rows; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* crow = c + static_cast<int64_t>(i) * cols;
      for (int j = 0; j < cols; ++j) crow[j] += av * brow[j];
    }
  }
}

inline int conv_out_dim(int in, int kernel, int stride, int padding) {
  return (in + 2 * padding - kernel) / stride + 1;
}

}  // namespace detail

// 2-d cross-correlation, no bias. Weight layout [C_out, C_in, kH, kW].
class Conv2d : public Layer {
 public:
  Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding, SeededRng& rng)
      : in_channels_(in_channels), out_channels_(out_channels), kernel_(kernel), stride_(stride), padding_(padding) {
    if (kernel < 1 || stride < 1 || padding < 0) throw SpecError("conv: kernel/stride/padding out of range");
    weight_.value = Tensor({out_channels, in_channels, kernel, kernel});
    const double bound = std::sqrt(1.0 / (static_cast<double>(in_channels) * kernel * kernel));
    for (double& w : weight_.value.data) w = rng.uniform(-bound, bound);
  }

  Tensor forward(const Tensor& x) override {
    check_input(x);
    const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const int oh = detail::conv_out_dim(h, kernel_, stride_, padding_);
    const int ow = detail::conv_out_dim(w, kernel_, stride_, padding_);
    Tensor out({n, out_channels_, oh, ow});
    const int k = in_channels_ * kernel_ * kernel_;
    std::vector<double> cols(static_cast<size_t>(k) * oh * ow);
    for (int i = 0; i < n; ++i) {
      im2col(x, i, cols.data(), oh, ow);
      double* o = out.data.data() + static_cast<int64_t>(i) * out_channels_ * oh * ow;
      detail::gemm_accumulate(weight_.value.data.data(), cols.data(), o, out_channels_, k, oh * ow);
    }
    input_ = x;
    set_cache();
    return out;
  }

  Tensor backward(const Tensor& dy) override {
    require_cache("conv2d");
    const int n = input_.dim(0), h = input_.dim(2), w = input_.dim(3);
    const int oh = dy.dim(2), ow = dy.dim(3);
    const int k = in_channels_ * kernel_ * kernel_;
    Tensor dx(input_.shape);
    std::vector<double> cols(static_cast<size_t>(k) * oh * ow);
    std::vector<double> dcols(static_cast<size_t>(k) * oh * ow);
    if (!weight_.frozen) weight_.value.ensure_grad();
    for (int i = 0; i < n; ++i) {
      const double* dout = dy.data.data() + static_cast<int64_t>(i) * out_channels_ * oh * ow;
      im2col(input_, i, cols.data(), oh, ow);
      if (!weight_.frozen) {
        // dW[co][r] += sum_o dout[co][o] * cols[r][o]
        double* dw = weight_.value.grad.data();
        for (int co = 0; co < out_channels_; ++co) {
          const double* drow = dout + static_cast<int64_t>(co) * oh * ow;
          double* dwrow = dw + static_cast<int64_t>(co) * k;
          for (int r = 0; r < k; ++r) {
            const double* crow = cols.data() + static_cast<int64_t>(r) * oh * ow;
            double acc = 0.0;
            for (int o = 0; o < oh * ow; ++o) acc += drow[o] * crow[o];
            dwrow[r] += acc;
          }
        }
      }
      // dcols = W^T * dout, then scatter back to dx.
      std::fill(dcols.begin(), dcols.end(), 0.0);
      detail::gemm_at_b_accumulate(weight_.value.data.data(), dout, dcols.data(), k, out_channels_, oh * ow);
      col2im_add(dcols.data(), dx, i, oh, ow);
    }
    (void)h;
    (void)w;
    return dx;
  }

  std::vector<Parameter*> params() override { return {&weight_}; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv2d>(*this); }
  std::string kind() const override { return "conv"; }

  Parameter& weight() { return weight_; }
  int out_channels() const { return out_channels_; }

 private:
  void check_input(const Tensor& x) const {
    if (x.ndim() != 4) throw ShapeError("conv2d expects [N,C,H,W], got " + x.shape_str());
    if (x.dim(1) != in_channels_) {
      throw ShapeError("conv2d input has " + std::to_string(x.dim(1)) + " channels, layer expects " +
                       std::to_string(in_channels_));
    }
    if (x.dim(2) + 2 * padding_ < kernel_ || x.dim(3) + 2 * padding_ < kernel_) {
      throw ShapeError("conv2d input " + x.shape_str() + " too small for kernel " + std::to_string(kernel_));
    }
  }

  void im2col(const Tensor& x, int sample, double* cols, int oh, int ow) const {
    const int h = x.dim(2), w = x.dim(3);
    const double* in = x.data.data() + static_cast<int64_t>(sample) * in_channels_ * h * w;
    int r = 0;
    for (int c = 0; c < in_channels_; ++c) {
      const double* plane = in + static_cast<int64_t>(c) * h * w;
      for (int ky = 0; ky < kernel_; ++ky) {
        for (int kx = 0; kx < kernel_; ++kx, ++r) {
          double* dst = cols + static_cast<int64_t>(r) * oh * ow;
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * stride_ - padding_ + ky;
            if (iy < 0 || iy >= h) {
              for (int ox = 0; ox < ow; ++ox) dst[oy * ow + ox] = 0.0;
              continue;
            }
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * stride_ - padding_ + kx;
              dst[oy * ow + ox] = (ix >= 0 && ix < w) ? plane[iy * w + ix] : 0.0;
            }
          }
        }
      }
    }
  }

  void col2im_add(const double* dcols, Tensor& dx, int sample, int oh, int ow) const {
    const int h = dx.dim(2), w = dx.dim(3);
    double* out = dx.data.data() + static_cast<int64_t>(sample) * in_channels_ * h * w;
    int r = 0;
    for (int c = 0; c < in_channels_; ++c) {
      double* plane = out + static_cast<int64_t>(c) * h * w;
      for (int ky = 0; ky < kernel_; ++ky) {
        for (int kx = 0; kx < kernel_; ++kx, ++r) {
          const double* src = dcols + static_cast<int64_t>(r) * oh * ow;
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * stride_ - padding_ + ky;
            if (iy < 0 || iy >= h) continue;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * stride_ - padding_ + kx;
              if (ix >= 0 && ix < w) plane[iy * w + ix] += src[oy * ow + ox];
            }
          }
        }
      }
    }
  }

  int in_channels_, out_channels_, kernel_, stride_, padding_;
  Parameter weight_;
  Tensor input_;
};

// Max pooling. Ties route the gradient to the first maximal index in
// row-major scan order (strict > while scanning keeps the first max).
class MaxPool2d : public Layer {
 public:
  MaxPool2d(int window, int stride) : window_(window), stride_(stride) {
    if (window < 1 || stride < 1) throw SpecError("maxpool: window/stride out of range");
  }

  Tensor forward(const Tensor& x) override {
    if (x.ndim() != 4) throw ShapeError("maxpool expects [N,C,H,W], got " + x.shape_str());
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (h < window_ || w < window_) throw ShapeError("maxpool input " + x.shape_str() + " smaller than window");
    const int oh = (h - window_) / stride_ + 1;
    const int ow = (w - window_) / stride_ + 1;
    Tensor out({n, c, oh, ow});
    argmax_.assign(out.data.size(), 0);
    in_shape_ = x.shape;
    size_t oidx = 0;
    for (int i = 0; i < n; ++i) {
      for (int ch = 0; ch < c; ++ch) {
        const double* plane = x.data.data() + (static_cast<int64_t>(i) * c + ch) * h * w;
        for (int oy = 0; oy < oh; ++oy) {
          for (int ox = 0; ox < ow; ++ox, ++oidx) {
            const int y0 = oy * stride_, x0 = ox * stride_;
            double best = plane[y0 * w + x0];
            int best_at = y0 * w + x0;
            for (int ky = 0; ky < window_; ++ky) {
              for (int kx = 0; kx < window_; ++kx) {
                const int at = (y0 + ky) * w + (x0 + kx);
                if (plane[at] > best) {
                  best = plane[at];
                  best_at = at;
                }
              }
            }
            out.data[oidx] = best;
            argmax_[oidx] = (static_cast<int64_t>(i) * c + ch) * h * w + best_at;
          }
        }
      }
    }
    set_cache();
    return out;
  }

  Tensor backward(const Tensor& dy) override {
    require_cache("maxpool2d");
    Tensor dx(in_shape_);
    for (size_t o = 0; o < dy.data.size(); ++o) dx.data[static_cast<size_t>(argmax_[o])] += dy.data[o];
    return dx;
  }

  std::unique_ptr<Layer> clone() const override { return std::make_unique<MaxPool2d>(*this); }
  std::string kind() const override { return "maxpool"; }

 private:
  int window_, stride_;
  std::vector<int64_t> argmax_;
  std::vector<int> in_shape_;
};

class Relu : public Layer {
 public:
  Tensor forward(const Tensor& x) override {
    Tensor out = x;
    mask_.assign(x.data.size(), 0);
    for (size_t i = 0; i < out.data.size(); ++i) {
      if (out.data[i] > 0.0) {
        mask_[i] = 1;
      } else {
        out.data[i] = 0.0;
      }
    }
    set_cache();
    return out;
  }

  Tensor backward(const Tensor& dy) override {
    require_cache("relu");
    Tensor dx = dy;
    for (size_t i = 0; i < dx.data.size(); ++i) {
      if (!mask_[i]) dx.data[i] = 0.0;
    }
    return dx;
  }

  std::unique_ptr<Layer> clone() const override { return std::make_unique<Relu>(*this); }
  std::string kind() const override { return "relu"; }

 private:
  std::vector<uint8_t> mask_;
};

class Flatten : public Layer {
 public:
  Tensor forward(const Tensor& x) override {
    if (x.ndim() < 2) throw ShapeError("flatten expects a batched tensor");
    in_shape_ = x.shape;
    int64_t per = 1;
    for (size_t i = 1; i < x.shape.size(); ++i) per *= x.shape[i];
    Tensor out({x.dim(0), static_cast<int>(per)}, x.data);
    set_cache();
    return out;
  }

  Tensor backward(const Tensor& dy) override {
    require_cache("flatten");
    return Tensor(in_shape_, dy.data);
  }

  std::unique_ptr<Layer> clone() const override { return std::make_unique<Flatten>(*this); }
  std::string kind() const override { return "flatten"; }

 private:
  std::vector<int> in_shape_;
};

// Affine map. Weight layout [D, K]; out = x W + b.
class Linear : public Layer {
 public:
  Linear(int in_features, int out_features, SeededRng& rng) : in_(in_features), out_(out_features) {
    weight_.value = Tensor({in_features, out_features});
    bias_.value = Tensor({out_features});
    const double bound = std::sqrt(1.0 / static_cast<double>(in_features));
    for (double& w : weight_.value.data) w = rng.uniform(-bound, bound);
  }

  Tensor forward(const Tensor& x) override {
    if (x.ndim() != 2) throw ShapeError("fc expects [N,D], got " + x.shape_str());
    if (x.dim(1) != in_) {
      throw ShapeError("fc input width " + std::to_string(x.dim(1)) + " does not match weight rows " +
                       std::to_string(in_));
    }
    const int n = x.dim(0);
    Tensor out({n, out_});
    for (int i = 0; i < n; ++i) {
      double* orow = out.data.data() + static_cast<int64_t>(i) * out_;
      for (int k = 0; k < out_; ++k) orow[k] = bias_.value.data[k];
    }
    detail::gemm_accumulate(x.data.data(), weight_.value.data.data(), out.data.data(), n, in_, out_);
    input_ = x;
    set_cache();
    return out;
  }

  Tensor backward(const Tensor& dy) override {
    require_cache("fc");
    const int n = input_.dim(0);
    if (!weight_.frozen) {
      weight_.value.ensure_grad();
      // dW = X^T dY, input_ stored [n x in].
      detail::gemm_at_b_accumulate(input_.data.data(), dy.data.data(), weight_.value.grad.data(), in_, n, out_);
    }
    if (!bias_.frozen) {
      bias_.value.ensure_grad();
      for (int i = 0; i < n; ++i) {
        const double* drow = dy.data.data() + static_cast<int64_t>(i) * out_;
        for (int k = 0; k < out_; ++k) bias_.value.grad[k] += drow[k];
      }
    }
    Tensor dx({n, in_});
    // dX = dY W^T
    for (int i = 0; i < n; ++i) {
      const double* drow = dy.data.data() + static_cast<int64_t>(i) * out_;
      double* xrow = dx.data.data() + static_cast<int64_t>(i) * in_;
      for (int k = 0; k < out_; ++k) {
        const double g = drow[k];
        if (g == 0.0) continue;
        const double* wcol = weight_.value.data.data() + k;
        for (int d = 0; d < in_; ++d) xrow[d] += g * wcol[static_cast<int64_t>(d) * out_];
      }
    }
    return dx;
  }

  std::vector<Parameter*> params() override { return {&weight_, &bias_}; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Linear>(*this); }
  std::string kind() const override { return "fc"; }

  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }
  int in_features() const { return in_; }
  int out_features() const { return out_; }

 private:
  int in_, out_;
  Parameter weight_, bias_;
  Tensor input_;
};

}  // namespace dccl

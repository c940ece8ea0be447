#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "dccl/errors.hpp"
#include "dccl/loss.hpp"
#include "dccl/nn.hpp"
#include "dccl/rng.hpp"

namespace dccl {

enum class LayerKind { Conv, MaxPool, Fc, Relu, Flatten };

inline std::string layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Conv: return "conv";
    case LayerKind::MaxPool: return "maxpool";
    case LayerKind::Fc: return "fc";
    case LayerKind::Relu: return "relu";
    case LayerKind::Flatten: return "flatten";
  }
  return "?";
}

// Declarative layer description. kernel doubles as the pool window.
struct LayerSpec {
  LayerKind kind = LayerKind::Relu;
  int out_channels = 0;  // conv
  int out_features = 0;  // fc
  int kernel = 0;
  int stride = 1;
  int padding = 0;

  static LayerSpec conv(int out_channels, int kernel, int stride = 1, int padding = 0) {
    return {LayerKind::Conv, out_channels, 0, kernel, stride, padding};
  }
  static LayerSpec maxpool(int window, int stride) { return {LayerKind::MaxPool, 0, 0, window, stride, 0}; }
  static LayerSpec fc(int out_features) { return {LayerKind::Fc, 0, out_features, 0, 1, 0}; }
  static LayerSpec relu() { return {LayerKind::Relu, 0, 0, 0, 1, 0}; }
  static LayerSpec flatten() { return {LayerKind::Flatten, 0, 0, 0, 1, 0}; }
};

struct ModelSpec {
  std::vector<LayerSpec> layers;
  std::array<int, 3> input_shape{0, 0, 0};  // C,H,W
  int num_classes = 0;
};

// Shape of the activation flowing between layers: spatial [C,H,W] or flat [D].
struct ActShape {
  bool flat = false;
  int c = 0, h = 0, w = 0;
  int d = 0;

  std::string str() const {
    std::ostringstream os;
    if (flat) {
      os << "[" << d << "]";
    } else {
      os << "[" << c << "x" << h << "x" << w << "]";
    }
    return os.str();
  }
};

// Walks the layer chain and returns the activation shape after each layer.
// Throws SpecError on any incompatibility.
inline std::vector<ActShape> infer_shapes(const ModelSpec& spec) {
  ActShape cur{false, spec.input_shape[0], spec.input_shape[1], spec.input_shape[2], 0};
  if (cur.c <= 0 || cur.h <= 0 || cur.w <= 0) throw SpecError("input shape must be positive [C,H,W]");
  std::vector<ActShape> out;
  out.reserve(spec.layers.size());
  for (size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    const std::string at = "layer " + std::to_string(i) + " (" + layer_kind_name(l.kind) + ")";
    switch (l.kind) {
      case LayerKind::Conv: {
        if (cur.flat) throw SpecError(at + ": conv after flatten");
        if (l.out_channels < 1) throw SpecError(at + ": out_channels must be positive");
        if (l.kernel < 1 || l.stride < 1 || l.padding < 0) throw SpecError(at + ": bad kernel/stride/padding");
        if (cur.h + 2 * l.padding < l.kernel || cur.w + 2 * l.padding < l.kernel) {
          throw SpecError(at + ": input " + cur.str() + " too small for kernel " + std::to_string(l.kernel));
        }
        cur.c = l.out_channels;
        cur.h = (cur.h + 2 * l.padding - l.kernel) / l.stride + 1;
        cur.w = (cur.w + 2 * l.padding - l.kernel) / l.stride + 1;
        break;
      }
      case LayerKind::MaxPool: {
        if (cur.flat) throw SpecError(at + ": maxpool after flatten");
        if (l.kernel < 1 || l.stride < 1) throw SpecError(at + ": bad window/stride");
        if (cur.h < l.kernel || cur.w < l.kernel) {
          throw SpecError(at + ": input " + cur.str() + " smaller than window " + std::to_string(l.kernel));
        }
        cur.h = (cur.h - l.kernel) / l.stride + 1;
        cur.w = (cur.w - l.kernel) / l.stride + 1;
        break;
      }
      case LayerKind::Relu:
        break;
      case LayerKind::Flatten: {
        if (cur.flat) throw SpecError(at + ": flatten twice");
        cur.d = cur.c * cur.h * cur.w;
        cur.flat = true;
        break;
      }
      case LayerKind::Fc: {
        if (!cur.flat) throw SpecError(at + ": fc needs flattened input (insert a flatten layer)");
        if (l.out_features < 1) throw SpecError(at + ": out_features must be positive");
        cur.d = l.out_features;
        break;
      }
    }
    out.push_back(cur);
  }
  return out;
}

inline void validate_spec(const ModelSpec& spec, bool require_classifier = true) {
  if (spec.layers.empty()) throw SpecError("empty layer list");
  infer_shapes(spec);
  if (require_classifier) {
    if (spec.num_classes < 1) throw SpecError("num_classes must be positive");
    const LayerSpec& last = spec.layers.back();
    if (last.kind != LayerKind::Fc || last.out_features != spec.num_classes) {
      throw SpecError("final layer must be an fc classifier with out_features == num_classes");
    }
  }
}

// Instantiated sequential model. Copying a Model deep-clones every layer, so
// models behave as plain values.
class Model {
 public:
  Model() = default;

  Model(const Model& o) : spec_(o.spec_) {
    layers_.reserve(o.layers_.size());
    for (const auto& l : o.layers_) layers_.push_back(l->clone());
  }
  Model& operator=(const Model& o) {
    if (this != &o) {
      Model tmp(o);
      *this = std::move(tmp);
    }
    return *this;
  }
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  static Model build(const ModelSpec& spec, uint64_t seed, bool require_classifier = true) {
    validate_spec(spec, require_classifier);
    Model m;
    m.spec_ = spec;
    SeededRng rng(seed);
    ActShape cur{false, spec.input_shape[0], spec.input_shape[1], spec.input_shape[2], 0};
    const std::vector<ActShape> shapes = infer_shapes(spec);
    for (size_t i = 0; i < spec.layers.size(); ++i) {
      const LayerSpec& l = spec.layers[i];
      switch (l.kind) {
        case LayerKind::Conv:
          m.layers_.push_back(std::make_unique<Conv2d>(cur.c, l.out_channels, l.kernel, l.stride, l.padding, rng));
          break;
        case LayerKind::MaxPool:
          m.layers_.push_back(std::make_unique<MaxPool2d>(l.kernel, l.stride));
          break;
        case LayerKind::Relu:
          m.layers_.push_back(std::make_unique<Relu>());
          break;
        case LayerKind::Flatten:
          m.layers_.push_back(std::make_unique<Flatten>());
          break;
        case LayerKind::Fc:
          m.layers_.push_back(std::make_unique<Linear>(cur.d, l.out_features, rng));
          break;
      }
      cur = shapes[i];
    }
    return m;
  }

  bool empty() const { return layers_.empty(); }
  size_t layer_count() const { return layers_.size(); }
  Layer& layer(size_t i) { return *layers_[i]; }
  const ModelSpec& spec() const { return spec_; }

  Tensor forward(const Tensor& x) {
    Tensor cur = x;
    for (auto& l : layers_) cur = l->forward(cur);
    return cur;
  }

  Tensor backward(const Tensor& dy) {
    Tensor cur = dy;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) cur = (*it)->backward(cur);
    return cur;
  }

  // Forward through everything but the final classifier.
  Tensor forward_features(const Tensor& x) {
    if (layers_.empty()) throw ContractError("forward_features on an empty model");
    Tensor cur = x;
    for (size_t i = 0; i + 1 < layers_.size(); ++i) cur = layers_[i]->forward(cur);
    return cur;
  }

  Linear& classifier() {
    if (layers_.empty()) throw ContractError("classifier() on an empty model");
    auto* fc = dynamic_cast<Linear*>(layers_.back().get());
    if (!fc) throw ContractError("final layer is not an fc classifier");
    return *fc;
  }

  std::vector<Parameter*> params() {
    std::vector<Parameter*> out;
    for (auto& l : layers_) {
      for (Parameter* p : l->params()) out.push_back(p);
    }
    return out;
  }

  void set_frozen(bool frozen) {
    for (Parameter* p : params()) p->frozen = frozen;
  }

  bool all_frozen() {
    for (Parameter* p : params()) {
      if (!p->frozen) return false;
    }
    return true;
  }

  void zero_grad() {
    for (Parameter* p : params()) p->value.clear_grad();
  }

  int64_t param_count() {
    int64_t n = 0;
    for (Parameter* p : params()) n += p->numel();
    return n;
  }

  // Sets every parameter to zero (used by tests and the zero-control checks).
  void zero_params() {
    for (Parameter* p : params()) std::fill(p->value.data.begin(), p->value.data.end(), 0.0);
  }

 private:
  ModelSpec spec_;
  std::vector<std::unique_ptr<Layer>> layers_;
};

inline int64_t count_params(Model& m) { return m.param_count(); }

// Per-layer parameter counts from the spec alone (conv layers carry no bias,
// fc layers carry one bias per output).
inline std::vector<int64_t> per_layer_param_counts(const ModelSpec& spec) {
  std::vector<int64_t> counts;
  ActShape cur{false, spec.input_shape[0], spec.input_shape[1], spec.input_shape[2], 0};
  const std::vector<ActShape> shapes = infer_shapes(spec);
  for (size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    int64_t n = 0;
    if (l.kind == LayerKind::Conv) {
      n = static_cast<int64_t>(l.out_channels) * cur.c * l.kernel * l.kernel;
    } else if (l.kind == LayerKind::Fc) {
      n = static_cast<int64_t>(cur.d) * l.out_features + l.out_features;
    }
    counts.push_back(n);
    cur = shapes[i];
  }
  return counts;
}

inline int64_t count_params(const ModelSpec& spec) {
  int64_t total = 0;
  for (int64_t n : per_layer_param_counts(spec)) total += n;
  return total;
}

// FLOPs for a single sample (batch 1). Convention: 2 FLOPs per
// multiply-accumulate for conv/fc, one comparison per window element for
// maxpool, one per element for relu; flatten is free.
inline std::vector<int64_t> per_layer_flops(const ModelSpec& spec) {
  std::vector<int64_t> flops;
  ActShape cur{false, spec.input_shape[0], spec.input_shape[1], spec.input_shape[2], 0};
  const std::vector<ActShape> shapes = infer_shapes(spec);
  for (size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    const ActShape& next = shapes[i];
    int64_t n = 0;
    switch (l.kind) {
      case LayerKind::Conv:
        n = 2LL * l.kernel * l.kernel * cur.c * next.c * next.h * next.w;
        break;
      case LayerKind::Fc:
        n = 2LL * cur.d * l.out_features;
        break;
      case LayerKind::MaxPool:
        n = static_cast<int64_t>(l.kernel) * l.kernel * next.c * next.h * next.w;
        break;
      case LayerKind::Relu:
        n = cur.flat ? cur.d : static_cast<int64_t>(cur.c) * cur.h * cur.w;
        break;
      case LayerKind::Flatten:
        n = 0;
        break;
    }
    flops.push_back(n);
    cur = shapes[i];
  }
  return flops;
}

inline int64_t count_flops(const ModelSpec& spec) {
  int64_t total = 0;
  for (int64_t n : per_layer_flops(spec)) total += n;
  return total;
}

inline std::string canonical_spec_string(const ModelSpec& spec) {
  std::ostringstream os;
  os << "in=" << spec.input_shape[0] << "x" << spec.input_shape[1] << "x" << spec.input_shape[2];
  os << ";classes=" << spec.num_classes;
  for (const LayerSpec& l : spec.layers) {
    os << ";" << layer_kind_name(l.kind);
    switch (l.kind) {
      case LayerKind::Conv:
        os << "(o=" << l.out_channels << ",k=" << l.kernel << ",s=" << l.stride << ",p=" << l.padding << ")";
        break;
      case LayerKind::MaxPool:
        os << "(w=" << l.kernel << ",s=" << l.stride << ")";
        break;
      case LayerKind::Fc:
        os << "(o=" << l.out_features << ")";
        break;
      default:
        break;
    }
  }
  return os.str();
}

inline uint64_t fnv1a64(const void* bytes, size_t len, uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline uint64_t spec_digest(const ModelSpec& spec) {
  const std::string s = canonical_spec_string(spec);
  return fnv1a64(s.data(), s.size());
}

// Hash of all parameter value bytes; used by the phase-isolation checks.
inline uint64_t param_digest(Model& m) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (Parameter* p : m.params()) {
    h = fnv1a64(p->value.data.data(), p->value.data.size() * sizeof(double), h);
  }
  return h;
}

}  // namespace dccl

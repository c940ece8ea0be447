#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dccl/errors.hpp"
#include "dccl/model.hpp"
#include "dccl/rng.hpp"

namespace dccl {

// Exact rational, so the alpha constraints and width rounding never suffer
// floating-point edge cases.
struct Rational {
  int64_t num = 1;
  int64_t den = 1;

  double value() const { return static_cast<double>(num) / static_cast<double>(den); }

  // Accepts "7/8", "1", or "0.125"-style decimals with up to 9 fraction digits.
  static Rational parse(const std::string& s) {
    const auto slash = s.find('/');
    if (slash != std::string::npos) {
      return {std::stoll(s.substr(0, slash)), std::stoll(s.substr(slash + 1))};
    }
    const auto dot = s.find('.');
    if (dot == std::string::npos) return {std::stoll(s), 1};
    const std::string frac = s.substr(dot + 1);
    if (frac.size() > 9) throw ConfigError(ConfigError::Kind::BadValue, "too many decimal digits in '" + s + "'");
    int64_t den = 1;
    for (size_t i = 0; i < frac.size(); ++i) den *= 10;
    const int64_t whole = dot == 0 ? 0 : std::stoll(s.substr(0, dot));
    return {whole * den + (frac.empty() ? 0 : std::stoll(frac)), den};
  }

  std::string str() const { return std::to_string(num) + "/" + std::to_string(den); }
};

struct SplitConfig {
  Rational alpha_cl{7, 8};
  Rational alpha_co{1, 8};
  int shared_prefix_len = 1;  // number of leading conv layers shared by all submodels
  bool heterogeneous = false;
};

inline void validate_split(const SplitConfig& cfg) {
  for (const Rational* a : {&cfg.alpha_cl, &cfg.alpha_co}) {
    if (a->den <= 0 || a->num <= 0 || a->num > a->den) {
      throw SpecError("alpha must be a rational in (0,1], got " + a->str());
    }
  }
  // alpha_cl^2 + alpha_co^2 <= 1, exactly in integers.
  const Rational& a = cfg.alpha_cl;
  const Rational& b = cfg.alpha_co;
  const __int128 lhs = static_cast<__int128>(a.num) * a.num * b.den * b.den +
                       static_cast<__int128>(b.num) * b.num * a.den * a.den;
  const __int128 rhs = static_cast<__int128>(a.den) * a.den * b.den * b.den;
  if (lhs > rhs) {
    throw SpecError("alpha_cl^2 + alpha_co^2 <= 1 violated: " + a.str() + ", " + b.str());
  }
  if (cfg.heterogeneous && cfg.shared_prefix_len != 0) {
    throw SpecError("heterogeneous mode requires shared_prefix_len == 0");
  }
  if (cfg.shared_prefix_len < 0) throw SpecError("shared_prefix_len must be non-negative");
}

// floor(alpha * n), clamped to at least one filter.
inline int scaled_width(int n, const Rational& alpha) {
  const int64_t w = static_cast<int64_t>(n) * alpha.num / alpha.den;
  return static_cast<int>(w < 1 ? 1 : w);
}

// Encoder spec plus the two branch specs produced by a vertical split.
struct SplitSpecs {
  ModelSpec encoder;  // may have zero layers
  ModelSpec cloud;
  ModelSpec co;
};

// Splits the base spec. The shared prefix covers the first
// `shared_prefix_len` conv layers together with any non-parametric layers
// (relu/pool) that follow them before the next conv; the remaining layers are
// width-scaled per branch. The final classifier keeps all classes on both
// branches since their logits are summed.
inline SplitSpecs split_base_spec(const ModelSpec& base, const SplitConfig& cfg) {
  validate_spec(base);
  validate_split(cfg);

  size_t cut = 0;
  int convs_taken = 0;
  if (cfg.shared_prefix_len > 0) {
    while (cut < base.layers.size()) {
      if (base.layers[cut].kind == LayerKind::Conv) {
        if (convs_taken == cfg.shared_prefix_len) break;
        ++convs_taken;
      } else if (base.layers[cut].kind == LayerKind::Fc || base.layers[cut].kind == LayerKind::Flatten) {
        break;  // the classifier head is never shared
      }
      ++cut;
    }
    if (convs_taken < cfg.shared_prefix_len) {
      throw SpecError("shared_prefix_len exceeds the number of conv layers before the classifier");
    }
  }

  SplitSpecs out;
  out.encoder.input_shape = base.input_shape;
  out.encoder.num_classes = base.num_classes;
  out.encoder.layers.assign(base.layers.begin(), base.layers.begin() + static_cast<int64_t>(cut));

  ActShape enc_out{false, base.input_shape[0], base.input_shape[1], base.input_shape[2], 0};
  if (cut > 0) {
    const std::vector<ActShape> shapes = infer_shapes(base);
    enc_out = shapes[cut - 1];
  }

  for (ModelSpec* branch : {&out.cloud, &out.co}) {
    branch->input_shape = {enc_out.c, enc_out.h, enc_out.w};
    branch->num_classes = base.num_classes;
  }
  for (size_t i = cut; i < base.layers.size(); ++i) {
    LayerSpec cl = base.layers[i];
    LayerSpec co = base.layers[i];
    if (base.layers[i].kind == LayerKind::Conv) {
      const int n = base.layers[i].out_channels;
      if (static_cast<int64_t>(n) * cfg.alpha_co.num < cfg.alpha_co.den ||
          static_cast<int64_t>(n) * cfg.alpha_cl.num < cfg.alpha_cl.den) {
        throw SpecError("conv layer with " + std::to_string(n) +
                        " filters is too narrow to give each submodel at least one filter");
      }
      cl.out_channels = scaled_width(n, cfg.alpha_cl);
      co.out_channels = scaled_width(n, cfg.alpha_co);
    }
    out.cloud.layers.push_back(cl);
    out.co.layers.push_back(co);
  }
  validate_spec(out.cloud);
  validate_spec(out.co);
  return out;
}

// The four-part decoupled structure. The cloud submodel and the co-submodel
// never see each other's activations; their classifier logits are summed at
// the output. The control model mirrors the co-submodel structurally but owns
// disjoint parameters.
struct DecoupledModel {
  Model encoder;  // empty in heterogeneous mode
  Model cloud;
  Model co;
  Model control;
  int num_classes = 0;
  bool heterogeneous = false;
  int phase_done = 0;  // progress marker checked by the training phases

  bool has_encoder() const { return !encoder.empty(); }

  Tensor encode(const Tensor& x) { return encoder.empty() ? x : encoder.forward(x); }

  Tensor cloud_logits(const Tensor& x) { return cloud.forward(encode(x)); }
  Tensor co_logits(const Tensor& x) { return co.forward(encode(x)); }
  Tensor control_logits(const Tensor& x) { return control.forward(encode(x)); }

  // Decoupled inference: cloud + co.
  Tensor decoupled_logits(const Tensor& x) {
    const Tensor h = encode(x);
    return add(cloud.forward(h), co.forward(h));
  }

  // Device-side inference: control + co.
  Tensor device_logits(const Tensor& x) {
    const Tensor h = encode(x);
    return add(control.forward(h), co.forward(h));
  }
};

// Shared assembly used by split_model, the heterogeneous builder and the
// bundled presets. Sub-seeds are derived from `seed`, so every part gets its
// own deterministic stream.
inline DecoupledModel build_decoupled(const std::optional<ModelSpec>& encoder_spec, const ModelSpec& cloud_spec,
                                      const ModelSpec& co_spec, uint64_t seed) {
  if (cloud_spec.num_classes != co_spec.num_classes) {
    throw SpecError("cloud and co submodels must share num_classes");
  }
  DecoupledModel dm;
  dm.num_classes = cloud_spec.num_classes;
  if (encoder_spec && !encoder_spec->layers.empty()) {
    dm.encoder = Model::build(*encoder_spec, mix_seed(seed, 0x01), /*require_classifier=*/false);
  }
  dm.cloud = Model::build(cloud_spec, mix_seed(seed, 0x02));
  dm.co = Model::build(co_spec, mix_seed(seed, 0x03));
  dm.control = Model::build(co_spec, mix_seed(seed, 0x04));
  return dm;
}

inline DecoupledModel split_model(const ModelSpec& base, const SplitConfig& cfg, uint64_t seed) {
  if (cfg.heterogeneous) throw SpecError("split_model builds homogeneous splits; use build_heterogeneous");
  const SplitSpecs specs = split_base_spec(base, cfg);
  std::optional<ModelSpec> enc;
  if (!specs.encoder.layers.empty()) enc = specs.encoder;
  return build_decoupled(enc, specs.cloud, specs.co, seed);
}

// Pre-trained-style mode: distinct backbones, no shared encoder.
inline DecoupledModel build_heterogeneous(const ModelSpec& cloud_spec, const ModelSpec& co_spec, uint64_t seed) {
  if (cloud_spec.num_classes != co_spec.num_classes) {
    throw SpecError("heterogeneous submodels must agree on num_classes");
  }
  if (cloud_spec.input_shape != co_spec.input_shape) {
    throw SpecError("heterogeneous submodels must agree on input_shape");
  }
  DecoupledModel dm = build_decoupled(std::nullopt, cloud_spec, co_spec, seed);
  dm.heterogeneous = true;
  return dm;
}

}  // namespace dccl

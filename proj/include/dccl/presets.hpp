#pragma once

#include "dccl/model.hpp"
#include "dccl/simnet.hpp"
#include "dccl/split.hpp"

namespace dccl {
namespace presets {

// 5-layer CNN used by the feasibility scenario: 4 conv layers and a
// classifier over 32x32x3 inputs. The first conv layer is the shared
// low-level encoder under the default split.
inline ModelSpec feasibility_base() {
  ModelSpec spec;
  spec.input_shape = {3, 32, 32};
  spec.num_classes = 10;
  spec.layers = {
      LayerSpec::conv(128, 5, 1, 2), LayerSpec::relu(),
      LayerSpec::conv(256, 3, 1, 1), LayerSpec::relu(), LayerSpec::maxpool(2, 2),
      LayerSpec::conv(256, 3, 1, 1), LayerSpec::relu(),
      LayerSpec::conv(128, 5, 1, 2), LayerSpec::relu(), LayerSpec::maxpool(2, 2),
      LayerSpec::flatten(),          LayerSpec::fc(10),
  };
  return spec;
}

inline SplitConfig feasibility_split() {
  SplitConfig cfg;
  cfg.alpha_cl = {7, 8};
  cfg.alpha_co = {1, 8};
  cfg.shared_prefix_len = 1;
  return cfg;
}

// The feasibility architecture with the published per-layer filter counts
// spelled out explicitly: cloud branch 224/224/112, co branch 32/32/32.
struct FeasibilitySpecs {
  ModelSpec encoder;
  ModelSpec cloud;
  ModelSpec co;
};

inline FeasibilitySpecs feasibility_decoupled_specs() {
  FeasibilitySpecs s;
  s.encoder.input_shape = {3, 32, 32};
  s.encoder.num_classes = 10;
  s.encoder.layers = {LayerSpec::conv(128, 5, 1, 2), LayerSpec::relu()};

  auto branch = [](int c1, int c2, int c3) {
    ModelSpec spec;
    spec.input_shape = {128, 32, 32};
    spec.num_classes = 10;
    spec.layers = {
        LayerSpec::conv(c1, 3, 1, 1), LayerSpec::relu(), LayerSpec::maxpool(2, 2),
        LayerSpec::conv(c2, 3, 1, 1), LayerSpec::relu(),
        LayerSpec::conv(c3, 5, 1, 2), LayerSpec::relu(), LayerSpec::maxpool(2, 2),
        LayerSpec::flatten(),         LayerSpec::fc(10),
    };
    return spec;
  };
  s.cloud = branch(224, 224, 112);
  s.co = branch(32, 32, 32);
  return s;
}

inline DecoupledModel build_feasibility_decoupled(uint64_t seed) {
  const FeasibilitySpecs s = feasibility_decoupled_specs();
  return build_decoupled(s.encoder, s.cloud, s.co, seed);
}

// Desk-scale CNN for the synthetic experiments. Small enough that a full
// baseline matrix runs in minutes, wide enough that the 1/8-width co branch
// alone cannot solve the task.
inline ModelSpec desk_base(int image_size = 12, int channels = 1, int num_classes = 10, int width = 32) {
  ModelSpec spec;
  spec.input_shape = {channels, image_size, image_size};
  spec.num_classes = num_classes;
  spec.layers = {
      LayerSpec::conv(8, 3, 1, 1),     LayerSpec::relu(),
      LayerSpec::conv(width, 3, 1, 1), LayerSpec::relu(), LayerSpec::maxpool(2, 2),
      LayerSpec::conv(width, 3, 1, 1), LayerSpec::relu(), LayerSpec::maxpool(2, 2),
      LayerSpec::flatten(),            LayerSpec::fc(num_classes),
  };
  return spec;
}

// A deliberately different backbone for the heterogeneous co-submodel: one
// 5x5 conv stage instead of two 3x3 stages.
inline ModelSpec desk_het_co(int image_size = 12, int channels = 1, int num_classes = 10, int width = 6) {
  ModelSpec spec;
  spec.input_shape = {channels, image_size, image_size};
  spec.num_classes = num_classes;
  spec.layers = {
      LayerSpec::conv(width, 5, 1, 2), LayerSpec::relu(), LayerSpec::maxpool(2, 2),
      LayerSpec::conv(width, 3, 1, 1), LayerSpec::relu(), LayerSpec::maxpool(2, 2),
      LayerSpec::flatten(),            LayerSpec::fc(num_classes),
  };
  return spec;
}

inline ExperimentConfig desk_experiment() {
  ExperimentConfig cfg;
  cfg.base_model = desk_base();
  cfg.split = feasibility_split();
  return cfg;
}

// Per-phase hyperparameters matching the published CIFAR10 schedule; kept as
// a preset for reference runs (the desk-scale defaults are calibrated for the
// synthetic data instead).
struct PhaseSet {
  PhaseHyperparams cloud, distill, collab, finetune;
  int rounds;
};

inline PhaseSet cifar10_phase_set() {
  PhaseSet s;
  s.cloud = {0.01, 15, 32, OptKind::Sgd};
  s.distill = {0.001, 15, 32, OptKind::Adam};
  s.collab = {0.01, 15, 32, OptKind::Sgd};
  s.finetune = {0.01, 10, 32, OptKind::Sgd};
  s.rounds = 15;
  return s;
}

}  // namespace presets
}  // namespace dccl

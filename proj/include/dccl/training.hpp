#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dccl/data.hpp"
#include "dccl/errors.hpp"
#include "dccl/loss.hpp"
#include "dccl/model.hpp"
#include "dccl/optim.hpp"
#include "dccl/rng.hpp"
#include "dccl/split.hpp"

namespace dccl {

struct PhaseHyperparams {
  double learning_rate = 0.01;
  int epochs = 1;
  int batch_size = 32;
  OptKind optimizer = OptKind::Sgd;
};

using LossCurve = std::vector<double>;  // per-epoch mean loss

// Which logits correct the co-submodel's loss during collaborative training:
// the distilled control model (DC-CCL), the true cloud submodel (the ideal
// decoupled baselines), or nothing (the no-control ablation and the
// small-model baselines).
enum class Correction { None, Control, Cloud };

struct CoDelta {
  std::vector<std::vector<double>> values;  // per co parameter, new - old
};

struct LocalTrainResult {
  CoDelta delta;
  LossCurve losses;
};

// Pre-classifier co-submodel feature plus the cached correction logits for the
// same raw sample; what classifier finetuning ships instead of raw samples.
struct FinetuneSample {
  std::vector<double> feature;
  std::vector<double> control_logits;  // empty when training without correction
  int label = 0;
};

enum class EvalMode { Decoupled, DeviceSide, CloudOnly, CoOnly };

namespace detail {

inline void require_phase(const DecoupledModel& dm, int phase, const char* what) {
  if (dm.phase_done < phase) {
    throw ContractError(std::string(what) + " requires phase " + std::to_string(phase) + " to be complete");
  }
}

inline void require_opt(const PhaseHyperparams& hp, OptKind kind, const char* what) {
  if (hp.optimizer != kind) {
    throw ContractError(std::string(what) + " uses the " + opt_kind_name(kind) + " optimizer");
  }
}

inline std::vector<size_t> index_range(size_t n) {
  std::vector<size_t> idx(n);
  for (size_t i = 0; i < n; ++i) idx[i] = i;
  return idx;
}

// Runs `m` over per-sample inputs in fixed-size batches and returns
// per-sample outputs. Every layer here treats batch rows independently, so
// the grouping does not affect the values.
inline std::vector<Tensor> forward_all(Model& m, const std::vector<Tensor>& inputs, int batch = 64) {
  std::vector<Tensor> out;
  out.reserve(inputs.size());
  for (size_t start = 0; start < inputs.size(); start += static_cast<size_t>(batch)) {
    const size_t end = std::min(inputs.size(), start + static_cast<size_t>(batch));
    std::vector<const Tensor*> rows;
    rows.reserve(end - start);
    for (size_t i = start; i < end; ++i) rows.push_back(&inputs[i]);
    Tensor res = m.forward(stack_batch(rows));
    for (size_t i = 0; i < end - start; ++i) out.push_back(batch_row(res, static_cast<int>(i)));
  }
  return out;
}

// Per-sample encoder outputs (raw images when there is no shared encoder).
inline std::vector<Tensor> encode_all(DecoupledModel& dm, const LabeledDataset& data) {
  std::vector<Tensor> images;
  images.reserve(data.size());
  for (const LabeledSample& s : data.samples) images.push_back(s.image);
  if (!dm.has_encoder()) return images;
  return forward_all(dm.encoder, images);
}

struct BatchView {
  Tensor inputs;
  std::vector<int> labels;
  std::vector<size_t> idx;
};

inline BatchView make_batch(const std::vector<Tensor>& inputs, const std::vector<int>& labels,
                            const std::vector<size_t>& order, size_t start, size_t end) {
  BatchView b;
  std::vector<const Tensor*> rows;
  rows.reserve(end - start);
  for (size_t i = start; i < end; ++i) {
    rows.push_back(&inputs[order[i]]);
    b.labels.push_back(labels[order[i]]);
    b.idx.push_back(order[i]);
  }
  b.inputs = stack_batch(rows);
  return b;
}

}  // namespace detail

// Phase 1: trains the shared encoder (when present) and the cloud submodel
// with plain cross entropy on the cloud split. Nothing else is touched.
inline LossCurve train_cloud_submodel(DecoupledModel& dm, const LabeledDataset& cloud_train,
                                      const PhaseHyperparams& hp, uint64_t seed) {
  if (cloud_train.empty()) throw ContractError("cloud training on an empty dataset");
  detail::require_opt(hp, OptKind::Sgd, "cloud submodel training");
  LossCurve curve;
  SeededRng rng(seed);
  std::vector<Tensor> images;
  std::vector<int> labels;
  for (const LabeledSample& s : cloud_train.samples) {
    images.push_back(s.image);
    labels.push_back(s.label);
  }
  std::vector<Parameter*> params = dm.cloud.params();
  if (dm.has_encoder()) {
    for (Parameter* p : dm.encoder.params()) params.push_back(p);
  }
  Optimizer opt(hp.optimizer, hp.learning_rate);
  std::vector<size_t> order = detail::index_range(images.size());
  for (int epoch = 0; epoch < hp.epochs; ++epoch) {
    rng.shuffle(order);
    double total = 0.0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(hp.batch_size)) {
      const size_t end = std::min(order.size(), start + static_cast<size_t>(hp.batch_size));
      detail::BatchView b = detail::make_batch(images, labels, order, start, end);
      const Tensor h = dm.has_encoder() ? dm.encoder.forward(b.inputs) : b.inputs;
      const Tensor z = dm.cloud.forward(h);
      const LossResult loss = softmax_cross_entropy(z, b.labels);
      dm.cloud.zero_grad();
      if (dm.has_encoder()) dm.encoder.zero_grad();
      const Tensor dh = dm.cloud.backward(loss.grad);
      if (dm.has_encoder()) dm.encoder.backward(dh);
      opt.step(params);
      total += loss.value * static_cast<double>(end - start);
    }
    curve.push_back(total / static_cast<double>(order.size()));
  }
  if (dm.phase_done < 1) dm.phase_done = 1;
  return curve;
}

// Phase 2: knowledge distillation. Freezes the encoder and the cloud
// submodel, then trains the control model with Adam on the MSE between the
// two logit vectors over the cloud split. The frozen teacher outputs are
// computed once and reused across epochs.
inline LossCurve distill_control(DecoupledModel& dm, const LabeledDataset& cloud_train, const PhaseHyperparams& hp,
                                 uint64_t seed) {
  if (cloud_train.empty()) throw ContractError("distillation on an empty dataset");
  detail::require_phase(dm, 1, "knowledge distillation");
  detail::require_opt(hp, OptKind::Adam, "knowledge distillation");
  dm.encoder.set_frozen(true);
  dm.cloud.set_frozen(true);

  const std::vector<Tensor> features = detail::encode_all(dm, cloud_train);
  const std::vector<Tensor> teacher = detail::forward_all(dm.cloud, features);
  std::vector<int> labels(cloud_train.size(), 0);  // unused by the loss

  LossCurve curve;
  SeededRng rng(seed);
  Adam opt(hp.learning_rate);
  const std::vector<Parameter*> params = dm.control.params();
  std::vector<size_t> order = detail::index_range(features.size());
  for (int epoch = 0; epoch < hp.epochs; ++epoch) {
    rng.shuffle(order);
    double total = 0.0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(hp.batch_size)) {
      const size_t end = std::min(order.size(), start + static_cast<size_t>(hp.batch_size));
      detail::BatchView b = detail::make_batch(features, labels, order, start, end);
      std::vector<const Tensor*> trows;
      for (size_t i = start; i < end; ++i) trows.push_back(&teacher[order[i]]);
      const Tensor target = stack_batch(trows);
      const Tensor z = dm.control.forward(b.inputs);
      const LossResult loss = mse_loss(z, target);
      dm.control.zero_grad();
      dm.control.backward(loss.grad);
      opt.step(params);
      total += loss.value * static_cast<double>(end - start);
    }
    curve.push_back(total / static_cast<double>(order.size()));
  }
  dm.control.set_frozen(true);
  if (dm.phase_done < 2) dm.phase_done = 2;
  return curve;
}

// Phase 3 kernel: local training of the co-submodel for `epochs` epochs under
// a frozen correction. The loss is cross entropy on the sum of the correction
// logits and the co logits; gradients reach only co parameters. Returns the
// parameter delta for parameter-server aggregation.
inline LocalTrainResult local_train_co(DecoupledModel& dm, const LabeledDataset& local_data,
                                       const PhaseHyperparams& hp, int epochs, uint64_t seed, Correction corr) {
  if (local_data.empty()) throw ContractError("local co training on an empty dataset");
  detail::require_opt(hp, OptKind::Sgd, "co-submodel training");
  if (dm.has_encoder() && !dm.encoder.all_frozen()) {
    throw ContractError("shared encoder must be frozen during collaborative training");
  }
  switch (corr) {
    case Correction::Control:
      detail::require_phase(dm, 2, "control-corrected co training");
      if (!dm.control.all_frozen()) throw ContractError("unfrozen control model during collaborative training");
      break;
    case Correction::Cloud:
      detail::require_phase(dm, 1, "cloud-corrected co training");
      if (!dm.cloud.all_frozen()) throw ContractError("cloud submodel must be frozen as a correction source");
      break;
    case Correction::None:
      detail::require_phase(dm, 1, "co training");
      break;
  }

  const std::vector<Tensor> features = detail::encode_all(dm, local_data);
  std::vector<Tensor> corr_logits;
  if (corr == Correction::Control) corr_logits = detail::forward_all(dm.control, features);
  if (corr == Correction::Cloud) corr_logits = detail::forward_all(dm.cloud, features);
  std::vector<int> labels;
  for (const LabeledSample& s : local_data.samples) labels.push_back(s.label);

  const std::vector<Parameter*> params = dm.co.params();
  std::vector<std::vector<double>> before;
  for (const Parameter* p : params) before.push_back(p->value.data);

  LocalTrainResult res;
  SeededRng rng(seed);
  Optimizer opt(OptKind::Sgd, hp.learning_rate);
  std::vector<size_t> order = detail::index_range(features.size());
  for (int epoch = 0; epoch < epochs; ++epoch) {
    rng.shuffle(order);
    double total = 0.0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(hp.batch_size)) {
      const size_t end = std::min(order.size(), start + static_cast<size_t>(hp.batch_size));
      detail::BatchView b = detail::make_batch(features, labels, order, start, end);
      Tensor z = dm.co.forward(b.inputs);
      if (corr != Correction::None) {
        for (size_t i = start; i < end; ++i) {
          const std::vector<double>& extra = corr_logits[order[i]].data;
          double* row = z.data.data() + static_cast<int64_t>(i - start) * dm.num_classes;
          for (int k = 0; k < dm.num_classes; ++k) row[k] += extra[static_cast<size_t>(k)];
        }
      }
      const LossResult loss = softmax_cross_entropy(z, b.labels);
      dm.co.zero_grad();
      dm.co.backward(loss.grad);
      opt.step(params);
      total += loss.value * static_cast<double>(end - start);
    }
    res.losses.push_back(total / static_cast<double>(order.size()));
  }

  res.delta.values.resize(params.size());
  for (size_t i = 0; i < params.size(); ++i) {
    const std::vector<double>& now = params[i]->value.data;
    res.delta.values[i].resize(now.size());
    for (size_t j = 0; j < now.size(); ++j) res.delta.values[i][j] = now[j] - before[i][j];
  }
  return res;
}

// Computes (feature, correction logits, label) triples for classifier
// finetuning. Features come from the co-submodel's high-level encoder;
// correction logits are cached from the same raw samples.
inline std::vector<FinetuneSample> extract_features(DecoupledModel& dm, const LabeledDataset& data,
                                                    Correction corr) {
  const std::vector<Tensor> features = detail::encode_all(dm, data);
  std::vector<Tensor> hl;
  {
    std::vector<Tensor> out;
    out.reserve(features.size());
    for (size_t start = 0; start < features.size(); start += 64) {
      const size_t end = std::min(features.size(), start + 64);
      std::vector<const Tensor*> rows;
      for (size_t i = start; i < end; ++i) rows.push_back(&features[i]);
      Tensor res = dm.co.forward_features(stack_batch(rows));
      for (size_t i = 0; i < end - start; ++i) out.push_back(batch_row(res, static_cast<int>(i)));
    }
    hl = std::move(out);
  }
  std::vector<Tensor> corr_logits;
  if (corr == Correction::Control) corr_logits = detail::forward_all(dm.control, features);
  if (corr == Correction::Cloud) corr_logits = detail::forward_all(dm.cloud, features);

  std::vector<FinetuneSample> out;
  out.reserve(data.size());
  for (size_t i = 0; i < data.size(); ++i) {
    FinetuneSample fs;
    fs.feature = hl[i].data;
    if (corr != Correction::None) fs.control_logits = corr_logits[i].data;
    fs.label = data.samples[i].label;
    out.push_back(std::move(fs));
  }
  return out;
}

// Serialized size of one finetuning feature record: label u32 plus the
// feature and correction-logit vectors as f64. This is what the channel
// charges for the phase-4 feature transfer.
inline uint64_t feature_record_bytes(const FinetuneSample& fs) {
  return 4 + 8ULL * fs.feature.size() + 8ULL * fs.control_logits.size();
}

// Phase 4: retrains only the co-submodel's final classifier over high-level
// features from both sides, with the same summed-logit loss as phase 3.
inline LossCurve finetune_classifier(DecoupledModel& dm, const std::vector<FinetuneSample>& features,
                                     const PhaseHyperparams& hp, uint64_t seed) {
  if (features.empty()) throw ContractError("finetuning on an empty feature set");
  detail::require_phase(dm, 3, "classifier finetuning");
  detail::require_opt(hp, OptKind::Sgd, "classifier finetuning");
  Linear& fc = dm.co.classifier();
  const int d = fc.in_features();
  const int k = fc.out_features();
  const bool corrected = !features[0].control_logits.empty();
  for (const FinetuneSample& fs : features) {
    if (static_cast<int>(fs.feature.size()) != d) {
      throw ShapeError("feature width " + std::to_string(fs.feature.size()) + " does not match classifier input " +
                       std::to_string(d));
    }
    if (corrected != !fs.control_logits.empty() ||
        (corrected && static_cast<int>(fs.control_logits.size()) != k)) {
      throw ShapeError("inconsistent correction logits in feature set");
    }
  }

  LossCurve curve;
  SeededRng rng(seed);
  Optimizer opt(OptKind::Sgd, hp.learning_rate);
  const std::vector<Parameter*> params = {&fc.weight(), &fc.bias()};
  std::vector<size_t> order = detail::index_range(features.size());
  for (int epoch = 0; epoch < hp.epochs; ++epoch) {
    rng.shuffle(order);
    double total = 0.0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(hp.batch_size)) {
      const size_t end = std::min(order.size(), start + static_cast<size_t>(hp.batch_size));
      const int n = static_cast<int>(end - start);
      Tensor x({n, d});
      std::vector<int> labels(static_cast<size_t>(n));
      for (int i = 0; i < n; ++i) {
        const FinetuneSample& fs = features[order[start + static_cast<size_t>(i)]];
        std::copy(fs.feature.begin(), fs.feature.end(), x.data.begin() + static_cast<int64_t>(i) * d);
        labels[static_cast<size_t>(i)] = fs.label;
      }
      Tensor z = fc.forward(x);
      if (corrected) {
        for (int i = 0; i < n; ++i) {
          const FinetuneSample& fs = features[order[start + static_cast<size_t>(i)]];
          double* row = z.data.data() + static_cast<int64_t>(i) * k;
          for (int j = 0; j < k; ++j) row[j] += fs.control_logits[static_cast<size_t>(j)];
        }
      }
      const LossResult loss = softmax_cross_entropy(z, labels);
      fc.weight().value.clear_grad();
      fc.bias().value.clear_grad();
      fc.backward(loss.grad);
      opt.step(params);
      total += loss.value * static_cast<double>(n);
    }
    curve.push_back(total / static_cast<double>(order.size()));
  }
  if (dm.phase_done < 4) dm.phase_done = 4;
  return curve;
}

// Accuracy of a decoupled model on a test set under the requested logit sum.
inline double evaluate(DecoupledModel& dm, const LabeledDataset& test, EvalMode mode) {
  if (test.empty()) throw ContractError("evaluation on an empty test set");
  int correct = 0;
  const int batch = 64;
  for (size_t start = 0; start < test.size(); start += static_cast<size_t>(batch)) {
    const size_t end = std::min(test.size(), start + static_cast<size_t>(batch));
    std::vector<const Tensor*> rows;
    for (size_t i = start; i < end; ++i) rows.push_back(&test.samples[i].image);
    const Tensor x = stack_batch(rows);
    const Tensor h = dm.encode(x);
    Tensor z;
    switch (mode) {
      case EvalMode::Decoupled: z = add(dm.cloud.forward(h), dm.co.forward(h)); break;
      case EvalMode::DeviceSide: z = add(dm.control.forward(h), dm.co.forward(h)); break;
      case EvalMode::CloudOnly: z = dm.cloud.forward(h); break;
      case EvalMode::CoOnly: z = dm.co.forward(h); break;
    }
    for (size_t i = start; i < end; ++i) {
      if (argmax_row(z, static_cast<int>(i - start)) == test.samples[i].label) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

// Plain supervised training of a stand-alone model (the base-model and
// small-model baselines).
inline LossCurve train_supervised(Model& m, const LabeledDataset& data, const PhaseHyperparams& hp, int epochs,
                                  uint64_t seed) {
  if (data.empty()) throw ContractError("supervised training on an empty dataset");
  detail::require_opt(hp, OptKind::Sgd, "supervised training");
  std::vector<Tensor> images;
  std::vector<int> labels;
  for (const LabeledSample& s : data.samples) {
    images.push_back(s.image);
    labels.push_back(s.label);
  }
  LossCurve curve;
  SeededRng rng(seed);
  Optimizer opt(OptKind::Sgd, hp.learning_rate);
  const std::vector<Parameter*> params = m.params();
  std::vector<size_t> order = detail::index_range(images.size());
  for (int epoch = 0; epoch < epochs; ++epoch) {
    rng.shuffle(order);
    double total = 0.0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(hp.batch_size)) {
      const size_t end = std::min(order.size(), start + static_cast<size_t>(hp.batch_size));
      detail::BatchView b = detail::make_batch(images, labels, order, start, end);
      const Tensor z = m.forward(b.inputs);
      const LossResult loss = softmax_cross_entropy(z, b.labels);
      m.zero_grad();
      m.backward(loss.grad);
      opt.step(params);
      total += loss.value * static_cast<double>(end - start);
    }
    curve.push_back(total / static_cast<double>(order.size()));
  }
  return curve;
}

inline double evaluate_model(Model& m, const LabeledDataset& test) {
  if (test.empty()) throw ContractError("evaluation on an empty test set");
  int correct = 0;
  const int batch = 64;
  for (size_t start = 0; start < test.size(); start += static_cast<size_t>(batch)) {
    const size_t end = std::min(test.size(), start + static_cast<size_t>(batch));
    std::vector<const Tensor*> rows;
    for (size_t i = start; i < end; ++i) rows.push_back(&test.samples[i].image);
    const Tensor z = m.forward(stack_batch(rows));
    for (size_t i = start; i < end; ++i) {
      if (argmax_row(z, static_cast<int>(i - start)) == test.samples[i].label) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

}  // namespace dccl

#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "dccl/channel.hpp"
#include "dccl/data.hpp"
#include "dccl/errors.hpp"
#include "dccl/serialize.hpp"
#include "dccl/split.hpp"
#include "dccl/training.hpp"

namespace dccl {

enum class Method {
  DcCcl,
  CentralB,
  CloudB,
  CentralD,
  DistrD,
  DistrS,
  IncrS,
  DcCclNoControl,
  DcCclNoFinetune,
};

inline const std::vector<std::pair<Method, std::string>>& method_names() {
  static const std::vector<std::pair<Method, std::string>> names = {
      {Method::DcCcl, "DC-CCL"},
      {Method::CentralB, "Central-B"},
      {Method::CloudB, "Cloud-B"},
      {Method::CentralD, "Central-D"},
      {Method::DistrD, "Distr-D"},
      {Method::DistrS, "Distr-S"},
      {Method::IncrS, "Incr-S"},
      {Method::DcCclNoControl, "DC-CCL-no-control"},
      {Method::DcCclNoFinetune, "DC-CCL-no-finetune"},
  };
  return names;
}

inline std::string method_name(Method m) {
  for (const auto& [method, name] : method_names()) {
    if (method == m) return name;
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  for (const auto& [method, name] : method_names()) {
    if (name == s) return method;
  }
  throw ConfigError(ConfigError::Kind::UnknownMethod, "'" + s + "'");
}

inline bool method_is_collaborative(Method m) {
  switch (m) {
    case Method::DcCcl:
    case Method::DistrD:
    case Method::DistrS:
    case Method::DcCclNoControl:
    case Method::DcCclNoFinetune:
      return true;
    default:
      return false;
  }
}

struct DatasetConfig {
  bool from_file = false;
  std::string train_path, test_path;
  int num_classes = 10;
  int samples_per_class = 120;
  int test_samples_per_class = 40;
  int image_size = 12;
  int channels = 1;
  double noise_std = 0.5;
};

struct ExperimentConfig {
  std::string name = "experiment";
  DatasetConfig dataset;
  std::vector<int> device_classes = {8, 9};
  double augment_fraction = 0.1;
  ModelSpec base_model;
  SplitConfig split;
  std::optional<ModelSpec> het_co_model;  // heterogeneous co/control backbone; base_model is the cloud backbone
  std::string cloud_checkpoint;           // optional pre-trained cloud submodel (heterogeneous mode)
  PhaseHyperparams hp_cloud{0.05, 12, 32, OptKind::Sgd};
  PhaseHyperparams hp_distill{0.003, 10, 32, OptKind::Adam};
  PhaseHyperparams hp_collab{0.05, 15, 32, OptKind::Sgd};  // epochs = budget of the centralized variants
  PhaseHyperparams hp_finetune{0.02, 8, 32, OptKind::Sgd};
  int rounds = 8;
  int cloud_epochs_per_round = 1;
  int device_epochs_per_round = 4;
  Method method = Method::DcCcl;
  uint64_t seed = 1;
  bool finetune_on_device = false;
};

struct RoundTrace {
  int round = 0;
  int cloud_epochs = 0;
  int device_epochs = 0;
  double accuracy = 0.0;
  uint64_t cum_uplink_bytes = 0;
  uint64_t cum_downlink_bytes = 0;
};

struct MetricsRecord {
  std::string method;
  uint64_t seed = 0;
  double final_accuracy = 0.0;
  // Per-mode accuracies; negative means not applicable for the method.
  double acc_decoupled = -1.0;
  double acc_device_side = -1.0;
  double acc_cloud_only = -1.0;
  double acc_co_only = -1.0;
  uint64_t uplink_bytes = 0;
  uint64_t downlink_bytes = 0;
  uint64_t setup_bytes = 0;
  uint64_t per_round_bytes = 0;
  uint64_t finetune_transfer_bytes = 0;
  double wall_seconds = 0.0;
  int64_t device_params = 0;
  int64_t device_flops = 0;
  int64_t cloud_params = 0;
  int64_t base_params = 0;
};

struct RunResult {
  MetricsRecord metrics;
  std::vector<RoundTrace> traces;
  Channel channel;
  std::optional<DecoupledModel> final_decoupled;
  std::optional<Model> final_model;
};

// Elementwise weighted average of two structurally identical submodels.
// Weights must be non-negative and sum to one.
inline Model aggregate(const Model& co_cloud, const Model& co_device, double w_cloud, double w_device) {
  if (w_cloud < 0.0 || w_device < 0.0 || std::abs(w_cloud + w_device - 1.0) > 1e-12) {
    throw ContractError("aggregation weights must be non-negative and sum to 1");
  }
  Model out = co_cloud;
  Model other = co_device;  // copy so params() can be taken non-const
  const std::vector<Parameter*> a = out.params();
  const std::vector<Parameter*> b = other.params();
  if (a.size() != b.size()) throw ShapeError("aggregate: parameter count mismatch");
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i]->value.shape != b[i]->value.shape) throw ShapeError("aggregate: parameter shape mismatch");
    for (size_t j = 0; j < a[i]->value.data.size(); ++j) {
      a[i]->value.data[j] = w_cloud * a[i]->value.data[j] + w_device * b[i]->value.data[j];
    }
    a[i]->value.clear_grad();
  }
  return out;
}

namespace detail {

struct PreparedData {
  LabeledDataset full_train;
  PartitionedDataset part;
};

inline PreparedData prepare_data(const ExperimentConfig& cfg) {
  PreparedData d;
  if (cfg.dataset.from_file) {
    d.full_train = load_dataset(cfg.dataset.train_path);
    d.part.test = load_dataset(cfg.dataset.test_path);
  } else {
    d.full_train = generate_synthetic(cfg.dataset.num_classes, cfg.dataset.samples_per_class,
                                      cfg.dataset.image_size, cfg.dataset.channels, cfg.dataset.noise_std,
                                      mix_seed(cfg.seed, 0x10));
    d.part.test = generate_synthetic(cfg.dataset.num_classes, cfg.dataset.test_samples_per_class,
                                     cfg.dataset.image_size, cfg.dataset.channels, cfg.dataset.noise_std,
                                     mix_seed(cfg.seed, 0x11));
  }
  const std::set<int> device_classes(cfg.device_classes.begin(), cfg.device_classes.end());
  d.part = partition_by_class(d.full_train, d.part.test, device_classes, cfg.augment_fraction,
                              mix_seed(cfg.seed, 0x40));
  return d;
}

inline DecoupledModel build_from_config(const ExperimentConfig& cfg) {
  if (cfg.split.heterogeneous) {
    if (!cfg.het_co_model) {
      throw ConfigError(ConfigError::Kind::MissingField, "heterogeneous mode needs a co_model spec");
    }
    return build_heterogeneous(cfg.base_model, *cfg.het_co_model, mix_seed(cfg.seed, 0x20));
  }
  return split_model(cfg.base_model, cfg.split, mix_seed(cfg.seed, 0x20));
}

// The small model of the Distr-S / Incr-S baselines: shared encoder plus the
// co branch, assembled into one spec.
inline ModelSpec small_model_spec(const ExperimentConfig& cfg) {
  if (cfg.split.heterogeneous) return *cfg.het_co_model;
  const SplitSpecs specs = split_base_spec(cfg.base_model, cfg.split);
  ModelSpec small;
  small.input_shape = cfg.base_model.input_shape;
  small.num_classes = cfg.base_model.num_classes;
  small.layers = specs.encoder.layers;
  small.layers.insert(small.layers.end(), specs.co.layers.begin(), specs.co.layers.end());
  return small;
}

inline uint64_t decoupled_payload_bytes(DecoupledModel& dm) {
  uint64_t n = serialized_model_size(dm.cloud) + serialized_model_size(dm.co);
  if (dm.has_encoder()) n += serialized_model_size(dm.encoder);
  return n;
}

inline uint64_t features_payload_bytes(const std::vector<FinetuneSample>& fs) {
  uint64_t n = 0;
  for (const FinetuneSample& f : fs) n += feature_record_bytes(f);
  return n;
}

inline void fill_mode_accuracies(DecoupledModel& dm, const LabeledDataset& test, MetricsRecord& m,
                                 bool has_control) {
  m.acc_decoupled = evaluate(dm, test, EvalMode::Decoupled);
  m.acc_cloud_only = evaluate(dm, test, EvalMode::CloudOnly);
  m.acc_co_only = evaluate(dm, test, EvalMode::CoOnly);
  if (has_control) m.acc_device_side = evaluate(dm, test, EvalMode::DeviceSide);
}

// Runs DC-CCL or one of its ablations; Distr-D and Central-D reuse this with
// the correction switched to the true cloud submodel.
inline RunResult run_decoupled_method(const ExperimentConfig& cfg) {
  const Method method = cfg.method;
  const bool use_control = method == Method::DcCcl || method == Method::DcCclNoFinetune;
  const bool do_finetune = cfg.hp_finetune.epochs > 0 && method != Method::DcCclNoFinetune &&
                           method != Method::CentralD;
  const bool distributed = method != Method::CentralD;
  const bool ship_full_model = method == Method::DistrD;
  const Correction corr = use_control ? Correction::Control
                          : (method == Method::DistrD || method == Method::CentralD) ? Correction::Cloud
                                                                                     : Correction::None;

  RunResult res;
  PreparedData data = prepare_data(cfg);
  DecoupledModel dm = build_from_config(cfg);

  // Phase 1 (or a pre-trained cloud submodel).
  if (!cfg.cloud_checkpoint.empty()) {
    if (!cfg.split.heterogeneous) {
      throw ConfigError(ConfigError::Kind::ConstraintViolation,
                        "cloud_checkpoint is only valid in heterogeneous mode");
    }
    dm.cloud = load_model(cfg.cloud_checkpoint, cfg.base_model);
    dm.phase_done = 1;
  } else {
    train_cloud_submodel(dm, data.part.cloud_train, cfg.hp_cloud, mix_seed(cfg.seed, 0x30));
  }
  dm.encoder.set_frozen(true);
  dm.cloud.set_frozen(true);

  // Phase 2.
  if (use_control) {
    distill_control(dm, data.part.cloud_train, cfg.hp_distill, mix_seed(cfg.seed, 0x31));
  } else {
    dm.control.zero_params();
    dm.control.set_frozen(true);
    if (dm.phase_done < 2) dm.phase_done = 2;
  }

  const uint64_t co_bytes = serialized_model_size(dm.co);
  const double n_cloud = static_cast<double>(data.part.cloud_train.size());
  const double n_device = static_cast<double>(data.part.device_train.size());
  const double w_cloud = n_cloud / (n_cloud + n_device);
  const double w_device = n_device / (n_cloud + n_device);

  if (distributed) {
    // One-time setup: what the device cannot train without.
    if (!ship_full_model) {
      if (dm.has_encoder()) {
        res.channel.send(Direction::Downlink, "encoder", serialized_model_size(dm.encoder), 0);
      }
      if (use_control) {
        res.channel.send(Direction::Downlink, "control_model", serialized_model_size(dm.control), 0);
      }
      res.channel.send(Direction::Downlink, "co_submodel", co_bytes, 0);
    }
    DecoupledModel device_dm = dm;
    if (!ship_full_model) device_dm.cloud = Model();  // never leaves the cloud

    res.metrics.setup_bytes = res.channel.total_bytes();
    for (int round = 1; round <= cfg.rounds; ++round) {
      if (ship_full_model) {
        res.channel.send(Direction::Downlink, "decoupled_model", decoupled_payload_bytes(dm), round);
      } else {
        res.channel.send(Direction::Downlink, "co_submodel", co_bytes, round);
      }
      device_dm.co = dm.co;
      local_train_co(dm, data.part.cloud_train, cfg.hp_collab, cfg.cloud_epochs_per_round,
                     mix_seed(cfg.seed, 0x32, static_cast<uint64_t>(round) * 2), corr);
      local_train_co(device_dm, data.part.device_train, cfg.hp_collab, cfg.device_epochs_per_round,
                     mix_seed(cfg.seed, 0x32, static_cast<uint64_t>(round) * 2 + 1), corr);
      if (ship_full_model) {
        res.channel.send(Direction::Uplink, "decoupled_model", decoupled_payload_bytes(device_dm), round);
      } else {
        res.channel.send(Direction::Uplink, "co_submodel", serialized_model_size(device_dm.co), round);
      }
      dm.co = aggregate(dm.co, device_dm.co, w_cloud, w_device);
      RoundTrace tr;
      tr.round = round;
      tr.cloud_epochs = cfg.cloud_epochs_per_round;
      tr.device_epochs = cfg.device_epochs_per_round;
      tr.accuracy = evaluate(dm, data.part.test, EvalMode::Decoupled);
      tr.cum_uplink_bytes = res.channel.uplink_bytes();
      tr.cum_downlink_bytes = res.channel.downlink_bytes();
      res.traces.push_back(tr);
    }
  } else {
    // Central-D: the same co training, on one node, over the full train set.
    local_train_co(dm, data.full_train, cfg.hp_collab, cfg.hp_collab.epochs, mix_seed(cfg.seed, 0x32), corr);
  }
  if (dm.phase_done < 3) dm.phase_done = 3;

  if (do_finetune) {
    std::vector<FinetuneSample> cloud_f = extract_features(dm, data.part.cloud_train, corr);
    std::vector<FinetuneSample> device_f = extract_features(dm, data.part.device_train, corr);
    if (distributed) {
      const int transfer_round = cfg.rounds + 1;
      if (cfg.finetune_on_device) {
        res.channel.send(Direction::Downlink, "features", features_payload_bytes(cloud_f), transfer_round);
      } else {
        res.channel.send(Direction::Uplink, "features", features_payload_bytes(device_f), transfer_round);
      }
      res.metrics.finetune_transfer_bytes = features_payload_bytes(cfg.finetune_on_device ? cloud_f : device_f);
    }
    std::vector<FinetuneSample> all = std::move(cloud_f);
    all.insert(all.end(), device_f.begin(), device_f.end());
    finetune_classifier(dm, all, cfg.hp_finetune, mix_seed(cfg.seed, 0x33));
  }

  res.metrics.final_accuracy = evaluate(dm, data.part.test, EvalMode::Decoupled);
  fill_mode_accuracies(dm, data.part.test, res.metrics, use_control);
  if (cfg.rounds > 0 && distributed) {
    res.metrics.per_round_bytes = ship_full_model ? 2 * decoupled_payload_bytes(dm) : 2 * co_bytes;
  }
  res.final_decoupled = std::move(dm);
  return res;
}

inline RunResult run_base_model_method(const ExperimentConfig& cfg) {
  RunResult res;
  PreparedData data = prepare_data(cfg);
  Model m = Model::build(cfg.base_model, mix_seed(cfg.seed, 0x21));
  const LabeledDataset& train = cfg.method == Method::CentralB ? data.full_train : data.part.cloud_train;
  train_supervised(m, train, cfg.hp_cloud, cfg.hp_cloud.epochs, mix_seed(cfg.seed, 0x30));
  res.metrics.final_accuracy = evaluate_model(m, data.part.test);
  res.final_model = std::move(m);
  return res;
}

inline RunResult run_small_model_method(const ExperimentConfig& cfg) {
  RunResult res;
  PreparedData data = prepare_data(cfg);
  const ModelSpec spec = small_model_spec(cfg);
  Model m = Model::build(spec, mix_seed(cfg.seed, 0x22));
  const uint64_t small_bytes = serialized_model_size(m);

  if (cfg.method == Method::DistrS) {
    const double n_cloud = static_cast<double>(data.part.cloud_train.size());
    const double n_device = static_cast<double>(data.part.device_train.size());
    const double w_cloud = n_cloud / (n_cloud + n_device);
    const double w_device = n_device / (n_cloud + n_device);
    for (int round = 1; round <= cfg.rounds; ++round) {
      res.channel.send(Direction::Downlink, "small_model", small_bytes, round);
      Model device_m = m;
      train_supervised(m, data.part.cloud_train, cfg.hp_collab, cfg.cloud_epochs_per_round,
                       mix_seed(cfg.seed, 0x32, static_cast<uint64_t>(round) * 2));
      train_supervised(device_m, data.part.device_train, cfg.hp_collab, cfg.device_epochs_per_round,
                       mix_seed(cfg.seed, 0x32, static_cast<uint64_t>(round) * 2 + 1));
      res.channel.send(Direction::Uplink, "small_model", small_bytes, round);
      m = aggregate(m, device_m, w_cloud, w_device);
      RoundTrace tr;
      tr.round = round;
      tr.cloud_epochs = cfg.cloud_epochs_per_round;
      tr.device_epochs = cfg.device_epochs_per_round;
      tr.accuracy = evaluate_model(m, data.part.test);
      tr.cum_uplink_bytes = res.channel.uplink_bytes();
      tr.cum_downlink_bytes = res.channel.downlink_bytes();
      res.traces.push_back(tr);
    }
    if (cfg.rounds > 0) res.metrics.per_round_bytes = 2 * small_bytes;
  } else {
    // Incr-S: sequential training, cloud split first, device split second.
    train_supervised(m, data.part.cloud_train, cfg.hp_cloud, cfg.hp_cloud.epochs, mix_seed(cfg.seed, 0x30));
    res.channel.send(Direction::Downlink, "small_model", small_bytes, 1);
    train_supervised(m, data.part.device_train, cfg.hp_collab, cfg.rounds * cfg.device_epochs_per_round,
                     mix_seed(cfg.seed, 0x32, 1));
    res.channel.send(Direction::Uplink, "small_model", small_bytes, 1);
  }

  if (cfg.hp_finetune.epochs > 0) {
    // Classifier finetuning over high-level features from both sides, plain
    // cross entropy (the small model has no correction source).
    auto features_of = [&](const LabeledDataset& ds) {
      std::vector<FinetuneSample> out;
      std::vector<Tensor> images;
      for (const LabeledSample& s : ds.samples) images.push_back(s.image);
      std::vector<Tensor> hl;
      for (size_t start = 0; start < images.size(); start += 64) {
        const size_t end = std::min(images.size(), start + 64);
        std::vector<const Tensor*> rows;
        for (size_t i = start; i < end; ++i) rows.push_back(&images[i]);
        Tensor r = m.forward_features(stack_batch(rows));
        for (size_t i = 0; i < end - start; ++i) hl.push_back(batch_row(r, static_cast<int>(i)));
      }
      for (size_t i = 0; i < ds.size(); ++i) {
        out.push_back({hl[i].data, {}, ds.samples[i].label});
      }
      return out;
    };
    std::vector<FinetuneSample> all = features_of(data.part.cloud_train);
    std::vector<FinetuneSample> device_f = features_of(data.part.device_train);
    res.channel.send(Direction::Uplink, "features", features_payload_bytes(device_f), cfg.rounds + 1);
    res.metrics.finetune_transfer_bytes = features_payload_bytes(device_f);
    all.insert(all.end(), device_f.begin(), device_f.end());

    Linear& fc = m.classifier();
    LossCurve curve;
    SeededRng rng(mix_seed(cfg.seed, 0x33));
    Optimizer opt(OptKind::Sgd, cfg.hp_finetune.learning_rate);
    const std::vector<Parameter*> params = {&fc.weight(), &fc.bias()};
    std::vector<size_t> order = detail::index_range(all.size());
    const int d = fc.in_features();
    for (int epoch = 0; epoch < cfg.hp_finetune.epochs; ++epoch) {
      rng.shuffle(order);
      for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.hp_finetune.batch_size)) {
        const size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.hp_finetune.batch_size));
        const int n = static_cast<int>(end - start);
        Tensor x({n, d});
        std::vector<int> labels(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) {
          const FinetuneSample& fs = all[order[start + static_cast<size_t>(i)]];
          std::copy(fs.feature.begin(), fs.feature.end(), x.data.begin() + static_cast<int64_t>(i) * d);
          labels[static_cast<size_t>(i)] = fs.label;
        }
        const Tensor z = fc.forward(x);
        const LossResult loss = softmax_cross_entropy(z, labels);
        fc.weight().value.clear_grad();
        fc.bias().value.clear_grad();
        fc.backward(loss.grad);
        opt.step(params);
      }
    }
  }

  res.metrics.final_accuracy = evaluate_model(m, data.part.test);
  res.final_model = std::move(m);
  return res;
}

}  // namespace detail

// Parameter/FLOP accounting for the metrics record. Device-side follows the
// deployment story of each method: encoder + co + control for DC-CCL, the
// full decoupled model for Distr-D, the small model for Distr-S/Incr-S, and
// nothing for the cloud-only/centralized baselines.
inline void fill_size_metrics(const ExperimentConfig& cfg, MetricsRecord& m) {
  ModelSpec enc_spec, cloud_spec, co_spec;
  if (cfg.split.heterogeneous) {
    cloud_spec = cfg.base_model;
    co_spec = *cfg.het_co_model;
  } else {
    const SplitSpecs specs = split_base_spec(cfg.base_model, cfg.split);
    enc_spec = specs.encoder;
    cloud_spec = specs.cloud;
    co_spec = specs.co;
  }
  const int64_t enc_p = enc_spec.layers.empty() ? 0 : count_params(enc_spec);
  const int64_t enc_f = enc_spec.layers.empty() ? 0 : count_flops(enc_spec);
  m.base_params = count_params(cfg.base_model);
  m.cloud_params = enc_p + count_params(cloud_spec);
  switch (cfg.method) {
    case Method::DcCcl:
    case Method::DcCclNoFinetune:
      m.device_params = enc_p + 2 * count_params(co_spec);
      m.device_flops = enc_f + 2 * count_flops(co_spec);
      break;
    case Method::DcCclNoControl:
      m.device_params = enc_p + count_params(co_spec);
      m.device_flops = enc_f + count_flops(co_spec);
      break;
    case Method::DistrD:
      m.device_params = enc_p + count_params(cloud_spec) + count_params(co_spec);
      m.device_flops = enc_f + count_flops(cloud_spec) + count_flops(co_spec);
      break;
    case Method::DistrS:
    case Method::IncrS:
      m.device_params = enc_p + count_params(co_spec);
      m.device_flops = enc_f + count_flops(co_spec);
      break;
    default:
      m.device_params = 0;
      m.device_flops = 0;
      break;
  }
}

inline RunResult run_experiment(const ExperimentConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  RunResult res;
  switch (cfg.method) {
    case Method::DcCcl:
    case Method::DcCclNoControl:
    case Method::DcCclNoFinetune:
    case Method::CentralD:
    case Method::DistrD:
      res = detail::run_decoupled_method(cfg);
      break;
    case Method::CentralB:
    case Method::CloudB:
      res = detail::run_base_model_method(cfg);
      break;
    case Method::DistrS:
    case Method::IncrS:
      res = detail::run_small_model_method(cfg);
      break;
  }
  res.metrics.method = method_name(cfg.method);
  res.metrics.seed = cfg.seed;
  res.metrics.uplink_bytes = res.channel.uplink_bytes();
  res.metrics.downlink_bytes = res.channel.downlink_bytes();
  fill_size_metrics(cfg, res.metrics);
  res.metrics.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

}  // namespace dccl

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "dccl/errors.hpp"
#include "dccl/rng.hpp"
#include "dccl/serialize.hpp"
#include "dccl/tensor.hpp"

namespace dccl {

struct LabeledSample {
  Tensor image;  // [C,H,W]
  int label = 0;
};

struct LabeledDataset {
  std::vector<LabeledSample> samples;
  int num_classes = 0;
  std::string name;

  size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }

  void validate() const {
    if (num_classes < 1) throw SpecError("dataset num_classes must be positive");
    std::vector<int> per_class(static_cast<size_t>(num_classes), 0);
    for (const LabeledSample& s : samples) {
      if (s.label < 0 || s.label >= num_classes) {
        throw DataFormatError(DataFormatError::Kind::LabelOutOfRange,
                              "label " + std::to_string(s.label) + " in dataset '" + name + "'");
      }
      ++per_class[static_cast<size_t>(s.label)];
    }
    for (int c = 0; c < num_classes; ++c) {
      if (per_class[static_cast<size_t>(c)] == 0) {
        throw SpecError("dataset '" + name + "' has no samples of class " + std::to_string(c));
      }
    }
  }
};

namespace detail {

// Class templates: a class-indexed frequency grating plus a positioned blob.
// Distinct Fourier modes keep raw-pixel linear classifiers weak once the
// per-sample cyclic jitter randomizes the phase, while pooling convnets stay
// tolerant to the shifts.
inline const std::vector<std::pair<int, int>>& grating_freqs() {
  static const std::vector<std::pair<int, int>> freqs = {
      {2, 0}, {0, 2}, {2, 2}, {3, 1}, {1, 3}, {3, 0}, {0, 3}, {3, 3},
      {4, 1}, {1, 4}, {4, 0}, {0, 4}, {2, 4}, {4, 2}, {4, 4}, {5, 1},
  };
  return freqs;
}

inline Tensor class_template(int cls, int channels, int size) {
  const auto& freqs = grating_freqs();
  const auto [fx, fy] = freqs[static_cast<size_t>(cls) % freqs.size()];
  const double phase = 2.399963229728653 * cls;  // golden angle spreads phases
  const double two_pi = 6.283185307179586;
  // Low-discrepancy blob positions, one per class.
  const double bx = std::fmod(0.5 + 0.754877666246693 * cls, 1.0) * size;
  const double by = std::fmod(0.5 + 0.569840290998053 * cls, 1.0) * size;
  const double sigma = size / 6.0;
  Tensor t({channels, size, size});
  for (int c = 0; c < channels; ++c) {
    const double ch_phase = phase + 1.5707963267948966 * c;
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        const double g = std::sin(two_pi * (fx * x + fy * y) / size + ch_phase);
        const double dx = x - bx, dy = y - by;
        const double blob = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
        t.at4(0, c, y, x) = 1.0 * g + 1.2 * blob;
      }
    }
  }
  return t;
}

inline Tensor cyclic_shift(const Tensor& img, int sx, int sy) {
  const int c = img.dim(0), h = img.dim(1), w = img.dim(2);
  Tensor out(img.shape);
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < h; ++y) {
      const int yy = ((y + sy) % h + h) % h;
      for (int x = 0; x < w; ++x) {
        const int xx = ((x + sx) % w + w) % w;
        out.at4(0, ch, y, x) = img.at4(0, ch, yy, xx);
      }
    }
  }
  return out;
}

}  // namespace detail

// Deterministic synthetic dataset: per-class template, cyclically shifted by a
// seeded Gaussian jitter and overlaid with seeded Gaussian pixel noise. With
// noise_std == 0 the jitter and the noise both vanish, so all samples of a
// class are identical.
inline LabeledDataset generate_synthetic(int num_classes, int samples_per_class, int image_size, int channels,
                                         double noise_std, uint64_t seed) {
  if (num_classes < 1 || samples_per_class < 1 || image_size < 1 || channels < 1) {
    throw SpecError("generate_synthetic: all counts must be positive");
  }
  LabeledDataset ds;
  ds.num_classes = num_classes;
  ds.name = "synthetic";
  ds.samples.reserve(static_cast<size_t>(num_classes) * samples_per_class);
  SeededRng rng(seed);
  const double jitter_std = 2.0 * noise_std;  // pixels of cyclic shift
  for (int cls = 0; cls < num_classes; ++cls) {
    const Tensor tmpl = detail::class_template(cls, channels, image_size);
    for (int i = 0; i < samples_per_class; ++i) {
      const int sx = static_cast<int>(std::lround(rng.gaussian(0.0, jitter_std)));
      const int sy = static_cast<int>(std::lround(rng.gaussian(0.0, jitter_std)));
      Tensor img = detail::cyclic_shift(tmpl, sx, sy);
      if (noise_std > 0.0) {
        for (double& v : img.data) v += rng.gaussian(0.0, noise_std);
      }
      ds.samples.push_back({std::move(img), cls});
    }
  }
  return ds;
}

// Dataset file format (magic "DCDS"):
//   magic | version u32 | num_classes u32 | sample count u64 | C,H,W u32 |
//   per sample: label u32, C*H*W f64 little-endian.
inline std::vector<uint8_t> serialize_dataset(const LabeledDataset& ds) {
  if (ds.empty()) throw SpecError("cannot serialize an empty dataset");
  std::vector<uint8_t> out;
  for (char c : kDatasetMagic) out.push_back(static_cast<uint8_t>(c));
  wire::put_u32(out, kFormatVersion);
  wire::put_u32(out, static_cast<uint32_t>(ds.num_classes));
  wire::put_u64(out, ds.samples.size());
  const std::vector<int>& shape = ds.samples[0].image.shape;
  for (int d : shape) wire::put_u32(out, static_cast<uint32_t>(d));
  for (const LabeledSample& s : ds.samples) {
    if (s.image.shape != shape) throw ShapeError("dataset samples must share one shape");
    wire::put_u32(out, static_cast<uint32_t>(s.label));
    for (double v : s.image.data) wire::put_f64(out, v);
  }
  return out;
}

inline void save_dataset(const std::string& path, const LabeledDataset& ds) {
  wire::write_file(path, serialize_dataset(ds));
}

inline LabeledDataset load_dataset(const std::string& path) {
  const std::vector<uint8_t> bytes = wire::read_file(path);
  wire::Reader r(bytes.data(), bytes.size());
  r.magic(kDatasetMagic);
  const uint32_t version = r.u32();
  if (version != kFormatVersion) {
    throw DataFormatError(DataFormatError::Kind::BadVersion, "dataset version " + std::to_string(version));
  }
  LabeledDataset ds;
  ds.num_classes = static_cast<int>(r.u32());
  if (ds.num_classes < 1) throw DataFormatError(DataFormatError::Kind::BadHeader, "num_classes must be positive");
  const uint64_t count = r.u64();
  const int c = static_cast<int>(r.u32());
  const int h = static_cast<int>(r.u32());
  const int w = static_cast<int>(r.u32());
  if (c < 1 || h < 1 || w < 1) throw DataFormatError(DataFormatError::Kind::BadHeader, "bad sample shape");
  ds.name = std::filesystem::path(path).stem().string();
  ds.samples.reserve(count);
  for (uint64_t i = 0; i < count; ++i) {
    LabeledSample s;
    s.label = static_cast<int>(r.u32());
    if (s.label < 0 || s.label >= ds.num_classes) {
      throw DataFormatError(DataFormatError::Kind::LabelOutOfRange,
                            "sample " + std::to_string(i) + " has label " + std::to_string(s.label));
    }
    s.image = Tensor({c, h, w});
    for (double& v : s.image.data) v = r.f64();
    ds.samples.push_back(std::move(s));
  }
  if (!r.at_end()) throw DataFormatError(DataFormatError::Kind::Truncated, "trailing bytes after last sample");
  ds.validate();
  return ds;
}

struct PartitionedDataset {
  LabeledDataset cloud_train;
  LabeledDataset device_train;
  LabeledDataset test;
  std::set<int> device_classes;
  double augment_fraction = 0.0;
  size_t device_original_count = 0;  // device samples before augmentation
};

// Splits the training set by label: device classes go to the device, the rest
// to the cloud. Augmentation then copies a few cloud samples (uniform, without
// replacement, at most augment_fraction of the original device set) into the
// device set; the cloud keeps its copies.
inline PartitionedDataset partition_by_class(const LabeledDataset& train, const LabeledDataset& test,
                                             const std::set<int>& device_classes, double augment_fraction,
                                             uint64_t seed) {
  train.validate();
  test.validate();
  if (device_classes.empty()) throw SpecError("device_classes must be nonempty");
  if (augment_fraction < 0.0 || augment_fraction > 0.1) {
    throw SpecError("augment_fraction must lie in [0, 0.1]");
  }
  for (int c : device_classes) {
    if (c < 0 || c >= train.num_classes) throw SpecError("device class " + std::to_string(c) + " out of range");
  }
  if (static_cast<int>(device_classes.size()) >= train.num_classes) {
    throw SpecError("device_classes must be a proper subset of all classes");
  }

  PartitionedDataset part;
  part.device_classes = device_classes;
  part.augment_fraction = augment_fraction;
  part.cloud_train.num_classes = train.num_classes;
  part.cloud_train.name = train.name + ".cloud";
  part.device_train.num_classes = train.num_classes;
  part.device_train.name = train.name + ".device";
  part.test = test;
  for (const LabeledSample& s : train.samples) {
    if (device_classes.count(s.label)) {
      part.device_train.samples.push_back(s);
    } else {
      part.cloud_train.samples.push_back(s);
    }
  }
  part.device_original_count = part.device_train.samples.size();

  const size_t budget = static_cast<size_t>(augment_fraction * static_cast<double>(part.device_original_count));
  if (budget > 0 && !part.cloud_train.samples.empty()) {
    SeededRng rng(mix_seed(seed, 0x70));
    const size_t k = std::min(budget, part.cloud_train.samples.size());
    for (size_t idx : rng.sample_without_replacement(part.cloud_train.samples.size(), k)) {
      part.device_train.samples.push_back(part.cloud_train.samples[idx]);
    }
  }
  return part;
}

}  // namespace dccl

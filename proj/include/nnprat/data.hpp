#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "nnprat/tensor.hpp"

namespace nnprat {

// Immutable sample collection. Inputs are flat rows in [0,1]; sample_shape
// carries the per-sample extents (e.g. {2} for points, {1,28,28} for images).
struct Dataset {
  Tensor inputs;  // [n x d]
  std::vector<int> labels;
  std::size_t num_classes = 0;
  std::string split = "train";  // "train" | "test"
  Shape sample_shape;

  // Per-column affine map applied during generation (x01 = (x - lo) / range);
  // empty when the data was already in [0,1].
  std::vector<double> rescale_lo;
  std::vector<double> rescale_range;

  std::size_t size() const { return inputs.defined() ? inputs.dim(0) : 0; }
  std::size_t input_size() const { return inputs.defined() ? inputs.dim(1) : 0; }
  void validate() const;  // throws ContractError on any broken invariant
};

// The two-cluster toy problem: isotropic Gaussians with distinct means.
struct GaussianSpec {
  std::size_t num_classes = 2;
  std::vector<std::array<double, 2>> means = {{{-1.5, 0.0}}, {{1.5, 0.0}}};
  double sigma = 0.6;
  std::size_t samples_per_class = 500;
  std::uint64_t seed = 0;

  void validate() const;  // throws SpecError listing every violation
};

// Seeded sampling from N(mean_c, sigma^2 I), classes in order, then a
// per-column min-max rescale into [0,1] recorded on the dataset.
Dataset gen_gaussian(const GaussianSpec& spec);

// Synthetic 28x28 digit glyphs: seven-segment strokes with per-sample
// position/scale/brightness jitter and additive noise. Deterministic per
// seed; pixel values in [0,1]. Stands in for handwritten-digit data when no
// corpus is on disk.
struct SynthDigitsSpec {
  std::size_t num_classes = 10;  // digits 0..num_classes-1, at most 10
  std::size_t samples_per_class = 200;
  double noise = 0.08;
  std::uint64_t seed = 0;

  void validate() const;
};

Dataset gen_synth_digits(const SynthDigitsSpec& spec);

// Big-endian IDX image/label pair (magic 0x00000803 / 0x00000801), pixels
// scaled to [0,1] by /255.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

// Inverse of load_idx for [0,1] image datasets: pixels are rounded back to
// bytes. parse -> write reproduces a valid fixture byte-for-byte.
void write_idx(const Dataset& data, const std::string& images_path,
               const std::string& labels_path);

struct Batch {
  Tensor inputs;
  std::vector<int> labels;
};

// Deterministic shuffled partition keyed by (seed, epoch); the final short
// batch is kept.
std::vector<Batch> batches(const Dataset& data, std::size_t batch_size, std::uint64_t seed,
                           std::size_t epoch);

// Keeps only the listed classes and remaps labels to 0..k-1 in list order.
Dataset subset_classes(const Dataset& data, const std::vector<int>& classes);

// Deterministic shuffled split; the first part keeps split="train", the
// second becomes split="test".
std::pair<Dataset, Dataset> split_dataset(const Dataset& data, double test_fraction,
                                          std::uint64_t seed);

// CSV dump `x0,x1,...,label` for external plotting.
void write_dataset_csv(const Dataset& data, const std::string& path);

}  // namespace nnprat

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "parsec/tensor.hpp"

namespace parsec {

struct DatasetHandle {
  std::string kind;  // "cifar10-binary" or "synthetic"
  int num_classes = 0;
  int channels = 0;
  int height = 0;
  int width = 0;
  Tensor train_images;  // (N, C, H, W), already normalized
  std::vector<int> train_labels;
  Tensor test_images;
  std::vector<int> test_labels;
};

/// Per-channel normalization applied to CIFAR-10 pixels after scaling to [0,1].
/// These are the standard CIFAR-10 training-set statistics.
extern const double kCifarChannelMean[3];
extern const double kCifarChannelStd[3];

/// Reads data_batch_1..5.bin and test_batch.bin from `dir`. Each file must be
/// exactly 30,730,000 bytes: 10,000 records of 3073 bytes (label byte, then
/// 3x32x32 planes R,G,B row-major). Pixels are scaled to [0,1] and
/// channel-normalized. When train_subset/test_subset are positive, only a
/// deterministic seeded subsample of records is materialized.
DatasetHandle load_cifar10(const std::string& dir, int train_subset = 0, int test_subset = 0,
                           std::uint64_t subset_seed = 0);

/// Writes one CIFAR-10 binary file (exact layout above).
void write_cifar10_file(const std::string& path, const std::vector<std::uint8_t>& labels,
                        const std::vector<std::uint8_t>& pixels);

struct SyntheticSpec {
  std::string kind = "texture";  // "texture" (oriented gratings) or "gaussian"
  int num_classes = 10;
  int num_train = 2000;
  int num_test = 1000;
  int channels = 3;
  int height = 32;
  int width = 32;
  /// Signal amplitude; 0 makes every class indistinguishable (chance accuracy).
  double separation = 1.0;
};

/// Deterministic synthetic dataset. "gaussian": class-conditional Gaussian
/// means plus unit noise. "texture": per-class oriented gratings with random
/// phase per image, so spatial filtering (not pixel means) separates classes.
DatasetHandle gen_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

/// Writes a full six-file CIFAR-10-format stand-in (texture classes, byte
/// pixels) into `dir`, deterministic in `seed`. Returns `dir`.
std::string write_standin_cifar10(const std::string& dir, std::uint64_t seed);

/// Deterministic seeded subsample without replacement, preserving order of
/// selection. count must be in [1, n].
std::vector<int> subsample_indices(int n, int count, std::uint64_t seed);

}  // namespace parsec

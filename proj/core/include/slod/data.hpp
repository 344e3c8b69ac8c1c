#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "slod/tensor.hpp"

namespace slod {

/// Unnormalized 8-bit images, N×C×H×W row-major.
struct RawImages {
  std::size_t count = 0;
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;

  friend bool operator==(const RawImages&, const RawImages&) = default;
};

// IDX: magic 00 00 08 <dims>, big-endian u32 sizes, then unsigned bytes.
// Images use dims=3 (N×H×W, loaded with C=1); labels use dims=1.
RawImages parse_idx_images(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> parse_idx_labels(std::span<const std::uint8_t> bytes);
RawImages load_idx_images(const std::filesystem::path& path);
std::vector<std::uint8_t> load_idx_labels(const std::filesystem::path& path);

struct CifarBatch {
  RawImages images;
  std::vector<std::uint8_t> labels;
};

// 3073-byte records: label byte, then 1024 R, 1024 G, 1024 B bytes.
CifarBatch parse_cifar10_batch(std::span<const std::uint8_t> bytes);
CifarBatch load_cifar10_batch(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

enum class DatasetRole { InDistribution, OutOfDistribution };

const char* role_name(DatasetRole role);

// Scalar normalization: x ↦ (x - mean) / std, applied to pixels in [0,1].
struct Normalization {
  double mean = 0.0;
  double std = 1.0;

  friend bool operator==(const Normalization&, const Normalization&) = default;
};

Normalization compute_normalization(const RawImages& images);
std::vector<float> normalize(std::span<const float> unit_values, const Normalization& norm);
std::vector<float> denormalize(std::span<const float> values, const Normalization& norm);

/// Normalized images plus (for in-distribution sets) integer labels.
///
/// Out-of-distribution sets carry no labels: `labels()` throws for them.
/// Every batch gathered from an OOD set is counted process-wide so callers
/// can verify that a training stage never touched outliers.
class LabeledDataset {
 public:
  LabeledDataset(std::string name, DatasetRole role, Tensor<float> images, std::optional<std::vector<int>> labels,
                 Normalization norm);

  const std::string& name() const { return name_; }
  DatasetRole role() const { return role_; }
  const Tensor<float>& images() const { return images_; }
  const Normalization& normalization() const { return norm_; }
  std::size_t size() const { return images_.dim(0); }
  // C×H×W
  Shape sample_shape() const;
  bool has_labels() const { return labels_.has_value(); }
  const std::vector<int>& labels() const;

  Tensor<float> gather(std::span<const std::size_t> indices) const;
  std::vector<int> gather_labels(std::span<const std::size_t> indices) const;

  // First `n` samples (or all if n == 0 or n >= size).
  LabeledDataset head(std::size_t n) const;

 private:
  std::string name_;
  DatasetRole role_;
  Tensor<float> images_;
  std::optional<std::vector<int>> labels_;
  Normalization norm_;
};

// Number of batches gathered from OOD-role datasets in this process.
std::uint64_t ood_draw_count();

LabeledDataset make_dataset(std::string name, DatasetRole role, const RawImages& raw,
                            std::optional<std::vector<std::uint8_t>> labels, const Normalization& norm);

// Concatenates datasets with identical sample shape; the result takes `role`
// and drops labels if any part lacks them.
LabeledDataset concat_datasets(std::string name, DatasetRole role, std::span<const LabeledDataset> parts);

enum class NoiseKind { Uniform, Gaussian };

// Uniform: i.i.d. U[0,1]. Gaussian: N(0.5, 0.25²) clipped to [0,1]. Values
// are then normalized with `norm` (the in-distribution statistics).
LabeledDataset synth_ood(NoiseKind kind, std::size_t n, const Shape& sample_shape, std::uint64_t seed,
                         const Normalization& norm);
// Unit-range values before normalization (same stream as synth_ood).
std::vector<float> synth_noise_values(NoiseKind kind, std::size_t count, std::uint64_t seed);

struct BatchPlan {
  std::size_t batch_size = 128;
  std::uint64_t seed = 0;
  bool shuffle = true;
  std::size_t epoch = 0;
};

// Index slices covering [0, n); seeded Fisher–Yates order when shuffling;
// the last partial batch is kept.
std::vector<std::vector<std::size_t>> make_batches(std::size_t n, const BatchPlan& plan);

// Mirror each image of an N×C×H×W batch left-right.
void hflip_inplace(Tensor<float>& batch, const std::vector<bool>& which);

// Named splits under a data root:
//   mnist/, fashion_mnist/  {train,t10k}-{images-idx3,labels-idx1}-ubyte
//   cifar10/                data_batch_{1..5}.bin, test_batch.bin
enum class Split { Train, Test };

struct RawSplit {
  RawImages images;
  std::vector<std::uint8_t> labels;
};

RawSplit load_named_split(const std::filesystem::path& root, const std::string& name, Split split);
std::size_t named_num_classes(const std::string& name);
bool is_noise_name(const std::string& name);

}  // namespace slod

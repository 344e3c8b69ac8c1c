#include "slod/data.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>

#include "slod/errors.hpp"

namespace slod {

namespace {

std::atomic<std::uint64_t> g_ood_draws{0};

constexpr std::size_t kCifarSide = 32;
constexpr std::size_t kCifarRecord = 1 + 3 * kCifarSide * kCifarSide;

std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

std::string hex_bytes(std::span<const std::uint8_t> bytes) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    if (i > 0) out += ' ';
    out += digits[bytes[i] >> 4];
    out += digits[bytes[i] & 0xf];
  }
  return out;
}

// Validates the header and returns the dimension sizes.
std::vector<std::size_t> idx_header(std::span<const std::uint8_t> bytes, std::uint8_t want_dims) {
  if (bytes.size() < 4) throw FormatError("IDX: file shorter than the 4-byte magic");
  if (bytes[0] != 0 || bytes[1] != 0 || bytes[2] != 0x08 || bytes[3] != want_dims) {
    throw FormatError("IDX: bad magic " + hex_bytes(bytes.first(4)) + ", expected 00 00 08 0" +
                      std::to_string(want_dims));
  }
  const std::size_t header = 4 + 4 * std::size_t{want_dims};
  if (bytes.size() < header) throw LengthError("IDX: truncated dimension header");
  std::vector<std::size_t> dims;
  std::size_t total = 1;
  for (std::size_t d = 0; d < want_dims; ++d) {
    dims.push_back(read_be32(bytes, 4 + 4 * d));
    total *= dims.back();
  }
  if (bytes.size() - header != total) {
    throw LengthError("IDX: payload has " + std::to_string(bytes.size() - header) + " bytes, header declares " +
                      std::to_string(total));
  }
  return dims;
}

}  // namespace

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes(std::filesystem::file_size(path));
  if (!in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()))) {
    throw IoError("short read from " + path.string());
  }
  return bytes;
}

RawImages parse_idx_images(std::span<const std::uint8_t> bytes) {
  const auto dims = idx_header(bytes, 3);
  RawImages out{dims[0], 1, dims[1], dims[2], {}};
  out.pixels.assign(bytes.begin() + 16, bytes.end());
  return out;
}

std::vector<std::uint8_t> parse_idx_labels(std::span<const std::uint8_t> bytes) {
  idx_header(bytes, 1);
  return std::vector<std::uint8_t>(bytes.begin() + 8, bytes.end());
}

RawImages load_idx_images(const std::filesystem::path& path) {
  try {
    return parse_idx_images(read_file_bytes(path));
  } catch (const LengthError& e) {
    throw LengthError(path.string() + ": " + e.what());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> load_idx_labels(const std::filesystem::path& path) {
  try {
    return parse_idx_labels(read_file_bytes(path));
  } catch (const LengthError& e) {
    throw LengthError(path.string() + ": " + e.what());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

CifarBatch parse_cifar10_batch(std::span<const std::uint8_t> bytes) {
  if (bytes.size() % kCifarRecord != 0) {
    throw FormatError("CIFAR-10: length " + std::to_string(bytes.size()) + " is not a multiple of 3073");
  }
  const std::size_t n = bytes.size() / kCifarRecord;
  CifarBatch out;
  out.images = RawImages{n, 3, kCifarSide, kCifarSide, {}};
  out.images.pixels.reserve(n * (kCifarRecord - 1));
  out.labels.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto record = bytes.subspan(i * kCifarRecord, kCifarRecord);
    if (record[0] > 9) {
      throw ValueError("CIFAR-10: record " + std::to_string(i) + " has label " + std::to_string(record[0]));
    }
    out.labels.push_back(record[0]);
    out.images.pixels.insert(out.images.pixels.end(), record.begin() + 1, record.end());
  }
  return out;
}

CifarBatch load_cifar10_batch(const std::filesystem::path& path) {
  return parse_cifar10_batch(read_file_bytes(path));
}

const char* role_name(DatasetRole role) {
  return role == DatasetRole::InDistribution ? "in_distribution" : "out_of_distribution";
}

Normalization compute_normalization(const RawImages& images) {
  if (images.pixels.empty()) throw UsageError("cannot compute normalization of an empty image set");
  std::array<std::uint64_t, 256> histogram{};
  for (std::uint8_t p : images.pixels) ++histogram[p];
  double sum = 0.0, sq = 0.0;
  for (std::size_t level = 0; level < histogram.size(); ++level) {
    const double v = static_cast<double>(level) / 255.0;
    sum += static_cast<double>(histogram[level]) * v;
    sq += static_cast<double>(histogram[level]) * v * v;
  }
  const double n = static_cast<double>(images.pixels.size());
  const double mean = sum / n;
  const double var = std::max(sq / n - mean * mean, 0.0);
  return {mean, var > 0.0 ? std::sqrt(var) : 1.0};
}

std::vector<float> normalize(std::span<const float> unit_values, const Normalization& norm) {
  std::vector<float> out(unit_values.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<float>((unit_values[i] - norm.mean) / norm.std);
  }
  return out;
}

std::vector<float> denormalize(std::span<const float> values, const Normalization& norm) {
  std::vector<float> out(values.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(values[i] * norm.std + norm.mean);
  return out;
}

LabeledDataset::LabeledDataset(std::string name, DatasetRole role, Tensor<float> images,
                               std::optional<std::vector<int>> labels, Normalization norm)
    : name_(std::move(name)), role_(role), images_(std::move(images)), labels_(std::move(labels)), norm_(norm) {
  if (images_.rank() != 4) throw ShapeError("dataset images must be N×C×H×W, got " + shape_string(images_.shape()));
  if (labels_ && labels_->size() != images_.dim(0)) {
    throw ShapeError("dataset " + name_ + ": " + std::to_string(labels_->size()) + " labels for " +
                     std::to_string(images_.dim(0)) + " images");
  }
  if (role_ == DatasetRole::OutOfDistribution) labels_.reset();
  if (role_ == DatasetRole::InDistribution && !labels_) throw UsageError("in-distribution dataset " + name_ + " needs labels");
}

Shape LabeledDataset::sample_shape() const {
  return {images_.dim(1), images_.dim(2), images_.dim(3)};
}

const std::vector<int>& LabeledDataset::labels() const {
  if (!labels_) throw UsageError("dataset " + name_ + " (" + role_name(role_) + ") has no labels");
  return *labels_;
}

Tensor<float> LabeledDataset::gather(std::span<const std::size_t> indices) const {
  if (indices.empty()) throw UsageError("cannot gather an empty batch");
  const std::size_t per = images_.size() / images_.dim(0);
  Shape shape = images_.shape();
  shape[0] = indices.size();
  std::vector<float> out(indices.size() * per);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= size()) throw UsageError("sample index out of range");
    std::copy_n(images_.data().begin() + indices[i] * per, per, out.begin() + i * per);
  }
  if (role_ == DatasetRole::OutOfDistribution) g_ood_draws.fetch_add(1, std::memory_order_relaxed);
  return Tensor<float>(std::move(shape), std::move(out));
}

std::vector<int> LabeledDataset::gather_labels(std::span<const std::size_t> indices) const {
  const auto& all = labels();
  std::vector<int> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(all.at(i));
  return out;
}

LabeledDataset LabeledDataset::head(std::size_t n) const {
  if (n == 0 || n >= size()) return *this;
  const std::size_t per = images_.size() / images_.dim(0);
  Shape shape = images_.shape();
  shape[0] = n;
  std::vector<float> data(images_.data().begin(), images_.data().begin() + n * per);
  std::optional<std::vector<int>> labels;
  if (labels_) labels.emplace(labels_->begin(), labels_->begin() + n);
  return LabeledDataset(name_, role_, Tensor<float>(std::move(shape), std::move(data)), std::move(labels), norm_);
}

std::uint64_t ood_draw_count() { return g_ood_draws.load(std::memory_order_relaxed); }

LabeledDataset make_dataset(std::string name, DatasetRole role, const RawImages& raw,
                            std::optional<std::vector<std::uint8_t>> labels, const Normalization& norm) {
  if (raw.count == 0) throw UsageError("dataset " + name + " is empty");
  std::vector<float> unit(raw.pixels.size());
  for (std::size_t i = 0; i < unit.size(); ++i) unit[i] = static_cast<float>(raw.pixels[i] / 255.0);
  Tensor<float> images({raw.count, raw.channels, raw.height, raw.width}, normalize(unit, norm));
  std::optional<std::vector<int>> ints;
  if (labels) ints.emplace(labels->begin(), labels->end());
  return LabeledDataset(std::move(name), role, std::move(images), std::move(ints), norm);
}

LabeledDataset concat_datasets(std::string name, DatasetRole role, std::span<const LabeledDataset> parts) {
  if (parts.empty()) throw UsageError("concat_datasets: no parts");
  const Shape sample = parts[0].sample_shape();
  std::vector<float> data;
  std::vector<int> labels;
  bool labelled = role == DatasetRole::InDistribution;
  std::size_t n = 0;
  for (const auto& p : parts) {
    if (p.sample_shape() != sample) {
      throw ShapeError("concat_datasets: " + p.name() + " has sample shape " + shape_string(p.sample_shape()) +
                       ", expected " + shape_string(sample));
    }
    data.insert(data.end(), p.images().data().begin(), p.images().data().end());
    if (p.has_labels()) {
      labels.insert(labels.end(), p.labels().begin(), p.labels().end());
    } else {
      labelled = false;
    }
    n += p.size();
  }
  std::optional<std::vector<int>> lab;
  if (labelled) lab = std::move(labels);
  return LabeledDataset(std::move(name), role, Tensor<float>({n, sample[0], sample[1], sample[2]}, std::move(data)),
                        std::move(lab), parts[0].normalization());
}

std::vector<float> synth_noise_values(NoiseKind kind, std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<float> out(count);
  if (kind == NoiseKind::Uniform) {
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    for (float& v : out) v = static_cast<float>(dist(rng));
  } else {
    std::normal_distribution<double> dist(0.5, 0.25);
    for (float& v : out) v = static_cast<float>(std::clamp(dist(rng), 0.0, 1.0));
  }
  return out;
}

LabeledDataset synth_ood(NoiseKind kind, std::size_t n, const Shape& sample_shape, std::uint64_t seed,
                         const Normalization& norm) {
  if (n == 0) throw UsageError("synth_ood: n must be >= 1");
  if (sample_shape.size() != 3) throw ShapeError("synth_ood: sample shape must be C×H×W");
  const std::size_t per = element_count(sample_shape);
  const auto unit = synth_noise_values(kind, n * per, seed);
  Shape shape{n, sample_shape[0], sample_shape[1], sample_shape[2]};
  return LabeledDataset(kind == NoiseKind::Uniform ? "uniform" : "gaussian", DatasetRole::OutOfDistribution,
                        Tensor<float>(std::move(shape), normalize(unit, norm)), std::nullopt, norm);
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, const BatchPlan& plan) {
  if (plan.batch_size == 0) throw UsageError("batch_size must be >= 1");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  if (plan.shuffle && n > 1) {
    std::seed_seq seq{static_cast<std::uint32_t>(plan.seed), static_cast<std::uint32_t>(plan.seed >> 32),
                      static_cast<std::uint32_t>(plan.epoch), static_cast<std::uint32_t>(plan.epoch >> 32)};
    std::mt19937_64 rng(seq);
    for (std::size_t i = n - 1; i > 0; --i) {
      std::uniform_int_distribution<std::size_t> pick(0, i);
      std::swap(order[i], order[pick(rng)]);
    }
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += plan.batch_size) {
    const std::size_t end = std::min(n, start + plan.batch_size);
    batches.emplace_back(order.begin() + start, order.begin() + end);
  }
  return batches;
}

void hflip_inplace(Tensor<float>& batch, const std::vector<bool>& which) {
  const std::size_t n = batch.dim(0), c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  if (which.size() != n) throw ShapeError("hflip: mask length does not match batch");
  for (std::size_t i = 0; i < n; ++i) {
    if (!which[i]) continue;
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t y = 0; y < h; ++y) {
        float* row = batch.data().data() + ((i * c + ch) * h + y) * w;
        std::reverse(row, row + w);
      }
    }
  }
}

namespace {

RawSplit load_idx_split(const std::filesystem::path& dir, Split split) {
  const std::string prefix = split == Split::Train ? "train" : "t10k";
  RawSplit out;
  out.images = load_idx_images(dir / (prefix + "-images-idx3-ubyte"));
  out.labels = load_idx_labels(dir / (prefix + "-labels-idx1-ubyte"));
  if (out.labels.size() != out.images.count) {
    throw FormatError(dir.string() + ": " + std::to_string(out.labels.size()) + " labels for " +
                      std::to_string(out.images.count) + " images");
  }
  return out;
}

RawSplit load_cifar_split(const std::filesystem::path& dir, Split split) {
  std::vector<std::string> files;
  if (split == Split::Train) {
    for (int i = 1; i <= 5; ++i) files.push_back("data_batch_" + std::to_string(i) + ".bin");
  } else {
    files.push_back("test_batch.bin");
  }
  RawSplit out;
  out.images = RawImages{0, 3, kCifarSide, kCifarSide, {}};
  for (const auto& f : files) {
    CifarBatch b = load_cifar10_batch(dir / f);
    out.images.count += b.images.count;
    out.images.pixels.insert(out.images.pixels.end(), b.images.pixels.begin(), b.images.pixels.end());
    out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  }
  return out;
}

}  // namespace

RawSplit load_named_split(const std::filesystem::path& root, const std::string& name, Split split) {
  if (name == "mnist" || name == "fashion_mnist") return load_idx_split(root / name, split);
  if (name == "cifar10") return load_cifar_split(root / name, split);
  throw UsageError("unknown dataset '" + name + "' (expected mnist, fashion_mnist, cifar10, uniform, gaussian)");
}

std::size_t named_num_classes(const std::string& name) {
  if (name == "mnist" || name == "fashion_mnist" || name == "cifar10") return 10;
  throw UsageError("unknown dataset '" + name + "'");
}

bool is_noise_name(const std::string& name) { return name == "uniform" || name == "gaussian"; }

}  // namespace slod

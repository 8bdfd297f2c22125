#pragma once

// Desk-scale datasets: seeded synthetic generators, a binary and CSV on-disk
// format, batch ordering and light image augmentation.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ascl/rng.hpp"
#include "ascl/tensor.hpp"

namespace ascl {

enum class Split : std::uint8_t { train = 0, test = 1 };

/// Channel-first layout of image-shaped feature rows.
struct ImageShape {
  std::size_t channels = 1;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t size() const { return channels * height * width; }
};

struct Dataset {
  std::string name;
  Split split = Split::train;
  std::size_t dim = 0;
  std::size_t num_classes = 0;
  std::vector<double> features;  // row-major, size() x dim, every value in [0, 1]
  std::vector<std::size_t> labels;
  std::optional<ImageShape> image;

  std::size_t size() const { return labels.size(); }
  std::span<const double> row(std::size_t i) const { return {features.data() + i * dim, dim}; }

  /// Throws ContractError when an invariant is broken.
  void validate() const;

  Tensor feature_tensor() const;
  Tensor feature_tensor(std::span<const std::size_t> rows) const;
  std::vector<std::size_t> labels_at(std::span<const std::size_t> rows) const;
  Dataset subset(std::span<const std::size_t> rows) const;
};

/// Gaussian clusters around seeded random unit-norm centers, squashed into [0, 1]
/// with one affine map shared by all coordinates.
Dataset make_blobs(std::size_t num_classes, std::size_t per_class, std::size_t dim, double spread, std::uint64_t seed);

/// Two interleaved half circles; ceil(m/2) samples of class 0, floor(m/2) of class 1.
/// The noiseless arcs span [-1, 2] x [-0.5, 1] before squashing.
Dataset make_two_moons(std::size_t count, double noise, std::uint64_t seed);

/// Shuffles and splits off `test_count` samples as the test split.
std::pair<Dataset, Dataset> train_test_split(const Dataset& full, std::size_t test_count, std::uint64_t seed);

/// Shuffled mini-batches covering every sample once. A trailing batch smaller than
/// two samples is merged into the previous one.
std::vector<std::vector<std::size_t>> batch_order(std::size_t count, std::size_t batch_size, Rng& rng);

struct AugmentationSpec {
  bool horizontal_flip = true;
  double shift_fraction = 0.10;
  double flip_probability = 0.5;

  static AugmentationSpec none() { return {false, 0.0, 0.0}; }
  bool is_noop() const { return !horizontal_flip && shift_fraction == 0.0; }
};

/// Random horizontal flips and zero-padded integer shifts of up to
/// shift_fraction of each side. Rows are modified in place copies; labels are untouched.
/// Throws ConfigError when a non-noop spec is applied to vector data.
std::vector<double> augment(std::span<const double> batch, std::size_t dim, const std::optional<ImageShape>& image,
                            const AugmentationSpec& spec, Rng& rng);

std::vector<double> flip_horizontal(std::span<const double> row, const ImageShape& image);
std::vector<double> shift_image(std::span<const double> row, const ImageShape& image, long dy, long dx);

// Binary format (little-endian): "ASCLDS1\0", u32 M, u32 D, u32 C, u8 split,
// then M records of D f64 features followed by a u32 label.
void save_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

/// CSV with header x0..x{D-1},label. Values are written with round-trip precision.
void save_csv(const Dataset& ds, const std::filesystem::path& path);
/// num_classes defaults to max(label) + 1.
Dataset load_csv(const std::filesystem::path& path, std::optional<std::size_t> num_classes = std::nullopt);

}  // namespace ascl

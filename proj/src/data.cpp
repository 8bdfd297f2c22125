#include "ascl/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>

#include "ascl/errors.hpp"
#include "binary_io.hpp"
#include "format.hpp"

namespace ascl {

namespace {

constexpr std::string_view kDatasetMagic{"ASCLDS1\0", 8};

// Maps every coordinate through one affine transform onto [0, 1].
void squash_unit(std::vector<double>& values) {
  if (values.empty()) return;
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  if (hi == lo) {
    std::fill(values.begin(), values.end(), 0.5);
    return;
  }
  const double span = hi - lo;
  for (double& v : values) v = std::clamp((v - lo) / span, 0.0, 1.0);
}

void shuffle(std::vector<std::size_t>& idx, Rng& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
}

}  // namespace

void Dataset::validate() const {
  if (labels.empty()) throw ContractError("dataset must contain at least one sample");
  if (dim == 0) throw ContractError("dataset dimension must be positive");
  if (features.size() != labels.size() * dim) throw ContractError("feature array does not match size x dim");
  if (num_classes == 0) throw ContractError("dataset needs at least one class");
  for (std::size_t y : labels) {
    if (y >= num_classes) throw ContractError("label out of range");
  }
  for (double v : features) {
    if (!(v >= 0.0 && v <= 1.0)) throw ContractError("feature outside [0, 1]");
  }
  if (image && image->size() != dim) throw ContractError("image shape does not match dimension");
}

Tensor Dataset::feature_tensor() const { return Tensor::matrix(size(), dim, features); }

Tensor Dataset::feature_tensor(std::span<const std::size_t> rows) const {
  std::vector<double> out;
  out.reserve(rows.size() * dim);
  for (std::size_t r : rows) {
    const auto src = row(r);
    out.insert(out.end(), src.begin(), src.end());
  }
  return Tensor::matrix(rows.size(), dim, std::move(out));
}

std::vector<std::size_t> Dataset::labels_at(std::span<const std::size_t> rows) const {
  std::vector<std::size_t> out;
  out.reserve(rows.size());
  for (std::size_t r : rows) out.push_back(labels[r]);
  return out;
}

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  Dataset out;
  out.name = name;
  out.split = split;
  out.dim = dim;
  out.num_classes = num_classes;
  out.image = image;
  out.labels = labels_at(rows);
  const Tensor f = feature_tensor(rows);
  out.features.assign(f.data().begin(), f.data().end());
  return out;
}

Dataset make_blobs(std::size_t num_classes, std::size_t per_class, std::size_t dim, double spread, std::uint64_t seed) {
  if (num_classes == 0 || per_class == 0 || dim == 0 || spread < 0.0) {
    throw ContractError("make_blobs: parameters must be positive");
  }
  Rng rng(seed);
  std::vector<double> centers(num_classes * dim);
  for (std::size_t c = 0; c < num_classes; ++c) {
    double norm = 0.0;
    while (norm == 0.0) {
      norm = 0.0;
      for (std::size_t k = 0; k < dim; ++k) {
        centers[c * dim + k] = rng.normal();
        norm += centers[c * dim + k] * centers[c * dim + k];
      }
      norm = std::sqrt(norm);
    }
    for (std::size_t k = 0; k < dim; ++k) centers[c * dim + k] /= norm;
  }
  Dataset ds;
  ds.name = "blobs";
  ds.dim = dim;
  ds.num_classes = num_classes;
  ds.features.reserve(num_classes * per_class * dim);
  for (std::size_t c = 0; c < num_classes; ++c) {
    for (std::size_t i = 0; i < per_class; ++i) {
      for (std::size_t k = 0; k < dim; ++k) ds.features.push_back(centers[c * dim + k] + spread * rng.normal());
      ds.labels.push_back(c);
    }
  }
  squash_unit(ds.features);
  return ds;
}

Dataset make_two_moons(std::size_t count, double noise, std::uint64_t seed) {
  if (count < 2 || noise < 0.0) throw ContractError("make_two_moons: need at least two samples and noise >= 0");
  Rng rng(seed);
  const std::size_t n_outer = (count + 1) / 2;
  const std::size_t n_inner = count / 2;
  Dataset ds;
  ds.name = "two_moons";
  ds.dim = 2;
  ds.num_classes = 2;
  auto angle = [](std::size_t i, std::size_t n) {
    return n == 1 ? 0.0 : std::numbers::pi * static_cast<double>(i) / static_cast<double>(n - 1);
  };
  for (std::size_t i = 0; i < n_outer; ++i) {
    const double t = angle(i, n_outer);
    ds.features.push_back(std::cos(t) + noise * rng.normal());
    ds.features.push_back(std::sin(t) + noise * rng.normal());
    ds.labels.push_back(0);
  }
  for (std::size_t i = 0; i < n_inner; ++i) {
    const double t = angle(i, n_inner);
    ds.features.push_back(1.0 - std::cos(t) + noise * rng.normal());
    ds.features.push_back(0.5 - std::sin(t) + noise * rng.normal());
    ds.labels.push_back(1);
  }
  squash_unit(ds.features);
  return ds;
}

std::pair<Dataset, Dataset> train_test_split(const Dataset& full, std::size_t test_count, std::uint64_t seed) {
  if (test_count == 0 || test_count >= full.size()) throw ContractError("train_test_split: invalid test size");
  std::vector<std::size_t> idx(full.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  shuffle(idx, rng);
  const std::span<const std::size_t> all(idx);
  Dataset test = full.subset(all.first(test_count));
  Dataset train = full.subset(all.subspan(test_count));
  train.split = Split::train;
  test.split = Split::test;
  return {std::move(train), std::move(test)};
}

std::vector<std::vector<std::size_t>> batch_order(std::size_t count, std::size_t batch_size, Rng& rng) {
  if (batch_size == 0) throw ContractError("batch_order: batch size must be positive");
  std::vector<std::size_t> idx(count);
  std::iota(idx.begin(), idx.end(), 0);
  shuffle(idx, rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < count; start += batch_size) {
    const std::size_t end = std::min(count, start + batch_size);
    if (end - start < 2 && !batches.empty()) {
      batches.back().insert(batches.back().end(), idx.begin() + static_cast<std::ptrdiff_t>(start), idx.end());
      break;
    }
    batches.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(start), idx.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

std::vector<double> flip_horizontal(std::span<const double> row, const ImageShape& image) {
  std::vector<double> out(row.size());
  for (std::size_t c = 0; c < image.channels; ++c)
    for (std::size_t y = 0; y < image.height; ++y)
      for (std::size_t x = 0; x < image.width; ++x) {
        const std::size_t base = (c * image.height + y) * image.width;
        out[base + x] = row[base + image.width - 1 - x];
      }
  return out;
}

std::vector<double> shift_image(std::span<const double> row, const ImageShape& image, long dy, long dx) {
  std::vector<double> out(row.size(), 0.0);
  const long h = static_cast<long>(image.height);
  const long w = static_cast<long>(image.width);
  for (std::size_t c = 0; c < image.channels; ++c) {
    const std::size_t plane = c * image.height * image.width;
    for (long y = 0; y < h; ++y) {
      const long sy = y - dy;
      if (sy < 0 || sy >= h) continue;
      for (long x = 0; x < w; ++x) {
        const long sx = x - dx;
        if (sx < 0 || sx >= w) continue;
        out[plane + static_cast<std::size_t>(y * w + x)] = row[plane + static_cast<std::size_t>(sy * w + sx)];
      }
    }
  }
  return out;
}

std::vector<double> augment(std::span<const double> batch, std::size_t dim, const std::optional<ImageShape>& image,
                            const AugmentationSpec& spec, Rng& rng) {
  std::vector<double> out(batch.begin(), batch.end());
  if (spec.is_noop()) return out;
  if (!image) throw ConfigError("augment: flips and shifts need image-shaped data");
  if (image->size() != dim) throw DimensionError("augment: image shape does not match row width");
  if (spec.shift_fraction < 0.0 || spec.shift_fraction >= 1.0) throw ConfigError("augment: shift_fraction must be in [0, 1)");
  const long max_dy = static_cast<long>(std::floor(spec.shift_fraction * static_cast<double>(image->height)));
  const long max_dx = static_cast<long>(std::floor(spec.shift_fraction * static_cast<double>(image->width)));
  const std::size_t rows = batch.size() / dim;
  for (std::size_t r = 0; r < rows; ++r) {
    std::span<double> row(out.data() + r * dim, dim);
    std::vector<double> cur(row.begin(), row.end());
    if (spec.horizontal_flip && rng.bernoulli(spec.flip_probability)) cur = flip_horizontal(cur, *image);
    if (max_dy > 0 || max_dx > 0) {
      const long dy = static_cast<long>(rng.below(static_cast<std::uint64_t>(2 * max_dy + 1))) - max_dy;
      const long dx = static_cast<long>(rng.below(static_cast<std::uint64_t>(2 * max_dx + 1))) - max_dx;
      cur = shift_image(cur, *image, dy, dx);
    }
    std::copy(cur.begin(), cur.end(), row.begin());
  }
  return out;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  ds.validate();
  io::ByteWriter w;
  w.bytes(kDatasetMagic);
  w.u32(static_cast<std::uint32_t>(ds.size()));
  w.u32(static_cast<std::uint32_t>(ds.dim));
  w.u32(static_cast<std::uint32_t>(ds.num_classes));
  w.u8(static_cast<std::uint8_t>(ds.split));
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (double v : ds.row(i)) w.f64(v);
    w.u32(static_cast<std::uint32_t>(ds.labels[i]));
  }
  w.write_file(path);
}

Dataset load_dataset(const std::filesystem::path& path) {
  auto r = io::ByteReader::from_file(path);
  if (r.bytes(kDatasetMagic.size(), "magic") != kDatasetMagic) throw FormatError("bad dataset magic", 0);
  const std::size_t header_at = r.offset();
  const std::uint32_t m = r.u32("record count");
  const std::uint32_t d = r.u32("dimension");
  const std::uint32_t c = r.u32("class count");
  const std::size_t split_at = r.offset();
  const std::uint8_t split = r.u8("split");
  if (m == 0 || d == 0 || c == 0) throw FormatError("header fields must be positive", header_at);
  if (split > 1) throw FormatError("unknown split code", split_at);
  const std::size_t record = static_cast<std::size_t>(d) * 8 + 4;
  if (r.remaining() != static_cast<std::size_t>(m) * record) {
    throw FormatError("payload holds " + std::to_string(r.remaining()) + " bytes but header declares " +
                          std::to_string(m) + " records of " + std::to_string(record) + " bytes",
                      r.offset());
  }
  Dataset ds;
  ds.name = path.stem().string();
  ds.split = static_cast<Split>(split);
  ds.dim = d;
  ds.num_classes = c;
  ds.features.reserve(static_cast<std::size_t>(m) * d);
  ds.labels.reserve(m);
  for (std::uint32_t i = 0; i < m; ++i) {
    for (std::uint32_t k = 0; k < d; ++k) {
      const std::size_t at = r.offset();
      const double v = r.f64("feature");
      if (!(v >= 0.0 && v <= 1.0)) throw FormatError("feature outside [0, 1]", at);
      ds.features.push_back(v);
    }
    const std::size_t at = r.offset();
    const std::uint32_t y = r.u32("label");
    if (y >= c) throw FormatError("label out of range", at);
    ds.labels.push_back(y);
  }
  r.expect_end();
  return ds;
}

void save_csv(const Dataset& ds, const std::filesystem::path& path) {
  ds.validate();
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  for (std::size_t k = 0; k < ds.dim; ++k) out << 'x' << k << ',';
  out << "label\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (double v : ds.row(i)) out << format_number(v) << ',';
    out << ds.labels[i] << '\n';
  }
  if (!out) throw Error("write failed: " + path.string());
}

Dataset load_csv(const std::filesystem::path& path, std::optional<std::size_t> num_classes) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::string line;
  std::size_t offset = 0;
  if (!std::getline(in, line)) throw FormatError("missing CSV header", 0);
  const auto columns = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
  if (columns < 2 || line.substr(line.rfind(',') + 1) != "label") throw FormatError("CSV header must end with label", 0);
  offset += line.size() + 1;
  Dataset ds;
  ds.name = path.stem().string();
  ds.dim = columns - 1;
  std::size_t max_label = 0;
  while (std::getline(in, line)) {
    if (line.empty()) {
      offset += 1;
      continue;
    }
    std::size_t field = 0;
    const char* p = line.data();
    const char* end = line.data() + line.size();
    while (true) {
      const char* comma = std::find(p, end, ',');
      const std::size_t at = offset + static_cast<std::size_t>(p - line.data());
      if (field < ds.dim) {
        double v = 0.0;
        auto res = std::from_chars(p, comma, v);
        if (res.ec != std::errc() || res.ptr != comma) throw FormatError("bad numeric field", at);
        if (!(v >= 0.0 && v <= 1.0)) throw FormatError("feature outside [0, 1]", at);
        ds.features.push_back(v);
      } else if (field == ds.dim) {
        std::size_t y = 0;
        auto res = std::from_chars(p, comma, y);
        if (res.ec != std::errc() || res.ptr != comma) throw FormatError("bad label field", at);
        ds.labels.push_back(y);
        max_label = std::max(max_label, y);
      } else {
        throw FormatError("too many fields", at);
      }
      ++field;
      if (comma == end) break;
      p = comma + 1;
    }
    if (field != columns) throw FormatError("too few fields", offset);
    offset += line.size() + 1;
  }
  if (ds.labels.empty()) throw FormatError("CSV has no records", offset);
  ds.num_classes = num_classes.value_or(max_label + 1);
  try {
    ds.validate();
  } catch (const ContractError& e) {
    throw FormatError(e.what(), offset);
  }
  return ds;
}

}  // namespace ascl

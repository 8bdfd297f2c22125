#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <vector>

#include "ascl/data.hpp"
#include "ascl/errors.hpp"

using namespace ascl;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("ascl_test_" + name);
}

void expect_same(const Dataset& a, const Dataset& b) {
  EXPECT_EQ(a.dim, b.dim);
  EXPECT_EQ(a.num_classes, b.num_classes);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(a.features, b.features);
}

Dataset tiny_images() {
  Dataset ds;
  ds.name = "tiny";
  ds.dim = 2 * 3 * 4;
  ds.num_classes = 2;
  ds.image = ImageShape{2, 3, 4};
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t k = 0; k < ds.dim; ++k) ds.features.push_back(static_cast<double>((i * 7 + k) % 10) / 10.0);
    ds.labels.push_back(i % 2);
  }
  return ds;
}

}  // namespace

TEST(Blobs, DeterministicAndValid) {
  const Dataset a = make_blobs(4, 20, 5, 0.3, 11);
  const Dataset b = make_blobs(4, 20, 5, 0.3, 11);
  expect_same(a, b);
  EXPECT_NO_THROW(a.validate());
  EXPECT_EQ(a.size(), 80u);
  EXPECT_NE(a.features, make_blobs(4, 20, 5, 0.3, 12).features);
  for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(std::count(a.labels.begin(), a.labels.end(), c), 20);
}

TEST(Blobs, ZeroSpreadCollapsesEachClass) {
  const Dataset ds = make_blobs(3, 10, 4, 0.0, 5);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const std::size_t first = ds.labels[i] * 10;
    for (std::size_t k = 0; k < ds.dim; ++k) EXPECT_EQ(ds.row(i)[k], ds.row(first)[k]);
  }
}

TEST(Blobs, SmallSpreadIsSeparatedByNearestCentroid) {
  // Nearest centroid is a linear rule, so perfect accuracy shows linear separability.
  const Dataset ds = make_blobs(5, 40, 8, 0.02, 3);
  std::vector<double> centroid(5 * ds.dim, 0.0);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t k = 0; k < ds.dim; ++k) centroid[ds.labels[i] * ds.dim + k] += ds.row(i)[k] / 40.0;
  }
  for (std::size_t i = 0; i < ds.size(); ++i) {
    std::size_t best = 0;
    double best_d = INFINITY;
    for (std::size_t c = 0; c < 5; ++c) {
      double d = 0.0;
      for (std::size_t k = 0; k < ds.dim; ++k) d += std::pow(ds.row(i)[k] - centroid[c * ds.dim + k], 2);
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    EXPECT_EQ(best, ds.labels[i]);
  }
}

TEST(TwoMoons, NoiselessPointsLieOnTheArcs) {
  const Dataset ds = make_two_moons(101, 0.0, 1);
  EXPECT_EQ(std::count(ds.labels.begin(), ds.labels.end(), 0u), 51);
  EXPECT_EQ(std::count(ds.labels.begin(), ds.labels.end(), 1u), 50);
  // Noiseless arcs span [-1, 2] in total, so the shared squash map is u = 3v - 1.
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const double x = 3.0 * ds.row(i)[0] - 1.0;
    const double y = 3.0 * ds.row(i)[1] - 1.0;
    const double r = ds.labels[i] == 0 ? std::hypot(x, y) : std::hypot(1.0 - x, 0.5 - y);
    EXPECT_NEAR(r, 1.0, 1e-12);
  }
}

TEST(TwoMoons, NoisyDataStaysInUnitBox) {
  const Dataset ds = make_two_moons(500, 0.2, 8);
  EXPECT_NO_THROW(ds.validate());
  expect_same(ds, make_two_moons(500, 0.2, 8));
  EXPECT_THROW(make_two_moons(1, 0.1, 0), ContractError);
}

TEST(Split, PartitionsWithoutOverlap) {
  const Dataset full = make_two_moons(100, 0.1, 2);
  const auto [train, test] = train_test_split(full, 30, 4);
  EXPECT_EQ(train.size(), 70u);
  EXPECT_EQ(test.size(), 30u);
  EXPECT_EQ(train.split, Split::train);
  EXPECT_EQ(test.split, Split::test);
  std::multiset<std::pair<double, double>> all, parts;
  for (std::size_t i = 0; i < full.size(); ++i) all.insert({full.row(i)[0], full.row(i)[1]});
  for (const auto* d : {&train, &test}) {
    for (std::size_t i = 0; i < d->size(); ++i) parts.insert({d->row(i)[0], d->row(i)[1]});
  }
  EXPECT_EQ(all, parts);
  EXPECT_THROW(train_test_split(full, 100, 4), ContractError);
}

TEST(BatchOrder, CoversEverySampleOnce) {
  Rng rng(1);
  for (std::size_t count : {1u, 2u, 10u, 129u, 257u}) {
    for (std::size_t bs : {1u, 2u, 3u, 64u, 128u}) {
      const auto batches = batch_order(count, bs, rng);
      std::vector<int> seen(count, 0);
      for (const auto& b : batches) {
        if (count >= 2 && bs >= 2) {
          EXPECT_GE(b.size(), 2u);
        }
        for (std::size_t i : b) ++seen[i];
      }
      for (int s : seen) EXPECT_EQ(s, 1);
    }
  }
  const auto merged = batch_order(129, 128, rng);
  ASSERT_EQ(merged.size(), 1u);
  EXPECT_EQ(merged[0].size(), 129u);
  EXPECT_THROW(batch_order(10, 0, rng), ContractError);
}

TEST(BinaryFormat, RoundTripIsExact) {
  Dataset ds = make_blobs(3, 7, 4, 0.5, 9);
  ds.split = Split::test;
  const auto path = temp_path("ds.bin");
  save_dataset(ds, path);
  const Dataset back = load_dataset(path);
  expect_same(ds, back);
  EXPECT_EQ(back.split, Split::test);
  std::filesystem::remove(path);
}

TEST(BinaryFormat, TruncationAndHeaderMismatchReportOffsets) {
  const Dataset ds = make_blobs(2, 5, 3, 0.5, 9);
  const auto path = temp_path("ds_bad.bin");
  save_dataset(ds, path);
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 3);
  try {
    load_dataset(path);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 8u + 13u);  // payload start: magic then the 13-byte header
  }
  save_dataset(ds, path);
  {
    // Declare one extra record.
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(8);
    const unsigned char m[4] = {11, 0, 0, 0};
    f.write(reinterpret_cast<const char*>(m), 4);
  }
  EXPECT_THROW(load_dataset(path), FormatError);
  {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f << "ASCL";
  }
  EXPECT_THROW(load_dataset(path), FormatError);
  std::filesystem::remove(path);
}

TEST(CsvFormat, RoundTripIsExact) {
  const Dataset ds = make_two_moons(40, 0.15, 3);
  const auto path = temp_path("ds.csv");
  save_csv(ds, path);
  expect_same(ds, load_csv(path));
  std::filesystem::remove(path);
}

TEST(CsvFormat, MalformedRowsRaiseFormatErrorAtTheField) {
  const auto path = temp_path("bad.csv");
  {
    std::ofstream f(path);
    f << "x0,x1,label\n0.5,0.5,0\n0.5,abc,1\n";
  }
  try {
    load_csv(path);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 12u + 10u + 4u);
  }
  {
    std::ofstream f(path);
    f << "x0,x1,label\n0.5,1.5,0\n";
  }
  EXPECT_THROW(load_csv(path), FormatError);
  {
    std::ofstream f(path);
    f << "x0,x1\n0.5,0.5\n";
  }
  EXPECT_THROW(load_csv(path), FormatError);
  {
    std::ofstream f(path);
    f << "x0,x1,label\n0.5,0.5,0,1\n";
  }
  EXPECT_THROW(load_csv(path), FormatError);
  std::filesystem::remove(path);
}

TEST(Augment, FlipIsAnInvolutionAndZeroShiftIsIdentity) {
  const Dataset ds = tiny_images();
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const std::vector<double> row(ds.row(i).begin(), ds.row(i).end());
    EXPECT_EQ(flip_horizontal(flip_horizontal(row, *ds.image), *ds.image), row);
    EXPECT_EQ(shift_image(row, *ds.image, 0, 0), row);
  }
  const ImageShape img{1, 1, 3};
  const std::vector<double> r = {0.1, 0.2, 0.3};
  EXPECT_EQ(flip_horizontal(r, img), (std::vector<double>{0.3, 0.2, 0.1}));
  EXPECT_EQ(shift_image(r, img, 0, 1), (std::vector<double>{0.0, 0.1, 0.2}));
}

TEST(Augment, OutputStaysInRangeAndNoopIsIdentity) {
  Dataset ds;
  ds.dim = 3 * 8 * 8;
  ds.image = ImageShape{3, 8, 8};
  Rng data_rng(4);
  std::vector<double> batch(1000 * ds.dim);
  for (double& v : batch) v = data_rng.uniform();
  Rng rng(1);
  const auto out = augment(batch, ds.dim, ds.image, AugmentationSpec{}, rng);
  ASSERT_EQ(out.size(), batch.size());
  for (double v : out) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_NE(out, batch);
  EXPECT_EQ(augment(batch, ds.dim, ds.image, AugmentationSpec::none(), rng), batch);
  Rng again(1);
  EXPECT_EQ(augment(batch, ds.dim, ds.image, AugmentationSpec{}, again), out);
}

TEST(Augment, VectorDataIsRejected) {
  Rng rng(1);
  const std::vector<double> batch = {0.1, 0.2, 0.3, 0.4};
  EXPECT_THROW(augment(batch, 2, std::nullopt, AugmentationSpec{}, rng), ConfigError);
  EXPECT_EQ(augment(batch, 2, std::nullopt, AugmentationSpec::none(), rng), batch);
}

#include <gtest/gtest.h>

#include <fstream>

#include "apvt/cifar.hpp"
#include "test_util.hpp"

using namespace apvt;
using apvt::tu::TempDir;

namespace {

RawRecords make_records(std::size_t n) {
  RawRecords r;
  for (std::size_t i = 0; i < n; ++i) {
    r.labels.push_back(static_cast<int>(i % 10));
    for (std::size_t j = 0; j < kCifarImageBytes; ++j) r.pixels.push_back(static_cast<std::uint8_t>((i * 7 + j) % 256));
  }
  return r;
}

void write_split(const std::filesystem::path& dir, std::size_t per_file, std::size_t test) {
  for (int f = 1; f <= 5; ++f) write_cifar10_file(dir / ("data_batch_" + std::to_string(f) + ".bin"), make_records(per_file));
  write_cifar10_file(dir / "test_batch.bin", make_records(test));
}

}  // namespace

TEST(CifarParse, PositionExactRecords) {
  std::vector<std::uint8_t> bytes(3 * kCifarRecordBytes);
  for (std::size_t i = 0; i < 3; ++i) {
    bytes[i * kCifarRecordBytes] = static_cast<std::uint8_t>(i + 4);
    bytes[i * kCifarRecordBytes + 1] = static_cast<std::uint8_t>(100 + i);           // first red pixel
    bytes[i * kCifarRecordBytes + 1 + 1024] = static_cast<std::uint8_t>(150 + i);    // first green pixel
    bytes[(i + 1) * kCifarRecordBytes - 1] = static_cast<std::uint8_t>(200 + i);     // last blue pixel
  }
  const auto r = parse_cifar10_records(bytes, "mem");
  ASSERT_EQ(r.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(r.labels[i], static_cast<int>(i + 4));
    EXPECT_EQ(r.pixels[i * kCifarImageBytes], 100 + i);
    EXPECT_EQ(r.pixels[i * kCifarImageBytes + 1024], 150 + i);
    EXPECT_EQ(r.pixels[(i + 1) * kCifarImageBytes - 1], 200 + i);
  }
}

TEST(CifarParse, RejectsBadLengthAndLabel) {
  std::vector<std::uint8_t> bytes(kCifarRecordBytes + 5);
  EXPECT_THROW(parse_cifar10_records(bytes, "mem"), DataError);
  bytes.resize(2 * kCifarRecordBytes);
  bytes[kCifarRecordBytes] = 10;
  try {
    parse_cifar10_records(bytes, "mem");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("record 1"), std::string::npos) << e.what();
  }
}

TEST(CifarLoad, CountsLimitAndMissingFiles) {
  TempDir dir;
  EXPECT_THROW(load_cifar10(dir.path(), Split::kTrain), DataError);
  write_split(dir.path(), 30, 20);
  const auto train = load_cifar10(dir.path(), Split::kTrain);
  EXPECT_EQ(train.size(), 150u);
  EXPECT_EQ(train.images.size(), 150u * kCifarImageBytes);
  const auto test = load_cifar10(dir.path(), Split::kTest);
  EXPECT_EQ(test.size(), 20u);

  const auto a = load_cifar10(dir.path(), Split::kTrain, 45);
  const auto b = load_cifar10(dir.path(), Split::kTrain, 45);
  ASSERT_EQ(a.size(), 45u);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(a.images, b.images);
  // Crosses from the first file into the second.
  EXPECT_EQ(a.labels[31], 1);
  EXPECT_TRUE(std::equal(a.images.begin(), a.images.end(), train.images.begin()));
}

TEST(CifarLoad, SearchesStandardSubdirectory) {
  TempDir dir;
  std::filesystem::create_directories(dir / "cifar-10-batches-bin");
  write_split(dir / "cifar-10-batches-bin", 2, 2);
  EXPECT_EQ(load_cifar10(dir.path(), Split::kTest).size(), 2u);
}

TEST(CifarNorm, StatisticsCachedFromTrainSplitOnly) {
  TempDir dir;
  write_split(dir.path(), 10, 10);
  // Make the test split very different; its statistics must not leak in.
  RawRecords bright = make_records(10);
  std::fill(bright.pixels.begin(), bright.pixels.end(), 255);
  write_cifar10_file(dir / "test_batch.bin", bright);

  const auto expected = compute_norm_stats(read_cifar10_files(cifar10_files(dir.path(), Split::kTrain)));
  const auto test = load_cifar10(dir.path(), Split::kTest);
  ASSERT_TRUE(std::filesystem::exists(dir / std::string(kNormStatsFile)));
  const auto cached = read_norm_stats(dir / std::string(kNormStatsFile));
  for (int c = 0; c < 3; ++c) {
    EXPECT_DOUBLE_EQ(cached.mean[c], expected.mean[c]);
    EXPECT_DOUBLE_EQ(cached.stddev[c], expected.stddev[c]);
    EXPECT_FLOAT_EQ(test.images[c * 1024], static_cast<float>((1.0 - expected.mean[c]) / expected.stddev[c]));
  }
}

TEST(CifarNorm, ZeroRecordNormalizesToMinusMeanOverStd) {
  RawRecords r;
  r.labels = {0};
  r.pixels.assign(kCifarImageBytes, 0);
  const NormStats stats{{0.5, 0.25, 0.125}, {0.2, 0.4, 0.8}};
  const auto ds = normalize(r, stats, Split::kTest);
  EXPECT_EQ(ds.labels[0], 0);
  for (int c = 0; c < 3; ++c) {
    EXPECT_FLOAT_EQ(ds.images[c * 1024 + 17], static_cast<float>(-stats.mean[c] / stats.stddev[c]));
  }
}

TEST(CifarNorm, SidecarRoundTripAndValidation) {
  TempDir dir;
  const NormStats s{{0.1, 0.2, 0.3}, {0.4, 0.5, 0.6}};
  write_norm_stats(dir / "stats.txt", s);
  const auto r = read_norm_stats(dir / "stats.txt");
  EXPECT_EQ(r.mean, s.mean);
  EXPECT_EQ(r.stddev, s.stddev);
  std::ofstream(dir / "bad.txt") << "1 2 3 4 0 6\n";
  EXPECT_THROW(read_norm_stats(dir / "bad.txt"), DataError);
  std::ofstream(dir / "short.txt") << "1 2 3\n";
  EXPECT_THROW(read_norm_stats(dir / "short.txt"), DataError);
}

TEST(CifarSubset, SelectsFirstPerClassAndRelabels) {
  const NormStats stats{{0, 0, 0}, {1, 1, 1}};
  const auto ds = normalize(make_records(50), stats, Split::kTrain);
  const std::vector<int> classes{7, 2};
  const auto sub = select_classes(ds, classes, 3);
  ASSERT_EQ(sub.size(), 6u);
  EXPECT_EQ(sub.labels, (std::vector<int>{1, 0, 1, 0, 1, 0}));
  // First kept record is original record 2.
  EXPECT_EQ(sub.images[0], ds.images[2 * kCifarImageBytes]);
  EXPECT_EQ(sub.num_classes(), 2);
}

TEST(CifarBatch, GatherAndFlip) {
  const NormStats stats{{0, 0, 0}, {1, 1, 1}};
  const auto ds = normalize(make_records(4), stats, Split::kTrain);
  const std::vector<std::size_t> idx{3, 1};
  const std::vector<std::uint8_t> flip{0, 1};
  const auto t = gather_images<float>(ds, idx, flip);
  EXPECT_EQ(t.shape(), (Shape{2, 3, 32, 32}));
  EXPECT_EQ(t[5], ds.images[3 * kCifarImageBytes + 5]);
  // Row 4, column 0 of image 1 comes from column 31.
  EXPECT_EQ(t[kCifarImageBytes + 4 * 32], ds.images[1 * kCifarImageBytes + 4 * 32 + 31]);
  EXPECT_THROW(gather_images<float>(ds, std::vector<std::size_t>{9}), DataError);
}

TEST(CifarSynthetic, WritesStandardLayout) {
  TempDir dir;
  write_synthetic_cifar10(dir.path(), 20, 10, 3);
  EXPECT_EQ(std::filesystem::file_size(dir / "data_batch_3.bin"), 20 * kCifarRecordBytes);
  EXPECT_EQ(std::filesystem::file_size(dir / "test_batch.bin"), 10 * kCifarRecordBytes);
  const auto train = read_cifar10_files(cifar10_files(dir.path(), Split::kTrain));
  std::vector<int> counts(10, 0);
  for (int l : train.labels) ++counts[l];
  for (int c : counts) EXPECT_EQ(c, 10);
}

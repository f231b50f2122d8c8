#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string_view>
#include <vector>

#include "apvt/tensor.hpp"

namespace apvt {

inline constexpr std::size_t kCifarSide = 32;
inline constexpr std::size_t kCifarChannels = 3;
inline constexpr std::size_t kCifarImageBytes = kCifarChannels * kCifarSide * kCifarSide;
inline constexpr std::size_t kCifarRecordBytes = 1 + kCifarImageBytes;
inline constexpr int kCifarClasses = 10;
inline constexpr std::string_view kNormStatsFile = "apvt_norm_stats.txt";

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Split { kTrain, kTest };

struct NormStats {
  std::array<double, 3> mean{};
  std::array<double, 3> stddev{};
};

struct RawRecords {
  std::vector<std::uint8_t> pixels;  // channel-planar, kCifarImageBytes per record
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
};

/// Normalized images [N, 3, 32, 32] with integer labels.
struct Dataset {
  std::vector<float> images;
  std::vector<int> labels;
  Split split = Split::kTrain;
  std::size_t side = kCifarSide;

  std::size_t size() const { return labels.size(); }
  int num_classes() const;  // max label + 1
};

// The five data_batch_*.bin files for train, test_batch.bin for test. A
// cifar-10-batches-bin subdirectory is searched when present.
std::vector<std::filesystem::path> cifar10_files(const std::filesystem::path& dir, Split split);

// Record i occupies bytes [3073 i, 3073 (i + 1)): label byte then R, G, B
// planes of 1024 bytes each.
RawRecords parse_cifar10_records(std::span<const std::uint8_t> bytes, std::string_view source);
RawRecords read_cifar10_files(const std::vector<std::filesystem::path>& files, std::optional<std::size_t> limit = {});

NormStats compute_norm_stats(const RawRecords& records);
void write_norm_stats(const std::filesystem::path& path, const NormStats& stats);
NormStats read_norm_stats(const std::filesystem::path& path);
// Reads the sidecar in `dir`, or computes the statistics from the full
// training split and tries to cache them there.
NormStats load_or_compute_norm_stats(const std::filesystem::path& dir);

Dataset normalize(const RawRecords& records, const NormStats& stats, Split split);
Dataset load_cifar10(const std::filesystem::path& dir, Split split, std::optional<std::size_t> limit = {});

// Keeps the first `per_class` records of each listed class, in file order,
// relabelled to the class's position in `classes`.
Dataset select_classes(const Dataset& data, std::span<const int> classes, std::size_t per_class);

// Gathers images into [B, 3, side, side]; flip[i] mirrors image i horizontally.
template <typename T>
Tensor<T> gather_images(const Dataset& data, std::span<const std::size_t> indices,
                        std::span<const std::uint8_t> flip = {});

void write_cifar10_file(const std::filesystem::path& path, const RawRecords& records);

// Writes the six standard batch files. Labels cycle through the ten classes;
// each image is a random smooth background, a weaker per-class pattern and
// pixel noise. The pattern is placed at a random cyclic shift.
void write_synthetic_cifar10(const std::filesystem::path& dir, std::size_t records_per_train_file,
                             std::size_t test_records, std::uint64_t seed);

extern template Tensor<float> gather_images(const Dataset&, std::span<const std::size_t>, std::span<const std::uint8_t>);
extern template Tensor<double> gather_images(const Dataset&, std::span<const std::size_t>, std::span<const std::uint8_t>);

}  // namespace apvt

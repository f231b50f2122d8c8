#include "apvt/cifar.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <random>
#include <sstream>
#include <string>

namespace apvt {

namespace fs = std::filesystem;

int Dataset::num_classes() const {
  int mx = -1;
  for (int l : labels) mx = std::max(mx, l);
  return mx + 1;
}

std::vector<fs::path> cifar10_files(const fs::path& dir, Split split) {
  fs::path root = dir;
  if (fs::is_directory(dir / "cifar-10-batches-bin")) root = dir / "cifar-10-batches-bin";
  std::vector<fs::path> files;
  if (split == Split::kTrain) {
    for (int i = 1; i <= 5; ++i) files.push_back(root / ("data_batch_" + std::to_string(i) + ".bin"));
  } else {
    files.push_back(root / "test_batch.bin");
  }
  for (const auto& f : files) {
    if (!fs::is_regular_file(f)) throw DataError("missing CIFAR-10 file " + f.string());
  }
  return files;
}

RawRecords parse_cifar10_records(std::span<const std::uint8_t> bytes, std::string_view source) {
  if (bytes.size() % kCifarRecordBytes != 0) {
    throw DataError(std::string(source) + ": length " + std::to_string(bytes.size()) +
                    " is not a multiple of " + std::to_string(kCifarRecordBytes));
  }
  RawRecords out;
  const std::size_t n = bytes.size() / kCifarRecordBytes;
  out.labels.reserve(n);
  out.pixels.reserve(n * kCifarImageBytes);
  for (std::size_t i = 0; i < n; ++i) {
    const auto record = bytes.subspan(i * kCifarRecordBytes, kCifarRecordBytes);
    if (record[0] >= kCifarClasses) {
      throw DataError(std::string(source) + ": record " + std::to_string(i) + " has label " +
                      std::to_string(record[0]));
    }
    out.labels.push_back(record[0]);
    out.pixels.insert(out.pixels.end(), record.begin() + 1, record.end());
  }
  return out;
}

RawRecords read_cifar10_files(const std::vector<fs::path>& files, std::optional<std::size_t> limit) {
  RawRecords all;
  for (const auto& f : files) {
    if (limit && all.size() >= *limit) break;
    std::ifstream in(f, std::ios::binary);
    if (!in) throw DataError("cannot open " + f.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    auto part = parse_cifar10_records(bytes, f.string());
    all.labels.insert(all.labels.end(), part.labels.begin(), part.labels.end());
    all.pixels.insert(all.pixels.end(), part.pixels.begin(), part.pixels.end());
  }
  if (limit && all.size() > *limit) {
    all.labels.resize(*limit);
    all.pixels.resize(*limit * kCifarImageBytes);
  }
  return all;
}

NormStats compute_norm_stats(const RawRecords& records) {
  if (records.size() == 0) throw DataError("cannot compute statistics of an empty split");
  NormStats stats;
  const std::size_t plane = kCifarSide * kCifarSide;
  for (std::size_t c = 0; c < kCifarChannels; ++c) {
    double s = 0, sq = 0;
    for (std::size_t i = 0; i < records.size(); ++i) {
      const std::uint8_t* p = records.pixels.data() + i * kCifarImageBytes + c * plane;
      for (std::size_t j = 0; j < plane; ++j) {
        const double v = p[j] / 255.0;
        s += v;
        sq += v * v;
      }
    }
    const double n = static_cast<double>(records.size() * plane);
    const double m = s / n;
    stats.mean[c] = m;
    stats.stddev[c] = std::sqrt(std::max(sq / n - m * m, 0.0));
    if (stats.stddev[c] == 0) stats.stddev[c] = 1.0;
  }
  return stats;
}

void write_norm_stats(const fs::path& path, const NormStats& stats) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << std::setprecision(17);
  out << stats.mean[0] << ' ' << stats.mean[1] << ' ' << stats.mean[2] << ' ' << stats.stddev[0] << ' '
      << stats.stddev[1] << ' ' << stats.stddev[2] << '\n';
  if (!out) throw DataError("cannot write " + path.string());
}

NormStats read_norm_stats(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  NormStats stats;
  in >> stats.mean[0] >> stats.mean[1] >> stats.mean[2] >> stats.stddev[0] >> stats.stddev[1] >> stats.stddev[2];
  if (!in) throw DataError(path.string() + ": expected six numbers");
  for (double s : stats.stddev) {
    if (!(s > 0)) throw DataError(path.string() + ": standard deviations must be positive");
  }
  return stats;
}

NormStats load_or_compute_norm_stats(const fs::path& dir) {
  const fs::path sidecar = dir / kNormStatsFile;
  if (fs::is_regular_file(sidecar)) return read_norm_stats(sidecar);
  const auto stats = compute_norm_stats(read_cifar10_files(cifar10_files(dir, Split::kTrain)));
  try {
    write_norm_stats(sidecar, stats);
  } catch (const DataError&) {
    // read-only dataset directory; the statistics are recomputed next time
  }
  return stats;
}

Dataset normalize(const RawRecords& records, const NormStats& stats, Split split) {
  Dataset ds;
  ds.split = split;
  ds.labels = records.labels;
  ds.images.resize(records.pixels.size());
  const std::size_t plane = kCifarSide * kCifarSide;
  for (std::size_t i = 0; i < records.pixels.size(); ++i) {
    const std::size_t c = (i / plane) % kCifarChannels;
    ds.images[i] = static_cast<float>((records.pixels[i] / 255.0 - stats.mean[c]) / stats.stddev[c]);
  }
  return ds;
}

Dataset load_cifar10(const fs::path& dir, Split split, std::optional<std::size_t> limit) {
  const auto files = cifar10_files(dir, split);
  const auto stats = load_or_compute_norm_stats(dir);
  return normalize(read_cifar10_files(files, limit), stats, split);
}

Dataset select_classes(const Dataset& data, std::span<const int> classes, std::size_t per_class) {
  Dataset out;
  out.split = data.split;
  out.side = data.side;
  const std::size_t image = kCifarChannels * data.side * data.side;
  std::vector<std::size_t> taken(classes.size(), 0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto it = std::find(classes.begin(), classes.end(), data.labels[i]);
    if (it == classes.end()) continue;
    const auto k = static_cast<std::size_t>(it - classes.begin());
    if (taken[k] >= per_class) continue;
    ++taken[k];
    out.labels.push_back(static_cast<int>(k));
    out.images.insert(out.images.end(), data.images.begin() + static_cast<std::ptrdiff_t>(i * image),
                      data.images.begin() + static_cast<std::ptrdiff_t>((i + 1) * image));
  }
  return out;
}

template <typename T>
Tensor<T> gather_images(const Dataset& data, std::span<const std::size_t> indices, std::span<const std::uint8_t> flip) {
  if (indices.empty()) throw DataError("empty batch");
  const std::size_t side = data.side;
  const std::size_t image = kCifarChannels * side * side;
  Tensor<T> out(Shape{indices.size(), kCifarChannels, side, side});
  for (std::size_t b = 0; b < indices.size(); ++b) {
    if (indices[b] >= data.size()) throw DataError("record index " + std::to_string(indices[b]) + " out of range");
    const float* src = data.images.data() + indices[b] * image;
    T* dst = out.data().data() + b * image;
    const bool mirror = !flip.empty() && flip[b];
    for (std::size_t row = 0; row < kCifarChannels * side; ++row) {
      for (std::size_t x = 0; x < side; ++x) {
        dst[row * side + x] = static_cast<T>(src[row * side + (mirror ? side - 1 - x : x)]);
      }
    }
  }
  return out;
}

void write_cifar10_file(const fs::path& path, const RawRecords& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (std::size_t i = 0; i < records.size(); ++i) {
    out.put(static_cast<char>(records.labels[i]));
    out.write(reinterpret_cast<const char*>(records.pixels.data() + i * kCifarImageBytes), kCifarImageBytes);
  }
  if (!out) throw DataError("cannot write " + path.string());
}

void write_synthetic_cifar10(const fs::path& dir, std::size_t records_per_train_file, std::size_t test_records,
                             std::uint64_t seed) {
  fs::create_directories(dir);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 20.0);
  constexpr std::size_t kPlane = kCifarSide * kCifarSide;

  // Adds amplitude * sin(fy y + py) cos(fx x + px) to one channel plane.
  auto add_wave = [&](double* plane, double amplitude) {
    const double fy = 0.2 + 0.6 * unit(rng), fx = 0.2 + 0.6 * unit(rng);
    const double py = 6.283 * unit(rng), px = 6.283 * unit(rng);
    for (std::size_t y = 0; y < kCifarSide; ++y) {
      for (std::size_t x = 0; x < kCifarSide; ++x) {
        plane[y * kCifarSide + x] += amplitude * std::sin(fy * y + py) * std::cos(fx * x + px);
      }
    }
  };

  std::vector<std::vector<double>> prototypes(kCifarClasses, std::vector<double>(kCifarImageBytes, 0.0));
  for (auto& proto : prototypes) {
    for (std::size_t c = 0; c < kCifarChannels; ++c) add_wave(proto.data() + c * kPlane, 14.0);
  }
  // Labels cycle through the classes; each image is a random smooth
  // background plus its class pattern plus pixel noise.
  std::size_t next_label = 0;
  auto make = [&](std::size_t count) {
    RawRecords r;
    std::vector<double> img(kCifarImageBytes);
    for (std::size_t i = 0; i < count; ++i) {
      const int label = static_cast<int>(next_label++ % kCifarClasses);
      r.labels.push_back(label);
      for (std::size_t c = 0; c < kCifarChannels; ++c) {
        double* plane = img.data() + c * kPlane;
        std::fill(plane, plane + kPlane, 128.0 + 40.0 * (unit(rng) - 0.5));
        for (int k = 0; k < 2; ++k) add_wave(plane, 35.0);
      }
      // The class pattern lands at a random cyclic offset.
      const std::size_t dy = rng() % kCifarSide, dx = rng() % kCifarSide;
      const auto& proto = prototypes[label];
      for (std::size_t c = 0; c < kCifarChannels; ++c) {
        for (std::size_t y = 0; y < kCifarSide; ++y) {
          for (std::size_t x = 0; x < kCifarSide; ++x) {
            const std::size_t j = c * kPlane + y * kCifarSide + x;
            const double p = proto[c * kPlane + ((y + dy) % kCifarSide) * kCifarSide + (x + dx) % kCifarSide];
            const double v = std::clamp(img[j] + p + noise(rng), 0.0, 255.0);
            r.pixels.push_back(static_cast<std::uint8_t>(std::lround(v)));
          }
        }
      }
    }
    return r;
  };
  for (int f = 1; f <= 5; ++f) {
    write_cifar10_file(dir / ("data_batch_" + std::to_string(f) + ".bin"), make(records_per_train_file));
  }
  write_cifar10_file(dir / "test_batch.bin", make(test_records));
}

template Tensor<float> gather_images(const Dataset&, std::span<const std::size_t>, std::span<const std::uint8_t>);
template Tensor<double> gather_images(const Dataset&, std::span<const std::size_t>, std::span<const std::uint8_t>);

}  // namespace apvt

#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "apvt/params.hpp"

// File layout, all integers little-endian u32:
//   "APVT" | version | entry count |
//   per entry: name length | UTF-8 name | rank | extents... | f32 payload
namespace apvt {

inline constexpr char kCheckpointMagic[4] = {'A', 'P', 'V', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class CheckpointMagicError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointVersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
// Entry names or shapes disagree with the target registry.
class CheckpointMismatchError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
// Truncated or otherwise malformed payload, or an I/O failure.
class CheckpointFormatError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

// Values are always stored as 32-bit floats.
template <typename T>
void save_checkpoint(const ParamStore<T>& params, const std::filesystem::path& path);

std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path);

// Validates every entry against the registry before touching any parameter.
template <typename T>
void load_checkpoint(ParamStore<T>& params, const std::filesystem::path& path);

extern template void save_checkpoint(const ParamStore<float>&, const std::filesystem::path&);
extern template void save_checkpoint(const ParamStore<double>&, const std::filesystem::path&);
extern template void load_checkpoint(ParamStore<float>&, const std::filesystem::path&);
extern template void load_checkpoint(ParamStore<double>&, const std::filesystem::path&);

}  // namespace apvt

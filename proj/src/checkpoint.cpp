#include "apvt/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace apvt {

namespace {

void put_u32(std::vector<char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

class Reader {
 public:
  explicit Reader(std::vector<char> bytes) : bytes_(std::move(bytes)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }

  std::string str(std::size_t n) {
    need(n);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }

  bool at_end() const { return pos_ == bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw CheckpointFormatError("checkpoint is truncated");
  }
  std::vector<char> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

template <typename T>
void save_checkpoint(const ParamStore<T>& params, const std::filesystem::path& path) {
  std::vector<char> out(kCheckpointMagic, kCheckpointMagic + 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& e : params.entries()) {
    put_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    put_u32(out, static_cast<std::uint32_t>(e.tensor.rank()));
    for (auto extent : e.tensor.shape()) put_u32(out, static_cast<std::uint32_t>(extent));
    for (T v : e.tensor.data()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw CheckpointFormatError("cannot write " + path.string());
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) throw CheckpointFormatError("cannot write " + path.string());
}

std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw CheckpointFormatError("cannot open " + path.string());
  Reader in(std::vector<char>((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>()));

  std::string magic;
  try {
    magic = in.str(4);
  } catch (const CheckpointFormatError&) {
    throw CheckpointMagicError(path.string() + ": not an APVT checkpoint");
  }
  if (std::memcmp(magic.data(), kCheckpointMagic, 4) != 0) {
    throw CheckpointMagicError(path.string() + ": not an APVT checkpoint");
  }
  const auto version = in.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointVersionError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = in.u32();
  std::vector<CheckpointEntry> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    e.name = in.str(in.u32());
    const auto rank = in.u32();
    for (std::uint32_t r = 0; r < rank; ++r) e.shape.push_back(in.u32());
    const std::size_t n = numel(e.shape);
    if (n > in.remaining() / 4) throw CheckpointFormatError(path.string() + ": checkpoint is truncated");
    e.values.reserve(n);
    for (std::size_t k = 0; k < n; ++k) e.values.push_back(std::bit_cast<float>(in.u32()));
    entries.push_back(std::move(e));
  }
  if (!in.at_end()) throw CheckpointFormatError(path.string() + ": trailing bytes after last entry");
  return entries;
}

template <typename T>
void load_checkpoint(ParamStore<T>& params, const std::filesystem::path& path) {
  const auto entries = read_checkpoint(path);
  if (entries.size() != params.size()) {
    throw CheckpointMismatchError(path.string() + ": " + std::to_string(entries.size()) + " entries, model has " +
                                  std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& target = params.entries()[i];
    if (entries[i].name != target.name) {
      throw CheckpointMismatchError(path.string() + ": entry " + std::to_string(i) + " is '" + entries[i].name +
                                    "', expected '" + target.name + "'");
    }
    if (entries[i].shape != target.tensor.shape()) {
      throw CheckpointMismatchError(path.string() + ": '" + target.name + "' has shape " +
                                    shape_str(entries[i].shape) + ", expected " + shape_str(target.tensor.shape()));
    }
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto dst = params.entries()[i].tensor.data();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = static_cast<T>(entries[i].values[k]);
  }
}

template void save_checkpoint(const ParamStore<float>&, const std::filesystem::path&);
template void save_checkpoint(const ParamStore<double>&, const std::filesystem::path&);
template void load_checkpoint(ParamStore<float>&, const std::filesystem::path&);
template void load_checkpoint(ParamStore<double>&, const std::filesystem::path&);

}  // namespace apvt

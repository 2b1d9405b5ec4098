// Checkpoint layout:
//   "NEXUS1\n"
//   canonical model config line, '\n'-terminated
//   u64 parameter count
//   per parameter: u32 path length, path bytes, u32 rank, u64 dims..., f64 values
//   u64 FNV-1a checksum over every value byte, in file order
// All integers and floats are little-endian.

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include "nexus/error.hpp"
#include "nexus/model.hpp"
#include "nexus/rng.hpp"

namespace nexus {

namespace {

constexpr char kMagic[] = "NEXUS1\n";

template <typename T>
void put_le(std::ostream& os, T v) {
  std::array<unsigned char, sizeof(T)> bytes{};
  std::memcpy(bytes.data(), &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  os.write(reinterpret_cast<const char*>(bytes.data()), sizeof(T));
}

template <typename T>
T get_le(std::istream& is, const char* what) {
  std::array<unsigned char, sizeof(T)> bytes{};
  if (!is.read(reinterpret_cast<char*>(bytes.data()), sizeof(T))) {
    throw MismatchError(std::string("checkpoint truncated while reading ") + what);
  }
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  T v;
  std::memcpy(&v, bytes.data(), sizeof(T));
  return v;
}

std::array<unsigned char, 8> le_bytes(double v) {
  std::array<unsigned char, 8> b{};
  std::memcpy(b.data(), &v, 8);
  if constexpr (std::endian::native == std::endian::big) std::reverse(b.begin(), b.end());
  return b;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const NexusConfig& config, const NexusParams& params) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw InputError("cannot open checkpoint for writing: " + path.string());
  os.write(kMagic, sizeof kMagic - 1);
  const std::string header = config.canonical() + '\n';
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  put_le<std::uint64_t>(os, params.size());
  std::uint64_t checksum = fnv1a64(nullptr, 0);
  for (const auto& [name, p] : params) {
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(p.rank()));
    for (auto d : p.shape()) put_le<std::uint64_t>(os, d);
    for (double v : p.values()) {
      const auto b = le_bytes(v);
      os.write(reinterpret_cast<const char*>(b.data()), 8);
      checksum = fnv1a64(b.data(), 8, checksum);
    }
  }
  put_le<std::uint64_t>(os, checksum);
  if (!os) throw InputError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot open checkpoint: " + path.string());
  char magic[sizeof kMagic - 1];
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw MismatchError("not a NEXUS1 checkpoint: " + path.string());
  }
  std::string header;
  if (!std::getline(is, header)) throw MismatchError("checkpoint missing config line");

  Checkpoint ck;
  ck.config = NexusConfig::from_canonical(header);
  const auto count = get_le<std::uint64_t>(is, "parameter count");
  std::uint64_t checksum = fnv1a64(nullptr, 0);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = get_le<std::uint32_t>(is, "path length");
    if (len > 4096) throw MismatchError("checkpoint path length out of range");
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw MismatchError("checkpoint truncated in parameter path");
    const auto rank = get_le<std::uint32_t>(is, "rank");
    if (rank == 0 || rank > 8) throw MismatchError("checkpoint rank out of range for " + name);
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(get_le<std::uint64_t>(is, "shape"));
    std::vector<double> values(shape_size(shape));
    for (auto& v : values) {
      std::array<unsigned char, 8> b{};
      if (!is.read(reinterpret_cast<char*>(b.data()), 8)) throw MismatchError("checkpoint truncated in " + name);
      checksum = fnv1a64(b.data(), 8, checksum);
      if constexpr (std::endian::native == std::endian::big) std::reverse(b.begin(), b.end());
      std::memcpy(&v, b.data(), 8);
    }
    ck.params.add(name, DiffArray::from(std::move(shape), std::move(values), true));
  }
  const auto stored = get_le<std::uint64_t>(is, "checksum");
  if (stored != checksum) throw MismatchError("checkpoint checksum mismatch: " + path.string());
  if (is.peek() != std::char_traits<char>::eof()) throw MismatchError("trailing bytes after checkpoint: " + path.string());

  // Structure must agree with what the stored config would build.
  ck.config.validate();
  if (count_parameters(ck.config) != ck.params.scalar_count()) {
    throw MismatchError("checkpoint parameters do not match its config");
  }
  return ck;
}

}  // namespace nexus

#include "factory/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace factory {

namespace {

constexpr char kMagic[8] = {'F', 'A', 'C', 'T', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

void write_string(std::ostream& os, const std::string& s) {
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is) {
  const auto n = read_pod<std::uint32_t>(is);
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw std::runtime_error("checkpoint: truncated string");
  return s;
}

}  // namespace

void Checkpoint::save(const std::string& path) const {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("checkpoint: cannot open for write: " + path);
    os.write(kMagic, sizeof(kMagic));
    write_pod<std::uint32_t>(os, kVersion);

    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(meta_ints.size()));
    for (const auto& [k, v] : meta_ints) {
      write_string(os, k);
      write_pod<std::int64_t>(os, v);
    }
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(meta_strings.size()));
    for (const auto& [k, v] : meta_strings) {
      write_string(os, k);
      write_string(os, v);
    }
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(arrays.size()));
    for (const auto& [k, t] : arrays) {
      write_string(os, k);
      write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(t.ndim()));
      for (int i = 0; i < t.ndim(); ++i) write_pod<std::int64_t>(os, t.dim(i));
      os.write(reinterpret_cast<const char*>(t.data()),
               static_cast<std::streamsize>(t.size() * static_cast<std::int64_t>(sizeof(double))));
    }
    if (!os) throw std::runtime_error("checkpoint: write failed: " + path);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw std::runtime_error("checkpoint: rename failed: " + path);
  }
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open: " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("checkpoint: bad magic in " + path);
  }
  const auto version = read_pod<std::uint32_t>(is);
  if (version != kVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  }

  Checkpoint ck;
  const auto n_ints = read_pod<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < n_ints; ++i) {
    std::string k = read_string(is);
    ck.meta_ints[k] = read_pod<std::int64_t>(is);
  }
  const auto n_strs = read_pod<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < n_strs; ++i) {
    std::string k = read_string(is);
    ck.meta_strings[k] = read_string(is);
  }
  const auto n_arr = read_pod<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < n_arr; ++i) {
    std::string k = read_string(is);
    const auto ndim = read_pod<std::uint32_t>(is);
    std::vector<int> shape(ndim);
    for (auto& d : shape) d = static_cast<int>(read_pod<std::int64_t>(is));
    Tensor t(shape);
    is.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.size() * static_cast<std::int64_t>(sizeof(double))));
    if (!is) throw std::runtime_error("checkpoint: truncated array " + k);
    ck.arrays.emplace(std::move(k), std::move(t));
  }
  return ck;
}

const Tensor& Checkpoint::array(const std::string& name) const {
  auto it = arrays.find(name);
  if (it == arrays.end()) throw std::runtime_error("checkpoint: missing array " + name);
  return it->second;
}

std::int64_t Checkpoint::meta_int(const std::string& name) const {
  auto it = meta_ints.find(name);
  if (it == meta_ints.end()) throw std::runtime_error("checkpoint: missing meta " + name);
  return it->second;
}

}  // namespace factory

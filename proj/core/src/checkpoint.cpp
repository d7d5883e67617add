#include "graspdet/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "graspdet/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint container assumes a little-endian host");

namespace grasp {

namespace {

constexpr char kMagic[8] = {'G', 'R', 'A', 'S', 'P', 'C', 'K', '\0'};
constexpr char kElemTag[4] = {'f', '6', '4', '\0'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint32_t get_u32(std::istream& is, const std::string& path) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v))
    throw ParseError("truncated checkpoint: " + path);
  return v;
}

std::uint64_t get_u64(std::istream& is, const std::string& path) {
  std::uint64_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v))
    throw ParseError("truncated checkpoint: " + path);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::vector<NamedParam>& params) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for write: " + path);
  os.write(kMagic, sizeof kMagic);
  put_u32(os, kVersion);
  os.write(kElemTag, sizeof kElemTag);
  put_u32(os, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    if (!p.value.defined()) throw ArgumentError("undefined tensor for param: " + p.name);
    put_u32(os, static_cast<std::uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    const auto& shape = p.value.shape();
    put_u32(os, static_cast<std::uint32_t>(shape.size()));
    for (int d : shape) put_u32(os, static_cast<std::uint32_t>(d));
    const std::uint64_t bytes = static_cast<std::uint64_t>(p.value.size()) * sizeof(ad::real);
    put_u64(os, bytes);
    os.write(reinterpret_cast<const char*>(p.value.data()),
             static_cast<std::streamsize>(bytes));
  }
  if (!os) throw IoError("write failed: " + path);
}

std::vector<NamedParam> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  char magic[8];
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0)
    throw ParseError("bad checkpoint magic: " + path);
  if (get_u32(is, path) != kVersion) throw ParseError("unsupported checkpoint version: " + path);
  char tag[4];
  if (!is.read(tag, sizeof tag) || std::memcmp(tag, kElemTag, sizeof tag) != 0)
    throw ParseError("unsupported element type: " + path);
  const std::uint32_t count = get_u32(is, path);
  std::vector<NamedParam> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = get_u32(is, path);
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) throw ParseError("truncated checkpoint: " + path);
    const std::uint32_t ndim = get_u32(is, path);
    std::vector<int> shape(ndim);
    std::size_t elems = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      shape[d] = static_cast<int>(get_u32(is, path));
      if (shape[d] <= 0) throw ParseError("bad dim in checkpoint: " + path);
      elems *= static_cast<std::size_t>(shape[d]);
    }
    const std::uint64_t bytes = get_u64(is, path);
    if (bytes != elems * sizeof(ad::real))
      throw ParseError("byte length mismatch for param " + name + ": " + path);
    ad::Tensor t = ad::Tensor::zeros(shape);
    if (!is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(bytes)))
      throw ParseError("truncated checkpoint: " + path);
    out.push_back({std::move(name), std::move(t)});
  }
  return out;
}

}  // namespace grasp

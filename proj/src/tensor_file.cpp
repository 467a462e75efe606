#include "sbl/tensor_file.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "sbl/errors.hpp"

namespace sbl {

static_assert(std::endian::native == std::endian::little, "tensor files assume a little-endian host");

namespace {
constexpr char kMagic[8] = {'S', 'B', 'L', 'T', 'E', 'N', 'S', 'R'};
}

const NamedTensor& TensorFile::get(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t;
  }
  throw DataError("tensor file: missing tensor '" + name + "'");
}

void write_tensor_file(const TensorFile& file, const std::filesystem::path& path) {
  nlohmann::json table = nlohmann::json::array();
  for (const auto& t : file.tensors) {
    std::size_t expected = 1;
    for (int d : t.shape) expected *= static_cast<std::size_t>(d);
    if (expected != t.data.size()) throw DataError("tensor file: shape mismatch for '" + t.name + "'");
    table.push_back({{"name", t.name}, {"shape", t.shape}});
  }
  nlohmann::json header = {{"version", kTensorFileVersion}, {"meta", file.meta}, {"tensors", table}};
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(kMagic, sizeof(kMagic));
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& t : file.tensors) {
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  }
  if (!out) throw DataError("write failed: " + path.string());
}

TensorFile read_tensor_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  char magic[8];
  std::uint64_t len = 0;
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
    throw DataError(path.string() + ": not an sbl tensor file");
  }
  if (!in.read(reinterpret_cast<char*>(&len), sizeof(len)) || len > (1ULL << 30)) {
    throw DataError(path.string() + ": corrupt header length");
  }
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw DataError(path.string() + ": truncated header");

  TensorFile file;
  try {
    const auto header = nlohmann::json::parse(text);
    if (header.at("version").get<int>() != kTensorFileVersion) {
      throw DataError(path.string() + ": unsupported tensor file version");
    }
    file.meta = header.at("meta");
    for (const auto& entry : header.at("tensors")) {
      NamedTensor t;
      t.name = entry.at("name").get<std::string>();
      t.shape = entry.at("shape").get<std::vector<int>>();
      std::size_t count = 1;
      for (int d : t.shape) {
        if (d < 0) throw DataError(path.string() + ": negative dimension");
        count *= static_cast<std::size_t>(d);
      }
      t.data.resize(count);
      file.tensors.push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": malformed header: " + e.what());
  }
  for (auto& t : file.tensors) {
    if (!in.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * sizeof(float)))) {
      throw DataError(path.string() + ": truncated payload for '" + t.name + "'");
    }
  }
  return file;
}

}  // namespace sbl

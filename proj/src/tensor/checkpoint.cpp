#include "tensor/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "common/error.hpp"

namespace ds::checkpoint {

namespace {

constexpr char kMagic[4] = {'D', 'S', 'T', 'C'};

template <typename T>
void put_le(std::ostream& out, T value) {
  unsigned char bytes[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    bytes[i] = static_cast<unsigned char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xFF);
  }
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get_le(std::istream& in, const std::filesystem::path& path) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) {
    throw ParseError("checkpoint " + path.string() + ": truncated container");
  }
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return static_cast<T>(v);
}

}  // namespace

void write_container(const std::filesystem::path& path, const NamedTensors& tensors) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(kMagic, 4);
  put_le<std::uint32_t>(out, kFormatVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put_le<std::uint64_t>(out, d);
    for (double v : t.values()) {
      put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
  }
  if (!out) throw IoError("failed writing " + path.string());
}

NamedTensors read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint container " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw ParseError("checkpoint " + path.string() + ": bad magic");
  }
  const auto version = get_le<std::uint32_t>(in, path);
  if (version != kFormatVersion) {
    throw ParseError("checkpoint " + path.string() + ": unsupported version " +
                     std::to_string(version));
  }
  const auto count = get_le<std::uint32_t>(in, path);
  NamedTensors result;
  result.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = get_le<std::uint32_t>(in, path);
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw ParseError("checkpoint: truncated name");
    const auto rank = get_le<std::uint32_t>(in, path);
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(get_le<std::uint64_t>(in, path));
    std::vector<double> values(shape_numel(shape));
    for (double& v : values) {
      v = static_cast<double>(std::bit_cast<float>(get_le<std::uint32_t>(in, path)));
    }
    result.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  return result;
}

void save(const std::filesystem::path& dir, const NamedTensors& tensors, nlohmann::json manifest) {
  std::filesystem::create_directories(dir);
  write_container(dir / kTensorFile, tensors);
  manifest["format_version"] = kFormatVersion;
  std::ofstream out(dir / kManifestFile);
  if (!out) throw IoError("cannot write manifest in " + dir.string());
  out << manifest.dump(2) << '\n';
}

std::pair<NamedTensors, nlohmann::json> load(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir / kManifestFile)) {
    throw IoError("checkpoint not found: " + dir.string());
  }
  std::ifstream in(dir / kManifestFile);
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("checkpoint manifest: " + std::string(e.what()));
  }
  if (!manifest.contains("format_version") || manifest["format_version"] != kFormatVersion) {
    throw ParseError("checkpoint manifest: missing or unsupported format_version");
  }
  return {read_container(dir / kTensorFile), std::move(manifest)};
}

}  // namespace ds::checkpoint

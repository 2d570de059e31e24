#include "spectral/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace spectral {

static_assert(std::endian::native == std::endian::little, "checkpoint payload assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'S', 'P', 'E', 'C', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw CheckpointError("checkpoint truncated in header");
  return v;
}

}  // namespace

void TensorArchive::put(const std::string& name, Shape shape, std::vector<float> values) {
  if (shape_numel(shape) != static_cast<std::int64_t>(values.size())) {
    throw CheckpointError("TensorArchive::put: '" + name + "' has " + std::to_string(values.size()) +
                          " values for shape " + to_string(shape));
  }
  buffers_[name] = Buffer{std::move(shape), std::move(values)};
}

const Shape& TensorArchive::shape(const std::string& name) const {
  auto it = buffers_.find(name);
  if (it == buffers_.end()) throw CheckpointError("checkpoint has no tensor '" + name + "'");
  return it->second.shape;
}

const std::vector<float>& TensorArchive::values(const std::string& name) const {
  auto it = buffers_.find(name);
  if (it == buffers_.end()) throw CheckpointError("checkpoint has no tensor '" + name + "'");
  return it->second.values;
}

void TensorArchive::load_into(const std::string& name, Tensor& tensor) const {
  const auto& stored = shape(name);
  if (stored != tensor.shape()) {
    throw CheckpointError("checkpoint tensor '" + name + "' has shape " + to_string(stored) + ", expected " +
                          to_string(tensor.shape()));
  }
  const auto& v = values(name);
  std::copy(v.begin(), v.end(), tensor.mutable_data().begin());
}

std::vector<std::string> TensorArchive::names() const {
  std::vector<std::string> out;
  for (const auto& [name, _] : buffers_) out.push_back(name);
  return out;
}

void TensorArchive::save(const std::filesystem::path& path) const {
  nlohmann::json manifest = {{"meta", meta_}, {"tensors", nlohmann::json::object()}};
  std::uint64_t offset = 0;
  for (const auto& [name, buf] : buffers_) {
    manifest["tensors"][name] = {{"shape", buf.shape}, {"offset", offset}, {"count", buf.values.size()}};
    offset += buf.values.size() * sizeof(float);
  }
  const std::string text = manifest.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open '" + path.string() + "' for writing");
  out.write(kMagic, sizeof(kMagic));
  write_pod(out, kVersion);
  write_pod(out, static_cast<std::uint64_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, buf] : buffers_) {
    out.write(reinterpret_cast<const char*>(buf.values.data()),
              static_cast<std::streamsize>(buf.values.size() * sizeof(float)));
  }
  if (!out) throw CheckpointError("write to '" + path.string() + "' failed");
}

TensorArchive TensorArchive::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError("'" + path.string() + "' is not a checkpoint (bad magic)");
  }
  const auto version = read_pod<std::uint32_t>(in);
  if (version != kVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  const auto length = read_pod<std::uint64_t>(in);
  std::string text(length, '\0');
  in.read(text.data(), static_cast<std::streamsize>(length));
  if (!in) throw CheckpointError("checkpoint truncated in manifest");

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint manifest: ") + e.what());
  }

  const auto payload_start = in.tellg();
  in.seekg(0, std::ios::end);
  const auto payload_size = static_cast<std::uint64_t>(in.tellg() - payload_start);

  TensorArchive archive;
  archive.meta_ = manifest.value("meta", nlohmann::json::object());
  for (const auto& [name, entry] : manifest.at("tensors").items()) {
    const auto offset = entry.at("offset").get<std::uint64_t>();
    const auto count = entry.at("count").get<std::uint64_t>();
    if (offset + count * sizeof(float) > payload_size) {
      throw CheckpointError("checkpoint tensor '" + name + "' extends past end of file");
    }
    std::vector<float> values(count);
    in.seekg(payload_start + static_cast<std::streamoff>(offset));
    in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(count * sizeof(float)));
    if (!in) throw CheckpointError("checkpoint tensor '" + name + "' could not be read");
    archive.put(name, entry.at("shape").get<Shape>(), std::move(values));
  }
  return archive;
}

}  // namespace spectral

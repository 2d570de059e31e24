#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "spectral/tensor.hpp"

namespace spectral {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Flat binary container: a JSON manifest followed by raw little-endian float32
/// buffers.
///
///   bytes 0..7    magic "SPECCKPT"
///   bytes 8..11   format version (uint32, currently 1)
///   bytes 12..19  manifest length L (uint64)
///   next L bytes  UTF-8 JSON manifest
///   remainder     payload; manifest["tensors"][name] = {shape, offset, count}
///                 with offset in bytes from the start of the payload
///
/// Round trips are bit-exact: buffers are copied, never re-encoded.
class TensorArchive {
 public:
  nlohmann::json& meta() { return meta_; }
  const nlohmann::json& meta() const { return meta_; }

  void put(const std::string& name, Shape shape, std::vector<float> values);
  void put(const std::string& name, const Tensor& tensor) {
    put(name, tensor.shape(), {tensor.data().begin(), tensor.data().end()});
  }
  bool contains(const std::string& name) const { return buffers_.count(name) != 0; }
  const Shape& shape(const std::string& name) const;
  const std::vector<float>& values(const std::string& name) const;
  /// Copies a stored buffer into `tensor`, which must have the stored shape.
  void load_into(const std::string& name, Tensor& tensor) const;
  std::vector<std::string> names() const;

  void save(const std::filesystem::path& path) const;
  static TensorArchive load(const std::filesystem::path& path);

 private:
  struct Buffer {
    Shape shape;
    std::vector<float> values;
  };
  nlohmann::json meta_ = nlohmann::json::object();
  std::map<std::string, Buffer> buffers_;
};

}  // namespace spectral

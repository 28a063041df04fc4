#ifndef CEMB_MODEL_ARCHIVE_HPP_
#define CEMB_MODEL_ARCHIVE_HPP_

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cemb/model/encoder.hpp"
#include "cemb/numerics/tensor.hpp"
#include "json.hpp"

// On-disk tensor archive: a directory holding
//   manifest.json  {"format", "version", "tensors": [{name, shape, dtype,
//                   offset, nbytes}], "total_bytes", "weights_hash", ...extra}
//   weights.bin    little-endian raw values, concatenated in manifest order
// A model checkpoint adds config.json (ModelConfig field-for-field).
namespace cemb::model {

inline constexpr const char* kArchiveFormat = "cemb-tensor-archive";
inline constexpr int kArchiveVersion = 1;

struct ArchiveEntry {
  std::string name;
  numerics::Shape shape;
  numerics::DType dtype = numerics::DType::kFloat32;
  std::uint64_t offset = 0;
  std::uint64_t nbytes = 0;
};

struct Archive {
  nlohmann::json manifest;
  std::vector<ArchiveEntry> entries;
  std::string payload;  // contents of weights.bin

  const ArchiveEntry& find(const std::string& name) const;
  bool contains(const std::string& name) const;
  // Converts from the stored dtype when it differs from T.
  template <typename T>
  Tensor<T> tensor(const std::string& name) const;
};

template <typename T>
using NamedTensors = std::vector<std::pair<std::string, const Tensor<T>*>>;

// Writes manifest.json and weights.bin into dir (created if needed). Keys of
// `extra` are merged into the manifest. Duplicate names are rejected.
template <typename T>
void write_archive(const std::filesystem::path& dir, const NamedTensors<T>& tensors,
                   const nlohmann::json& extra = nlohmann::json::object());

// Reads and verifies an archive: sizes, offsets and the payload hash.
// Any mismatch is a CorruptionError.
Archive read_archive(const std::filesystem::path& dir);

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json_file(const std::filesystem::path& path);

template <typename T>
void save_model(const EncoderModel<T>& model, const std::filesystem::path& dir,
                const nlohmann::json& extra = nlohmann::json::object());

// Loads config.json plus the archive; every parameter the config implies must
// be present exactly once with the expected shape.
template <typename T>
EncoderModel<T> load_model(const std::filesystem::path& dir);

}  // namespace cemb::model

#endif  // CEMB_MODEL_ARCHIVE_HPP_

#include "cemb/model/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "cemb/errors.hpp"
#include "cemb/json_util.hpp"

namespace cemb::model {

namespace fs = std::filesystem;
using numerics::DType;

namespace {

static_assert(std::endian::native == std::endian::little,
              "archive I/O assumes a little-endian host");

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

template <typename Dst, typename Src>
std::vector<Dst> decode_values(const char* bytes, std::size_t count) {
  std::vector<Src> raw(count);
  std::memcpy(raw.data(), bytes, count * sizeof(Src));
  return std::vector<Dst>(raw.begin(), raw.end());
}

}  // namespace

void write_json_file(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

nlohmann::json read_json_file(const fs::path& path) {
  const std::string text = read_file(path);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw CorruptionError(path.string() + ": " + e.what());
  }
}

const ArchiveEntry& Archive::find(const std::string& name) const {
  for (const auto& e : entries) {
    if (e.name == name) return e;
  }
  throw CorruptionError("archive has no tensor named '" + name + "'");
}

bool Archive::contains(const std::string& name) const {
  for (const auto& e : entries) {
    if (e.name == name) return true;
  }
  return false;
}

template <typename T>
Tensor<T> Archive::tensor(const std::string& name) const {
  const ArchiveEntry& e = find(name);
  const std::size_t count = numerics::shape_numel(e.shape);
  const char* bytes = payload.data() + e.offset;
  std::vector<T> values = e.dtype == DType::kFloat32 ? decode_values<T, float>(bytes, count)
                                                     : decode_values<T, double>(bytes, count);
  return Tensor<T>::from(e.shape, std::move(values));
}

template <typename T>
void write_archive(const fs::path& dir, const NamedTensors<T>& tensors, const nlohmann::json& extra) {
  fs::create_directories(dir);
  std::set<std::string> names;
  nlohmann::json list = nlohmann::json::array();
  std::string payload;
  for (const auto& [name, t] : tensors) {
    if (!names.insert(name).second) throw ArgumentError("duplicate tensor name '" + name + "'");
    const std::size_t nbytes = t->numel() * sizeof(T);
    list.push_back({{"name", name},
                    {"shape", t->shape()},
                    {"dtype", numerics::dtype_name(Tensor<T>::dtype())},
                    {"offset", payload.size()},
                    {"nbytes", nbytes}});
    payload.append(reinterpret_cast<const char*>(t->data().data()), nbytes);
  }
  nlohmann::json manifest = extra;
  manifest["format"] = kArchiveFormat;
  manifest["version"] = kArchiveVersion;
  manifest["tensors"] = std::move(list);
  manifest["total_bytes"] = payload.size();
  manifest["weights_hash"] = json_util::hex64(json_util::fnv1a64(payload));

  std::ofstream out(dir / "weights.bin", std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + (dir / "weights.bin").string());
  out.write(payload.data(), std::streamsize(payload.size()));
  out.close();
  if (!out) throw IoError("write failed for " + (dir / "weights.bin").string());
  write_json_file(dir / "manifest.json", manifest);
}

Archive read_archive(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.json") || !fs::exists(dir / "weights.bin")) {
    throw CorruptionError(dir.string() + " is missing manifest.json or weights.bin");
  }
  Archive a;
  a.manifest = read_json_file(dir / "manifest.json");
  a.payload = read_file(dir / "weights.bin");
  try {
    if (a.manifest.at("format") != kArchiveFormat) throw CorruptionError("unexpected archive format");
    const auto total = a.manifest.at("total_bytes").get<std::uint64_t>();
    if (a.payload.size() != total) {
      throw CorruptionError("weights.bin holds " + std::to_string(a.payload.size()) +
                            " bytes, manifest expects " + std::to_string(total));
    }
    const auto hash = a.manifest.at("weights_hash").get<std::string>();
    if (hash != json_util::hex64(json_util::fnv1a64(a.payload))) {
      throw CorruptionError("weights.bin hash mismatch in " + dir.string());
    }
    std::set<std::string> names;
    std::uint64_t expected_offset = 0;
    for (const auto& t : a.manifest.at("tensors")) {
      ArchiveEntry e;
      e.name = t.at("name").get<std::string>();
      e.shape = t.at("shape").get<numerics::Shape>();
      e.dtype = numerics::parse_dtype(t.at("dtype").get<std::string>());
      e.offset = t.at("offset").get<std::uint64_t>();
      e.nbytes = t.at("nbytes").get<std::uint64_t>();
      if (!names.insert(e.name).second) throw CorruptionError("tensor '" + e.name + "' listed twice");
      if (e.offset != expected_offset ||
          e.nbytes != numerics::shape_numel(e.shape) * numerics::dtype_size(e.dtype)) {
        throw CorruptionError("tensor '" + e.name + "' has an inconsistent offset or size");
      }
      expected_offset += e.nbytes;
      a.entries.push_back(std::move(e));
    }
    if (expected_offset != total) throw CorruptionError("tensor sizes do not add up to total_bytes");
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError(std::string("malformed manifest: ") + e.what());
  } catch (const FormatError& e) {
    throw CorruptionError(e.what());
  }
  return a;
}

template <typename T>
void save_model(const EncoderModel<T>& model, const fs::path& dir, const nlohmann::json& extra) {
  write_archive<T>(dir, model.parameters(), extra);
  write_json_file(dir / "config.json", nlohmann::json(model.config));
}

template <typename T>
EncoderModel<T> load_model(const fs::path& dir) {
  ModelConfig config;
  try {
    config = read_json_file(dir / "config.json").get<ModelConfig>();
  } catch (const ConfigError& e) {
    throw CorruptionError(std::string("config.json: ") + e.what());
  }
  Archive archive = read_archive(dir);
  EncoderModel<T> model = init_model<T>(config, 0);
  auto params = model.parameters();
  if (archive.entries.size() != params.size()) {
    throw CorruptionError("archive lists " + std::to_string(archive.entries.size()) +
                          " tensors, config implies " + std::to_string(params.size()));
  }
  for (auto& [name, t] : params) {
    Tensor<T> loaded = archive.tensor<T>(name);
    if (loaded.shape() != t->shape()) {
      throw CorruptionError("tensor '" + name + "' has shape " +
                            numerics::shape_to_string(loaded.shape()) + ", expected " +
                            numerics::shape_to_string(t->shape()));
    }
    *t = loaded;
  }
  return model;
}

template Tensor<float> Archive::tensor<float>(const std::string&) const;
template Tensor<double> Archive::tensor<double>(const std::string&) const;
template void write_archive<float>(const fs::path&, const NamedTensors<float>&, const nlohmann::json&);
template void write_archive<double>(const fs::path&, const NamedTensors<double>&,
                                    const nlohmann::json&);
template void save_model(const EncoderModel<float>&, const fs::path&, const nlohmann::json&);
template void save_model(const EncoderModel<double>&, const fs::path&, const nlohmann::json&);
template EncoderModel<float> load_model<float>(const fs::path&);
template EncoderModel<double> load_model<double>(const fs::path&);

}  // namespace cemb::model

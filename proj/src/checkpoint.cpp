#include "dagvae/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <openssl/evp.h>

#include "dagvae/error.hpp"

namespace dagvae {

namespace fs = std::filesystem;

namespace {

std::string blob_file_name(const std::string& tensor_name) {
  std::string out;
  for (char c : tensor_name) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_' || c == '-') ? c : '~';
  return out + ".bin";
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorruptionError("missing file " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const fs::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CorruptionError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::string encode_le(const ad::Tensor& t) {
  std::string bytes(t.size() * sizeof(double), '\0');
  for (std::size_t i = 0; i < t.size(); ++i) {
    auto bits = std::bit_cast<std::uint64_t>(t[i]);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    std::memcpy(bytes.data() + i * sizeof(double), &bits, sizeof(bits));
  }
  return bytes;
}

ad::Tensor decode_le(const std::string& bytes, ad::Shape shape) {
  ad::Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) {
    std::uint64_t bits = 0;
    std::memcpy(&bits, bytes.data() + i * sizeof(double), sizeof(bits));
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    t[i] = std::bit_cast<double>(bits);
  }
  return t;
}

}  // namespace

const ad::Tensor& CheckpointArchive::tensor(const std::string& name) const {
  const auto it = std::find_if(tensors.begin(), tensors.end(), [&](const auto& e) { return e.first == name; });
  if (it == tensors.end()) throw CorruptionError("checkpoint has no tensor '" + name + "'");
  return it->second;
}

void save_checkpoint(const fs::path& dir, const CheckpointArchive& archive) {
  fs::create_directories(dir / "tensors");
  nlohmann::json registry = nlohmann::json::array();
  for (const auto& [name, tensor] : archive.tensors) {
    const std::string file = blob_file_name(name);
    write_file(dir / "tensors" / file, encode_le(tensor));
    registry.push_back({{"name", name}, {"file", "tensors/" + file}, {"shape", tensor.shape()}, {"dtype", "f64le"}});
  }
  nlohmann::json manifest = {
      {"format_version", kCheckpointFormatVersion},
      {"graph", archive.graph},
      {"config", archive.config},
      {"config_digest", archive.config_digest},
      {"model", archive.model},
      {"optimizer", archive.optimizer},
      {"rng_state", archive.rng_state},
      {"completed_stage", archive.completed_stage},
      {"tensors", registry},
  };
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

CheckpointArchive load_checkpoint(const fs::path& dir) {
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_file(dir / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError("unreadable manifest in " + dir.string() + ": " + e.what());
  }
  const int version = manifest.value("format_version", -1);
  if (version != kCheckpointFormatVersion)
    throw VersionError("checkpoint format version " + std::to_string(version) + ", expected " +
                       std::to_string(kCheckpointFormatVersion));
  CheckpointArchive a;
  try {
    a.graph = manifest.at("graph");
    a.config = manifest.at("config");
    a.config_digest = manifest.at("config_digest").get<std::string>();
    a.model = manifest.at("model");
    a.optimizer = manifest.at("optimizer");
    a.rng_state = manifest.at("rng_state").get<std::string>();
    a.completed_stage = manifest.at("completed_stage").get<std::size_t>();
    for (const auto& entry : manifest.at("tensors")) {
      const auto name = entry.at("name").get<std::string>();
      const auto shape = entry.at("shape").get<ad::Shape>();
      if (entry.at("dtype").get<std::string>() != "f64le") throw CorruptionError("unsupported dtype for " + name);
      const std::string bytes = read_file(dir / entry.at("file").get<std::string>());
      if (bytes.size() != ad::shape_size(shape) * sizeof(double))
        throw CorruptionError("blob for '" + name + "' has " + std::to_string(bytes.size()) + " bytes, expected " +
                              std::to_string(ad::shape_size(shape) * sizeof(double)));
      a.tensors.emplace_back(name, decode_le(bytes, shape));
    }
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError("malformed manifest in " + dir.string() + ": " + e.what());
  }
  return a;
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int{digest[i]};
  return os.str();
}

std::string checkpoint_digest(const fs::path& dir) {
  const std::string manifest_bytes = read_file(dir / "manifest.json");
  std::string all = manifest_bytes;
  const auto manifest = nlohmann::json::parse(manifest_bytes);
  for (const auto& entry : manifest.at("tensors")) all += read_file(dir / entry.at("file").get<std::string>());
  return sha256_hex(all);
}

}  // namespace dagvae

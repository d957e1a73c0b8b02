#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dagvae/autodiff.hpp"

namespace dagvae {

inline constexpr int kCheckpointFormatVersion = 1;

// On-disk layout: <dir>/manifest.json plus <dir>/tensors/<file>.bin holding
// little-endian float64 values in row-major order.
struct CheckpointArchive {
  nlohmann::json graph;    // {"vertices": [...], "edges": [[from, to], ...]}
  nlohmann::json config;   // echo of the run configuration
  std::string config_digest;
  nlohmann::json model;    // architecture needed to rebuild the parameter registry
  nlohmann::json optimizer;
  std::string rng_state;
  std::size_t completed_stage = 0;
  std::vector<std::pair<std::string, ad::Tensor>> tensors;

  const ad::Tensor& tensor(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& dir, const CheckpointArchive& archive);
// Throws VersionError on a format mismatch, CorruptionError on a missing or
// wrongly sized blob.
CheckpointArchive load_checkpoint(const std::filesystem::path& dir);

// SHA-256 over the manifest and every blob in registry order.
std::string checkpoint_digest(const std::filesystem::path& dir);

std::string sha256_hex(std::string_view bytes);

}  // namespace dagvae

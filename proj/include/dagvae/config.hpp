#pragma once

// Run configuration: one JSON document describing data, graph, model,
// training and analysis settings. Relative paths resolve against the
// directory holding the config file.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dagvae/data_io.hpp"
#include "dagvae/model.hpp"
#include "dagvae/trainer.hpp"

namespace dagvae {

struct ModalityConfig {
  std::string name;
  std::optional<std::filesystem::path> matrix;
  MatrixFormat format = MatrixFormat::matrix_market;
  std::optional<std::filesystem::path> cells;
  std::optional<std::filesystem::path> features;
  dist::Likelihood likelihood = dist::Likelihood::zinb;
  bool binarize = false;
  std::optional<std::size_t> top_n_features;
  // Feature count for generating data without a matrix.
  std::optional<std::size_t> n_features;
  std::optional<std::size_t> dim_z;
  std::optional<std::size_t> n_components;
};

struct BatchConfig {
  std::filesystem::path path;
  std::string column;
};

struct AnalysisConfig {
  std::size_t enrichment_k = 50;
  std::size_t n_pairs = 1000;
};

struct RunConfig {
  std::filesystem::path base_dir;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "run";
  std::vector<ModalityConfig> modalities;
  std::vector<Edge> edges;
  ModelConfig model;
  std::size_t width_divisor = 1;
  TrainConfig train;
  std::optional<BatchConfig> batch;
  AnalysisConfig analysis;
  nlohmann::json source;

  // Throws ConfigError naming the offending key path.
  static RunConfig parse(const nlohmann::json& doc, const std::filesystem::path& base_dir);
  static RunConfig load(const std::filesystem::path& path);

  // SHA-256 over the dataset, graph, model and batch blocks.
  std::string digest() const;

  std::size_t dim_z(std::size_t m) const;
  std::size_t n_components(std::size_t m) const;
};

struct LoadedData {
  std::vector<ModalityData> modalities;
  BatchCovariate batch;
};

// Header-level checks: graph, files, shapes, batch column. Never reads values.
struct PreflightReport {
  std::vector<std::size_t> n_cells;     // per modality
  std::vector<std::size_t> n_features;  // after feature selection
};
PreflightReport preflight(const RunConfig& cfg);

// Loads, preprocesses and checks every modality plus the batch covariate.
LoadedData load_data(const RunConfig& cfg);

// Model layout for loaded data (feature counts taken from the data).
ModelSpec model_spec(const RunConfig& cfg, const LoadedData& data);
// Model layout from the configured n_features, for generation from scratch.
ModelSpec model_spec_without_data(const RunConfig& cfg);

}  // namespace dagvae

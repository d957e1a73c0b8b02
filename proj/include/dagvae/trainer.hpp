#pragma once

// Stage-wise ELBO optimization. Modalities are trained in topological stages;
// everything outside the current stage stays frozen while the loss is still
// evaluated over all modalities.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dagvae/checkpoint.hpp"
#include "dagvae/data_io.hpp"
#include "dagvae/model.hpp"

namespace dagvae {

struct TrainConfig {
  double learning_rate = 1e-4;
  std::size_t epochs_per_stage = 750;
  std::size_t batch_size = 128;
  std::size_t warmup_epochs = 50;
  std::size_t early_stop_patience = 20;
  double early_stop_min_delta = 0.0;
  double validation_fraction = 0.1;
  std::uint64_t seed = 0;
  std::size_t threads = 1;

  // Throws ConfigError on out-of-range settings.
  void validate() const;
};

// Linear ramp min(1, epoch / warmup_epochs); 1 when warm-up is disabled.
double kl_warmup(std::size_t epoch, std::size_t warmup_epochs);

class AdamState {
 public:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEpsilon = 1e-8;

  AdamState() = default;
  explicit AdamState(const ParameterStore& store);

  // Updates parameters whose mask entry is set. An empty gradient counts as
  // zero. Frozen parameters and their moments are left alone.
  void step(ParameterStore& store, std::span<const ad::Tensor> grads, const std::vector<bool>& mask, double lr);

  std::size_t steps(std::size_t i) const { return slots_.at(i).step; }
  const ad::Tensor& first_moment(std::size_t i) const { return slots_.at(i).m; }
  const ad::Tensor& second_moment(std::size_t i) const { return slots_.at(i).v; }

  void save(CheckpointArchive& archive, const ParameterStore& store) const;
  static AdamState load(const CheckpointArchive& archive, const ParameterStore& store);

 private:
  struct Slot {
    ad::Tensor m;
    ad::Tensor v;
    std::size_t step = 0;
  };
  std::vector<Slot> slots_;
};

struct TrainingData {
  std::span<const ModalityData> modalities;
  const BatchCovariate* batch = nullptr;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_elbo = 0.0;
  double val_elbo = 0.0;
  double recon = 0.0;
  double kl_z = 0.0;
  double kl_c = 0.0;
};

struct StageReport {
  std::size_t stage = 0;  // 1-based
  std::vector<std::size_t> modalities;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_val_elbo = 0.0;
  bool stopped_early = false;
};

void write_stage_csv(const std::filesystem::path& path, const StageReport& report);

// Everything needed to continue training from a stage boundary.
struct TrainSession {
  Model model;
  AdamState optimizer;
  dist::Rng rng;
  std::size_t completed_stages = 0;
};

TrainSession start_session(const ModelSpec& spec, std::uint64_t seed);

// Per-cell ELBO (beta = 1) averaged over `cells`, using the noise stream of `rng`.
EpochRecord evaluate(const Model& model, const TrainingData& data, std::span<const std::size_t> cells, dist::Rng& rng,
                     std::size_t threads);

// Trains the modalities of one stage. `stage` is 1-based.
StageReport train_stage(TrainSession& session, std::size_t stage, const TrainingData& data, const TrainConfig& cfg);

struct RunOutput {
  std::filesystem::path dir;
  nlohmann::json config;
  std::string config_digest;
};

// Trains all remaining stages. With `out`, writes stage_<s>.csv and a
// checkpoint under checkpoints/stage_<s> after each stage. A NumericsError is
// rethrown after saving the last finite state to checkpoints/last_finite.
std::vector<StageReport> train_sequential(TrainSession& session, const TrainingData& data, const TrainConfig& cfg,
                                          const RunOutput* out = nullptr);

CheckpointArchive make_archive(const TrainSession& session, const nlohmann::json& config, const std::string& digest);
TrainSession restore_session(const CheckpointArchive& archive);
// Model parameters only; the optimizer and RNG are not needed for analysis.
Model restore_model(const CheckpointArchive& archive);

}  // namespace dagvae

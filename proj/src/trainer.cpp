#include "dagvae/trainer.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include "dagvae/error.hpp"
#include "dagvae/parallel.hpp"

namespace dagvae {

namespace fs = std::filesystem;

namespace {

constexpr std::size_t kChunkCells = 32;

struct ChunkResult {
  std::vector<ad::Tensor> grads;
  double elbo = 0.0;
  double recon = 0.0;
  double kl_z = 0.0;
  double kl_c = 0.0;
};

double sum_of(const ad::Var& v) {
  double s = 0.0;
  for (double x : v.value().values()) s += x;
  return s;
}

ChunkResult run_chunk(const Model& model, const std::vector<bool>* mask, const CellBatch& batch,
                      const ForwardNoise& noise, std::span<const double> beta) {
  ad::Graph g;
  ParamBinding params = mask ? ParamBinding(g, model.parameters(), *mask) : ParamBinding(g, model.parameters());
  const ForwardState state = forward(model, params, batch, &noise, ForwardMode::stochastic);
  const ElboTerms terms = elbo(model, batch, state);
  ChunkResult r;
  r.elbo = sum_of(terms.total);
  for (const auto& e : terms.modalities) {
    r.recon += sum_of(e.recon);
    r.kl_z += sum_of(e.kl_z);
    r.kl_c += sum_of(e.kl_c);
  }
  if (mask) r.grads = params.collect(g.backward(weighted_loss_sum(terms, beta)));
  return r;
}

std::vector<ChunkResult> run_cells(const Model& model, const std::vector<bool>* mask, const TrainingData& data,
                                   std::span<const std::size_t> cells, dist::Rng& rng, std::span<const double> beta,
                                   std::size_t threads) {
  const auto ranges = chunk_ranges(cells.size(), kChunkCells);
  std::vector<CellBatch> batches;
  std::vector<ForwardNoise> noise;
  for (const auto& [b, e] : ranges) {
    const auto sub = cells.subspan(b, e - b);
    batches.push_back(make_batch(data.modalities, *data.batch, sub));
    noise.push_back(draw_noise(model, sub.size(), model.spec().config.n_mc_samples, rng));
  }
  std::vector<ChunkResult> results(ranges.size());
  parallel_for(ranges.size(), threads,
               [&](std::size_t i) { results[i] = run_chunk(model, mask, batches[i], noise[i], beta); });
  return results;
}

std::string rng_to_string(const dist::Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

dist::Rng rng_from_string(const std::string& s) {
  dist::Rng rng;
  std::istringstream is(s);
  is >> rng;
  if (!is) throw CorruptionError("unreadable RNG state in checkpoint");
  return rng;
}

dist::Rng validation_rng(std::uint64_t seed, std::size_t stage) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stage), 0x76616cu};
  return dist::Rng(seq);
}

}  // namespace

std::size_t resolve_threads(std::size_t requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("DAGVAE_THREADS")) {
    char* end = nullptr;
    const unsigned long v = std::strtoul(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return v;
  }
  return 1;
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be >= 0");
  if (epochs_per_stage == 0) throw ConfigError("epochs_per_stage must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (early_stop_patience == 0) throw ConfigError("early_stop_patience must be positive");
  if (early_stop_patience > epochs_per_stage) throw ConfigError("early_stop_patience exceeds epochs_per_stage");
  if (!(early_stop_min_delta >= 0.0)) throw ConfigError("early_stop_min_delta must be >= 0");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
    throw ConfigError("validation_fraction must lie in (0, 1)");
}

double kl_warmup(std::size_t epoch, std::size_t warmup_epochs) {
  if (warmup_epochs == 0) return 1.0;
  return std::min(1.0, static_cast<double>(epoch) / static_cast<double>(warmup_epochs));
}

AdamState::AdamState(const ParameterStore& store) {
  for (const auto& p : store) slots_.push_back({ad::Tensor(p.value.shape()), ad::Tensor(p.value.shape()), 0});
}

void AdamState::step(ParameterStore& store, std::span<const ad::Tensor> grads, const std::vector<bool>& mask,
                     double lr) {
  if (grads.size() != store.size() || mask.size() != store.size() || slots_.size() != store.size())
    throw ContractError("optimizer, gradients and parameters disagree in length");
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (!mask[i]) continue;
    ad::Tensor& value = store[i].value;
    const ad::Tensor& g = grads[i];
    if (g.size() != 0 && g.shape() != value.shape())
      throw ShapeError("gradient for " + store[i].name + " has shape " + ad::shape_to_string(g.shape()));
    Slot& s = slots_[i];
    ++s.step;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(s.step));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(s.step));
    for (std::size_t k = 0; k < value.size(); ++k) {
      const double gk = g.size() ? g[k] : 0.0;
      s.m[k] = kBeta1 * s.m[k] + (1.0 - kBeta1) * gk;
      s.v[k] = kBeta2 * s.v[k] + (1.0 - kBeta2) * gk * gk;
      value[k] -= lr * (s.m[k] / c1) / (std::sqrt(s.v[k] / c2) + kEpsilon);
    }
  }
}

void AdamState::save(CheckpointArchive& archive, const ParameterStore& store) const {
  nlohmann::json steps = nlohmann::json::object();
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    steps[store[i].name] = slots_[i].step;
    archive.tensors.emplace_back("adam.m/" + store[i].name, slots_[i].m);
    archive.tensors.emplace_back("adam.v/" + store[i].name, slots_[i].v);
  }
  archive.optimizer = {{"kind", "adam"},
                       {"beta1", kBeta1},
                       {"beta2", kBeta2},
                       {"epsilon", kEpsilon},
                       {"steps", steps}};
}

AdamState AdamState::load(const CheckpointArchive& archive, const ParameterStore& store) {
  AdamState a(store);
  try {
    const auto& steps = archive.optimizer.at("steps");
    for (std::size_t i = 0; i < store.size(); ++i) {
      const std::string& name = store[i].name;
      a.slots_[i].step = steps.at(name).get<std::size_t>();
      a.slots_[i].m = archive.tensor("adam.m/" + name);
      a.slots_[i].v = archive.tensor("adam.v/" + name);
      if (a.slots_[i].m.shape() != store[i].value.shape() || a.slots_[i].v.shape() != store[i].value.shape())
        throw CorruptionError("optimizer moment shape differs for " + name);
    }
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError(std::string("malformed optimizer state: ") + e.what());
  }
  return a;
}

void write_stage_csv(const fs::path& path, const StageReport& report) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << "epoch,train_elbo,val_elbo,recon,kl_z,kl_c\n" << std::setprecision(10);
  for (const auto& r : report.history)
    out << r.epoch << ',' << r.train_elbo << ',' << r.val_elbo << ',' << r.recon << ',' << r.kl_z << ',' << r.kl_c
        << '\n';
}

TrainSession start_session(const ModelSpec& spec, std::uint64_t seed) {
  Model model(spec, seed);
  AdamState opt(model.parameters());
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x747261u};
  return {std::move(model), std::move(opt), dist::Rng(seq), 0};
}

EpochRecord evaluate(const Model& model, const TrainingData& data, std::span<const std::size_t> cells, dist::Rng& rng,
                     std::size_t threads) {
  const std::vector<double> beta(model.modality_count(), 1.0);
  const auto results = run_cells(model, nullptr, data, cells, rng, beta, threads);
  EpochRecord r;
  for (const auto& c : results) {
    r.val_elbo += c.elbo;
    r.recon += c.recon;
    r.kl_z += c.kl_z;
    r.kl_c += c.kl_c;
  }
  const double n = static_cast<double>(std::max<std::size_t>(1, cells.size()));
  r.val_elbo /= n;
  r.recon /= n;
  r.kl_z /= n;
  r.kl_c /= n;
  return r;
}

StageReport train_stage(TrainSession& session, std::size_t stage, const TrainingData& data, const TrainConfig& cfg) {
  cfg.validate();
  Model& model = session.model;
  const auto stages = model.order().stages();
  if (stage == 0 || stage > stages.size()) throw ContractError("stage " + std::to_string(stage) + " out of range");
  if (data.modalities.size() != model.modality_count() || !data.batch)
    throw ContractError("training data does not match the model");
  const std::size_t n_cells = data.modalities.front().n_cells();
  const std::size_t threads = resolve_threads(cfg.threads);

  StageReport report;
  report.stage = stage;
  report.modalities = stages[stage - 1];
  const std::vector<bool> mask = model.trainable_mask(report.modalities);
  std::vector<double> beta(model.modality_count(), 1.0);

  const Split parts = split(n_cells, 1.0 - cfg.validation_fraction, cfg.seed);
  if (parts.train.empty() || parts.validation.empty()) throw ConfigError("too few cells for a validation split");
  std::vector<std::size_t> order = parts.train;

  ParameterStore& store = model.parameters();
  auto snapshot = [&] {
    std::vector<ad::Tensor> values;
    for (std::size_t i = 0; i < store.size(); ++i) values.push_back(mask[i] ? store[i].value : ad::Tensor());
    return values;
  };
  std::vector<ad::Tensor> best = snapshot();
  double best_val = -std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs_per_stage; ++epoch) {
    for (std::size_t m : report.modalities) beta[m] = kl_warmup(epoch, cfg.warmup_epochs);
    std::shuffle(order.begin(), order.end(), session.rng);
    EpochRecord rec;
    rec.epoch = epoch;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::span<const std::size_t> cells(order.data() + b, std::min(order.size(), b + cfg.batch_size) - b);
      const auto results = run_cells(model, &mask, data, cells, session.rng, beta, threads);
      std::vector<ad::Tensor> grads(store.size());
      const double scale = 1.0 / static_cast<double>(cells.size());
      for (const auto& c : results) {
        rec.train_elbo += c.elbo;
        rec.recon += c.recon;
        rec.kl_z += c.kl_z;
        rec.kl_c += c.kl_c;
        for (std::size_t i = 0; i < store.size(); ++i) {
          if (c.grads[i].size() == 0) continue;
          if (grads[i].size() == 0) grads[i] = ad::Tensor(c.grads[i].shape());
          for (std::size_t k = 0; k < grads[i].size(); ++k) grads[i][k] += c.grads[i][k] * scale;
        }
      }
      session.optimizer.step(store, grads, mask, cfg.learning_rate);
    }
    const double n_train = static_cast<double>(order.size());
    rec.train_elbo /= n_train;
    rec.recon /= n_train;
    rec.kl_z /= n_train;
    rec.kl_c /= n_train;

    dist::Rng val_rng = validation_rng(cfg.seed, stage);
    rec.val_elbo = evaluate(model, data, parts.validation, val_rng, threads).val_elbo;
    report.history.push_back(rec);

    if (rec.val_elbo > best_val + cfg.early_stop_min_delta) {
      best_val = rec.val_elbo;
      best = snapshot();
      report.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.early_stop_patience) {
      report.stopped_early = true;
      break;
    }
  }
  for (std::size_t i = 0; i < store.size(); ++i)
    if (mask[i]) store[i].value = best[i];
  report.best_val_elbo = best_val;
  return report;
}

CheckpointArchive make_archive(const TrainSession& session, const nlohmann::json& config, const std::string& digest) {
  const Model& model = session.model;
  CheckpointArchive a;
  nlohmann::json vertices = nlohmann::json::array();
  for (const auto& m : model.spec().modalities) vertices.push_back(m.name);
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& [from, to] : model.spec().edges) edges.push_back({from, to});
  a.graph = {{"vertices", vertices}, {"edges", edges}};
  a.config = config;
  a.config_digest = digest;
  a.model = model.spec().to_json();
  a.rng_state = rng_to_string(session.rng);
  a.completed_stage = session.completed_stages;
  for (const auto& p : model.parameters()) a.tensors.emplace_back("param/" + p.name, p.value);
  session.optimizer.save(a, model.parameters());
  return a;
}

Model restore_model(const CheckpointArchive& archive) {
  ModelSpec spec;
  try {
    spec = ModelSpec::from_json(archive.model);
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError(std::string("malformed model block: ") + e.what());
  }
  Model model(spec, 0);
  for (std::size_t i = 0; i < model.parameters().size(); ++i) {
    Parameter& p = model.parameters()[i];
    const ad::Tensor& t = archive.tensor("param/" + p.name);
    if (t.shape() != p.value.shape())
      throw CorruptionError("parameter " + p.name + " has shape " + ad::shape_to_string(t.shape()) + ", expected " +
                            ad::shape_to_string(p.value.shape()));
    if (!t.all_finite()) throw CorruptionError("parameter " + p.name + " holds non-finite values");
    p.value = t;
  }
  return model;
}

TrainSession restore_session(const CheckpointArchive& archive) {
  Model model = restore_model(archive);
  AdamState opt = AdamState::load(archive, model.parameters());
  return {std::move(model), std::move(opt), rng_from_string(archive.rng_state), archive.completed_stage};
}

std::vector<StageReport> train_sequential(TrainSession& session, const TrainingData& data, const TrainConfig& cfg,
                                          const RunOutput* out) {
  cfg.validate();
  std::vector<StageReport> reports;
  const std::size_t n_stages = session.model.order().stage_count();
  for (std::size_t s = session.completed_stages + 1; s <= n_stages; ++s) {
    // Copy taken before the stage so a numerical failure can be checkpointed
    // at its last finite state.
    const TrainSession before = session;
    try {
      reports.push_back(train_stage(session, s, data, cfg));
    } catch (const NumericsError& e) {
      if (!out) throw;
      const fs::path dir = out->dir / "checkpoints" / "last_finite";
      save_checkpoint(dir, make_archive(before, out->config, out->config_digest));
      throw NumericsError(e.message() + "; last finite checkpoint: " + dir.string());
    }
    session.completed_stages = s;
    if (out) {
      fs::create_directories(out->dir);
      write_stage_csv(out->dir / ("stage_" + std::to_string(s) + ".csv"), reports.back());
      save_checkpoint(out->dir / "checkpoints" / ("stage_" + std::to_string(s)),
                      make_archive(session, out->config, out->config_digest));
    }
  }
  return reports;
}

}  // namespace dagvae

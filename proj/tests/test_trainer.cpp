#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "dagvae/error.hpp"
#include "dagvae/trainer.hpp"
#include "support.hpp"

using namespace dagvae;
using ad::Tensor;
using dist::Likelihood;

namespace {

struct Fixture {
  ModelSpec spec;
  std::vector<ModalityData> data;
  BatchCovariate batch;

  TrainingData training() const { return {data, &batch}; }
};

// Data generated by a planted teacher of the same architecture.
Fixture planted(std::size_t n_cells, std::uint64_t seed) {
  Fixture f;
  f.spec = test::chain_spec(Likelihood::bernoulli, Likelihood::zinb, 12, 10, 2, 3);
  Model teacher(f.spec, seed + 1000);
  plant_separated_prior(teacher, 8.0);
  amplify_decoder(teacher, 3.0);
  dist::Rng rng(seed);
  GeneratedData g = generate(teacher, n_cells, rng);
  f.data = std::move(g.modalities);
  f.batch = no_batch(n_cells);
  return f;
}

TrainConfig quick_config() {
  TrainConfig c;
  c.learning_rate = 3e-3;
  c.epochs_per_stage = 4;
  c.batch_size = 32;
  c.warmup_epochs = 2;
  c.early_stop_patience = 4;
  c.validation_fraction = 0.2;
  c.seed = 5;
  return c;
}

bool same_parameters(const Model& a, const Model& b) {
  if (a.parameters().size() != b.parameters().size()) return false;
  for (std::size_t i = 0; i < a.parameters().size(); ++i)
    if (!(a.parameters()[i].value == b.parameters()[i].value)) return false;
  return true;
}

}  // namespace

TEST_CASE("warm-up schedule") {
  CHECK(kl_warmup(0, 50) == 0.0);
  CHECK(kl_warmup(50, 50) == 1.0);
  CHECK(kl_warmup(25, 50) == 0.5);
  CHECK(kl_warmup(80, 50) == 1.0);
  CHECK(kl_warmup(0, 0) == 1.0);
  double prev = 0.0;
  for (std::size_t e = 0; e < 100; ++e) {
    CHECK(kl_warmup(e, 37) >= prev);
    prev = kl_warmup(e, 37);
  }
}

TEST_CASE("config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.early_stop_patience = c.epochs_per_stage + 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.validation_fraction = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.learning_rate = -1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("Adam first step and zero gradients") {
  Model model(test::chain_spec(Likelihood::zinb, Likelihood::zinb), 1);
  ParameterStore& store = model.parameters();
  const ParameterStore before = store;
  AdamState adam(store);
  dist::Rng rng(2);
  std::vector<Tensor> grads;
  for (std::size_t i = 0; i < store.size(); ++i) grads.push_back(test::random_tensor(store[i].value.shape(), rng));
  const std::size_t zero_param = store.index_of("A.decoder.out.weight");
  grads[zero_param] = Tensor(store[zero_param].value.shape());
  const std::vector<bool> mask(store.size(), true);
  const double lr = 1e-3;
  adam.step(store, grads, mask, lr);
  for (std::size_t i = 0; i < store.size(); ++i) {
    CHECK(adam.steps(i) == 1);
    for (std::size_t k = 0; k < store[i].value.size(); ++k) {
      const double delta = std::abs(store[i].value[k] - before[i].value[k]);
      if (i == zero_param) {
        CHECK(delta == 0.0);
      } else if (std::abs(grads[i][k]) > 1e-3) {
        CHECK(delta >= 0.99 * lr * (1 - 1e-12));
        CHECK(delta <= lr * (1 + 1e-12));
      }
    }
  }
}

TEST_CASE("Adam leaves masked parameters and their moments alone") {
  Model model(test::chain_spec(Likelihood::zinb, Likelihood::zinb), 1);
  ParameterStore& store = model.parameters();
  AdamState adam(store);
  dist::Rng rng(3);
  std::vector<Tensor> grads;
  for (std::size_t i = 0; i < store.size(); ++i) grads.push_back(test::random_tensor(store[i].value.shape(), rng));
  const std::vector<std::size_t> second{1};
  const auto mask = model.trainable_mask(second);
  const ParameterStore before = store;
  adam.step(store, grads, mask, 1e-2);
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (mask[i]) continue;
    CHECK(store[i].value == before[i].value);
    CHECK(adam.steps(i) == 0);
    for (double v : adam.first_moment(i).values()) CHECK(v == 0.0);
  }
}

TEST_CASE("Adam is deterministic over ten steps") {
  auto run = [] {
    Model model(test::chain_spec(Likelihood::zinb, Likelihood::bernoulli), 4);
    AdamState adam(model.parameters());
    dist::Rng rng(9);
    const std::vector<bool> mask(model.parameters().size(), true);
    for (int s = 0; s < 10; ++s) {
      std::vector<Tensor> grads;
      for (const auto& p : model.parameters()) grads.push_back(test::random_tensor(p.value.shape(), rng));
      adam.step(model.parameters(), grads, mask, 1e-3);
    }
    return model;
  };
  CHECK(same_parameters(run(), run()));
}

TEST_CASE("stages follow the graph") {
  ModelSpec s;
  s.modalities = {{"ATAC", Likelihood::bernoulli, 4, 2, 3}, {"TF", Likelihood::zinb, 3, 2, 3},
                  {"RNA", Likelihood::zinb, 5, 2, 3}};
  s.edges = {{"ATAC", "RNA"}, {"TF", "RNA"}};
  s.config = test::small_config(2);
  const Model m(s, 0);
  CHECK(m.order().stages() == std::vector<std::vector<std::size_t>>{{0, 1}, {2}});
}

TEST_CASE("stage-wise training freezes other modalities") {
  const Fixture f = planted(160, 1);
  TrainSession session = start_session(f.spec, 11);
  const TrainConfig cfg = quick_config();
  const ParameterStore initial = session.model.parameters();
  const StageReport r1 = train_stage(session, 1, f.training(), cfg);
  CHECK(r1.modalities == std::vector<std::size_t>{0});
  const ParameterStore after_one = session.model.parameters();
  for (std::size_t i = 0; i < initial.size(); ++i) {
    if (initial[i].owner == 1) CHECK(after_one[i].value == initial[i].value);
  }
  CHECK_FALSE(after_one.value("A.decoder.out.weight") == initial.value("A.decoder.out.weight"));

  train_stage(session, 2, f.training(), cfg);
  const ParameterStore& after_two = session.model.parameters();
  for (std::size_t i = 0; i < initial.size(); ++i) {
    if (initial[i].owner == 0) CHECK(after_two[i].value == after_one[i].value);
  }
  CHECK_FALSE(after_two.value("B.decoder.out.weight") == after_one.value("B.decoder.out.weight"));
  CHECK_THROWS_AS(train_stage(session, 3, f.training(), cfg), ContractError);
}

TEST_CASE("zero learning rate stops after patience plus one epochs") {
  const Fixture f = planted(120, 2);
  TrainSession session = start_session(f.spec, 3);
  TrainConfig cfg = quick_config();
  cfg.learning_rate = 0.0;
  cfg.epochs_per_stage = 30;
  cfg.early_stop_patience = 5;
  const ParameterStore before = session.model.parameters();
  const StageReport r = train_stage(session, 1, f.training(), cfg);
  CHECK(r.stopped_early);
  CHECK(r.history.size() == cfg.early_stop_patience + 1);
  CHECK(r.best_epoch == 0);
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(session.model.parameters()[i].value == before[i].value);
}

TEST_CASE("training improves the smoothed ELBO") {
  const Fixture f = planted(400, 3);
  TrainSession session = start_session(f.spec, 5);
  TrainConfig cfg = quick_config();
  cfg.epochs_per_stage = 40;
  cfg.early_stop_patience = 40;
  cfg.warmup_epochs = 0;
  const StageReport r = train_stage(session, 1, f.training(), cfg);
  REQUIRE(r.history.size() >= 20);
  double start = 0.0, end = 0.0;
  for (std::size_t e = 0; e < 10; ++e) {
    start += r.history[e].train_elbo / 10.0;
    end += r.history[r.history.size() - 1 - e].train_elbo / 10.0;
  }
  CHECK(end >= start);
  CHECK(std::isfinite(r.best_val_elbo));
}

TEST_CASE("training is bitwise reproducible and independent of thread count") {
  const Fixture f = planted(150, 4);
  TrainConfig cfg = quick_config();
  auto run = [&](std::size_t threads) {
    TrainConfig c = cfg;
    c.threads = threads;
    TrainSession session = start_session(f.spec, 21);
    const auto reports = train_sequential(session, f.training(), c);
    return std::pair{std::move(session.model), reports.back().history.back().val_elbo};
  };
  const auto a = run(1);
  const auto b = run(1);
  const auto c = run(3);
  CHECK(same_parameters(a.first, b.first));
  CHECK(same_parameters(a.first, c.first));
  CHECK(a.second == c.second);
}

TEST_CASE("resuming from a stage checkpoint equals an uninterrupted run") {
  const Fixture f = planted(150, 5);
  const TrainConfig cfg = quick_config();
  const auto dir = test::fresh_dir("trainer_resume");

  TrainSession full = start_session(f.spec, 31);
  const RunOutput out{dir / "full", {{"seed", 31}}, "digest"};
  train_sequential(full, f.training(), cfg, &out);
  CHECK(std::filesystem::exists(dir / "full" / "stage_1.csv"));
  CHECK(std::filesystem::exists(dir / "full" / "checkpoints" / "stage_2" / "manifest.json"));

  TrainSession partial = restore_session(load_checkpoint(dir / "full" / "checkpoints" / "stage_1"));
  CHECK(partial.completed_stages == 1);
  train_sequential(partial, f.training(), cfg);
  CHECK(same_parameters(partial.model, full.model));

  const CheckpointArchive final_archive = load_checkpoint(dir / "full" / "checkpoints" / "stage_2");
  CHECK(same_parameters(restore_model(final_archive), full.model));
}

TEST_CASE("one further epoch after a save and load matches the direct epoch") {
  const Fixture f = planted(120, 6);
  TrainConfig cfg = quick_config();
  cfg.epochs_per_stage = 2;
  cfg.early_stop_patience = 2;
  TrainSession direct = start_session(f.spec, 41);
  train_stage(direct, 1, f.training(), cfg);

  const auto dir = test::fresh_dir("trainer_epoch");
  save_checkpoint(dir, make_archive(direct, nlohmann::json::object(), "d"));
  TrainSession restored = restore_session(load_checkpoint(dir));

  cfg.epochs_per_stage = 1;
  cfg.early_stop_patience = 1;
  train_stage(direct, 2, f.training(), cfg);
  train_stage(restored, 2, f.training(), cfg);
  CHECK(same_parameters(direct.model, restored.model));
  for (std::size_t i = 0; i < direct.model.parameters().size(); ++i) {
    CHECK(direct.optimizer.steps(i) == restored.optimizer.steps(i));
    CHECK(direct.optimizer.second_moment(i) == restored.optimizer.second_moment(i));
  }
}

TEST_CASE("stage csv") {
  StageReport r;
  r.stage = 1;
  r.history.push_back({0, -10.5, -11.0, -8.0, 2.0, 0.5});
  const auto dir = test::fresh_dir("trainer_csv");
  write_stage_csv(dir / "s.csv", r);
  std::ifstream in(dir / "s.csv");
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  CHECK(header == "epoch,train_elbo,val_elbo,recon,kl_z,kl_c");
  CHECK(row.rfind("0,-10.5,-11", 0) == 0);
}

TEST_CASE("restoring rejects mismatched tensors") {
  TrainSession s = start_session(test::chain_spec(Likelihood::zinb, Likelihood::zinb), 1);
  CheckpointArchive a = make_archive(s, nlohmann::json::object(), "d");
  for (auto& [name, t] : a.tensors)
    if (name == "param/A.decoder.out.weight") t = Tensor::zeros(1, 1);
  CHECK_THROWS_AS(restore_model(a), CorruptionError);
}

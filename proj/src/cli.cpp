#include "dagvae/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <cmath>
#include <numeric>
#include <ostream>

#include "dagvae/analysis.hpp"
#include "dagvae/checkpoint.hpp"
#include "dagvae/config.hpp"
#include "dagvae/error.hpp"
#include "dagvae/parallel.hpp"
#include "dagvae/trainer.hpp"

namespace dagvae {

namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::string checkpoint;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::size_t threads = 0;
};

struct GroupArgs {
  std::string labels;
  std::string column;
  std::vector<std::string> groups;
};

std::ofstream open_csv(const fs::path& path) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << std::setprecision(12);
  return out;
}

fs::path out_dir(const Common& c, const RunConfig& cfg) { return c.out.empty() ? cfg.output_dir : fs::path(c.out); }

std::uint64_t seed_of(const Common& c, const RunConfig& cfg) { return c.seed.value_or(cfg.seed); }

// Loads the checkpoint named on the command line, or the last stage of the
// configured run, and checks it against the config digest.
Model load_trained(const Common& c, const RunConfig& cfg) {
  fs::path dir = c.checkpoint;
  if (dir.empty()) {
    std::vector<std::string> names;
    for (const auto& m : cfg.modalities) names.push_back(m.name);
    const std::size_t stages = ModalityGraph(names, cfg.edges).topo_stages().stage_count();
    dir = cfg.output_dir / "checkpoints" / ("stage_" + std::to_string(stages));
  }
  const CheckpointArchive archive = load_checkpoint(dir);
  if (archive.config_digest != cfg.digest())
    throw ConfigError("checkpoint " + dir.string() + " was produced with a different configuration (digest " +
                      archive.config_digest.substr(0, 12) + " vs " + cfg.digest().substr(0, 12) + ")");
  return restore_model(archive);
}

std::size_t modality_named(const RunConfig& cfg, const std::string& name) {
  for (std::size_t m = 0; m < cfg.modalities.size(); ++m)
    if (cfg.modalities[m].name == name) return m;
  throw LookupError("no modality named '" + name + "'");
}

std::vector<std::string> aligned_labels(const GroupArgs& g, const LoadedData& data) {
  if (g.labels.empty() || g.column.empty()) throw ConfigError("--labels and --label-column are required");
  return read_label_table(g.labels).aligned(g.column, data.modalities.front().cell_ids);
}

std::pair<CellGroup, CellGroup> groups_of(const GroupArgs& g, const LoadedData& data) {
  if (g.groups.size() != 2) throw ConfigError("--groups takes exactly two label values");
  const auto labels = aligned_labels(g, data);
  std::pair<CellGroup, CellGroup> out{{g.groups[0], {}}, {g.groups[1], {}}};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == g.groups[0]) out.first.cells.push_back(i);
    if (labels[i] == g.groups[1]) out.second.cells.push_back(i);
  }
  if (out.first.cells.empty()) throw ContractError("group '" + g.groups[0] + "' has no cells");
  if (out.second.cells.empty()) throw ContractError("group '" + g.groups[1] + "' has no cells");
  return out;
}

int cmd_validate(const Common& c, std::ostream& out) {
  const RunConfig cfg = RunConfig::load(c.config);
  const PreflightReport pre = preflight(cfg);
  std::vector<std::string> names;
  for (const auto& m : cfg.modalities) names.push_back(m.name);
  const ModalityGraph graph(names, cfg.edges);
  const auto stages = graph.topo_stages().stages();
  out << "config: " << c.config << "\n";
  for (std::size_t m = 0; m < cfg.modalities.size(); ++m)
    out << "modality " << names[m] << ": " << dist::to_string(cfg.modalities[m].likelihood) << ", " << pre.n_cells[m]
        << " cells x " << pre.n_features[m] << " features, dim_z=" << cfg.dim_z(m)
        << ", K=" << cfg.n_components(m) << "\n";
  for (std::size_t s = 0; s < stages.size(); ++s) {
    out << (s ? "; " : "") << "stage " << s + 1 << ": ";
    for (std::size_t k = 0; k < stages[s].size(); ++k) out << (k ? ", " : "") << names[stages[s][k]];
  }
  out << "\n";
  out << "model: dim_z=" << cfg.model.dim_z << " K=" << cfg.model.resolved_components()
      << " n_mc_samples=" << cfg.model.n_mc_samples << " incorporate_mode=" << to_string(cfg.model.incorporate_mode)
      << " width_divisor=" << cfg.width_divisor << "\n";
  out << "train: lr=" << cfg.train.learning_rate << " epochs_per_stage=" << cfg.train.epochs_per_stage
      << " batch_size=" << cfg.train.batch_size << " warmup_epochs=" << cfg.train.warmup_epochs
      << " early_stop_patience=" << cfg.train.early_stop_patience
      << " validation_fraction=" << cfg.train.validation_fraction << "\n";
  out << "analysis: enrichment_k=" << cfg.analysis.enrichment_k << " n_pairs=" << cfg.analysis.n_pairs << "\n";
  out << "config digest: " << cfg.digest() << "\n";
  return 0;
}

int cmd_train(const Common& c, const std::string& resume, std::ostream& out) {
  RunConfig cfg = RunConfig::load(c.config);
  if (!c.out.empty()) cfg.output_dir = c.out;
  if (c.seed) cfg.seed = cfg.train.seed = *c.seed;
  cfg.train.threads = c.threads;
  const LoadedData data = load_data(cfg);
  TrainSession session = [&] {
    if (resume.empty()) return start_session(model_spec(cfg, data), cfg.seed);
    const CheckpointArchive archive = load_checkpoint(resume);
    if (archive.config_digest != cfg.digest())
      throw ConfigError("checkpoint " + resume + " was produced with a different configuration");
    return restore_session(archive);
  }();
  const RunOutput run{cfg.output_dir, cfg.source, cfg.digest()};
  const TrainingData td{data.modalities, &data.batch};
  const auto reports = train_sequential(session, td, cfg.train, &run);
  for (const auto& r : reports) {
    out << "stage " << r.stage << ":";
    for (std::size_t m : r.modalities) out << " " << cfg.modalities[m].name;
    out << " epochs=" << r.history.size() << " best_epoch=" << r.best_epoch << " best_val_elbo=" << r.best_val_elbo
        << (r.stopped_early ? " (early stop)" : "") << "\n";
  }
  const fs::path last = cfg.output_dir / "checkpoints" / ("stage_" + std::to_string(session.completed_stages));
  if (fs::exists(last)) out << "checkpoint: " << last.string() << "\ndigest: " << checkpoint_digest(last) << "\n";
  return 0;
}

int cmd_generate(const Common& c, std::size_t n_cells, std::optional<double> separation, double gain,
                 const std::vector<std::string>& fixed, std::ostream& out) {
  const RunConfig cfg = RunConfig::load(c.config);
  Model model = [&] {
    if (!c.checkpoint.empty()) return load_trained(c, cfg);
    return Model(model_spec_without_data(cfg), seed_of(c, cfg));
  }();
  if (separation) plant_separated_prior(model, *separation);
  if (gain != 1.0) amplify_decoder(model, gain);
  std::vector<std::optional<std::size_t>> pins(model.modality_count());
  for (const auto& f : fixed) {
    const auto eq = f.find('=');
    if (eq == std::string::npos) throw ConfigError("--fixed expects NAME=COMPONENT, got '" + f + "'");
    pins[modality_named(cfg, f.substr(0, eq))] = std::stoul(f.substr(eq + 1));
  }
  dist::Rng rng(seed_of(c, cfg));
  const GeneratedData g = generate(model, n_cells, rng, pins);
  const fs::path dir = out_dir(c, cfg);
  fs::create_directories(dir);
  for (const auto& d : g.modalities) {
    write_matrix_market(dir / (d.name + ".mtx"), d.matrix);
    write_lines(dir / (d.name + "_features.txt"), d.feature_names);
  }
  write_lines(dir / "cells.txt", g.modalities.front().cell_ids);
  auto truth = open_csv(dir / "truth.csv");
  truth << "cell_id";
  for (std::size_t m = 0; m < model.modality_count(); ++m) truth << ",c_" << model.modality(m).name;
  for (std::size_t m = 0; m < model.modality_count(); ++m)
    for (std::size_t d = 0; d < model.modality(m).dim_z; ++d)
      truth << ",z_" << model.modality(m).name << "_" << d + 1;
  if (model.batch_width()) truth << ",batch";
  truth << "\n";
  for (std::size_t i = 0; i < n_cells; ++i) {
    truth << g.modalities.front().cell_ids[i];
    for (std::size_t m = 0; m < model.modality_count(); ++m) truth << "," << g.components[m][i];
    for (std::size_t m = 0; m < model.modality_count(); ++m)
      for (std::size_t d = 0; d < model.modality(m).dim_z; ++d) truth << "," << g.latents[m](i, d);
    if (model.batch_width()) truth << "," << g.batch.categories[g.batch.category_of[i]];
    truth << "\n";
  }
  out << "wrote " << n_cells << " cells to " << dir.string() << "\n";
  return 0;
}

int cmd_latents(const Common& c, bool clusters_only, std::ostream& out) {
  const RunConfig cfg = RunConfig::load(c.config);
  const Model model = load_trained(c, cfg);
  const LoadedData data = load_data(cfg);
  const auto summary = latents(model, {data.modalities, &data.batch}, resolve_threads(c.threads));
  const fs::path dir = out_dir(c, cfg);
  const auto& cells = data.modalities.front().cell_ids;
  if (clusters_only) {
    auto csv = open_csv(dir / "clusters.csv");
    csv << "cell_id";
    for (const auto& m : cfg.modalities) csv << "," << m.name;
    csv << "\n";
    for (std::size_t i = 0; i < cells.size(); ++i) {
      csv << cells[i];
      for (const auto& s : summary) csv << "," << s.argmax[i];
      csv << "\n";
    }
    for (std::size_t m = 0; m < summary.size(); ++m) {
      std::vector<std::size_t> distinct = summary[m].argmax;
      std::sort(distinct.begin(), distinct.end());
      distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
      out << cfg.modalities[m].name << ": " << distinct.size() << " clusters\n";
    }
    return 0;
  }
  for (std::size_t m = 0; m < summary.size(); ++m) {
    const auto& s = summary[m];
    auto csv = open_csv(dir / ("latents_" + cfg.modalities[m].name + ".csv"));
    csv << "cell_id";
    for (std::size_t d = 0; d < s.mean.cols(); ++d) csv << ",mu_" << d + 1;
    csv << ",argmax_cluster,q_max\n";
    for (std::size_t i = 0; i < cells.size(); ++i) {
      csv << cells[i];
      for (std::size_t d = 0; d < s.mean.cols(); ++d) csv << "," << s.mean(i, d);
      csv << "," << s.argmax[i] << "," << s.q_max[i] << "\n";
    }
  }
  out << "wrote latents for " << summary.size() << " modalities to " << dir.string() << "\n";
  return 0;
}

int cmd_diff(const Common& c, const GroupArgs& ga, const std::string& modality, std::size_t pairs,
             const std::string& method, std::ostream& out) {
  const RunConfig cfg = RunConfig::load(c.config);
  const Model model = load_trained(c, cfg);
  const LoadedData data = load_data(cfg);
  const auto [I, J] = groups_of(ga, data);
  const std::size_t m = modality_named(cfg, modality);
  dist::Rng rng(seed_of(c, cfg));
  const auto r = bayes_factor(model, {data.modalities, &data.batch}, m, I, J, pairs ? pairs : cfg.analysis.n_pairs, rng,
                              bayes_method_from_string(method), resolve_threads(c.threads));
  const fs::path dir = out_dir(c, cfg);
  auto csv = open_csv(dir / "diff.csv");
  csv << "feature,prob_h1,bayes_factor,mean_I,mean_J,lfc\n";
  for (std::size_t g = 0; g < r.features.size(); ++g)
    csv << r.features[g] << "," << r.prob_h1[g] << "," << r.bayes_factor[g] << "," << r.mean_i[g] << ","
        << r.mean_j[g] << "," << r.lfc[g] << "\n";
  std::vector<std::size_t> order(r.features.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return r.bayes_factor[a] > r.bayes_factor[b]; });
  auto rnk = open_csv(dir / "diff.rnk");
  rnk << "feature\tbayes_factor\tlfc\n";
  for (std::size_t g : order) rnk << r.features[g] << "\t" << r.bayes_factor[g] << "\t" << r.lfc[g] << "\n";
  out << "wrote " << r.features.size() << " features (" << r.n_pairs << " pairs) to " << dir.string() << "\n";
  return 0;
}

int cmd_contrib(const Common& c, const GroupArgs& ga, const std::string& target_name, std::size_t pairs,
                const std::string& statistic, const std::vector<std::string>& features, std::ostream& out) {
  const RunConfig cfg = RunConfig::load(c.config);
  const Model model = load_trained(c, cfg);
  const LoadedData data = load_data(cfg);
  const auto [I, J] = groups_of(ga, data);
  const std::size_t target = modality_named(cfg, target_name);
  const auto stat = contribution_statistic_from_string(statistic);
  dist::Rng rng(seed_of(c, cfg));
  const PairDraws draws = draw_pairs(model, I, J, pairs ? pairs : cfg.analysis.n_pairs, rng);
  const AnalysisData ad{data.modalities, &data.batch};
  std::vector<ContributionResult> results;
  for (std::size_t m = 0; m < model.modality_count(); ++m)
    results.push_back(contribution_score(model, ad, m, target, draws, stat, features, resolve_threads(c.threads)));
  const fs::path dir = out_dir(c, cfg);
  auto csv = open_csv(dir / "contrib.csv");
  csv << "feature,modality,statistic,C\n";
  for (const auto& r : results)
    for (std::size_t g = 0; g < r.features.size(); ++g)
      csv << r.features[g] << "," << cfg.modalities[r.substituted].name << "," << to_string(r.statistic) << ","
          << r.score[g] << "\n";
  // Normalized |C_m| / sum_m |C_m| per feature, for ternary-style plots.
  auto tern = open_csv(dir / "contrib_normalized.csv");
  tern << "feature";
  for (const auto& m : cfg.modalities) tern << ",normalized_abs_C_" << m.name;
  tern << "\n";
  for (std::size_t g = 0; g < results.front().features.size(); ++g) {
    double total = 0.0;
    for (const auto& r : results) total += std::abs(r.score[g]);
    tern << results.front().features[g];
    for (const auto& r : results) tern << "," << (total > 0.0 ? std::abs(r.score[g]) / total : 0.0);
    tern << "\n";
  }
  out << "wrote contributions for " << results.front().features.size() << " features to " << dir.string() << "\n";
  return 0;
}

int cmd_interpolate(const Common& c, const GroupArgs& ga, const std::vector<std::string>& vary, std::size_t steps,
                    std::ostream& out) {
  const RunConfig cfg = RunConfig::load(c.config);
  const Model model = load_trained(c, cfg);
  const LoadedData data = load_data(cfg);
  const auto [I, J] = groups_of(ga, data);
  std::vector<std::size_t> selected;
  for (const auto& v : vary) selected.push_back(modality_named(cfg, v));
  const auto path = interpolate(model, {data.modalities, &data.batch}, I, J, selected, steps);
  const fs::path dir = out_dir(c, cfg);
  auto csv = open_csv(dir / "interpolation.csv");
  csv << "t,feature,value\n";
  for (const auto& step : path)
    for (std::size_t m = 0; m < step.means.size(); ++m)
      for (std::size_t g = 0; g < step.means[m].size(); ++g)
        csv << step.t << "," << data.modalities[m].feature_names[g] << "," << step.means[m][g] << "\n";
  out << "wrote " << path.size() << " interpolation steps to " << dir.string() << "\n";
  return 0;
}

int cmd_enrichment(const Common& c, const GroupArgs& ga, const std::string& modality, std::size_t k,
                   std::ostream& out) {
  const RunConfig cfg = RunConfig::load(c.config);
  const Model model = load_trained(c, cfg);
  const LoadedData data = load_data(cfg);
  const auto labels = aligned_labels(ga, data);
  const std::size_t m = modality.empty() ? 0 : modality_named(cfg, modality);
  const auto summary = latents(model, {data.modalities, &data.batch}, resolve_threads(c.threads));
  const auto scores = enrichment_score(summary[m].mean, labels, k ? k : cfg.analysis.enrichment_k);
  const fs::path dir = out_dir(c, cfg);
  auto csv = open_csv(dir / "enrichment.csv");
  csv << "cell_id,label,score\n";
  const auto& cells = data.modalities.front().cell_ids;
  double mean = 0.0;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    csv << cells[i] << "," << labels[i] << "," << scores[i] << "\n";
    mean += scores[i];
  }
  out << "mean enrichment score (" << cfg.modalities[m].name << "): " << mean / static_cast<double>(cells.size())
      << "\n";
  return 0;
}

void add_common(CLI::App* sub, Common& c, bool needs_checkpoint) {
  sub->add_option("-c,--config", c.config, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
  if (needs_checkpoint)
    sub->add_option("--checkpoint", c.checkpoint, "Checkpoint directory (default: last stage of the run)");
  sub->add_option("-o,--out", c.out, "Output directory (default: output_dir of the config)");
  sub->add_option("--seed", c.seed, "Seed override");
  sub->add_option("--threads", c.threads, "Worker threads (default: $DAGVAE_THREADS or 1)");
}

void add_groups(CLI::App* sub, GroupArgs& g, bool with_groups) {
  sub->add_option("--labels", g.labels, "Label table (CSV, first column cell id)")->required();
  sub->add_option("--label-column", g.column, "Column of the label table")->required();
  if (with_groups) sub->add_option("--groups", g.groups, "Two label values: I J")->required()->expected(2);
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"DAG-conditioned multimodal VAE with mixture priors"};
  app.name("dagvae");
  app.require_subcommand(1);

  Common common;
  GroupArgs groups;
  std::string resume, modality, method = "exceedance", statistic = "decoded-mean";
  std::size_t n_cells = 1000, pairs = 0, steps = 11, k = 0;
  std::optional<double> separation;
  double gain = 1.0;
  std::vector<std::string> fixed, features, vary;

  auto* validate_cmd = app.add_subcommand("validate", "Check a configuration and its data headers");
  add_common(validate_cmd, common, false);

  auto* train = app.add_subcommand("train", "Train stage by stage in topological order");
  add_common(train, common, false);
  train->add_option("--resume", resume, "Continue from a stage checkpoint");

  auto* gen = app.add_subcommand("generate", "Sample synthetic data from the generative model");
  add_common(gen, common, true);
  gen->add_option("-n,--cells", n_cells, "Number of cells");
  gen->add_option("--separation", separation, "Place prior means this far apart (fresh or loaded model)");
  gen->add_option("--decoder-gain", gain, "Scale decoder output weights");
  gen->add_option("--fixed", fixed, "Pin a component: MODALITY=K");

  auto* lat = app.add_subcommand("latents", "Export posterior means and cluster assignments");
  add_common(lat, common, true);

  auto* cluster = app.add_subcommand("cluster", "Per-modality cluster labels (argmax of q(c|x))");
  add_common(cluster, common, true);

  auto* diff = app.add_subcommand("diff", "Bayes-factor differential analysis between two groups");
  add_common(diff, common, true);
  add_groups(diff, groups, true);
  diff->add_option("-m,--modality", modality, "Modality to test")->required();
  diff->add_option("--pairs", pairs, "Number of sampled cell pairs");
  diff->add_option("--method", method, "exceedance | likelihood");

  auto* contrib = app.add_subcommand("contrib", "Contribution of each modality to a modality's features");
  add_common(contrib, common, true);
  add_groups(contrib, groups, true);
  contrib->add_option("-m,--modality", modality, "Modality whose features are scored")->required();
  contrib->add_option("--pairs", pairs, "Number of sampled cell pairs");
  contrib->add_option("--statistic", statistic, "decoded-mean | likelihood");
  contrib->add_option("--features", features, "Restrict to these features");

  auto* interp = app.add_subcommand("interpolate", "Decode along the line between two group centroids");
  add_common(interp, common, true);
  add_groups(interp, groups, true);
  interp->add_option("--vary", vary, "Modalities to interpolate (default: all)");
  interp->add_option("--steps", steps, "Number of points, >= 2");

  auto* enrich = app.add_subcommand("enrichment", "kNN cell-type enrichment scores on posterior means");
  add_common(enrich, common, true);
  add_groups(enrich, groups, false);
  enrich->add_option("-m,--modality", modality, "Latent space to use (default: first modality)");
  enrich->add_option("-k", k, "Neighbours (default: analysis.enrichment_k)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*validate_cmd) return cmd_validate(common, out);
    if (*train) return cmd_train(common, resume, out);
    if (*gen) return cmd_generate(common, n_cells, separation, gain, fixed, out);
    if (*lat) return cmd_latents(common, false, out);
    if (*cluster) return cmd_latents(common, true, out);
    if (*diff) return cmd_diff(common, groups, modality, pairs, method, out);
    if (*contrib) return cmd_contrib(common, groups, modality, pairs, statistic, features, out);
    if (*interp) return cmd_interpolate(common, groups, vary, steps, out);
    if (*enrich) return cmd_enrichment(common, groups, modality, k, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace dagvae

#pragma once

// Post-training analyses on a fitted model: pairwise Bayes factors, modality
// contribution scores via latent substitution, chimeric profiles, latent
// interpolation, kNN enrichment scores and latent export.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dagvae/data_io.hpp"
#include "dagvae/model.hpp"

namespace dagvae {

struct CellGroup {
  std::string name;
  std::vector<std::size_t> cells;
};

struct AnalysisData {
  std::span<const ModalityData> modalities;
  const BatchCovariate* batch = nullptr;
};

// Cell pairs (i, j) with the standard-normal draws used to sample z for each
// side, one [n_pairs, dim_z] block per modality.
struct PairDraws {
  std::vector<std::size_t> first;
  std::vector<std::size_t> second;
  std::vector<ad::Tensor> eps_first;
  std::vector<ad::Tensor> eps_second;

  std::size_t size() const { return first.size(); }
};

// Uniform with replacement from I x J. Throws ContractError on an empty group.
PairDraws draw_pairs(const Model& model, const CellGroup& I, const CellGroup& J, std::size_t n_pairs, dist::Rng& rng);
// Swaps the two sides, keeping each cell's draws.
PairDraws mirrored(const PairDraws& pairs);

enum class BayesMethod { exceedance, likelihood };
std::string to_string(BayesMethod method);
BayesMethod bayes_method_from_string(const std::string& name);

inline constexpr double kProbabilityClamp = 1e-6;

struct DifferentialResult {
  std::vector<std::string> features;
  std::vector<double> prob_h1;       // raw, before clamping
  std::vector<double> bayes_factor;  // log(p / (1 - p)), p clamped
  std::vector<double> mean_i;
  std::vector<double> mean_j;
  std::vector<double> lfc;  // log2 of mean_i / mean_j
  std::size_t n_pairs = 0;
};

// Per feature of modality m, p(H1) is the share of pairs where cell i's
// statistic exceeds cell j's, ties counting one half. The statistic is the
// decoded mean (exceedance) or the log-likelihood of the observed value.
DifferentialResult bayes_factor(const Model& model, const AnalysisData& data, std::size_t m, const PairDraws& pairs,
                                BayesMethod method = BayesMethod::exceedance, std::size_t threads = 1);
DifferentialResult bayes_factor(const Model& model, const AnalysisData& data, std::size_t m, const CellGroup& I,
                                const CellGroup& J, std::size_t n_pairs, dist::Rng& rng,
                                BayesMethod method = BayesMethod::exceedance, std::size_t threads = 1);

enum class ContributionStatistic { decoded_mean, likelihood };
std::string to_string(ContributionStatistic s);
ContributionStatistic contribution_statistic_from_string(const std::string& name);

struct ContributionResult {
  std::size_t substituted = 0;  // modality whose latent is swapped
  std::size_t target = 0;       // modality whose features are scored
  std::vector<std::string> features;
  std::vector<double> score;
  ContributionStatistic statistic = ContributionStatistic::decoded_mean;
  std::size_t n_pairs = 0;
};

// Mean over pairs of stat(chimera) - stat(baseline) for every feature of
// `target`, where the chimera replaces z_m of cell i with z_m of cell j and
// re-runs the generative chain. `features` restricts the output (empty: all);
// unknown names throw LookupError.
ContributionResult contribution_score(const Model& model, const AnalysisData& data, std::size_t m, std::size_t target,
                                      const PairDraws& pairs, ContributionStatistic statistic,
                                      std::span<const std::string> features = {}, std::size_t threads = 1);

// Decoded means [n_cells, F_m] per modality for synthetic cells whose z_m come
// from a cell of sources[m]. Modalities sharing a source group share the
// sampled cell. The batch covariate follows the cell drawn for the first
// modality in topological order.
std::vector<ad::Tensor> chimeric_profile(const Model& model, const AnalysisData& data,
                                         std::span<const CellGroup> sources, std::size_t n_cells, dist::Rng& rng,
                                         ForwardMode mode = ForwardMode::mean);

struct InterpolationStep {
  double t = 0.0;
  std::vector<ad::Tensor> means;  // per modality, [1, F_m]
  std::vector<ad::Tensor> z_hat;  // per modality, [1, dim_z]
};

// Linear path between group centroids of the posterior means for the selected
// modalities (empty: all); the others stay at the I centroid. The batch
// covariate is the average one-hot vector over I and J.
std::vector<InterpolationStep> interpolate(const Model& model, const AnalysisData& data, const CellGroup& I,
                                           const CellGroup& J, std::span<const std::size_t> selected,
                                           std::size_t steps);

// score_i = (same-label share among the k nearest neighbours) / (n_label / N),
// Euclidean distance, self excluded, ties broken by cell index.
std::vector<double> enrichment_score(const ad::Tensor& latents, std::span<const std::string> labels, std::size_t k);

struct LatentSummary {
  ad::Tensor mean;                     // [N, dim_z]
  ad::Tensor q;                        // [N, K], cluster posterior at the mean
  std::vector<std::size_t> argmax;     // per cell
  std::vector<double> q_max;
};

// Posterior means and cluster assignments for every cell, per modality.
std::vector<LatentSummary> latents(const Model& model, const AnalysisData& data, std::size_t threads = 1);

}  // namespace dagvae

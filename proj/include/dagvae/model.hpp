#pragma once

// DAG-conditioned hierarchical VAE with a Gaussian-mixture prior per modality.
//
// Per modality m the generative chain is
//   c_m ~ Categorical(pi_m),  z_m ~ N(mu(c_m), Sigma(c_m)),
//   z~_m = f_r(z_m),  z^_m = f_b([z^_parents ; z~_m]),
//   rho_m = f_d([z^_m ; b]),  x_m ~ Dist(rho_m),
// evaluated in topological order of the modality graph. The recognition side
// is an encoder per modality producing a diagonal Gaussian q(z_m | x_m).

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dagvae/autodiff.hpp"
#include "dagvae/data_io.hpp"
#include "dagvae/distributions.hpp"
#include "dagvae/modality_graph.hpp"

namespace dagvae {

enum class IncorporateMode { ancestors, parents_only };

std::string to_string(IncorporateMode mode);
IncorporateMode incorporate_mode_from_string(const std::string& name);

inline const std::vector<std::size_t> kDefaultEncoderWidths{1024, 512, 256, 128};
inline const std::vector<std::size_t> kDefaultDecoderWidths{128, 256, 512};

struct ModalitySpec {
  std::string name;
  dist::Likelihood likelihood = dist::Likelihood::zinb;
  std::size_t n_features = 0;
  std::size_t dim_z = 20;
  std::size_t n_components = 41;
};

struct ModelConfig {
  std::size_t dim_z = 20;
  // 0 resolves to 2 * dim_z + 1.
  std::size_t n_components = 0;
  std::size_t n_mc_samples = 1;
  IncorporateMode incorporate_mode = IncorporateMode::ancestors;
  std::vector<std::size_t> encoder_widths = kDefaultEncoderWidths;
  std::vector<std::size_t> decoder_widths = kDefaultDecoderWidths;
  bool train_prior = true;

  std::size_t resolved_components() const { return n_components ? n_components : 2 * dim_z + 1; }
};

// Divides every default width by `divisor` (floored at 1), keeping the ratios.
std::vector<std::size_t> scaled_widths(const std::vector<std::size_t>& widths, std::size_t divisor);

struct ModelSpec {
  std::vector<ModalitySpec> modalities;
  std::vector<Edge> edges;
  ModelConfig config;
  std::vector<std::string> batch_categories;

  nlohmann::json to_json() const;
  static ModelSpec from_json(const nlohmann::json& j);
};

enum class ParamGroup { encoder, latent_transform, parent_merge, decoder, prior };

struct Parameter {
  std::string name;
  std::size_t owner = 0;  // modality index
  ParamGroup group = ParamGroup::encoder;
  ad::Tensor value;
};

class ParameterStore {
 public:
  std::size_t add(Parameter p);
  std::size_t size() const noexcept { return params_.size(); }
  Parameter& operator[](std::size_t i) { return params_.at(i); }
  const Parameter& operator[](std::size_t i) const { return params_.at(i); }
  std::size_t index_of(const std::string& name) const;
  ad::Tensor& value(const std::string& name) { return params_.at(index_of(name)).value; }
  const ad::Tensor& value(const std::string& name) const { return params_.at(index_of(name)).value; }
  std::size_t total_values() const;

  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::vector<Parameter> params_;
};

struct DenseLayer {
  std::size_t weight = 0;
  std::size_t bias = 0;
  // Swish followed by layer normalization with learned gain/bias.
  bool swish_norm = false;
  std::size_t norm_gain = 0;
  std::size_t norm_bias = 0;
};

struct ComponentNetwork {
  std::vector<DenseLayer> encoder;
  DenseLayer encoder_head;  // [mu | raw variance]
  DenseLayer latent_transform;
  DenseLayer parent_merge;
  std::vector<DenseLayer> decoder;
  DenseLayer decoder_out;
  std::size_t prior_logits = 0;
  std::size_t prior_means = 0;
  std::size_t prior_raw_variances = 0;
  std::vector<std::size_t> parents;
  std::size_t parent_width = 0;
};

class Model {
 public:
  Model(ModelSpec spec, std::uint64_t seed);

  const ModelSpec& spec() const noexcept { return spec_; }
  const ModalityGraph& graph() const noexcept { return graph_; }
  const TopoOrder& order() const noexcept { return order_; }
  const std::vector<std::size_t>& sequence() const noexcept { return sequence_; }
  std::size_t modality_count() const noexcept { return spec_.modalities.size(); }
  const ModalitySpec& modality(std::size_t m) const { return spec_.modalities.at(m); }
  const ComponentNetwork& network(std::size_t m) const { return networks_.at(m); }
  std::size_t batch_width() const noexcept { return spec_.batch_categories.size(); }
  std::size_t modality_index(const std::string& name) const { return graph_.index_of(name); }

  ParameterStore& parameters() noexcept { return params_; }
  const ParameterStore& parameters() const noexcept { return params_; }

  // Trainable flag per parameter for the given set of trained modalities.
  std::vector<bool> trainable_mask(std::span<const std::size_t> trained) const;

 private:
  void build(std::uint64_t seed);

  ModelSpec spec_;
  ModalityGraph graph_;
  TopoOrder order_;
  std::vector<std::size_t> sequence_;
  std::vector<ComponentNetwork> networks_;
  ParameterStore params_;
};

// Lazily exposes parameters as graph leaves: variables when trainable,
// constants otherwise.
class ParamBinding {
 public:
  ParamBinding(ad::Graph& graph, const ParameterStore& store, std::vector<bool> trainable);
  // All parameters constant.
  ParamBinding(ad::Graph& graph, const ParameterStore& store);

  ad::Var operator[](std::size_t index);
  ad::Graph& graph() noexcept { return graph_; }
  // Gradient per parameter (empty tensor for untouched or frozen parameters).
  std::vector<ad::Tensor> collect(const ad::GradientMap& grads) const;

 private:
  ad::Graph& graph_;
  const ParameterStore& store_;
  std::vector<bool> trainable_;
  std::vector<std::optional<ad::Var>> bound_;
};

// Dense inputs for a set of cells.
struct CellBatch {
  std::vector<ad::Tensor> x;  // raw observations per modality, [n, F_m]
  ad::Tensor batch;           // one-hot batch covariate, [n, B]
  std::size_t n_cells = 0;
};

CellBatch make_batch(std::span<const ModalityData> data, const BatchCovariate& batch,
                     std::span<const std::size_t> cells);

// Standard-normal draws, [sample][modality] -> [n, dim_z].
struct ForwardNoise {
  std::vector<std::vector<ad::Tensor>> eps;
  std::size_t samples() const { return eps.size(); }
  // Rows `cells` of every block.
  ForwardNoise rows(std::span<const std::size_t> cells) const;
};

ForwardNoise draw_noise(const Model& model, std::size_t n_cells, std::size_t n_samples, dist::Rng& rng);

enum class ForwardMode { stochastic, mean };

struct PosteriorStats {
  ad::Var mean;
  ad::Var variance;
};

PosteriorStats encode(const Model& model, ParamBinding& params, std::size_t m, const ad::Tensor& x);
dist::GaussianMixturePrior prior(const Model& model, ParamBinding& params, std::size_t m);
ad::Var latent_transform(const Model& model, ParamBinding& params, std::size_t m, ad::Var z);
// z^_m = f_b([parent_block ; z~_m]); for a root, parent_block is empty.
ad::Var incorporate_parents(const Model& model, ParamBinding& params, std::size_t m, ad::Var z_tilde,
                            std::span<const ad::Var> parent_latents);
dist::DecodedDist decode(const Model& model, ParamBinding& params, std::size_t m, ad::Var z_hat, ad::Var batch);

struct ClusterPosterior {
  ad::Var q;                                 // [n, K]
  ad::Var log_q;                             // [n, K]
  std::vector<ad::Var> log_p_c_given_z;      // per sample, [n, K]
};

// q(c = k) = softmax_k of the sample-average of log pi_k + log N(z_s; mu_k, Sigma_k).
ClusterPosterior cluster_posterior(const dist::GaussianMixturePrior& prior, std::span<const ad::Var> z_samples);

// Generative half of the chain given a latent sample per modality.
struct Propagation {
  std::vector<ad::Var> z_tilde;
  std::vector<ad::Var> z_hat;
  std::vector<dist::DecodedDist> rho;
};

Propagation propagate(const Model& model, ParamBinding& params, std::span<const ad::Var> z, ad::Var batch);

struct ModalityState {
  PosteriorStats posterior;
  std::vector<ad::Var> z;  // per sample
  std::vector<ad::Var> z_tilde;
  std::vector<ad::Var> z_hat;
  std::vector<dist::DecodedDist> rho;
  ClusterPosterior clusters;
  dist::GaussianMixturePrior prior;
};

struct ForwardState {
  std::vector<ModalityState> modalities;
  std::size_t n_cells = 0;
  std::size_t n_samples = 0;
};

// Encodes every modality, draws z (or takes the posterior mean), then runs the
// generative chain in topological order and the cluster posterior.
ForwardState forward(const Model& model, ParamBinding& params, const CellBatch& batch, const ForwardNoise* noise,
                     ForwardMode mode);

struct ModalityElbo {
  ad::Var recon;  // [n, 1]
  ad::Var kl_z;   // [n, 1]
  ad::Var kl_c;   // [n, 1]
};

struct ElboTerms {
  std::vector<ModalityElbo> modalities;
  ad::Var total;  // [n, 1]: sum_m recon - kl_z - kl_c
};

ElboTerms elbo(const Model& model, const CellBatch& batch, const ForwardState& state);

// Sum over cells of -sum_m (recon_m - beta_m * (kl_z_m + kl_c_m)).
ad::Var weighted_loss_sum(const ElboTerms& terms, std::span<const double> beta);

struct GeneratedData {
  std::vector<ModalityData> modalities;
  std::vector<std::vector<std::size_t>> components;  // [modality][cell]
  std::vector<ad::Tensor> latents;                   // [modality] -> [n, dim_z]
  BatchCovariate batch;
};

// Runs the generative model forward. `fixed_components[m]`, when set, pins c_m
// for every cell.
GeneratedData generate(const Model& model, std::size_t n_cells, dist::Rng& rng,
                       std::span<const std::optional<std::size_t>> fixed_components = {});

// Places prior means of every modality on a circle of the given radius in the
// first two latent dimensions (a line when dim_z == 1), unit variances and
// uniform weights.
void plant_separated_prior(Model& model, double separation);

// Multiplies every decoder output weight by `gain`, sharpening how strongly the
// latent state shows in generated data.
void amplify_decoder(Model& model, double gain);

}  // namespace dagvae

#include "dagvae/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "dagvae/error.hpp"

namespace dagvae {

namespace {

constexpr double kUnitVarianceRaw = 0.54132115385880155;  // softplus^-1(1 - 1e-6)

ad::Tensor glorot(std::size_t fan_in, std::size_t fan_out, dist::Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> unif(-a, a);
  ad::Tensor w(ad::Shape{fan_in, fan_out});
  for (double& v : w.values()) v = unif(rng);
  return w;
}

// Nonzero biases keep layer normalization away from constant inputs when a
// cell has no counts.
ad::Tensor fan_in_bias(std::size_t fan_in, std::size_t fan_out, dist::Rng& rng) {
  const double a = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> unif(-a, a);
  ad::Tensor b(ad::Shape{fan_out});
  for (double& v : b.values()) v = unif(rng);
  return b;
}

ad::Var apply(const DenseLayer& layer, ParamBinding& params, ad::Var x) {
  ad::Var y = ad::add(ad::matmul(x, params[layer.weight]), params[layer.bias]);
  if (layer.swish_norm) y = ad::layer_norm(ad::swish(y), params[layer.norm_gain], params[layer.norm_bias]);
  return y;
}

ad::Var positive(ad::Var raw) { return ad::scalar_affine(ad::softplus(raw), 1.0, dist::kPositiveFloor); }

}  // namespace

std::string to_string(IncorporateMode mode) {
  return mode == IncorporateMode::ancestors ? "ancestors" : "parents-only";
}

IncorporateMode incorporate_mode_from_string(const std::string& name) {
  if (name == "ancestors") return IncorporateMode::ancestors;
  if (name == "parents-only") return IncorporateMode::parents_only;
  throw ConfigError("unknown incorporate_mode '" + name + "' (expected ancestors or parents-only)");
}

std::vector<std::size_t> scaled_widths(const std::vector<std::size_t>& widths, std::size_t divisor) {
  if (divisor == 0) throw ConfigError("width divisor must be positive");
  std::vector<std::size_t> out;
  for (std::size_t w : widths) out.push_back(std::max<std::size_t>(1, w / divisor));
  return out;
}

nlohmann::json ModelSpec::to_json() const {
  nlohmann::json mods = nlohmann::json::array();
  for (const auto& m : modalities)
    mods.push_back({{"name", m.name},
                    {"likelihood", dist::to_string(m.likelihood)},
                    {"n_features", m.n_features},
                    {"dim_z", m.dim_z},
                    {"n_components", m.n_components}});
  nlohmann::json e = nlohmann::json::array();
  for (const auto& [from, to] : edges) e.push_back({from, to});
  return {{"modalities", mods},
          {"edges", e},
          {"config",
           {{"dim_z", config.dim_z},
            {"n_components", config.n_components},
            {"n_mc_samples", config.n_mc_samples},
            {"incorporate_mode", to_string(config.incorporate_mode)},
            {"encoder_widths", config.encoder_widths},
            {"decoder_widths", config.decoder_widths},
            {"train_prior", config.train_prior}}},
          {"batch_categories", batch_categories}};
}

ModelSpec ModelSpec::from_json(const nlohmann::json& j) {
  ModelSpec s;
  for (const auto& m : j.at("modalities"))
    s.modalities.push_back({m.at("name").get<std::string>(),
                            dist::likelihood_from_string(m.at("likelihood").get<std::string>()),
                            m.at("n_features").get<std::size_t>(), m.at("dim_z").get<std::size_t>(),
                            m.at("n_components").get<std::size_t>()});
  for (const auto& e : j.at("edges")) s.edges.emplace_back(e.at(0).get<std::string>(), e.at(1).get<std::string>());
  const auto& c = j.at("config");
  s.config.dim_z = c.at("dim_z").get<std::size_t>();
  s.config.n_components = c.at("n_components").get<std::size_t>();
  s.config.n_mc_samples = c.at("n_mc_samples").get<std::size_t>();
  s.config.incorporate_mode = incorporate_mode_from_string(c.at("incorporate_mode").get<std::string>());
  s.config.encoder_widths = c.at("encoder_widths").get<std::vector<std::size_t>>();
  s.config.decoder_widths = c.at("decoder_widths").get<std::vector<std::size_t>>();
  s.config.train_prior = c.at("train_prior").get<bool>();
  s.batch_categories = j.at("batch_categories").get<std::vector<std::string>>();
  return s;
}

std::size_t ParameterStore::add(Parameter p) {
  for (const auto& q : params_)
    if (q.name == p.name) throw ContractError("duplicate parameter '" + p.name + "'");
  params_.push_back(std::move(p));
  return params_.size() - 1;
}

std::size_t ParameterStore::index_of(const std::string& name) const {
  const auto it = std::find_if(params_.begin(), params_.end(), [&](const Parameter& p) { return p.name == name; });
  if (it == params_.end()) throw LookupError("no parameter named '" + name + "'");
  return static_cast<std::size_t>(it - params_.begin());
}

std::size_t ParameterStore::total_values() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

Model::Model(ModelSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  std::vector<std::string> names;
  for (const auto& m : spec_.modalities) {
    if (m.n_features == 0) throw ConfigError("modality '" + m.name + "' has no features");
    if (m.dim_z == 0) throw ConfigError("dim_z must be at least 1");
    if (m.n_components == 0) throw ConfigError("n_components must be at least 1");
    names.push_back(m.name);
  }
  if (spec_.config.n_mc_samples == 0) throw ConfigError("n_mc_samples must be at least 1");
  if (spec_.config.encoder_widths.empty() || spec_.config.decoder_widths.empty())
    throw ConfigError("encoder and decoder need at least one hidden layer");
  graph_ = ModalityGraph(names, spec_.edges);
  order_ = graph_.topo_stages();
  sequence_ = order_.sequence();
  build(seed);
}

void Model::build(std::uint64_t seed) {
  dist::Rng rng(seed);
  const auto& cfg = spec_.config;
  networks_.resize(spec_.modalities.size());
  for (std::size_t m = 0; m < spec_.modalities.size(); ++m) {
    const ModalitySpec& ms = spec_.modalities[m];
    ComponentNetwork& net = networks_[m];
    const std::string& prefix = ms.name;
    auto add = [&](const std::string& name, ParamGroup group, ad::Tensor value) {
      return params_.add({prefix + "." + name, m, group, std::move(value)});
    };
    auto dense = [&](const std::string& name, ParamGroup group, std::size_t in, std::size_t out, bool swish_norm) {
      DenseLayer layer;
      layer.weight = add(name + ".weight", group, glorot(in, out, rng));
      layer.bias = add(name + ".bias", group, fan_in_bias(in, out, rng));
      layer.swish_norm = swish_norm;
      if (swish_norm) {
        layer.norm_gain = add(name + ".norm_gain", group, ad::Tensor::filled(ad::Shape{out}, 1.0));
        layer.norm_bias = add(name + ".norm_bias", group, ad::Tensor(ad::Shape{out}));
      }
      return layer;
    };
    auto identity_padded = [](std::size_t rows, std::size_t d) {
      // Zero block for parents, identity for the modality's own latent.
      ad::Tensor w(ad::Shape{rows, d});
      for (std::size_t i = 0; i < d; ++i) w(rows - d + i, i) = 1.0;
      return w;
    };

    std::size_t in = ms.n_features;
    for (std::size_t l = 0; l < cfg.encoder_widths.size(); ++l) {
      net.encoder.push_back(dense("encoder." + std::to_string(l), ParamGroup::encoder, in, cfg.encoder_widths[l], l > 0));
      in = cfg.encoder_widths[l];
    }
    net.encoder_head = dense("encoder.head", ParamGroup::encoder, in, 2 * ms.dim_z, false);

    net.latent_transform.weight = add("latent_transform.weight", ParamGroup::latent_transform, identity_padded(ms.dim_z, ms.dim_z));
    net.latent_transform.bias = add("latent_transform.bias", ParamGroup::latent_transform, ad::Tensor(ad::Shape{ms.dim_z}));

    net.parents = graph_.parents(m);
    net.parent_width = 0;
    for (std::size_t p : net.parents) net.parent_width += spec_.modalities[p].dim_z;
    net.parent_merge.weight =
        add("parent_merge.weight", ParamGroup::parent_merge, identity_padded(net.parent_width + ms.dim_z, ms.dim_z));
    net.parent_merge.bias = add("parent_merge.bias", ParamGroup::parent_merge, ad::Tensor(ad::Shape{ms.dim_z}));

    in = ms.dim_z + batch_width();
    for (std::size_t l = 0; l < cfg.decoder_widths.size(); ++l) {
      net.decoder.push_back(dense("decoder." + std::to_string(l), ParamGroup::decoder, in, cfg.decoder_widths[l], true));
      in = cfg.decoder_widths[l];
    }
    net.decoder_out =
        dense("decoder.out", ParamGroup::decoder, in, ms.n_features * dist::parameter_count(ms.likelihood), false);

    const std::size_t k = ms.n_components;
    net.prior_logits = add("prior.logits", ParamGroup::prior, ad::Tensor(ad::Shape{k}));
    net.prior_means = add("prior.means", ParamGroup::prior, dist::standard_normal(ad::Shape{k, ms.dim_z}, rng));
    net.prior_raw_variances =
        add("prior.raw_variances", ParamGroup::prior, ad::Tensor::filled(ad::Shape{k, ms.dim_z}, kUnitVarianceRaw));
  }
}

std::vector<bool> Model::trainable_mask(std::span<const std::size_t> trained) const {
  std::vector<bool> mask(params_.size(), false);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const Parameter& p = params_[i];
    const bool owned = std::find(trained.begin(), trained.end(), p.owner) != trained.end();
    mask[i] = owned && (p.group != ParamGroup::prior || spec_.config.train_prior);
  }
  return mask;
}

ParamBinding::ParamBinding(ad::Graph& graph, const ParameterStore& store, std::vector<bool> trainable)
    : graph_(graph), store_(store), trainable_(std::move(trainable)), bound_(store.size()) {
  if (trainable_.size() != store.size()) throw ContractError("trainable mask size differs from parameter count");
}

ParamBinding::ParamBinding(ad::Graph& graph, const ParameterStore& store)
    : ParamBinding(graph, store, std::vector<bool>(store.size(), false)) {}

ad::Var ParamBinding::operator[](std::size_t index) {
  auto& slot = bound_.at(index);
  if (!slot) slot = trainable_[index] ? graph_.variable(store_[index].value) : graph_.constant(store_[index].value);
  return *slot;
}

std::vector<ad::Tensor> ParamBinding::collect(const ad::GradientMap& grads) const {
  std::vector<ad::Tensor> out(bound_.size());
  for (std::size_t i = 0; i < bound_.size(); ++i)
    if (bound_[i] && trainable_[i] && grads.contains(*bound_[i])) out[i] = grads.at(*bound_[i]);
  return out;
}

CellBatch make_batch(std::span<const ModalityData> data, const BatchCovariate& batch,
                     std::span<const std::size_t> cells) {
  CellBatch b;
  b.n_cells = cells.size();
  for (const auto& d : data) b.x.push_back(d.matrix.dense_rows(cells));
  b.batch = batch.one_hot(cells);
  return b;
}

ForwardNoise ForwardNoise::rows(std::span<const std::size_t> cells) const {
  ForwardNoise out;
  for (const auto& sample : eps) {
    std::vector<ad::Tensor> blocks;
    for (const auto& block : sample) {
      const std::size_t d = block.cols();
      ad::Tensor t(ad::Shape{cells.size(), d});
      for (std::size_t k = 0; k < cells.size(); ++k)
        for (std::size_t c = 0; c < d; ++c) t[k * d + c] = block(cells[k], c);
      blocks.push_back(std::move(t));
    }
    out.eps.push_back(std::move(blocks));
  }
  return out;
}

ForwardNoise draw_noise(const Model& model, std::size_t n_cells, std::size_t n_samples, dist::Rng& rng) {
  ForwardNoise noise;
  for (std::size_t s = 0; s < n_samples; ++s) {
    std::vector<ad::Tensor> blocks;
    for (std::size_t m = 0; m < model.modality_count(); ++m)
      blocks.push_back(dist::standard_normal(ad::Shape{n_cells, model.modality(m).dim_z}, rng));
    noise.eps.push_back(std::move(blocks));
  }
  return noise;
}

PosteriorStats encode(const Model& model, ParamBinding& params, std::size_t m, const ad::Tensor& x) {
  const ModalitySpec& ms = model.modality(m);
  const ComponentNetwork& net = model.network(m);
  if (x.cols() != ms.n_features)
    throw ShapeError(ms.name + ": encoder expects " + std::to_string(ms.n_features) + " features, got " +
                     std::to_string(x.cols()));
  ad::Tensor input = x;
  if (ms.likelihood == dist::Likelihood::zinb)
    for (double& v : input.values()) v = std::log1p(v);
  ad::Var h = params.graph().constant(std::move(input));
  for (const auto& layer : net.encoder) h = apply(layer, params, h);
  const ad::Var head = apply(net.encoder_head, params, h);
  return {ad::slice_lastdim(head, 0, ms.dim_z), positive(ad::slice_lastdim(head, ms.dim_z, 2 * ms.dim_z))};
}

dist::GaussianMixturePrior prior(const Model& model, ParamBinding& params, std::size_t m) {
  const ComponentNetwork& net = model.network(m);
  return {params[net.prior_logits], params[net.prior_means], positive(params[net.prior_raw_variances])};
}

ad::Var latent_transform(const Model& model, ParamBinding& params, std::size_t m, ad::Var z) {
  return apply(model.network(m).latent_transform, params, z);
}

ad::Var incorporate_parents(const Model& model, ParamBinding& params, std::size_t m, ad::Var z_tilde,
                            std::span<const ad::Var> parent_latents) {
  const ComponentNetwork& net = model.network(m);
  if (parent_latents.size() != net.parents.size())
    throw ContractError(model.modality(m).name + ": expected " + std::to_string(net.parents.size()) +
                        " parent latents, got " + std::to_string(parent_latents.size()));
  std::vector<ad::Var> parts(parent_latents.begin(), parent_latents.end());
  parts.push_back(z_tilde);
  const ad::Var input = parts.size() == 1 ? z_tilde : ad::concat_lastdim(parts);
  if (input.cols() != net.parent_width + model.modality(m).dim_z)
    throw ContractError(model.modality(m).name + ": parent block has the wrong width");
  return apply(net.parent_merge, params, input);
}

dist::DecodedDist decode(const Model& model, ParamBinding& params, std::size_t m, ad::Var z_hat, ad::Var batch) {
  const ModalitySpec& ms = model.modality(m);
  const ComponentNetwork& net = model.network(m);
  if (batch.cols() != model.batch_width())
    throw ContractError("batch covariate width " + std::to_string(batch.cols()) + ", model was built with " +
                        std::to_string(model.batch_width()));
  ad::Var h = z_hat;
  if (model.batch_width() > 0) {
    const ad::Var parts[] = {z_hat, batch};
    h = ad::concat_lastdim(parts);
  }
  for (const auto& layer : net.decoder) h = apply(layer, params, h);
  const ad::Var out = apply(net.decoder_out, params, h);
  const std::size_t f = ms.n_features;
  if (ms.likelihood == dist::Likelihood::bernoulli) return dist::BernoulliDist{out};
  return dist::ZINBDist{positive(ad::slice_lastdim(out, 0, f)), positive(ad::slice_lastdim(out, f, 2 * f)),
                        ad::slice_lastdim(out, 2 * f, 3 * f)};
}

ClusterPosterior cluster_posterior(const dist::GaussianMixturePrior& prior, std::span<const ad::Var> z_samples) {
  if (z_samples.empty()) throw ContractError("cluster posterior needs at least one latent sample");
  std::vector<ad::Var> log_joint;
  for (const ad::Var& z : z_samples) log_joint.push_back(dist::mixture_log_joint(prior, z));
  ClusterPosterior out;
  const ad::Var expected = ad::average(log_joint);
  out.q = ad::softmax_lastdim(expected);
  out.log_q = ad::log_softmax_lastdim(expected);
  for (const ad::Var& lj : log_joint) out.log_p_c_given_z.push_back(ad::log_softmax_lastdim(lj));
  return out;
}

Propagation propagate(const Model& model, ParamBinding& params, std::span<const ad::Var> z, ad::Var batch) {
  const std::size_t n_mod = model.modality_count();
  if (z.size() != n_mod) throw ContractError("propagate needs one latent per modality");
  Propagation out;
  std::vector<std::optional<ad::Var>> z_tilde(n_mod), z_hat(n_mod);
  std::vector<std::optional<dist::DecodedDist>> rho(n_mod);
  const bool ancestors = model.spec().config.incorporate_mode == IncorporateMode::ancestors;
  for (std::size_t m : model.sequence()) {
    z_tilde[m] = latent_transform(model, params, m, z[m]);
    std::vector<ad::Var> parent_block;
    for (std::size_t p : model.network(m).parents) {
      if (ancestors && !z_hat[p]) throw ContractError("parent state missing for " + model.modality(m).name);
      parent_block.push_back(ancestors ? *z_hat[p] : z[p]);
    }
    z_hat[m] = incorporate_parents(model, params, m, *z_tilde[m], parent_block);
    rho[m] = decode(model, params, m, *z_hat[m], batch);
  }
  for (std::size_t m = 0; m < n_mod; ++m) {
    out.z_tilde.push_back(*z_tilde[m]);
    out.z_hat.push_back(*z_hat[m]);
    out.rho.push_back(*rho[m]);
  }
  return out;
}

ForwardState forward(const Model& model, ParamBinding& params, const CellBatch& batch, const ForwardNoise* noise,
                     ForwardMode mode) {
  const std::size_t n_mod = model.modality_count();
  if (batch.x.size() != n_mod) throw ContractError("batch must hold every modality");
  for (std::size_t m = 0; m < n_mod; ++m)
    if (batch.x[m].rows() != batch.n_cells) throw ContractError("modality row counts differ within a batch");
  if (mode == ForwardMode::stochastic && (!noise || noise->samples() == 0))
    throw ContractError("stochastic forward needs noise draws");

  ad::Graph& g = params.graph();
  ForwardState state;
  state.n_cells = batch.n_cells;
  state.n_samples = mode == ForwardMode::mean ? 1 : noise->samples();
  state.modalities.resize(n_mod);
  for (std::size_t m = 0; m < n_mod; ++m) {
    state.modalities[m].posterior = encode(model, params, m, batch.x[m]);
    state.modalities[m].prior = prior(model, params, m);
  }
  const ad::Var b = g.constant(batch.batch.size() ? batch.batch : ad::Tensor(ad::Shape{batch.n_cells, model.batch_width()}));
  for (std::size_t s = 0; s < state.n_samples; ++s) {
    std::vector<ad::Var> z;
    for (std::size_t m = 0; m < n_mod; ++m) {
      const auto& post = state.modalities[m].posterior;
      if (mode == ForwardMode::mean) {
        z.push_back(post.mean);
      } else {
        const ad::Tensor& eps = noise->eps[s][m];
        if (eps.rows() != batch.n_cells) throw ContractError("noise rows differ from batch size");
        z.push_back(dist::normal_rsample({post.mean, post.variance}, g.constant(eps)));
      }
    }
    Propagation prop = propagate(model, params, z, b);
    for (std::size_t m = 0; m < n_mod; ++m) {
      auto& ms = state.modalities[m];
      ms.z.push_back(z[m]);
      ms.z_tilde.push_back(prop.z_tilde[m]);
      ms.z_hat.push_back(prop.z_hat[m]);
      ms.rho.push_back(prop.rho[m]);
    }
  }
  for (auto& ms : state.modalities) ms.clusters = cluster_posterior(ms.prior, ms.z);
  return state;
}

ElboTerms elbo(const Model& model, const CellBatch& batch, const ForwardState& state) {
  ElboTerms terms;
  std::optional<ad::Var> total;
  for (std::size_t m = 0; m < model.modality_count(); ++m) {
    const ModalityState& ms = state.modalities[m];
    std::vector<ad::Var> recon, kl_z, kl_c;
    for (std::size_t s = 0; s < state.n_samples; ++s) {
      recon.push_back(dist::log_prob(ms.rho[s], batch.x[m]));
      const ad::Var log_q_z = dist::normal_log_prob({ms.posterior.mean, ms.posterior.variance}, ms.z[s]);
      kl_z.push_back(ad::sub(log_q_z, dist::mixture_log_prob(ms.prior, ms.z[s])));
      kl_c.push_back(ad::reduce_sum_lastdim(
          ad::mul(ms.clusters.q, ad::sub(ms.clusters.log_q, ms.clusters.log_p_c_given_z[s]))));
    }
    ModalityElbo e{ad::average(recon), ad::average(kl_z), ad::average(kl_c)};
    const ad::Var contribution = ad::sub(ad::sub(e.recon, e.kl_z), e.kl_c);
    total = total ? ad::add(*total, contribution) : contribution;
    terms.modalities.push_back(e);
  }
  terms.total = *total;
  return terms;
}

ad::Var weighted_loss_sum(const ElboTerms& terms, std::span<const double> beta) {
  if (beta.size() != terms.modalities.size()) throw ContractError("one warm-up weight per modality required");
  std::optional<ad::Var> acc;
  for (std::size_t m = 0; m < terms.modalities.size(); ++m) {
    const auto& e = terms.modalities[m];
    const ad::Var kl = ad::scalar_affine(ad::add(e.kl_z, e.kl_c), beta[m], 0.0);
    const ad::Var part = ad::sub(e.recon, kl);
    acc = acc ? ad::add(*acc, part) : part;
  }
  return ad::neg(ad::reduce_sum(*acc));
}

GeneratedData generate(const Model& model, std::size_t n_cells, dist::Rng& rng,
                       std::span<const std::optional<std::size_t>> fixed_components) {
  const std::size_t n_mod = model.modality_count();
  if (!fixed_components.empty() && fixed_components.size() != n_mod)
    throw ContractError("fixed components must list every modality");
  GeneratedData out;
  out.components.resize(n_mod);
  out.latents.resize(n_mod);
  const ParameterStore& store = model.parameters();
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t m : model.sequence()) {
    const ModalitySpec& ms = model.modality(m);
    const ComponentNetwork& net = model.network(m);
    const ad::Tensor& logits = store[net.prior_logits].value;
    const ad::Tensor& means = store[net.prior_means].value;
    const ad::Tensor& raw_var = store[net.prior_raw_variances].value;
    std::optional<std::size_t> fixed = fixed_components.empty() ? std::nullopt : fixed_components[m];
    if (fixed && *fixed >= ms.n_components) throw DomainError("fixed component out of range for " + ms.name);
    ad::Tensor z(ad::Shape{n_cells, ms.dim_z});
    out.components[m].resize(n_cells);
    for (std::size_t i = 0; i < n_cells; ++i) {
      const std::size_t c = fixed ? *fixed : dist::categorical_sample(logits.values(), rng);
      out.components[m][i] = c;
      for (std::size_t d = 0; d < ms.dim_z; ++d) {
        const double var = ad::softplus_value(raw_var(c, d)) + dist::kPositiveFloor;
        z(i, d) = means(c, d) + std::sqrt(var) * normal(rng);
      }
    }
    out.latents[m] = std::move(z);
  }
  if (model.batch_width() > 0) {
    std::uniform_int_distribution<std::size_t> pick(0, model.batch_width() - 1);
    std::vector<std::string> labels;
    for (std::size_t i = 0; i < n_cells; ++i) labels.push_back(model.spec().batch_categories[pick(rng)]);
    out.batch = encode_batch(labels);
    out.batch.categories = model.spec().batch_categories;
    for (std::size_t i = 0; i < n_cells; ++i) {
      const auto& cats = out.batch.categories;
      out.batch.category_of[i] =
          static_cast<std::size_t>(std::find(cats.begin(), cats.end(), labels[i]) - cats.begin());
    }
  } else {
    out.batch = no_batch(n_cells);
  }

  ad::Graph g;
  ParamBinding params(g, store);
  std::vector<ad::Var> z;
  for (std::size_t m = 0; m < n_mod; ++m) z.push_back(g.constant(out.latents[m]));
  std::vector<std::size_t> all(n_cells);
  for (std::size_t i = 0; i < n_cells; ++i) all[i] = i;
  const ad::Var b = g.constant(out.batch.one_hot(all));
  const Propagation prop = propagate(model, params, z, b);

  std::vector<std::string> cells(n_cells);
  for (std::size_t i = 0; i < n_cells; ++i) cells[i] = "cell_" + std::to_string(i + 1);
  for (std::size_t m = 0; m < n_mod; ++m) {
    const ModalitySpec& ms = model.modality(m);
    ModalityData d;
    d.name = ms.name;
    d.distribution_kind = ms.likelihood;
    d.matrix = SparseMatrix::from_dense(dist::sample(prop.rho[m], rng));
    d.cell_ids = cells;
    for (std::size_t f = 0; f < ms.n_features; ++f) d.feature_names.push_back(ms.name + "_" + std::to_string(f + 1));
    out.modalities.push_back(std::move(d));
  }
  return out;
}

void plant_separated_prior(Model& model, double separation) {
  for (std::size_t m = 0; m < model.modality_count(); ++m) {
    const ModalitySpec& ms = model.modality(m);
    const ComponentNetwork& net = model.network(m);
    ParameterStore& store = model.parameters();
    const std::size_t k = ms.n_components;
    ad::Tensor& means = store[net.prior_means].value;
    std::fill(means.values().begin(), means.values().end(), 0.0);
    for (std::size_t c = 0; c < k; ++c) {
      if (ms.dim_z == 1) {
        means(c, 0) = separation * (static_cast<double>(c) - 0.5 * static_cast<double>(k - 1));
      } else if (k > 1) {
        const double radius = separation / (2.0 * std::sin(std::numbers::pi / static_cast<double>(k)));
        const double angle = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(k);
        means(c, 0) = radius * std::cos(angle);
        means(c, 1) = radius * std::sin(angle);
      }
    }
    auto& raw = store[net.prior_raw_variances].value;
    std::fill(raw.values().begin(), raw.values().end(), kUnitVarianceRaw);
    auto& logits = store[net.prior_logits].value;
    std::fill(logits.values().begin(), logits.values().end(), 0.0);
  }
}

void amplify_decoder(Model& model, double gain) {
  for (std::size_t m = 0; m < model.modality_count(); ++m)
    for (double& w : model.parameters()[model.network(m).decoder_out.weight].value.values()) w *= gain;
}

}  // namespace dagvae

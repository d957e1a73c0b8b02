#include "dagvae/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dagvae/error.hpp"
#include "dagvae/parallel.hpp"

namespace dagvae {

namespace {

constexpr std::size_t kChunkPairs = 32;

void check_data(const Model& model, const AnalysisData& data) {
  if (data.modalities.size() != model.modality_count() || !data.batch)
    throw ContractError("analysis data does not match the model");
}

ad::Tensor row_block(const ad::Tensor& t, std::size_t begin, std::size_t end) {
  const std::size_t c = t.cols();
  ad::Tensor out(ad::Shape{end - begin, c});
  std::copy(t.values().begin() + static_cast<std::ptrdiff_t>(begin * c),
            t.values().begin() + static_cast<std::ptrdiff_t>(end * c), out.values().begin());
  return out;
}

// Reparameterized z per modality for `cells`, using eps rows [begin, end).
std::vector<ad::Var> sample_side(const Model& model, ParamBinding& params, const AnalysisData& data,
                                 std::span<const std::size_t> cells, const std::vector<ad::Tensor>& eps,
                                 std::size_t begin, std::size_t end) {
  std::vector<ad::Var> z;
  for (std::size_t m = 0; m < model.modality_count(); ++m) {
    const PosteriorStats post = encode(model, params, m, data.modalities[m].matrix.dense_rows(cells));
    z.push_back(dist::normal_rsample({post.mean, post.variance}, params.graph().constant(row_block(eps[m], begin, end))));
  }
  return z;
}

std::vector<ad::Var> posterior_means(const Model& model, ParamBinding& params, const AnalysisData& data,
                                     std::span<const std::size_t> cells) {
  std::vector<ad::Var> z;
  for (std::size_t m = 0; m < model.modality_count(); ++m)
    z.push_back(encode(model, params, m, data.modalities[m].matrix.dense_rows(cells)).mean);
  return z;
}

std::span<const std::size_t> sub(const std::vector<std::size_t>& v, std::size_t begin, std::size_t end) {
  return std::span<const std::size_t>(v).subspan(begin, end - begin);
}

std::vector<std::size_t> feature_indices(const ModalityData& d, std::span<const std::string> features) {
  std::vector<std::size_t> out;
  if (features.empty()) {
    out.resize(d.n_features());
    std::iota(out.begin(), out.end(), 0);
    return out;
  }
  for (const auto& f : features) {
    const auto it = std::find(d.feature_names.begin(), d.feature_names.end(), f);
    if (it == d.feature_names.end()) throw LookupError("modality " + d.name + " has no feature '" + f + "'");
    out.push_back(static_cast<std::size_t>(it - d.feature_names.begin()));
  }
  return out;
}

}  // namespace

PairDraws draw_pairs(const Model& model, const CellGroup& I, const CellGroup& J, std::size_t n_pairs,
                     dist::Rng& rng) {
  if (I.cells.empty() || J.cells.empty()) throw ContractError("cell groups must be nonempty");
  if (n_pairs == 0) throw ContractError("n_pairs must be positive");
  PairDraws p;
  std::uniform_int_distribution<std::size_t> pick_i(0, I.cells.size() - 1), pick_j(0, J.cells.size() - 1);
  for (std::size_t k = 0; k < n_pairs; ++k) {
    p.first.push_back(I.cells[pick_i(rng)]);
    p.second.push_back(J.cells[pick_j(rng)]);
  }
  for (std::size_t m = 0; m < model.modality_count(); ++m) {
    p.eps_first.push_back(dist::standard_normal(ad::Shape{n_pairs, model.modality(m).dim_z}, rng));
    p.eps_second.push_back(dist::standard_normal(ad::Shape{n_pairs, model.modality(m).dim_z}, rng));
  }
  return p;
}

PairDraws mirrored(const PairDraws& pairs) {
  return {pairs.second, pairs.first, pairs.eps_second, pairs.eps_first};
}

std::string to_string(BayesMethod method) { return method == BayesMethod::exceedance ? "exceedance" : "likelihood"; }

BayesMethod bayes_method_from_string(const std::string& name) {
  if (name == "exceedance") return BayesMethod::exceedance;
  if (name == "likelihood") return BayesMethod::likelihood;
  throw ConfigError("unknown Bayes factor method '" + name + "' (expected exceedance or likelihood)");
}

std::string to_string(ContributionStatistic s) {
  return s == ContributionStatistic::decoded_mean ? "decoded-mean" : "likelihood";
}

ContributionStatistic contribution_statistic_from_string(const std::string& name) {
  if (name == "decoded-mean") return ContributionStatistic::decoded_mean;
  if (name == "likelihood") return ContributionStatistic::likelihood;
  throw ConfigError("unknown contribution statistic '" + name + "' (expected decoded-mean or likelihood)");
}

DifferentialResult bayes_factor(const Model& model, const AnalysisData& data, std::size_t m, const PairDraws& pairs,
                                BayesMethod method, std::size_t threads) {
  check_data(model, data);
  if (m >= model.modality_count()) throw LookupError("modality index out of range");
  if (pairs.size() == 0) throw ContractError("no cell pairs");
  const std::size_t f = model.modality(m).n_features;

  struct Partial {
    std::vector<std::size_t> greater, less;
    std::vector<double> sum_i, sum_j;
  };
  const auto ranges = chunk_ranges(pairs.size(), kChunkPairs);
  std::vector<Partial> parts(ranges.size());
  parallel_for(ranges.size(), threads, [&](std::size_t c) {
    const auto [b, e] = ranges[c];
    ad::Graph g;
    ParamBinding params(g, model.parameters());
    const auto cells_i = sub(pairs.first, b, e);
    const auto cells_j = sub(pairs.second, b, e);
    const auto zi = sample_side(model, params, data, cells_i, pairs.eps_first, b, e);
    const auto zj = sample_side(model, params, data, cells_j, pairs.eps_second, b, e);
    const Propagation pi = propagate(model, params, zi, g.constant(data.batch->one_hot(cells_i)));
    const Propagation pj = propagate(model, params, zj, g.constant(data.batch->one_hot(cells_j)));
    const ad::Tensor mean_i = dist::dist_mean(pi.rho[m]).value();
    const ad::Tensor mean_j = dist::dist_mean(pj.rho[m]).value();
    ad::Tensor stat_i = mean_i, stat_j = mean_j;
    if (method == BayesMethod::likelihood) {
      stat_i = dist::log_prob_elements(pi.rho[m], data.modalities[m].matrix.dense_rows(cells_i)).value();
      stat_j = dist::log_prob_elements(pj.rho[m], data.modalities[m].matrix.dense_rows(cells_j)).value();
    }
    Partial& p = parts[c];
    p.greater.assign(f, 0);
    p.less.assign(f, 0);
    p.sum_i.assign(f, 0.0);
    p.sum_j.assign(f, 0.0);
    for (std::size_t r = 0; r < e - b; ++r)
      for (std::size_t g2 = 0; g2 < f; ++g2) {
        if (stat_i(r, g2) > stat_j(r, g2)) ++p.greater[g2];
        if (stat_i(r, g2) < stat_j(r, g2)) ++p.less[g2];
        p.sum_i[g2] += mean_i(r, g2);
        p.sum_j[g2] += mean_j(r, g2);
      }
  });

  DifferentialResult out;
  out.features = data.modalities[m].feature_names;
  out.n_pairs = pairs.size();
  const double n = static_cast<double>(pairs.size());
  for (std::size_t g2 = 0; g2 < f; ++g2) {
    std::size_t greater = 0, less = 0;
    double si = 0.0, sj = 0.0;
    for (const auto& p : parts) {
      greater += p.greater[g2];
      less += p.less[g2];
      si += p.sum_i[g2];
      sj += p.sum_j[g2];
    }
    const std::size_t ties = pairs.size() - greater - less;
    // Both probabilities from integer counts so swapping the groups negates K exactly.
    const double p1 = static_cast<double>(2 * greater + ties) / (2.0 * n);
    const double p2 = static_cast<double>(2 * less + ties) / (2.0 * n);
    const double c1 = std::clamp(p1, kProbabilityClamp, 1.0 - kProbabilityClamp);
    const double c2 = std::clamp(p2, kProbabilityClamp, 1.0 - kProbabilityClamp);
    out.prob_h1.push_back(p1);
    out.bayes_factor.push_back(std::log(c1) - std::log(c2));
    out.mean_i.push_back(si / n);
    out.mean_j.push_back(sj / n);
    out.lfc.push_back(std::log2((si / n + kProbabilityClamp) / (sj / n + kProbabilityClamp)));
  }
  return out;
}

DifferentialResult bayes_factor(const Model& model, const AnalysisData& data, std::size_t m, const CellGroup& I,
                                const CellGroup& J, std::size_t n_pairs, dist::Rng& rng, BayesMethod method,
                                std::size_t threads) {
  return bayes_factor(model, data, m, draw_pairs(model, I, J, n_pairs, rng), method, threads);
}

ContributionResult contribution_score(const Model& model, const AnalysisData& data, std::size_t m, std::size_t target,
                                      const PairDraws& pairs, ContributionStatistic statistic,
                                      std::span<const std::string> features, std::size_t threads) {
  check_data(model, data);
  if (m >= model.modality_count() || target >= model.modality_count())
    throw LookupError("modality index out of range");
  if (pairs.size() == 0) throw ContractError("no cell pairs");
  const std::vector<std::size_t> keep = feature_indices(data.modalities[target], features);

  const auto ranges = chunk_ranges(pairs.size(), kChunkPairs);
  std::vector<std::vector<double>> parts(ranges.size());
  parallel_for(ranges.size(), threads, [&](std::size_t c) {
    const auto [b, e] = ranges[c];
    ad::Graph g;
    ParamBinding params(g, model.parameters());
    const auto cells_i = sub(pairs.first, b, e);
    const auto cells_j = sub(pairs.second, b, e);
    const auto zi = sample_side(model, params, data, cells_i, pairs.eps_first, b, e);
    const auto zj = sample_side(model, params, data, cells_j, pairs.eps_second, b, e);
    std::vector<ad::Var> chimera = zi;
    chimera[m] = zj[m];
    const ad::Var batch = g.constant(data.batch->one_hot(cells_i));
    const Propagation base = propagate(model, params, zi, batch);
    const Propagation swapped = propagate(model, params, chimera, batch);
    ad::Tensor s_base, s_swap;
    if (statistic == ContributionStatistic::decoded_mean) {
      s_base = dist::dist_mean(base.rho[target]).value();
      s_swap = dist::dist_mean(swapped.rho[target]).value();
    } else {
      const ad::Tensor x = data.modalities[target].matrix.dense_rows(cells_i);
      s_base = dist::log_prob_elements(base.rho[target], x).value();
      s_swap = dist::log_prob_elements(swapped.rho[target], x).value();
    }
    auto& acc = parts[c];
    acc.assign(keep.size(), 0.0);
    for (std::size_t r = 0; r < e - b; ++r)
      for (std::size_t k = 0; k < keep.size(); ++k) acc[k] += s_swap(r, keep[k]) - s_base(r, keep[k]);
  });

  ContributionResult out;
  out.substituted = m;
  out.target = target;
  out.statistic = statistic;
  out.n_pairs = pairs.size();
  for (std::size_t k = 0; k < keep.size(); ++k) {
    double s = 0.0;
    for (const auto& p : parts) s += p[k];
    out.features.push_back(data.modalities[target].feature_names[keep[k]]);
    out.score.push_back(s / static_cast<double>(pairs.size()));
  }
  return out;
}

std::vector<ad::Tensor> chimeric_profile(const Model& model, const AnalysisData& data,
                                         std::span<const CellGroup> sources, std::size_t n_cells, dist::Rng& rng,
                                         ForwardMode mode) {
  check_data(model, data);
  const std::size_t n_mod = model.modality_count();
  if (sources.size() != n_mod) throw ContractError("chimeric profile needs one source group per modality");
  for (const auto& s : sources)
    if (s.cells.empty()) throw ContractError("source group '" + s.name + "' is empty");

  // Modalities with identical source groups share one drawn cell.
  std::vector<std::size_t> group_of(n_mod);
  std::vector<std::size_t> leaders;
  for (std::size_t m : model.sequence()) {
    const auto it = std::find_if(leaders.begin(), leaders.end(), [&](std::size_t l) {
      return sources[l].cells == sources[m].cells && sources[l].name == sources[m].name;
    });
    group_of[m] = it == leaders.end() ? leaders.size() : static_cast<std::size_t>(it - leaders.begin());
    if (it == leaders.end()) leaders.push_back(m);
  }
  std::vector<std::vector<std::size_t>> chosen(leaders.size(), std::vector<std::size_t>(n_cells));
  for (std::size_t i = 0; i < n_cells; ++i)
    for (std::size_t l = 0; l < leaders.size(); ++l) {
      const auto& cells = sources[leaders[l]].cells;
      chosen[l][i] = cells[std::uniform_int_distribution<std::size_t>(0, cells.size() - 1)(rng)];
    }
  std::vector<ad::Tensor> eps;
  if (mode == ForwardMode::stochastic)
    for (std::size_t m = 0; m < n_mod; ++m)
      eps.push_back(dist::standard_normal(ad::Shape{n_cells, model.modality(m).dim_z}, rng));

  ad::Graph g;
  ParamBinding params(g, model.parameters());
  std::vector<ad::Var> z;
  for (std::size_t m = 0; m < n_mod; ++m) {
    const PosteriorStats post = encode(model, params, m, data.modalities[m].matrix.dense_rows(chosen[group_of[m]]));
    z.push_back(mode == ForwardMode::mean ? post.mean
                                          : dist::normal_rsample({post.mean, post.variance}, g.constant(eps[m])));
  }
  const auto& batch_cells = chosen[group_of[model.sequence().front()]];
  const Propagation prop = propagate(model, params, z, g.constant(data.batch->one_hot(batch_cells)));
  std::vector<ad::Tensor> out;
  for (std::size_t m = 0; m < n_mod; ++m) out.push_back(dist::dist_mean(prop.rho[m]).value());
  return out;
}

std::vector<InterpolationStep> interpolate(const Model& model, const AnalysisData& data, const CellGroup& I,
                                           const CellGroup& J, std::span<const std::size_t> selected,
                                           std::size_t steps) {
  check_data(model, data);
  if (steps < 2) throw ContractError("interpolation needs at least 2 steps");
  if (I.cells.empty() || J.cells.empty()) throw ContractError("cell groups must be nonempty");
  const std::size_t n_mod = model.modality_count();
  std::vector<bool> vary(n_mod, selected.empty());
  for (std::size_t m : selected) {
    if (m >= n_mod) throw LookupError("modality index out of range");
    vary[m] = true;
  }

  ad::Graph g;
  ParamBinding params(g, model.parameters());
  auto centroid = [&](const CellGroup& group) {
    const auto means = posterior_means(model, params, data, group.cells);
    std::vector<ad::Tensor> out;
    for (const auto& v : means) {
      ad::Tensor c(ad::Shape{1, v.cols()});
      for (std::size_t r = 0; r < v.rows(); ++r)
        for (std::size_t k = 0; k < v.cols(); ++k) c[k] += v.value()(r, k);
      for (double& x : c.values()) x /= static_cast<double>(v.rows());
      out.push_back(std::move(c));
    }
    return out;
  };
  const auto zi = centroid(I);
  const auto zj = centroid(J);

  std::vector<std::size_t> both = I.cells;
  both.insert(both.end(), J.cells.begin(), J.cells.end());
  const ad::Tensor one_hot = data.batch->one_hot(both);
  ad::Tensor b(ad::Shape{1, one_hot.cols()});
  for (std::size_t r = 0; r < one_hot.rows(); ++r)
    for (std::size_t k = 0; k < one_hot.cols(); ++k) b[k] += one_hot(r, k);
  for (double& x : b.values()) x /= static_cast<double>(both.size());
  const ad::Var bv = g.constant(b);

  std::vector<InterpolationStep> out;
  for (std::size_t s = 0; s < steps; ++s) {
    const double t = s + 1 == steps ? 1.0 : static_cast<double>(s) / static_cast<double>(steps - 1);
    std::vector<ad::Var> z;
    for (std::size_t m = 0; m < n_mod; ++m) {
      ad::Tensor v = zi[m];
      if (vary[m])
        for (std::size_t k = 0; k < v.size(); ++k) v[k] = (1.0 - t) * zi[m][k] + t * zj[m][k];
      z.push_back(g.constant(std::move(v)));
    }
    const Propagation prop = propagate(model, params, z, bv);
    InterpolationStep step;
    step.t = t;
    for (std::size_t m = 0; m < n_mod; ++m) {
      step.means.push_back(dist::dist_mean(prop.rho[m]).value());
      step.z_hat.push_back(prop.z_hat[m].value());
    }
    out.push_back(std::move(step));
  }
  return out;
}

std::vector<double> enrichment_score(const ad::Tensor& latents, std::span<const std::string> labels, std::size_t k) {
  const std::size_t n = latents.rows();
  if (labels.size() != n) throw ShapeError("one label per latent row required");
  if (k == 0 || k >= n) throw ConfigError("enrichment k must satisfy 0 < k < N (k=" + std::to_string(k) +
                                          ", N=" + std::to_string(n) + ")");
  const std::size_t d = latents.cols();
  std::vector<std::size_t> label_count(n);
  for (std::size_t i = 0; i < n; ++i)
    label_count[i] = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), labels[i]));

  std::vector<double> scores(n);
  std::vector<std::pair<double, std::size_t>> dist(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t w = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = latents(i, c) - latents(j, c);
        s += diff * diff;
      }
      dist[w++] = {s, j};
    }
    std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k - 1), dist.end());
    std::size_t same = 0;
    for (std::size_t r = 0; r < k; ++r) same += labels[dist[r].second] == labels[i];
    const double share = static_cast<double>(same) / static_cast<double>(k);
    scores[i] = share / (static_cast<double>(label_count[i]) / static_cast<double>(n));
  }
  return scores;
}

std::vector<LatentSummary> latents(const Model& model, const AnalysisData& data, std::size_t threads) {
  check_data(model, data);
  const std::size_t n_mod = model.modality_count();
  const std::size_t n = data.modalities.front().n_cells();
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  const auto ranges = chunk_ranges(n, kChunkPairs);
  std::vector<LatentSummary> out(n_mod);
  for (std::size_t m = 0; m < n_mod; ++m) {
    out[m].mean = ad::Tensor(ad::Shape{n, model.modality(m).dim_z});
    out[m].q = ad::Tensor(ad::Shape{n, model.modality(m).n_components});
  }
  parallel_for(ranges.size(), threads, [&](std::size_t c) {
    const auto [b, e] = ranges[c];
    ad::Graph g;
    ParamBinding params(g, model.parameters());
    const auto cells = sub(all, b, e);
    for (std::size_t m = 0; m < n_mod; ++m) {
      const ad::Var mu = encode(model, params, m, data.modalities[m].matrix.dense_rows(cells)).mean;
      const ad::Var zs[] = {mu};
      const ad::Tensor q = cluster_posterior(prior(model, params, m), zs).q.value();
      const ad::Tensor& mv = mu.value();
      std::copy(mv.values().begin(), mv.values().end(),
                out[m].mean.values().begin() + static_cast<std::ptrdiff_t>(b * mv.cols()));
      std::copy(q.values().begin(), q.values().end(),
                out[m].q.values().begin() + static_cast<std::ptrdiff_t>(b * q.cols()));
    }
  });
  for (auto& s : out) {
    const std::size_t k = s.q.cols();
    for (std::size_t i = 0; i < n; ++i) {
      const auto row = s.q.values().subspan(i * k, k);
      const auto it = std::max_element(row.begin(), row.end());
      s.argmax.push_back(static_cast<std::size_t>(it - row.begin()));
      s.q_max.push_back(*it);
    }
  }
  return out;
}

}  // namespace dagvae

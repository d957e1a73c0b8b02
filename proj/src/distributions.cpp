#include "dagvae/distributions.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <boost/math/special_functions/gamma.hpp>

#include "dagvae/error.hpp"

namespace dagvae::dist {

namespace {

void require_positive(const ad::Tensor& t, const char* what) {
  for (double v : t.values())
    if (!(v > 0.0)) throw DomainError(std::string(what) + " must be positive");
}

ad::Var constant_like(ad::Var ref, ad::Tensor t) { return ref.graph->constant(std::move(t)); }

}  // namespace

std::string to_string(Likelihood kind) { return kind == Likelihood::bernoulli ? "bernoulli" : "zinb"; }

Likelihood likelihood_from_string(const std::string& name) {
  if (name == "bernoulli") return Likelihood::bernoulli;
  if (name == "zinb") return Likelihood::zinb;
  throw ConfigError("unknown likelihood '" + name + "' (expected bernoulli or zinb)");
}

std::size_t parameter_count(Likelihood kind) { return kind == Likelihood::bernoulli ? 1 : 3; }

ad::Var normal_log_prob(const IndependentNormal& d, ad::Var x) {
  require_positive(d.variance.value(), "normal variance");
  if (x.shape() != d.mean.shape()) throw ShapeError("normal_log_prob: sample and mean shapes differ");
  const double log_2pi = std::log(2.0 * std::numbers::pi);
  // -0.5 * log(2 pi var) - (x - mu)^2 / (2 var)
  const ad::Var log_norm = ad::scalar_affine(ad::log(d.variance), -0.5, -0.5 * log_2pi);
  const ad::Var quad = ad::div(ad::square(ad::sub(x, d.mean)), ad::scalar_affine(d.variance, 2.0, 0.0));
  return ad::reduce_sum_lastdim(ad::sub(log_norm, quad));
}

ad::Var normal_rsample(const IndependentNormal& d, ad::Var noise) {
  if (noise.shape() != d.mean.shape()) throw ShapeError("normal_rsample: noise shape differs from mean");
  return ad::add(d.mean, ad::mul(ad::sqrt(d.variance), noise));
}

ad::Var normal_kl(const IndependentNormal& q, const IndependentNormal& p) {
  require_positive(q.variance.value(), "normal variance");
  require_positive(p.variance.value(), "normal variance");
  // 0.5 * log(var_p / var_q) + (var_q + (mu_q - mu_p)^2) / (2 var_p) - 0.5
  const ad::Var log_ratio = ad::scalar_affine(ad::sub(ad::log(p.variance), ad::log(q.variance)), 0.5, 0.0);
  const ad::Var num = ad::add(q.variance, ad::square(ad::sub(q.mean, p.mean)));
  const ad::Var frac = ad::div(num, ad::scalar_affine(p.variance, 2.0, 0.0));
  return ad::reduce_sum_lastdim(ad::scalar_affine(ad::add(log_ratio, frac), 1.0, -0.5));
}

ad::Tensor standard_normal(const ad::Shape& shape, Rng& rng) {
  ad::Tensor t(shape);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& v : t.values()) v = normal(rng);
  return t;
}

ad::Var mixture_log_joint(const GaussianMixturePrior& p, ad::Var z) {
  if (p.mixture_logits.value().size() != p.components())
    throw ShapeError("mixture logits must have one entry per component");
  const ad::Var log_pi = ad::log_softmax_lastdim(p.mixture_logits);
  return ad::add(ad::pairwise_normal_log_density(z, p.means, p.variances), log_pi);
}

ad::Var mixture_log_prob(const GaussianMixturePrior& p, ad::Var z) {
  return ad::logsumexp_lastdim(mixture_log_joint(p, z));
}

ad::Var mixture_responsibilities(const GaussianMixturePrior& p, ad::Var z) {
  return ad::softmax_lastdim(mixture_log_joint(p, z));
}

ad::Var bernoulli_log_prob_elements(const BernoulliDist& d, const ad::Tensor& x) {
  const ad::Tensor& logits = d.logits.value();
  if (x.size() != logits.size() || x.cols() != logits.cols())
    throw ShapeError("bernoulli_log_prob: data shape " + ad::shape_to_string(x.shape()) + " vs logits " +
                     ad::shape_to_string(logits.shape()));
  ad::Tensor sign(logits.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] != 0.0 && x[i] != 1.0) throw DomainError("bernoulli observation must be 0 or 1");
    sign[i] = 1.0 - 2.0 * x[i];
  }
  // log p(x) = -softplus((1 - 2x) * logits)
  return ad::neg(ad::softplus(ad::mul(d.logits, constant_like(d.logits, std::move(sign)))));
}

ad::Var zinb_log_prob_elements(const ZINBDist& d, const ad::Tensor& x) {
  const ad::Tensor& mean = d.mean.value();
  if (x.size() != mean.size() || x.cols() != mean.cols() || d.dispersion.shape() != d.mean.shape() ||
      d.zero_inflation_logits.shape() != d.mean.shape())
    throw ShapeError("zinb_log_prob: data/parameter shapes differ");
  require_positive(mean, "zinb mean");
  require_positive(d.dispersion.value(), "zinb dispersion");
  ad::Tensor counts(mean.shape());
  ad::Tensor lgamma_x1(mean.shape());
  ad::Tensor zero_mask(mean.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i];
    if (v < 0.0 || v != std::floor(v)) throw DomainError("zinb observation must be a nonnegative integer");
    counts[i] = v;
    lgamma_x1[i] = boost::math::lgamma(v + 1.0);
    zero_mask[i] = v == 0.0 ? 1.0 : 0.0;
  }
  ad::Graph& g = *d.mean.graph;
  ad::Tensor nonzero_mask = zero_mask;
  for (double& v : nonzero_mask.values()) v = 1.0 - v;
  const ad::Var x_c = g.constant(counts);
  const ad::Var r = d.dispersion;
  const ad::Var m = d.mean;
  const ad::Var log_r_plus_m = ad::log(ad::add(r, m));
  // NB(x; m, r) = lgamma(x + r) - lgamma(r) - lgamma(x + 1) + r (log r - log(r + m)) + x (log m - log(r + m))
  const ad::Var r_term = ad::mul(r, ad::sub(ad::log(r), log_r_plus_m));
  const ad::Var x_term = ad::mul(x_c, ad::sub(ad::log(m), log_r_plus_m));
  const ad::Var gamma_term =
      ad::sub(ad::sub(ad::lgamma(ad::add(x_c, r)), ad::lgamma(r)), g.constant(std::move(lgamma_x1)));
  const ad::Var nb = ad::add(ad::add(gamma_term, r_term), x_term);
  const ad::Var log_pi = ad::neg(ad::softplus(ad::neg(d.zero_inflation_logits)));
  const ad::Var log_one_minus_pi = ad::neg(ad::softplus(d.zero_inflation_logits));
  const ad::Var nonzero = ad::add(log_one_minus_pi, nb);
  // At x = 0, nb reduces to r_term; mix with the structural-zero mass.
  const ad::Var zero = ad::logaddexp(log_pi, ad::add(log_one_minus_pi, r_term));
  return ad::add(ad::mul(zero, g.constant(std::move(zero_mask))),
                 ad::mul(nonzero, g.constant(std::move(nonzero_mask))));
}

ad::Var log_prob_elements(const DecodedDist& d, const ad::Tensor& x) {
  return std::visit(
      [&x](const auto& dist) -> ad::Var {
        using T = std::decay_t<decltype(dist)>;
        if constexpr (std::is_same_v<T, BernoulliDist>) return bernoulli_log_prob_elements(dist, x);
        else return zinb_log_prob_elements(dist, x);
      },
      d);
}

ad::Var log_prob(const DecodedDist& d, const ad::Tensor& x) {
  return ad::reduce_sum_lastdim(log_prob_elements(d, x));
}

ad::Var dist_mean(const DecodedDist& d) {
  return std::visit(
      [](const auto& dist) -> ad::Var {
        using T = std::decay_t<decltype(dist)>;
        if constexpr (std::is_same_v<T, BernoulliDist>) return ad::sigmoid(dist.logits);
        else return ad::mul(ad::sigmoid(ad::neg(dist.zero_inflation_logits)), dist.mean);
      },
      d);
}

ad::Tensor sample(const DecodedDist& d, Rng& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  if (const auto* b = std::get_if<BernoulliDist>(&d)) {
    const ad::Tensor& logits = b->logits.value();
    ad::Tensor out(logits.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = unif(rng) < ad::sigmoid_value(logits[i]) ? 1.0 : 0.0;
    return out;
  }
  const auto& z = std::get<ZINBDist>(d);
  const ad::Tensor& mean = z.mean.value();
  const ad::Tensor& disp = z.dispersion.value();
  const ad::Tensor& zi = z.zero_inflation_logits.value();
  ad::Tensor out(mean.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (unif(rng) < ad::sigmoid_value(zi[i])) {
      out[i] = 0.0;
      continue;
    }
    // Gamma-Poisson mixture: lambda ~ Gamma(r, m / r), x ~ Poisson(lambda).
    std::gamma_distribution<double> gamma(disp[i], mean[i] / disp[i]);
    const double lambda = gamma(rng);
    std::poisson_distribution<long long> poisson(lambda);
    out[i] = lambda > 0.0 ? static_cast<double>(poisson(rng)) : 0.0;
  }
  return out;
}

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw DomainError("categorical needs at least one category");
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double s = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) s += (p[k] = std::exp(logits[k] - m));
  for (double& v : p) v /= s;
  return p;
}

std::size_t categorical_sample(std::span<const double> logits, Rng& rng) {
  const std::vector<double> p = softmax(logits);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double u = unif(rng);
  double cdf = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    cdf += p[k];
    if (u < cdf) return k;
  }
  return p.size() - 1;
}

double categorical_log_prob(std::span<const double> logits, std::size_t k) {
  if (logits.empty()) throw DomainError("categorical needs at least one category");
  if (k >= logits.size()) throw DomainError("category " + std::to_string(k) + " out of range");
  const double m = *std::max_element(logits.begin(), logits.end());
  double s = 0.0;
  for (double l : logits) s += std::exp(l - m);
  return logits[k] - m - std::log(s);
}

double nb_log_pmf(double x, double mean, double dispersion) {
  if (x < 0.0 || x != std::floor(x)) throw DomainError("nb observation must be a nonnegative integer");
  if (!(mean > 0.0) || !(dispersion > 0.0)) throw DomainError("nb mean and dispersion must be positive");
  const double log_rm = std::log(dispersion + mean);
  return boost::math::lgamma(x + dispersion) - boost::math::lgamma(dispersion) - boost::math::lgamma(x + 1.0) +
         dispersion * (std::log(dispersion) - log_rm) + x * (std::log(mean) - log_rm);
}

double zinb_log_pmf(double x, double mean, double dispersion, double zero_inflation_logit) {
  const double log_pi = -ad::softplus_value(-zero_inflation_logit);
  const double log_not_pi = -ad::softplus_value(zero_inflation_logit);
  const double nb = nb_log_pmf(x, mean, dispersion);
  if (x != 0.0) return log_not_pi + nb;
  const double a = log_pi;
  const double b = log_not_pi + nb;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

}  // namespace dagvae::dist

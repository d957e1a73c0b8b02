#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "dagvae/autodiff.hpp"

namespace dagvae::dist {

using Rng = std::mt19937_64;

// Lower bound added to every softplus-produced positive parameter.
inline constexpr double kPositiveFloor = 1e-6;

enum class Likelihood { bernoulli, zinb };

std::string to_string(Likelihood kind);
Likelihood likelihood_from_string(const std::string& name);
// Decoder output columns per feature.
std::size_t parameter_count(Likelihood kind);

// Gaussian with diagonal covariance; one distribution per row.
struct IndependentNormal {
  ad::Var mean;
  ad::Var variance;
};

// Per-row log density, shape [rows, 1].
ad::Var normal_log_prob(const IndependentNormal& d, ad::Var x);
// mean + sqrt(variance) * noise, with `noise` a standard-normal draw.
ad::Var normal_rsample(const IndependentNormal& d, ad::Var noise);
// Closed-form KL(q || p) per row, shape [rows, 1].
ad::Var normal_kl(const IndependentNormal& q, const IndependentNormal& p);

ad::Tensor standard_normal(const ad::Shape& shape, Rng& rng);

struct GaussianMixturePrior {
  ad::Var mixture_logits;  // [K]
  ad::Var means;           // [K, d]
  ad::Var variances;       // [K, d]

  std::size_t components() const { return means.rows(); }
  std::size_t dim() const { return means.cols(); }
};

// log pi_k + log N(z; mu_k, Sigma_k), shape [rows, K].
ad::Var mixture_log_joint(const GaussianMixturePrior& p, ad::Var z);
// log sum_k pi_k N(z; mu_k, Sigma_k), shape [rows, 1].
ad::Var mixture_log_prob(const GaussianMixturePrior& p, ad::Var z);
// p(c = k | z), shape [rows, K].
ad::Var mixture_responsibilities(const GaussianMixturePrior& p, ad::Var z);

struct BernoulliDist {
  ad::Var logits;
};

struct ZINBDist {
  ad::Var mean;
  ad::Var dispersion;
  ad::Var zero_inflation_logits;
};

using DecodedDist = std::variant<BernoulliDist, ZINBDist>;

ad::Var bernoulli_log_prob_elements(const BernoulliDist& d, const ad::Tensor& x);
ad::Var zinb_log_prob_elements(const ZINBDist& d, const ad::Tensor& x);
ad::Var log_prob_elements(const DecodedDist& d, const ad::Tensor& x);
// Row sums of the elementwise log-likelihood, shape [rows, 1].
ad::Var log_prob(const DecodedDist& d, const ad::Tensor& x);
ad::Var dist_mean(const DecodedDist& d);

// Draws x ~ d elementwise using the current parameter values.
ad::Tensor sample(const DecodedDist& d, Rng& rng);

// Categorical over softmax(logits).
std::size_t categorical_sample(std::span<const double> logits, Rng& rng);
double categorical_log_prob(std::span<const double> logits, std::size_t k);
std::vector<double> softmax(std::span<const double> logits);

// Scalar NB log-pmf with mean/dispersion parameterization, p = m / (m + r).
double nb_log_pmf(double x, double mean, double dispersion);
double zinb_log_pmf(double x, double mean, double dispersion, double zero_inflation_logit);

}  // namespace dagvae::dist

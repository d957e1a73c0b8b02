#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "dagvae/data_io.hpp"
#include "dagvae/model.hpp"

namespace dagvae::test {

inline ad::Tensor random_tensor(ad::Shape shape, dist::Rng& rng, double scale = 1.0) {
  ad::Tensor t(std::move(shape));
  std::normal_distribution<double> n(0.0, scale);
  for (double& v : t.values()) v = n(rng);
  return t;
}

inline ad::Tensor random_positive(ad::Shape shape, dist::Rng& rng, double lo = 0.2, double hi = 2.0) {
  ad::Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& v : t.values()) v = u(rng);
  return t;
}

// Small layer widths keep tests fast while exercising every layer type.
inline ModelConfig small_config(std::size_t dim_z = 3) {
  ModelConfig c;
  c.dim_z = dim_z;
  c.encoder_widths = {16, 12, 8, 6};
  c.decoder_widths = {6, 8, 12};
  return c;
}

inline ModelSpec chain_spec(dist::Likelihood a, dist::Likelihood b, std::size_t fa = 5, std::size_t fb = 4,
                            std::size_t dim_z = 3, std::size_t k = 3) {
  ModelSpec s;
  s.modalities = {{"A", a, fa, dim_z, k}, {"B", b, fb, dim_z, k}};
  s.edges = {{"A", "B"}};
  s.config = small_config(dim_z);
  return s;
}

inline ModalityData random_modality(const std::string& name, dist::Likelihood kind, std::size_t n_cells,
                                    std::size_t n_features, dist::Rng& rng) {
  ad::Tensor x(ad::Shape{n_cells, n_features});
  if (kind == dist::Likelihood::bernoulli) {
    std::bernoulli_distribution b(0.4);
    for (double& v : x.values()) v = b(rng) ? 1.0 : 0.0;
  } else {
    std::poisson_distribution<int> p(1.5);
    for (double& v : x.values()) v = p(rng);
  }
  ModalityData d;
  d.name = name;
  d.distribution_kind = kind;
  d.matrix = SparseMatrix::from_dense(x);
  for (std::size_t i = 0; i < n_cells; ++i) d.cell_ids.push_back("cell_" + std::to_string(i + 1));
  for (std::size_t f = 0; f < n_features; ++f) d.feature_names.push_back(name + "_" + std::to_string(f + 1));
  return d;
}

inline std::vector<ModalityData> random_data(const Model& model, std::size_t n_cells, dist::Rng& rng) {
  std::vector<ModalityData> out;
  for (std::size_t m = 0; m < model.modality_count(); ++m)
    out.push_back(random_modality(model.modality(m).name, model.modality(m).likelihood, n_cells,
                                  model.modality(m).n_features, rng));
  return out;
}

inline std::filesystem::path fresh_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("dagvae_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline double max_abs_diff(const ad::Tensor& a, const ad::Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace dagvae::test

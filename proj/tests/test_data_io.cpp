#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "dagvae/data_io.hpp"
#include "dagvae/error.hpp"
#include "support.hpp"

using namespace dagvae;
using ad::Tensor;

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream(path) << text;
}

ModalityData dense_modality(const std::string& name, std::size_t rows, std::size_t cols, std::vector<double> values) {
  ModalityData d;
  d.name = name;
  d.matrix = SparseMatrix::from_dense(Tensor::matrix(rows, cols, std::move(values)));
  for (std::size_t r = 0; r < rows; ++r) d.cell_ids.push_back("c" + std::to_string(r));
  for (std::size_t c = 0; c < cols; ++c) d.feature_names.push_back("f" + std::to_string(c));
  return d;
}

}  // namespace

TEST_CASE("matrix market 2x2") {
  const auto dir = test::fresh_dir("mtx");
  write_text(dir / "m.mtx", "%%MatrixMarket matrix coordinate integer general\n% comment\n2 2 2\n1 1 3\n2 2 1\n");
  const ModalityData d = load_matrix({"RNA", dir / "m.mtx"});
  CHECK(d.matrix.to_dense() == Tensor::matrix(2, 2, {3, 0, 0, 1}));
  CHECK(d.cell_ids.size() == 2);
  CHECK(d.feature_names.size() == 2);
}

TEST_CASE("matrix market errors") {
  const auto dir = test::fresh_dir("mtx_err");
  write_text(dir / "short.mtx", "%%MatrixMarket matrix coordinate integer general\n2 2 3\n1 1 3\n2 2 1\n");
  CHECK_THROWS_AS(load_matrix({"RNA", dir / "short.mtx"}), ParseError);
  write_text(dir / "long.mtx", "%%MatrixMarket matrix coordinate integer general\n2 2 1\n1 1 3\n2 2 1\n");
  CHECK_THROWS_AS(load_matrix({"RNA", dir / "long.mtx"}), ParseError);
  write_text(dir / "range.mtx", "%%MatrixMarket matrix coordinate integer general\n2 2 1\n3 1 3\n");
  CHECK_THROWS_AS(load_matrix({"RNA", dir / "range.mtx"}), ParseError);
  try {
    load_matrix({"RNA", dir / "range.mtx"});
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find(":3:") != std::string::npos);
  }

  write_text(dir / "ok.mtx", "%%MatrixMarket matrix coordinate integer general\n2 2 1\n1 1 3\n");
  write_text(dir / "cells.txt", "a\nb\nc\n");
  MatrixSource src{"RNA", dir / "ok.mtx"};
  src.cells_path = dir / "cells.txt";
  CHECK_THROWS_AS(load_matrix(src), DimensionMismatchError);
}

TEST_CASE("dense csv") {
  const auto dir = test::fresh_dir("csv");
  write_text(dir / "m.csv", "cell,g1,g2,g3\nAAC,0,4,1\n");
  MatrixSource src{"RNA", dir / "m.csv", MatrixFormat::dense_csv};
  const ModalityData d = load_matrix(src);
  CHECK(d.n_cells() == 1);
  CHECK(d.n_features() == 3);
  CHECK(d.matrix.to_dense() == Tensor::matrix(1, 3, {0, 4, 1}));
  CHECK(d.cell_ids == std::vector<std::string>{"AAC"});
  CHECK(d.feature_names == std::vector<std::string>{"g1", "g2", "g3"});

  write_text(dir / "bad.csv", "cell,g1,g2\nAAC,0\n");
  CHECK_THROWS_AS(load_matrix({"RNA", dir / "bad.csv", MatrixFormat::dense_csv}), ParseError);
}

TEST_CASE("matrix market round trip") {
  const auto dir = test::fresh_dir("mtx_rt");
  dist::Rng rng(4);
  const ModalityData d = test::random_modality("RNA", dist::Likelihood::zinb, 7, 5, rng);
  write_matrix_market(dir / "x.mtx", d.matrix);
  CHECK(load_matrix({"RNA", dir / "x.mtx"}).matrix == d.matrix);
}

TEST_CASE("binarize") {
  const ModalityData d = dense_modality("ATAC", 2, 2, {3, 0, 0, 1});
  const ModalityData b = binarize(d);
  CHECK(b.matrix.to_dense() == Tensor::matrix(2, 2, {1, 0, 0, 1}));
  CHECK(b.matrix.col_idx == d.matrix.col_idx);
  CHECK(b.matrix.row_ptr == d.matrix.row_ptr);
  CHECK(b.preprocessing_log.back().op == "binarize");
  CHECK(binarize(b).matrix == b.matrix);

  const ModalityData z = binarize(dense_modality("ATAC", 2, 2, {0, 0, 2, 5}));
  CHECK(z.matrix.at(0, 0) == 0.0);
  CHECK(z.matrix.at(0, 1) == 0.0);
}

TEST_CASE("select top variable") {
  // Depths are 10, 10, 10, 10 so normalization is the identity.
  const ModalityData d = dense_modality("RNA", 4, 5,
                                        {2, 0, 5, 3, 0,  //
                                         2, 4, 1, 3, 0,  //
                                         2, 0, 6, 2, 0,  //
                                         2, 3, 1, 2, 2});
  // Hand computed from the definition.
  std::vector<double> oracle(5);
  for (std::size_t c = 0; c < 5; ++c) {
    double depth_scale[4];
    for (std::size_t r = 0; r < 4; ++r) {
      double depth = 0.0;
      for (std::size_t k = 0; k < 5; ++k) depth += d.matrix.at(r, k);
      depth_scale[r] = 10.0 / depth;
    }
    double mean = 0.0, ss = 0.0;
    for (std::size_t r = 0; r < 4; ++r) mean += std::log1p(d.matrix.at(r, c) * depth_scale[r]) / 4.0;
    for (std::size_t r = 0; r < 4; ++r) ss += std::pow(std::log1p(d.matrix.at(r, c) * depth_scale[r]) - mean, 2) / 4.0;
    oracle[c] = ss;
  }
  const auto variance = normalized_log_variance(d.matrix);
  for (std::size_t c = 0; c < 5; ++c) CHECK(variance[c] == doctest::Approx(oracle[c]).epsilon(1e-12));

  std::vector<std::size_t> rank(5);
  std::iota(rank.begin(), rank.end(), 0);
  std::stable_sort(rank.begin(), rank.end(), [&](auto a, auto b) { return oracle[a] > oracle[b]; });
  std::vector<std::string> expected{d.feature_names[std::min(rank[0], rank[1])],
                                    d.feature_names[std::max(rank[0], rank[1])]};
  const ModalityData top = select_top_variable(d, 2);
  CHECK(top.feature_names == expected);
  CHECK(top.n_features() == 2);
  CHECK(variance[0] == 0.0);

  const ModalityData all = select_top_variable(d, 5);
  CHECK(all.feature_names == d.feature_names);
  CHECK(all.matrix == d.matrix);
  const ModalityData four = select_top_variable(d, 4);
  CHECK(std::find(four.feature_names.begin(), four.feature_names.end(), "f0") == four.feature_names.end());
  CHECK_THROWS_AS(select_top_variable(d, 6), ConfigError);
}

TEST_CASE("selected features are a subset of the input") {
  dist::Rng rng(12);
  const ModalityData d = test::random_modality("RNA", dist::Likelihood::zinb, 40, 30, rng);
  const ModalityData top = select_top_variable(d, 11);
  CHECK(top.n_features() == 11);
  const std::set<std::string> all(d.feature_names.begin(), d.feature_names.end());
  for (const auto& f : top.feature_names) CHECK(all.contains(f));
  CHECK(std::is_sorted(top.feature_names.begin(), top.feature_names.end(), [&](const auto& a, const auto& b) {
    return std::find(d.feature_names.begin(), d.feature_names.end(), a) <
           std::find(d.feature_names.begin(), d.feature_names.end(), b);
  }));
}

TEST_CASE("preprocessing replays exactly") {
  dist::Rng rng(19);
  const ModalityData raw = test::random_modality("ATAC", dist::Likelihood::zinb, 30, 20, rng);
  const ModalityData processed = select_top_variable(binarize(raw), 8);
  CHECK(processed.preprocessing_log.size() == 2);
  const ModalityData replayed = replay_preprocessing(raw, processed.preprocessing_log);
  CHECK(replayed.matrix == processed.matrix);
  CHECK(replayed.feature_names == processed.feature_names);
}

TEST_CASE("support checks") {
  ModalityData d = dense_modality("ATAC", 1, 2, {2, 1});
  d.distribution_kind = dist::Likelihood::bernoulli;
  CHECK_THROWS_AS(check_support(d), DomainError);
  CHECK_NOTHROW(check_support(binarize(d)));
  ModalityData r = dense_modality("RNA", 1, 2, {2.5, 1});
  CHECK_THROWS_AS(check_support(r), DomainError);
  ModalityData other = dense_modality("X", 1, 2, {1, 1});
  other.cell_ids = {"zzz"};
  const std::vector<ModalityData> both{d, other};
  CHECK_THROWS_AS(check_paired(both), DimensionMismatchError);
}

TEST_CASE("batch encoding") {
  const std::vector<std::string> same{"x", "x", "x"};
  const BatchCovariate one = encode_batch(same);
  CHECK(one.width() == 1);
  const std::vector<std::size_t> all{0, 1, 2};
  CHECK(one.one_hot(all) == Tensor::matrix(3, 1, {1, 1, 1}));

  const std::vector<std::string> aba{"a", "b", "a"};
  const BatchCovariate two = encode_batch(aba);
  CHECK(two.categories == std::vector<std::string>{"a", "b"});
  CHECK(two.one_hot(all) == Tensor::matrix(3, 2, {1, 0, 0, 1, 1, 0}));

  const BatchCovariate none = no_batch(3);
  CHECK(none.width() == 0);
  CHECK(none.one_hot(all).size() == 0);
}

TEST_CASE("split") {
  const Split s = split(10, 0.9, 1);
  CHECK(s.train.size() == 9);
  CHECK(s.validation.size() == 1);
  const Split again = split(10, 0.9, 1);
  CHECK(again.train == s.train);
  CHECK(again.validation == s.validation);

  std::set<std::vector<std::size_t>> seen;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Split p = split(100, 0.8, seed);
    std::vector<std::size_t> merged = p.train;
    merged.insert(merged.end(), p.validation.begin(), p.validation.end());
    std::sort(merged.begin(), merged.end());
    std::vector<std::size_t> expected(100);
    std::iota(expected.begin(), expected.end(), 0);
    CHECK(merged == expected);
    seen.insert(p.validation);
  }
  CHECK(seen.size() == 20);
}

TEST_CASE("label table") {
  const auto dir = test::fresh_dir("labels");
  write_text(dir / "labels.csv", "cell,type,batch\nc1,T,b1\nc2,B,b2\n");
  const LabelTable t = read_label_table(dir / "labels.csv");
  CHECK(t.column("type") == std::vector<std::string>{"T", "B"});
  const std::vector<std::string> order{"c2", "c1"};
  CHECK(t.aligned("batch", order) == std::vector<std::string>{"b2", "b1"});
  const std::vector<std::string> missing{"c9"};
  CHECK_THROWS_AS(t.aligned("batch", missing), LookupError);
  CHECK_THROWS_AS(t.column("nope"), LookupError);
}

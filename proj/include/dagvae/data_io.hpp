#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dagvae/autodiff.hpp"
#include "dagvae/distributions.hpp"

namespace dagvae {

// Compressed sparse rows; rows are cells, columns are features.
struct SparseMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::size_t> row_ptr{0};
  std::vector<std::size_t> col_idx;
  std::vector<double> values;

  struct Triplet {
    std::size_t row;
    std::size_t col;
    double value;
  };
  // Duplicate coordinates are summed; explicit zeros are dropped.
  static SparseMatrix from_triplets(std::size_t rows, std::size_t cols, std::vector<Triplet> triplets);
  static SparseMatrix from_dense(const ad::Tensor& dense);

  std::size_t nnz() const { return values.size(); }
  double at(std::size_t r, std::size_t c) const;
  ad::Tensor to_dense() const;
  // Dense [rows.size(), cols] block with the selected rows in order.
  ad::Tensor dense_rows(std::span<const std::size_t> row_ids) const;
  SparseMatrix select_columns(std::span<const std::size_t> keep) const;

  bool operator==(const SparseMatrix&) const = default;
};

struct PreprocessStep {
  std::string op;  // "binarize" | "select_top_variable"
  std::size_t n = 0;

  bool operator==(const PreprocessStep&) const = default;
};

struct ModalityData {
  std::string name;
  SparseMatrix matrix;
  std::vector<std::string> feature_names;
  std::vector<std::string> cell_ids;
  dist::Likelihood distribution_kind = dist::Likelihood::zinb;
  std::vector<PreprocessStep> preprocessing_log;

  std::size_t n_cells() const { return matrix.rows; }
  std::size_t n_features() const { return matrix.cols; }
};

enum class MatrixFormat { matrix_market, dense_csv };

MatrixFormat matrix_format_from_string(const std::string& name);

struct MatrixSource {
  std::string name;
  std::filesystem::path path;
  MatrixFormat format = MatrixFormat::matrix_market;
  dist::Likelihood likelihood = dist::Likelihood::zinb;
  // One id per line. Required by neither format; default names are generated.
  std::optional<std::filesystem::path> cells_path;
  std::optional<std::filesystem::path> features_path;
};

// Throws ParseError (with line number) or DimensionMismatchError.
ModalityData load_matrix(const MatrixSource& source);

// Raw readers, exposed for header-only validation.
struct MatrixHeader {
  std::size_t rows = 0;
  std::size_t cols = 0;
};
MatrixHeader read_matrix_header(const std::filesystem::path& path, MatrixFormat format);
std::vector<std::string> read_lines(const std::filesystem::path& path);

void write_matrix_market(const std::filesystem::path& path, const SparseMatrix& m);
void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines);

// x > 0 -> 1. Sparsity pattern preserved.
ModalityData binarize(const ModalityData& d);

// Keeps the n features with the largest variance of log1p depth-normalized
// values. Ties keep the earlier feature; kept features stay in original order.
ModalityData select_top_variable(const ModalityData& d, std::size_t n);

// Per-feature variance used by select_top_variable.
std::vector<double> normalized_log_variance(const SparseMatrix& m);

ModalityData replay_preprocessing(const ModalityData& raw, const std::vector<PreprocessStep>& log);

// Throws DomainError when values violate the modality's likelihood support.
void check_support(const ModalityData& d);

// Throws DimensionMismatchError when cell ids differ across modalities.
void check_paired(std::span<const ModalityData> modalities);

struct BatchCovariate {
  std::vector<std::string> categories;
  std::vector<std::size_t> category_of;  // per cell

  std::size_t n_cells() const { return category_of.size(); }
  std::size_t width() const { return categories.size(); }
  // Dense one-hot block [rows.size(), width()].
  ad::Tensor one_hot(std::span<const std::size_t> rows) const;
};

// Categories in first-appearance order.
BatchCovariate encode_batch(std::span<const std::string> labels);
// Zero-width covariate for n cells.
BatchCovariate no_batch(std::size_t n_cells);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

// Deterministic shuffle by seed; both parts sorted ascending.
Split split(std::size_t n_cells, double fraction, std::uint64_t seed);

// Two-column label table: header row, then cell id and label per line.
struct LabelTable {
  std::vector<std::string> columns;
  std::vector<std::string> cell_ids;
  std::vector<std::vector<std::string>> rows;  // values excluding the id column

  std::vector<std::string> column(const std::string& name) const;
  // Labels aligned to `cells`; throws LookupError for a missing cell.
  std::vector<std::string> aligned(const std::string& column, std::span<const std::string> cells) const;
};

LabelTable read_label_table(const std::filesystem::path& path);

}  // namespace dagvae

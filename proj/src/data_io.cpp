#include "dagvae/data_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "dagvae/error.hpp"

namespace dagvae {

namespace fs = std::filesystem;

namespace {

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::ifstream open_input(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  return in;
}

double parse_number(const std::string& token, const fs::path& path, std::size_t line) {
  double v = 0.0;
  const auto* first = token.data();
  const auto* last = token.data() + token.size();
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || !std::isfinite(v))
    throw ParseError(path.string() + ":" + std::to_string(line) + ": bad number '" + token + "'");
  return v;
}

std::size_t parse_index(const std::string& token, const fs::path& path, std::size_t line) {
  std::size_t v = 0;
  const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
  if (ec != std::errc() || ptr != token.data() + token.size())
    throw ParseError(path.string() + ":" + std::to_string(line) + ": bad integer '" + token + "'");
  return v;
}

struct MarketBody {
  MatrixHeader header;
  std::size_t nnz = 0;
};

// Reads the banner and size line; leaves `in` positioned at the first entry.
MarketBody read_market_preamble(std::istream& in, const fs::path& path, std::size_t& line_no) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + ":1: empty file");
  line_no = 1;
  std::istringstream banner(line);
  std::string tag, object, layout, field, symmetry;
  banner >> tag >> object >> layout >> field >> symmetry;
  std::transform(object.begin(), object.end(), object.begin(), ::tolower);
  std::transform(layout.begin(), layout.end(), layout.begin(), ::tolower);
  std::transform(field.begin(), field.end(), field.begin(), ::tolower);
  std::transform(symmetry.begin(), symmetry.end(), symmetry.begin(), ::tolower);
  if (tag != "%%MatrixMarket" || object != "matrix" || layout != "coordinate")
    throw ParseError(path.string() + ":1: expected '%%MatrixMarket matrix coordinate' banner");
  if (field != "integer" && field != "real")
    throw ParseError(path.string() + ":1: unsupported field '" + field + "'");
  if (symmetry != "general") throw ParseError(path.string() + ":1: only general matrices are supported");
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '%') continue;
    std::istringstream size_line(t);
    std::string r, c, n, extra;
    if (!(size_line >> r >> c >> n) || (size_line >> extra))
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": malformed size line");
    MarketBody body;
    body.header.rows = parse_index(r, path, line_no);
    body.header.cols = parse_index(c, path, line_no);
    body.nnz = parse_index(n, path, line_no);
    return body;
  }
  throw ParseError(path.string() + ":" + std::to_string(line_no) + ": missing size line");
}

SparseMatrix read_matrix_market(const fs::path& path) {
  auto in = open_input(path);
  std::size_t line_no = 0;
  const MarketBody body = read_market_preamble(in, path, line_no);
  std::vector<SparseMatrix::Triplet> triplets;
  triplets.reserve(body.nnz);
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '%') continue;
    std::istringstream entry(t);
    std::string r, c, v, extra;
    if (!(entry >> r >> c >> v) || (entry >> extra))
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": malformed entry");
    const std::size_t row = parse_index(r, path, line_no);
    const std::size_t col = parse_index(c, path, line_no);
    if (row < 1 || row > body.header.rows || col < 1 || col > body.header.cols)
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": index out of range");
    const double value = parse_number(v, path, line_no);
    if (value != std::floor(value))
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": non-integer count");
    if (triplets.size() == body.nnz)
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": more entries than declared (" +
                       std::to_string(body.nnz) + ")");
    triplets.push_back({row - 1, col - 1, value});
  }
  if (triplets.size() != body.nnz)
    throw ParseError(path.string() + ":" + std::to_string(line_no) + ": header declares " +
                     std::to_string(body.nnz) + " entries, body has " + std::to_string(triplets.size()));
  return SparseMatrix::from_triplets(body.header.rows, body.header.cols, std::move(triplets));
}

struct CsvMatrix {
  SparseMatrix matrix;
  std::vector<std::string> features;
  std::vector<std::string> cells;
};

CsvMatrix read_dense_csv(const fs::path& path) {
  auto in = open_input(path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + ":1: empty file");
  CsvMatrix out;
  auto header = split_csv(trim(line));
  if (header.size() < 2) throw ParseError(path.string() + ":1: header needs an id column and features");
  out.features.assign(header.begin() + 1, header.end());
  std::vector<SparseMatrix::Triplet> triplets;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto cells = split_csv(t);
    if (cells.size() != header.size())
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                       std::to_string(header.size()) + " fields, got " + std::to_string(cells.size()));
    const std::size_t row = out.cells.size();
    out.cells.push_back(cells[0]);
    for (std::size_t c = 1; c < cells.size(); ++c) {
      const double v = parse_number(cells[c], path, line_no);
      if (v != std::floor(v))
        throw ParseError(path.string() + ":" + std::to_string(line_no) + ": non-integer count");
      if (v != 0.0) triplets.push_back({row, c - 1, v});
    }
  }
  out.matrix = SparseMatrix::from_triplets(out.cells.size(), out.features.size(), std::move(triplets));
  return out;
}

std::vector<std::string> default_names(const std::string& prefix, std::size_t n) {
  std::vector<std::string> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = prefix + std::to_string(i + 1);
  return out;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

SparseMatrix SparseMatrix::from_triplets(std::size_t rows, std::size_t cols, std::vector<Triplet> triplets) {
  std::sort(triplets.begin(), triplets.end(),
            [](const Triplet& a, const Triplet& b) { return std::tie(a.row, a.col) < std::tie(b.row, b.col); });
  SparseMatrix m;
  m.rows = rows;
  m.cols = cols;
  m.row_ptr.assign(rows + 1, 0);
  for (std::size_t i = 0; i < triplets.size();) {
    const Triplet& t = triplets[i];
    if (t.row >= rows || t.col >= cols) throw ShapeError("triplet outside matrix bounds");
    double v = 0.0;
    std::size_t j = i;
    while (j < triplets.size() && triplets[j].row == t.row && triplets[j].col == t.col) v += triplets[j++].value;
    if (v != 0.0) {
      m.col_idx.push_back(t.col);
      m.values.push_back(v);
      ++m.row_ptr[t.row + 1];
    }
    i = j;
  }
  std::partial_sum(m.row_ptr.begin(), m.row_ptr.end(), m.row_ptr.begin());
  return m;
}

SparseMatrix SparseMatrix::from_dense(const ad::Tensor& dense) {
  std::vector<Triplet> triplets;
  const std::size_t rows = dense.rows();
  const std::size_t cols = dense.cols();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      if (dense(r, c) != 0.0) triplets.push_back({r, c, dense(r, c)});
  return from_triplets(rows, cols, std::move(triplets));
}

double SparseMatrix::at(std::size_t r, std::size_t c) const {
  const auto begin = col_idx.begin() + static_cast<std::ptrdiff_t>(row_ptr.at(r));
  const auto end = col_idx.begin() + static_cast<std::ptrdiff_t>(row_ptr.at(r + 1));
  const auto it = std::lower_bound(begin, end, c);
  return it != end && *it == c ? values[static_cast<std::size_t>(it - col_idx.begin())] : 0.0;
}

ad::Tensor SparseMatrix::to_dense() const {
  std::vector<std::size_t> all(rows);
  std::iota(all.begin(), all.end(), 0);
  return dense_rows(all);
}

ad::Tensor SparseMatrix::dense_rows(std::span<const std::size_t> row_ids) const {
  ad::Tensor out(ad::Shape{row_ids.size(), cols});
  for (std::size_t k = 0; k < row_ids.size(); ++k) {
    const std::size_t r = row_ids[k];
    if (r >= rows) throw ShapeError("row " + std::to_string(r) + " out of range");
    for (std::size_t p = row_ptr[r]; p < row_ptr[r + 1]; ++p) out[k * cols + col_idx[p]] = values[p];
  }
  return out;
}

SparseMatrix SparseMatrix::select_columns(std::span<const std::size_t> keep) const {
  std::vector<std::size_t> remap(cols, cols);
  for (std::size_t k = 0; k < keep.size(); ++k) remap.at(keep[k]) = k;
  std::vector<Triplet> triplets;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t p = row_ptr[r]; p < row_ptr[r + 1]; ++p)
      if (remap[col_idx[p]] != cols) triplets.push_back({r, remap[col_idx[p]], values[p]});
  return from_triplets(rows, keep.size(), std::move(triplets));
}

MatrixFormat matrix_format_from_string(const std::string& name) {
  if (name == "matrix-market") return MatrixFormat::matrix_market;
  if (name == "dense-csv") return MatrixFormat::dense_csv;
  throw ConfigError("unknown matrix format '" + name + "' (expected matrix-market or dense-csv)");
}

std::vector<std::string> read_lines(const fs::path& path) {
  auto in = open_input(path);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    std::string t = trim(line);
    if (t.empty()) continue;
    // Feature tables often carry extra tab-separated columns; the first is the id.
    if (const auto tab = t.find('\t'); tab != std::string::npos) t = t.substr(0, tab);
    out.push_back(std::move(t));
  }
  return out;
}

MatrixHeader read_matrix_header(const fs::path& path, MatrixFormat format) {
  if (format == MatrixFormat::matrix_market) {
    auto in = open_input(path);
    std::size_t line_no = 0;
    return read_market_preamble(in, path, line_no).header;
  }
  auto in = open_input(path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + ":1: empty file");
  MatrixHeader h;
  h.cols = split_csv(trim(line)).size() - 1;
  while (std::getline(in, line))
    if (!trim(line).empty()) ++h.rows;
  return h;
}

ModalityData load_matrix(const MatrixSource& source) {
  ModalityData d;
  d.name = source.name;
  d.distribution_kind = source.likelihood;
  if (source.format == MatrixFormat::matrix_market) {
    d.matrix = read_matrix_market(source.path);
  } else {
    auto csv = read_dense_csv(source.path);
    d.matrix = std::move(csv.matrix);
    d.feature_names = std::move(csv.features);
    d.cell_ids = std::move(csv.cells);
  }
  if (source.cells_path) {
    auto cells = read_lines(*source.cells_path);
    if (cells.size() != d.matrix.rows)
      throw DimensionMismatchError(source.cells_path->string() + " lists " + std::to_string(cells.size()) +
                                   " cells, matrix has " + std::to_string(d.matrix.rows) + " rows");
    d.cell_ids = std::move(cells);
  }
  if (source.features_path) {
    auto features = read_lines(*source.features_path);
    if (features.size() != d.matrix.cols)
      throw DimensionMismatchError(source.features_path->string() + " lists " + std::to_string(features.size()) +
                                   " features, matrix has " + std::to_string(d.matrix.cols) + " columns");
    d.feature_names = std::move(features);
  }
  if (d.cell_ids.empty()) d.cell_ids = default_names("cell_", d.matrix.rows);
  if (d.feature_names.empty()) d.feature_names = default_names(d.name + "_", d.matrix.cols);
  return d;
}

void write_matrix_market(const fs::path& path, const SparseMatrix& m) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write " + path.string());
  out << "%%MatrixMarket matrix coordinate integer general\n";
  out << m.rows << ' ' << m.cols << ' ' << m.nnz() << '\n';
  for (std::size_t r = 0; r < m.rows; ++r)
    for (std::size_t p = m.row_ptr[r]; p < m.row_ptr[r + 1]; ++p)
      out << r + 1 << ' ' << m.col_idx[p] + 1 << ' ' << static_cast<long long>(m.values[p]) << '\n';
}

void write_lines(const fs::path& path, const std::vector<std::string>& lines) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write " + path.string());
  for (const auto& l : lines) out << l << '\n';
}

ModalityData binarize(const ModalityData& d) {
  ModalityData out = d;
  for (double& v : out.matrix.values) {
    if (v < 0.0) throw DomainError("binarize expects a nonnegative matrix");
    v = v > 0.0 ? 1.0 : 0.0;
  }
  out.preprocessing_log.push_back({"binarize", 0});
  return out;
}

std::vector<double> normalized_log_variance(const SparseMatrix& m) {
  std::vector<double> depth(m.rows, 0.0);
  for (std::size_t r = 0; r < m.rows; ++r)
    for (std::size_t p = m.row_ptr[r]; p < m.row_ptr[r + 1]; ++p) depth[r] += m.values[p];
  const double target = median(depth);
  std::vector<double> sum(m.cols, 0.0);
  std::vector<std::vector<double>> per_feature(m.cols);
  for (std::size_t r = 0; r < m.rows; ++r) {
    if (depth[r] <= 0.0) continue;
    const double scale = target / depth[r];
    for (std::size_t p = m.row_ptr[r]; p < m.row_ptr[r + 1]; ++p) {
      const double v = std::log1p(m.values[p] * scale);
      sum[m.col_idx[p]] += v;
      per_feature[m.col_idx[p]].push_back(v);
    }
  }
  const double n = static_cast<double>(m.rows);
  std::vector<double> variance(m.cols, 0.0);
  if (m.rows == 0) return variance;
  for (std::size_t c = 0; c < m.cols; ++c) {
    const double mean = sum[c] / n;
    double ss = static_cast<double>(m.rows - per_feature[c].size()) * mean * mean;
    for (double v : per_feature[c]) ss += (v - mean) * (v - mean);
    variance[c] = ss / n;
  }
  return variance;
}

ModalityData select_top_variable(const ModalityData& d, std::size_t n) {
  if (n > d.n_features())
    throw ConfigError("cannot keep " + std::to_string(n) + " features of " + d.name + ", it has " +
                      std::to_string(d.n_features()));
  const std::vector<double> variance = normalized_log_variance(d.matrix);
  std::vector<std::size_t> order(d.n_features());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return variance[a] > variance[b]; });
  std::vector<std::size_t> keep(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n));
  std::sort(keep.begin(), keep.end());
  ModalityData out = d;
  out.matrix = d.matrix.select_columns(keep);
  out.feature_names.clear();
  for (std::size_t k : keep) out.feature_names.push_back(d.feature_names[k]);
  out.preprocessing_log.push_back({"select_top_variable", n});
  return out;
}

ModalityData replay_preprocessing(const ModalityData& raw, const std::vector<PreprocessStep>& log) {
  ModalityData d = raw;
  for (const auto& step : log) {
    if (step.op == "binarize") d = binarize(d);
    else if (step.op == "select_top_variable") d = select_top_variable(d, step.n);
    else throw ConfigError("unknown preprocessing step '" + step.op + "'");
  }
  return d;
}

void check_support(const ModalityData& d) {
  for (double v : d.matrix.values) {
    if (d.distribution_kind == dist::Likelihood::bernoulli && v != 1.0)
      throw DomainError(d.name + ": bernoulli modality contains a value other than 0/1 (enable binarize)");
    if (v < 0.0 || v != std::floor(v)) throw DomainError(d.name + ": counts must be nonnegative integers");
  }
}

void check_paired(std::span<const ModalityData> modalities) {
  for (std::size_t m = 1; m < modalities.size(); ++m)
    if (modalities[m].cell_ids != modalities[0].cell_ids)
      throw DimensionMismatchError("cell ids of " + modalities[m].name + " differ from " + modalities[0].name);
}

ad::Tensor BatchCovariate::one_hot(std::span<const std::size_t> rows) const {
  ad::Tensor out(ad::Shape{rows.size(), width()});
  for (std::size_t k = 0; k < rows.size(); ++k)
    if (width() > 0) out[k * width() + category_of.at(rows[k])] = 1.0;
  return out;
}

BatchCovariate encode_batch(std::span<const std::string> labels) {
  BatchCovariate b;
  std::map<std::string, std::size_t> seen;
  for (const auto& label : labels) {
    auto [it, inserted] = seen.emplace(label, b.categories.size());
    if (inserted) b.categories.push_back(label);
    b.category_of.push_back(it->second);
  }
  return b;
}

BatchCovariate no_batch(std::size_t n_cells) {
  BatchCovariate b;
  b.category_of.assign(n_cells, 0);
  return b;
}

Split split(std::size_t n_cells, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("split fraction must lie in (0, 1)");
  std::vector<std::size_t> order(n_cells);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n_cells)));
  Split s;
  s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.validation.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.validation.begin(), s.validation.end());
  return s;
}

std::vector<std::string> LabelTable::column(const std::string& name) const {
  const auto it = std::find(columns.begin(), columns.end(), name);
  if (it == columns.end()) throw LookupError("label column '" + name + "' not found");
  const auto c = static_cast<std::size_t>(it - columns.begin());
  std::vector<std::string> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(r[c]);
  return out;
}

std::vector<std::string> LabelTable::aligned(const std::string& name, std::span<const std::string> cells) const {
  const auto values = column(name);
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < cell_ids.size(); ++i) index.emplace(cell_ids[i], i);
  std::vector<std::string> out;
  out.reserve(cells.size());
  for (const auto& c : cells) {
    const auto it = index.find(c);
    if (it == index.end()) throw LookupError("cell '" + c + "' missing from label table");
    out.push_back(values[it->second]);
  }
  return out;
}

LabelTable read_label_table(const fs::path& path) {
  auto in = open_input(path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + ":1: empty file");
  LabelTable t;
  const auto header = split_csv(trim(line));
  if (header.size() < 2) throw ParseError(path.string() + ":1: label table needs an id column and a label column");
  t.columns.assign(header.begin() + 1, header.end());
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string s = trim(line);
    if (s.empty()) continue;
    auto cells = split_csv(s);
    if (cells.size() != header.size())
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                       std::to_string(header.size()) + " fields");
    t.cell_ids.push_back(cells[0]);
    t.rows.emplace_back(cells.begin() + 1, cells.end());
  }
  return t;
}

}  // namespace dagvae

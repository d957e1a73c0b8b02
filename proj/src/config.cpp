#include "dagvae/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "dagvae/checkpoint.hpp"
#include "dagvae/error.hpp"

namespace dagvae {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void reject_unknown(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ConfigError(where + ": expected an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, _] : obj.items())
    if (!ok.contains(key)) throw ConfigError(where + "." + key + ": unknown key");
}

template <class T>
T get(const json& obj, const std::string& where, const char* key) {
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + ": missing or wrong type");
  }
}

template <class T>
std::optional<T> get_opt(const json& obj, const std::string& where, const char* key) {
  if (!obj.contains(key)) return std::nullopt;
  return get<T>(obj, where, key);
}

std::size_t positive(const json& obj, const std::string& where, const char* key, std::size_t fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_number_integer() || v.get<long long>() <= 0)
    throw ConfigError(where + "." + key + ": expected a positive integer");
  return v.get<std::size_t>();
}

double number(const json& obj, const std::string& where, const char* key, double fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj.at(key).is_number()) throw ConfigError(where + "." + key + ": expected a number");
  return obj.at(key).get<double>();
}

template <class F>
auto located(const std::string& where, F&& f) {
  try {
    return f();
  } catch (const ConfigError& e) {
    throw ConfigError(where + ": " + e.message());
  }
}

MatrixSource source_of(const ModalityConfig& m) {
  MatrixSource s;
  s.name = m.name;
  s.path = *m.matrix;
  s.format = m.format;
  s.likelihood = m.likelihood;
  s.cells_path = m.cells;
  s.features_path = m.features;
  return s;
}

}  // namespace

RunConfig RunConfig::parse(const json& doc, const fs::path& base_dir) {
  reject_unknown(doc, "config", {"seed", "output_dir", "dataset", "graph", "model", "train", "batch", "analysis"});
  RunConfig c;
  c.source = doc;
  c.base_dir = base_dir;
  auto resolve = [&](const fs::path& p) { return p.is_absolute() ? p : base_dir / p; };
  if (doc.contains("seed")) {
    if (!doc.at("seed").is_number_unsigned()) throw ConfigError("seed: expected a nonnegative integer");
    c.seed = doc.at("seed").get<std::uint64_t>();
  }
  c.output_dir = resolve(get_opt<std::string>(doc, "config", "output_dir").value_or("run"));

  if (!doc.contains("dataset")) throw ConfigError("dataset: missing");
  const json& ds = doc.at("dataset");
  reject_unknown(ds, "dataset", {"modalities"});
  const json& mods = ds.contains("modalities") ? ds.at("modalities") : json();
  if (!mods.is_array() || mods.empty()) throw ConfigError("dataset.modalities: expected a nonempty array");
  for (std::size_t i = 0; i < mods.size(); ++i) {
    const std::string where = "dataset.modalities[" + std::to_string(i) + "]";
    const json& mj = mods[i];
    reject_unknown(mj, where,
                   {"name", "matrix", "format", "cells", "features", "likelihood", "binarize", "top_n_features",
                    "n_features", "dim_z", "n_components"});
    ModalityConfig m;
    m.name = get<std::string>(mj, where, "name");
    if (auto p = get_opt<std::string>(mj, where, "matrix")) m.matrix = resolve(*p);
    if (auto p = get_opt<std::string>(mj, where, "cells")) m.cells = resolve(*p);
    if (auto p = get_opt<std::string>(mj, where, "features")) m.features = resolve(*p);
    m.format = located(where + ".format", [&] {
      return matrix_format_from_string(get_opt<std::string>(mj, where, "format").value_or("matrix-market"));
    });
    m.likelihood = located(where + ".likelihood",
                           [&] { return dist::likelihood_from_string(get<std::string>(mj, where, "likelihood")); });
    m.binarize = get_opt<bool>(mj, where, "binarize").value_or(false);
    if (mj.contains("top_n_features")) m.top_n_features = positive(mj, where, "top_n_features", 0);
    if (mj.contains("n_features")) m.n_features = positive(mj, where, "n_features", 0);
    if (mj.contains("dim_z")) m.dim_z = positive(mj, where, "dim_z", 0);
    if (mj.contains("n_components")) m.n_components = positive(mj, where, "n_components", 0);
    c.modalities.push_back(std::move(m));
  }

  if (doc.contains("graph")) {
    const json& g = doc.at("graph");
    reject_unknown(g, "graph", {"edges"});
    const json& edges = g.contains("edges") ? g.at("edges") : json::array();
    if (!edges.is_array()) throw ConfigError("graph.edges: expected an array");
    for (std::size_t i = 0; i < edges.size(); ++i) {
      const json& e = edges[i];
      if (!e.is_array() || e.size() != 2 || !e[0].is_string() || !e[1].is_string())
        throw ConfigError("graph.edges[" + std::to_string(i) + "]: expected [from, to]");
      c.edges.emplace_back(e[0].get<std::string>(), e[1].get<std::string>());
    }
  }

  if (doc.contains("model")) {
    const json& mj = doc.at("model");
    reject_unknown(mj, "model",
                   {"dim_z", "n_components", "n_mc_samples", "incorporate_mode", "width_divisor", "train_prior"});
    c.model.dim_z = positive(mj, "model", "dim_z", c.model.dim_z);
    c.model.n_components = positive(mj, "model", "n_components", 0);
    c.model.n_mc_samples = positive(mj, "model", "n_mc_samples", c.model.n_mc_samples);
    if (mj.contains("incorporate_mode"))
      c.model.incorporate_mode = located("model.incorporate_mode", [&] {
        return incorporate_mode_from_string(get<std::string>(mj, "model", "incorporate_mode"));
      });
    c.width_divisor = positive(mj, "model", "width_divisor", 1);
    c.model.train_prior = get_opt<bool>(mj, "model", "train_prior").value_or(true);
  }
  c.model.encoder_widths = scaled_widths(kDefaultEncoderWidths, c.width_divisor);
  c.model.decoder_widths = scaled_widths(kDefaultDecoderWidths, c.width_divisor);

  if (doc.contains("train")) {
    const json& t = doc.at("train");
    reject_unknown(t, "train",
                   {"learning_rate", "epochs_per_stage", "batch_size", "warmup_epochs", "early_stop_patience",
                    "early_stop_min_delta", "validation_fraction"});
    c.train.learning_rate = number(t, "train", "learning_rate", c.train.learning_rate);
    c.train.epochs_per_stage = positive(t, "train", "epochs_per_stage", c.train.epochs_per_stage);
    c.train.batch_size = positive(t, "train", "batch_size", c.train.batch_size);
    if (t.contains("warmup_epochs")) {
      if (!t.at("warmup_epochs").is_number_unsigned()) throw ConfigError("train.warmup_epochs: expected an integer >= 0");
      c.train.warmup_epochs = t.at("warmup_epochs").get<std::size_t>();
    }
    c.train.early_stop_patience = positive(t, "train", "early_stop_patience", c.train.early_stop_patience);
    c.train.early_stop_min_delta = number(t, "train", "early_stop_min_delta", c.train.early_stop_min_delta);
    c.train.validation_fraction = number(t, "train", "validation_fraction", c.train.validation_fraction);
  }
  c.train.seed = c.seed;
  located("train", [&] {
    c.train.validate();
    return 0;
  });

  if (doc.contains("batch")) {
    const json& b = doc.at("batch");
    reject_unknown(b, "batch", {"path", "column"});
    c.batch = BatchConfig{resolve(get<std::string>(b, "batch", "path")), get<std::string>(b, "batch", "column")};
  }

  if (doc.contains("analysis")) {
    const json& a = doc.at("analysis");
    reject_unknown(a, "analysis", {"enrichment_k", "n_pairs"});
    c.analysis.enrichment_k = positive(a, "analysis", "enrichment_k", c.analysis.enrichment_k);
    c.analysis.n_pairs = positive(a, "analysis", "n_pairs", c.analysis.n_pairs);
  }

  std::vector<std::string> names;
  for (const auto& m : c.modalities) names.push_back(m.name);
  validate(names, c.edges);
  return c;
}

RunConfig RunConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return parse(doc, path.parent_path());
}

std::string RunConfig::digest() const {
  json blocks = {{"dataset", source.value("dataset", json())},
                 {"graph", source.value("graph", json())},
                 {"model", source.value("model", json())},
                 {"batch", source.value("batch", json())}};
  return sha256_hex(blocks.dump());
}

std::size_t RunConfig::dim_z(std::size_t m) const { return modalities.at(m).dim_z.value_or(model.dim_z); }

std::size_t RunConfig::n_components(std::size_t m) const {
  if (modalities.at(m).n_components) return *modalities[m].n_components;
  return model.n_components ? model.n_components : 2 * dim_z(m) + 1;
}

PreflightReport preflight(const RunConfig& cfg) {
  PreflightReport r;
  for (std::size_t i = 0; i < cfg.modalities.size(); ++i) {
    const ModalityConfig& m = cfg.modalities[i];
    const std::string where = "dataset.modalities[" + std::to_string(i) + "]";
    if (!m.matrix) throw ConfigError(where + ".matrix: missing");
    if (!fs::exists(*m.matrix)) throw ConfigError(where + ".matrix: file not found: " + m.matrix->string());
    const MatrixHeader h = read_matrix_header(*m.matrix, m.format);
    for (const auto& [path, expect, what] :
         {std::tuple{m.cells, h.rows, "cells"}, std::tuple{m.features, h.cols, "features"}}) {
      if (!path) continue;
      if (!fs::exists(*path)) throw ConfigError(where + "." + what + ": file not found: " + path->string());
      const auto lines = read_lines(*path);
      if (lines.size() != expect)
        throw DimensionMismatchError(where + "." + what + ": " + std::to_string(lines.size()) + " names for " +
                                     std::to_string(expect) + " entries");
    }
    if (m.top_n_features && *m.top_n_features > h.cols)
      throw ConfigError(where + ".top_n_features: " + std::to_string(*m.top_n_features) + " exceeds " +
                        std::to_string(h.cols) + " features");
    if (!r.n_cells.empty() && h.rows != r.n_cells.front())
      throw DimensionMismatchError(where + ": " + std::to_string(h.rows) + " cells, first modality has " +
                                   std::to_string(r.n_cells.front()));
    r.n_cells.push_back(h.rows);
    r.n_features.push_back(m.top_n_features.value_or(h.cols));
  }
  if (cfg.batch) {
    if (!fs::exists(cfg.batch->path)) throw ConfigError("batch.path: file not found: " + cfg.batch->path.string());
    const LabelTable t = read_label_table(cfg.batch->path);
    located("batch.column", [&] { return t.column(cfg.batch->column); });
  }
  return r;
}

LoadedData load_data(const RunConfig& cfg) {
  preflight(cfg);
  LoadedData out;
  for (const auto& m : cfg.modalities) {
    ModalityData d = load_matrix(source_of(m));
    if (m.binarize) d = binarize(d);
    if (m.top_n_features) d = select_top_variable(d, *m.top_n_features);
    check_support(d);
    out.modalities.push_back(std::move(d));
  }
  check_paired(out.modalities);
  const auto& cells = out.modalities.front().cell_ids;
  if (cfg.batch) {
    const LabelTable t = read_label_table(cfg.batch->path);
    const auto labels = t.aligned(cfg.batch->column, cells);
    out.batch = encode_batch(labels);
  } else {
    out.batch = no_batch(cells.size());
  }
  return out;
}

ModelSpec model_spec(const RunConfig& cfg, const LoadedData& data) {
  ModelSpec s;
  for (std::size_t m = 0; m < cfg.modalities.size(); ++m)
    s.modalities.push_back({cfg.modalities[m].name, cfg.modalities[m].likelihood, data.modalities[m].n_features(),
                            cfg.dim_z(m), cfg.n_components(m)});
  s.edges = cfg.edges;
  s.config = cfg.model;
  s.batch_categories = data.batch.categories;
  return s;
}

ModelSpec model_spec_without_data(const RunConfig& cfg) {
  ModelSpec s;
  for (std::size_t m = 0; m < cfg.modalities.size(); ++m) {
    const auto& mc = cfg.modalities[m];
    if (!mc.n_features)
      throw ConfigError("dataset.modalities[" + std::to_string(m) + "].n_features: required to generate without a checkpoint");
    s.modalities.push_back({mc.name, mc.likelihood, *mc.n_features, cfg.dim_z(m), cfg.n_components(m)});
  }
  s.edges = cfg.edges;
  s.config = cfg.model;
  return s;
}

}  // namespace dagvae

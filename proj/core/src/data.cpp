#include "mgcd/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace mgcd {
namespace {

// in-subspace jitter scales. the sample latent sets where on the class
// manifold a sample sits; the patch jitter spreads its tokens around that
// point. fixed here rather than configured: the collapse-pressure knob the
// experiments need is noise_sigma.
constexpr double kSampleJitter = 0.35;
constexpr double kPatchJitter = 0.15;

constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

double dot_cols(const DenseMatrix& m, std::size_t a, std::size_t b) {
  double acc = 0.0;
  for (std::size_t r = 0; r < m.rows(); ++r) acc += m(r, a) * m(r, b);
  return acc;
}

// draws gaussian rows and orthonormalizes them in order.
DenseMatrix orthonormal_rows(std::size_t n, std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  DenseMatrix m(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < d; ++c) m(i, c) = gauss(rng);
    for (std::size_t j = 0; j < i; ++j) {
      double proj = 0.0;
      for (std::size_t c = 0; c < d; ++c) proj += m(i, c) * m(j, c);
      for (std::size_t c = 0; c < d; ++c) m(i, c) -= proj * m(j, c);
    }
    double norm2 = 0.0;
    for (std::size_t c = 0; c < d; ++c) norm2 += m(i, c) * m(i, c);
    const double norm = std::sqrt(norm2);
    if (norm < 1e-9) throw std::runtime_error("orthonormal_rows: degenerate draw");
    for (std::size_t c = 0; c < d; ++c) m(i, c) /= norm;
  }
  return m;
}

// basis columns: the class anchor first, then random orthonormal completions.
DenseMatrix class_basis(const DenseMatrix& anchors, std::size_t cls, std::size_t subspace,
                        std::mt19937_64& rng) {
  const std::size_t d = anchors.cols();
  std::normal_distribution<double> gauss(0.0, 1.0);
  DenseMatrix basis(d, subspace);
  for (std::size_t r = 0; r < d; ++r) basis(r, 0) = anchors(cls, r);
  for (std::size_t c = 1; c < subspace; ++c) {
    for (std::size_t r = 0; r < d; ++r) basis(r, c) = gauss(rng);
    for (std::size_t prev = 0; prev < c; ++prev) {
      const double proj = dot_cols(basis, c, prev);
      for (std::size_t r = 0; r < d; ++r) basis(r, c) -= proj * basis(r, prev);
    }
    const double norm = std::sqrt(dot_cols(basis, c, c));
    if (norm < 1e-9) throw std::runtime_error("class_basis: degenerate draw");
    for (std::size_t r = 0; r < d; ++r) basis(r, c) /= norm;
  }
  return basis;
}

// one patch around the sample's manifold point, with fresh jitter and noise.
void draw_patch(const Dataset& ds, std::size_t sample, std::mt19937_64& rng,
                DenseMatrix& out, std::size_t out_row) {
  const SynthConfig& cfg = ds.config;
  const std::size_t cls = static_cast<std::size_t>(ds.truth[sample]);
  const DenseMatrix& basis = ds.bases[cls];
  const std::size_t d = cfg.input_dim;
  const std::size_t s = cfg.class_subspace_dim;
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::vector<double> coeff(s);
  for (std::size_t c = 0; c < s; ++c)
    coeff[c] = ds.sample_latent(sample, c) + kPatchJitter * gauss(rng);

  std::vector<double> noise(d, 0.0);
  if (cfg.noise_sigma > 0.0) {
    for (std::size_t r = 0; r < d; ++r) noise[r] = gauss(rng);
    for (std::size_t c = 0; c < s; ++c) {  // project out the class subspace
      double proj = 0.0;
      for (std::size_t r = 0; r < d; ++r) proj += noise[r] * basis(r, c);
      for (std::size_t r = 0; r < d; ++r) noise[r] -= proj * basis(r, c);
    }
  }

  for (std::size_t r = 0; r < d; ++r) {
    double v = ds.anchors(cls, r) + cfg.noise_sigma * noise[r];
    for (std::size_t c = 0; c < s; ++c) v += basis(r, c) * coeff[c];
    out(out_row, r) = v;
  }
}

}  // namespace

void validate_synth_config(const SynthConfig& cfg) {
  if (cfg.n_classes_known == 0) throw std::invalid_argument("synth: no known classes");
  if (cfg.samples_per_class == 0) throw std::invalid_argument("synth: samples_per_class = 0");
  if (cfg.patches_per_sample == 0) throw std::invalid_argument("synth: patches_per_sample = 0");
  if (cfg.input_dim == 0) throw std::invalid_argument("synth: input_dim = 0");
  if (cfg.class_subspace_dim == 0 || cfg.class_subspace_dim > cfg.input_dim)
    throw std::invalid_argument("synth: class_subspace_dim outside [1, input_dim]");
  if (cfg.n_classes_known + cfg.n_classes_novel > cfg.input_dim)
    throw std::invalid_argument("synth: more classes than input_dim, anchors cannot be orthonormal");
  if (!(cfg.noise_sigma >= 0.0) || !std::isfinite(cfg.noise_sigma))
    throw std::invalid_argument("synth: noise_sigma must be finite and >= 0");
  if (!(cfg.labeled_fraction > 0.0) || cfg.labeled_fraction > 1.0)
    throw std::invalid_argument("synth: labeled_fraction outside (0, 1]");
}

std::vector<std::size_t> Dataset::labeled_indices() const {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples.is_labeled[i]) idx.push_back(i);
  }
  return idx;
}

Dataset gen_synthetic(const SynthConfig& cfg) {
  validate_synth_config(cfg);
  const std::size_t n_classes = cfg.n_classes_known + cfg.n_classes_novel;
  const std::size_t n = n_classes * cfg.samples_per_class;
  std::mt19937_64 rng(cfg.seed);

  Dataset ds;
  ds.config = cfg;
  ds.anchors = orthonormal_rows(n_classes, cfg.input_dim, rng);
  for (std::size_t c = 0; c < n_classes; ++c) {
    ds.bases.push_back(class_basis(ds.anchors, c, cfg.class_subspace_dim, rng));
    if (c < cfg.n_classes_known) {
      ds.known_classes.push_back(static_cast<int>(c));
    } else {
      ds.novel_classes.push_back(static_cast<int>(c));
    }
  }

  ds.truth.resize(n);
  ds.sample_latent = DenseMatrix(n, cfg.class_subspace_dim);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (std::size_t c = 0; c < n_classes; ++c) {
    for (std::size_t s = 0; s < cfg.samples_per_class; ++s) {
      const std::size_t i = c * cfg.samples_per_class + s;
      ds.truth[i] = static_cast<int>(c);
      for (std::size_t j = 0; j < cfg.class_subspace_dim; ++j)
        ds.sample_latent(i, j) = kSampleJitter * gauss(rng);
    }
  }

  // canonical patch draw
  ds.samples.labels.assign(n, -1);
  ds.samples.is_labeled.assign(n, 0);
  ds.samples.is_known_class.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    DenseMatrix patches(cfg.patches_per_sample, cfg.input_dim);
    for (std::size_t p = 0; p < cfg.patches_per_sample; ++p) draw_patch(ds, i, rng, patches, p);
    ds.samples.patches.push_back(std::move(patches));
    ds.samples.is_known_class[i] =
        static_cast<std::size_t>(ds.truth[i]) < cfg.n_classes_known ? 1 : 0;
  }

  // labeled split: a per-class random subset of the known classes
  const std::size_t per_class_labeled = static_cast<std::size_t>(
      std::llround(cfg.labeled_fraction * static_cast<double>(cfg.samples_per_class)));
  for (std::size_t c = 0; c < cfg.n_classes_known; ++c) {
    std::vector<std::size_t> members(cfg.samples_per_class);
    for (std::size_t s = 0; s < cfg.samples_per_class; ++s)
      members[s] = c * cfg.samples_per_class + s;
    std::shuffle(members.begin(), members.end(), rng);
    for (std::size_t s = 0; s < per_class_labeled && s < members.size(); ++s) {
      ds.samples.is_labeled[members[s]] = 1;
      ds.samples.labels[members[s]] = static_cast<int>(c);
    }
  }
  return ds;
}

SampleBatch draw_view(const Dataset& ds, const std::vector<std::size_t>& sample_ids,
                      std::uint64_t view_seed) {
  SampleBatch view;
  for (std::size_t id : sample_ids) {
    if (id >= ds.size()) throw std::invalid_argument("draw_view: sample id out of range");
    // per-sample stream: the draw depends only on (view_seed, id)
    std::mt19937_64 rng(view_seed ^ (kGolden * (id + 1)));
    DenseMatrix patches(ds.config.patches_per_sample, ds.config.input_dim);
    for (std::size_t p = 0; p < ds.config.patches_per_sample; ++p)
      draw_patch(ds, id, rng, patches, p);
    view.patches.push_back(std::move(patches));
    view.labels.push_back(ds.samples.labels[id]);
    view.is_labeled.push_back(ds.samples.is_labeled[id]);
    view.is_known_class.push_back(ds.samples.is_known_class[id]);
  }
  return view;
}

void save_embeddings(const DenseMatrix& z, const std::string& path) {
  if (z.empty()) throw std::invalid_argument("save_embeddings: empty matrix");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_embeddings: cannot open " + path);
  out << "dim=" << z.cols() << '\n';
  char buf[40];
  for (std::size_t r = 0; r < z.rows(); ++r) {
    for (std::size_t c = 0; c < z.cols(); ++c) {
      std::snprintf(buf, sizeof(buf), "%.17g", z(r, c));
      if (c) out << ',';
      out << buf;
    }
    out << '\n';
  }
  out.flush();
  if (!out) throw std::runtime_error("save_embeddings: write failed for " + path);
}

DenseMatrix load_embeddings(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_embeddings: cannot open " + path);
  std::string header;
  if (!std::getline(in, header) || header.rfind("dim=", 0) != 0)
    throw std::runtime_error("load_embeddings: missing dim=<D> header in " + path);
  char* end = nullptr;
  const unsigned long dim = std::strtoul(header.c_str() + 4, &end, 10);
  if (dim == 0 || (end && *end != '\0'))
    throw std::runtime_error("load_embeddings: malformed header in " + path);

  std::vector<double> values;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++row;
    std::stringstream ss(line);
    std::string cell;
    std::size_t c = 0;
    while (std::getline(ss, cell, ',')) {
      char* cell_end = nullptr;
      const double v = std::strtod(cell.c_str(), &cell_end);
      if (cell_end == cell.c_str())
        throw std::runtime_error("load_embeddings: malformed value at row " +
                                 std::to_string(row) + " in " + path);
      values.push_back(v);
      ++c;
    }
    if (c != dim)
      throw std::runtime_error("load_embeddings: row " + std::to_string(row) + " has " +
                               std::to_string(c) + " values, expected " + std::to_string(dim) +
                               " in " + path);
  }
  if (row == 0) throw std::runtime_error("load_embeddings: no data rows in " + path);
  return DenseMatrix(row, dim, std::move(values));
}

namespace {

// flattens b (rows*inner x cols) back into per-block matrices of inner rows.
std::vector<DenseMatrix> split_blocks(const DenseMatrix& flat, std::size_t inner) {
  if (inner == 0 || flat.rows() % inner != 0)
    throw std::runtime_error("dataset: block size does not divide the flattened matrix");
  std::vector<DenseMatrix> blocks;
  for (std::size_t b = 0; b < flat.rows() / inner; ++b)
    blocks.push_back(row_slice(flat, b * inner, (b + 1) * inner));
  return blocks;
}

}  // namespace

void save_dataset(const Dataset& ds, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);

  nlohmann::json manifest;
  manifest["format"] = "mgcd-dataset";
  manifest["config"] = {{"n_classes_known", ds.config.n_classes_known},
                        {"n_classes_novel", ds.config.n_classes_novel},
                        {"samples_per_class", ds.config.samples_per_class},
                        {"patches_per_sample", ds.config.patches_per_sample},
                        {"input_dim", ds.config.input_dim},
                        {"class_subspace_dim", ds.config.class_subspace_dim},
                        {"noise_sigma", ds.config.noise_sigma},
                        {"labeled_fraction", ds.config.labeled_fraction},
                        {"seed", ds.config.seed}};
  manifest["known_classes"] = ds.known_classes;
  manifest["novel_classes"] = ds.novel_classes;
  manifest["truth"] = ds.truth;
  manifest["labels"] = ds.samples.labels;
  manifest["is_labeled"] = ds.samples.is_labeled;
  manifest["is_known_class"] = ds.samples.is_known_class;
  manifest["labeled_idx"] = ds.labeled_indices();

  std::ofstream out(fs::path(dir) / "manifest.json");
  if (!out) throw std::runtime_error("save_dataset: cannot open manifest in " + dir);
  out << manifest.dump(2) << '\n';
  out.flush();
  if (!out) throw std::runtime_error("save_dataset: manifest write failed in " + dir);

  // patches flattened sample-major; generator state for view redraws
  const std::size_t p = ds.config.patches_per_sample;
  DenseMatrix flat(ds.size() * p, ds.config.input_dim);
  for (std::size_t i = 0; i < ds.size(); ++i)
    for (std::size_t r = 0; r < p; ++r)
      for (std::size_t c = 0; c < ds.config.input_dim; ++c)
        flat(i * p + r, c) = ds.samples.patches[i](r, c);
  save_embeddings(flat, (fs::path(dir) / "patches.csv").string());
  save_embeddings(ds.anchors, (fs::path(dir) / "anchors.csv").string());
  save_embeddings(ds.sample_latent, (fs::path(dir) / "sample_latent.csv").string());

  DenseMatrix bases_flat(ds.bases.size() * ds.config.input_dim, ds.config.class_subspace_dim);
  for (std::size_t b = 0; b < ds.bases.size(); ++b)
    for (std::size_t r = 0; r < ds.config.input_dim; ++r)
      for (std::size_t c = 0; c < ds.config.class_subspace_dim; ++c)
        bases_flat(b * ds.config.input_dim + r, c) = ds.bases[b](r, c);
  save_embeddings(bases_flat, (fs::path(dir) / "bases.csv").string());
}

Dataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream in(fs::path(dir) / "manifest.json");
  if (!in) throw std::runtime_error("load_dataset: no manifest in " + dir);
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("load_dataset: bad manifest in " + dir + ": " + e.what());
  }

  Dataset ds;
  try {
    const auto& cfg = manifest.at("config");
    ds.config.n_classes_known = cfg.at("n_classes_known").get<std::size_t>();
    ds.config.n_classes_novel = cfg.at("n_classes_novel").get<std::size_t>();
    ds.config.samples_per_class = cfg.at("samples_per_class").get<std::size_t>();
    ds.config.patches_per_sample = cfg.at("patches_per_sample").get<std::size_t>();
    ds.config.input_dim = cfg.at("input_dim").get<std::size_t>();
    ds.config.class_subspace_dim = cfg.at("class_subspace_dim").get<std::size_t>();
    ds.config.noise_sigma = cfg.at("noise_sigma").get<double>();
    ds.config.labeled_fraction = cfg.at("labeled_fraction").get<double>();
    ds.config.seed = cfg.at("seed").get<std::uint64_t>();
    ds.known_classes = manifest.at("known_classes").get<std::vector<int>>();
    ds.novel_classes = manifest.at("novel_classes").get<std::vector<int>>();
    ds.truth = manifest.at("truth").get<std::vector<int>>();
    ds.samples.labels = manifest.at("labels").get<std::vector<int>>();
    ds.samples.is_labeled = manifest.at("is_labeled").get<std::vector<std::uint8_t>>();
    ds.samples.is_known_class = manifest.at("is_known_class").get<std::vector<std::uint8_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("load_dataset: manifest field error in " + dir + ": " + e.what());
  }
  validate_synth_config(ds.config);

  const DenseMatrix flat = load_embeddings((fs::path(dir) / "patches.csv").string());
  ds.samples.patches = split_blocks(flat, ds.config.patches_per_sample);
  ds.anchors = load_embeddings((fs::path(dir) / "anchors.csv").string());
  ds.sample_latent = load_embeddings((fs::path(dir) / "sample_latent.csv").string());
  const DenseMatrix bases_flat = load_embeddings((fs::path(dir) / "bases.csv").string());
  ds.bases = split_blocks(bases_flat, ds.config.input_dim);

  if (ds.truth.size() != ds.samples.patches.size() ||
      ds.truth.size() != ds.samples.labels.size() ||
      ds.sample_latent.rows() != ds.truth.size() ||
      ds.bases.size() != ds.known_classes.size() + ds.novel_classes.size())
    throw std::runtime_error("load_dataset: inconsistent sizes in " + dir);
  return ds;
}

}  // namespace mgcd

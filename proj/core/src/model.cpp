#include "mgcd/model.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

namespace mgcd {

void validate_batch(const SampleBatch& batch) {
  const std::size_t b = batch.patches.size();
  if (b == 0) throw std::invalid_argument("batch: empty");
  if (batch.labels.size() != b || batch.is_labeled.size() != b ||
      batch.is_known_class.size() != b)
    throw std::invalid_argument("batch: metadata length mismatch");
  const std::size_t d_in = batch.patches[0].cols();
  for (std::size_t i = 0; i < b; ++i) {
    if (batch.patches[i].rows() == 0 || batch.patches[i].cols() == 0)
      throw std::invalid_argument("batch: sample " + std::to_string(i) + " has no patches");
    if (batch.patches[i].cols() != d_in)
      throw std::invalid_argument("batch: sample " + std::to_string(i) +
                                  " input dim differs from sample 0");
    if (batch.is_labeled[i] && batch.labels[i] < 0)
      throw std::invalid_argument("batch: labeled sample " + std::to_string(i) +
                                  " is missing its label");
  }
}

namespace {

DenseMatrix uniform_init(std::size_t rows, std::size_t cols, double bound,
                         std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  DenseMatrix m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) m(r, c) = dist(rng);
  return m;
}

}  // namespace

EncoderParams init_encoder(std::size_t d_in, std::size_t d_model, std::size_t d_out,
                           std::uint64_t seed) {
  if (d_in == 0 || d_model == 0 || d_out == 0)
    throw std::invalid_argument("init_encoder: zero dimension");
  const std::size_t d_hidden = 2 * d_model;
  std::mt19937_64 rng(seed);
  EncoderParams p;
  p.embed_w = uniform_init(d_in, d_model, 1.0 / std::sqrt(static_cast<double>(d_in)), rng);
  const double inv_sqrt_dm = 1.0 / std::sqrt(static_cast<double>(d_model));
  p.wq = uniform_init(d_model, d_model, inv_sqrt_dm, rng);
  p.wk = uniform_init(d_model, d_model, inv_sqrt_dm, rng);
  p.wv = uniform_init(d_model, d_model, inv_sqrt_dm, rng);
  p.cls0 = uniform_init(1, d_model, inv_sqrt_dm, rng);
  p.proj_w1 = uniform_init(d_model, d_hidden, inv_sqrt_dm, rng);
  p.proj_w2 =
      uniform_init(d_hidden, d_out, 1.0 / std::sqrt(static_cast<double>(d_hidden)), rng);
  return p;
}

namespace {

constexpr const char* kMatrixNames[7] = {"embed_w", "wq",      "wk",     "wv",
                                         "cls0",    "proj_w1", "proj_w2"};

const DenseMatrix& matrix_by_name(const EncoderParams& p, const std::string& name) {
  if (name == "embed_w") return p.embed_w;
  if (name == "wq") return p.wq;
  if (name == "wk") return p.wk;
  if (name == "wv") return p.wv;
  if (name == "cls0") return p.cls0;
  if (name == "proj_w1") return p.proj_w1;
  if (name == "proj_w2") return p.proj_w2;
  throw std::invalid_argument("checkpoint: unknown matrix " + name);
}

DenseMatrix& matrix_by_name(EncoderParams& p, const std::string& name) {
  return const_cast<DenseMatrix&>(matrix_by_name(static_cast<const EncoderParams&>(p), name));
}

void write_matrix_csv(const DenseMatrix& m, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("checkpoint: cannot open " + path.string());
  char buf[40];
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) {
      std::snprintf(buf, sizeof(buf), "%.17g", m(r, c));
      if (c) out << ',';
      out << buf;
    }
    out << '\n';
  }
  out.flush();
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path.string());
}

DenseMatrix read_matrix_csv(const std::filesystem::path& path, std::size_t rows,
                            std::size_t cols) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path.string());
  DenseMatrix m(rows, cols);
  std::string line;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!std::getline(in, line))
      throw std::runtime_error("checkpoint: " + path.string() + " truncated at row " +
                               std::to_string(r));
    std::stringstream ss(line);
    std::string cell;
    std::size_t c = 0;
    while (std::getline(ss, cell, ',')) {
      if (c >= cols)
        throw std::runtime_error("checkpoint: " + path.string() + " row " +
                                 std::to_string(r) + " too wide");
      char* end = nullptr;
      m(r, c) = std::strtod(cell.c_str(), &end);
      if (end == cell.c_str())
        throw std::runtime_error("checkpoint: " + path.string() + " row " +
                                 std::to_string(r) + " has a malformed value");
      ++c;
    }
    if (c != cols)
      throw std::runtime_error("checkpoint: " + path.string() + " row " +
                               std::to_string(r) + " has " + std::to_string(c) +
                               " cells, expected " + std::to_string(cols));
  }
  return m;
}

}  // namespace

void save_checkpoint(const EncoderParams& params, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json manifest;
  manifest["format"] = "mgcd-checkpoint";
  for (const char* name : kMatrixNames) {
    const DenseMatrix& m = matrix_by_name(params, name);
    manifest["matrices"][name] = {{"rows", m.rows()}, {"cols", m.cols()}};
    write_matrix_csv(m, fs::path(dir) / (std::string(name) + ".csv"));
  }
  std::ofstream out(fs::path(dir) / "manifest.json");
  if (!out) throw std::runtime_error("checkpoint: cannot open manifest in " + dir);
  out << manifest.dump(2) << '\n';
  out.flush();
  if (!out) throw std::runtime_error("checkpoint: manifest write failed in " + dir);
}

EncoderParams load_checkpoint(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream in(fs::path(dir) / "manifest.json");
  if (!in) throw std::runtime_error("checkpoint: no manifest in " + dir);
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("checkpoint: bad manifest in " + dir + ": " + e.what());
  }
  EncoderParams p;
  for (const char* name : kMatrixNames) {
    if (!manifest.contains("matrices") || !manifest["matrices"].contains(name))
      throw std::runtime_error("checkpoint: manifest missing matrix " + std::string(name));
    const auto& entry = manifest["matrices"][name];
    matrix_by_name(p, name) =
        read_matrix_csv(fs::path(dir) / (std::string(name) + ".csv"),
                        entry.at("rows").get<std::size_t>(),
                        entry.at("cols").get<std::size_t>());
  }
  if (p.wq.rows() != p.d_model() || p.wq.cols() != p.d_model() ||
      !p.wk.same_shape(p.wq) || !p.wv.same_shape(p.wq) || p.cls0.rows() != 1 ||
      p.cls0.cols() != p.d_model() || p.proj_w1.rows() != p.d_model() ||
      p.proj_w2.rows() != p.d_hidden())
    throw std::runtime_error("checkpoint: inconsistent matrix shapes in " + dir);
  return p;
}

EncoderNodes register_params(Tape& tape, const EncoderParams& params) {
  EncoderNodes n;
  n.embed_w = tape.input(params.embed_w);
  n.wq = tape.input(params.wq);
  n.wk = tape.input(params.wk);
  n.wv = tape.input(params.wv);
  n.cls0 = tape.input(params.cls0);
  n.proj_w1 = tape.input(params.proj_w1);
  n.proj_w2 = tape.input(params.proj_w2);
  return n;
}

NodeId attend_pool(Tape& tape, NodeId vis, const EncoderNodes& nodes) {
  const std::size_t d_model = tape.shape(vis).cols;
  const NodeId q = tape.matmul(nodes.cls0, nodes.wq);
  const NodeId k = tape.matmul(vis, nodes.wk);
  const NodeId scores =
      tape.scale(tape.matmul(q, tape.transpose(k)), 1.0 / std::sqrt(static_cast<double>(d_model)));
  const NodeId alpha = tape.row_softmax(scores);
  const NodeId v = tape.matmul(vis, nodes.wv);
  return tape.add(tape.matmul(alpha, v), nodes.cls0);
}

ClassTokenBatch encode(Tape& tape, const SampleBatch& batch, const EncoderNodes& nodes) {
  validate_batch(batch);
  std::vector<NodeId> tokens;
  tokens.reserve(batch.size());
  for (const DenseMatrix& patches : batch.patches) {
    const NodeId x = tape.input(patches);
    const NodeId vis = tape.matmul(x, nodes.embed_w);
    tokens.push_back(attend_pool(tape, vis, nodes));
  }
  ClassTokenBatch out;
  out.h = tape.concat_rows(tokens);
  const NodeId hidden = tape.relu(tape.matmul(out.h, nodes.proj_w1));
  out.z = tape.l2_normalize_rows(tape.matmul(hidden, nodes.proj_w2));
  return out;
}

}  // namespace mgcd

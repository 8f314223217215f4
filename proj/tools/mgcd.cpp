// command-line front end: dataset generation, training, evaluation, spectral
// diagnosis, class-count estimation, and the structural-claims checker. every
// failure surfaces as a single JSON line on stderr and a nonzero exit.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mgcd/cluster.hpp"
#include "mgcd/data.hpp"
#include "mgcd/runner.hpp"
#include "mgcd/spectral.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonOpts {
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool seed_set = false;
  bool quiet = false;
};

void add_common(CLI::App* cmd, CommonOpts& opts, bool with_config = true) {
  if (with_config)
    cmd->add_option("--config", opts.config_path, "run configuration JSON");
  cmd->add_option("--out", opts.out_dir, "output directory");
  cmd->add_option("--seed", opts.seed, "seed override")
      ->each([&opts](const std::string&) { opts.seed_set = true; });
  cmd->add_flag("--quiet", opts.quiet, "suppress progress output");
}

mgcd::RunConfig resolve_config(const CommonOpts& opts) {
  mgcd::RunConfig cfg;
  if (!opts.config_path.empty()) cfg = mgcd::load_run_config(opts.config_path);
  if (opts.seed_set) cfg.seed = opts.seed;
  if (!opts.out_dir.empty()) cfg.output_dir = opts.out_dir;
  return cfg;
}

// per-sample mean patch, normalized: the raw-input stand-in used when no
// trained embedding file is supplied
mgcd::DenseMatrix mean_patch_embeddings(const mgcd::Dataset& ds) {
  const std::size_t d = ds.config.input_dim;
  mgcd::DenseMatrix z(ds.size(), d);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const mgcd::DenseMatrix& patches = ds.samples.patches[i];
    double norm2 = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      double acc = 0.0;
      for (std::size_t p = 0; p < patches.rows(); ++p) acc += patches(p, c);
      const double mean = acc / static_cast<double>(patches.rows());
      z(i, c) = mean;
      norm2 += mean * mean;
    }
    const double norm = std::sqrt(norm2);
    if (norm < 1e-12)
      throw std::runtime_error("sample " + std::to_string(i) +
                               " has a zero mean patch");
    for (std::size_t c = 0; c < d; ++c) z(i, c) /= norm;
  }
  return z;
}

int run_gen_data(const CommonOpts& opts) {
  mgcd::RunConfig cfg = resolve_config(opts);
  if (opts.seed_set) cfg.synth.seed = opts.seed;
  if (cfg.output_dir.empty()) throw std::runtime_error("gen-data needs --out");
  const mgcd::Dataset ds = mgcd::gen_synthetic(cfg.synth);
  mgcd::save_dataset(ds, cfg.output_dir);
  if (!opts.quiet)
    std::cout << "wrote " << ds.size() << " samples ("
              << ds.known_classes.size() << " known + " << ds.novel_classes.size()
              << " novel classes) to " << cfg.output_dir << "\n";
  return 0;
}

int run_train(const CommonOpts& opts) {
  const mgcd::RunConfig cfg = resolve_config(opts);
  const mgcd::TrainResult result = mgcd::train(cfg);
  if (!opts.quiet) {
    for (const mgcd::MetricsRow& row : result.history)
      std::cout << "epoch " << row.epoch << ": loss=" << row.loss_total
                << " entropy=" << row.entropy << " rank=" << row.effective_rank
                << " acc_all=" << row.acc_all << "\n";
    std::cout << "run artifacts in " << cfg.output_dir << "\n";
  }
  return 0;
}

int run_eval(const CommonOpts& opts, const std::string& checkpoint_dir,
             const std::string& data_dir) {
  const mgcd::EncoderParams params = mgcd::load_checkpoint(checkpoint_dir);
  const mgcd::Dataset ds = mgcd::load_dataset(data_dir);
  const mgcd::EvalReport report =
      mgcd::evaluate(params, ds, opts.seed_set ? opts.seed : 0);
  const fs::path out = opts.out_dir.empty() ? fs::path(".") : fs::path(opts.out_dir);
  fs::create_directories(out);
  mgcd::write_eval_report(report, (out / "eval.json").string());
  if (!opts.quiet)
    std::cout << "acc_all=" << report.acc_all << " acc_old=" << report.acc_old
              << " acc_new=" << report.acc_new << " (" << report.n_scored
              << " samples)\n";
  return 0;
}

int run_diagnose(const CommonOpts& opts, const std::string& embeddings_path) {
  const mgcd::DenseMatrix z = mgcd::load_embeddings(embeddings_path);
  const mgcd::SpectralReport report = mgcd::spectral_report(z);
  const fs::path out = opts.out_dir.empty() ? fs::path(".") : fs::path(opts.out_dir);
  fs::create_directories(out);
  mgcd::write_spectrum(report, (out / "spectrum.csv").string(),
                       (out / "spectral.json").string());
  if (!opts.quiet)
    std::cout << "entropy=" << report.entropy
              << " effective_rank=" << report.effective_rank_99
              << " nuclear_norm=" << report.nuclear_norm << "\n";
  return 0;
}

int run_estimate_k(const CommonOpts& opts, const std::string& data_dir,
                   const std::string& embeddings_path, std::size_t k_min,
                   std::size_t k_max) {
  const mgcd::Dataset ds = mgcd::load_dataset(data_dir);
  const mgcd::DenseMatrix z = embeddings_path.empty()
                                  ? mean_patch_embeddings(ds)
                                  : mgcd::load_embeddings(embeddings_path);
  if (z.rows() != ds.size())
    throw std::runtime_error("embedding rows do not match the dataset");
  if (k_max == 0)  // default scan: up to twice the class count
    k_max = 2 * (ds.known_classes.size() + ds.novel_classes.size());

  const std::vector<std::size_t> labeled_idx = ds.labeled_indices();
  std::vector<int> labels(labeled_idx.size());
  for (std::size_t i = 0; i < labeled_idx.size(); ++i)
    labels[i] = ds.samples.labels[labeled_idx[i]];

  // the scan cannot start below the number of label classes already pinned
  std::vector<int> distinct = labels;
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (k_min == 0) k_min = std::max<std::size_t>(2, distinct.size());

  const std::size_t k_hat = mgcd::estimate_k(z, labeled_idx, labels, k_min, k_max,
                                             opts.seed_set ? opts.seed : 0);

  json doc;
  doc["k_hat"] = k_hat;
  doc["k_min"] = k_min;
  doc["k_max"] = k_max;
  doc["n_samples"] = ds.size();
  doc["n_labeled"] = labeled_idx.size();
  const fs::path out = opts.out_dir.empty() ? fs::path(".") : fs::path(opts.out_dir);
  fs::create_directories(out);
  std::ofstream file(out / "k_estimate.json");
  file << doc.dump(2) << "\n";
  if (!opts.quiet) std::cout << "k_hat=" << k_hat << "\n";
  return 0;
}

int run_verify_theory(const CommonOpts& opts, const std::string& embeddings_path) {
  mgcd::DenseMatrix z;
  if (!embeddings_path.empty()) {
    z = mgcd::load_embeddings(embeddings_path);
  } else {
    // self-check mode: a uniform-on-sphere sample large enough for every
    // claim, including the concentration band
    std::mt19937_64 gen(opts.seed_set ? opts.seed : 0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    z = mgcd::DenseMatrix(256, 256);
    for (std::size_t i = 0; i < 256; ++i) {
      double norm2 = 0.0;
      for (std::size_t j = 0; j < 256; ++j) {
        z(i, j) = gauss(gen);
        norm2 += z(i, j) * z(i, j);
      }
      const double norm = std::sqrt(norm2);
      for (std::size_t j = 0; j < 256; ++j) z(i, j) /= norm;
    }
  }

  const mgcd::TheoryReport report = mgcd::verify_theory(z);
  json doc;
  doc["all_required_pass"] = report.all_required_pass;
  doc["checks"] = json::array();
  for (const mgcd::TheoryCheck& check : report.checks) {
    json entry;
    entry["claim"] = check.claim;
    entry["pass"] = check.pass;
    entry["required"] = check.required;
    entry["observed"] = check.observed;
    entry["bound"] = check.bound;
    entry["detail"] = check.detail;
    doc["checks"].push_back(entry);
    if (!opts.quiet) {
      std::cout << (check.pass ? "PASS " : "FAIL ") << check.claim
                << (check.required ? "" : " (informational)")
                << ": observed " << check.observed << ", bound " << check.bound;
      if (!check.detail.empty()) std::cout << " (" << check.detail << ")";
      std::cout << "\n";
    }
  }
  if (!opts.out_dir.empty()) {
    fs::create_directories(opts.out_dir);
    std::ofstream file(fs::path(opts.out_dir) / "theory.json");
    file << doc.dump(2) << "\n";
  }
  return report.all_required_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"manifold-capacity category discovery toolkit"};
  app.require_subcommand(1);

  CommonOpts gen_opts, train_opts, eval_opts, diag_opts, estk_opts, theory_opts;
  std::string eval_checkpoint, eval_data;
  std::string diag_embeddings;
  std::string estk_data, estk_embeddings;
  std::size_t estk_kmin = 0, estk_kmax = 0;
  std::string theory_embeddings;

  CLI::App* gen = app.add_subcommand("gen-data", "write a synthetic dataset");
  add_common(gen, gen_opts);

  CLI::App* train = app.add_subcommand("train", "run the training loop");
  add_common(train, train_opts);

  CLI::App* eval = app.add_subcommand("eval", "score a checkpoint on a dataset");
  add_common(eval, eval_opts, false);
  eval->add_option("--checkpoint", eval_checkpoint, "checkpoint directory")
      ->required();
  eval->add_option("--data", eval_data, "dataset directory")->required();

  CLI::App* diag = app.add_subcommand("diagnose", "spectral report of an embedding file");
  add_common(diag, diag_opts, false);
  diag->add_option("--embeddings", diag_embeddings, "embedding CSV")->required();

  CLI::App* estk = app.add_subcommand("estimate-k", "estimate the class count");
  add_common(estk, estk_opts, false);
  estk->add_option("--data", estk_data, "dataset directory")->required();
  estk->add_option("--embeddings", estk_embeddings,
                   "embedding CSV (default: normalized mean patches)");
  estk->add_option("--k-min", estk_kmin, "smallest candidate (default: label classes)");
  estk->add_option("--k-max", estk_kmax, "largest candidate (default: 2x classes)");

  CLI::App* theory = app.add_subcommand("verify-theory", "check the structural claims");
  add_common(theory, theory_opts, false);
  theory->add_option("--embeddings", theory_embeddings,
                     "embedding CSV (default: a fresh uniform sphere sample)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << json{{"error", e.what()}}.dump() << "\n";
    return 1;
  }

  try {
    if (gen->parsed()) return run_gen_data(gen_opts);
    if (train->parsed()) return run_train(train_opts);
    if (eval->parsed()) return run_eval(eval_opts, eval_checkpoint, eval_data);
    if (diag->parsed()) return run_diagnose(diag_opts, diag_embeddings);
    if (estk->parsed())
      return run_estimate_k(estk_opts, estk_data, estk_embeddings, estk_kmin,
                            estk_kmax);
    if (theory->parsed()) return run_verify_theory(theory_opts, theory_embeddings);
  } catch (const std::exception& e) {
    std::cerr << json{{"error", e.what()}}.dump() << "\n";
    return 1;
  }
  return 0;
}

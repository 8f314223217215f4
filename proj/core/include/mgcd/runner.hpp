#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mgcd/cluster.hpp"
#include "mgcd/data.hpp"
#include "mgcd/losses.hpp"
#include "mgcd/model.hpp"
#include "mgcd/spectral.hpp"

// the training loop and its bookkeeping: config files, Adam updates, two-view
// batches, per-interval diagnostics, and reproducible metrics output.

namespace mgcd {

struct RunConfig {
  SynthConfig synth;
  LossConfig loss;
  std::size_t d_model = 16;
  std::size_t d_embed = 32;  // projection output width
  std::size_t epochs = 200;
  std::size_t batch_size = 48;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  std::uint64_t seed = 0;
  std::string output_dir = "run-out";
  std::size_t diagnostics_every = 20;
  // divide the nuclear-norm term by the unlabeled row count, so its weight
  // does not grow with batch size
  bool mtmc_per_sample = false;
};

// throws invalid_argument on bad synth or loss blocks, batch_size < 4,
// zero epochs/dims/interval, non-finite optimizer reals, betas outside
// [0, 1), or a mean-shift neighborhood wider than the batch.
void validate_run_config(const RunConfig& cfg);

// flat JSON object. nested blocks use the synth_ and loss_ prefixes
// (synth_seed and seed stay distinct). unknown keys, wrong types, and
// malformed values are rejected with the offending key named.
RunConfig load_run_config(const std::string& path);
void save_run_config(const RunConfig& cfg, const std::string& path);

struct MetricsRow {
  std::size_t epoch = 0;
  double loss_total = 0.0;
  double loss_base = 0.0;
  double loss_mtmc = 0.0;
  double entropy = 0.0;
  double effective_rank = 0.0;
  double frobenius_to_identity = 0.0;
  double nuclear_norm = 0.0;
  double acc_all = 0.0;
  double acc_old = 0.0;
  double acc_new = 0.0;
};

void write_metrics(const std::vector<MetricsRow>& rows, const std::string& path);

struct TrainResult {
  std::vector<MetricsRow> history;
  EncoderParams params;
  PrototypeBank bank;  // empty unless the parametric base ran
};

// runs the full loop on a freshly generated synthetic dataset and writes
// config.json, dataset/, metrics.csv, and checkpoint/ under cfg.output_dir.
// loss rows satisfy loss_total = loss_base + lambda_mtmc * loss_mtmc exactly;
// a non-finite loss aborts with a divergence dump next to the metrics.
TrainResult train(const RunConfig& cfg);

struct EvalReport {
  double acc_all = 0.0;
  double acc_old = 0.0;
  double acc_new = 0.0;
  std::size_t k = 0;
  std::size_t n_scored = 0;  // unlabeled samples entering the accuracy
};

// embeds the canonical patches, clusters with the labeled rows pinned, and
// scores accuracy over the unlabeled pool under one global matching.
EvalReport evaluate(const EncoderParams& params, const Dataset& ds,
                    std::uint64_t seed);

void write_eval_report(const EvalReport& report, const std::string& path);

// encoder embeddings of the canonical patches, one unit row per sample
DenseMatrix embed_dataset(const EncoderParams& params, const Dataset& ds);

}  // namespace mgcd

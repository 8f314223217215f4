#include "mgcd/runner.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace mgcd {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Adam over a fixed set of parameter matrices; state buffers are indexed by
// registration order
class Adam {
 public:
  Adam(double lr, double beta1, double beta2) : lr_(lr), b1_(beta1), b2_(beta2) {}

  void track(DenseMatrix* param) {
    params_.push_back(param);
    m_.emplace_back(param->rows(), param->cols());
    v_.emplace_back(param->rows(), param->cols());
  }

  void step(const std::vector<const DenseMatrix*>& grads) {
    if (grads.size() != params_.size())
      throw std::logic_error("gradient count mismatch");
    ++t_;
    const double corr1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double corr2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t p = 0; p < params_.size(); ++p) {
      DenseMatrix& w = *params_[p];
      const DenseMatrix& g = *grads[p];
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = g.values()[i];
        double& mi = m_[p].data()[i];
        double& vi = v_[p].data()[i];
        mi = b1_ * mi + (1.0 - b1_) * gi;
        vi = b2_ * vi + (1.0 - b2_) * gi * gi;
        w.data()[i] -= lr_ * (mi / corr1) / (std::sqrt(vi / corr2) + 1e-8);
      }
    }
  }

 private:
  double lr_, b1_, b2_;
  std::size_t t_ = 0;
  std::vector<DenseMatrix*> params_;
  std::vector<DenseMatrix> m_, v_;
};

const char* base_name(BaseLoss base) {
  switch (base) {
    case BaseLoss::GCD: return "gcd";
    case BaseLoss::SIMGCD: return "simgcd";
    case BaseLoss::CMS: return "cms";
  }
  throw std::logic_error("unreachable");
}

BaseLoss base_from_name(const std::string& name) {
  if (name == "gcd") return BaseLoss::GCD;
  if (name == "simgcd") return BaseLoss::SIMGCD;
  if (name == "cms") return BaseLoss::CMS;
  throw std::invalid_argument("config key loss_base: unknown value '" + name + "'");
}

// strict typed readers, each names the key it rejects
std::size_t as_count(const json& v, const std::string& key) {
  if (!v.is_number_integer() || v.get<long long>() < 0)
    throw std::invalid_argument("config key " + key + ": expected a non-negative integer");
  return v.get<std::size_t>();
}

std::uint64_t as_seed(const json& v, const std::string& key) {
  if (!v.is_number_integer() || v.get<long long>() < 0)
    throw std::invalid_argument("config key " + key + ": expected a non-negative integer");
  return v.get<std::uint64_t>();
}

double as_real(const json& v, const std::string& key) {
  if (!v.is_number())
    throw std::invalid_argument("config key " + key + ": expected a number");
  return v.get<double>();
}

bool as_flag(const json& v, const std::string& key) {
  if (!v.is_boolean())
    throw std::invalid_argument("config key " + key + ": expected a boolean");
  return v.get<bool>();
}

std::string as_text(const json& v, const std::string& key) {
  if (!v.is_string())
    throw std::invalid_argument("config key " + key + ": expected a string");
  return v.get<std::string>();
}

struct BatchTensors {
  std::vector<int> labels;
  std::vector<std::uint8_t> is_labeled;
  std::vector<std::size_t> unlabeled_rows;
  bool has_labeled_pair = false;
};

BatchTensors batch_tensors(const Dataset& ds, const std::vector<std::size_t>& ids) {
  BatchTensors t;
  for (std::size_t row = 0; row < ids.size(); ++row) {
    const std::size_t i = ids[row];
    t.labels.push_back(ds.samples.labels[i]);
    t.is_labeled.push_back(ds.samples.is_labeled[i]);
    if (!ds.samples.is_labeled[i]) t.unlabeled_rows.push_back(row);
  }
  for (std::size_t a = 0; a < t.labels.size() && !t.has_labeled_pair; ++a)
    for (std::size_t b = a + 1; b < t.labels.size(); ++b)
      if (t.is_labeled[a] && t.is_labeled[b] && t.labels[a] == t.labels[b]) {
        t.has_labeled_pair = true;
        break;
      }
  return t;
}

void dump_divergence(const RunConfig& cfg, std::size_t epoch, std::size_t batch,
                     double base_val, double mtmc_val) {
  json dump;
  dump["epoch"] = epoch;
  dump["batch"] = batch;
  dump["loss_base"] = base_val;
  dump["loss_mtmc"] = mtmc_val;
  dump["lambda_mtmc"] = cfg.loss.lambda_mtmc;
  dump["lr"] = cfg.lr;
  std::ofstream out(fs::path(cfg.output_dir) / "divergence.json");
  out << dump.dump(2) << "\n";
}

}  // namespace

void validate_run_config(const RunConfig& cfg) {
  validate_synth_config(cfg.synth);
  validate_loss_config(cfg.loss);
  if (cfg.batch_size < 4)
    throw std::invalid_argument("batch_size must be at least 4");
  if (cfg.epochs == 0) throw std::invalid_argument("epochs must be positive");
  if (cfg.d_model == 0 || cfg.d_embed == 0)
    throw std::invalid_argument("model dimensions must be positive");
  if (!(cfg.lr >= 0.0) || !std::isfinite(cfg.lr))
    throw std::invalid_argument("lr must be a non-negative real");
  if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0) || !(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0))
    throw std::invalid_argument("betas must lie in [0, 1)");
  if (cfg.diagnostics_every == 0)
    throw std::invalid_argument("diagnostics_every must be positive");
  if (cfg.output_dir.empty())
    throw std::invalid_argument("output_dir must not be empty");
  if (cfg.loss.base == BaseLoss::CMS && cfg.loss.k_neighbors > cfg.batch_size)
    throw std::invalid_argument("k_neighbors cannot exceed batch_size");
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw std::runtime_error("config parse error in " + path + ": " + e.what());
  }
  if (!doc.is_object()) throw std::invalid_argument("config must be a JSON object");

  RunConfig cfg;
  for (const auto& [key, value] : doc.items()) {
    if (key == "synth_n_classes_known") cfg.synth.n_classes_known = as_count(value, key);
    else if (key == "synth_n_classes_novel") cfg.synth.n_classes_novel = as_count(value, key);
    else if (key == "synth_samples_per_class") cfg.synth.samples_per_class = as_count(value, key);
    else if (key == "synth_patches_per_sample") cfg.synth.patches_per_sample = as_count(value, key);
    else if (key == "synth_input_dim") cfg.synth.input_dim = as_count(value, key);
    else if (key == "synth_class_subspace_dim") cfg.synth.class_subspace_dim = as_count(value, key);
    else if (key == "synth_noise_sigma") cfg.synth.noise_sigma = as_real(value, key);
    else if (key == "synth_labeled_fraction") cfg.synth.labeled_fraction = as_real(value, key);
    else if (key == "synth_seed") cfg.synth.seed = as_seed(value, key);
    else if (key == "loss_tau") cfg.loss.tau = as_real(value, key);
    else if (key == "loss_lambda_bal") cfg.loss.lambda_bal = as_real(value, key);
    else if (key == "loss_lambda_mtmc") cfg.loss.lambda_mtmc = as_real(value, key);
    else if (key == "loss_lambda_e") cfg.loss.lambda_e = as_real(value, key);
    else if (key == "loss_k_neighbors") cfg.loss.k_neighbors = as_count(value, key);
    else if (key == "loss_base") cfg.loss.base = base_from_name(as_text(value, key));
    else if (key == "loss_denominator_excludes_positive")
      cfg.loss.denominator_excludes_positive = as_flag(value, key);
    else if (key == "loss_mtmc_penalize_norm") cfg.loss.mtmc_penalize_norm = as_flag(value, key);
    else if (key == "loss_mtmc_truncate_rank99") cfg.loss.mtmc_truncate_rank99 = as_flag(value, key);
    else if (key == "d_model") cfg.d_model = as_count(value, key);
    else if (key == "d_embed") cfg.d_embed = as_count(value, key);
    else if (key == "epochs") cfg.epochs = as_count(value, key);
    else if (key == "batch_size") cfg.batch_size = as_count(value, key);
    else if (key == "lr") cfg.lr = as_real(value, key);
    else if (key == "beta1") cfg.beta1 = as_real(value, key);
    else if (key == "beta2") cfg.beta2 = as_real(value, key);
    else if (key == "seed") cfg.seed = as_seed(value, key);
    else if (key == "output_dir") cfg.output_dir = as_text(value, key);
    else if (key == "diagnostics_every") cfg.diagnostics_every = as_count(value, key);
    else if (key == "mtmc_per_sample") cfg.mtmc_per_sample = as_flag(value, key);
    else throw std::invalid_argument("unknown config key: " + key);
  }
  validate_run_config(cfg);
  return cfg;
}

void save_run_config(const RunConfig& cfg, const std::string& path) {
  json doc;
  doc["synth_n_classes_known"] = cfg.synth.n_classes_known;
  doc["synth_n_classes_novel"] = cfg.synth.n_classes_novel;
  doc["synth_samples_per_class"] = cfg.synth.samples_per_class;
  doc["synth_patches_per_sample"] = cfg.synth.patches_per_sample;
  doc["synth_input_dim"] = cfg.synth.input_dim;
  doc["synth_class_subspace_dim"] = cfg.synth.class_subspace_dim;
  doc["synth_noise_sigma"] = cfg.synth.noise_sigma;
  doc["synth_labeled_fraction"] = cfg.synth.labeled_fraction;
  doc["synth_seed"] = cfg.synth.seed;
  doc["loss_tau"] = cfg.loss.tau;
  doc["loss_lambda_bal"] = cfg.loss.lambda_bal;
  doc["loss_lambda_mtmc"] = cfg.loss.lambda_mtmc;
  doc["loss_lambda_e"] = cfg.loss.lambda_e;
  doc["loss_k_neighbors"] = cfg.loss.k_neighbors;
  doc["loss_base"] = base_name(cfg.loss.base);
  doc["loss_denominator_excludes_positive"] = cfg.loss.denominator_excludes_positive;
  doc["loss_mtmc_penalize_norm"] = cfg.loss.mtmc_penalize_norm;
  doc["loss_mtmc_truncate_rank99"] = cfg.loss.mtmc_truncate_rank99;
  doc["d_model"] = cfg.d_model;
  doc["d_embed"] = cfg.d_embed;
  doc["epochs"] = cfg.epochs;
  doc["batch_size"] = cfg.batch_size;
  doc["lr"] = cfg.lr;
  doc["beta1"] = cfg.beta1;
  doc["beta2"] = cfg.beta2;
  doc["seed"] = cfg.seed;
  doc["output_dir"] = cfg.output_dir;
  doc["diagnostics_every"] = cfg.diagnostics_every;
  doc["mtmc_per_sample"] = cfg.mtmc_per_sample;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write config file: " + path);
  out << doc.dump(2) << "\n";
  out.flush();
  if (!out) throw std::runtime_error("failed writing config file: " + path);
}

void write_metrics(const std::vector<MetricsRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write metrics file: " + path);
  out << "epoch,loss_total,loss_base,loss_mtmc,entropy,effective_rank,"
         "frobenius_to_identity,nuclear_norm,acc_all,acc_old,acc_new\n";
  for (const MetricsRow& r : rows) {
    out << r.epoch << ',' << fmt(r.loss_total) << ',' << fmt(r.loss_base) << ','
        << fmt(r.loss_mtmc) << ',' << fmt(r.entropy) << ',' << fmt(r.effective_rank)
        << ',' << fmt(r.frobenius_to_identity) << ',' << fmt(r.nuclear_norm) << ','
        << fmt(r.acc_all) << ',' << fmt(r.acc_old) << ',' << fmt(r.acc_new) << "\n";
  }
  out.flush();
  if (!out) throw std::runtime_error("failed writing metrics file: " + path);
}

DenseMatrix embed_dataset(const EncoderParams& params, const Dataset& ds) {
  Tape tape;
  const EncoderNodes nodes = register_params(tape, params);
  const ClassTokenBatch out = encode(tape, ds.samples, nodes);
  return tape.value(out.z);
}

EvalReport evaluate(const EncoderParams& params, const Dataset& ds,
                    std::uint64_t seed) {
  const DenseMatrix z = embed_dataset(params, ds);
  const std::size_t k_total = ds.known_classes.size() + ds.novel_classes.size();

  const std::vector<std::size_t> labeled_idx = ds.labeled_indices();
  std::vector<int> pin_labels(labeled_idx.size());
  for (std::size_t i = 0; i < labeled_idx.size(); ++i)
    pin_labels[i] = ds.samples.labels[labeled_idx[i]];
  const ClusterResult clusters =
      ss_kmeans(z, labeled_idx, pin_labels, k_total, 300, seed);

  // GCD protocol: score the unlabeled pool only, old/new split by true class
  std::vector<int> pred, truth;
  std::vector<std::uint8_t> known;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.samples.is_labeled[i]) continue;
    pred.push_back(clusters.assignments[i]);
    truth.push_back(ds.truth[i]);
    known.push_back(ds.samples.is_known_class[i]);
  }
  const ClusterAccuracy acc = cluster_accuracy(pred, truth, known);

  EvalReport report;
  report.acc_all = acc.all;
  report.acc_old = acc.old_classes;
  report.acc_new = acc.new_classes;
  report.k = k_total;
  report.n_scored = pred.size();
  return report;
}

void write_eval_report(const EvalReport& report, const std::string& path) {
  json doc;
  doc["acc_all"] = report.acc_all;
  doc["acc_old"] = report.acc_old;
  doc["acc_new"] = report.acc_new;
  doc["k"] = report.k;
  doc["n_scored"] = report.n_scored;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write eval report: " + path);
  out << doc.dump(2) << "\n";
  out.flush();
  if (!out) throw std::runtime_error("failed writing eval report: " + path);
}

TrainResult train(const RunConfig& cfg) {
  validate_run_config(cfg);
  fs::create_directories(cfg.output_dir);
  save_run_config(cfg, (fs::path(cfg.output_dir) / "config.json").string());

  const Dataset ds = gen_synthetic(cfg.synth);
  save_dataset(ds, (fs::path(cfg.output_dir) / "dataset").string());

  TrainResult result;
  result.params =
      init_encoder(cfg.synth.input_dim, cfg.d_model, cfg.d_embed, cfg.seed);
  const std::size_t k_total = cfg.synth.n_classes_known + cfg.synth.n_classes_novel;
  const bool parametric = cfg.loss.base == BaseLoss::SIMGCD;
  if (parametric)
    result.bank = init_prototypes(k_total, cfg.d_model, cfg.seed ^ 0x70726f746fULL);

  Adam opt(cfg.lr, cfg.beta1, cfg.beta2);
  opt.track(&result.params.embed_w);
  opt.track(&result.params.wq);
  opt.track(&result.params.wk);
  opt.track(&result.params.wv);
  opt.track(&result.params.cls0);
  opt.track(&result.params.proj_w1);
  opt.track(&result.params.proj_w2);
  if (parametric) opt.track(&result.bank.c);

  std::mt19937_64 run_rng(cfg.seed);
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  const fs::path metrics_path = fs::path(cfg.output_dir) / "metrics.csv";

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), run_rng);

    double base_acc = 0.0, mtmc_acc = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      if (stop - start < 4) break;  // a tail too small for negatives is dropped
      const std::vector<std::size_t> ids(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(stop));
      const std::uint64_t view_seed_a = run_rng();
      const std::uint64_t view_seed_b = run_rng();

      const SampleBatch view_a = draw_view(ds, ids, view_seed_a);
      const BatchTensors tensors = batch_tensors(ds, ids);

      Tape tape;
      const EncoderNodes nodes = register_params(tape, result.params);
      const ClassTokenBatch enc_a = encode(tape, view_a, nodes);

      NodeId prototypes = 0;
      NodeId base_node = 0;
      if (cfg.loss.base == BaseLoss::CMS) {
        // the mean-shifted table replaces the second view entirely
        const NodeId shifted = cms_mean_shift_node(tape, enc_a.z, cfg.loss.k_neighbors);
        if (tensors.has_labeled_pair) {
          base_node = cms_loss(tape, enc_a.z, shifted, tensors.labels,
                               tensors.is_labeled, cfg.loss);
        } else {
          base_node = tape.scale(
              selfsup_contrastive(tape, enc_a.z, shifted, cfg.loss.tau,
                                  cfg.loss.denominator_excludes_positive),
              1.0 - cfg.loss.lambda_bal);
        }
      } else {
        const SampleBatch view_b = draw_view(ds, ids, view_seed_b);
        const ClassTokenBatch enc_b = encode(tape, view_b, nodes);
        if (parametric) {
          prototypes = tape.input(result.bank.c);
          base_node = simgcd_losses(tape, enc_a.h, enc_b.h, tensors.labels,
                                    tensors.is_labeled, prototypes, cfg.loss);
        } else if (tensors.has_labeled_pair) {
          base_node = gcd_loss(tape, enc_a.z, enc_b.z, tensors.labels,
                               tensors.is_labeled, cfg.loss);
        } else {
          // no supervised pair in this batch: its term drops, the balance
          // weight on the self-supervised term stays
          base_node = tape.scale(
              selfsup_contrastive(tape, enc_a.z, enc_b.z, cfg.loss.tau,
                                  cfg.loss.denominator_excludes_positive),
              1.0 - cfg.loss.lambda_bal);
        }
      }

      // the capacity term sees the unlabeled rows of the first view; fewer
      // than two rows cannot spread and contribute nothing
      double mtmc_val = 0.0;
      NodeId total = base_node;
      if (cfg.loss.lambda_mtmc > 0.0 && tensors.unlabeled_rows.size() >= 2) {
        NodeId mtmc_node =
            mtmc_loss(tape, tape.row_select(enc_a.z, tensors.unlabeled_rows), cfg.loss);
        if (cfg.mtmc_per_sample)
          mtmc_node = tape.scale(
              mtmc_node, 1.0 / static_cast<double>(tensors.unlabeled_rows.size()));
        total = tape.add(base_node, tape.scale(mtmc_node, cfg.loss.lambda_mtmc));
        mtmc_val = tape.value(mtmc_node)(0, 0);
      }

      const double base_val = tape.value(base_node)(0, 0);
      if (!std::isfinite(base_val) || !std::isfinite(mtmc_val)) {
        dump_divergence(cfg, epoch, batches, base_val, mtmc_val);
        write_metrics(result.history, metrics_path.string());
        throw std::runtime_error("training diverged: non-finite loss at epoch " +
                                 std::to_string(epoch));
      }
      base_acc += base_val;
      mtmc_acc += mtmc_val;
      ++batches;

      tape.backward(total);
      std::vector<const DenseMatrix*> grads{
          &tape.grad(nodes.embed_w), &tape.grad(nodes.wq),      &tape.grad(nodes.wk),
          &tape.grad(nodes.wv),      &tape.grad(nodes.cls0),    &tape.grad(nodes.proj_w1),
          &tape.grad(nodes.proj_w2)};
      if (parametric) grads.push_back(&tape.grad(prototypes));
      opt.step(grads);
      if (parametric) result.bank.renormalize();
    }

    const bool log_now = epoch % cfg.diagnostics_every == 0 || epoch == cfg.epochs;
    if (!log_now) continue;

    MetricsRow row;
    row.epoch = epoch;
    row.loss_base = batches > 0 ? base_acc / static_cast<double>(batches) : 0.0;
    row.loss_mtmc = batches > 0 ? mtmc_acc / static_cast<double>(batches) : 0.0;
    row.loss_total = row.loss_base + cfg.loss.lambda_mtmc * row.loss_mtmc;

    // diagnostics run on the canonical patches of the full unlabeled pool
    const DenseMatrix z_all = embed_dataset(result.params, ds);
    std::vector<std::size_t> unlabeled;
    for (std::size_t i = 0; i < ds.size(); ++i)
      if (!ds.samples.is_labeled[i]) unlabeled.push_back(i);
    DenseMatrix z_u(unlabeled.size(), z_all.cols());
    for (std::size_t r = 0; r < unlabeled.size(); ++r)
      for (std::size_t c = 0; c < z_all.cols(); ++c) z_u(r, c) = z_all(unlabeled[r], c);
    const SpectralReport spectral = spectral_report(z_u);
    row.entropy = spectral.entropy;
    row.effective_rank = static_cast<double>(spectral.effective_rank_99);
    row.frobenius_to_identity = spectral.frobenius_to_identity;
    row.nuclear_norm = spectral.nuclear_norm;

    const std::vector<std::size_t> labeled_idx = ds.labeled_indices();
    std::vector<int> pin_labels(labeled_idx.size());
    for (std::size_t i = 0; i < labeled_idx.size(); ++i)
      pin_labels[i] = ds.samples.labels[labeled_idx[i]];
    const ClusterResult clusters =
        ss_kmeans(z_all, labeled_idx, pin_labels, k_total, 300, cfg.seed + epoch);
    std::vector<int> pred, truth;
    std::vector<std::uint8_t> known;
    for (std::size_t i : unlabeled) {
      pred.push_back(clusters.assignments[i]);
      truth.push_back(ds.truth[i]);
      known.push_back(ds.samples.is_known_class[i]);
    }
    const ClusterAccuracy acc = cluster_accuracy(pred, truth, known);
    row.acc_all = acc.all;
    row.acc_old = acc.old_classes;
    row.acc_new = acc.new_classes;

    result.history.push_back(row);
  }

  write_metrics(result.history, metrics_path.string());
  save_checkpoint(result.params, (fs::path(cfg.output_dir) / "checkpoint").string());
  if (parametric)
    save_embeddings(result.bank.c,
                    (fs::path(cfg.output_dir) / "checkpoint" / "prototypes.csv").string());
  return result;
}

}  // namespace mgcd

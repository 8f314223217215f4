#include "mgcd/losses.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

namespace mgcd {

namespace {

void check_pair_shapes(const Tape& tape, NodeId z, NodeId z_prime) {
  const Shape a = tape.shape(z);
  const Shape b = tape.shape(z_prime);
  if (!(a == b)) throw std::invalid_argument("view shapes differ");
  if (a.cols == 0) throw std::invalid_argument("embeddings have zero columns");
}

// B x 1 column of the diagonal of a square node
NodeId diagonal_column(Tape& tape, NodeId square, std::size_t n) {
  const NodeId mask = tape.input(DenseMatrix::identity(n));
  return tape.row_sum(tape.elem_mul(square, mask));
}

// similarity logits between the two views, scaled by 1/tau
NodeId pair_logits(Tape& tape, NodeId z, NodeId z_prime, double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau))
    throw std::invalid_argument("temperature must be positive");
  return tape.scale(tape.matmul(z, tape.transpose(z_prime)), 1.0 / tau);
}

std::vector<std::size_t> labeled_rows(const std::vector<std::uint8_t>& is_labeled) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < is_labeled.size(); ++i)
    if (is_labeled[i]) idx.push_back(i);
  return idx;
}

// plain row softmax for values that must not receive gradients
DenseMatrix softmax_rows(const DenseMatrix& logits) {
  DenseMatrix out(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    double hi = logits(i, 0);
    for (std::size_t j = 1; j < logits.cols(); ++j) hi = std::max(hi, logits(i, j));
    double total = 0.0;
    for (std::size_t j = 0; j < logits.cols(); ++j) {
      out(i, j) = std::exp(logits(i, j) - hi);
      total += out(i, j);
    }
    for (std::size_t j = 0; j < logits.cols(); ++j) out(i, j) /= total;
  }
  return out;
}

// neighborhood row indices: {i} union top-k rows by dot product, candidates
// include i itself, ties broken toward the lower index
std::vector<std::vector<std::size_t>> neighbor_sets(const DenseMatrix& z,
                                                    std::size_t k) {
  const std::size_t n = z.rows();
  if (k < 1) throw std::invalid_argument("neighborhood size must be at least 1");
  if (k > n) throw std::invalid_argument("neighborhood size exceeds the batch");
  std::vector<std::vector<std::size_t>> sets(n);
  std::vector<std::size_t> order(n);
  std::vector<double> dots(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double d = 0.0;
      for (std::size_t c = 0; c < z.cols(); ++c) d += z(i, c) * z(j, c);
      dots[j] = d;
    }
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (dots[a] != dots[b]) return dots[a] > dots[b];
      return a < b;
    });
    std::vector<std::uint8_t> member(n, 0);
    member[i] = 1;
    for (std::size_t r = 0; r < k; ++r) member[order[r]] = 1;
    for (std::size_t j = 0; j < n; ++j)
      if (member[j]) sets[i].push_back(j);
  }
  return sets;
}

DenseMatrix neighbor_selection(const DenseMatrix& z, std::size_t k) {
  const std::vector<std::vector<std::size_t>> sets = neighbor_sets(z, k);
  DenseMatrix s(z.rows(), z.rows());
  for (std::size_t i = 0; i < sets.size(); ++i)
    for (std::size_t j : sets[i]) s(i, j) = 1.0;
  return s;
}

}  // namespace

void validate_loss_config(const LossConfig& cfg) {
  if (!(cfg.tau > 0.0) || !std::isfinite(cfg.tau))
    throw std::invalid_argument("tau must be positive");
  if (!(cfg.lambda_bal >= 0.0 && cfg.lambda_bal <= 1.0))
    throw std::invalid_argument("lambda_bal must lie in [0, 1]");
  if (!(cfg.lambda_mtmc >= 0.0) || !std::isfinite(cfg.lambda_mtmc))
    throw std::invalid_argument("lambda_mtmc must be non-negative");
  if (!(cfg.lambda_e >= 0.0) || !std::isfinite(cfg.lambda_e))
    throw std::invalid_argument("lambda_e must be non-negative");
  if (cfg.k_neighbors < 1)
    throw std::invalid_argument("k_neighbors must be at least 1");
}

void PrototypeBank::renormalize() {
  for (std::size_t i = 0; i < c.rows(); ++i) {
    double norm2 = 0.0;
    for (std::size_t j = 0; j < c.cols(); ++j) norm2 += c(i, j) * c(i, j);
    const double norm = std::sqrt(norm2);
    if (norm < 1e-12) throw std::runtime_error("prototype collapsed to zero");
    for (std::size_t j = 0; j < c.cols(); ++j) c(i, j) /= norm;
  }
}

PrototypeBank init_prototypes(std::size_t k_total, std::size_t d_model,
                              std::uint64_t seed) {
  if (k_total == 0 || d_model == 0)
    throw std::invalid_argument("prototype bank needs positive dimensions");
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  PrototypeBank bank{DenseMatrix(k_total, d_model)};
  for (std::size_t i = 0; i < k_total; ++i)
    for (std::size_t j = 0; j < d_model; ++j) bank.c(i, j) = gauss(gen);
  bank.renormalize();
  return bank;
}

NodeId selfsup_contrastive(Tape& tape, NodeId z, NodeId z_prime, double tau,
                           bool exclude_positive) {
  check_pair_shapes(tape, z, z_prime);
  const std::size_t b = tape.shape(z).rows;
  if (b < 2) throw std::invalid_argument("contrastive batch needs at least two rows");

  const NodeId probs = tape.row_softmax(pair_logits(tape, z, z_prime, tau));
  const NodeId diag = diagonal_column(tape, probs, b);
  const NodeId log_pos = tape.sum(tape.log(diag));
  if (!exclude_positive) return tape.scale(log_pos, -1.0 / static_cast<double>(b));

  // dropping the positive from the denominator rescales each row's mass by
  // 1 - P_ii, so the per-row term becomes log P_ii - log(1 - P_ii)
  const NodeId rest = tape.add_scalar(tape.scale(diag, -1.0), 1.0);
  const NodeId log_rest = tape.sum(tape.log(rest));
  return tape.scale(tape.subtract(log_rest, log_pos), 1.0 / static_cast<double>(b));
}

NodeId sup_contrastive(Tape& tape, NodeId z, NodeId z_prime,
                       const std::vector<int>& labels, double tau) {
  check_pair_shapes(tape, z, z_prime);
  const std::size_t b = tape.shape(z).rows;
  if (labels.size() != b) throw std::invalid_argument("labels length mismatch");
  if (b < 2) throw std::invalid_argument("contrastive batch needs at least two rows");

  std::vector<std::size_t> partners(b, 0);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < b; ++j)
      if (j != i && labels[j] == labels[i]) ++partners[i];
  std::size_t anchors = 0;
  for (std::size_t i = 0; i < b; ++i)
    if (partners[i] > 0) ++anchors;
  if (anchors == 0) throw std::invalid_argument("no anchor has a same-label partner");

  // positive weights fold both normalizers in; the denominator correction
  // log(1 - P_ii) enters once per counted anchor
  DenseMatrix pos_w(b, b);
  DenseMatrix anchor_w(b, 1);
  const double inv_anchors = 1.0 / static_cast<double>(anchors);
  for (std::size_t i = 0; i < b; ++i) {
    if (partners[i] == 0) continue;
    anchor_w(i, 0) = inv_anchors;
    const double w = inv_anchors / static_cast<double>(partners[i]);
    for (std::size_t j = 0; j < b; ++j)
      if (j != i && labels[j] == labels[i]) pos_w(i, j) = w;
  }

  const NodeId probs = tape.row_softmax(pair_logits(tape, z, z_prime, tau));
  const NodeId diag = diagonal_column(tape, probs, b);
  const NodeId rest = tape.add_scalar(tape.scale(diag, -1.0), 1.0);  // 1 - P_ii
  const NodeId pos_term = tape.sum(tape.elem_mul(tape.log(probs), tape.input(pos_w)));
  const NodeId den_term =
      tape.sum(tape.elem_mul(tape.log(rest), tape.input(anchor_w)));
  return tape.subtract(den_term, pos_term);
}

NodeId gcd_loss(Tape& tape, NodeId z, NodeId z_prime,
                const std::vector<int>& labels,
                const std::vector<std::uint8_t>& is_labeled,
                const LossConfig& cfg) {
  validate_loss_config(cfg);
  check_pair_shapes(tape, z, z_prime);
  const std::size_t b = tape.shape(z).rows;
  if (labels.size() != b || is_labeled.size() != b)
    throw std::invalid_argument("labels or mask length mismatch");

  if (cfg.lambda_bal == 0.0)
    return selfsup_contrastive(tape, z, z_prime, cfg.tau,
                               cfg.denominator_excludes_positive);

  const std::vector<std::size_t> idx = labeled_rows(is_labeled);
  if (idx.size() < 2)
    throw std::invalid_argument("supervised term needs at least two labeled rows");
  std::vector<int> sub_labels(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) sub_labels[i] = labels[idx[i]];
  const NodeId sup = sup_contrastive(tape, tape.row_select(z, idx),
                                     tape.row_select(z_prime, idx), sub_labels, cfg.tau);
  if (cfg.lambda_bal == 1.0) return sup;

  const NodeId selfsup = selfsup_contrastive(tape, z, z_prime, cfg.tau,
                                             cfg.denominator_excludes_positive);
  return tape.add(tape.scale(selfsup, 1.0 - cfg.lambda_bal),
                  tape.scale(sup, cfg.lambda_bal));
}

NodeId mtmc_loss(Tape& tape, NodeId z_unlabeled, const LossConfig& cfg) {
  const Shape s = tape.shape(z_unlabeled);
  if (s.rows < 2) {
    std::cerr << "warning: nuclear-norm term skipped, fewer than two unlabeled rows\n";
    return tape.input(DenseMatrix(1, 1));
  }
  const NodeId norm = cfg.mtmc_truncate_rank99 ? tape.nuclear_norm_rank99(z_unlabeled)
                                               : tape.nuclear_norm(z_unlabeled);
  return tape.scale(norm, cfg.mtmc_penalize_norm ? 1.0 : -1.0);
}

NodeId simgcd_losses(Tape& tape, NodeId h, NodeId h_prime,
                     const std::vector<int>& labels,
                     const std::vector<std::uint8_t>& is_labeled,
                     NodeId prototypes, const LossConfig& cfg) {
  check_pair_shapes(tape, h, h_prime);
  // the teacher posterior comes from the second view at half temperature and
  // carries no gradient, so it is computed outside the tape
  if (!(cfg.tau > 0.0)) throw std::invalid_argument("tau must be positive");
  const DenseMatrix teacher = softmax_rows(
      scale(matmul(tape.value(h_prime), transpose(tape.value(prototypes))), 2.0 / cfg.tau));
  return simgcd_losses(tape, h, teacher, labels, is_labeled, prototypes, cfg);
}

NodeId simgcd_losses(Tape& tape, NodeId h, const DenseMatrix& teacher_probs,
                     const std::vector<int>& labels,
                     const std::vector<std::uint8_t>& is_labeled,
                     NodeId prototypes, const LossConfig& cfg) {
  validate_loss_config(cfg);
  const Shape hs = tape.shape(h);
  const Shape cs = tape.shape(prototypes);
  if (cs.cols != hs.cols)
    throw std::invalid_argument("prototype width differs from the feature width");
  const std::size_t b = hs.rows;
  const std::size_t k = cs.rows;
  if (labels.size() != b || is_labeled.size() != b)
    throw std::invalid_argument("labels or mask length mismatch");
  if (teacher_probs.rows() != b || teacher_probs.cols() != k)
    throw std::invalid_argument("teacher posterior shape mismatch");
  for (std::size_t i = 0; i < b; ++i)
    if (is_labeled[i] && (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k))
      throw std::invalid_argument("label outside the prototype range");

  const NodeId logits = tape.scale(tape.matmul(h, tape.transpose(prototypes)), 1.0 / cfg.tau);
  const NodeId probs = tape.row_softmax(logits);
  const NodeId log_probs = tape.log(probs);
  const NodeId teacher_node = tape.input(teacher_probs);

  const double inv_b = 1.0 / static_cast<double>(b);
  NodeId total =
      tape.scale(tape.sum(tape.elem_mul(teacher_node, log_probs)), -inv_b);

  const std::vector<std::size_t> idx = labeled_rows(is_labeled);
  if (!idx.empty()) {
    DenseMatrix pick(b, k);
    const double w = 1.0 / static_cast<double>(idx.size());
    for (std::size_t i : idx) pick(i, static_cast<std::size_t>(labels[i])) = w;
    const NodeId ce = tape.scale(tape.sum(tape.elem_mul(log_probs, tape.input(pick))), -1.0);
    total = tape.add(total, ce);
  }

  if (cfg.lambda_e > 0.0) {
    DenseMatrix ones(1, b);
    for (std::size_t i = 0; i < b; ++i) ones(0, i) = 1.0;
    const NodeId ones_node = tape.input(ones);
    const NodeId mean_q =
        tape.scale(tape.add(tape.matmul(ones_node, probs),
                            tape.matmul(ones_node, teacher_node)),
                   0.5 * inv_b);
    // -H(q) = sum q log q, so adding lambda_e * sum q log q rewards entropy
    const NodeId neg_entropy = tape.sum(tape.elem_mul(mean_q, tape.log(mean_q)));
    total = tape.add(total, tape.scale(neg_entropy, cfg.lambda_e));
  }
  return total;
}

DenseMatrix cms_mean_shift(const DenseMatrix& z_all, std::size_t k) {
  if (z_all.rows() == 0) throw std::invalid_argument("empty embedding table");
  const std::vector<std::vector<std::size_t>> sets = neighbor_sets(z_all, k);
  DenseMatrix out(z_all.rows(), z_all.cols());
  for (std::size_t i = 0; i < z_all.rows(); ++i) {
    double norm2 = 0.0;
    for (std::size_t c = 0; c < z_all.cols(); ++c) {
      double acc = 0.0;
      for (std::size_t j : sets[i]) acc += z_all(j, c);
      out(i, c) = acc;
      norm2 += acc * acc;
    }
    const double norm = std::sqrt(norm2);
    if (norm < 1e-12) throw std::runtime_error("neighborhood sum collapsed to zero");
    for (std::size_t c = 0; c < z_all.cols(); ++c) out(i, c) /= norm;
  }
  return out;
}

NodeId cms_mean_shift_node(Tape& tape, NodeId z_all, std::size_t k) {
  const DenseMatrix& z = tape.value(z_all);
  if (z.rows() == 0) throw std::invalid_argument("empty embedding table");
  const NodeId selection = tape.input(neighbor_selection(z, k));
  return tape.l2_normalize_rows(tape.matmul(selection, z_all));
}

NodeId cms_loss(Tape& tape, NodeId z, NodeId shifted,
                const std::vector<int>& labels,
                const std::vector<std::uint8_t>& is_labeled,
                const LossConfig& cfg) {
  // the mean-shifted embedding stands in for the second view
  return gcd_loss(tape, z, shifted, labels, is_labeled, cfg);
}

}  // namespace mgcd

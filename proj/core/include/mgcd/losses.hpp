#pragma once

#include <cstdint>
#include <vector>

#include "mgcd/autodiff.hpp"
#include "mgcd/linalg.hpp"

// training objectives. every loss is built on a Tape and returns a scalar
// node, so gradients for any composition come from a single backward() call.

namespace mgcd {

enum class BaseLoss { GCD, SIMGCD, CMS };

struct LossConfig {
  double tau = 0.1;          // contrastive / classifier temperature
  double lambda_bal = 0.35;  // supervised-vs-selfsup balance in [0, 1]
  double lambda_mtmc = 0.1;  // weight of the nuclear-norm term
  double lambda_e = 1.0;     // entropy regularizer weight (parametric base)
  std::size_t k_neighbors = 4;  // mean-shift neighborhood size
  BaseLoss base = BaseLoss::GCD;

  // literal reading of the contrastive denominator: drop the positive term.
  bool denominator_excludes_positive = false;
  // flip the sign so the nuclear norm is penalized instead of promoted.
  bool mtmc_penalize_norm = false;
  // replace the full nuclear norm with its 99%-energy truncation.
  bool mtmc_truncate_rank99 = false;
};

// throws invalid_argument when tau <= 0, lambda_bal outside [0,1], negative
// weights, or k_neighbors < 1.
void validate_loss_config(const LossConfig& cfg);

// learnable class prototypes for the parametric base, one unit row per class
// (known and novel). the rows live outside the tape; register them as an
// input node each step and renormalize after the optimizer update.
struct PrototypeBank {
  DenseMatrix c;  // K x d_model, unit rows

  std::size_t size() const noexcept { return c.rows(); }
  void renormalize();  // rescale each row to unit norm; zero rows rejected
};

PrototypeBank init_prototypes(std::size_t k_total, std::size_t d_model,
                              std::uint64_t seed);

// InfoNCE over two views: -(1/B) sum_i log[ exp(z_i.z'_i/tau) /
// sum_n exp(z_i.z'_n/tau) ]. the denominator includes the positive unless
// exclude_positive is set. rows must be unit-norm; B < 2 is rejected.
NodeId selfsup_contrastive(Tape& tape, NodeId z, NodeId z_prime, double tau,
                           bool exclude_positive = false);

// supervised contrastive term over a fully labeled batch: anchors average
// log-probabilities of their same-label partners in the other view, with the
// denominator over all n != i. anchors without a partner are skipped; if no
// anchor has one the call is rejected.
NodeId sup_contrastive(Tape& tape, NodeId z, NodeId z_prime,
                       const std::vector<int>& labels, double tau);

// (1 - lambda_bal) * selfsup(all rows) + lambda_bal * supervised(labeled
// subset). the endpoints return the corresponding term exactly.
NodeId gcd_loss(Tape& tape, NodeId z, NodeId z_prime,
                const std::vector<int>& labels,
                const std::vector<std::uint8_t>& is_labeled,
                const LossConfig& cfg);

// negative nuclear norm of the unlabeled embedding block (sign and rank99
// truncation per cfg). fewer than two rows cannot spread, so the term is
// skipped: a zero constant is returned and a warning goes to stderr.
NodeId mtmc_loss(Tape& tape, NodeId z_unlabeled, const LossConfig& cfg);

// parametric base: labeled cross-entropy against prototype posteriors at
// temperature tau, self-distillation toward the second view's posterior at
// tau/2 (teacher detached), and an entropy reward on the mean posterior
// weighted by lambda_e. labels must index prototype rows.
NodeId simgcd_losses(Tape& tape, NodeId h, NodeId h_prime,
                     const std::vector<int>& labels,
                     const std::vector<std::uint8_t>& is_labeled,
                     NodeId prototypes, const LossConfig& cfg);

// variant with the teacher posterior supplied directly (B rows summing to
// one). the teacher is a constant of the graph either way; this form keeps
// it fixed across repeated evaluations, e.g. finite-difference probes.
NodeId simgcd_losses(Tape& tape, NodeId h, const DenseMatrix& teacher_probs,
                     const std::vector<int>& labels,
                     const std::vector<std::uint8_t>& is_labeled,
                     NodeId prototypes, const LossConfig& cfg);

// flat-kernel mean shift: each row moves to the normalized sum of its
// neighborhood {i} union top-k rows by dot product (self included in the
// candidates, ties broken by lower index). requires 1 <= k <= N.
DenseMatrix cms_mean_shift(const DenseMatrix& z_all, std::size_t k);

// tape variant: the neighborhoods are fixed from the forward values, the
// aggregation stays differentiable.
NodeId cms_mean_shift_node(Tape& tape, NodeId z_all, std::size_t k);

// the contrastive pair with the mean-shifted embedding standing in for the
// second view.
NodeId cms_loss(Tape& tape, NodeId z, NodeId shifted,
                const std::vector<int>& labels,
                const std::vector<std::uint8_t>& is_labeled,
                const LossConfig& cfg);

}  // namespace mgcd

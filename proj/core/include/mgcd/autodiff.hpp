#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "mgcd/linalg.hpp"

// reverse-mode autodiff over dense matrices. a Tape records every op in
// execution order; backward() replays the records once, newest first, and
// accumulates vector-Jacobian products into each node's grad buffer.
// define-by-run: build a fresh tape per training step.

namespace mgcd {

using NodeId = std::size_t;

struct Shape {
  std::size_t rows = 0;
  std::size_t cols = 0;
  bool operator==(const Shape&) const = default;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // leaf node: parameter or constant input
  NodeId input(DenseMatrix value);

  NodeId matmul(NodeId a, NodeId b);
  NodeId transpose(NodeId a);
  NodeId add(NodeId a, NodeId b);
  NodeId subtract(NodeId a, NodeId b);
  NodeId scale(NodeId a, double factor);
  NodeId add_scalar(NodeId a, double shift);
  NodeId elem_mul(NodeId a, NodeId b);
  NodeId exp(NodeId a);
  NodeId log(NodeId a);  // strictly positive input required
  NodeId relu(NodeId a);
  NodeId row_softmax(NodeId a);        // max-subtracted, numerically stable
  NodeId l2_normalize_rows(NodeId a);  // zero rows rejected
  NodeId sum(NodeId a);                // 1x1
  NodeId mean(NodeId a);               // 1x1
  NodeId row_sum(NodeId a);            // m x 1
  NodeId row_select(NodeId a, std::vector<std::size_t> rows);
  NodeId dot_rows(NodeId a, NodeId b);  // m x 1 of per-row dot products
  NodeId concat_rows(const std::vector<NodeId>& parts);

  // sum of singular values; backward is the subgradient u * vt at the forward
  // factorization. gradient checks must avoid repeated or near-zero spectra,
  // where the subgradient is not the derivative.
  NodeId nuclear_norm(NodeId a);

  // partial sum of singular values, truncated at the count of squared
  // singular values holding 99% of their total energy.
  NodeId nuclear_norm_rank99(NodeId a);

  const DenseMatrix& value(NodeId id) const;
  const DenseMatrix& grad(NodeId id) const;
  Shape shape(NodeId id) const;
  std::size_t size() const noexcept { return nodes_.size(); }

  // seeds d(loss)/d(loss) = 1 and accumulates gradients for every recorded
  // node exactly once. loss must be 1x1. calling twice without reset_grads
  // in between is rejected.
  void backward(NodeId loss);
  void reset_grads();

 private:
  struct Node {
    DenseMatrix value;
    DenseMatrix grad;
    std::function<void()> backprop;  // empty for leaves
  };

  NodeId push(DenseMatrix value, std::function<void()> backprop);
  const Node& node_at(NodeId id) const;

  std::vector<Node> nodes_;
  bool backward_ran_ = false;
};

}  // namespace mgcd

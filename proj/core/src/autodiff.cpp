#include "mgcd/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>

namespace mgcd {

namespace {

void require_nonempty(const DenseMatrix& v, const char* who) {
  if (v.rows() == 0 || v.cols() == 0) {
    throw std::invalid_argument(std::string(who) + ": empty operand");
  }
}

// smallest count of leading squared singular values holding 99% of the
// total squared energy; mirrors the spectral rank surrogate
std::size_t energy_rank99(const std::vector<double>& s) {
  double total = 0.0;
  for (double v : s) total += v * v;
  if (total <= 0.0) return 1;
  const double threshold = 0.99 * total * (1.0 - 1e-9);
  double cum = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    cum += s[i] * s[i];
    if (cum >= threshold) return i + 1;
  }
  return s.size();
}

}  // namespace

NodeId Tape::push(DenseMatrix value, std::function<void()> backprop) {
  const std::size_t r = value.rows(), c = value.cols();
  nodes_.push_back(Node{std::move(value), DenseMatrix(r, c), std::move(backprop)});
  return nodes_.size() - 1;
}

const Tape::Node& Tape::node_at(NodeId id) const {
  if (id >= nodes_.size()) throw std::invalid_argument("tape: node id out of range");
  return nodes_[id];
}

const DenseMatrix& Tape::value(NodeId id) const { return node_at(id).value; }
const DenseMatrix& Tape::grad(NodeId id) const { return node_at(id).grad; }

Shape Tape::shape(NodeId id) const {
  const Node& n = node_at(id);
  return Shape{n.value.rows(), n.value.cols()};
}

NodeId Tape::input(DenseMatrix value) {
  require_nonempty(value, "input");
  return push(std::move(value), nullptr);
}

NodeId Tape::matmul(NodeId a, NodeId b) {
  const DenseMatrix& va = node_at(a).value;
  const DenseMatrix& vb = node_at(b).value;
  DenseMatrix out = mgcd::matmul(va, vb);
  NodeId id = push(std::move(out), nullptr);
  nodes_[id].backprop = [this, a, b, id] {
    const DenseMatrix& g = nodes_[id].grad;
    const DenseMatrix ga = mgcd::matmul(g, mgcd::transpose(nodes_[b].value));
    const DenseMatrix gb = mgcd::matmul(mgcd::transpose(nodes_[a].value), g);
    for (std::size_t i = 0; i < ga.size(); ++i) nodes_[a].grad.data()[i] += ga.data()[i];
    for (std::size_t i = 0; i < gb.size(); ++i) nodes_[b].grad.data()[i] += gb.data()[i];
  };
  return id;
}

NodeId Tape::transpose(NodeId a) {
  NodeId id = push(mgcd::transpose(node_at(a).value), nullptr);
  nodes_[id].backprop = [this, a, id] {
    const DenseMatrix gt = mgcd::transpose(nodes_[id].grad);
    for (std::size_t i = 0; i < gt.size(); ++i) nodes_[a].grad.data()[i] += gt.data()[i];
  };
  return id;
}

NodeId Tape::add(NodeId a, NodeId b) {
  NodeId id = push(mgcd::add(node_at(a).value, node_at(b).value), nullptr);
  nodes_[id].backprop = [this, a, b, id] {
    const DenseMatrix& g = nodes_[id].grad;
    for (std::size_t i = 0; i < g.size(); ++i) {
      nodes_[a].grad.data()[i] += g.data()[i];
      nodes_[b].grad.data()[i] += g.data()[i];
    }
  };
  return id;
}

NodeId Tape::subtract(NodeId a, NodeId b) {
  NodeId id = push(mgcd::subtract(node_at(a).value, node_at(b).value), nullptr);
  nodes_[id].backprop = [this, a, b, id] {
    const DenseMatrix& g = nodes_[id].grad;
    for (std::size_t i = 0; i < g.size(); ++i) {
      nodes_[a].grad.data()[i] += g.data()[i];
      nodes_[b].grad.data()[i] -= g.data()[i];
    }
  };
  return id;
}

NodeId Tape::scale(NodeId a, double factor) {
  if (!std::isfinite(factor)) throw std::invalid_argument("scale: non-finite factor");
  NodeId id = push(mgcd::scale(node_at(a).value, factor), nullptr);
  nodes_[id].backprop = [this, a, id, factor] {
    const DenseMatrix& g = nodes_[id].grad;
    for (std::size_t i = 0; i < g.size(); ++i)
      nodes_[a].grad.data()[i] += factor * g.data()[i];
  };
  return id;
}

NodeId Tape::add_scalar(NodeId a, double shift) {
  if (!std::isfinite(shift)) throw std::invalid_argument("add_scalar: non-finite shift");
  const DenseMatrix& va = node_at(a).value;
  DenseMatrix out(va.rows(), va.cols());
  for (std::size_t i = 0; i < va.size(); ++i) out.data()[i] = va.data()[i] + shift;
  NodeId id = push(std::move(out), nullptr);
  nodes_[id].backprop = [this, a, id] {
    const DenseMatrix& g = nodes_[id].grad;
    for (std::size_t i = 0; i < g.size(); ++i) nodes_[a].grad.data()[i] += g.data()[i];
  };
  return id;
}

NodeId Tape::elem_mul(NodeId a, NodeId b) {
  const DenseMatrix& va = node_at(a).value;
  const DenseMatrix& vb = node_at(b).value;
  if (!va.same_shape(vb)) throw std::invalid_argument("elem_mul: shape mismatch");
  require_nonempty(va, "elem_mul");
  DenseMatrix out(va.rows(), va.cols());
  for (std::size_t i = 0; i < va.size(); ++i) out.data()[i] = va.data()[i] * vb.data()[i];
  NodeId id = push(std::move(out), nullptr);
  nodes_[id].backprop = [this, a, b, id] {
    const DenseMatrix& g = nodes_[id].grad;
    const DenseMatrix& va2 = nodes_[a].value;
    const DenseMatrix& vb2 = nodes_[b].value;
    for (std::size_t i = 0; i < g.size(); ++i) {
      nodes_[a].grad.data()[i] += g.data()[i] * vb2.data()[i];
      nodes_[b].grad.data()[i] += g.data()[i] * va2.data()[i];
    }
  };
  return id;
}

NodeId Tape::exp(NodeId a) {
  const DenseMatrix& va = node_at(a).value;
  require_nonempty(va, "exp");
  DenseMatrix out(va.rows(), va.cols());
  for (std::size_t i = 0; i < va.size(); ++i) out.data()[i] = std::exp(va.data()[i]);
  NodeId id = push(std::move(out), nullptr);
  nodes_[id].backprop = [this, a, id] {
    const DenseMatrix& g = nodes_[id].grad;
    const DenseMatrix& y = nodes_[id].value;
    for (std::size_t i = 0; i < g.size(); ++i)
      nodes_[a].grad.data()[i] += g.data()[i] * y.data()[i];
  };
  return id;
}

NodeId Tape::log(NodeId a) {
  const DenseMatrix& va = node_at(a).value;
  require_nonempty(va, "log");
  DenseMatrix out(va.rows(), va.cols());
  for (std::size_t i = 0; i < va.size(); ++i) {
    if (va.data()[i] <= 0.0) throw std::invalid_argument("log: non-positive input");
    out.data()[i] = std::log(va.data()[i]);
  }
  NodeId id = push(std::move(out), nullptr);
  nodes_[id].backprop = [this, a, id] {
    const DenseMatrix& g = nodes_[id].grad;
    const DenseMatrix& x = nodes_[a].value;
    for (std::size_t i = 0; i < g.size(); ++i)
      nodes_[a].grad.data()[i] += g.data()[i] / x.data()[i];
  };
  return id;
}

NodeId Tape::relu(NodeId a) {
  const DenseMatrix& va = node_at(a).value;
  require_nonempty(va, "relu");
  DenseMatrix out(va.rows(), va.cols());
  for (std::size_t i = 0; i < va.size(); ++i) out.data()[i] = std::max(0.0, va.data()[i]);
  NodeId id = push(std::move(out), nullptr);
  nodes_[id].backprop = [this, a, id] {
    const DenseMatrix& g = nodes_[id].grad;
    const DenseMatrix& x = nodes_[a].value;
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x.data()[i] > 0.0) nodes_[a].grad.data()[i] += g.data()[i];
  };
  return id;
}

NodeId Tape::row_softmax(NodeId a) {
  const DenseMatrix& va = node_at(a).value;
  require_nonempty(va, "row_softmax");
  DenseMatrix out(va.rows(), va.cols());
  for (std::size_t i = 0; i < va.rows(); ++i) {
    double hi = va(i, 0);
    for (std::size_t j = 1; j < va.cols(); ++j) hi = std::max(hi, va(i, j));
    double denom = 0.0;
    for (std::size_t j = 0; j < va.cols(); ++j) {
      out(i, j) = std::exp(va(i, j) - hi);
      denom += out(i, j);
    }
    for (std::size_t j = 0; j < va.cols(); ++j) out(i, j) /= denom;
  }
  NodeId id = push(std::move(out), nullptr);
  nodes_[id].backprop = [this, a, id] {
    // per row: dx = y .* (g - <g, y>)
    const DenseMatrix& g = nodes_[id].grad;
    const DenseMatrix& y = nodes_[id].value;
    for (std::size_t i = 0; i < y.rows(); ++i) {
      double inner = 0.0;
      for (std::size_t j = 0; j < y.cols(); ++j) inner += g(i, j) * y(i, j);
      for (std::size_t j = 0; j < y.cols(); ++j)
        nodes_[a].grad(i, j) += y(i, j) * (g(i, j) - inner);
    }
  };
  return id;
}

NodeId Tape::l2_normalize_rows(NodeId a) {
  const DenseMatrix& va = node_at(a).value;
  require_nonempty(va, "l2_normalize_rows");
  DenseMatrix out(va.rows(), va.cols());
  for (std::size_t i = 0; i < va.rows(); ++i) {
    double norm = 0.0;
    for (std::size_t j = 0; j < va.cols(); ++j) norm += va(i, j) * va(i, j);
    norm = std::sqrt(norm);
    if (norm < 1e-150) throw std::runtime_error("l2_normalize_rows: zero row");
    for (std::size_t j = 0; j < va.cols(); ++j) out(i, j) = va(i, j) / norm;
  }
  NodeId id = push(std::move(out), nullptr);
  nodes_[id].backprop = [this, a, id] {
    // per row: dx = (g - y * <y, g>) / ||x||
    const DenseMatrix& g = nodes_[id].grad;
    const DenseMatrix& y = nodes_[id].value;
    const DenseMatrix& x = nodes_[a].value;
    for (std::size_t i = 0; i < y.rows(); ++i) {
      double norm = 0.0, inner = 0.0;
      for (std::size_t j = 0; j < y.cols(); ++j) {
        norm += x(i, j) * x(i, j);
        inner += y(i, j) * g(i, j);
      }
      norm = std::sqrt(norm);
      for (std::size_t j = 0; j < y.cols(); ++j)
        nodes_[a].grad(i, j) += (g(i, j) - y(i, j) * inner) / norm;
    }
  };
  return id;
}

NodeId Tape::sum(NodeId a) {
  const DenseMatrix& va = node_at(a).value;
  require_nonempty(va, "sum");
  double total = 0.0;
  for (double v : va.values()) total += v;
  NodeId id = push(DenseMatrix(1, 1, {total}), nullptr);
  nodes_[id].backprop = [this, a, id] {
    const double g = nodes_[id].grad(0, 0);
    for (std::size_t i = 0; i < nodes_[a].grad.size(); ++i)
      nodes_[a].grad.data()[i] += g;
  };
  return id;
}

NodeId Tape::mean(NodeId a) {
  const DenseMatrix& va = node_at(a).value;
  require_nonempty(va, "mean");
  double total = 0.0;
  for (double v : va.values()) total += v;
  const double inv = 1.0 / static_cast<double>(va.size());
  NodeId id = push(DenseMatrix(1, 1, {total * inv}), nullptr);
  nodes_[id].backprop = [this, a, id, inv] {
    const double g = nodes_[id].grad(0, 0) * inv;
    for (std::size_t i = 0; i < nodes_[a].grad.size(); ++i)
      nodes_[a].grad.data()[i] += g;
  };
  return id;
}

NodeId Tape::row_sum(NodeId a) {
  const DenseMatrix& va = node_at(a).value;
  require_nonempty(va, "row_sum");
  DenseMatrix out(va.rows(), 1);
  for (std::size_t i = 0; i < va.rows(); ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < va.cols(); ++j) total += va(i, j);
    out(i, 0) = total;
  }
  NodeId id = push(std::move(out), nullptr);
  nodes_[id].backprop = [this, a, id] {
    const DenseMatrix& g = nodes_[id].grad;
    for (std::size_t i = 0; i < nodes_[a].value.rows(); ++i)
      for (std::size_t j = 0; j < nodes_[a].value.cols(); ++j)
        nodes_[a].grad(i, j) += g(i, 0);
  };
  return id;
}

NodeId Tape::row_select(NodeId a, std::vector<std::size_t> rows) {
  const DenseMatrix& va = node_at(a).value;
  if (rows.empty()) throw std::invalid_argument("row_select: no rows requested");
  for (std::size_t r : rows)
    if (r >= va.rows()) throw std::invalid_argument("row_select: row out of range");
  DenseMatrix out(rows.size(), va.cols());
  for (std::size_t t = 0; t < rows.size(); ++t)
    for (std::size_t j = 0; j < va.cols(); ++j) out(t, j) = va(rows[t], j);
  NodeId id = push(std::move(out), nullptr);
  nodes_[id].backprop = [this, a, id, rows = std::move(rows)] {
    const DenseMatrix& g = nodes_[id].grad;
    for (std::size_t t = 0; t < rows.size(); ++t)
      for (std::size_t j = 0; j < g.cols(); ++j) nodes_[a].grad(rows[t], j) += g(t, j);
  };
  return id;
}

NodeId Tape::dot_rows(NodeId a, NodeId b) {
  const DenseMatrix& va = node_at(a).value;
  const DenseMatrix& vb = node_at(b).value;
  if (!va.same_shape(vb)) throw std::invalid_argument("dot_rows: shape mismatch");
  require_nonempty(va, "dot_rows");
  DenseMatrix out(va.rows(), 1);
  for (std::size_t i = 0; i < va.rows(); ++i) {
    double dot = 0.0;
    for (std::size_t j = 0; j < va.cols(); ++j) dot += va(i, j) * vb(i, j);
    out(i, 0) = dot;
  }
  NodeId id = push(std::move(out), nullptr);
  nodes_[id].backprop = [this, a, b, id] {
    const DenseMatrix& g = nodes_[id].grad;
    const DenseMatrix& va2 = nodes_[a].value;
    const DenseMatrix& vb2 = nodes_[b].value;
    for (std::size_t i = 0; i < va2.rows(); ++i)
      for (std::size_t j = 0; j < va2.cols(); ++j) {
        nodes_[a].grad(i, j) += g(i, 0) * vb2(i, j);
        nodes_[b].grad(i, j) += g(i, 0) * va2(i, j);
      }
  };
  return id;
}

NodeId Tape::concat_rows(const std::vector<NodeId>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
  const std::size_t cols = node_at(parts[0]).value.cols();
  std::size_t rows = 0;
  for (NodeId p : parts) {
    if (node_at(p).value.cols() != cols)
      throw std::invalid_argument("concat_rows: column mismatch");
    rows += node_at(p).value.rows();
  }
  DenseMatrix out(rows, cols);
  std::size_t at = 0;
  for (NodeId p : parts) {
    const DenseMatrix& v = nodes_[p].value;
    for (std::size_t i = 0; i < v.rows(); ++i, ++at)
      for (std::size_t j = 0; j < cols; ++j) out(at, j) = v(i, j);
  }
  NodeId id = push(std::move(out), nullptr);
  nodes_[id].backprop = [this, id, parts] {
    const DenseMatrix& g = nodes_[id].grad;
    std::size_t at = 0;
    for (NodeId p : parts) {
      DenseMatrix& pg = nodes_[p].grad;
      for (std::size_t i = 0; i < pg.rows(); ++i, ++at)
        for (std::size_t j = 0; j < pg.cols(); ++j) pg(i, j) += g(at, j);
    }
  };
  return id;
}

NodeId Tape::nuclear_norm(NodeId a) {
  const SvdResult f = mgcd::svd(node_at(a).value);
  double total = 0.0;
  for (double s : f.s) total += s;
  DenseMatrix uvt = mgcd::matmul(f.u, f.vt);
  NodeId id = push(DenseMatrix(1, 1, {total}), nullptr);
  nodes_[id].backprop = [this, a, id, uvt = std::move(uvt)] {
    const double g = nodes_[id].grad(0, 0);
    for (std::size_t i = 0; i < uvt.size(); ++i)
      nodes_[a].grad.data()[i] += g * uvt.data()[i];
  };
  return id;
}

NodeId Tape::nuclear_norm_rank99(NodeId a) {
  const SvdResult f = mgcd::svd(node_at(a).value);
  const std::size_t keep = energy_rank99(f.s);
  double total = 0.0;
  for (std::size_t i = 0; i < keep; ++i) total += f.s[i];

  // u_r * vt_r over the kept directions only
  const DenseMatrix& u = f.u;
  const DenseMatrix& vt = f.vt;
  DenseMatrix uvt(u.rows(), vt.cols());
  for (std::size_t i = 0; i < u.rows(); ++i)
    for (std::size_t r = 0; r < keep; ++r) {
      const double uir = u(i, r);
      for (std::size_t j = 0; j < vt.cols(); ++j) uvt(i, j) += uir * vt(r, j);
    }

  NodeId id = push(DenseMatrix(1, 1, {total}), nullptr);
  nodes_[id].backprop = [this, a, id, uvt = std::move(uvt)] {
    const double g = nodes_[id].grad(0, 0);
    for (std::size_t i = 0; i < uvt.size(); ++i)
      nodes_[a].grad.data()[i] += g * uvt.data()[i];
  };
  return id;
}

void Tape::backward(NodeId loss) {
  const Node& l = node_at(loss);
  if (l.value.rows() != 1 || l.value.cols() != 1)
    throw std::invalid_argument("backward: loss node is not a scalar");
  if (backward_ran_)
    throw std::runtime_error("backward: already ran; call reset_grads first");
  backward_ran_ = true;
  nodes_[loss].grad(0, 0) = 1.0;
  for (std::size_t i = nodes_.size(); i-- > 0;)
    if (nodes_[i].backprop) nodes_[i].backprop();
}

void Tape::reset_grads() {
  for (Node& n : nodes_)
    std::fill(n.grad.data(), n.grad.data() + n.grad.size(), 0.0);
  backward_ran_ = false;
}

}  // namespace mgcd

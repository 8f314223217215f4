#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mgcd/autodiff.hpp"
#include "mgcd/linalg.hpp"

// the toy encoder: patch tokens are embedded, a learnable class token attends
// over them (one head, one layer), and a two-layer projection head maps the
// pooled token onto the unit sphere.

namespace mgcd {

struct SampleBatch {
  std::vector<DenseMatrix> patches;        // per sample: P x d_in
  std::vector<int> labels;                 // class id, -1 when absent
  std::vector<std::uint8_t> is_labeled;    // labeled samples carry known-class ids
  std::vector<std::uint8_t> is_known_class;  // evaluation metadata

  std::size_t size() const noexcept { return patches.size(); }
};

// throws invalid_argument on empty batches, ragged input dims, P = 0,
// mismatched metadata lengths, or labeled samples without a label.
void validate_batch(const SampleBatch& batch);

struct EncoderParams {
  DenseMatrix embed_w;  // d_in x d_model
  DenseMatrix wq;       // d_model x d_model
  DenseMatrix wk;       // d_model x d_model
  DenseMatrix wv;       // d_model x d_model
  DenseMatrix cls0;     // 1 x d_model, learnable initial class token
  DenseMatrix proj_w1;  // d_model x d_hidden
  DenseMatrix proj_w2;  // d_hidden x D

  std::size_t d_in() const noexcept { return embed_w.rows(); }
  std::size_t d_model() const noexcept { return embed_w.cols(); }
  std::size_t d_hidden() const noexcept { return proj_w1.cols(); }
  std::size_t d_out() const noexcept { return proj_w2.cols(); }
};

// uniform init in +-1/sqrt(fan_in) per matrix; d_hidden = 2 * d_model.
EncoderParams init_encoder(std::size_t d_in, std::size_t d_model, std::size_t d_out,
                           std::uint64_t seed);

// one CSV per matrix plus a manifest with shapes; values carry 17 significant
// digits so a save/load round-trip is bit-exact.
void save_checkpoint(const EncoderParams& params, const std::string& dir);
EncoderParams load_checkpoint(const std::string& dir);

// parameter leaves registered on a tape for one forward/backward pass.
struct EncoderNodes {
  NodeId embed_w = 0;
  NodeId wq = 0;
  NodeId wk = 0;
  NodeId wv = 0;
  NodeId cls0 = 0;
  NodeId proj_w1 = 0;
  NodeId proj_w2 = 0;
};

EncoderNodes register_params(Tape& tape, const EncoderParams& params);

// attention pooling of one sample's embedded patches (P x d_model):
// scores = (cls0 Wq)(vis Wk)^T / sqrt(d_model), cls' = softmax(scores)(vis Wv) + cls0.
NodeId attend_pool(Tape& tape, NodeId vis, const EncoderNodes& nodes);

struct ClassTokenBatch {
  NodeId z = 0;  // B x D, rows unit-norm
  NodeId h = 0;  // B x d_model pooled class tokens, pre-projection
};

// full forward pass: embed patches, pool per sample, project, normalize.
// differentiable end to end through the tape.
ClassTokenBatch encode(Tape& tape, const SampleBatch& batch, const EncoderNodes& nodes);

}  // namespace mgcd

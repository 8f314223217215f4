#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mgcd/linalg.hpp"
#include "mgcd/model.hpp"

// synthetic category-discovery data: classes live on low-dimensional
// subspaces around mutually orthonormal anchors, with controllable
// off-subspace noise. augmented "views" are fresh patch-noise redraws from
// the same per-sample latent.

namespace mgcd {

struct SynthConfig {
  std::size_t n_classes_known = 10;
  std::size_t n_classes_novel = 10;
  std::size_t samples_per_class = 12;
  std::size_t patches_per_sample = 6;
  std::size_t input_dim = 64;
  std::size_t class_subspace_dim = 4;  // intrinsic manifold dimension, anchor included
  double noise_sigma = 0.05;           // isotropic off-subspace noise scale
  double labeled_fraction = 0.5;       // of known-class samples, labeled
  std::uint64_t seed = 0;
};

// throws invalid_argument when dimensions are infeasible (more classes than
// input_dim forbids orthonormal anchors; subspace wider than input_dim) or
// scalar fields leave their ranges.
void validate_synth_config(const SynthConfig& cfg);

struct Dataset {
  SampleBatch samples;       // canonical patch draw, class-major order
  std::vector<int> truth;    // ground-truth class per sample (evaluation only)
  std::vector<int> known_classes;
  std::vector<int> novel_classes;
  SynthConfig config;

  // generator state retained so views can be redrawn from the same latents
  DenseMatrix anchors;              // C x d_in, orthonormal rows
  std::vector<DenseMatrix> bases;   // per class: d_in x subspace, col 0 = anchor
  DenseMatrix sample_latent;        // N x subspace, in-subspace sample offsets

  std::size_t size() const noexcept { return samples.size(); }
  std::vector<std::size_t> labeled_indices() const;
};

Dataset gen_synthetic(const SynthConfig& cfg);

// fresh patch jitter and off-subspace noise for the chosen samples, keeping
// each sample's latent. same (view_seed, sample id) always redraws the same
// patches, independent of the order or subset requested.
SampleBatch draw_view(const Dataset& ds, const std::vector<std::size_t>& sample_ids,
                      std::uint64_t view_seed);

// embedding CSV: header line `dim=<D>`, then one comma-separated row per
// sample at 17 significant digits (decimal round-trips are value-exact).
void save_embeddings(const DenseMatrix& z, const std::string& path);
DenseMatrix load_embeddings(const std::string& path);

// dataset directory: manifest JSON (config echo, rosters, labels, split
// indices) plus CSV files for patches and generator state.
void save_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

}  // namespace mgcd

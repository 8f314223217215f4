#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "mgcd/linalg.hpp"

// clustering and evaluation for category discovery: min-cost assignment,
// accuracy under a single global cluster-to-class matching, semi-supervised
// spherical k-means with labeled samples pinned to their class clusters, and
// class-count estimation by held-out labeled accuracy.

namespace mgcd {

struct Assignment {
  std::vector<int> row_to_col;  // -1 where a row is unmatched (rows > cols)
  double total_cost = 0.0;
};

// min-cost one-to-one assignment covering min(rows, cols) pairs.
// deterministic: among cost-optimal assignments the lexicographically
// smallest row_to_col vector is returned (unmatched sorts last).
Assignment hungarian(const DenseMatrix& cost);

struct ClusterAccuracy {
  double all = 0.0;
  double old_classes = 0.0;  // samples whose true class is known
  double new_classes = 0.0;  // samples from novel classes
  std::vector<int> cluster_to_class;  // per dense cluster id, matched class or -1
};

// matches clusters to classes by maximizing the contingency diagonal
// (hungarian on the negated table); all three accuracies share that one
// matching. unmatched clusters count their samples as incorrect. empty
// subsets score 0.
ClusterAccuracy cluster_accuracy(const std::vector<int>& predicted,
                                 const std::vector<int>& truth,
                                 const std::vector<std::uint8_t>& known_mask);

struct ClusterResult {
  std::vector<int> assignments;         // per sample, cluster id in [0, k)
  DenseMatrix centroids;                // k x d, unit rows
  std::size_t iterations = 0;
  std::vector<double> objective_trace;  // sum of cosine distances, per iteration
  // filled by evaluation when ground truth is available, zero/empty otherwise
  double acc_all = 0.0;
  double acc_old = 0.0;
  double acc_new = 0.0;
  std::vector<int> matched_map;  // cluster id -> matched class, -1 unmatched
};

// labels are 0-based class ids parallel to labeled_idx; every label value
// pins the cluster with the same id. remaining clusters start from
// k-means++ seeds over the unlabeled points. centroids are re-normalized
// means; clusters that empty out are re-seeded from the farthest point.
ClusterResult ss_kmeans(const DenseMatrix& z,
                        const std::vector<std::size_t>& labeled_idx,
                        const std::vector<int>& labels, std::size_t k,
                        std::size_t max_iter = 300, std::uint64_t seed = 0);

// scans [k_min, k_max], hiding half of the labeled set per scan and scoring
// accuracy on the hidden half. held-out accuracy cannot see novel-only
// cluster merges (it plateaus at every K at or below the true count), so
// exact accuracy ties are broken by mean cosine silhouette over all samples;
// any remaining tie resolves to the smallest candidate. independent scans
// run concurrently, capped by MANIFOLD_GCD_THREADS.
std::size_t estimate_k(const DenseMatrix& z,
                       const std::vector<std::size_t>& labeled_idx,
                       const std::vector<int>& labels, std::size_t k_min,
                       std::size_t k_max, std::uint64_t seed = 0);

}  // namespace mgcd

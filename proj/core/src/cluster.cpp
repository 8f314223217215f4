#include "mgcd/cluster.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>

namespace mgcd {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// min-cost perfect matching of `rows` into `cols` via dual potentials,
// assuming rows.size() <= cols.size(). indices address the original matrix.
double solve_padded(const DenseMatrix& cost, const std::vector<int>& rows,
                    const std::vector<int>& cols, bool swapped) {
  const int n = static_cast<int>(rows.size());
  const int m = static_cast<int>(cols.size());
  std::vector<double> u(static_cast<std::size_t>(n) + 1, 0.0);
  std::vector<double> v(static_cast<std::size_t>(m) + 1, 0.0);
  std::vector<int> p(static_cast<std::size_t>(m) + 1, 0);
  std::vector<int> way(static_cast<std::size_t>(m) + 1, 0);
  auto at = [&](int i, int j) {
    return swapped ? cost(static_cast<std::size_t>(cols[static_cast<std::size_t>(j)]),
                          static_cast<std::size_t>(rows[static_cast<std::size_t>(i)]))
                   : cost(static_cast<std::size_t>(rows[static_cast<std::size_t>(i)]),
                          static_cast<std::size_t>(cols[static_cast<std::size_t>(j)]));
  };
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(m) + 1, kInf);
    std::vector<char> used(static_cast<std::size_t>(m) + 1, 0);
    do {
      used[static_cast<std::size_t>(j0)] = 1;
      const int i0 = p[static_cast<std::size_t>(j0)];
      int j1 = -1;
      double delta = kInf;
      for (int j = 1; j <= m; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        const double cur = at(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] -
                           v[static_cast<std::size_t>(j)];
        if (cur < minv[static_cast<std::size_t>(j)]) {
          minv[static_cast<std::size_t>(j)] = cur;
          way[static_cast<std::size_t>(j)] = j0;
        }
        if (minv[static_cast<std::size_t>(j)] < delta) {
          delta = minv[static_cast<std::size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[static_cast<std::size_t>(j)]) {
          u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
          v[static_cast<std::size_t>(j)] -= delta;
        } else {
          minv[static_cast<std::size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<std::size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<std::size_t>(j0)];
      p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  double total = 0.0;
  for (int j = 1; j <= m; ++j) {
    const int i = p[static_cast<std::size_t>(j)];
    if (i != 0) total += at(i - 1, j - 1);
  }
  return total;
}

// optimal cost of matching min(|rows|, |cols|) pairs among the given subsets.
double subset_cost(const DenseMatrix& cost, const std::vector<int>& rows,
                   const std::vector<int>& cols) {
  if (rows.empty() || cols.empty()) return 0.0;
  if (rows.size() <= cols.size()) return solve_padded(cost, rows, cols, false);
  return solve_padded(cost, cols, rows, true);
}

}  // namespace

Assignment hungarian(const DenseMatrix& cost) {
  if (cost.empty()) throw std::invalid_argument("hungarian: empty cost matrix");
  for (std::size_t i = 0; i < cost.size(); ++i) {
    if (!std::isfinite(cost.values()[i]))
      throw std::invalid_argument("hungarian: non-finite cost");
  }
  const int n = static_cast<int>(cost.rows());
  const int m = static_cast<int>(cost.cols());
  std::vector<int> all_rows(static_cast<std::size_t>(n));
  std::vector<int> all_cols(static_cast<std::size_t>(m));
  std::iota(all_rows.begin(), all_rows.end(), 0);
  std::iota(all_cols.begin(), all_cols.end(), 0);

  const double optimum = subset_cost(cost, all_rows, all_cols);
  const double tol = 1e-9 * (1.0 + std::abs(optimum));

  // fix the assignment row by row, preferring the smallest column (with
  // "unmatched" sorting before any column) that still admits an optimal
  // completion. this pins the lexicographically smallest optimum.
  Assignment out;
  out.row_to_col.assign(static_cast<std::size_t>(n), -1);
  std::vector<int> free_cols = all_cols;
  double fixed_cost = 0.0;
  int pairs_left = std::min(n, m);
  for (int i = 0; i < n; ++i) {
    std::vector<int> rows_after;
    for (int r = i + 1; r < n; ++r) rows_after.push_back(r);

    int fallback = -2;  // cheapest option in case no candidate meets tolerance
    double fallback_cost = kInf;
    bool fixed = false;
    if (pairs_left <= static_cast<int>(rows_after.size())) {
      const double candidate = fixed_cost + subset_cost(cost, rows_after, free_cols);
      if (candidate <= optimum + tol) {
        fixed = true;  // row stays unmatched, -1 already in place
      } else {
        fallback = -1;
        fallback_cost = candidate;
      }
    }
    for (std::size_t jj = 0; jj < free_cols.size() && !fixed; ++jj) {
      const int j = free_cols[jj];
      std::vector<int> cols_rest;
      cols_rest.reserve(free_cols.size() - 1);
      for (int c : free_cols) {
        if (c != j) cols_rest.push_back(c);
      }
      const double candidate =
          fixed_cost + cost(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) +
          subset_cost(cost, rows_after, cols_rest);
      if (candidate <= optimum + tol) {
        out.row_to_col[static_cast<std::size_t>(i)] = j;
        free_cols = cols_rest;
        fixed_cost += cost(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
        --pairs_left;
        fixed = true;
      } else if (candidate < fallback_cost) {
        fallback_cost = candidate;
        fallback = j;
      }
    }
    if (!fixed && fallback >= 0) {
      const int j = fallback;
      std::vector<int> cols_rest;
      for (int c : free_cols) {
        if (c != j) cols_rest.push_back(c);
      }
      out.row_to_col[static_cast<std::size_t>(i)] = j;
      free_cols = cols_rest;
      fixed_cost += cost(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
      --pairs_left;
    }
  }
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const int j = out.row_to_col[static_cast<std::size_t>(i)];
    if (j >= 0) total += cost(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
  }
  out.total_cost = total;
  return out;
}

ClusterAccuracy cluster_accuracy(const std::vector<int>& predicted,
                                 const std::vector<int>& truth,
                                 const std::vector<std::uint8_t>& known_mask) {
  if (predicted.empty()) throw std::invalid_argument("cluster_accuracy: empty input");
  if (predicted.size() != truth.size() || predicted.size() != known_mask.size())
    throw std::invalid_argument("cluster_accuracy: length mismatch");

  // dense re-index in sorted id order so the contingency table is compact.
  std::map<int, int> pred_id, true_id;
  for (int p : predicted) pred_id.emplace(p, 0);
  for (int t : truth) true_id.emplace(t, 0);
  int next = 0;
  for (auto& kv : pred_id) kv.second = next++;
  next = 0;
  for (auto& kv : true_id) kv.second = next++;

  const std::size_t np = pred_id.size();
  const std::size_t nt = true_id.size();
  DenseMatrix counts(np, nt);
  for (std::size_t s = 0; s < predicted.size(); ++s) {
    const std::size_t r = static_cast<std::size_t>(pred_id.at(predicted[s]));
    const std::size_t c = static_cast<std::size_t>(true_id.at(truth[s]));
    counts(r, c) += 1.0;
  }
  DenseMatrix negated = scale(counts, -1.0);
  const Assignment match = hungarian(negated);

  std::vector<int> class_of_original(nt);
  for (const auto& kv : true_id) class_of_original[static_cast<std::size_t>(kv.second)] = kv.first;

  ClusterAccuracy acc;
  acc.cluster_to_class.assign(np, -1);
  for (std::size_t r = 0; r < np; ++r) {
    const int c = match.row_to_col[r];
    if (c >= 0) acc.cluster_to_class[r] = class_of_original[static_cast<std::size_t>(c)];
  }

  std::size_t hit_all = 0, hit_old = 0, hit_new = 0, n_old = 0, n_new = 0;
  for (std::size_t s = 0; s < predicted.size(); ++s) {
    const int mapped = acc.cluster_to_class[static_cast<std::size_t>(pred_id.at(predicted[s]))];
    const bool hit = mapped == truth[s];
    if (hit) ++hit_all;
    if (known_mask[s]) {
      ++n_old;
      if (hit) ++hit_old;
    } else {
      ++n_new;
      if (hit) ++hit_new;
    }
  }
  const double n = static_cast<double>(predicted.size());
  acc.all = static_cast<double>(hit_all) / n;
  acc.old_classes = n_old ? static_cast<double>(hit_old) / static_cast<double>(n_old) : 0.0;
  acc.new_classes = n_new ? static_cast<double>(hit_new) / static_cast<double>(n_new) : 0.0;
  return acc;
}

namespace {

double dot_row(const DenseMatrix& a, std::size_t i, const DenseMatrix& b, std::size_t j) {
  const std::size_t d = a.cols();
  const double* pa = a.data() + i * d;
  const double* pb = b.data() + j * d;
  double acc = 0.0;
  for (std::size_t c = 0; c < d; ++c) acc += pa[c] * pb[c];
  return acc;
}

void set_row(DenseMatrix& m, std::size_t r, const DenseMatrix& src, std::size_t src_row) {
  for (std::size_t c = 0; c < m.cols(); ++c) m(r, c) = src(src_row, c);
}

// mean silhouette under cosine distance; singletons and degenerate geometry
// (max(a, b) == 0) contribute 0.
double mean_silhouette(const DenseMatrix& z, const std::vector<int>& assignments,
                       std::size_t k) {
  const std::size_t n = z.rows();
  if (n < 2 || k < 2) return 0.0;
  std::vector<std::size_t> counts(k, 0);
  for (int a : assignments) ++counts[static_cast<std::size_t>(a)];

  double total = 0.0;
  std::vector<double> sum_dist(k, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(sum_dist.begin(), sum_dist.end(), 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      sum_dist[static_cast<std::size_t>(assignments[j])] += 1.0 - dot_row(z, i, z, j);
    }
    const std::size_t own = static_cast<std::size_t>(assignments[i]);
    if (counts[own] < 2) continue;  // singleton scores 0
    const double a = sum_dist[own] / static_cast<double>(counts[own] - 1);
    double b = kInf;
    for (std::size_t c = 0; c < k; ++c) {
      if (c == own || counts[c] == 0) continue;
      b = std::min(b, sum_dist[c] / static_cast<double>(counts[c]));
    }
    if (!std::isfinite(b)) continue;  // no competing cluster
    const double denom = std::max(a, b);
    if (denom > 0.0) total += (b - a) / denom;
  }
  return total / static_cast<double>(n);
}

// normalizes row r in place; returns false when the row is numerically zero.
bool normalize_row(DenseMatrix& m, std::size_t r) {
  double norm2 = 0.0;
  for (std::size_t c = 0; c < m.cols(); ++c) norm2 += m(r, c) * m(r, c);
  const double norm = std::sqrt(norm2);
  if (norm < 1e-12) return false;
  for (std::size_t c = 0; c < m.cols(); ++c) m(r, c) /= norm;
  return true;
}

}  // namespace

ClusterResult ss_kmeans(const DenseMatrix& z, const std::vector<std::size_t>& labeled_idx,
                        const std::vector<int>& labels, std::size_t k,
                        std::size_t max_iter, std::uint64_t seed) {
  if (z.empty()) throw std::invalid_argument("ss_kmeans: empty input");
  if (k == 0) throw std::invalid_argument("ss_kmeans: k must be positive");
  if (k > z.rows()) throw std::invalid_argument("ss_kmeans: k exceeds sample count");
  if (labeled_idx.size() != labels.size())
    throw std::invalid_argument("ss_kmeans: labeled_idx and labels length mismatch");

  const std::size_t n = z.rows();
  const std::size_t d = z.cols();
  std::vector<char> is_labeled(n, 0);
  std::vector<int> pinned(n, -1);
  for (std::size_t i = 0; i < labeled_idx.size(); ++i) {
    if (labeled_idx[i] >= n) throw std::invalid_argument("ss_kmeans: labeled index out of range");
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k)
      throw std::invalid_argument("ss_kmeans: label outside [0, k)");
    is_labeled[labeled_idx[i]] = 1;
    pinned[labeled_idx[i]] = labels[i];
  }
  std::vector<std::size_t> unlabeled;
  for (std::size_t i = 0; i < n; ++i) {
    if (!is_labeled[i]) unlabeled.push_back(i);
  }

  std::mt19937_64 rng(seed);
  DenseMatrix centroids(k, d);
  std::vector<char> cluster_seeded(k, 0);

  // pinned clusters start at their labeled class mean.
  for (std::size_t c = 0; c < k; ++c) {
    double count = 0.0;
    for (std::size_t i = 0; i < labeled_idx.size(); ++i) {
      if (static_cast<std::size_t>(labels[i]) != c) continue;
      for (std::size_t col = 0; col < d; ++col) centroids(c, col) += z(labeled_idx[i], col);
      count += 1.0;
      cluster_seeded[c] = 1;
    }
    if (cluster_seeded[c] && !normalize_row(centroids, c)) {
      // antipodal cancellation: fall back to the first class member.
      for (std::size_t i = 0; i < labeled_idx.size(); ++i) {
        if (static_cast<std::size_t>(labels[i]) == c) {
          set_row(centroids, c, z, labeled_idx[i]);
          break;
        }
      }
    }
  }

  // remaining clusters: k-means++ over the unlabeled pool (whole sample set
  // when everything is labeled), distances measured against seeded centroids.
  std::vector<std::size_t> pool = unlabeled;
  if (pool.empty()) {
    pool.resize(n);
    std::iota(pool.begin(), pool.end(), 0);
  }
  std::vector<char> taken(n, 0);
  for (std::size_t c = 0; c < k; ++c) {
    if (cluster_seeded[c]) continue;
    bool any_seeded = false;
    for (std::size_t c2 = 0; c2 < k; ++c2) any_seeded = any_seeded || cluster_seeded[c2];
    std::size_t pick = pool[0];
    if (!any_seeded) {
      std::uniform_real_distribution<double> uni(0.0, 1.0);
      pick = pool[std::min(pool.size() - 1,
                           static_cast<std::size_t>(uni(rng) * static_cast<double>(pool.size())))];
    } else {
      std::vector<double> weight(pool.size(), 0.0);
      double total = 0.0;
      for (std::size_t ii = 0; ii < pool.size(); ++ii) {
        if (taken[pool[ii]]) continue;
        double best = -1.0;
        for (std::size_t c2 = 0; c2 < k; ++c2) {
          if (!cluster_seeded[c2]) continue;
          best = std::max(best, dot_row(z, pool[ii], centroids, c2));
        }
        weight[ii] = std::max(0.0, 2.0 - 2.0 * best);  // squared distance on the sphere
        total += weight[ii];
      }
      if (total > 1e-12) {
        std::uniform_real_distribution<double> uni(0.0, total);
        const double target = uni(rng);
        double cum = 0.0;
        pick = pool.back();
        for (std::size_t ii = 0; ii < pool.size(); ++ii) {
          cum += weight[ii];
          if (cum >= target && weight[ii] > 0.0) {
            pick = pool[ii];
            break;
          }
        }
      } else {
        // all candidates coincide with existing centroids; take the first free one.
        for (std::size_t ii = 0; ii < pool.size(); ++ii) {
          if (!taken[pool[ii]]) {
            pick = pool[ii];
            break;
          }
        }
      }
    }
    taken[pick] = 1;
    set_row(centroids, c, z, pick);
    cluster_seeded[c] = 1;
  }

  ClusterResult result;
  result.assignments.assign(n, -1);
  std::vector<int> previous(n, -1);

  for (std::size_t iter = 1; iter <= max_iter; ++iter) {
    // assignment step; ties resolve to the smallest cluster id.
    for (std::size_t i = 0; i < n; ++i) {
      if (pinned[i] >= 0) {
        result.assignments[i] = pinned[i];
        continue;
      }
      int best_c = 0;
      double best_dot = dot_row(z, i, centroids, 0);
      for (std::size_t c = 1; c < k; ++c) {
        const double dp = dot_row(z, i, centroids, c);
        if (dp > best_dot) {
          best_dot = dp;
          best_c = static_cast<int>(c);
        }
      }
      result.assignments[i] = best_c;
    }

    double objective = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      objective += 1.0 - dot_row(z, i, centroids,
                                 static_cast<std::size_t>(result.assignments[i]));
    }
    result.objective_trace.push_back(objective);
    result.iterations = iter;
    if (result.assignments == previous) break;
    previous = result.assignments;

    // update step: normalized means, empty clusters re-seeded from the
    // farthest point (which they then claim).
    DenseMatrix sums(k, d);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t c = static_cast<std::size_t>(result.assignments[i]);
      for (std::size_t col = 0; col < d; ++col) sums(c, col) += z(i, col);
      ++counts[c];
    }
    std::vector<char> claimed(n, 0);
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] > 0 && normalize_row(sums, c)) {
        set_row(centroids, c, sums, c);
        continue;
      }
      const std::vector<std::size_t>& donors = pool;
      std::size_t far_idx = donors[0];
      double far_dist = -kInf;
      for (std::size_t i : donors) {
        if (claimed[i]) continue;
        const double dist =
            1.0 - dot_row(z, i, centroids, static_cast<std::size_t>(result.assignments[i]));
        if (dist > far_dist) {
          far_dist = dist;
          far_idx = i;
        }
      }
      claimed[far_idx] = 1;
      set_row(centroids, c, z, far_idx);
      if (pinned[far_idx] < 0) result.assignments[far_idx] = static_cast<int>(c);
    }
  }

  result.centroids = centroids;
  return result;
}

std::size_t estimate_k(const DenseMatrix& z, const std::vector<std::size_t>& labeled_idx,
                       const std::vector<int>& labels, std::size_t k_min,
                       std::size_t k_max, std::uint64_t seed) {
  if (k_min == 0 || k_min > k_max) throw std::invalid_argument("estimate_k: empty scan range");
  if (k_max > z.rows()) throw std::invalid_argument("estimate_k: k_max exceeds sample count");
  if (labeled_idx.size() != labels.size())
    throw std::invalid_argument("estimate_k: labeled_idx and labels length mismatch");

  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labeled_idx.size(); ++i) by_class[labels[i]].push_back(i);
  if (k_min < by_class.size())
    throw std::invalid_argument("estimate_k: k_min below distinct label count");

  // stratified halving keeps every class pinned during the scan; the hidden
  // half scores each candidate K.
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> kept_pos, hidden_pos;
  for (auto& kv : by_class) {
    std::vector<std::size_t>& members = kv.second;
    std::shuffle(members.begin(), members.end(), rng);
    const std::size_t keep = (members.size() + 1) / 2;
    for (std::size_t i = 0; i < members.size(); ++i) {
      (i < keep ? kept_pos : hidden_pos).push_back(members[i]);
    }
  }
  std::vector<std::size_t> kept_idx;
  std::vector<int> kept_labels;
  for (std::size_t p : kept_pos) {
    kept_idx.push_back(labeled_idx[p]);
    kept_labels.push_back(labels[p]);
  }

  const std::size_t runs = k_max - k_min + 1;
  std::vector<double> score(runs, 0.0);
  std::vector<double> cohesion(runs, 0.0);

  auto run_one = [&](std::size_t ri) {
    const std::size_t k = k_min + ri;
    const ClusterResult res = ss_kmeans(z, kept_idx, kept_labels, k, 300, seed + k);
    cohesion[ri] = mean_silhouette(z, res.assignments, k);
    if (hidden_pos.empty()) return;
    std::size_t hit = 0;
    for (std::size_t p : hidden_pos) {
      if (res.assignments[labeled_idx[p]] == labels[p]) ++hit;
    }
    score[ri] = static_cast<double>(hit) / static_cast<double>(hidden_pos.size());
  };

  std::size_t threads = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("MANIFOLD_GCD_THREADS")) {
    const long parsed = std::strtol(env, nullptr, 10);
    if (parsed > 0) threads = static_cast<std::size_t>(parsed);
  }
  threads = std::min(threads, runs);
  if (threads <= 1) {
    for (std::size_t ri = 0; ri < runs; ++ri) run_one(ri);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> workers;
    for (std::size_t t = 0; t < threads; ++t) {
      workers.emplace_back([&]() {
        for (std::size_t ri = next.fetch_add(1); ri < runs; ri = next.fetch_add(1)) run_one(ri);
      });
    }
    for (std::thread& w : workers) w.join();
  }

  // held-out accuracy first; exact ties fall to silhouette, then smallest K.
  std::size_t best = 0;
  for (std::size_t ri = 1; ri < runs; ++ri) {
    if (score[ri] > score[best] ||
        (score[ri] == score[best] && cohesion[ri] > cohesion[best])) {
      best = ri;
    }
  }
  return k_min + best;
}

}  // namespace mgcd

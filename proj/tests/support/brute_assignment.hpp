#pragma once

#include <algorithm>
#include <limits>
#include <vector>

#include "mgcd/linalg.hpp"

// exhaustive min-cost assignment used as an oracle for small instances.
// enumerates every injective row-to-column mapping covering min(n, m) pairs
// and keeps the cheapest; exact cost ties resolve to the lexicographically
// smallest row_to_col vector (-1 sorts before any column index).
namespace testutil {

struct BruteResult {
  std::vector<int> row_to_col;
  double total_cost = std::numeric_limits<double>::infinity();
};

namespace detail {

inline bool lex_less(const std::vector<int>& a, const std::vector<int>& b) {
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] != b[i]) return a[i] < b[i];
  }
  return false;
}

inline void brute_recurse(const mgcd::DenseMatrix& cost, std::size_t row, int pairs_left,
                          std::vector<char>& used_col, std::vector<int>& current,
                          double running, BruteResult& best) {
  const std::size_t n = cost.rows();
  const std::size_t m = cost.cols();
  if (row == n) {
    if (pairs_left != 0) return;
    if (running < best.total_cost ||
        (running == best.total_cost && lex_less(current, best.row_to_col))) {
      best.total_cost = running;
      best.row_to_col = current;
    }
    return;
  }
  const int rows_after = static_cast<int>(n - row - 1);
  // leaving this row unmatched first keeps candidate order lexicographic.
  if (rows_after >= pairs_left) {
    current[row] = -1;
    brute_recurse(cost, row + 1, pairs_left, used_col, current, running, best);
  }
  for (std::size_t j = 0; j < m; ++j) {
    if (used_col[j]) continue;
    used_col[j] = 1;
    current[row] = static_cast<int>(j);
    brute_recurse(cost, row + 1, pairs_left - 1, used_col, current, running + cost(row, j),
                  best);
    used_col[j] = 0;
  }
  current[row] = -1;
}

}  // namespace detail

inline BruteResult brute_assignment(const mgcd::DenseMatrix& cost) {
  BruteResult best;
  std::vector<char> used_col(cost.cols(), 0);
  std::vector<int> current(cost.rows(), -1);
  detail::brute_recurse(cost, 0, static_cast<int>(std::min(cost.rows(), cost.cols())),
                        used_col, current, 0.0, best);
  return best;
}

}  // namespace testutil

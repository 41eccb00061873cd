#pragma once

// Exact rectangular assignment: every column (ground-truth vertex) receives a
// distinct row (sampled vertex) so that the summed cost is minimal.
//
// Ties between optimal solutions are broken lexicographically: columns are
// fixed in increasing order, each taking the smallest row index that still
// admits an optimal completion. For costs of the form |a_i - b_j| on a line
// this selects the order-preserving (non-crossing) optimum.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "roipoly/errors.hpp"

namespace roipoly {

namespace detail {

struct HungarianResult {
  std::vector<int> row_of_col;  // size = cols
  std::vector<double> col_potential;
  std::vector<double> row_potential;
  double total = 0.0;
};

// Shortest augmenting path Hungarian method on the transposed problem:
// `cost(c, r)` for c < n_cols (assigned side), r < n_rows (n_cols <= n_rows).
template <typename CostFn>
HungarianResult hungarian(int n_rows, int n_cols, CostFn cost) {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  const int n = n_cols;
  const int m = n_rows;
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<int> match(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    match[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, kInf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = match[j0];
      double delta = kInf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const int j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  HungarianResult out;
  out.row_of_col.assign(n, -1);
  for (int j = 1; j <= m; ++j) {
    if (match[j] != 0) out.row_of_col[match[j] - 1] = j - 1;
  }
  out.col_potential.assign(u.begin() + 1, u.end());
  out.row_potential.assign(v.begin() + 1, v.end());
  for (int c = 0; c < n; ++c) out.total += cost(c, out.row_of_col[c]);
  return out;
}

inline bool nearly_equal(double a, double b) {
  return std::abs(a - b) <= 1e-9 * std::max({1.0, std::abs(a), std::abs(b)});
}

}  // namespace detail

/// Solves the rectangular assignment for a row-major `rows x cols` cost
/// matrix (rows >= cols). Returns, for each column, the index of its row.
inline std::vector<int> solve_assignment(int rows, int cols, std::span<const double> costs) {
  if (rows < cols) throw InvalidInput("assignment needs at least as many rows as columns");
  if (costs.size() != static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols)) {
    throw InvalidInput("assignment cost matrix has the wrong size");
  }
  for (double c : costs) {
    if (!std::isfinite(c)) throw InvalidInput("assignment costs must be finite");
  }
  if (cols == 0) return {};
  auto at = [&](int r, int c) { return costs[static_cast<std::size_t>(r) * cols + c]; };

  const auto full = detail::hungarian(rows, cols, [&](int c, int r) { return at(r, c); });
  const double optimum = full.total;

  std::vector<int> chosen(cols, -1);
  std::vector<char> row_used(rows, 0);
  double fixed_cost = 0.0;

  // Minimum cost of completing columns [first, cols) with the unused rows.
  auto completion_cost = [&](int first) {
    std::vector<int> free_rows;
    for (int r = 0; r < rows; ++r) {
      if (!row_used[r]) free_rows.push_back(r);
    }
    const int n_cols = cols - first;
    if (n_cols == 0) return 0.0;
    return detail::hungarian(static_cast<int>(free_rows.size()), n_cols,
                             [&](int c, int r) { return at(free_rows[r], first + c); })
        .total;
  };

  for (int c = 0; c < cols; ++c) {
    int pick = -1;
    // Candidates are first restricted to tight edges of the optimal duals
    // (complementary slackness); the full row range is the fallback.
    for (int pass = 0; pass < 2 && pick < 0; ++pass) {
      for (int r = 0; r < rows; ++r) {
        if (row_used[r]) continue;
        if (pass == 0) {
          const double reduced = at(r, c) - full.col_potential[c] - full.row_potential[r];
          if (!detail::nearly_equal(reduced, 0.0)) continue;
        }
        row_used[r] = 1;
        const double total = fixed_cost + at(r, c) + completion_cost(c + 1);
        if (detail::nearly_equal(total, optimum)) {
          pick = r;
          break;
        }
        row_used[r] = 0;
      }
    }
    if (pick < 0) throw NumericalFailure("assignment: no optimal completion found");
    chosen[c] = pick;
    fixed_cost += at(pick, c);
  }
  return chosen;
}

}  // namespace roipoly

#include "roipoly/assignment.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <limits>
#include <numeric>
#include <random>

namespace roipoly {
namespace {

// Exhaustive minimum over every injection columns -> rows.
double brute_force_min(int rows, int cols, const std::vector<double>& c) {
  std::vector<int> perm(rows);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  // Enumerate ordered selections via permutations of rows, first `cols` used.
  // Duplicates are harmless for the minimum.
  std::vector<int> pick(cols);
  std::vector<char> used(rows, 0);
  auto rec = [&](auto&& self, int col, double acc) -> void {
    if (acc >= best) return;
    if (col == cols) {
      best = acc;
      return;
    }
    for (int r = 0; r < rows; ++r) {
      if (used[r]) continue;
      used[r] = 1;
      self(self, col + 1, acc + c[static_cast<std::size_t>(r) * cols + col]);
      used[r] = 0;
    }
  };
  rec(rec, 0, 0.0);
  return best;
}

double total(int cols, const std::vector<double>& c, const std::vector<int>& rows) {
  double s = 0.0;
  for (int j = 0; j < cols; ++j) s += c[static_cast<std::size_t>(rows[j]) * cols + j];
  return s;
}

TEST(Assignment, ZeroDiagonal) {
  const std::vector<double> c{0, 5, 5, 0};
  const auto rows = solve_assignment(2, 2, c);
  EXPECT_EQ(rows, (std::vector<int>{0, 1}));
}

TEST(Assignment, InjectiveAndComplete) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, 10);
  for (int t = 0; t < 100; ++t) {
    const int cols = 1 + t % 6, rows = cols + t % 5;
    std::vector<double> c(rows * cols);
    for (double& x : c) x = u(rng);
    const auto r = solve_assignment(rows, cols, c);
    std::vector<int> sorted = r;
    std::sort(sorted.begin(), sorted.end());
    EXPECT_EQ(std::adjacent_find(sorted.begin(), sorted.end()), sorted.end());
    for (int x : r) EXPECT_TRUE(x >= 0 && x < rows);
  }
}

TEST(Assignment, MatchesBruteForceOnRandomMatrices) {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(0, 100);
  std::uniform_int_distribution<int> small(0, 9);
  for (int t = 0; t < 300; ++t) {
    const int cols = 1 + static_cast<int>(rng() % 6);
    const int rows = cols + static_cast<int>(rng() % (11 - cols));
    std::vector<double> c(rows * cols);
    // Integer costs create many ties; reals make the optimum unique.
    for (double& x : c) x = (t % 2) ? static_cast<double>(small(rng)) : u(rng);
    const auto r = solve_assignment(rows, cols, c);
    EXPECT_EQ(total(cols, c, r), brute_force_min(rows, cols, c)) << "trial " << t;
  }
}

TEST(Assignment, ConstantShiftKeepsArgmin) {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> u(0, 20);
  for (int t = 0; t < 50; ++t) {
    const int cols = 2 + t % 4, rows = cols + t % 4;
    std::vector<double> c(rows * cols);
    for (double& x : c) x = u(rng);
    std::vector<double> shifted = c;
    for (double& x : shifted) x += 17.0;
    EXPECT_EQ(solve_assignment(rows, cols, c), solve_assignment(rows, cols, shifted));
  }
}

TEST(Assignment, LexicographicTieBreakIsNonCrossingOnALine) {
  // Samples at 0 and 10, targets at 4 and 6: both pairings cost 12.
  const std::vector<double> samples{0, 10};
  const std::vector<double> targets{4, 6};
  std::vector<double> c;
  for (double s : samples) {
    for (double v : targets) c.push_back(std::abs(s - v));
  }
  EXPECT_EQ(solve_assignment(2, 2, c), (std::vector<int>{0, 1}));
}

TEST(Assignment, Errors) {
  EXPECT_THROW(solve_assignment(1, 2, std::vector<double>{1, 2}), InvalidInput);
  EXPECT_THROW(solve_assignment(2, 1, std::vector<double>{1, std::numeric_limits<double>::infinity()}),
               InvalidInput);
  EXPECT_THROW(solve_assignment(2, 2, std::vector<double>{1, 2, 3}), InvalidInput);
}

}  // namespace
}  // namespace roipoly

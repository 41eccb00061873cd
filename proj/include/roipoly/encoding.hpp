#pragma once

// Fixed-length vertex supervision targets for one polygon.
//
// The ground-truth ring is turned into a dense counterclockwise point
// sequence starting at its top-left vertex, M vertices are sampled uniformly
// along it, every GT vertex is assigned to a distinct sample, and assigned
// samples are moved onto their GT vertex and labelled valid.
//
// Two assignment costs are available:
//   - CostMode::euclidean : C[i,j] = |s_i - v_j|_2
//   - CostMode::index     : C[i,j] = |pos(s_i) - pos(v_j)| with positions taken
//                           in the dense sequence (optionally cyclic).
// Only the index cost guarantees that the valid samples keep the cyclic order
// of the GT vertices.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "roipoly/assignment.hpp"
#include "roipoly/errors.hpp"
#include "roipoly/geometry.hpp"

namespace roipoly {

enum class CostMode { euclidean, index };

inline const char* to_string(CostMode m) { return m == CostMode::index ? "index" : "euclidean"; }

inline CostMode cost_mode_from_string(const std::string& s) {
  if (s == "index") return CostMode::index;
  if (s == "euclidean") return CostMode::euclidean;
  throw InvalidInput("unknown cost mode '" + s + "' (expected index|euclidean)");
}

struct ContourSequence {
  std::vector<Point2> points;  // dense, counterclockwise, cyclic
  std::vector<double> arc;     // arc-length of each point from the start
  double perimeter = 0.0;
  std::size_t start_index = 0;
  std::vector<std::size_t> gt_indices;
  std::vector<std::size_t> sample_indices;

  std::size_t gt_count() const { return gt_indices.size(); }
};

struct CostMatrix {
  int rows = 0;  // sampled vertices (M)
  int cols = 0;  // ground-truth vertices (G)
  std::vector<double> values;  // row-major
  CostMode mode = CostMode::index;

  double at(int r, int c) const { return values[static_cast<std::size_t>(r) * cols + c]; }
};

struct AssignmentMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<int> row_of_col;

  bool at(int r, int c) const { return row_of_col[c] == r; }
  double total_cost(const CostMatrix& cost) const {
    double sum = 0.0;
    for (int c = 0; c < cols; ++c) sum += cost.at(row_of_col[c], c);
    return sum;
  }
};

struct VertexTargetSet {
  std::vector<Point2> vertices;  // M slots in contour sample order
  std::vector<std::uint8_t> labels;
  std::string source_polygon_id;
  std::vector<int> slot_of_gt;  // slot holding GT vertex j (GT order from start)

  std::size_t size() const { return vertices.size(); }
  std::size_t valid_count() const {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), std::uint8_t{1}));
  }
  /// Valid slots read in slot order.
  std::vector<Point2> valid_vertices() const {
    std::vector<Point2> out;
    for (std::size_t i = 0; i < vertices.size(); ++i) {
      if (labels[i]) out.push_back(vertices[i]);
    }
    return out;
  }
};

/// Index of the top-left vertex: lexicographic minimum of (y, x).
inline std::size_t top_left_vertex(const Polygon& p) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < p.size(); ++i) {
    if (p[i].y < p[best].y || (p[i].y == p[best].y && p[i].x < p[best].x)) best = i;
  }
  return best;
}

/// Counterclockwise copy of `p` whose first vertex is its top-left vertex.
inline Polygon canonical_ring(const Polygon& p) {
  const Polygon ccw = ensure_ccw(p);
  const std::size_t start = top_left_vertex(ccw);
  std::vector<Point2> v;
  v.reserve(ccw.size());
  for (std::size_t i = 0; i < ccw.size(); ++i) v.push_back(ccw.vertex(start + i));
  return Polygon(std::move(v));
}

inline ContourSequence build_contour(const Polygon& p, double spacing) {
  if (!(spacing > 0.0)) throw InvalidInput("contour spacing must be positive");
  if (!is_simple(p)) throw InvalidInput("polygon is self-intersecting");
  const ResampledContour rc = resample_contour(canonical_ring(p), spacing);
  ContourSequence c;
  c.points = rc.points;
  c.arc = rc.arc;
  c.perimeter = rc.perimeter;
  c.start_index = 0;
  c.gt_indices = rc.vertex_indices;
  return c;
}

/// Places M samples at arc-lengths k * perimeter / M (k = 0..M-1) and inserts
/// them into the dense sequence (reusing an existing point closer than 1e-9 px
/// in arc-length). GT indices are updated for the insertions.
inline ContourSequence sample_vertices(const ContourSequence& c, int m) {
  const int g = static_cast<int>(c.gt_count());
  if (m < 3) throw InvalidInput("M must be at least 3");
  if (m < g) {
    throw InvalidInput("M (" + std::to_string(m) + ") must not be smaller than the " +
                       std::to_string(g) + " ground-truth vertices");
  }
  constexpr double kMergeTol = 1e-9;
  const std::size_t n = c.points.size();
  std::vector<std::uint8_t> is_gt(n, 0);
  for (std::size_t i : c.gt_indices) is_gt[i] = 1;

  ContourSequence out;
  out.perimeter = c.perimeter;
  out.start_index = 0;
  int k = 0;
  auto sample_arc = [&](int idx) { return c.perimeter * static_cast<double>(idx) / m; };
  for (std::size_t i = 0; i < n; ++i) {
    const double a0 = c.arc[i];
    const double a1 = (i + 1 < n) ? c.arc[i + 1] : c.perimeter;
    const Point2 p0 = c.points[i];
    const Point2 p1 = c.points[(i + 1) % n];
    if (is_gt[i]) out.gt_indices.push_back(out.points.size());
    out.points.push_back(p0);
    out.arc.push_back(a0);
    // A sample coinciding with this point reuses it.
    if (k < m && std::abs(sample_arc(k) - a0) <= kMergeTol) {
      out.sample_indices.push_back(out.points.size() - 1);
      ++k;
    }
    while (k < m) {
      const double s = sample_arc(k);
      if (s >= a1 - kMergeTol) break;
      const double t = (s - a0) / (a1 - a0);
      out.sample_indices.push_back(out.points.size());
      out.points.push_back(p0 + t * (p1 - p0));
      out.arc.push_back(s);
      ++k;
    }
  }
  if (k != m) throw NumericalFailure("sample_vertices: failed to place every sample");
  return out;
}

inline CostMatrix cost_matrix(const ContourSequence& c, CostMode mode, bool cyclic = false) {
  CostMatrix cm;
  cm.rows = static_cast<int>(c.sample_indices.size());
  cm.cols = static_cast<int>(c.gt_indices.size());
  cm.mode = mode;
  cm.values.resize(static_cast<std::size_t>(cm.rows) * cm.cols);
  const double length = static_cast<double>(c.points.size());
  for (int i = 0; i < cm.rows; ++i) {
    for (int j = 0; j < cm.cols; ++j) {
      const std::size_t si = c.sample_indices[i];
      const std::size_t vj = c.gt_indices[j];
      double value = 0.0;
      if (mode == CostMode::euclidean) {
        value = distance(c.points[si], c.points[vj]);
      } else {
        value = std::abs(static_cast<double>(si) - static_cast<double>(vj));
        if (cyclic) value = std::min(value, length - value);
      }
      cm.values[static_cast<std::size_t>(i) * cm.cols + j] = value;
    }
  }
  return cm;
}

inline AssignmentMatrix assign(const CostMatrix& cost) {
  AssignmentMatrix a;
  a.rows = cost.rows;
  a.cols = cost.cols;
  a.row_of_col = solve_assignment(cost.rows, cost.cols, cost.values);
  return a;
}

struct EncodingOptions {
  double spacing = 0.5;
  bool cyclic_index = false;
};

inline VertexTargetSet build_target(const Polygon& p, int m, CostMode mode,
                                    const EncodingOptions& opts = {},
                                    std::string source_id = {}) {
  const ContourSequence sampled = sample_vertices(build_contour(p, opts.spacing), m);
  const CostMatrix cost = cost_matrix(sampled, mode, opts.cyclic_index);
  const AssignmentMatrix x = assign(cost);

  VertexTargetSet t;
  t.source_polygon_id = std::move(source_id);
  t.vertices.reserve(m);
  for (std::size_t idx : sampled.sample_indices) t.vertices.push_back(sampled.points[idx]);
  t.labels.assign(m, 0);
  t.slot_of_gt.resize(x.cols);
  for (int j = 0; j < x.cols; ++j) {
    const int slot = x.row_of_col[j];
    t.vertices[slot] = sampled.points[sampled.gt_indices[j]];
    t.labels[slot] = 1;
    t.slot_of_gt[j] = slot;
  }
  return t;
}

/// True when the valid slots, read in slot order, are a cyclic rotation of the
/// ring `gt` (same direction).
inline bool preserves_cyclic_order(const VertexTargetSet& t, const Polygon& gt) {
  const std::vector<Point2> valid = t.valid_vertices();
  const std::size_t n = gt.size();
  if (valid.size() != n) return false;
  for (std::size_t shift = 0; shift < n; ++shift) {
    bool ok = true;
    for (std::size_t i = 0; i < n && ok; ++i) ok = valid[i] == gt.vertex(shift + i);
    if (ok) return true;
  }
  return false;
}

}  // namespace roipoly

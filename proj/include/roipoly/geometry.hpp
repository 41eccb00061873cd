#pragma once

// Polygon primitives shared by target encoding and the evaluation metrics.
//
// Coordinate frame: image convention, x to the right, y pointing DOWN.
// "Counterclockwise" always means counterclockwise as seen on screen. In the
// y-down frame such a ring has a NEGATIVE shoelace sum, so
//   signed_area(p) < 0  <=>  p is counterclockwise (canonical orientation).
// Tangent angles are reported in the on-screen sense as well: a direction
// pointing right is 0, pointing up the screen is +pi/2.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "roipoly/errors.hpp"

namespace roipoly {

struct Point2 {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point2&, const Point2&) = default;
  friend Point2 operator+(Point2 a, Point2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Point2 operator-(Point2 a, Point2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Point2 operator*(double s, Point2 a) { return {s * a.x, s * a.y}; }
};

inline double dot(Point2 a, Point2 b) { return a.x * b.x + a.y * b.y; }
inline double cross(Point2 a, Point2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Point2 a) { return std::hypot(a.x, a.y); }
inline double distance(Point2 a, Point2 b) { return norm(a - b); }

/// Closed ring of vertices; the edge from the last vertex back to the first is
/// implicit. Construction validates: at least 3 vertices, all finite, and no
/// two cyclically consecutive vertices identical.
class Polygon {
 public:
  Polygon() = default;
  explicit Polygon(std::vector<Point2> vertices) : vertices_(std::move(vertices)) {
    validate();
  }
  Polygon(std::initializer_list<Point2> vertices) : vertices_(vertices) { validate(); }

  std::size_t size() const { return vertices_.size(); }
  const Point2& operator[](std::size_t i) const { return vertices_[i]; }
  const Point2& vertex(std::size_t i) const { return vertices_[i % vertices_.size()]; }
  const std::vector<Point2>& vertices() const { return vertices_; }
  auto begin() const { return vertices_.begin(); }
  auto end() const { return vertices_.end(); }

  friend bool operator==(const Polygon&, const Polygon&) = default;

 private:
  void validate() const {
    if (vertices_.size() < 3) {
      throw InvalidInput("polygon needs at least 3 vertices, got " +
                         std::to_string(vertices_.size()));
    }
    for (std::size_t i = 0; i < vertices_.size(); ++i) {
      const Point2& a = vertices_[i];
      if (!std::isfinite(a.x) || !std::isfinite(a.y)) {
        throw InvalidInput("polygon vertex " + std::to_string(i) + " is not finite");
      }
      if (a == vertices_[(i + 1) % vertices_.size()]) {
        throw InvalidInput("polygon has identical consecutive vertices at " +
                           std::to_string(i));
      }
    }
  }

  std::vector<Point2> vertices_;
};

/// Row-major binary raster; bit (x, y) covers the pixel [x, x+1) x [y, y+1).
struct MaskGrid {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;

  MaskGrid() = default;
  MaskGrid(int w, int h) : width(w), height(h), bits(static_cast<std::size_t>(w) * h, 0) {
    if (w < 1 || h < 1) throw InvalidInput("mask dimensions must be positive");
  }

  bool at(int x, int y) const { return bits[static_cast<std::size_t>(y) * width + x] != 0; }
  void set(int x, int y, bool v = true) {
    bits[static_cast<std::size_t>(y) * width + x] = v ? 1 : 0;
  }
  std::size_t count() const {
    return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
  }
};

// ---------------------------------------------------------------------------
// Orientation

/// Shoelace area. Negative for counterclockwise rings in the y-down frame.
inline double signed_area(std::span<const Point2> ring) {
  if (ring.size() < 3) throw InvalidInput("signed_area: degenerate ring");
  double sum = 0.0;
  for (std::size_t i = 0; i < ring.size(); ++i) {
    const Point2& a = ring[i];
    const Point2& b = ring[(i + 1) % ring.size()];
    sum += a.x * b.y - b.x * a.y;
  }
  return 0.5 * sum;
}
inline double signed_area(const Polygon& p) { return signed_area(std::span(p.vertices())); }

inline bool is_ccw(const Polygon& p) { return signed_area(p) < 0.0; }

/// Returns `p` unchanged if it is counterclockwise (on screen), otherwise its
/// reversal. Idempotent.
inline Polygon ensure_ccw(const Polygon& p) {
  if (signed_area(p) <= 0.0) return p;
  std::vector<Point2> v(p.vertices().rbegin(), p.vertices().rend());
  return Polygon(std::move(v));
}

inline double perimeter(const Polygon& p) {
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) total += distance(p[i], p.vertex(i + 1));
  return total;
}

// ---------------------------------------------------------------------------
// Simplicity

namespace detail {

inline int orient_sign(Point2 a, Point2 b, Point2 c) {
  const double v = cross(b - a, c - a);
  return (v > 0) - (v < 0);
}

inline bool on_segment(Point2 a, Point2 b, Point2 q) {
  return std::min(a.x, b.x) <= q.x && q.x <= std::max(a.x, b.x) &&
         std::min(a.y, b.y) <= q.y && q.y <= std::max(a.y, b.y);
}

inline bool segments_intersect(Point2 a, Point2 b, Point2 c, Point2 d) {
  const int o1 = orient_sign(a, b, c);
  const int o2 = orient_sign(a, b, d);
  const int o3 = orient_sign(c, d, a);
  const int o4 = orient_sign(c, d, b);
  if (o1 != o2 && o3 != o4) return true;
  if (o1 == 0 && on_segment(a, b, c)) return true;
  if (o2 == 0 && on_segment(a, b, d)) return true;
  if (o3 == 0 && on_segment(c, d, a)) return true;
  if (o4 == 0 && on_segment(c, d, b)) return true;
  return false;
}

}  // namespace detail

/// True when no two edges meet except adjacent edges at their shared vertex.
/// Quadratic segment-pair test.
inline bool is_simple(const Polygon& p) {
  const std::size_t n = p.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Point2 a = p[i];
    const Point2 b = p.vertex(i + 1);
    for (std::size_t j = i + 1; j < n; ++j) {
      const Point2 c = p[j];
      const Point2 d = p.vertex(j + 1);
      const bool adjacent = (j == i + 1) || (i == 0 && j == n - 1);
      if (adjacent) {
        // Adjacent edges may only share their common vertex: reject folding
        // back onto each other.
        const Point2 shared = (j == i + 1) ? b : a;
        const Point2 other_i = (j == i + 1) ? a : b;
        const Point2 other_j = (j == i + 1) ? d : c;
        if (detail::orient_sign(other_i, shared, other_j) == 0 &&
            dot(other_i - shared, other_j - shared) > 0) {
          return false;
        }
        continue;
      }
      if (detail::segments_intersect(a, b, c, d)) return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------------------
// Rasterization

/// Even-odd membership with half-open edge rules: an edge owns its upper
/// endpoint row but not its lower one (y0 <= y < y1), and a point lying exactly
/// on a left boundary is inside while one on a right boundary is outside
/// (top-left fill convention).
inline bool contains_even_odd(const Polygon& p, Point2 q) {
  bool inside = false;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const Point2 a = p[i];
    const Point2 b = p.vertex(i + 1);
    if ((a.y <= q.y && q.y < b.y) || (b.y <= q.y && q.y < a.y)) {
      const double xc = a.x + (q.y - a.y) * (b.x - a.x) / (b.y - a.y);
      if (xc <= q.x) inside = !inside;
    }
  }
  return inside;
}

/// Scanline fill. Pixel (x, y) is set iff its center (x+0.5, y+0.5) is inside
/// `p` under `contains_even_odd`.
inline MaskGrid rasterize(const Polygon& p, int width, int height) {
  MaskGrid mask(width, height);
  std::vector<double> crossings;
  crossings.reserve(p.size());
  for (int row = 0; row < height; ++row) {
    const double y = row + 0.5;
    crossings.clear();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const Point2 a = p[i];
      const Point2 b = p.vertex(i + 1);
      if ((a.y <= y && y < b.y) || (b.y <= y && y < a.y)) {
        crossings.push_back(a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y));
      }
    }
    std::sort(crossings.begin(), crossings.end());
    // Center x+0.5 is inside iff an odd number of crossings satisfy xc <= x+0.5,
    // i.e. it lies in [c0, c1), [c2, c3), ...
    for (std::size_t k = 0; k + 1 < crossings.size(); k += 2) {
      const int first = static_cast<int>(std::ceil(crossings[k] - 0.5));
      const int last = static_cast<int>(std::ceil(crossings[k + 1] - 0.5)) - 1;
      for (int col = std::max(first, 0); col <= std::min(last, width - 1); ++col) {
        mask.set(col, row);
      }
    }
  }
  return mask;
}

// ---------------------------------------------------------------------------
// Distances

inline double point_segment_distance(Point2 q, Point2 a, Point2 b) {
  const Point2 ab = b - a;
  const double len2 = dot(ab, ab);
  if (len2 == 0.0) return distance(q, a);
  const double t = std::clamp(dot(q - a, ab) / len2, 0.0, 1.0);
  return distance(q, a + t * ab);
}

inline double point_to_boundary_distance(Point2 q, const Polygon& p) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < p.size(); ++i) {
    best = std::min(best, point_segment_distance(q, p[i], p.vertex(i + 1)));
  }
  return best;
}

// ---------------------------------------------------------------------------
// Arc-length resampling

/// Dense contour produced by `resample_contour`: the points plus the position
/// of every polygon vertex in the sequence and each point's arc-length from
/// the first vertex.
struct ResampledContour {
  std::vector<Point2> points;
  std::vector<std::size_t> vertex_indices;
  std::vector<double> arc;
  double perimeter = 0.0;
};

/// Walks the ring from vertex 0 and emits a point at every multiple of
/// `spacing` in arc-length, plus every vertex. Uniform points closer than
/// 1e-9 px (in arc-length) to a vertex are merged into that vertex.
inline ResampledContour resample_contour(const Polygon& p, double spacing) {
  if (!(spacing > 0.0) || !std::isfinite(spacing)) {
    throw InvalidInput("resample spacing must be a positive finite number");
  }
  constexpr double kMergeTol = 1e-9;
  ResampledContour out;
  const double total = perimeter(p);
  out.perimeter = total;
  double edge_start = 0.0;
  std::size_t k = 1;  // next uniform multiple to emit
  for (std::size_t i = 0; i < p.size(); ++i) {
    const Point2 a = p[i];
    const Point2 b = p.vertex(i + 1);
    const double len = distance(a, b);
    const double edge_end = edge_start + len;
    out.vertex_indices.push_back(out.points.size());
    out.points.push_back(a);
    out.arc.push_back(edge_start);
    for (;; ++k) {
      const double s = static_cast<double>(k) * spacing;
      if (s >= total - kMergeTol) break;
      if (s <= edge_start + kMergeTol) continue;
      if (s >= edge_end - kMergeTol) break;
      const double t = (s - edge_start) / len;
      out.points.push_back(a + t * (b - a));
      out.arc.push_back(s);
    }
    edge_start = edge_end;
  }
  return out;
}

inline std::vector<Point2> resample_by_arclength(const Polygon& p, double spacing) {
  return resample_contour(p, spacing).points;
}

// ---------------------------------------------------------------------------
// Tangents

/// Directed tangent angle at each point from the forward difference to the
/// next point of the cyclic sequence, in (-pi, pi], on-screen sense
/// (atan2(-dy, dx)). A zero-length forward segment borrows the direction of
/// the next non-degenerate segment.
inline std::vector<double> tangent_angles(std::span<const Point2> pts) {
  const std::size_t n = pts.size();
  if (n < 2) throw InvalidInput("tangent_angles needs at least 2 points");
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t j = i;
    Point2 d{0.0, 0.0};
    for (std::size_t step = 0; step < n; ++step, ++j) {
      d = pts[(j + 1) % n] - pts[j % n];
      if (d.x != 0.0 || d.y != 0.0) break;
    }
    if (d.x == 0.0 && d.y == 0.0) throw InvalidInput("tangent_angles: all points coincide");
    double ang = std::atan2(-d.y, d.x);
    if (ang <= -std::numbers::pi) ang += 2.0 * std::numbers::pi;
    out[i] = ang;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Rigid transforms (visual sense)

/// Rotates counterclockwise on screen by `theta` radians about `center`.
inline Point2 rotate_point(Point2 q, double theta, Point2 center) {
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  const Point2 d = q - center;
  // Visual CCW in the y-down frame is clockwise in the math frame.
  return {center.x + c * d.x + s * d.y, center.y - s * d.x + c * d.y};
}

inline Polygon rotate(const Polygon& p, double theta, Point2 center) {
  std::vector<Point2> v;
  v.reserve(p.size());
  for (const Point2& q : p) v.push_back(rotate_point(q, theta, center));
  return Polygon(std::move(v));
}

inline Polygon translate(const Polygon& p, Point2 offset) {
  std::vector<Point2> v;
  v.reserve(p.size());
  for (const Point2& q : p) v.push_back(q + offset);
  return Polygon(std::move(v));
}

inline Point2 centroid_of_vertices(const Polygon& p) {
  Point2 c{};
  for (const Point2& q : p) c = c + q;
  return (1.0 / static_cast<double>(p.size())) * c;
}

}  // namespace roipoly

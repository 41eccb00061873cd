#pragma once

// Polygon evaluation: mask and boundary IoU, COCO-style AP/AR, PoLiS, max
// tangent angle error, complexity-aware IoU, vertex-count ratio and the
// room/corner/angle floorplan scores.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "roipoly/errors.hpp"
#include "roipoly/geometry.hpp"

namespace roipoly {

// ---------------------------------------------------------------------------
// IoU

inline double mask_iou(const MaskGrid& a, const MaskGrid& b) {
  if (a.width != b.width || a.height != b.height) throw InvalidInput("mask sizes differ");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.bits.size(); ++i) {
    inter += (a.bits[i] & b.bits[i]) ? 1 : 0;
    uni += (a.bits[i] | b.bits[i]) ? 1 : 0;
  }
  return uni ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

inline double mask_iou(const Polygon& a, const Polygon& b, int w, int h) {
  return mask_iou(rasterize(a, w, h), rasterize(b, w, h));
}

namespace detail {

/// 1-D squared distance transform of sampled function f (lower envelope of parabolas).
inline void edt_1d(const double* f, int n, double* d, std::vector<int>& v, std::vector<double>& z) {
  const double inf = std::numeric_limits<double>::infinity();
  int k = 0;
  v[0] = 0;
  z[0] = -inf;
  z[1] = inf;
  for (int q = 1; q < n; ++q) {
    if (f[q] == inf) continue;
    if (f[v[k]] == inf) {
      v[k] = q;
      continue;
    }
    double s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k]);
    while (s <= z[k]) {
      --k;
      s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k]);
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = inf;
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    const double dq = q - v[k];
    d[q] = f[v[k]] == inf ? inf : dq * dq + f[v[k]];
  }
}

}  // namespace detail

/// Squared Euclidean distance from every pixel centre to the nearest
/// background pixel centre. Pixels outside the grid count as background.
inline std::vector<double> squared_distance_to_background(const MaskGrid& m) {
  const int w = m.width + 2, h = m.height + 2;  // one-pixel background frame
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> f(static_cast<std::size_t>(w) * h, 0.0);
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) {
      if (m.at(x, y)) f[static_cast<std::size_t>(y + 1) * w + x + 1] = inf;
    }
  }
  const int n = std::max(w, h);
  std::vector<double> in(n), out(n), z(n + 1);
  std::vector<int> v(n);
  for (int x = 0; x < w; ++x) {
    for (int y = 0; y < h; ++y) in[y] = f[static_cast<std::size_t>(y) * w + x];
    detail::edt_1d(in.data(), h, out.data(), v, z);
    for (int y = 0; y < h; ++y) f[static_cast<std::size_t>(y) * w + x] = out[y];
  }
  for (int y = 0; y < h; ++y) {
    detail::edt_1d(&f[static_cast<std::size_t>(y) * w], w, out.data(), v, z);
    std::copy_n(out.data(), w, &f[static_cast<std::size_t>(y) * w]);
  }
  std::vector<double> res(static_cast<std::size_t>(m.width) * m.height);
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) res[static_cast<std::size_t>(y) * m.width + x] = f[static_cast<std::size_t>(y + 1) * w + x + 1];
  }
  return res;
}

/// Mask pixels within distance d of the background.
inline MaskGrid boundary_band(const MaskGrid& m, double d) {
  const std::vector<double> dist2 = squared_distance_to_background(m);
  MaskGrid band(m.width, m.height);
  const double d2 = d * d;
  for (std::size_t i = 0; i < band.bits.size(); ++i) band.bits[i] = (m.bits[i] && dist2[i] <= d2) ? 1 : 0;
  return band;
}

/// Default band width: 2% of the image diagonal, at least 1 px.
inline double default_boundary_width(int w, int h) {
  return std::max(1.0, 0.02 * std::hypot(static_cast<double>(w), static_cast<double>(h)));
}

inline double boundary_iou(const MaskGrid& a, const MaskGrid& b, double d) {
  if (!(d >= 1.0)) throw InvalidInput("boundary width must be at least 1 px");
  return mask_iou(boundary_band(a, d), boundary_band(b, d));
}

inline double boundary_iou(const Polygon& a, const Polygon& b, int w, int h, double d) {
  return boundary_iou(rasterize(a, w, h), rasterize(b, w, h), d);
}

// ---------------------------------------------------------------------------
// COCO-style AP / AR

struct Detection {
  int image_id = 0;
  Polygon polygon;
  double score = 0.0;
};

struct EvalImage {
  int id = 0;
  int width = 0;
  int height = 0;
  std::vector<Polygon> gts;
};

struct AreaRange {
  double lo = 0.0;
  double hi = std::numeric_limits<double>::infinity();
};

struct CocoOptions {
  std::vector<double> thresholds;  // empty: 0.50, 0.55, ..., 0.95
  double small_max = 32.0 * 32.0;
  double medium_max = 96.0 * 96.0;
  int max_dets = 100;
};

inline std::vector<double> default_iou_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back(0.5 + 0.05 * i);
  return t;
}

/// Undefined entries (no GT in the bucket) are empty.
struct CocoSummary {
  std::optional<double> ap, ap50, ap75, ap_s, ap_m, ap_l;
  std::optional<double> ar, ar50, ar75, ar_s, ar_m, ar_l;
  std::vector<double> ap_per_threshold;  // all areas, -1 when undefined
};

/// IoU of detection `d` (index into the detection list) with GT `g` of image `img`.
using PairIoU = std::function<double(std::size_t det, const EvalImage& img, std::size_t gt)>;

namespace detail {

struct ThresholdCurve {
  double ap = -1.0;  // -1: no GT in range
  double recall = -1.0;
};

/// One area range, one threshold, all images.
inline ThresholdCurve coco_curve(const std::vector<EvalImage>& images, const std::vector<Detection>& dets,
                                 const std::map<int, std::vector<std::size_t>>& dets_by_image,
                                 const std::map<std::pair<int, std::size_t>, std::vector<double>>& ious,
                                 double thr, AreaRange range) {
  struct Scored {
    double score;
    bool tp;
    bool ignore;
  };
  std::vector<Scored> all;
  std::size_t n_gt = 0;
  for (const EvalImage& img : images) {
    std::vector<char> gt_ignore(img.gts.size());
    for (std::size_t g = 0; g < img.gts.size(); ++g) {
      const double a = std::abs(signed_area(img.gts[g]));
      gt_ignore[g] = (a < range.lo || a > range.hi) ? 1 : 0;
      n_gt += gt_ignore[g] ? 0 : 1;
    }
    // Non-ignored GTs are tried first.
    std::vector<std::size_t> gt_order(img.gts.size());
    std::iota(gt_order.begin(), gt_order.end(), 0);
    std::stable_sort(gt_order.begin(), gt_order.end(),
                     [&](std::size_t a, std::size_t b) { return gt_ignore[a] < gt_ignore[b]; });
    std::vector<char> gt_used(img.gts.size(), 0);
    auto it = dets_by_image.find(img.id);
    if (it == dets_by_image.end()) continue;
    for (std::size_t di : it->second) {
      const std::vector<double>& row = ious.at({img.id, di});
      double best = std::min(thr, 1.0 - 1e-10);
      long m = -1;
      for (std::size_t g : gt_order) {
        if (gt_used[g]) continue;
        if (m >= 0 && !gt_ignore[static_cast<std::size_t>(m)] && gt_ignore[g]) break;
        if (row[g] < best) continue;
        best = row[g];
        m = static_cast<long>(g);
      }
      bool ignore = false;
      if (m >= 0) {
        gt_used[static_cast<std::size_t>(m)] = 1;
        ignore = gt_ignore[static_cast<std::size_t>(m)] != 0;
      } else {
        const double a = std::abs(signed_area(dets[di].polygon));
        ignore = a < range.lo || a > range.hi;
      }
      all.push_back({dets[di].score, m >= 0, ignore});
    }
  }
  ThresholdCurve out;
  if (n_gt == 0) return out;
  std::stable_sort(all.begin(), all.end(), [](const Scored& a, const Scored& b) { return a.score > b.score; });
  std::vector<double> recall, precision;
  double tp = 0, fp = 0;
  for (const Scored& s : all) {
    if (s.ignore) continue;
    (s.tp ? tp : fp) += 1;
    recall.push_back(tp / static_cast<double>(n_gt));
    precision.push_back(tp / (tp + fp));
  }
  out.recall = recall.empty() ? 0.0 : recall.back();
  for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double sum = 0.0;
  for (int k = 0; k <= 100; ++k) {
    const double r = k / 100.0;
    const auto pos = std::lower_bound(recall.begin(), recall.end(), r);
    if (pos != recall.end()) sum += precision[static_cast<std::size_t>(pos - recall.begin())];
  }
  out.ap = sum / 101.0;
  return out;
}

inline std::optional<double> mean_defined(const std::vector<double>& v) {
  double s = 0.0;
  int n = 0;
  for (double x : v) {
    if (x >= 0.0) {
      s += x;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return s / n;
}

}  // namespace detail

inline CocoSummary coco_ap(const std::vector<Detection>& dets, const std::vector<EvalImage>& images,
                           const PairIoU& iou_fn, const CocoOptions& opt = {}) {
  const std::vector<double> thr = opt.thresholds.empty() ? default_iou_thresholds() : opt.thresholds;
  std::map<int, const EvalImage*> by_id;
  for (const EvalImage& img : images) {
    if (!by_id.emplace(img.id, &img).second) throw InvalidInput("duplicate image id " + std::to_string(img.id));
  }
  // Highest-scoring max_dets detections per image, score-descending.
  std::map<int, std::vector<std::size_t>> dets_by_image;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    if (!by_id.count(dets[i].image_id)) {
      throw InvalidInput("detection refers to unknown image " + std::to_string(dets[i].image_id));
    }
    dets_by_image[dets[i].image_id].push_back(i);
  }
  std::map<std::pair<int, std::size_t>, std::vector<double>> ious;
  for (auto& [img_id, list] : dets_by_image) {
    std::stable_sort(list.begin(), list.end(),
                     [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
    if (static_cast<int>(list.size()) > opt.max_dets) list.resize(static_cast<std::size_t>(opt.max_dets));
    const EvalImage& img = *by_id.at(img_id);
    for (std::size_t di : list) {
      std::vector<double> row(img.gts.size());
      for (std::size_t g = 0; g < img.gts.size(); ++g) row[g] = iou_fn(di, img, g);
      ious.emplace(std::make_pair(img_id, di), std::move(row));
    }
  }
  const AreaRange ranges[4] = {{0.0, std::numeric_limits<double>::infinity()},
                               {0.0, opt.small_max},
                               {opt.small_max, opt.medium_max},
                               {opt.medium_max, std::numeric_limits<double>::infinity()}};
  std::vector<double> ap[4], ar[4];
  for (int r = 0; r < 4; ++r) {
    for (double t : thr) {
      const detail::ThresholdCurve c = detail::coco_curve(images, dets, dets_by_image, ious, t, ranges[r]);
      ap[r].push_back(c.ap);
      ar[r].push_back(c.recall);
    }
  }
  auto at = [&](const std::vector<double>& v, double t) -> std::optional<double> {
    for (std::size_t i = 0; i < thr.size(); ++i) {
      if (std::abs(thr[i] - t) < 1e-9) return v[i] >= 0.0 ? std::optional<double>(v[i]) : std::nullopt;
    }
    return std::nullopt;
  };
  CocoSummary s;
  s.ap = detail::mean_defined(ap[0]);
  s.ap50 = at(ap[0], 0.5);
  s.ap75 = at(ap[0], 0.75);
  s.ap_s = detail::mean_defined(ap[1]);
  s.ap_m = detail::mean_defined(ap[2]);
  s.ap_l = detail::mean_defined(ap[3]);
  s.ar = detail::mean_defined(ar[0]);
  s.ar50 = at(ar[0], 0.5);
  s.ar75 = at(ar[0], 0.75);
  s.ar_s = detail::mean_defined(ar[1]);
  s.ar_m = detail::mean_defined(ar[2]);
  s.ar_l = detail::mean_defined(ar[3]);
  s.ap_per_threshold = ap[0];
  return s;
}

/// Pair function rasterizing both polygons in the image frame.
inline PairIoU mask_iou_fn(const std::vector<Detection>& dets) {
  return [&dets](std::size_t d, const EvalImage& img, std::size_t g) {
    return mask_iou(dets[d].polygon, img.gts[g], img.width, img.height);
  };
}

inline PairIoU boundary_iou_fn(const std::vector<Detection>& dets) {
  return [&dets](std::size_t d, const EvalImage& img, std::size_t g) {
    return boundary_iou(dets[d].polygon, img.gts[g], img.width, img.height,
                        default_boundary_width(img.width, img.height));
  };
}

// ---------------------------------------------------------------------------
// Shape metrics

/// (1/2|A|) sum_a d(a, dB) + (1/2|B|) sum_b d(b, dA), over vertices.
inline double polis(const Polygon& a, const Polygon& b) {
  double sa = 0.0, sb = 0.0;
  for (const Point2& p : a) sa += point_to_boundary_distance(p, b);
  for (const Point2& p : b) sb += point_to_boundary_distance(p, a);
  return sa / (2.0 * static_cast<double>(a.size())) + sb / (2.0 * static_cast<double>(b.size()));
}

/// Largest tangent-direction disagreement, in degrees, between 1-px samples
/// of `pred` and their nearest 1-px samples of `gt`. Both rings are oriented
/// counterclockwise first.
inline double mta(const Polygon& pred, const Polygon& gt) {
  const std::vector<Point2> ps = resample_by_arclength(ensure_ccw(pred), 1.0);
  const std::vector<Point2> gs = resample_by_arclength(ensure_ccw(gt), 1.0);
  const std::vector<double> pt = tangent_angles(ps);
  const std::vector<double> gtang = tangent_angles(gs);
  double worst = 0.0;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    std::size_t best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < gs.size(); ++j) {
      const double d = distance(ps[i], gs[j]);
      if (d < bd) {
        bd = d;
        best = j;
      }
    }
    const double diff = std::abs(std::remainder(pt[i] - gtang[best], 2.0 * std::numbers::pi));
    worst = std::max(worst, diff * 180.0 / std::numbers::pi);
  }
  return worst;
}

/// IoU * (1 - |n_pred - n_gt| / (n_pred + n_gt)), evaluated as
/// IoU * 2 min(n_pred, n_gt) / (n_pred + n_gt).
inline double ciou(double iou, std::size_t n_pred, std::size_t n_gt) {
  const double np = static_cast<double>(n_pred), ng = static_cast<double>(n_gt);
  return iou * (2.0 * std::min(np, ng)) / (np + ng);
}

struct MatchedPair {
  std::size_t pred = 0;
  std::size_t gt = 0;
  double iou = 0.0;
};

/// One-to-one greedy matching by descending IoU, keeping pairs with IoU >= thresh.
/// Ties are broken by (pred, gt) index.
inline std::vector<MatchedPair> greedy_match(const std::vector<std::vector<double>>& iou, double thresh) {
  std::vector<MatchedPair> cand;
  for (std::size_t p = 0; p < iou.size(); ++p) {
    for (std::size_t g = 0; g < iou[p].size(); ++g) {
      if (iou[p][g] >= thresh) cand.push_back({p, g, iou[p][g]});
    }
  }
  std::stable_sort(cand.begin(), cand.end(), [](const MatchedPair& a, const MatchedPair& b) { return a.iou > b.iou; });
  std::vector<MatchedPair> out;
  std::vector<char> pu(iou.size(), 0), gu(iou.empty() ? 0 : iou.front().size(), 0);
  for (const MatchedPair& c : cand) {
    if (pu[c.pred] || gu[c.gt]) continue;
    pu[c.pred] = gu[c.gt] = 1;
    out.push_back(c);
  }
  return out;
}

inline std::vector<std::vector<double>> iou_matrix(const std::vector<Polygon>& preds, const std::vector<Polygon>& gts,
                                                   int w, int h) {
  std::vector<MaskGrid> gm;
  for (const Polygon& g : gts) gm.push_back(rasterize(g, w, h));
  std::vector<std::vector<double>> m(preds.size(), std::vector<double>(gts.size()));
  for (std::size_t p = 0; p < preds.size(); ++p) {
    const MaskGrid pm = rasterize(preds[p], w, h);
    for (std::size_t g = 0; g < gts.size(); ++g) m[p][g] = mask_iou(pm, gm[g]);
  }
  return m;
}

struct CiouResult {
  std::optional<double> ciou;       // mean over matched pairs
  std::optional<double> n_ratio;    // sum pred vertices / sum gt vertices, matched pairs
  std::optional<double> n_ratio_deviation;  // n_ratio - 1
  std::size_t matched = 0;
};

inline CiouResult ciou_and_nratio(const std::vector<Polygon>& preds, const std::vector<Polygon>& gts, int w, int h,
                                  double match_iou = 0.5) {
  const auto pairs = greedy_match(iou_matrix(preds, gts, w, h), match_iou);
  CiouResult r;
  r.matched = pairs.size();
  if (pairs.empty()) return r;
  double s = 0.0, np = 0.0, ng = 0.0;
  for (const MatchedPair& m : pairs) {
    s += ciou(m.iou, preds[m.pred].size(), gts[m.gt].size());
    np += static_cast<double>(preds[m.pred].size());
    ng += static_cast<double>(gts[m.gt].size());
  }
  r.ciou = s / static_cast<double>(pairs.size());
  r.n_ratio = np / ng;
  r.n_ratio_deviation = *r.n_ratio - 1.0;
  return r;
}

// ---------------------------------------------------------------------------
// Floorplan scores

struct PrfCounts {
  std::size_t tp = 0;
  std::size_t n_pred = 0;
  std::size_t n_gt = 0;

  double precision() const { return n_pred ? static_cast<double>(tp) / static_cast<double>(n_pred) : 0.0; }
  double recall() const { return n_gt ? static_cast<double>(tp) / static_cast<double>(n_gt) : 0.0; }
  double f1() const {
    const double p = precision(), r = recall();
    return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
  }
};

struct FloorplanOptions {
  double iou_thresh = 0.5;
  double corner_dist = 10.0;
  double angle_tol_deg = 5.0;
  int width = 256;
  int height = 256;
};

struct FloorplanScores {
  PrfCounts room;
  PrfCounts corner;
  PrfCounts angle;
};

namespace detail {

/// Directions (radians, on-screen sense) of the edges entering and leaving vertex i.
inline std::pair<double, double> incident_directions(const Polygon& p, std::size_t i) {
  const Point2 prev = p.vertex(i + p.size() - 1), cur = p[i], next = p.vertex(i + 1);
  return {std::atan2(-(cur.y - prev.y), cur.x - prev.x), std::atan2(-(next.y - cur.y), next.x - cur.x)};
}

inline double angle_gap_deg(double a, double b) {
  return std::abs(std::remainder(a - b, 2.0 * std::numbers::pi)) * 180.0 / std::numbers::pi;
}

}  // namespace detail

/// Rooms: greedy one-to-one by IoU >= iou_thresh. Corners: inside each matched
/// room pair, greedy one-to-one by distance <= corner_dist. Angles: a matched
/// corner whose entering and leaving edge directions both agree within
/// angle_tol_deg (rings oriented counterclockwise first).
inline FloorplanScores floorplan_scores(const std::vector<Polygon>& pred_rooms, const std::vector<Polygon>& gt_rooms,
                                        const FloorplanOptions& opt = {}) {
  FloorplanScores s;
  s.room.n_pred = pred_rooms.size();
  s.room.n_gt = gt_rooms.size();
  for (const Polygon& p : pred_rooms) s.corner.n_pred += p.size();
  for (const Polygon& g : gt_rooms) s.corner.n_gt += g.size();
  s.angle.n_pred = s.corner.n_pred;
  s.angle.n_gt = s.corner.n_gt;
  const auto rooms = greedy_match(iou_matrix(pred_rooms, gt_rooms, opt.width, opt.height), opt.iou_thresh);
  s.room.tp = rooms.size();
  for (const MatchedPair& rp : rooms) {
    const Polygon pr = ensure_ccw(pred_rooms[rp.pred]);
    const Polygon gr = ensure_ccw(gt_rooms[rp.gt]);
    struct Cand {
      double d;
      std::size_t i, j;
    };
    std::vector<Cand> cand;
    for (std::size_t i = 0; i < pr.size(); ++i) {
      for (std::size_t j = 0; j < gr.size(); ++j) {
        const double d = distance(pr[i], gr[j]);
        if (d <= opt.corner_dist) cand.push_back({d, i, j});
      }
    }
    std::stable_sort(cand.begin(), cand.end(), [](const Cand& a, const Cand& b) { return a.d < b.d; });
    std::vector<char> pu(pr.size(), 0), gu(gr.size(), 0);
    for (const Cand& c : cand) {
      if (pu[c.i] || gu[c.j]) continue;
      pu[c.i] = gu[c.j] = 1;
      ++s.corner.tp;
      const auto [pin, pout] = detail::incident_directions(pr, c.i);
      const auto [gin, gout] = detail::incident_directions(gr, c.j);
      if (detail::angle_gap_deg(pin, gin) <= opt.angle_tol_deg && detail::angle_gap_deg(pout, gout) <= opt.angle_tol_deg) {
        ++s.angle.tp;
      }
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// Dataset report

struct MetricReport {
  CocoSummary mask;
  std::optional<double> ap_boundary;
  std::optional<double> iou_mean;
  std::optional<double> ciou_mean;
  std::optional<double> n_ratio;
  std::optional<double> n_ratio_deviation;
  std::optional<double> mta_mean;
  std::optional<double> polis_mean;
  std::size_t images = 0;
  std::size_t detections = 0;
  std::size_t gt_instances = 0;
  std::size_t matched = 0;
  std::optional<FloorplanScores> floorplan;
};

struct ReportOptions {
  CocoOptions coco;
  double match_iou = 0.5;
  bool boundary_ap = true;
  bool floorplan = false;
  FloorplanOptions floorplan_opts;
};

/// Per-image union-mask IoU averaged over images; shape metrics over
/// per-image greedy matches (IoU >= match_iou) pooled across the dataset.
inline MetricReport evaluate(const std::vector<Detection>& dets, const std::vector<EvalImage>& images,
                             const ReportOptions& opt = {}) {
  MetricReport r;
  r.images = images.size();
  r.detections = dets.size();
  r.mask = coco_ap(dets, images, mask_iou_fn(dets), opt.coco);
  if (opt.boundary_ap) r.ap_boundary = coco_ap(dets, images, boundary_iou_fn(dets), opt.coco).ap;

  std::map<int, std::vector<Polygon>> preds;
  for (const Detection& d : dets) preds[d.image_id].push_back(d.polygon);
  double iou_sum = 0.0, ciou_sum = 0.0, mta_sum = 0.0, polis_sum = 0.0, np = 0.0, ng = 0.0;
  std::size_t iou_n = 0;
  for (const EvalImage& img : images) {
    r.gt_instances += img.gts.size();
    const std::vector<Polygon>& pv = preds[img.id];
    MaskGrid pu(img.width, img.height), gu(img.width, img.height);
    for (const Polygon& p : pv) {
      const MaskGrid m = rasterize(p, img.width, img.height);
      for (std::size_t i = 0; i < m.bits.size(); ++i) pu.bits[i] |= m.bits[i];
    }
    for (const Polygon& g : img.gts) {
      const MaskGrid m = rasterize(g, img.width, img.height);
      for (std::size_t i = 0; i < m.bits.size(); ++i) gu.bits[i] |= m.bits[i];
    }
    if (pu.count() + gu.count() > 0) {
      iou_sum += mask_iou(pu, gu);
      ++iou_n;
    }
    for (const MatchedPair& m : greedy_match(iou_matrix(pv, img.gts, img.width, img.height), opt.match_iou)) {
      const Polygon& p = pv[m.pred];
      const Polygon& g = img.gts[m.gt];
      ciou_sum += ciou(m.iou, p.size(), g.size());
      mta_sum += mta(p, g);
      polis_sum += polis(p, g);
      np += static_cast<double>(p.size());
      ng += static_cast<double>(g.size());
      ++r.matched;
    }
    if (opt.floorplan) {
      FloorplanScores f = floorplan_scores(pv, img.gts, opt.floorplan_opts);
      if (!r.floorplan) r.floorplan = FloorplanScores{};
      for (auto [dst, src] : {std::pair{&r.floorplan->room, &f.room}, std::pair{&r.floorplan->corner, &f.corner},
                              std::pair{&r.floorplan->angle, &f.angle}}) {
        dst->tp += src->tp;
        dst->n_pred += src->n_pred;
        dst->n_gt += src->n_gt;
      }
    }
  }
  if (iou_n) r.iou_mean = iou_sum / static_cast<double>(iou_n);
  if (r.matched) {
    const double n = static_cast<double>(r.matched);
    r.ciou_mean = ciou_sum / n;
    r.mta_mean = mta_sum / n;
    r.polis_mean = polis_sum / n;
    r.n_ratio = np / ng;
    r.n_ratio_deviation = *r.n_ratio - 1.0;
  }
  return r;
}

/// Column name and value, in table order.
inline std::vector<std::pair<std::string, std::optional<double>>> report_columns(const MetricReport& r) {
  std::vector<std::pair<std::string, std::optional<double>>> c = {
      {"AP", r.mask.ap},       {"AP50", r.mask.ap50},   {"AP75", r.mask.ap75},  {"AP_S", r.mask.ap_s},
      {"AP_M", r.mask.ap_m},   {"AP_L", r.mask.ap_l},   {"AR", r.mask.ar},      {"AR50", r.mask.ar50},
      {"AR75", r.mask.ar75},   {"AR_S", r.mask.ar_s},   {"AR_M", r.mask.ar_m},  {"AR_L", r.mask.ar_l},
      {"AP_boundary", r.ap_boundary}, {"IoU", r.iou_mean}, {"C-IoU", r.ciou_mean}, {"N-ratio", r.n_ratio},
      {"MTA", r.mta_mean},     {"PoLiS", r.polis_mean}};
  if (r.floorplan) {
    const FloorplanScores& f = *r.floorplan;
    for (auto [name, p] : {std::pair{"Room", &f.room}, std::pair{"Corner", &f.corner}, std::pair{"Angle", &f.angle}}) {
      c.push_back({std::string(name) + "_P", p->precision()});
      c.push_back({std::string(name) + "_R", p->recall()});
      c.push_back({std::string(name) + "_F1", p->f1()});
    }
  }
  return c;
}

/// Aligned two-row text table; rates are shown as percentages, MTA in
/// degrees, PoLiS in pixels, N-ratio as a ratio. Undefined values print "-".
inline std::string format_report_table(const MetricReport& r) {
  const auto cols = report_columns(r);
  std::ostringstream head, row;
  for (const auto& [name, v] : cols) {
    std::string cell = "-";
    if (v) {
      std::ostringstream os;
      const bool raw = name == "MTA" || name == "PoLiS" || name == "N-ratio";
      os << std::fixed << std::setprecision(raw ? 2 : 1) << (raw ? *v : 100.0 * *v);
      cell = os.str();
    }
    const std::size_t width = std::max(name.size(), cell.size()) + 2;
    head << std::setw(static_cast<int>(width)) << name;
    row << std::setw(static_cast<int>(width)) << cell;
  }
  return head.str() + "\n" + row.str() + "\n";
}

}  // namespace roipoly

#pragma once

// File formats: COCO annotations, COCO-style results and boxes, vertex target
// and raw decoder dumps, metric reports, SVG overlays, PGM/PPM rasters, loss
// curves and the flat key = value run configuration.

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "roipoly/encoding.hpp"
#include "roipoly/errors.hpp"
#include "roipoly/metrics.hpp"
#include "roipoly/training.hpp"

namespace roipoly::io {

using json = nlohmann::json;

inline constexpr int kBuildingCategory = 100;

// ---------------------------------------------------------------------------
// Plain files

inline std::string read_text(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InvalidInput("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  os << text;
  if (!os) throw Error("write to '" + path + "' failed");
}

inline json parse_json(const std::string& text, const std::string& source) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw InvalidInput(source + ": malformed JSON at byte " + std::to_string(e.byte));
  }
}

/// Shortest text that reads back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline double round2(double v) {
  const double r = std::round(v * 100.0) / 100.0;
  return r == 0.0 ? 0.0 : r;
}

namespace detail {

inline json flat_ring(const Polygon& p, bool two_decimals) {
  json ring = json::array();
  for (const Point2& v : p) {
    ring.push_back(two_decimals ? round2(v.x) : v.x);
    ring.push_back(two_decimals ? round2(v.y) : v.y);
  }
  return ring;
}

template <typename T>
T get_field(const json& obj, const char* key, const std::string& ctx) {
  if (!obj.is_object() || !obj.contains(key)) throw InvalidInput(ctx + ": missing '" + key + "'");
  const json& v = obj.at(key);
  if constexpr (std::is_same_v<T, std::string>) {
    if (!v.is_string()) throw InvalidInput(ctx + ": '" + key + "' must be a string");
  } else if constexpr (std::is_integral_v<T>) {
    if (!v.is_number_integer()) throw InvalidInput(ctx + ": '" + key + "' must be an integer");
  } else {
    if (!v.is_number()) throw InvalidInput(ctx + ": '" + key + "' must be a number");
  }
  return v.get<T>();
}

inline std::vector<double> number_list(const json& v, const std::string& ctx) {
  if (!v.is_array()) throw InvalidInput(ctx + ": expected a list of numbers");
  std::vector<double> out;
  out.reserve(v.size());
  for (const json& x : v) {
    if (!x.is_number()) throw InvalidInput(ctx + ": expected a list of numbers");
    const double d = x.get<double>();
    if (!std::isfinite(d)) throw InvalidInput(ctx + ": non-finite coordinate");
    out.push_back(d);
  }
  return out;
}

inline Polygon ring_from_flat(const std::vector<double>& flat, const std::string& ctx) {
  if (flat.size() % 2 != 0) throw InvalidInput(ctx + ": segmentation ring has odd length " + std::to_string(flat.size()));
  if (flat.size() < 6) throw InvalidInput(ctx + ": segmentation ring has fewer than 3 vertices");
  std::vector<Point2> v;
  for (std::size_t i = 0; i < flat.size(); i += 2) v.push_back({flat[i], flat[i + 1]});
  try {
    return Polygon(std::move(v));
  } catch (const InvalidInput& e) {
    throw InvalidInput(ctx + ": " + e.what());
  }
}

inline json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace detail

// ---------------------------------------------------------------------------
// COCO annotations

struct CocoImage {
  int id = 0;
  std::string file_name;
  int width = 0;
  int height = 0;
  friend bool operator==(const CocoImage&, const CocoImage&) = default;
};

struct CocoAnnotation {
  int id = 0;
  int image_id = 0;
  int category_id = kBuildingCategory;
  Polygon polygon;
  std::array<double, 4> bbox{};  // x, y, w, h
  double area = 0.0;
  bool iscrowd = false;
  friend bool operator==(const CocoAnnotation&, const CocoAnnotation&) = default;
};

struct CocoDataset {
  std::vector<CocoImage> images;
  std::vector<CocoAnnotation> annotations;
  std::size_t holes_ignored = 0;  // inner rings dropped while reading

  const CocoImage& image(int id) const {
    for (const CocoImage& im : images) {
      if (im.id == id) return im;
    }
    throw InvalidInput("no image with id " + std::to_string(id));
  }
  std::vector<Polygon> polygons_of(int image_id) const {
    std::vector<Polygon> out;
    for (const CocoAnnotation& a : annotations) {
      if (a.image_id == image_id) out.push_back(a.polygon);
    }
    return out;
  }
  friend bool operator==(const CocoDataset& a, const CocoDataset& b) {
    return a.images == b.images && a.annotations == b.annotations;
  }
};

inline std::array<double, 4> bbox_of(const Polygon& p) {
  double x0 = p[0].x, y0 = p[0].y, x1 = x0, y1 = y0;
  for (const Point2& v : p) {
    x0 = std::min(x0, v.x);
    y0 = std::min(y0, v.y);
    x1 = std::max(x1, v.x);
    y1 = std::max(y1, v.y);
  }
  return {x0, y0, x1 - x0, y1 - y0};
}

/// First ring of each segmentation becomes the polygon; inner rings are
/// counted in `holes_ignored`. Missing bbox/area are computed from the ring.
inline CocoDataset parse_coco(const std::string& text, const std::string& source = "COCO file") {
  const json root = parse_json(text, source);
  if (!root.is_object() || !root.contains("images") || !root["images"].is_array() || !root.contains("annotations") ||
      !root["annotations"].is_array()) {
    throw InvalidInput(source + ": expected an object with 'images' and 'annotations' lists");
  }
  CocoDataset ds;
  std::map<int, bool> seen_images;
  for (const json& im : root["images"]) {
    CocoImage c;
    c.id = detail::get_field<int>(im, "id", source + " image");
    const std::string ctx = source + " image " + std::to_string(c.id);
    c.width = detail::get_field<int>(im, "width", ctx);
    c.height = detail::get_field<int>(im, "height", ctx);
    if (im.contains("file_name")) c.file_name = detail::get_field<std::string>(im, "file_name", ctx);
    if (c.width <= 0 || c.height <= 0) throw InvalidInput(ctx + ": non-positive size");
    if (!seen_images.emplace(c.id, true).second) throw InvalidInput(ctx + ": duplicate image id");
    ds.images.push_back(std::move(c));
  }
  std::map<int, bool> seen_ann;
  for (const json& an : root["annotations"]) {
    const int id = detail::get_field<int>(an, "id", source + " annotation");
    const std::string ctx = "annotation " + std::to_string(id);
    if (!seen_ann.emplace(id, true).second) throw InvalidInput(ctx + ": duplicate annotation id");
    CocoAnnotation a;
    a.id = id;
    a.image_id = detail::get_field<int>(an, "image_id", ctx);
    if (!seen_images.count(a.image_id)) throw InvalidInput(ctx + ": references unknown image " + std::to_string(a.image_id));
    if (an.contains("category_id")) a.category_id = detail::get_field<int>(an, "category_id", ctx);
    if (!an.contains("segmentation")) throw InvalidInput(ctx + ": missing 'segmentation'");
    const json& seg = an["segmentation"];
    if (!seg.is_array()) throw InvalidInput(ctx + ": only polygon segmentations are supported");
    if (seg.empty()) throw InvalidInput(ctx + ": empty segmentation");
    a.polygon = detail::ring_from_flat(detail::number_list(seg[0], ctx), ctx);
    for (std::size_t r = 1; r < seg.size(); ++r) detail::number_list(seg[r], ctx);
    ds.holes_ignored += seg.size() - 1;
    if (an.contains("bbox")) {
      const std::vector<double> b = detail::number_list(an["bbox"], ctx + " bbox");
      if (b.size() != 4 || b[2] < 0 || b[3] < 0) throw InvalidInput(ctx + ": bbox must be [x, y, w, h] with w, h >= 0");
      a.bbox = {b[0], b[1], b[2], b[3]};
    } else {
      a.bbox = bbox_of(a.polygon);
    }
    a.area = an.contains("area") ? detail::get_field<double>(an, "area", ctx) : std::abs(signed_area(a.polygon));
    if (an.contains("iscrowd")) {
      const json& c = an["iscrowd"];
      if (!c.is_number_integer() && !c.is_boolean()) throw InvalidInput(ctx + ": 'iscrowd' must be 0 or 1");
      a.iscrowd = c.is_boolean() ? c.get<bool>() : c.get<int>() != 0;
    }
    ds.annotations.push_back(std::move(a));
  }
  return ds;
}

inline CocoDataset read_coco(const std::string& path) { return parse_coco(read_text(path), "'" + path + "'"); }

inline json coco_to_json(const CocoDataset& ds) {
  json images = json::array();
  for (const CocoImage& im : ds.images) {
    images.push_back({{"id", im.id}, {"file_name", im.file_name}, {"width", im.width}, {"height", im.height}});
  }
  json anns = json::array();
  for (const CocoAnnotation& a : ds.annotations) {
    anns.push_back({{"id", a.id},
                    {"image_id", a.image_id},
                    {"category_id", a.category_id},
                    {"segmentation", json::array({detail::flat_ring(a.polygon, false)})},
                    {"bbox", a.bbox},
                    {"area", a.area},
                    {"iscrowd", a.iscrowd ? 1 : 0}});
  }
  return {{"images", images},
          {"annotations", anns},
          {"categories", json::array({{{"id", kBuildingCategory}, {"name", "building"}}})}};
}

inline void write_coco(const CocoDataset& ds, const std::string& path) { write_text(path, coco_to_json(ds).dump(1) + "\n"); }

inline std::vector<EvalImage> eval_images(const CocoDataset& ds) {
  std::vector<EvalImage> out;
  for (const CocoImage& im : ds.images) out.push_back({im.id, im.width, im.height, ds.polygons_of(im.id)});
  return out;
}

// ---------------------------------------------------------------------------
// Results

inline json results_to_json(const std::vector<Detection>& dets) {
  json out = json::array();
  for (const Detection& d : dets) {
    out.push_back({{"image_id", d.image_id},
                   {"category_id", kBuildingCategory},
                   {"segmentation", json::array({detail::flat_ring(d.polygon, true)})},
                   {"score", d.score}});
  }
  return out;
}

/// COCO results array; coordinates rounded to 2 decimals.
inline void write_results(const std::vector<Detection>& dets, const std::string& path) {
  write_text(path, results_to_json(dets).dump() + "\n");
}

inline std::vector<Detection> parse_results(const std::string& text, const std::string& source = "results") {
  const json root = parse_json(text, source);
  if (!root.is_array()) throw InvalidInput(source + ": expected a JSON array of detections");
  std::vector<Detection> out;
  for (std::size_t i = 0; i < root.size(); ++i) {
    const json& r = root[i];
    const std::string ctx = source + " detection " + std::to_string(i);
    Detection d;
    d.image_id = detail::get_field<int>(r, "image_id", ctx);
    d.score = detail::get_field<double>(r, "score", ctx);
    if (!(d.score >= 0.0 && d.score <= 1.0)) throw InvalidInput(ctx + ": score outside [0, 1]");
    if (!r.contains("segmentation") || !r["segmentation"].is_array() || r["segmentation"].empty()) {
      throw InvalidInput(ctx + ": missing polygon segmentation");
    }
    d.polygon = detail::ring_from_flat(detail::number_list(r["segmentation"][0], ctx), ctx);
    out.push_back(std::move(d));
  }
  return out;
}

inline std::vector<Detection> read_results(const std::string& path) {
  return parse_results(read_text(path), "'" + path + "'");
}

/// One detection per group whose surviving slots form a polygon.
inline std::vector<Detection> detections_from(int image_id, const InferenceResult& r) {
  std::vector<Detection> out;
  for (const InferredPolygon& g : r.groups) {
    if (g.polygon) out.push_back({image_id, *g.polygon, g.score});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Boxes: [{"image_id", "bbox": [x, y, w, h], "score"}]

using BoxesByImage = std::map<int, std::vector<BBox>>;

inline json boxes_to_json(const BoxesByImage& boxes) {
  json out = json::array();
  for (const auto& [id, list] : boxes) {
    for (const BBox& b : list) {
      out.push_back({{"image_id", id}, {"bbox", {b.x_min, b.y_min, b.width(), b.height()}}, {"score", b.score}});
    }
  }
  return out;
}

inline void write_boxes(const BoxesByImage& boxes, const std::string& path) {
  write_text(path, boxes_to_json(boxes).dump(1) + "\n");
}

inline BoxesByImage parse_boxes(const std::string& text, const std::string& source = "boxes") {
  const json root = parse_json(text, source);
  if (!root.is_array()) throw InvalidInput(source + ": expected a JSON array of boxes");
  BoxesByImage out;
  for (std::size_t i = 0; i < root.size(); ++i) {
    const std::string ctx = source + " box " + std::to_string(i);
    const int id = detail::get_field<int>(root[i], "image_id", ctx);
    if (!root[i].contains("bbox")) throw InvalidInput(ctx + ": missing 'bbox'");
    const std::vector<double> b = detail::number_list(root[i]["bbox"], ctx);
    if (b.size() != 4) throw InvalidInput(ctx + ": bbox must be [x, y, w, h]");
    BBox box{b[0], b[1], b[0] + b[2], b[1] + b[3], 1.0};
    if (root[i].contains("score")) box.score = detail::get_field<double>(root[i], "score", ctx);
    try {
      box.validate();
    } catch (const InvalidInput& e) {
      throw InvalidInput(ctx + ": " + e.what());
    }
    out[id].push_back(box);
  }
  return out;
}

inline BoxesByImage read_boxes(const std::string& path) { return parse_boxes(read_text(path), "'" + path + "'"); }

// ---------------------------------------------------------------------------
// Vertex targets

struct TargetRecord {
  int annotation_id = 0;
  int image_id = 0;
  VertexTargetSet target;
};

inline json targets_to_json(const std::vector<TargetRecord>& recs, CostMode mode, int m, double spacing, bool cyclic) {
  json list = json::array();
  for (const TargetRecord& r : recs) {
    json verts = json::array();
    for (const Point2& v : r.target.vertices) verts.push_back({v.x, v.y});
    list.push_back({{"annotation_id", r.annotation_id},
                    {"image_id", r.image_id},
                    {"vertices", verts},
                    {"labels", r.target.labels},
                    {"slot_of_gt", r.target.slot_of_gt}});
  }
  return {{"mode", to_string(mode)}, {"M", m}, {"spacing", spacing}, {"cyclic", cyclic}, {"targets", list}};
}

inline std::vector<TargetRecord> parse_targets(const std::string& text, const std::string& source = "targets") {
  const json root = parse_json(text, source);
  if (!root.is_object() || !root.contains("targets") || !root["targets"].is_array()) {
    throw InvalidInput(source + ": expected an object with a 'targets' list");
  }
  std::vector<TargetRecord> out;
  for (const json& t : root["targets"]) {
    TargetRecord r;
    r.annotation_id = detail::get_field<int>(t, "annotation_id", source);
    const std::string ctx = "annotation " + std::to_string(r.annotation_id);
    r.image_id = detail::get_field<int>(t, "image_id", ctx);
    r.target.source_polygon_id = std::to_string(r.annotation_id);
    for (const json& v : t.at("vertices")) {
      const std::vector<double> xy = detail::number_list(v, ctx);
      if (xy.size() != 2) throw InvalidInput(ctx + ": vertex must be [x, y]");
      r.target.vertices.push_back({xy[0], xy[1]});
    }
    for (const json& l : t.at("labels")) r.target.labels.push_back(static_cast<std::uint8_t>(l.get<int>() != 0));
    r.target.slot_of_gt = t.at("slot_of_gt").get<std::vector<int>>();
    if (r.target.labels.size() != r.target.vertices.size()) throw InvalidInput(ctx + ": label/vertex count mismatch");
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Raw decoder dump: every slot of every group, before thresholding

inline json raw_group_json(const GroupOutput& g) {
  json verts = json::array();
  for (const Point2& v : g.vertices) verts.push_back({v.x, v.y});
  return {{"box", {g.box.x_min, g.box.y_min, g.box.x_max, g.box.y_max}},
          {"box_score", g.box.score},
          {"vertices", verts},
          {"scores", g.scores}};
}

struct RawGroup {
  BBox box;
  std::vector<Point2> vertices;
  std::vector<double> scores;
};

inline std::map<int, std::vector<RawGroup>> parse_raw_dump(const std::string& text, const std::string& source = "dump") {
  const json root = parse_json(text, source);
  if (!root.is_object() || !root.contains("images")) throw InvalidInput(source + ": expected an object with 'images'");
  std::map<int, std::vector<RawGroup>> out;
  for (const json& im : root["images"]) {
    const int id = detail::get_field<int>(im, "image_id", source);
    auto& groups = out[id];
    for (const json& g : im.at("groups")) {
      RawGroup r;
      const auto b = detail::number_list(g.at("box"), source);
      if (b.size() != 4) throw InvalidInput(source + ": box must have 4 numbers");
      r.box = {b[0], b[1], b[2], b[3], detail::get_field<double>(g, "box_score", source)};
      for (const json& v : g.at("vertices")) {
        const auto xy = detail::number_list(v, source);
        if (xy.size() != 2) throw InvalidInput(source + ": vertex must be [x, y]");
        r.vertices.push_back({xy[0], xy[1]});
      }
      r.scores = detail::number_list(g.at("scores"), source);
      if (r.scores.size() != r.vertices.size()) throw InvalidInput(source + ": score/vertex count mismatch");
      groups.push_back(std::move(r));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Metric report

inline json report_to_json(const MetricReport& r) {
  const CocoSummary& m = r.mask;
  json j = {{"ap", detail::optional_number(m.ap)},
            {"ap50", detail::optional_number(m.ap50)},
            {"ap75", detail::optional_number(m.ap75)},
            {"ap_s", detail::optional_number(m.ap_s)},
            {"ap_m", detail::optional_number(m.ap_m)},
            {"ap_l", detail::optional_number(m.ap_l)},
            {"ar", detail::optional_number(m.ar)},
            {"ar50", detail::optional_number(m.ar50)},
            {"ar75", detail::optional_number(m.ar75)},
            {"ar_s", detail::optional_number(m.ar_s)},
            {"ar_m", detail::optional_number(m.ar_m)},
            {"ar_l", detail::optional_number(m.ar_l)},
            {"ap_boundary", detail::optional_number(r.ap_boundary)},
            {"iou_mean", detail::optional_number(r.iou_mean)},
            {"ciou_mean", detail::optional_number(r.ciou_mean)},
            {"n_ratio", detail::optional_number(r.n_ratio)},
            {"n_ratio_deviation", detail::optional_number(r.n_ratio_deviation)},
            {"mta_mean", detail::optional_number(r.mta_mean)},
            {"polis_mean", detail::optional_number(r.polis_mean)},
            {"images", r.images},
            {"detections", r.detections},
            {"gt_instances", r.gt_instances},
            {"matched", r.matched}};
  json per = json::array();
  for (double v : m.ap_per_threshold) per.push_back(v >= 0.0 ? json(v) : json(nullptr));
  j["ap_per_threshold"] = per;
  if (r.floorplan) {
    for (auto [name, c] : {std::pair{"room", &r.floorplan->room}, std::pair{"corner", &r.floorplan->corner},
                           std::pair{"angle", &r.floorplan->angle}}) {
      j[std::string(name) + "_precision"] = c->precision();
      j[std::string(name) + "_recall"] = c->recall();
      j[std::string(name) + "_f1"] = c->f1();
    }
  }
  return j;
}

// ---------------------------------------------------------------------------
// SVG

struct SvgStyle {
  std::string stroke = "#d62728";
  std::string fill = "none";
  double stroke_width = 0.5;
  double vertex_radius = 0.8;
};

struct SvgPolygon {
  Polygon polygon;
  SvgStyle style;
};

inline std::string render_svg(int width, int height, const std::vector<SvgPolygon>& items) {
  auto num = [](double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2) << round2(v);
    return os.str();
  };
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n";
  os << "  <rect x=\"0\" y=\"0\" width=\"" << width << "\" height=\"" << height
     << "\" fill=\"white\" stroke=\"black\" stroke-width=\"0.5\"/>\n";
  for (const SvgPolygon& it : items) {
    os << "  <polygon points=\"";
    for (std::size_t i = 0; i < it.polygon.size(); ++i) {
      os << (i ? " " : "") << num(it.polygon[i].x) << ',' << num(it.polygon[i].y);
    }
    os << "\" fill=\"" << it.style.fill << "\" stroke=\"" << it.style.stroke << "\" stroke-width=\""
       << num(it.style.stroke_width) << "\"/>\n";
    for (const Point2& v : it.polygon) {
      os << "  <circle cx=\"" << num(v.x) << "\" cy=\"" << num(v.y) << "\" r=\"" << num(it.style.vertex_radius)
         << "\" fill=\"" << it.style.stroke << "\"/>\n";
    }
  }
  os << "</svg>\n";
  return os.str();
}

inline void write_svg(int width, int height, const std::vector<SvgPolygon>& items, const std::string& path) {
  write_text(path, render_svg(width, height, items));
}

// ---------------------------------------------------------------------------
// PGM / PPM

namespace detail {

inline std::string pnm_token(std::istream& is, const std::string& path) {
  std::string tok;
  char c;
  while (is.get(c)) {
    if (c == '#') {
      std::string skip;
      std::getline(is, skip);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(c);
  }
  if (tok.empty()) throw InvalidInput("'" + path + "': truncated PNM header");
  return tok;
}

inline int pnm_int(std::istream& is, const std::string& path) {
  const std::string t = pnm_token(is, path);
  int v = 0;
  const auto r = std::from_chars(t.data(), t.data() + t.size(), v);
  if (r.ec != std::errc() || r.ptr != t.data() + t.size()) throw InvalidInput("'" + path + "': bad PNM header value '" + t + "'");
  return v;
}

}  // namespace detail

/// Binary or ASCII PGM (1 channel) / PPM (3 channels), values scaled to [0, 1].
inline ImageRaster read_pnm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InvalidInput("cannot open image '" + path + "'");
  const std::string magic = detail::pnm_token(is, path);
  if (magic != "P2" && magic != "P3" && magic != "P5" && magic != "P6") {
    throw InvalidInput("'" + path + "' is not a PGM/PPM file");
  }
  const int w = detail::pnm_int(is, path), h = detail::pnm_int(is, path), maxval = detail::pnm_int(is, path);
  if (w <= 0 || h <= 0 || w > 65536 || h > 65536) throw InvalidInput("'" + path + "': bad image size");
  if (maxval <= 0 || maxval > 255) throw InvalidInput("'" + path + "': only 8-bit images are supported");
  const int channels = (magic == "P3" || magic == "P6") ? 3 : 1;
  ImageRaster img(w, h, channels);
  const bool binary = magic == "P5" || magic == "P6";
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < channels; ++c) {
        int v = 0;
        if (binary) {
          char b;
          if (!is.get(b)) throw InvalidInput("'" + path + "': truncated pixel data");
          v = static_cast<unsigned char>(b);
        } else {
          v = detail::pnm_int(is, path);
        }
        if (v > maxval) throw InvalidInput("'" + path + "': pixel value above maxval");
        img.at(c, y, x) = static_cast<double>(v) / maxval;
      }
    }
  }
  return img;
}

/// 1 channel as binary PGM; 2 or 3 channels as binary PPM (missing channels
/// written as 0). Values are clamped to [0, 1] and quantized to 8 bits.
inline void write_pnm(const ImageRaster& img, const std::string& path) {
  img.validate();
  if (img.channels > 3) throw InvalidInput("PNM holds at most 3 channels");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  const int out_c = img.channels == 1 ? 1 : 3;
  os << (out_c == 1 ? "P5" : "P6") << '\n' << img.width << ' ' << img.height << "\n255\n";
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < out_c; ++c) {
        const double v = c < img.channels ? std::clamp(img.at(c, y, x), 0.0, 1.0) : 0.0;
        os.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
      }
    }
  }
  if (!os) throw Error("write to '" + path + "' failed");
}

// ---------------------------------------------------------------------------
// Loss curve

inline std::string loss_csv(const std::vector<EpochLoss>& curve) {
  std::ostringstream os;
  os << "epoch,l_cor,l_cls,total\n";
  for (const EpochLoss& e : curve) {
    os << e.epoch << ',' << format_double(e.l_cor) << ',' << format_double(e.l_cls) << ',' << format_double(e.total)
       << '\n';
  }
  return os.str();
}

inline void write_loss_csv(const std::vector<EpochLoss>& curve, const std::string& path) {
  write_text(path, loss_csv(curve));
}

// ---------------------------------------------------------------------------
// Run configuration

enum class Preset { desk, full_small, full_large };

inline const char* to_string(Preset p) {
  switch (p) {
    case Preset::full_small:
      return "full_small";
    case Preset::full_large:
      return "full_large";
    default:
      return "desk";
  }
}

inline Preset preset_from_string(const std::string& s) {
  if (s == "desk") return Preset::desk;
  if (s == "full_small") return Preset::full_small;
  if (s == "full_large") return Preset::full_large;
  throw InvalidInput("unknown preset '" + s + "' (expected desk, full_small or full_large)");
}

/// Every tunable of the pipeline. `preset` selects the decoder architecture
/// defaults (desk scale, small/medium buildings, large buildings) before the
/// individual keys apply.
struct RunConfig {
  Preset preset = Preset::desk;
  DecoderConfig decoder;
  int in_channels = 2;
  CostMode cost_mode = CostMode::index;
  EncodingOptions encoding;
  LossWeights loss;
  int epochs = 200;
  double lr = 1e-3;
  int batch_size = 1;
  bool aux_loss = true;
  bool shuffle = true;
  std::uint64_t seed = 7;
  std::uint64_t data_seed = 1;
  int grid = 64;
  int samples = 200;
  int held_out = 50;
  SynthOptions synth;
  double tau = 0.5;
  double split_area = 96.0 * 96.0;  // small/medium vs. large buildings
  ReportOptions metrics;

  TrainConfig train_config() const {
    TrainConfig t;
    t.decoder = decoder;
    t.pyramid = {in_channels, decoder.C};
    t.loss = loss;
    t.epochs = epochs;
    t.lr = lr;
    t.batch_size = batch_size;
    t.aux_loss = aux_loss;
    t.shuffle = shuffle;
    t.seed = seed;
    return t;
  }

  SynthOptions synth_options() const {
    SynthOptions s = synth;
    s.M = decoder.M;
    return s;
  }

  void validate() const {
    decoder.validate();
    auto need = [](bool ok, const char* what) {
      if (!ok) throw InvalidInput(std::string("config: ") + what);
    };
    need(decoder.M >= 3, "M must be at least 3");
    need(in_channels >= 1, "in_channels must be positive");
    need(encoding.spacing > 0.0 && std::isfinite(encoding.spacing), "spacing must be positive");
    need(loss.lambda_cor >= 0.0 && loss.lambda_cls >= 0.0, "loss weights must be non-negative");
    need(loss.alpha >= 0.0 && loss.alpha <= 1.0, "alpha must lie in [0, 1]");
    need(loss.gamma >= 0.0, "gamma must be non-negative");
    need(epochs >= 0, "epochs must be non-negative");
    need(lr >= 0.0 && std::isfinite(lr), "lr must be non-negative");
    need(batch_size >= 1, "batch_size must be at least 1");
    need(grid >= 64 && grid % 32 == 0, "grid must be a multiple of 32, at least 64");
    need(samples >= 1, "samples must be positive");
    need(held_out >= 0, "held_out must be non-negative");
    need(synth.rectangles || synth.rotated || synth.l_shapes, "at least one shape kind must be enabled");
    need(synth.max_polygons >= 1, "max_polygons must be at least 1");
    need(synth.box_jitter >= 0.0 && synth.box_jitter < 0.5, "box_jitter must lie in [0, 0.5)");
    need(tau >= 0.0 && tau < 1.0, "tau must lie in [0, 1)");
    need(split_area > 0.0, "split_area must be positive");
    need(metrics.match_iou > 0.0 && metrics.match_iou <= 1.0, "match_iou must lie in (0, 1]");
    need(metrics.coco.small_max > 0.0 && metrics.coco.small_max < metrics.coco.medium_max,
         "area buckets need 0 < small_max < medium_max");
    need(metrics.coco.max_dets >= 1, "max_dets must be positive");
    need(metrics.floorplan_opts.iou_thresh > 0.0 && metrics.floorplan_opts.iou_thresh <= 1.0,
         "room_iou must lie in (0, 1]");
    need(metrics.floorplan_opts.corner_dist > 0.0, "corner_dist must be positive");
    need(metrics.floorplan_opts.angle_tol_deg > 0.0, "angle_tol must be positive");
  }
};

namespace detail {

struct ConfigField {
  const char* key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

inline std::string unquote(const std::string& v, const std::string& key) {
  if (v.size() < 2 || v.front() != '"' || v.back() != '"') throw InvalidInput("config: '" + key + "' expects a quoted string");
  return v.substr(1, v.size() - 2);
}

template <typename T>
T parse_number(const std::string& v, const std::string& key) {
  T out{};
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) {
    throw InvalidInput("config: '" + key + "' has invalid value '" + v + "'");
  }
  return out;
}

inline bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw InvalidInput("config: '" + key + "' expects true or false");
}

template <typename T>
ConfigField int_field(const char* key, T RunConfig::*outer, int T::*member) {
  return {key, [=](const RunConfig& c) { return std::to_string(c.*outer.*member); },
          [=](RunConfig& c, const std::string& v) { c.*outer.*member = parse_number<int>(v, key); }};
}

template <typename T>
ConfigField real_field(const char* key, T RunConfig::*outer, double T::*member) {
  return {key, [=](const RunConfig& c) { return format_double(c.*outer.*member); },
          [=](RunConfig& c, const std::string& v) { c.*outer.*member = parse_number<double>(v, key); }};
}

template <typename T>
ConfigField bool_field(const char* key, T RunConfig::*outer, bool T::*member) {
  return {key, [=](const RunConfig& c) { return std::string(c.*outer.*member ? "true" : "false"); },
          [=](RunConfig& c, const std::string& v) { c.*outer.*member = parse_bool(v, key); }};
}

inline ConfigField top_int(const char* key, int RunConfig::*m) {
  return {key, [=](const RunConfig& c) { return std::to_string(c.*m); },
          [=](RunConfig& c, const std::string& v) { c.*m = parse_number<int>(v, key); }};
}

inline ConfigField top_u64(const char* key, std::uint64_t RunConfig::*m) {
  return {key, [=](const RunConfig& c) { return std::to_string(c.*m); },
          [=](RunConfig& c, const std::string& v) { c.*m = parse_number<std::uint64_t>(v, key); }};
}

inline ConfigField top_real(const char* key, double RunConfig::*m) {
  return {key, [=](const RunConfig& c) { return format_double(c.*m); },
          [=](RunConfig& c, const std::string& v) { c.*m = parse_number<double>(v, key); }};
}

inline ConfigField top_bool(const char* key, bool RunConfig::*m) {
  return {key, [=](const RunConfig& c) { return std::string(c.*m ? "true" : "false"); },
          [=](RunConfig& c, const std::string& v) { c.*m = parse_bool(v, key); }};
}

/// Key order is the file order written by `config_to_text`.
inline const std::vector<ConfigField>& config_fields() {
  using D = DecoderConfig;
  static const std::vector<ConfigField> fields = [] {
    std::vector<ConfigField> f;
    f.push_back({"preset", [](const RunConfig& c) { return "\"" + std::string(to_string(c.preset)) + "\""; },
                 [](RunConfig& c, const std::string& v) { c.preset = preset_from_string(unquote(v, "preset")); }});
    f.push_back(int_field<D>("M", &RunConfig::decoder, &D::M));
    f.push_back(int_field<D>("N", &RunConfig::decoder, &D::N));
    f.push_back(int_field<D>("L", &RunConfig::decoder, &D::L));
    f.push_back(int_field<D>("C", &RunConfig::decoder, &D::C));
    f.push_back(int_field<D>("heads", &RunConfig::decoder, &D::heads));
    f.push_back(int_field<D>("K", &RunConfig::decoder, &D::K));
    f.push_back(int_field<D>("H_r", &RunConfig::decoder, &D::Hr));
    f.push_back(int_field<D>("W_r", &RunConfig::decoder, &D::Wr));
    f.push_back(int_field<D>("ffn_mult", &RunConfig::decoder, &D::ffn_mult));
    f.push_back({"fusion", [](const RunConfig& c) { return "\"" + std::string(to_string(c.decoder.fusion)) + "\""; },
                 [](RunConfig& c, const std::string& v) { c.decoder.fusion = fusion_from_string(unquote(v, "fusion")); }});
    f.push_back(bool_field<D>("all_level_roi", &RunConfig::decoder, &D::all_level_roi));
    f.push_back(bool_field<D>("box_embed", &RunConfig::decoder, &D::box_embed));
    f.push_back(real_field<D>("pe_temperature", &RunConfig::decoder, &D::pe_temperature));
    f.push_back(int_field<D>("l_c", &RunConfig::decoder, &D::l_c));
    f.push_back(real_field<D>("S_c", &RunConfig::decoder, &D::S_c));
    f.push_back(top_int("in_channels", &RunConfig::in_channels));
    f.push_back({"cost_mode", [](const RunConfig& c) { return "\"" + std::string(to_string(c.cost_mode)) + "\""; },
                 [](RunConfig& c, const std::string& v) { c.cost_mode = cost_mode_from_string(unquote(v, "cost_mode")); }});
    f.push_back(real_field<EncodingOptions>("spacing", &RunConfig::encoding, &EncodingOptions::spacing));
    f.push_back(bool_field<EncodingOptions>("cyclic_index", &RunConfig::encoding, &EncodingOptions::cyclic_index));
    f.push_back(real_field<LossWeights>("lambda_cor", &RunConfig::loss, &LossWeights::lambda_cor));
    f.push_back(real_field<LossWeights>("lambda_cls", &RunConfig::loss, &LossWeights::lambda_cls));
    f.push_back(real_field<LossWeights>("alpha", &RunConfig::loss, &LossWeights::alpha));
    f.push_back(real_field<LossWeights>("gamma", &RunConfig::loss, &LossWeights::gamma));
    f.push_back(top_int("epochs", &RunConfig::epochs));
    f.push_back(top_real("lr", &RunConfig::lr));
    f.push_back(top_int("batch_size", &RunConfig::batch_size));
    f.push_back(top_bool("aux_loss", &RunConfig::aux_loss));
    f.push_back(top_bool("shuffle", &RunConfig::shuffle));
    f.push_back(top_u64("seed", &RunConfig::seed));
    f.push_back(top_u64("data_seed", &RunConfig::data_seed));
    f.push_back(top_int("grid", &RunConfig::grid));
    f.push_back(top_int("samples", &RunConfig::samples));
    f.push_back(top_int("held_out", &RunConfig::held_out));
    f.push_back(bool_field<SynthOptions>("rectangles", &RunConfig::synth, &SynthOptions::rectangles));
    f.push_back(bool_field<SynthOptions>("rotated", &RunConfig::synth, &SynthOptions::rotated));
    f.push_back(bool_field<SynthOptions>("l_shapes", &RunConfig::synth, &SynthOptions::l_shapes));
    f.push_back(int_field<SynthOptions>("max_polygons", &RunConfig::synth, &SynthOptions::max_polygons));
    f.push_back(real_field<SynthOptions>("box_jitter", &RunConfig::synth, &SynthOptions::box_jitter));
    f.push_back(top_real("tau", &RunConfig::tau));
    f.push_back(top_real("split_area", &RunConfig::split_area));
    f.push_back(real_field<ReportOptions>("match_iou", &RunConfig::metrics, &ReportOptions::match_iou));
    f.push_back({"small_max", [](const RunConfig& c) { return format_double(c.metrics.coco.small_max); },
                 [](RunConfig& c, const std::string& v) { c.metrics.coco.small_max = parse_number<double>(v, "small_max"); }});
    f.push_back({"medium_max", [](const RunConfig& c) { return format_double(c.metrics.coco.medium_max); },
                 [](RunConfig& c, const std::string& v) { c.metrics.coco.medium_max = parse_number<double>(v, "medium_max"); }});
    f.push_back({"max_dets", [](const RunConfig& c) { return std::to_string(c.metrics.coco.max_dets); },
                 [](RunConfig& c, const std::string& v) { c.metrics.coco.max_dets = parse_number<int>(v, "max_dets"); }});
    f.push_back(bool_field<ReportOptions>("boundary_ap", &RunConfig::metrics, &ReportOptions::boundary_ap));
    f.push_back(bool_field<ReportOptions>("floorplan", &RunConfig::metrics, &ReportOptions::floorplan));
    f.push_back({"room_iou", [](const RunConfig& c) { return format_double(c.metrics.floorplan_opts.iou_thresh); },
                 [](RunConfig& c, const std::string& v) {
                   c.metrics.floorplan_opts.iou_thresh = parse_number<double>(v, "room_iou");
                 }});
    f.push_back({"corner_dist", [](const RunConfig& c) { return format_double(c.metrics.floorplan_opts.corner_dist); },
                 [](RunConfig& c, const std::string& v) {
                   c.metrics.floorplan_opts.corner_dist = parse_number<double>(v, "corner_dist");
                 }});
    f.push_back({"angle_tol", [](const RunConfig& c) { return format_double(c.metrics.floorplan_opts.angle_tol_deg); },
                 [](RunConfig& c, const std::string& v) {
                   c.metrics.floorplan_opts.angle_tol_deg = parse_number<double>(v, "angle_tol");
                 }});
    return f;
  }();
  return fields;
}

inline void apply_preset(RunConfig& c, Preset p) {
  c.preset = p;
  switch (p) {
    case Preset::full_small:
      c.decoder = DecoderConfig::full_small();
      break;
    case Preset::full_large:
      c.decoder = DecoderConfig::full_large();
      break;
    default:
      c.decoder = DecoderConfig::desk();
  }
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

}  // namespace detail

inline RunConfig default_config(Preset p = Preset::desk) {
  RunConfig c;
  detail::apply_preset(c, p);
  return c;
}

inline std::string config_to_text(const RunConfig& c) {
  std::ostringstream os;
  for (const auto& f : detail::config_fields()) os << f.key << " = " << f.get(c) << '\n';
  return os.str();
}

/// `key = value` lines; `#` starts a comment outside quotes. Unknown or
/// repeated keys are errors. A `preset` line applies before all other keys.
inline RunConfig parse_config(const std::string& text, const std::string& source = "config") {
  std::map<std::string, std::pair<std::string, int>> kv;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') quoted = !quoted;
      if (line[i] == '#' && !quoted) {
        line.resize(i);
        break;
      }
    }
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = source + ":" + std::to_string(lineno);
    if (eq == std::string::npos) throw InvalidInput(where + ": expected 'key = value'");
    const std::string key = detail::trim(line.substr(0, eq)), value = detail::trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) throw InvalidInput(where + ": expected 'key = value'");
    if (!kv.emplace(key, std::pair{value, lineno}).second) throw InvalidInput(where + ": repeated key '" + key + "'");
  }
  RunConfig c;
  const auto& fields = detail::config_fields();
  for (const auto& [key, vl] : kv) {
    const bool known = std::any_of(fields.begin(), fields.end(), [&](const auto& f) { return key == f.key; });
    if (!known) throw InvalidInput(source + ":" + std::to_string(vl.second) + ": unknown key '" + key + "'");
  }
  if (auto it = kv.find("preset"); it != kv.end()) {
    detail::apply_preset(c, preset_from_string(detail::unquote(it->second.first, "preset")));
  }
  for (const auto& f : fields) {
    if (auto it = kv.find(f.key); it != kv.end() && it->first != "preset") {
      try {
        f.set(c, it->second.first);
      } catch (const InvalidInput& e) {
        throw InvalidInput(source + ":" + std::to_string(it->second.second) + ": " + e.what());
      }
    }
  }
  c.validate();
  return c;
}

inline RunConfig load_config(const std::string& path) { return parse_config(read_text(path), path); }
inline void save_config(const RunConfig& c, const std::string& path) { write_text(path, config_to_text(c)); }

inline bool operator==(const RunConfig& a, const RunConfig& b) { return config_to_text(a) == config_to_text(b); }

// ---------------------------------------------------------------------------
// Datasets on disk

/// COCO view of synthetic samples; images are named img_<id>.ppm.
inline CocoDataset coco_from_samples(const std::vector<TrainSample>& data) {
  CocoDataset ds;
  int ann = 1;
  for (const TrainSample& s : data) {
    std::ostringstream name;
    name << "img_" << std::setw(6) << std::setfill('0') << s.image_id << ".ppm";
    ds.images.push_back({s.image_id, name.str(), s.image.width, s.image.height});
    for (const Polygon& p : s.polygons) {
      ds.annotations.push_back({ann++, s.image_id, kBuildingCategory, p, bbox_of(p), std::abs(signed_area(p)), false});
    }
  }
  return ds;
}

/// Training samples from annotations plus images on disk. Boxes are the
/// ground-truth boxes (10% dilation, clamped to the image).
inline std::vector<TrainSample> samples_from_coco(const CocoDataset& ds, const std::string& image_dir, int m,
                                                  int in_channels, CostMode mode = CostMode::index,
                                                  const EncodingOptions& enc = {}) {
  std::vector<TrainSample> out;
  for (const CocoImage& im : ds.images) {
    TrainSample s;
    s.image_id = im.id;
    const ImageRaster raw = read_pnm((std::filesystem::path(image_dir) / im.file_name).string());
    if (raw.width != im.width || raw.height != im.height) {
      throw InvalidInput("image " + std::to_string(im.id) + ": file size differs from the annotation");
    }
    if (raw.channels < in_channels) {
      throw InvalidInput("image " + std::to_string(im.id) + " has fewer than " + std::to_string(in_channels) + " channels");
    }
    s.image = ImageRaster(raw.width, raw.height, in_channels);
    std::copy(raw.data.begin(), raw.data.begin() + static_cast<std::ptrdiff_t>(s.image.data.size()), s.image.data.begin());
    for (const CocoAnnotation& a : ds.annotations) {
      if (a.image_id != im.id) continue;
      const Polygon ring = canonical_ring(a.polygon);
      s.polygons.push_back(ring);
      s.boxes.push_back(gt_box(ring, im.width, im.height));
      s.targets.push_back(build_target(ring, m, mode, enc, std::to_string(a.id)));
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace roipoly::io

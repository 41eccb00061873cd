#pragma once

// Losses, synthetic scenes, the toy trainer and thresholded inference.
//
// Group i of an image is paired with GT polygon i (annotation order). Only
// the first N_gt groups receive coordinate supervision; all N groups receive
// classification supervision, with groups beyond N_gt labelled all-invalid.
// Padded groups see an all-zero RoI and no box, so they are identical to each
// other; one is evaluated and its classification term counted N - N_gt times.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "roipoly/autodiff.hpp"
#include "roipoly/decoder.hpp"
#include "roipoly/encoding.hpp"
#include "roipoly/errors.hpp"
#include "roipoly/geometry.hpp"
#include "roipoly/nn.hpp"
#include "roipoly/pyramid.hpp"

namespace roipoly {

// ---------------------------------------------------------------------------
// Losses

struct LossWeights {
  double lambda_cor = 5.0;
  double lambda_cls = 2.0;
  double alpha = 0.25;
  double gamma = 2.0;
};

struct LossReport {
  double l_cor = 0.0;
  double l_cls = 0.0;
  double total = 0.0;
  double lambda_cor = 0.0;
  double lambda_cls = 0.0;
};

/// total = lambda_cor * l_cor + lambda_cls * l_cls, evaluated in that order.
inline LossReport total_loss(double l_cor, double l_cls, double lambda_cor, double lambda_cls) {
  return {l_cor, l_cls, lambda_cor * l_cor + lambda_cls * l_cls, lambda_cor, lambda_cls};
}

/// (1 / (N_gt * M)) * sum over the first N_gt groups of |dx| + |dy|.
/// `pred` may hold more groups than `targets`; the extra ones are ignored.
inline double coord_loss(const std::vector<std::vector<Point2>>& pred,
                         const std::vector<std::vector<Point2>>& targets) {
  if (targets.empty()) return 0.0;
  if (pred.size() < targets.size()) throw InvalidInput("fewer prediction groups than targets");
  const std::size_t m = targets.front().size();
  double s = 0.0;
  for (std::size_t n = 0; n < targets.size(); ++n) {
    if (pred[n].size() != m || targets[n].size() != m) throw InvalidInput("group size mismatch in coord_loss");
    for (std::size_t k = 0; k < m; ++k) {
      s += std::abs(pred[n][k].x - targets[n][k].x) + std::abs(pred[n][k].y - targets[n][k].y);
    }
  }
  return s / static_cast<double>(targets.size() * m);
}

/// Mean focal loss over every slot of every group.
inline double class_loss(const std::vector<std::vector<double>>& logits,
                         const std::vector<std::vector<std::uint8_t>>& labels, double alpha, double gamma) {
  if (logits.size() != labels.size()) throw InvalidInput("logit/label group count mismatch");
  double s = 0.0;
  std::size_t count = 0;
  for (std::size_t n = 0; n < logits.size(); ++n) {
    if (logits[n].size() != labels[n].size()) throw InvalidInput("logit/label size mismatch");
    for (std::size_t k = 0; k < logits[n].size(); ++k) s += ad::focal_term(logits[n][k], labels[n][k] != 0, alpha, gamma);
    count += logits[n].size();
  }
  return count ? s / static_cast<double>(count) : 0.0;
}

// ---------------------------------------------------------------------------
// Synthetic scenes

struct TrainSample {
  int image_id = 0;
  ImageRaster image;
  std::vector<Polygon> polygons;  // canonical rings (counterclockwise, top-left first)
  std::vector<BBox> boxes;
  std::vector<VertexTargetSet> targets;
};

struct SynthOptions {
  int M = 12;
  bool rectangles = true;
  bool rotated = true;
  bool l_shapes = true;
  int max_polygons = 4;
  double box_jitter = 0.0;  // each box side moves by up to this fraction of the box size
};

/// Occupancy and 1-px inner boundary channels for a set of disjoint polygons.
inline ImageRaster render_scene(const std::vector<Polygon>& polys, int width, int height) {
  ImageRaster img(width, height, 2);
  MaskGrid all(width, height);
  for (const Polygon& p : polys) {
    const MaskGrid m = rasterize(p, width, height);
    for (std::size_t i = 0; i < m.bits.size(); ++i) all.bits[i] |= m.bits[i];
  }
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      if (!all.at(x, y)) continue;
      img.at(0, y, x) = 1.0;
      const bool edge = x == 0 || y == 0 || x == width - 1 || y == height - 1 || !all.at(x - 1, y) ||
                        !all.at(x + 1, y) || !all.at(x, y - 1) || !all.at(x, y + 1);
      if (edge) img.at(1, y, x) = 1.0;
    }
  }
  return img;
}

namespace detail {

struct Extent {
  double x0, y0, x1, y1;
};

inline Extent extent_of(const Polygon& p) {
  Extent e{p[0].x, p[0].y, p[0].x, p[0].y};
  for (const Point2& q : p) {
    e.x0 = std::min(e.x0, q.x);
    e.y0 = std::min(e.y0, q.y);
    e.x1 = std::max(e.x1, q.x);
    e.y1 = std::max(e.y1, q.y);
  }
  return e;
}

inline Polygon random_shape(std::mt19937_64& rng, int kind, double scale) {
  std::uniform_real_distribution<double> size(8.0 * scale, 24.0 * scale);
  std::uniform_int_distribution<int> isize(static_cast<int>(8 * scale), static_cast<int>(24 * scale));
  if (kind == 0) {
    const double w = isize(rng), h = isize(rng);
    return Polygon{{0, 0}, {0, h}, {w, h}, {w, 0}};
  }
  if (kind == 1) {
    const double w = size(rng), h = size(rng);
    std::uniform_real_distribution<double> ang(0.15, 0.65);
    const double th = (rng() % 2 ? 1.0 : -1.0) * ang(rng);
    return rotate(Polygon{{0, 0}, {0, h}, {w, h}, {w, 0}}, th, {w / 2, h / 2});
  }
  const double w = isize(rng) + 4 * scale, h = isize(rng) + 4 * scale;
  std::uniform_real_distribution<double> cut(0.35, 0.65);
  const double cw = std::round(w * cut(rng)), ch = std::round(h * cut(rng));
  return Polygon{{0, 0}, {0, h}, {w, h}, {w, ch}, {cw, ch}, {cw, 0}};
}

}  // namespace detail

/// Hull of `p` scaled by 1.1 about its centre, optionally jittered, clamped to the image.
inline BBox gt_box(const Polygon& p, int width, int height, std::mt19937_64* jitter_rng = nullptr,
                   double jitter = 0.0) {
  const detail::Extent e = detail::extent_of(p);
  const double cx = 0.5 * (e.x0 + e.x1), cy = 0.5 * (e.y0 + e.y1);
  const double hw = 0.55 * (e.x1 - e.x0), hh = 0.55 * (e.y1 - e.y0);
  BBox b{cx - hw, cy - hh, cx + hw, cy + hh, 1.0};
  if (jitter_rng && jitter > 0.0) {
    std::uniform_real_distribution<double> u(-jitter, jitter);
    const double w = b.width(), h = b.height();
    b.x_min += u(*jitter_rng) * w;
    b.x_max += u(*jitter_rng) * w;
    b.y_min += u(*jitter_rng) * h;
    b.y_max += u(*jitter_rng) * h;
  }
  b = b.clamped(width, height);
  b.validate();
  return b;
}

/// Deterministic synthetic dataset: 1..max_polygons disjoint shapes per image.
inline std::vector<TrainSample> gen_synthetic(std::uint64_t seed, int count, int grid, const SynthOptions& opt = {}) {
  if (grid < 64) throw InvalidInput("synthetic grid must be at least 64 px");
  if (count < 0) throw InvalidInput("sample count must be non-negative");
  std::vector<int> kinds;
  if (opt.rectangles) kinds.push_back(0);
  if (opt.rotated) kinds.push_back(1);
  if (opt.l_shapes) kinds.push_back(2);
  if (kinds.empty()) throw InvalidInput("no shape kinds enabled");
  if (opt.max_polygons < 1) throw InvalidInput("max_polygons must be at least 1");

  std::mt19937_64 rng(seed);
  const double scale = grid / 64.0;
  std::vector<TrainSample> out;
  out.reserve(count);
  for (int s = 0; s < count; ++s) {
    TrainSample ts;
    ts.image_id = s + 1;
    const int want = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(opt.max_polygons));
    std::vector<detail::Extent> taken;
    for (int attempt = 0; attempt < 200 && static_cast<int>(ts.polygons.size()) < want; ++attempt) {
      const int kind = kinds[rng() % kinds.size()];
      const Polygon shape = detail::random_shape(rng, kind, scale);
      const detail::Extent e = detail::extent_of(shape);
      const double w = e.x1 - e.x0, h = e.y1 - e.y0;
      const double margin = 2.0;
      if (w + 2 * margin >= grid || h + 2 * margin >= grid) continue;
      std::uniform_int_distribution<int> px(static_cast<int>(std::ceil(margin - e.x0)),
                                            static_cast<int>(std::floor(grid - margin - e.x1)));
      std::uniform_int_distribution<int> py(static_cast<int>(std::ceil(margin - e.y0)),
                                            static_cast<int>(std::floor(grid - margin - e.y1)));
      const Polygon placed = translate(shape, {static_cast<double>(px(rng)), static_cast<double>(py(rng))});
      const detail::Extent pe = detail::extent_of(placed);
      // Keep dilated hulls apart so every RoI holds a single shape.
      const double gx = 0.1 * (pe.x1 - pe.x0) + margin, gy = 0.1 * (pe.y1 - pe.y0) + margin;
      bool clear = true;
      for (const auto& t : taken) {
        if (pe.x0 - gx < t.x1 && t.x0 < pe.x1 + gx && pe.y0 - gy < t.y1 && t.y0 < pe.y1 + gy) clear = false;
      }
      if (!clear) continue;
      taken.push_back(pe);
      ts.polygons.push_back(canonical_ring(placed));
    }
    for (const Polygon& p : ts.polygons) {
      ts.boxes.push_back(gt_box(p, grid, grid, &rng, opt.box_jitter));
      ts.targets.push_back(build_target(p, opt.M, CostMode::index));
    }
    ts.image = render_scene(ts.polygons, grid, grid);
    out.push_back(std::move(ts));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model

struct TrainConfig {
  DecoderConfig decoder;
  PyramidConfig pyramid;
  LossWeights loss;
  int epochs = 200;
  double lr = 1e-3;
  int batch_size = 1;
  bool aux_loss = true;
  bool shuffle = true;
  std::uint64_t seed = 0;
};

struct Model {
  DecoderConfig decoder;
  PyramidConfig pyramid;
  ParamStore params;
};

inline Model init_model(const DecoderConfig& dec, const PyramidConfig& pyr, std::uint64_t seed) {
  if (dec.C != pyr.channels) throw InvalidInput("pyramid and decoder channel counts differ");
  Model m{dec, pyr, {}};
  std::mt19937_64 rng(seed);
  init_pyramid_params(m.params, rng, pyr);
  init_decoder_params(m.params, rng, dec);
  return m;
}

/// Flat key/value view of the architecture, stored in checkpoints.
inline std::map<std::string, double> model_config_map(const Model& m) {
  const DecoderConfig& d = m.decoder;
  return {{"M", d.M},
          {"N", d.N},
          {"L", d.L},
          {"C", d.C},
          {"heads", d.heads},
          {"K", d.K},
          {"H_r", d.Hr},
          {"W_r", d.Wr},
          {"ffn_mult", d.ffn_mult},
          {"fusion_adaln", d.fusion == Fusion::adaln ? 1.0 : 0.0},
          {"all_level_roi", d.all_level_roi ? 1.0 : 0.0},
          {"box_embed", d.box_embed ? 1.0 : 0.0},
          {"pe_temperature", d.pe_temperature},
          {"l_c", d.l_c},
          {"S_c", d.S_c},
          {"in_channels", m.pyramid.in_channels}};
}

inline Model model_from_checkpoint(const Checkpoint& ck) {
  auto get = [&](const std::string& k) {
    auto it = ck.config.find(k);
    if (it == ck.config.end()) throw InvalidInput("checkpoint lacks config." + k);
    return it->second;
  };
  Model m;
  DecoderConfig& d = m.decoder;
  d.M = static_cast<int>(get("M"));
  d.N = static_cast<int>(get("N"));
  d.L = static_cast<int>(get("L"));
  d.C = static_cast<int>(get("C"));
  d.heads = static_cast<int>(get("heads"));
  d.K = static_cast<int>(get("K"));
  d.Hr = static_cast<int>(get("H_r"));
  d.Wr = static_cast<int>(get("W_r"));
  d.ffn_mult = static_cast<int>(get("ffn_mult"));
  d.fusion = get("fusion_adaln") != 0.0 ? Fusion::adaln : Fusion::add;
  d.all_level_roi = get("all_level_roi") != 0.0;
  d.box_embed = get("box_embed") != 0.0;
  d.pe_temperature = get("pe_temperature");
  d.l_c = static_cast<int>(get("l_c"));
  d.S_c = get("S_c");
  d.validate();
  m.pyramid = {static_cast<int>(get("in_channels")), d.C};
  m.params = ck.params;
  // Every expected parameter must be present with the expected shape.
  const Model ref = init_model(d, m.pyramid, 0);
  for (const auto& [name, t] : ref.params) {
    if (!m.params.contains(name)) throw InvalidInput("checkpoint lacks parameter '" + name + "'");
    if (m.params.at(name).dims != t.dims) throw InvalidInput("checkpoint parameter '" + name + "' has wrong shape");
  }
  if (m.params.size() != ref.params.size()) throw InvalidInput("checkpoint has unexpected extra parameters");
  return m;
}

inline Checkpoint to_checkpoint(const Model& m) { return {m.params, model_config_map(m)}; }

// ---------------------------------------------------------------------------
// Per-sample loss on a tape

struct SampleLoss {
  ad::Var total;
  ad::Var l_cor;
  ad::Var l_cls;
};

inline SampleLoss sample_loss(ad::Tape& t, const Model& m, const TrainSample& s, const LossWeights& w,
                              bool aux_loss) {
  const DecoderConfig& cfg = m.decoder;
  const int n_gt = static_cast<int>(s.polygons.size());
  if (n_gt > cfg.N) throw InvalidInput("sample has more polygons than the configured N");
  const PyramidVars pyr = build_pyramid(t, m.params, s.image, m.pyramid);
  const double iw = s.image.width, ih = s.image.height;
  const double cor_norm = 1.0 / (std::max(n_gt, 1) * static_cast<double>(cfg.M));
  const double cls_norm = 1.0 / (static_cast<double>(cfg.N) * cfg.M);
  const int first_layer = aux_loss ? 0 : cfg.L - 1;

  std::vector<ad::Var> cor_terms, cls_terms;
  for (int n = 0; n < n_gt; ++n) {
    const BBox& box = s.boxes[n];
    const auto layers = decode_group(t, m.params, cfg, extract_roi(t, pyr, cfg, box), &box);
    std::vector<double> target;
    for (const Point2& q : s.targets[n].vertices) {
      target.push_back(q.x / iw);
      target.push_back(q.y / ih);
    }
    const std::vector<double> sc{box.width() / iw, box.height() / ih};
    const std::vector<double> off{box.x_min / iw, box.y_min / ih};
    for (int l = first_layer; l < cfg.L; ++l) {
      const ad::Var xy = ad::affine_cols(ad::sigmoid(layers[l].v), sc, off);
      cor_terms.push_back(ad::l1_sum(xy, target));
      cls_terms.push_back(ad::focal_sum(layers[l].cls, s.targets[n].labels, w.alpha, w.gamma));
    }
  }
  if (n_gt < cfg.N) {
    const auto layers = decode_group(t, m.params, cfg, zero_roi(t, cfg), nullptr);
    const std::vector<std::uint8_t> none(cfg.M, 0);
    for (int l = first_layer; l < cfg.L; ++l) {
      cls_terms.push_back(ad::scale(ad::focal_sum(layers[l].cls, none, w.alpha, w.gamma), cfg.N - n_gt));
    }
  }
  auto total_of = [&](const std::vector<ad::Var>& terms, double norm) {
    if (terms.empty()) return t.constant(1, 1, 0.0);
    ad::Var acc = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) acc = ad::add(acc, terms[i]);
    return ad::scale(acc, norm);
  };
  const ad::Var l_cor = total_of(cor_terms, cor_norm);
  const ad::Var l_cls = total_of(cls_terms, cls_norm);
  const ad::Var total = ad::add(ad::scale(l_cor, w.lambda_cor), ad::scale(l_cls, w.lambda_cls));
  return {total, l_cor, l_cls};
}

inline LossReport evaluate_sample_loss(const Model& m, const TrainSample& s, const LossWeights& w, bool aux_loss) {
  ad::Tape t(false);
  const SampleLoss l = sample_loss(t, m, s, w, aux_loss);
  LossReport r = total_loss(l.l_cor.item(), l.l_cls.item(), w.lambda_cor, w.lambda_cls);
  return r;
}

/// Mean of the per-sample losses over a dataset.
inline LossReport evaluate_loss(const Model& m, const std::vector<TrainSample>& data, const LossWeights& w,
                                bool aux_loss) {
  double cor = 0.0, cls = 0.0;
  for (const TrainSample& s : data) {
    const LossReport r = evaluate_sample_loss(m, s, w, aux_loss);
    cor += r.l_cor;
    cls += r.l_cls;
  }
  const double n = data.empty() ? 1.0 : static_cast<double>(data.size());
  return total_loss(cor / n, cls / n, w.lambda_cor, w.lambda_cls);
}

// ---------------------------------------------------------------------------
// Trainer

struct EpochLoss {
  int epoch = 0;
  double l_cor = 0.0;
  double l_cls = 0.0;
  double total = 0.0;
};

struct TrainResult {
  Model model;  // parameters rounded to f32, exactly what a checkpoint stores
  std::vector<EpochLoss> curve;
};

/// Adam on per-sample losses averaged over mini-batches. Single-threaded and
/// deterministic for a fixed seed. Throws NumericalFailure on a non-finite loss.
inline TrainResult train_toy(const TrainConfig& cfg, const std::vector<TrainSample>& data,
                             const std::function<void(const EpochLoss&)>& on_epoch = {},
                             std::optional<Model> start = std::nullopt) {
  if (data.empty()) throw InvalidInput("training set is empty");
  if (cfg.epochs < 0 || cfg.batch_size < 1 || !(cfg.lr >= 0.0)) throw InvalidInput("bad training schedule");
  Model m = start ? std::move(*start) : init_model(cfg.decoder, cfg.pyramid, cfg.seed);
  nn::Adam opt(m.params, {cfg.lr});
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainResult res;
  ParamStore grads = m.params.zeros_like();
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    if (cfg.shuffle) std::shuffle(order.begin(), order.end(), rng);
    double cor = 0.0, cls = 0.0;
    int in_batch = 0;
    auto flush = [&] {
      if (in_batch == 0) return;
      if (in_batch > 1) {
        for (auto& [_, g] : grads) {
          for (double& x : g.data) x /= in_batch;
        }
      }
      opt.step(m.params, grads);
      for (auto& [_, g] : grads) std::fill(g.data.begin(), g.data.end(), 0.0);
      in_batch = 0;
    };
    for (std::size_t idx : order) {
      ad::Tape t;
      const SampleLoss l = sample_loss(t, m, data[idx], cfg.loss, cfg.aux_loss);
      if (!std::isfinite(l.total.item())) {
        throw NumericalFailure("non-finite loss at epoch " + std::to_string(epoch) + ", image " +
                               std::to_string(data[idx].image_id) + " (l_cor=" + std::to_string(l.l_cor.item()) +
                               ", l_cls=" + std::to_string(l.l_cls.item()) + ")");
      }
      cor += l.l_cor.item();
      cls += l.l_cls.item();
      t.backward(l.total);
      t.accumulate_parameter_gradients(grads);
      if (++in_batch == cfg.batch_size) flush();
    }
    flush();
    const double n = static_cast<double>(data.size());
    const LossReport r = total_loss(cor / n, cls / n, cfg.loss.lambda_cor, cfg.loss.lambda_cls);
    const EpochLoss e{epoch, r.l_cor, r.l_cls, r.total};
    res.curve.push_back(e);
    if (on_epoch) on_epoch(e);
  }
  round_to_f32(m.params);
  res.model = std::move(m);
  return res;
}

// ---------------------------------------------------------------------------
// Inference

struct InferredPolygon {
  BBox box;
  std::vector<int> slots;          // surviving slots, ascending
  std::vector<Point2> vertices;    // surviving vertices, slot order
  std::vector<double> vertex_scores;
  double score = 0.0;              // mean surviving vertex score times box score
  std::optional<Polygon> polygon;  // present when at least 3 vertices survive
};

/// Keeps slots with sigmoid(cls) >= tau in slot order; nothing else.
inline InferredPolygon threshold_group(const GroupOutput& g, double tau) {
  InferredPolygon p;
  p.box = g.box;
  double sum = 0.0;
  for (std::size_t k = 0; k < g.scores.size(); ++k) {
    if (g.scores[k] >= tau) {
      p.slots.push_back(static_cast<int>(k));
      p.vertices.push_back(g.vertices[k]);
      p.vertex_scores.push_back(g.scores[k]);
      sum += g.scores[k];
    }
  }
  if (!p.slots.empty()) p.score = sum / static_cast<double>(p.slots.size()) * g.box.score;
  if (p.vertices.size() >= 3) {
    try {
      p.polygon = Polygon(p.vertices);
    } catch (const InvalidInput&) {
      // Coincident consecutive vertices: not a polygon.
    }
  }
  return p;
}

struct InferenceResult {
  std::vector<GroupOutput> raw;         // decoder output per box
  std::vector<InferredPolygon> groups;  // thresholded, one per box
};

inline InferenceResult infer(const FeaturePyramid& fp, const std::vector<BBox>& boxes, const Model& m, double tau) {
  if (!(tau >= 0.0 && tau < 1.0)) throw InvalidInput("threshold must lie in [0, 1)");
  InferenceResult r;
  const DecoderConfig& cfg = m.decoder;
  for (std::size_t start = 0; start < boxes.size(); start += static_cast<std::size_t>(cfg.N)) {
    std::vector<RoIFeature> rois;
    for (std::size_t i = start; i < std::min(boxes.size(), start + cfg.N); ++i) {
      rois.push_back(roi_for_box(fp, boxes[i], cfg));
    }
    for (GroupOutput& g : decoder_forward(rois, cfg, m.params)) r.raw.push_back(std::move(g));
  }
  for (const GroupOutput& g : r.raw) r.groups.push_back(threshold_group(g, tau));
  return r;
}

inline InferenceResult infer(const ImageRaster& img, const std::vector<BBox>& boxes, const Model& m, double tau) {
  return infer(build_pyramid(img, m.params, m.pyramid), boxes, m, tau);
}

/// Vertex-level quality of predictions against the sample's own targets.
struct VertexQuality {
  double mean_vertex_error = 0.0;  // image px, over GT-valid slots
  double accuracy = 0.0;           // slot classification at tau, over real groups
  std::size_t valid_slots = 0;
  std::size_t slots = 0;
};

inline VertexQuality vertex_quality(const std::vector<InferenceResult>& results,
                                    const std::vector<TrainSample>& data, double tau) {
  if (results.size() != data.size()) throw InvalidInput("result/sample count mismatch");
  VertexQuality q;
  double err = 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (std::size_t n = 0; n < data[i].targets.size(); ++n) {
      const GroupOutput& g = results[i].raw.at(n);
      const VertexTargetSet& t = data[i].targets[n];
      for (std::size_t k = 0; k < t.size(); ++k) {
        const bool valid = t.labels[k] != 0;
        if (valid) {
          err += distance(g.vertices[k], t.vertices[k]);
          ++q.valid_slots;
        }
        correct += (g.scores[k] >= tau) == valid ? 1 : 0;
        ++q.slots;
      }
    }
  }
  q.mean_vertex_error = q.valid_slots ? err / static_cast<double>(q.valid_slots) : 0.0;
  q.accuracy = q.slots ? static_cast<double>(correct) / static_cast<double>(q.slots) : 0.0;
  return q;
}

}  // namespace roipoly

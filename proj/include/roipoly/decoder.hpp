#pragma once

// RoI-confined vertex-query decoder.
//
// Each polygon group owns M vertex queries with state (e, v, cls): a content
// embedding, pre-sigmoid RoI-normalized reference coordinates and a
// pre-sigmoid validity logit. A layer computes
//
//   p  = LN(MLP_pos(PE(sigmoid(v))))          positional embedding
//   l  = MLP_logit(PE(sigmoid(cls)))          logit embedding (no LN)
//   q  = (e + p) * (gamma + 1) + beta         (gamma, beta) = Linear(l)
//   q  = LN(q + SelfAttn(q))                  within the group only
//   q  = LN(q + DeformAttn(q, sigmoid(v), roi))
//   q  = LN(q + FFN(q))
//   v += MLP_coord(q);  cls += Linear(q);  e = q
//
// Groups never see each other's queries or RoIs. The positional and logit
// MLPs are shared across layers; everything else is per layer.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "roipoly/autodiff.hpp"
#include "roipoly/errors.hpp"
#include "roipoly/geometry.hpp"
#include "roipoly/nn.hpp"
#include "roipoly/pyramid.hpp"
#include "roipoly/tensor.hpp"

namespace roipoly {

enum class Fusion { adaln, add };

inline const char* to_string(Fusion f) { return f == Fusion::adaln ? "adaln" : "add"; }
inline Fusion fusion_from_string(const std::string& s) {
  if (s == "adaln") return Fusion::adaln;
  if (s == "add") return Fusion::add;
  throw InvalidInput("unknown fusion '" + s + "' (expected adaln or add)");
}

struct DecoderConfig {
  int M = 12;      // vertex queries per polygon
  int N = 8;       // polygon groups per image
  int L = 3;       // decoder layers
  int C = 32;      // channels
  int heads = 4;
  int K = 4;       // sampling points per head
  int Hr = 7;
  int Wr = 7;
  int ffn_mult = 4;
  Fusion fusion = Fusion::adaln;
  bool all_level_roi = false;  // stack the RoI from all four levels channel-wise
  bool box_embed = true;       // condition initial queries on box shape
  double pe_temperature = 10000.0;
  int l_c = 4;
  double S_c = 224.0;

  int roi_channels() const { return all_level_roi ? 4 * C : C; }

  void validate() const {
    if (M <= 0 || N <= 0 || L <= 0 || C <= 0 || heads <= 0 || K <= 0 || Hr <= 0 || Wr <= 0 || ffn_mult <= 0) {
      throw InvalidInput("decoder config values must all be positive");
    }
    if (C % heads != 0) throw InvalidInput("channels must be divisible by heads");
    if (C % 4 != 0) throw InvalidInput("channels must be divisible by 4 for the 2-D positional encoding");
    if (!(S_c > 0.0)) throw InvalidInput("S_c must be positive");
  }

  static DecoderConfig desk() { return {}; }
  /// Small/medium-building preset.
  static DecoderConfig full_small() {
    DecoderConfig c;
    c.M = 30;
    c.N = 34;
    c.L = 6;
    c.C = 256;
    c.heads = 8;
    c.K = 4;
    return c;
  }
  /// Large-building preset.
  static DecoderConfig full_large() {
    DecoderConfig c = full_small();
    c.M = 96;
    c.N = 10;
    return c;
  }

  friend bool operator==(const DecoderConfig&, const DecoderConfig&) = default;
};

inline std::string layer_prefix(int layer) { return "layer" + std::to_string(layer); }

/// Registers every decoder parameter. Refinement heads and adaLN start at zero.
inline void init_decoder_params(ParamStore& ps, std::mt19937_64& rng, const DecoderConfig& cfg) {
  cfg.validate();
  const int c = cfg.C;
  ps.add("query.e", init::normal(rng, {cfg.M, c}, 1.0));
  ps.add("query.v", init::normal(rng, {cfg.M, 2}, 1.0));
  ps.add("query.cls", init::normal(rng, {cfg.M, 1}, 1.0));
  nn::add_mlp(ps, rng, "pos", c, c, c);
  nn::add_layer_norm(ps, "pos.ln", c);
  nn::add_mlp(ps, rng, "logit", c, c, c);
  if (cfg.box_embed) nn::add_mlp(ps, rng, "boxenc", 2, c, c, nn::Init::zero);
  for (int i = 0; i < cfg.L; ++i) {
    const std::string p = layer_prefix(i);
    nn::add_linear(ps, rng, p + ".adaln", c, 2 * c, nn::Init::zero);
    nn::add_linear(ps, rng, p + ".sa.qkv", c, 3 * c);
    nn::add_linear(ps, rng, p + ".sa.out", c, c);
    nn::add_layer_norm(ps, p + ".sa.ln", c);
    nn::add_linear(ps, rng, p + ".ca.value", cfg.roi_channels(), c);
    nn::add_linear(ps, rng, p + ".ca.off", c, cfg.heads * cfg.K * 2, nn::Init::zero);
    // Offsets start on rays, one direction per head, growing with the point index.
    Tensor& ob = ps.at(p + ".ca.off.b");
    for (int h = 0; h < cfg.heads; ++h) {
      const double th = 2.0 * std::numbers::pi * h / cfg.heads;
      for (int k = 0; k < cfg.K; ++k) {
        const std::size_t j = (static_cast<std::size_t>(h) * cfg.K + k) * 2;
        ob.data[j] = std::cos(th) * 0.5 * (k + 1);
        ob.data[j + 1] = std::sin(th) * 0.5 * (k + 1);
      }
    }
    nn::add_linear(ps, rng, p + ".ca.attn", c, cfg.heads * cfg.K, nn::Init::zero);
    nn::add_linear(ps, rng, p + ".ca.out", c, c);
    nn::add_layer_norm(ps, p + ".ca.ln", c);
    nn::add_mlp(ps, rng, p + ".ffn", c, cfg.ffn_mult * c, c);
    nn::add_layer_norm(ps, p + ".ffn.ln", c);
    nn::add_mlp(ps, rng, p + ".coord", c, c, 2, nn::Init::zero);
    nn::add_linear(ps, rng, p + ".cls", c, 1, nn::Init::zero);
  }
}

// ---------------------------------------------------------------------------
// Building blocks (all on a tape, all differentiable)

/// M x 2 pre-sigmoid coordinates -> M x C.
inline ad::Var embed_position(ad::Tape& t, const ParamStore& ps, const DecoderConfig& cfg, ad::Var v) {
  const ad::Var pe = ad::sinusoidal_pe(ad::sigmoid(v), cfg.C, cfg.pe_temperature);
  return nn::layer_norm(t, ps, "pos.ln", nn::mlp(t, ps, "pos", pe));
}

/// M x 1 pre-sigmoid logits -> M x C.
inline ad::Var embed_logit(ad::Tape& t, const ParamStore& ps, const DecoderConfig& cfg, ad::Var cls) {
  const ad::Var pe = ad::sinusoidal_pe(ad::sigmoid(cls), cfg.C, cfg.pe_temperature);
  return nn::mlp(t, ps, "logit", pe);
}

inline ad::Var fuse_adaln(ad::Tape& t, const ParamStore& ps, const DecoderConfig& cfg, int layer, ad::Var e,
                          ad::Var p, ad::Var l) {
  const ad::Var gb = nn::linear(t, ps, layer_prefix(layer) + ".adaln", l);
  const ad::Var gamma = ad::slice_cols(gb, 0, cfg.C);
  const ad::Var beta = ad::slice_cols(gb, cfg.C, cfg.C);
  return ad::add(ad::mul(ad::add(e, p), ad::add_scalar(gamma, 1.0)), beta);
}

inline ad::Var fuse_add(ad::Var e, ad::Var p, ad::Var l) { return ad::add(ad::add(e, p), l); }

/// Multi-head attention over the rows of `x` (one polygon), residual + LN.
/// `weights`, when given, receives one M x M row-stochastic matrix per head.
inline ad::Var self_attention(ad::Tape& t, const ParamStore& ps, const DecoderConfig& cfg, int layer, ad::Var x,
                              std::vector<std::vector<double>>* weights = nullptr) {
  const std::string pre = layer_prefix(layer) + ".sa";
  const int c = cfg.C, dh = c / cfg.heads;
  const ad::Var qkv = nn::linear(t, ps, pre + ".qkv", x);
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<ad::Var> heads;
  for (int h = 0; h < cfg.heads; ++h) {
    const ad::Var q = ad::slice_cols(qkv, h * dh, dh);
    const ad::Var k = ad::slice_cols(qkv, c + h * dh, dh);
    const ad::Var v = ad::slice_cols(qkv, 2 * c + h * dh, dh);
    const ad::Var a = ad::softmax_rows(ad::scale(ad::matmul_nt(q, k), inv));
    if (weights) weights->push_back(a.value());
    heads.push_back(ad::matmul(a, v));
  }
  const ad::Var out = nn::linear(t, ps, pre + ".out", ad::concat_cols(heads));
  return nn::layer_norm(t, ps, pre + ".ln", ad::add(x, out));
}

struct DeformTrace {
  std::vector<double> locations;  // M x heads*K*2, RoI-normalized
  std::vector<double> weights;    // M x heads*K
  std::vector<double> sampled;    // M x C, before the output projection
};

/// Deformable sampling of this group's RoI around `ref` (M x 2, in [0,1]^2),
/// residual + LN. `roi` is (Hr*Wr x roi_channels).
inline ad::Var deformable_cross_attention(ad::Tape& t, const ParamStore& ps, const DecoderConfig& cfg, int layer,
                                          ad::Var q, ad::Var ref, ad::Var roi, DeformTrace* trace = nullptr) {
  const std::string pre = layer_prefix(layer) + ".ca";
  const int hk = cfg.heads * cfg.K;
  if (roi.rows() != cfg.Hr * cfg.Wr || roi.cols() != cfg.roi_channels()) {
    throw InvalidInput("RoI feature shape does not match the decoder config");
  }
  const ad::Var value = nn::linear(t, ps, pre + ".value", roi);
  std::vector<double> sx(2 * hk), ox(2 * hk, 0.0), expand(static_cast<std::size_t>(2) * 2 * hk, 0.0);
  for (int j = 0; j < hk; ++j) {
    sx[2 * j] = 1.0 / cfg.Wr;
    sx[2 * j + 1] = 1.0 / cfg.Hr;
    expand[2 * j] = 1.0;                 // row 0 (x) -> every x column
    expand[2 * hk + 2 * j + 1] = 1.0;    // row 1 (y) -> every y column
  }
  const ad::Var offsets = ad::affine_cols(nn::linear(t, ps, pre + ".off", q), sx, ox);
  const ad::Var loc = ad::add(ad::matmul(ref, t.constant(2, 2 * hk, expand)), offsets);
  const ad::Var attn = ad::softmax_groups(nn::linear(t, ps, pre + ".attn", q), cfg.K);
  const ad::Var sampled = ad::deform_sample(value, loc, attn, {cfg.Hr, cfg.Wr, cfg.heads, cfg.K});
  if (trace) *trace = {loc.value(), attn.value(), sampled.value()};
  const ad::Var out = nn::linear(t, ps, pre + ".out", sampled);
  return nn::layer_norm(t, ps, pre + ".ln", ad::add(q, out));
}

inline ad::Var feed_forward(ad::Tape& t, const ParamStore& ps, int layer, ad::Var x) {
  const std::string pre = layer_prefix(layer) + ".ffn";
  return nn::layer_norm(t, ps, pre + ".ln", ad::add(x, nn::mlp(t, ps, pre, x)));
}

/// v' = v + MLP_coord(q), in pre-sigmoid space.
inline ad::Var refine_vertex(ad::Tape& t, const ParamStore& ps, int layer, ad::Var v, ad::Var q) {
  return ad::add(v, nn::mlp(t, ps, layer_prefix(layer) + ".coord", q));
}

/// cls' = cls + Linear(q).
inline ad::Var refine_logit(ad::Tape& t, const ParamStore& ps, int layer, ad::Var cls, ad::Var q) {
  return ad::add(cls, nn::linear(t, ps, layer_prefix(layer) + ".cls", q));
}

// ---------------------------------------------------------------------------
// Group forward

struct LayerVars {
  ad::Var e;
  ad::Var v;
  ad::Var cls;
};

/// Box shape descriptor fed to the box encoder; padded groups use zeros.
inline std::vector<double> box_descriptor(const BBox* box) {
  if (!box) return {0.0, 0.0};
  const double w = box->width(), h = box->height();
  return {std::log(w / h), std::log(std::sqrt(w * h) / 32.0)};
}

struct InitialQueries {
  ad::Var e;
  ad::Var v;
  ad::Var cls;
};

inline InitialQueries initial_queries(ad::Tape& t, const ParamStore& ps, const DecoderConfig& cfg, const BBox* box) {
  ad::Var e = t.parameter(ps, "query.e");
  if (cfg.box_embed) {
    const ad::Var phi = t.constant(1, 2, box_descriptor(box));
    e = ad::add_row(e, nn::mlp(t, ps, "boxenc", phi));
  }
  return {e, t.parameter(ps, "query.v"), t.parameter(ps, "query.cls")};
}

/// Runs all layers for one polygon group. `box` is null for padded groups.
inline std::vector<LayerVars> decode_group(ad::Tape& t, const ParamStore& ps, const DecoderConfig& cfg, ad::Var roi,
                                           const BBox* box) {
  InitialQueries s = initial_queries(t, ps, cfg, box);
  ad::Var e = s.e, v = s.v, cls = s.cls;
  std::vector<LayerVars> out;
  out.reserve(cfg.L);
  for (int i = 0; i < cfg.L; ++i) {
    const ad::Var p = embed_position(t, ps, cfg, v);
    const ad::Var l = embed_logit(t, ps, cfg, cls);
    ad::Var q = cfg.fusion == Fusion::adaln ? fuse_adaln(t, ps, cfg, i, e, p, l) : fuse_add(e, p, l);
    q = self_attention(t, ps, cfg, i, q);
    q = deformable_cross_attention(t, ps, cfg, i, q, ad::sigmoid(v), roi);
    q = feed_forward(t, ps, i, q);
    v = refine_vertex(t, ps, i, v, q);
    cls = refine_logit(t, ps, i, cls, q);
    e = q;
    out.push_back({e, v, cls});
  }
  return out;
}

/// RoI rows (Hr*Wr x roi_channels) for `box` from a pyramid on the tape.
inline ad::Var extract_roi(ad::Tape& t, const PyramidVars& pyr, const DecoderConfig& cfg, const BBox& box) {
  box.validate();
  const ad::Var b = t.constant(1, 4, {box.x_min, box.y_min, box.x_max, box.y_max});
  auto one = [&](int l) {
    const ad::Var f = pyr.levels.at(l);
    const auto [h, w] = pyr.sizes.at(l);
    return ad::roi_align(f, b, roi_geometry(l, f.rows(), h, w, cfg.Hr, cfg.Wr));
  };
  if (!cfg.all_level_roi) return one(level_assign(box, cfg.l_c, cfg.S_c));
  std::vector<ad::Var> parts;
  for (int l = kMinLevel; l <= kMaxLevel; ++l) parts.push_back(one(l));
  return ad::concat_cols(parts);
}

/// All-zero RoI used by padded groups; it does not depend on the image.
inline ad::Var zero_roi(ad::Tape& t, const DecoderConfig& cfg) {
  return t.constant(cfg.Hr * cfg.Wr, cfg.roi_channels(), 0.0);
}

/// Image-frame vertex readout through the box affine.
inline std::vector<Point2> to_image_frame(const BBox& box, const std::vector<double>& v_presigmoid) {
  std::vector<Point2> pts(v_presigmoid.size() / 2);
  for (std::size_t k = 0; k < pts.size(); ++k) {
    pts[k] = {box.x_min + ad::detail::sigmoid(v_presigmoid[2 * k]) * box.width(),
              box.y_min + ad::detail::sigmoid(v_presigmoid[2 * k + 1]) * box.height()};
  }
  return pts;
}

// ---------------------------------------------------------------------------
// Plain-value forward

struct LayerState {
  std::vector<double> e;    // M x C
  std::vector<double> v;    // M x 2, pre-sigmoid
  std::vector<double> cls;  // M, pre-sigmoid
};

struct GroupOutput {
  BBox box;
  std::vector<LayerState> layers;
  std::vector<Point2> vertices;  // final layer, image frame
  std::vector<double> scores;    // final layer, sigmoid(cls)
};

/// One independent forward per RoI; outputs are in RoI order.
inline std::vector<GroupOutput> decoder_forward(const std::vector<RoIFeature>& rois, const DecoderConfig& cfg,
                                                const ParamStore& ps) {
  cfg.validate();
  if (static_cast<int>(rois.size()) > cfg.N) {
    throw InvalidInput(std::to_string(rois.size()) + " RoIs exceed the configured N = " + std::to_string(cfg.N));
  }
  std::vector<GroupOutput> out;
  for (const RoIFeature& r : rois) {
    if (r.bins_y != cfg.Hr || r.bins_x != cfg.Wr || r.channels != cfg.roi_channels()) {
      throw InvalidInput("RoI feature shape does not match the decoder config");
    }
    ad::Tape t(false);
    const ad::Var roi = t.constant(cfg.Hr * cfg.Wr, r.channels, r.data);
    const auto layers = decode_group(t, ps, cfg, roi, &r.box);
    GroupOutput g;
    g.box = r.box;
    for (const LayerVars& lv : layers) g.layers.push_back({lv.e.value(), lv.v.value(), lv.cls.value()});
    g.vertices = to_image_frame(r.box, g.layers.back().v);
    for (double z : g.layers.back().cls) g.scores.push_back(ad::detail::sigmoid(z));
    out.push_back(std::move(g));
  }
  return out;
}

/// RoI features for `box` from a stored pyramid, honouring `all_level_roi`.
inline RoIFeature roi_for_box(const FeaturePyramid& fp, const BBox& box, const DecoderConfig& cfg) {
  if (!cfg.all_level_roi) {
    return roi_align(fp.level(level_assign(box, cfg.l_c, cfg.S_c)), box, cfg.Hr, cfg.Wr);
  }
  RoIFeature out;
  std::vector<RoIFeature> parts;
  for (int l = kMinLevel; l <= kMaxLevel; ++l) parts.push_back(roi_align(fp.level(l), box, cfg.Hr, cfg.Wr));
  out = parts.front();
  out.channels = 0;
  for (const auto& p : parts) out.channels += p.channels;
  out.data.clear();
  const int bins = cfg.Hr * cfg.Wr;
  for (int b = 0; b < bins; ++b) {
    for (const auto& p : parts) {
      out.data.insert(out.data.end(), p.data.begin() + static_cast<std::ptrdiff_t>(b) * p.channels,
                      p.data.begin() + static_cast<std::ptrdiff_t>(b + 1) * p.channels);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Attention cost (multiply counts, constant factor 1)

struct AttentionCost {
  double encoder_tokens = 0;  // N_e (global) or N*Hr*Wr (roi)
  double encoder_ops = 0;
  double decoder_ops = 0;
};

struct AttentionCostReport {
  AttentionCost global;
  AttentionCost roi;
};

/// Number of pixels over levels 2..5 for an image of the given size.
inline double pyramid_token_count(int height, int width) {
  double n = 0;
  for (int l = kMinLevel; l <= kMaxLevel; ++l) {
    const double s = std::ldexp(1.0, l);
    n += std::ceil(height / s) * std::ceil(width / s);
  }
  return n;
}

/// global: 2 N_e C^2 + N_e K C^2 and M^2 N^2 C^2; roi: the same with N_e
/// replaced by N Hr Wr, and M^2 N C^2.
inline AttentionCostReport attention_cost_estimate(const DecoderConfig& cfg, double n_e) {
  const double c2 = static_cast<double>(cfg.C) * cfg.C;
  const double m2 = static_cast<double>(cfg.M) * cfg.M;
  const double n = cfg.N;
  AttentionCostReport r;
  r.global.encoder_tokens = n_e;
  r.global.encoder_ops = 2 * n_e * c2 + n_e * cfg.K * c2;
  r.global.decoder_ops = m2 * n * n * c2;
  r.roi.encoder_tokens = n * cfg.Hr * cfg.Wr;
  r.roi.encoder_ops = 2 * r.roi.encoder_tokens * c2 + r.roi.encoder_tokens * cfg.K * c2;
  r.roi.decoder_ops = m2 * n * c2;
  return r;
}

inline AttentionCostReport attention_cost_estimate(const DecoderConfig& cfg, int image_height, int image_width) {
  return attention_cost_estimate(cfg, pyramid_token_count(image_height, image_width));
}

// ---------------------------------------------------------------------------
// RPCK checkpoints

/// Rounds every value to the nearest f32, the precision checkpoints store.
inline void round_to_f32(ParamStore& ps) {
  for (auto& [_, t] : ps) {
    for (double& x : t.data) x = static_cast<double>(static_cast<float>(x));
  }
}

struct Checkpoint {
  ParamStore params;
  std::map<std::string, double> config;  // written as "config.<key>" scalars
};

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  std::map<std::string, const Tensor*> all;
  std::map<std::string, Tensor> cfg_tensors;
  for (const auto& [k, v] : ck.config) cfg_tensors.emplace("config." + k, Tensor({1}, v));
  for (const auto& [k, t] : cfg_tensors) all.emplace(k, &t);
  for (const auto& [k, t] : ck.params) {
    if (!all.emplace(k, &t).second) throw InvalidInput("parameter name collides with config key '" + k + "'");
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  os.write("RPCK", 4);
  detail::put_u32(os, 1);
  detail::put_u32(os, static_cast<std::uint32_t>(all.size()));
  for (const auto& [name, t] : all) {
    detail::put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put_u32(os, static_cast<std::uint32_t>(t->dims.size()));
    for (int d : t->dims) detail::put_u32(os, static_cast<std::uint32_t>(d));
    for (double x : t->data) detail::put_f32(os, x);
  }
  if (!os) throw Error("write to '" + path + "' failed");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InvalidInput("cannot open checkpoint '" + path + "'");
  char magic[4];
  if (!is.read(magic, 4) || std::string(magic, 4) != "RPCK") throw InvalidInput("'" + path + "' is not an RPCK file");
  if (const auto version = detail::get_u32(is, "version"); version != 1) {
    throw InvalidInput("unsupported RPCK version " + std::to_string(version));
  }
  const std::uint32_t count = detail::get_u32(is, "tensor count");
  Checkpoint ck;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t len = detail::get_u32(is, "name length");
    if (len == 0 || len > 4096) throw InvalidInput("checkpoint tensor name has bad length");
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw InvalidInput("truncated checkpoint name");
    const std::uint32_t rank = detail::get_u32(is, "rank");
    if (rank > 8) throw InvalidInput("checkpoint tensor '" + name + "' has implausible rank");
    std::vector<int> dims(rank);
    for (int& d : dims) d = static_cast<int>(detail::get_u32(is, "dims"));
    Tensor t(dims);
    for (double& x : t.data) x = detail::get_f32(is, "tensor data");
    if (name.rfind("config.", 0) == 0) {
      if (t.size() != 1) throw InvalidInput("config entry '" + name + "' is not a scalar");
      ck.config[name.substr(7)] = t.data[0];
    } else {
      ck.params.add(name, std::move(t));
    }
  }
  return ck;
}

}  // namespace roipoly

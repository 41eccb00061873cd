#pragma once

// Multi-scale feature maps from an image raster, RoI level selection and
// bin-centre RoIAlign.
//
// The generator is a stack of five stride-2 3x3 convolutions with a SiLU after
// each; the outputs of convolutions 2..5 are levels 2..5 (strides 4..32).

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "roipoly/autodiff.hpp"
#include "roipoly/errors.hpp"
#include "roipoly/nn.hpp"
#include "roipoly/tensor.hpp"

namespace roipoly {

inline constexpr int kMinLevel = 2;
inline constexpr int kMaxLevel = 5;

/// Channel-major, row-major raster: value (c, y, x) at data[(c*height + y)*width + x].
struct ImageRaster {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<double> data;

  ImageRaster() = default;
  ImageRaster(int w, int h, int c, double fill = 0.0)
      : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

  double& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  double at(int c, int y, int x) const { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }

  void validate() const {
    if (width <= 0 || height <= 0 || channels <= 0) throw InvalidInput("image has non-positive size");
    if (data.size() != static_cast<std::size_t>(width) * height * channels) {
      throw InvalidInput("image data size does not match its dimensions");
    }
    for (double v : data) {
      if (!std::isfinite(v)) throw InvalidInput("image contains a non-finite value");
    }
  }

  friend bool operator==(const ImageRaster&, const ImageRaster&) = default;
};

struct FeatureMap {
  int level = 0;
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;  // channel-major, row-major

  double at(int c, int y, int x) const { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  friend bool operator==(const FeatureMap&, const FeatureMap&) = default;
};

struct FeaturePyramid {
  std::map<int, FeatureMap> levels;

  const FeatureMap& level(int l) const {
    auto it = levels.find(l);
    if (it == levels.end()) throw InvalidInput("pyramid has no level " + std::to_string(l));
    return it->second;
  }
  friend bool operator==(const FeaturePyramid&, const FeaturePyramid&) = default;
};

struct BBox {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;
  double score = 1.0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }

  void validate() const {
    if (!std::isfinite(x_min) || !std::isfinite(y_min) || !std::isfinite(x_max) || !std::isfinite(y_max)) {
      throw InvalidInput("box has non-finite coordinates");
    }
    if (!(x_max > x_min) || !(y_max > y_min)) throw InvalidInput("box has zero or negative extent");
  }

  /// Intersection with [0, w] x [0, h].
  BBox clamped(double w, double h) const {
    BBox b = *this;
    b.x_min = std::clamp(x_min, 0.0, w);
    b.x_max = std::clamp(x_max, 0.0, w);
    b.y_min = std::clamp(y_min, 0.0, h);
    b.y_max = std::clamp(y_max, 0.0, h);
    return b;
  }

  friend bool operator==(const BBox&, const BBox&) = default;
};

/// Bins in row-major order, each holding all channels: value (c, i, j) at
/// data[(i*bins_x + j)*channels + c].
struct RoIFeature {
  int channels = 0;
  int bins_y = 0;
  int bins_x = 0;
  int level = 0;
  BBox box;
  std::vector<double> data;

  double at(int c, int i, int j) const {
    return data[(static_cast<std::size_t>(i) * bins_x + j) * channels + c];
  }
};

struct PyramidConfig {
  int in_channels = 2;
  int channels = 32;
};

inline std::string conv_name(int k) { return "pyr.conv" + std::to_string(k); }

/// Registers `pyr.conv1..5` weights (C_out x C_in*9) and biases.
inline void init_pyramid_params(ParamStore& ps, std::mt19937_64& rng, const PyramidConfig& cfg) {
  for (int k = 1; k <= kMaxLevel; ++k) {
    const int cin = k == 1 ? cfg.in_channels : cfg.channels;
    ps.add(conv_name(k) + ".w", init::xavier(rng, cfg.channels, cin * 9));
    ps.add(conv_name(k) + ".b", Tensor({1, cfg.channels}));
  }
}

struct PyramidVars {
  std::map<int, ad::Var> levels;  // each (C x H_l*W_l)
  std::map<int, std::array<int, 2>> sizes;  // {H_l, W_l}
};

/// Pyramid on a tape, differentiable with respect to the `pyr.*` parameters.
inline PyramidVars build_pyramid(ad::Tape& tape, const ParamStore& ps, const ImageRaster& img,
                                 const PyramidConfig& cfg) {
  img.validate();
  if (img.width < 32 || img.height < 32) {
    throw InvalidInput("image must be at least 32 px in each dimension, got " + std::to_string(img.width) +
                       "x" + std::to_string(img.height));
  }
  if (img.channels != cfg.in_channels) {
    throw InvalidInput("image has " + std::to_string(img.channels) + " channels, pyramid expects " +
                       std::to_string(cfg.in_channels));
  }
  PyramidVars out;
  ad::Var x = tape.constant(img.channels, img.height * img.width, img.data);
  int h = img.height, w = img.width, c = img.channels;
  for (int k = 1; k <= kMaxLevel; ++k) {
    const ad::ConvGeometry geo{c, h, w, cfg.channels};
    x = ad::silu(ad::conv3x3_s2(x, tape.parameter(ps, conv_name(k) + ".w"),
                                tape.parameter(ps, conv_name(k) + ".b"), geo));
    h = geo.out_height();
    w = geo.out_width();
    c = cfg.channels;
    if (k >= kMinLevel) {
      out.levels.emplace(k, x);
      out.sizes[k] = {h, w};
    }
  }
  return out;
}

inline FeaturePyramid build_pyramid(const ImageRaster& img, const ParamStore& ps, const PyramidConfig& cfg) {
  ad::Tape tape(false);
  const PyramidVars vars = build_pyramid(tape, ps, img, cfg);
  FeaturePyramid fp;
  for (const auto& [l, v] : vars.levels) {
    const auto [h, w] = vars.sizes.at(l);
    fp.levels[l] = FeatureMap{l, cfg.channels, h, w, v.value()};
  }
  return fp;
}

/// l* = clamp(floor(l_c + log2(sqrt(w*h) / S_c)), 2, 5).
inline int level_assign(const BBox& box, int l_c = 4, double s_c = 224.0) {
  const double area = box.width() * box.height();
  if (!(area > 0.0) || !std::isfinite(area)) throw InvalidInput("level_assign needs a box with positive area");
  const double l = std::floor(static_cast<double>(l_c) + std::log2(std::sqrt(area) / s_c));
  return static_cast<int>(std::clamp(l, static_cast<double>(kMinLevel), static_cast<double>(kMaxLevel)));
}

inline ad::RoiAlignGeometry roi_geometry(int level, int channels, int height, int width, int bins_y,
                                         int bins_x) {
  return ad::RoiAlignGeometry{channels, height, width, std::ldexp(1.0, -level), bins_y, bins_x};
}

/// One bilinear sample at each bin centre of `box` (image px) on level map `f`.
inline RoIFeature roi_align(const FeatureMap& f, const BBox& box, int bins_y = 7, int bins_x = 7) {
  box.validate();
  if (bins_y <= 0 || bins_x <= 0) throw InvalidInput("roi_align needs a positive bin count");
  ad::Tape tape(false);
  const ad::Var map = tape.constant(f.channels, f.height * f.width, f.data);
  const ad::Var b = tape.constant(1, 4, {box.x_min, box.y_min, box.x_max, box.y_max});
  const ad::Var r = ad::roi_align(map, b, roi_geometry(f.level, f.channels, f.height, f.width, bins_y, bins_x));
  return RoIFeature{f.channels, bins_y, bins_x, f.level, box, r.value()};
}

// ---------------------------------------------------------------------------
// FPYR files

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_f32(std::ostream& os, double v) {
  put_u32(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

inline std::uint32_t get_u32(std::istream& is, const std::string& what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw InvalidInput("truncated file while reading " + what);
  return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
         static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

inline double get_f32(std::istream& is, const std::string& what) {
  return static_cast<double>(std::bit_cast<float>(get_u32(is, what)));
}

}  // namespace detail

inline void write_fpyr(const FeaturePyramid& fp, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  os.write("FPYR", 4);
  detail::put_u32(os, 1);
  detail::put_u32(os, static_cast<std::uint32_t>(fp.levels.size()));
  for (const auto& [l, f] : fp.levels) {
    detail::put_u32(os, static_cast<std::uint32_t>(l));
    detail::put_u32(os, static_cast<std::uint32_t>(f.channels));
    detail::put_u32(os, static_cast<std::uint32_t>(f.height));
    detail::put_u32(os, static_cast<std::uint32_t>(f.width));
    for (double v : f.data) detail::put_f32(os, v);
  }
  if (!os) throw Error("write to '" + path + "' failed");
}

inline FeaturePyramid read_fpyr(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InvalidInput("cannot open feature file '" + path + "'");
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "FPYR", 4) != 0) {
    throw InvalidInput("'" + path + "' is not an FPYR file");
  }
  if (const auto version = detail::get_u32(is, "version"); version != 1) {
    throw InvalidInput("unsupported FPYR version " + std::to_string(version));
  }
  const std::uint32_t count = detail::get_u32(is, "level count");
  FeaturePyramid fp;
  for (std::uint32_t k = 0; k < count; ++k) {
    FeatureMap f;
    f.level = static_cast<int>(detail::get_u32(is, "level"));
    f.channels = static_cast<int>(detail::get_u32(is, "channels"));
    f.height = static_cast<int>(detail::get_u32(is, "height"));
    f.width = static_cast<int>(detail::get_u32(is, "width"));
    if (f.level < kMinLevel || f.level > kMaxLevel) {
      throw InvalidInput("FPYR level " + std::to_string(f.level) + " outside 2..5");
    }
    if (!fp.levels.empty() && fp.levels.begin()->second.channels != f.channels) {
      throw InvalidInput("FPYR levels disagree on channel count");
    }
    const std::size_t n = static_cast<std::size_t>(f.channels) * f.height * f.width;
    if (n > (std::size_t{1} << 31)) throw InvalidInput("FPYR level is implausibly large");
    f.data.resize(n);
    for (double& v : f.data) {
      v = detail::get_f32(is, "level data");
      if (!std::isfinite(v)) throw InvalidInput("FPYR file contains a non-finite value");
    }
    if (!fp.levels.emplace(f.level, std::move(f)).second) throw InvalidInput("FPYR repeats a level");
  }
  return fp;
}

}  // namespace roipoly

#include "roipoly/pyramid.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "gradcheck.hpp"

namespace roipoly {
namespace {

ImageRaster random_image(std::mt19937_64& rng, int w, int h, int c) {
  ImageRaster img(w, h, c);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (double& v : img.data) v = u(rng);
  return img;
}

FeatureMap affine_map(int level, int channels, int h, int w, double a, double b, double c) {
  FeatureMap f{level, channels, h, w, std::vector<double>(static_cast<std::size_t>(channels) * h * w)};
  for (int ch = 0; ch < channels; ++ch) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        f.data[(static_cast<std::size_t>(ch) * h + y) * w + x] = (ch + 1) * (a * (x + 0.5) + b * (y + 0.5)) + c;
      }
    }
  }
  return f;
}

TEST(BuildPyramid, LevelSizes) {
  std::mt19937_64 rng(1);
  ParamStore ps;
  init_pyramid_params(ps, rng, {});
  const FeaturePyramid fp = build_pyramid(random_image(rng, 64, 64, 2), ps, {});
  ASSERT_EQ(fp.levels.size(), 4u);
  int expect = 16;
  for (int l = 2; l <= 5; ++l, expect /= 2) {
    EXPECT_EQ(fp.level(l).height, expect);
    EXPECT_EQ(fp.level(l).width, expect);
    EXPECT_EQ(fp.level(l).channels, 32);
  }
  const FeaturePyramid odd = build_pyramid(random_image(rng, 100, 37, 2), ps, {});
  for (int l = 2; l <= 5; ++l) {
    EXPECT_EQ(odd.level(l).width, static_cast<int>(std::ceil(100 / std::ldexp(1.0, l))));
    EXPECT_EQ(odd.level(l).height, static_cast<int>(std::ceil(37 / std::ldexp(1.0, l))));
  }
}

TEST(BuildPyramid, ZeroImageZeroBiasGivesZeros) {
  std::mt19937_64 rng(2);
  ParamStore ps;
  init_pyramid_params(ps, rng, {});
  const FeaturePyramid fp = build_pyramid(ImageRaster(48, 40, 2), ps, {});
  for (const auto& [l, f] : fp.levels) {
    for (double v : f.data) EXPECT_EQ(v, 0.0);
  }
}

TEST(BuildPyramid, Deterministic) {
  std::mt19937_64 rng(3);
  ParamStore ps;
  init_pyramid_params(ps, rng, {});
  const ImageRaster img = random_image(rng, 64, 48, 2);
  EXPECT_EQ(build_pyramid(img, ps, {}), build_pyramid(img, ps, {}));
}

TEST(BuildPyramid, RejectsBadImages) {
  std::mt19937_64 rng(4);
  ParamStore ps;
  init_pyramid_params(ps, rng, {});
  EXPECT_THROW(build_pyramid(ImageRaster(31, 64, 2), ps, {}), InvalidInput);
  EXPECT_THROW(build_pyramid(ImageRaster(64, 64, 3), ps, {}), InvalidInput);
  ImageRaster nan(64, 64, 2);
  nan.data[5] = NAN;
  EXPECT_THROW(build_pyramid(nan, ps, {}), InvalidInput);
}

TEST(BuildPyramid, GradientsWithRespectToWeights) {
  std::mt19937_64 rng(5);
  const PyramidConfig cfg{2, 4};
  ParamStore ps;
  init_pyramid_params(ps, rng, cfg);
  for (auto& [_, t] : ps) {
    for (double& v : t.data) v += 0.05;  // nonzero biases
  }
  const ImageRaster img = random_image(rng, 40, 36, 2);
  const auto r = testing::check_gradients(
      [&](ad::Tape& t, const ParamStore& s) {
        const PyramidVars pv = build_pyramid(t, s, img, cfg);
        ad::Var acc = testing::weighted_sum(pv.levels.at(2), 2);
        for (int l = 3; l <= 5; ++l) acc = ad::add(acc, testing::weighted_sum(pv.levels.at(l), l));
        return acc;
      },
      ps, 30, 6);
  EXPECT_EQ(r.failures, 0) << r.worst << " at " << r.worst_at;
}

TEST(LevelAssign, Examples) {
  EXPECT_EQ(level_assign({0, 0, 224, 224}), 4);
  EXPECT_EQ(level_assign({0, 0, 448, 448}), 5);
  EXPECT_EQ(level_assign({0, 0, 8 * 224, 8 * 224}), 5);
  EXPECT_EQ(level_assign({0, 0, 112, 112}), 3);
  EXPECT_EQ(level_assign({0, 0, 10, 10}), 2);
  EXPECT_EQ(level_assign({0, 0, 100, 100}, 3, 100.0), 3);
  EXPECT_THROW(level_assign({1, 1, 1, 5}), InvalidInput);
}

TEST(LevelAssign, MonotoneInSize) {
  int prev = 2;
  for (double s = 1.0; s < 4000.0; s *= 1.07) {
    const int l = level_assign({0, 0, s, s});
    EXPECT_GE(l, prev);
    prev = l;
  }
}

TEST(RoiAlign, TwoByTwoCentre) {
  const FeatureMap f{2, 1, 2, 2, {0, 1, 2, 3}};
  const RoIFeature r = roi_align(f, {0, 0, 8, 8}, 1, 1);
  ASSERT_EQ(r.data.size(), 1u);
  EXPECT_DOUBLE_EQ(r.data[0], 1.5);
}

TEST(RoiAlign, ConstantMap) {
  FeatureMap f{3, 2, 6, 5, std::vector<double>(60, 4.25)};
  const RoIFeature r = roi_align(f, {-10, 3, 70, 30}, 7, 7);
  for (double v : r.data) EXPECT_NEAR(v, 4.25, 1e-15);
}

TEST(RoiAlign, ExactOnAffineFields) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const int level = 2 + trial % 4;
    const double stride = std::ldexp(1.0, level);
    const double a = u(rng) * 2 - 1, b = u(rng) * 2 - 1, c0 = u(rng);
    const FeatureMap f = affine_map(level, 2, 12, 14, a, b, c0);
    // Interior box: every bin centre lies within [0.5, size - 0.5] in map px.
    const double x0 = (0.5 + 4 * u(rng)) * stride, y0 = (0.5 + 4 * u(rng)) * stride;
    const BBox box{x0, y0, x0 + (1 + 8 * u(rng)) * stride, y0 + (1 + 7 * u(rng)) * stride};
    const RoIFeature r = roi_align(f, box, 7, 7);
    for (int c = 0; c < 2; ++c) {
      for (int i = 0; i < 7; ++i) {
        for (int j = 0; j < 7; ++j) {
          const double cx = (box.x_min + (j + 0.5) * box.width() / 7) / stride;
          const double cy = (box.y_min + (i + 0.5) * box.height() / 7) / stride;
          const double expect = (c + 1) * (a * cx + b * cy) + c0;
          EXPECT_NEAR(r.at(c, i, j), expect, 1e-9);
        }
      }
    }
  }
}

TEST(RoiAlign, TranslationBitExact) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const int level = 2 + trial % 4;
    const double stride = std::ldexp(1.0, level);
    const int h = 10, w = 12, dx = 1 + trial % 3, dy = trial % 2;
    FeatureMap f{level, 2, h + dy, w + dx, {}};
    f.data.resize(static_cast<std::size_t>(2) * f.height * f.width);
    for (double& v : f.data) v = u(rng);
    FeatureMap g = f;
    for (int c = 0; c < 2; ++c) {
      for (int y = 0; y < f.height; ++y) {
        for (int x = 0; x < f.width; ++x) {
          const int sx = x - dx, sy = y - dy;
          g.data[(static_cast<std::size_t>(c) * f.height + y) * f.width + x] =
              (sx >= 0 && sy >= 0) ? f.at(c, sy, sx) : -1.0;
        }
      }
    }
    // Coordinates on a 1/256 px lattice so the shifted box is exactly representable.
    auto q = [](double v) { return std::round(v * 256.0) / 256.0; };
    const double x0 = q((0.6 + 3 * u(rng)) * stride), y0 = q((0.6 + 3 * u(rng)) * stride);
    const BBox box{x0, y0, q(x0 + (1 + 5 * u(rng)) * stride), q(y0 + (1 + 5 * u(rng)) * stride)};
    const BBox moved{box.x_min + dx * stride, box.y_min + dy * stride, box.x_max + dx * stride,
                     box.y_max + dy * stride};
    const RoIFeature a = roi_align(f, box, 7, 7);
    const RoIFeature b = roi_align(g, moved, 7, 7);
    EXPECT_EQ(a.data, b.data);
  }
}

TEST(RoiAlign, SamplesOutsideClampToBorder) {
  const FeatureMap f{2, 1, 2, 2, {0, 1, 2, 3}};
  const RoIFeature r = roi_align(f, {-40, -40, -20, -20}, 2, 2);
  for (double v : r.data) EXPECT_EQ(v, 0.0);
  const RoIFeature s = roi_align(f, {40, 40, 60, 60}, 2, 2);
  for (double v : s.data) EXPECT_EQ(v, 3.0);
}

TEST(Fpyr, RoundTrip) {
  std::mt19937_64 rng(9);
  ParamStore ps;
  init_pyramid_params(ps, rng, {2, 8});
  FeaturePyramid fp = build_pyramid(random_image(rng, 64, 40, 2), ps, {2, 8});
  for (auto& [_, f] : fp.levels) {
    for (double& v : f.data) v = static_cast<float>(v);
  }
  const auto path = std::filesystem::temp_directory_path() / "roipoly_fpyr_roundtrip.fpyr";
  write_fpyr(fp, path.string());
  EXPECT_EQ(read_fpyr(path.string()), fp);
  std::filesystem::remove(path);
}

TEST(Fpyr, RejectsCorruptFiles) {
  const auto path = std::filesystem::temp_directory_path() / "roipoly_fpyr_bad.fpyr";
  {
    std::ofstream os(path, std::ios::binary);
    os << "NOPE";
  }
  EXPECT_THROW(read_fpyr(path.string()), InvalidInput);
  FeaturePyramid fp;
  fp.levels[2] = FeatureMap{2, 1, 2, 2, {1, 2, 3, 4}};
  write_fpyr(fp, path.string());
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 2);
  EXPECT_THROW(read_fpyr(path.string()), InvalidInput);
  EXPECT_THROW(read_fpyr("/nonexistent/dir/x.fpyr"), InvalidInput);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace roipoly

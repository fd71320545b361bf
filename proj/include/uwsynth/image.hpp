#pragma once

#include <vector>

#include "uwsynth/tensor.hpp"

namespace uwsynth {

// RGB raster, values in [0,1]. Planar storage: px[c*H*W + y*W + x] with
// c = 0 (red), 1 (green), 2 (blue). Planar matches the tensor layout so the
// model boundary is a straight copy.
struct RgbImage {
  int width = 0, height = 0;
  std::vector<float> px;

  RgbImage() = default;
  RgbImage(int w, int h) : width(w), height(h), px(std::size_t(3) * w * h, 0.f) {}

  float& at(int c, int y, int x) { return px[(std::size_t(c) * height + y) * width + x]; }
  float at(int c, int y, int x) const { return px[(std::size_t(c) * height + y) * width + x]; }

  static RgbImage filled(int w, int h, float r, float g, float b);
};

// Per-pixel distance in meters, non-negative. Row-major y*W + x.
struct DepthMap {
  int width = 0, height = 0;
  std::vector<float> d;

  DepthMap() = default;
  DepthMap(int w, int h, float fill = 0.f)
      : width(w), height(h), d(std::size_t(w) * h, fill) {}

  float& at(int y, int x) { return d[std::size_t(y) * width + x]; }
  float at(int y, int x) const { return d[std::size_t(y) * width + x]; }
};

RgbImage hflip(const RgbImage& img);
DepthMap hflip(const DepthMap& depth);

// (1,3,H,W) tensor view of an image and back.
TensorF to_tensor(const RgbImage& img);
RgbImage to_image(const TensorF& t, bool clamp01 = true);

// Fraction of pixels whose value differs by more than `tol` in any channel.
double pixel_diff_fraction(const RgbImage& a, const RgbImage& b, float tol = 1.f / 255.f);

// Mean value per channel.
std::vector<double> channel_means(const RgbImage& img);

}  // namespace uwsynth

#include "uwsynth/image.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace uwsynth {

RgbImage RgbImage::filled(int w, int h, float r, float g, float b) {
  RgbImage img(w, h);
  const float v[3] = {r, g, b};
  for (int c = 0; c < 3; ++c)
    std::fill_n(img.px.begin() + std::size_t(c) * w * h, std::size_t(w) * h, v[c]);
  return img;
}

RgbImage hflip(const RgbImage& img) {
  RgbImage out(img.width, img.height);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        out.at(c, y, x) = img.at(c, y, img.width - 1 - x);
  return out;
}

DepthMap hflip(const DepthMap& depth) {
  DepthMap out(depth.width, depth.height);
  for (int y = 0; y < depth.height; ++y)
    for (int x = 0; x < depth.width; ++x)
      out.at(y, x) = depth.at(y, depth.width - 1 - x);
  return out;
}

TensorF to_tensor(const RgbImage& img) {
  return TensorF::from({1, 3, img.height, img.width}, img.px);
}

RgbImage to_image(const TensorF& t, bool clamp01) {
  const Shape4 s = t.shape();
  if (s.n != 1 || s.c != 3)
    throw std::invalid_argument("to_image expects a 1x3xHxW tensor, got " + s.str());
  RgbImage img(s.w, s.h);
  img.px = t.values();
  if (clamp01)
    for (float& v : img.px) v = std::clamp(v, 0.f, 1.f);
  return img;
}

double pixel_diff_fraction(const RgbImage& a, const RgbImage& b, float tol) {
  if (a.width != b.width || a.height != b.height)
    throw std::invalid_argument("pixel_diff_fraction: dimension mismatch");
  std::size_t plane = std::size_t(a.width) * a.height;
  std::size_t differing = 0;
  for (std::size_t i = 0; i < plane; ++i) {
    for (int c = 0; c < 3; ++c) {
      if (std::fabs(a.px[c * plane + i] - b.px[c * plane + i]) > tol) {
        ++differing;
        break;
      }
    }
  }
  return double(differing) / double(plane);
}

std::vector<double> channel_means(const RgbImage& img) {
  std::size_t plane = std::size_t(img.width) * img.height;
  std::vector<double> m(3, 0.0);
  for (int c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < plane; ++i) m[c] += img.px[c * plane + i];
    m[c] /= double(plane);
  }
  return m;
}

}  // namespace uwsynth

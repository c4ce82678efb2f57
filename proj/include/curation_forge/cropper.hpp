#pragma once

// Selective cropping: an importance map (saliency + faces + center bias) is
// scored against a box kernel that is +1 inside the crop and -1 on a thin
// border frame; the best-scoring window wins. Scores for all positions come
// from one frequency-domain cross-correlation.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "curation_forge/error.hpp"
#include "curation_forge/fft.hpp"
#include "curation_forge/raster.hpp"

namespace curation_forge {

struct FaceBox {
  std::size_t x = 0, y = 0, w = 0, h = 0;
};

struct ImportanceWeights {
  double saliency = 1.0;
  double face = 1.0;
  double center = 0.25;
};

struct ImportanceMap {
  Grid<double> grid;  // weighted sum of the three components
  Grid<double> saliency;
  Grid<double> face;
  Grid<double> center;
  ImportanceWeights weights;
};

struct CropWindow {
  std::size_t x = 0, y = 0, w = 0, h = 0;
  double score = 0.0;
};

inline constexpr std::size_t kDefaultCropWidth = 1024;
inline constexpr std::size_t kDefaultCropHeight = 768;
inline constexpr std::size_t kDefaultCropBorder = 10;
inline constexpr double kDefaultSaliencyBlur = 0.045;  // Gaussian sigma as a fraction of width

// Separable Gaussian blur with symmetric (mirror) boundary handling.
inline Grid<double> gaussian_blur(const Grid<double>& in, double sigma) {
  if (!(sigma > 0.0) || in.empty()) return in;
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (std::ptrdiff_t i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    sum += k[i + radius];
  }
  for (auto& v : k) v /= sum;

  const auto H = static_cast<std::ptrdiff_t>(in.height()), W = static_cast<std::ptrdiff_t>(in.width());
  auto reflect = [](std::ptrdiff_t i, std::ptrdiff_t n) {
    if (n == 1) return std::ptrdiff_t{0};
    const std::ptrdiff_t period = 2 * n;
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - 1 - i;
  };

  Grid<double> tmp(in.height(), in.width()), out(in.height(), in.width());
  for (std::ptrdiff_t y = 0; y < H; ++y)
    for (std::ptrdiff_t x = 0; x < W; ++x) {
      double acc = 0.0;
      for (std::ptrdiff_t i = -radius; i <= radius; ++i) acc += k[i + radius] * in(y, reflect(x + i, W));
      tmp(y, x) = acc;
    }
  for (std::ptrdiff_t y = 0; y < H; ++y)
    for (std::ptrdiff_t x = 0; x < W; ++x) {
      double acc = 0.0;
      for (std::ptrdiff_t i = -radius; i <= radius; ++i) acc += k[i + radius] * tmp(reflect(y + i, H), x);
      out(y, x) = acc;
    }
  return out;
}

// Image-signature saliency: sign of the 2-D DCT of mean-removed luma, inverse
// transformed, squared, Gaussian-smoothed, scaled to a maximum of 1.
inline Grid<double> saliency_map(const Grid<double>& luma_in, double blur_fraction = kDefaultSaliencyBlur) {
  require(luma_in.height() >= 8 && luma_in.width() >= 8, ErrorCode::invalid_argument,
          "saliency needs at least 8x8 pixels");
  Grid<double> centered = luma_in;
  double mean = 0.0;
  for (double v : centered.values()) mean += v;
  mean /= static_cast<double>(centered.size());
  for (double& v : centered.values()) v -= mean;

  Grid<double> coeffs = fft::dct2(centered);
  double peak = 0.0;
  for (double v : coeffs.values()) peak = std::max(peak, std::abs(v));
  const double eps = 1e-10 * peak;
  coeffs(0, 0) = 0.0;
  for (double& v : coeffs.values()) v = (v > eps) ? 1.0 : (v < -eps ? -1.0 : 0.0);

  Grid<double> recon = fft::idct2(coeffs);
  for (double& v : recon.values()) v *= v;
  Grid<double> sal = gaussian_blur(recon, blur_fraction * static_cast<double>(luma_in.width()));

  double top = 0.0;
  for (double v : sal.values()) top = std::max(top, v);
  if (top > 0.0) {
    for (double& v : sal.values()) v = std::max(0.0, v / top);
  } else {
    for (double& v : sal.values()) v = 0.0;
  }
  return sal;
}

inline Grid<double> center_bias(std::size_t height, std::size_t width) {
  Grid<double> out(height, width);
  const double sigma = static_cast<double>(std::min(height, width)) / 3.0;
  const double cy = (static_cast<double>(height) - 1.0) / 2.0, cx = (static_cast<double>(width) - 1.0) / 2.0;
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
      out(y, x) = std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
    }
  return out;
}

inline ImportanceMap build_importance(Grid<double> saliency, std::span<const FaceBox> faces,
                                      ImportanceWeights weights = {}) {
  require(weights.saliency >= 0 && weights.face >= 0 && weights.center >= 0, ErrorCode::invalid_argument,
          "importance weights must be nonnegative");
  const std::size_t H = saliency.height(), W = saliency.width();
  ImportanceMap m;
  m.weights = weights;
  m.face = Grid<double>(H, W, 0.0);
  for (const auto& b : faces) {
    require(b.w >= 1 && b.h >= 1 && b.x + b.w <= W && b.y + b.h <= H, ErrorCode::invalid_argument,
            "face box outside the raster");
    for (std::size_t y = b.y; y < b.y + b.h; ++y)
      for (std::size_t x = b.x; x < b.x + b.w; ++x) m.face(y, x) = 1.0;
  }
  m.center = center_bias(H, W);
  m.grid = Grid<double>(H, W);
  for (std::size_t i = 0; i < H * W; ++i) {
    const double v = weights.saliency * saliency.data()[i] + weights.face * m.face.data()[i] +
                     weights.center * m.center.data()[i];
    m.grid.data()[i] = std::max(0.0, v);
  }
  m.saliency = std::move(saliency);
  return m;
}

// +1 inside, -1 on the border frame of width `border`.
inline Grid<double> crop_kernel(std::size_t w, std::size_t h, std::size_t border) {
  Grid<double> k(h, w, 1.0);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      if (y < border || x < border || y >= h - border || x >= w - border) k(y, x) = -1.0;
  return k;
}

inline void check_crop_args(const Grid<double>& map, std::size_t w, std::size_t h, std::size_t border) {
  require(w >= 1 && h >= 1, ErrorCode::invalid_argument, "crop size must be positive");
  require(w <= map.width() && h <= map.height(), ErrorCode::invalid_argument,
          "crop " + std::to_string(w) + "x" + std::to_string(h) + " larger than map " +
              std::to_string(map.width()) + "x" + std::to_string(map.height()));
  require(2 * border < std::min(w, h), ErrorCode::invalid_argument, "border must be < min(w, h) / 2");
}

// Score of every window position; (H - h + 1) x (W - w + 1), indexed (y, x).
inline Grid<double> crop_scores(const Grid<double>& map, std::size_t w, std::size_t h,
                                std::size_t border = kDefaultCropBorder) {
  check_crop_args(map, w, h, border);
  return fft::correlate_valid(map, crop_kernel(w, h, border));
}

// Argmax window. Scores within a relative 1e-9 of the total map mass count
// as ties (the FFT leaves round-off of that order); ties go to the window
// whose center is closest to the map center, then smallest y, then smallest x.
inline CropWindow best_crop(const Grid<double>& map, std::size_t w = kDefaultCropWidth,
                            std::size_t h = kDefaultCropHeight, std::size_t border = kDefaultCropBorder) {
  const Grid<double> scores = crop_scores(map, w, h, border);
  double mass = 0.0;
  for (double v : map.values()) mass += std::abs(v);
  const double tol = 1e-9 * std::max(mass, 1e-300);

  double top = -std::numeric_limits<double>::infinity();
  for (double v : scores.values()) top = std::max(top, v);

  const auto H = static_cast<std::int64_t>(map.height()), W = static_cast<std::int64_t>(map.width());
  CropWindow best{0, 0, w, h, 0.0};
  std::int64_t best_dist = -1;
  for (std::size_t y = 0; y < scores.height(); ++y) {
    for (std::size_t x = 0; x < scores.width(); ++x) {
      if (scores(y, x) < top - tol) continue;
      const std::int64_t dy = 2 * static_cast<std::int64_t>(y) + static_cast<std::int64_t>(h) - H;
      const std::int64_t dx = 2 * static_cast<std::int64_t>(x) + static_cast<std::int64_t>(w) - W;
      const std::int64_t dist = dy * dy + dx * dx;
      if (best_dist < 0 || dist < best_dist) {
        best_dist = dist;
        best = {x, y, w, h, scores(y, x)};
      }
    }
  }
  return best;
}

}  // namespace curation_forge

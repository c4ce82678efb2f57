#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "curation_forge/error.hpp"

namespace curation_forge {

// Row-major 2-D array; (y, x) indexing.
template <typename T>
class Grid {
 public:
  Grid() = default;
  Grid(std::size_t height, std::size_t width, T fill = T{})
      : height_(height), width_(width), data_(height * width, fill) {}

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t y, std::size_t x) noexcept { return data_[y * width_ + x]; }
  const T& operator()(std::size_t y, std::size_t x) const noexcept { return data_[y * width_ + x]; }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }

  bool operator==(const Grid&) const = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<T> data_;
};

// Interleaved RGB, channel values in [0,1].
class RgbRaster {
 public:
  RgbRaster() = default;
  RgbRaster(std::size_t height, std::size_t width)
      : height_(height), width_(width), data_(3 * height * width, 0.0) {}

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t pixels() const noexcept { return height_ * width_; }

  double& at(std::size_t y, std::size_t x, std::size_t c) noexcept {
    return data_[3 * (y * width_ + x) + c];
  }
  double at(std::size_t y, std::size_t x, std::size_t c) const noexcept {
    return data_[3 * (y * width_ + x) + c];
  }

  void set(std::size_t y, std::size_t x, double r, double g, double b) noexcept {
    at(y, x, 0) = r;
    at(y, x, 1) = g;
    at(y, x, 2) = b;
  }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<double> data_;
};

// BT.709 luma weights.
inline constexpr double kLumaR = 0.2126;
inline constexpr double kLumaG = 0.7152;
inline constexpr double kLumaB = 0.0722;

inline Grid<double> luma(const RgbRaster& img) {
  Grid<double> out(img.height(), img.width());
  for (std::size_t y = 0; y < img.height(); ++y)
    for (std::size_t x = 0; x < img.width(); ++x)
      out(y, x) = kLumaR * img.at(y, x, 0) + kLumaG * img.at(y, x, 1) + kLumaB * img.at(y, x, 2);
  return out;
}

}  // namespace curation_forge

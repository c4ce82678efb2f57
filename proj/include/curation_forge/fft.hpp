#pragma once

// Thin RAII layer over FFTW for the two transforms the cropper needs:
// 2-D real cross-correlation and the orthonormal 2-D DCT-II / DCT-III pair.
// Plans are created once per (kind, size) and reused through FFTW's
// new-array execute interface; planning is serialized behind a mutex since
// the FFTW planner is not thread-safe.

#include <cmath>
#include <complex>
#include <cstddef>
#include <cstring>
#include <map>
#include <memory>
#include <mutex>
#include <tuple>

#include <fftw3.h>

#include "curation_forge/error.hpp"
#include "curation_forge/raster.hpp"

namespace curation_forge::fft {

template <typename T>
struct FftwDeleter {
  void operator()(T* p) const noexcept { fftw_free(p); }
};

template <typename T>
using FftwArray = std::unique_ptr<T[], FftwDeleter<T>>;

template <typename T>
FftwArray<T> allocate(std::size_t n) {
  auto* p = static_cast<T*>(fftw_malloc(sizeof(T) * (n == 0 ? 1 : n)));
  if (p == nullptr) throw std::bad_alloc();
  return FftwArray<T>(p);
}

enum class PlanKind { r2c, c2r, dct2, dct3 };

class PlanCache {
 public:
  static PlanCache& instance() {
    static PlanCache cache;
    return cache;
  }

  fftw_plan get(PlanKind kind, std::size_t h, std::size_t w) {
    std::lock_guard lock(mutex_);
    const auto key = std::make_tuple(kind, h, w);
    if (auto it = plans_.find(key); it != plans_.end()) return it->second;
    const int n0 = static_cast<int>(h), n1 = static_cast<int>(w);
    const std::size_t complex_n = h * (w / 2 + 1);
    auto real = allocate<double>(h * w);
    auto spec = allocate<fftw_complex>(complex_n);
    fftw_plan plan = nullptr;
    switch (kind) {
      case PlanKind::r2c:
        plan = fftw_plan_dft_r2c_2d(n0, n1, real.get(), spec.get(), FFTW_ESTIMATE);
        break;
      case PlanKind::c2r:
        plan = fftw_plan_dft_c2r_2d(n0, n1, spec.get(), real.get(), FFTW_ESTIMATE);
        break;
      case PlanKind::dct2:
        plan = fftw_plan_r2r_2d(n0, n1, real.get(), real.get(), FFTW_REDFT10, FFTW_REDFT10, FFTW_ESTIMATE);
        break;
      case PlanKind::dct3:
        plan = fftw_plan_r2r_2d(n0, n1, real.get(), real.get(), FFTW_REDFT01, FFTW_REDFT01, FFTW_ESTIMATE);
        break;
    }
    require(plan != nullptr, ErrorCode::invalid_argument, "FFTW could not create a plan");
    plans_.emplace(key, plan);
    return plan;
  }

  ~PlanCache() {
    for (auto& [key, plan] : plans_) fftw_destroy_plan(plan);
  }

 private:
  PlanCache() = default;
  std::mutex mutex_;
  std::map<std::tuple<PlanKind, std::size_t, std::size_t>, fftw_plan> plans_;
};

// Valid-mode cross-correlation: out(y, x) = sum_{u,v} kernel(u, v) * image(y + u, x + v)
// for 0 <= y <= H - h, 0 <= x <= W - w. Computed as a circular correlation on
// the H x W grid; valid positions never wrap.
inline Grid<double> correlate_valid(const Grid<double>& image, const Grid<double>& kernel) {
  const std::size_t H = image.height(), W = image.width();
  const std::size_t h = kernel.height(), w = kernel.width();
  require(h >= 1 && w >= 1 && h <= H && w <= W, ErrorCode::invalid_argument,
          "kernel must be non-empty and fit inside the image");
  const std::size_t n = H * W, nc = H * (W / 2 + 1);

  auto real = allocate<double>(n);
  auto img_spec = allocate<fftw_complex>(nc);
  auto ker_spec = allocate<fftw_complex>(nc);

  auto& cache = PlanCache::instance();
  const fftw_plan fwd = cache.get(PlanKind::r2c, H, W);
  const fftw_plan inv = cache.get(PlanKind::c2r, H, W);

  std::memcpy(real.get(), image.data(), n * sizeof(double));
  fftw_execute_dft_r2c(fwd, real.get(), img_spec.get());

  std::memset(real.get(), 0, n * sizeof(double));
  for (std::size_t u = 0; u < h; ++u)
    std::memcpy(real.get() + u * W, kernel.data() + u * w, w * sizeof(double));
  fftw_execute_dft_r2c(fwd, real.get(), ker_spec.get());

  // Correlation theorem: F^-1( F(image) * conj(F(kernel)) ).
  for (std::size_t i = 0; i < nc; ++i) {
    const double ar = img_spec[i][0], ai = img_spec[i][1];
    const double br = ker_spec[i][0], bi = -ker_spec[i][1];
    img_spec[i][0] = ar * br - ai * bi;
    img_spec[i][1] = ar * bi + ai * br;
  }
  fftw_execute_dft_c2r(inv, img_spec.get(), real.get());

  const double scale = 1.0 / static_cast<double>(n);
  Grid<double> out(H - h + 1, W - w + 1);
  for (std::size_t y = 0; y < out.height(); ++y)
    for (std::size_t x = 0; x < out.width(); ++x) out(y, x) = real[y * W + x] * scale;
  return out;
}

// Orthonormal 2-D DCT-II.
inline Grid<double> dct2(const Grid<double>& in) {
  const std::size_t H = in.height(), W = in.width();
  auto buf = allocate<double>(H * W);
  std::memcpy(buf.get(), in.data(), H * W * sizeof(double));
  fftw_execute_r2r(PlanCache::instance().get(PlanKind::dct2, H, W), buf.get(), buf.get());
  Grid<double> out(H, W);
  const double s0 = std::sqrt(1.0 / (4.0 * H)), s = std::sqrt(1.0 / (2.0 * H));
  const double t0 = std::sqrt(1.0 / (4.0 * W)), t = std::sqrt(1.0 / (2.0 * W));
  for (std::size_t k = 0; k < H; ++k)
    for (std::size_t l = 0; l < W; ++l)
      out(k, l) = buf[k * W + l] * (k == 0 ? s0 : s) * (l == 0 ? t0 : t);
  return out;
}

// Inverse of dct2 (orthonormal DCT-III).
inline Grid<double> idct2(const Grid<double>& in) {
  const std::size_t H = in.height(), W = in.width();
  auto buf = allocate<double>(H * W);
  // REDFT01 doubles every non-DC term.
  const double s0 = std::sqrt(1.0 / H), s = 0.5 * std::sqrt(2.0 / H);
  const double t0 = std::sqrt(1.0 / W), t = 0.5 * std::sqrt(2.0 / W);
  for (std::size_t k = 0; k < H; ++k)
    for (std::size_t l = 0; l < W; ++l)
      buf[k * W + l] = in(k, l) * (k == 0 ? s0 : s) * (l == 0 ? t0 : t);
  fftw_execute_r2r(PlanCache::instance().get(PlanKind::dct3, H, W), buf.get(), buf.get());
  Grid<double> out(H, W);
  std::memcpy(out.data(), buf.get(), H * W * sizeof(double));
  return out;
}

}  // namespace curation_forge::fft

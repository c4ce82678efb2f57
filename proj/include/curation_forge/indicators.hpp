#pragma once

// The seven scalar quality indicators used to balance the dataset, the
// JPEG quality estimate read from quantization tables, and z-score trimming
// of extreme indicator values.

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "curation_forge/error.hpp"
#include "curation_forge/raster.hpp"

namespace curation_forge {

enum class Indicator {
  brightness,
  colorfulness,
  rms_contrast,
  sharpness,
  bitrate,
  resolution,
  jpeg_quality,
};

inline constexpr std::array<Indicator, 7> kScalarIndicators = {
    Indicator::brightness, Indicator::colorfulness, Indicator::rms_contrast,
    Indicator::sharpness,  Indicator::bitrate,      Indicator::resolution,
    Indicator::jpeg_quality};

inline constexpr std::string_view indicator_name(Indicator ind) {
  switch (ind) {
    case Indicator::brightness: return "brightness";
    case Indicator::colorfulness: return "colorfulness";
    case Indicator::rms_contrast: return "rms_contrast";
    case Indicator::sharpness: return "sharpness";
    case Indicator::bitrate: return "bitrate";
    case Indicator::resolution: return "resolution";
    case Indicator::jpeg_quality: return "jpeg_quality";
  }
  return "";
}

inline Indicator parse_indicator(std::string_view name) {
  for (auto ind : kScalarIndicators)
    if (indicator_name(ind) == name) return ind;
  fail(ErrorCode::invalid_argument, "unknown indicator '" + std::string(name) + "'");
}

struct IndicatorVector {
  std::string image_id;
  double brightness = 0.0;
  double colorfulness = 0.0;
  double rms_contrast = 0.0;
  double sharpness = 0.0;
  double bitrate = 0.0;     // bits per pixel
  double resolution = 0.0;  // width * height
  std::optional<int> jpeg_quality;
  std::optional<int> content_cluster;

  bool operator==(const IndicatorVector&) const = default;
};

// Absent only for jpeg_quality on non-JPEG sources.
inline std::optional<double> indicator_value(const IndicatorVector& v, Indicator ind) {
  switch (ind) {
    case Indicator::brightness: return v.brightness;
    case Indicator::colorfulness: return v.colorfulness;
    case Indicator::rms_contrast: return v.rms_contrast;
    case Indicator::sharpness: return v.sharpness;
    case Indicator::bitrate: return v.bitrate;
    case Indicator::resolution: return v.resolution;
    case Indicator::jpeg_quality:
      if (v.jpeg_quality) return static_cast<double>(*v.jpeg_quality);
      return std::nullopt;
  }
  return std::nullopt;
}

// Mean Sobel gradient magnitude of luma over interior pixels. A stand-in for
// a perceptual sharpness metric: monotone in edge energy, zero on flat images.
inline double sobel_sharpness(const Grid<double>& y) {
  const std::size_t h = y.height(), w = y.width();
  if (h < 3 || w < 3) return 0.0;
  double total = 0.0;
  for (std::size_t r = 1; r + 1 < h; ++r) {
    for (std::size_t c = 1; c + 1 < w; ++c) {
      const double gx = (y(r - 1, c + 1) + 2.0 * y(r, c + 1) + y(r + 1, c + 1)) -
                        (y(r - 1, c - 1) + 2.0 * y(r, c - 1) + y(r + 1, c - 1));
      const double gy = (y(r + 1, c - 1) + 2.0 * y(r + 1, c) + y(r + 1, c + 1)) -
                        (y(r - 1, c - 1) + 2.0 * y(r - 1, c) + y(r - 1, c + 1));
      total += std::sqrt(gx * gx + gy * gy);
    }
  }
  return total / static_cast<double>((h - 2) * (w - 2));
}

inline IndicatorVector compute_indicators(std::string image_id, const RgbRaster& img,
                                          std::uint64_t byte_size,
                                          std::optional<int> jpeg_quality = std::nullopt) {
  require(img.pixels() > 0, ErrorCode::invalid_argument, "zero-pixel raster");
  const double n = static_cast<double>(img.pixels());
  const Grid<double> y = luma(img);

  double luma_sum = 0.0, rg_sum = 0.0, yb_sum = 0.0;
  for (std::size_t r = 0; r < img.height(); ++r) {
    for (std::size_t c = 0; c < img.width(); ++c) {
      const double R = img.at(r, c, 0), G = img.at(r, c, 1), B = img.at(r, c, 2);
      luma_sum += y(r, c);
      rg_sum += R - G;
      yb_sum += 0.5 * (R + G) - B;
    }
  }
  const double luma_mean = luma_sum / n, rg_mean = rg_sum / n, yb_mean = yb_sum / n;

  double luma_ss = 0.0, rg_ss = 0.0, yb_ss = 0.0;
  for (std::size_t r = 0; r < img.height(); ++r) {
    for (std::size_t c = 0; c < img.width(); ++c) {
      const double R = img.at(r, c, 0), G = img.at(r, c, 1), B = img.at(r, c, 2);
      const double dl = y(r, c) - luma_mean;
      const double drg = (R - G) - rg_mean;
      const double dyb = (0.5 * (R + G) - B) - yb_mean;
      luma_ss += dl * dl;
      rg_ss += drg * drg;
      yb_ss += dyb * dyb;
    }
  }

  IndicatorVector out;
  out.image_id = std::move(image_id);
  out.brightness = luma_mean;
  out.rms_contrast = std::sqrt(luma_ss / n);
  out.colorfulness = std::sqrt(rg_ss / n + yb_ss / n) +
                     0.3 * std::sqrt(rg_mean * rg_mean + yb_mean * yb_mean);
  out.sharpness = sobel_sharpness(y);
  out.bitrate = 8.0 * static_cast<double>(byte_size) / n;
  out.resolution = n;
  out.jpeg_quality = jpeg_quality;
  return out;
}

// ---------------------------------------------------------------------------
// JPEG quality from the embedded luminance quantization table.

namespace detail {

// IJG reference luminance table, natural (row-major) order.
inline constexpr std::array<int, 64> kStdLuminanceTable = {
    16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
    14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
    18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};

inline constexpr std::array<int, 64> kZigzagToNatural = {
    0,  1,  8,  16, 9,  2,  3,  10, 17, 24, 32, 25, 18, 11, 4,  5,
    12, 19, 26, 33, 40, 48, 41, 34, 27, 20, 13, 6,  7,  14, 21, 28,
    35, 42, 49, 56, 57, 50, 43, 36, 29, 22, 15, 23, 30, 37, 44, 51,
    58, 59, 52, 45, 38, 31, 39, 46, 53, 60, 61, 54, 47, 55, 62, 63};

// libjpeg's jpeg_quality_scaling + jpeg_add_quant_table with force_baseline.
inline std::array<int, 64> scaled_luminance_table(int quality) {
  const int scale = quality < 50 ? 5000 / quality : 200 - 2 * quality;
  std::array<int, 64> out{};
  for (std::size_t i = 0; i < 64; ++i) {
    int v = (kStdLuminanceTable[i] * scale + 50) / 100;
    out[i] = v < 1 ? 1 : (v > 255 ? 255 : v);
  }
  return out;
}

// Returns the luminance table (natural order) from the first DQT entry with
// table id 0, falling back to the first table seen.
inline std::optional<std::array<int, 64>> find_luminance_table(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || bytes[0] != 0xFF || bytes[1] != 0xD8) return std::nullopt;
  std::optional<std::array<int, 64>> first, luma;
  std::size_t pos = 2;
  while (pos + 1 < bytes.size()) {
    if (bytes[pos] != 0xFF) return first;  // lost sync
    std::uint8_t marker = bytes[pos + 1];
    pos += 2;
    if (marker == 0xFF) {  // fill byte
      --pos;
      continue;
    }
    if (marker == 0xD9 || marker == 0xDA) break;
    if (marker == 0x01 || (marker >= 0xD0 && marker <= 0xD7)) continue;
    if (pos + 2 > bytes.size()) break;
    const std::size_t len = (static_cast<std::size_t>(bytes[pos]) << 8) | bytes[pos + 1];
    if (len < 2 || pos + len > bytes.size()) break;
    if (marker == 0xDB) {
      std::size_t p = pos + 2;
      const std::size_t end = pos + len;
      while (p < end) {
        const int precision = bytes[p] >> 4;
        const int table_id = bytes[p] & 0x0F;
        ++p;
        const std::size_t need = precision == 0 ? 64 : 128;
        if (p + need > end) return luma ? luma : first;
        std::array<int, 64> table{};
        for (std::size_t k = 0; k < 64; ++k) {
          const int v = precision == 0 ? bytes[p + k] : (bytes[p + 2 * k] << 8) | bytes[p + 2 * k + 1];
          table[kZigzagToNatural[k]] = v;
        }
        p += need;
        if (!first) first = table;
        if (table_id == 0 && !luma) luma = table;
      }
    }
    pos += len;
  }
  return luma ? luma : first;
}

}  // namespace detail

// Quality factor (1..100) whose IJG-scaled reference luminance table has the
// smallest sum of absolute differences to the embedded table; ties go to the
// higher quality. Absent when the stream is not a JPEG or carries no DQT.
inline std::optional<int> estimate_jpeg_quality(std::span<const std::uint8_t> bytes) {
  const auto table = detail::find_luminance_table(bytes);
  if (!table) return std::nullopt;
  int best_q = 0;
  long best_sad = std::numeric_limits<long>::max();
  for (int q = 100; q >= 1; --q) {
    const auto ref = detail::scaled_luminance_table(q);
    long sad = 0;
    for (std::size_t i = 0; i < 64; ++i) sad += std::labs(static_cast<long>((*table)[i] - ref[i]));
    if (sad < best_sad) {
      best_sad = sad;
      best_q = q;
    }
  }
  return best_q;
}

// ---------------------------------------------------------------------------
// z-score trimming

inline constexpr double kDefaultTrimZ = 3.0;

struct DimensionStats {
  Indicator indicator{};
  double mean = 0.0;
  double sd = 0.0;  // sample standard deviation (n - 1)
  std::size_t present = 0;
  bool skipped = false;
};

struct TrimStats {
  std::vector<DimensionStats> dims;
  std::vector<std::string> warnings;
};

struct TrimResult {
  std::vector<IndicatorVector> kept;
  std::vector<std::string> removed_ids;
  TrimStats stats;
};

inline TrimStats indicator_stats(std::span<const IndicatorVector> vectors,
                                 std::span<const Indicator> dims) {
  TrimStats stats;
  for (auto ind : dims) {
    DimensionStats d;
    d.indicator = ind;
    double sum = 0.0;
    for (const auto& v : vectors) {
      if (auto x = indicator_value(v, ind)) {
        sum += *x;
        ++d.present;
      }
    }
    if (d.present >= 2) {
      d.mean = sum / static_cast<double>(d.present);
      double ss = 0.0;
      for (const auto& v : vectors) {
        if (auto x = indicator_value(v, ind)) ss += (*x - d.mean) * (*x - d.mean);
      }
      d.sd = std::sqrt(ss / static_cast<double>(d.present - 1));
    }
    if (d.present < 2 || !(d.sd > 0.0)) {
      d.skipped = true;
      stats.warnings.push_back("indicator " + std::string(indicator_name(ind)) +
                               " has zero spread; excluded from trimming");
    }
    stats.dims.push_back(d);
  }
  return stats;
}

// Keeps an image iff |z| <= threshold on every trimmed dimension, with z from
// the statistics of the full input (one pass, no re-estimation).
inline TrimResult trim_by_zscore(std::span<const IndicatorVector> vectors, double threshold,
                                 std::span<const Indicator> dims = kScalarIndicators) {
  require(vectors.size() >= 2, ErrorCode::precondition, "z-score trimming needs at least 2 images");
  require(threshold > 0.0, ErrorCode::invalid_argument, "trim threshold must be positive");
  TrimResult result;
  result.stats = indicator_stats(vectors, dims);
  for (const auto& v : vectors) {
    bool keep = true;
    for (const auto& d : result.stats.dims) {
      if (d.skipped) continue;
      if (auto x = indicator_value(v, d.indicator)) {
        if (std::abs((*x - d.mean) / d.sd) > threshold) {
          keep = false;
          break;
        }
      }
    }
    if (keep) {
      result.kept.push_back(v);
    } else {
      result.removed_ids.push_back(v.image_id);
    }
  }
  return result;
}

}  // namespace curation_forge

#pragma once

// Stage kinds that decode or write images (OpenCV), plus the plot renderer
// used by analyze and fit.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "curation_forge/catalog.hpp"
#include "curation_forge/cropper.hpp"
#include "curation_forge/formats.hpp"
#include "curation_forge/indicators.hpp"
#include "curation_forge/parallel.hpp"
#include "curation_forge/pipeline.hpp"
#include "curation_forge/raster.hpp"
#include "curation_forge/stages.hpp"
#include "json.hpp"

namespace curation_forge::cv_stages {

using nlohmann::json;
namespace fs = std::filesystem;

inline std::vector<std::uint8_t> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::io, "cannot read " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// EXIF orientation is ignored: indicators describe the stored pixels.
inline cv::Mat decode(const std::vector<std::uint8_t>& bytes, const std::string& what) {
  cv::Mat img;
  if (!bytes.empty()) img = cv::imdecode(bytes, cv::IMREAD_COLOR | cv::IMREAD_IGNORE_ORIENTATION);
  require(!img.empty(), ErrorCode::corrupt_file, "cannot decode " + what);
  return img;
}

inline RgbRaster to_raster(const cv::Mat& bgr) {
  RgbRaster r(static_cast<std::size_t>(bgr.rows), static_cast<std::size_t>(bgr.cols));
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x)
      r.set(y, x, row[x][2] / 255.0, row[x][1] / 255.0, row[x][0] / 255.0);
  }
  return r;
}

inline Grid<double> to_grid(const cv::Mat& m) {
  Grid<double> g(static_cast<std::size_t>(m.rows), static_cast<std::size_t>(m.cols));
  for (int y = 0; y < m.rows; ++y)
    for (int x = 0; x < m.cols; ++x) g(y, x) = m.at<double>(y, x);
  return g;
}

inline cv::Mat to_mat(const Grid<double>& g) {
  cv::Mat m(static_cast<int>(g.height()), static_cast<int>(g.width()), CV_64F);
  for (int y = 0; y < m.rows; ++y)
    for (int x = 0; x < m.cols; ++x) m.at<double>(y, x) = g(y, x);
  return m;
}

// ---------------------------------------------------------------------------

inline StageKind indicators_kind() {
  StageKind k;
  k.help = "Compute the seven scalar indicators for every catalog image";
  k.paths = {{"catalog", PathRole::input},
             {"images", PathRole::input, true, true},
             {"out", PathRole::output},
             {"removed", PathRole::output, false}};
  k.params = {{"trim_z", ParamType::number}, {"trim_dims", ParamType::string_list, false, json::array()}};
  k.validate = [](const json& p) {
    require(!p.contains("removed") || !p["trim_z"].is_null(), ErrorCode::invalid_argument, "removed needs trim_z");
  };
  k.run = [](StageContext& ctx) {
    const auto catalog = read_catalog(ctx.path("catalog"));
    const fs::path dir = ctx.path("images");
    const std::size_t n = catalog.size();
    std::vector<IndicatorVector> out(n);
    std::vector<std::string> errors(n), notes(n);
    parallel_for(
        n,
        [&](std::size_t i) {
          const auto& rec = catalog[i];
          try {
            const fs::path p = dir / rec.uri;
            const auto bytes = read_bytes(p);
            const auto img = decode(bytes, p.string());
            if (rec.byte_size != 0 && rec.byte_size != bytes.size())
              notes[i] = rec.id + ": catalog byte_size " + std::to_string(rec.byte_size) + " differs from file size " +
                         std::to_string(bytes.size());
            if (rec.width != 0 && (rec.width != static_cast<unsigned>(img.cols) ||
                                   rec.height != static_cast<unsigned>(img.rows)))
              notes[i] += (notes[i].empty() ? rec.id + ": " : "; ") + std::string("catalog dimensions differ from decoded");
            out[i] = compute_indicators(rec.id, to_raster(img), bytes.size(), estimate_jpeg_quality(bytes));
          } catch (const std::exception& e) {
            errors[i] = e.what();
          }
        },
        1);
    for (std::size_t i = 0; i < n; ++i) {
      if (!errors[i].empty()) fail(ErrorCode::corrupt_file, catalog[i].id + ": " + errors[i]);
      if (!notes[i].empty()) ctx.warn(notes[i]);
    }
    json summary = {{"images", n}};
    std::size_t jpeg = 0;
    for (const auto& v : out) jpeg += v.jpeg_quality ? 1 : 0;
    summary["with_jpeg_quality"] = jpeg;
    if (ctx.has("trim_z")) {
      const auto res = trim_by_zscore(out, ctx.get<double>("trim_z"), detail::indicator_list(ctx, "trim_dims"));
      for (const auto& w : res.stats.warnings) ctx.warn(w);
      summary["kept"] = res.kept.size();
      summary["removed"] = res.removed_ids.size();
      if (ctx.has_path("removed")) write_json(ctx.path("removed"), res.removed_ids);
      out = res.kept;
    }
    write_indicators(ctx.path("out"), out);
    return summary;
  };
  return k;
}

// ---------------------------------------------------------------------------

inline std::pair<std::size_t, std::size_t> parse_size(const std::string& s) {
  const auto x = s.find('x');
  std::size_t w = 0, h = 0;
  try {
    require(x != std::string::npos, ErrorCode::invalid_argument, "");
    std::size_t u1 = 0, u2 = 0;
    w = std::stoul(s.substr(0, x), &u1);
    h = std::stoul(s.substr(x + 1), &u2);
    require(u1 == x && u2 == s.size() - x - 1 && w > 0 && h > 0, ErrorCode::invalid_argument, "");
  } catch (const std::exception&) {
    fail(ErrorCode::invalid_argument, "size must look like 1024x768, got '" + s + "'");
  }
  return {w, h};
}

inline bool is_image_file(const fs::path& p) {
  static const std::set<std::string> ext = {".jpg", ".jpeg", ".png", ".bmp", ".tif", ".tiff", ".webp"};
  auto e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext.count(e) > 0;
}

inline constexpr std::size_t kSaliencyMaxSide = 256;

struct CropOutcome {
  CropWindow window;   // in resized coordinates
  double scale = 1.0;  // resized / original
  cv::Mat cropped;
};

// Resize so the crop covers the short side, score windows on the importance
// map and cut the best one. Saliency is computed on a copy whose long side is
// at most kSaliencyMaxSide and upsampled.
inline CropOutcome crop_image(const cv::Mat& bgr, std::span<const FaceBox> faces_in, std::size_t w, std::size_t h,
                              std::size_t border, ImportanceWeights weights) {
  const double s = std::max(static_cast<double>(w) / bgr.cols, static_cast<double>(h) / bgr.rows);
  const int W = std::max(static_cast<int>(w), static_cast<int>(std::lround(bgr.cols * s)));
  const int H = std::max(static_cast<int>(h), static_cast<int>(std::lround(bgr.rows * s)));
  cv::Mat resized;
  cv::resize(bgr, resized, cv::Size(W, H), 0, 0, s < 1.0 ? cv::INTER_AREA : cv::INTER_CUBIC);

  const double ss = std::min(1.0, static_cast<double>(kSaliencyMaxSide) / std::max(W, H));
  cv::Mat small;
  cv::resize(resized, small, cv::Size(std::max(1, static_cast<int>(std::lround(W * ss))),
                                      std::max(1, static_cast<int>(std::lround(H * ss)))),
             0, 0, cv::INTER_AREA);
  const auto sal_small = saliency_map(luma(to_raster(small)));
  cv::Mat sal;
  cv::resize(to_mat(sal_small), sal, cv::Size(W, H), 0, 0, cv::INTER_LINEAR);

  std::vector<FaceBox> faces;
  for (const auto& f : faces_in) {
    const auto x0 = std::min<long>(W, std::lround(f.x * s)), y0 = std::min<long>(H, std::lround(f.y * s));
    const auto x1 = std::min<long>(W, std::lround((f.x + f.w) * s)), y1 = std::min<long>(H, std::lround((f.y + f.h) * s));
    if (x1 > x0 && y1 > y0)
      faces.push_back({static_cast<std::size_t>(x0), static_cast<std::size_t>(y0), static_cast<std::size_t>(x1 - x0),
                       static_cast<std::size_t>(y1 - y0)});
  }
  const auto imp = build_importance(to_grid(sal), faces, weights);
  CropOutcome r;
  r.scale = s;
  r.window = best_crop(imp.grid, w, h, border);
  r.cropped = resized(cv::Rect(static_cast<int>(r.window.x), static_cast<int>(r.window.y), static_cast<int>(w),
                               static_cast<int>(h)))
                  .clone();
  return r;
}

inline StageKind crop_kind() {
  StageKind k;
  k.help = "Rescale and crop images to a fixed size around their most important region";
  k.paths = {{"images", PathRole::input, true, true},
             {"faces", PathRole::input, false},
             {"out", PathRole::output, true, true},
             {"windows", PathRole::output, false}};
  const ImportanceWeights dw;
  k.params = {{"size", ParamType::string, false, "1024x768"},
              {"border", ParamType::integer, false, static_cast<long long>(kDefaultCropBorder)},
              {"w_saliency", ParamType::number, false, dw.saliency},
              {"w_face", ParamType::number, false, dw.face},
              {"w_center", ParamType::number, false, dw.center}};
  k.validate = [](const json& p) { parse_size(p["size"].get<std::string>()); };
  k.run = [](StageContext& ctx) {
    const auto [w, h] = parse_size(ctx.get<std::string>("size"));
    const auto border = detail::count_param(ctx, "border");
    const ImportanceWeights weights{ctx.get<double>("w_saliency"), ctx.get<double>("w_face"), ctx.get<double>("w_center")};
    std::map<std::string, std::vector<FaceBox>> faces;
    if (ctx.has_path("faces")) faces = read_faces(ctx.path("faces"));
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(ctx.path("images")))
      if (e.is_regular_file() && is_image_file(e.path())) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    const fs::path out_dir = ctx.path("out");

    const std::size_t n = files.size();
    std::vector<std::string> errors(n), skipped(n);
    std::vector<json> rows(n);
    parallel_for(
        n,
        [&](std::size_t i) {
          const auto id = files[i].stem().string();
          try {
            const auto img = decode(read_bytes(files[i]), files[i].string());
            if (static_cast<std::size_t>(img.cols) < w || static_cast<std::size_t>(img.rows) < h) {
              skipped[i] = id;
              return;
            }
            const auto it = faces.find(id);
            const std::span<const FaceBox> fb = it == faces.end() ? std::span<const FaceBox>() : it->second;
            const auto r = crop_image(img, fb, w, h, border, weights);
            const auto dst = out_dir / (id + ".png");
            require(cv::imwrite(dst.string(), r.cropped), ErrorCode::io, "cannot write " + dst.string());
            rows[i] = {{"image_id", id}, {"scale", r.scale}, {"window", to_json(r.window)}};
          } catch (const std::exception& e) {
            errors[i] = id + ": " + e.what();
          }
        },
        1);
    std::size_t cropped = 0, small = 0;
    std::string lines;
    for (std::size_t i = 0; i < n; ++i) {
      if (!errors[i].empty()) fail(ErrorCode::corrupt_file, errors[i]);
      if (!skipped[i].empty()) {
        ++small;
        ctx.warn(skipped[i] + " is smaller than " + std::to_string(w) + "x" + std::to_string(h) + "; skipped");
        continue;
      }
      ++cropped;
      lines += rows[i].dump() + "\n";
    }
    if (ctx.has_path("windows")) {
      std::ofstream out(ctx.path("windows"), std::ios::binary);
      require(static_cast<bool>(out), ErrorCode::io, "cannot write " + ctx.path("windows"));
      out << lines;
    }
    return json{{"images", n}, {"cropped", cropped}, {"too_small", small}};
  };
  return k;
}

// ---------------------------------------------------------------------------
// Plots

struct Series {
  std::vector<double> x, y, lo, hi;
};

inline std::string tick_label(double v) {
  std::ostringstream ss;
  ss.precision(3);
  ss << v;
  return ss.str();
}

// Line plot with an optional band, scatter points and horizontal reference.
inline cv::Mat render_plot(const Series& line, const Series& dots, const std::string& title, const std::string& xlabel,
                           const std::string& ylabel, std::optional<double> hline = std::nullopt) {
  const int width = 800, height = 560, left = 80, right = 30, top = 50, bottom = 70;
  cv::Mat img(height, width, CV_8UC3, cv::Scalar(255, 255, 255));
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  auto extend = [&](const std::vector<double>& xs, const std::vector<double>& ys) {
    for (std::size_t i = 0; i < xs.size() && i < ys.size(); ++i) {
      if (!std::isfinite(xs[i]) || !std::isfinite(ys[i])) continue;
      x0 = std::min(x0, xs[i]);
      x1 = std::max(x1, xs[i]);
      y0 = std::min(y0, ys[i]);
      y1 = std::max(y1, ys[i]);
    }
  };
  extend(line.x, line.y);
  extend(line.x, line.lo);
  extend(line.x, line.hi);
  extend(dots.x, dots.y);
  if (hline && std::isfinite(x0)) extend({x0}, {*hline});
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 <= x0) x1 = x0 + 1;
  if (y1 <= y0) y1 = y0 + 1;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;
  auto px = [&](double x, double y) {
    return cv::Point(left + static_cast<int>(std::lround((x - x0) / (x1 - x0) * (width - left - right))),
                     height - bottom - static_cast<int>(std::lround((y - y0) / (y1 - y0) * (height - top - bottom))));
  };
  const cv::Scalar black(0, 0, 0), grey(200, 200, 200), blue(180, 90, 20), red(40, 40, 200);
  for (int t = 0; t <= 5; ++t) {
    const double xv = x0 + (x1 - x0) * t / 5.0, yv = y0 + (y1 - y0) * t / 5.0;
    cv::line(img, px(xv, y0), px(xv, y1), grey, 1);
    cv::line(img, px(x0, yv), px(x1, yv), grey, 1);
    cv::putText(img, tick_label(xv), px(xv, y0) + cv::Point(-15, 22), cv::FONT_HERSHEY_SIMPLEX, 0.45, black, 1,
                cv::LINE_AA);
    cv::putText(img, tick_label(yv), px(x0, yv) + cv::Point(-70, 5), cv::FONT_HERSHEY_SIMPLEX, 0.45, black, 1,
                cv::LINE_AA);
  }
  cv::rectangle(img, px(x0, y1), px(x1, y0), black, 1);
  if (!line.lo.empty() && line.lo.size() == line.x.size()) {
    std::vector<cv::Point> poly;
    for (std::size_t i = 0; i < line.x.size(); ++i) poly.push_back(px(line.x[i], line.hi[i]));
    for (std::size_t i = line.x.size(); i-- > 0;) poly.push_back(px(line.x[i], line.lo[i]));
    cv::Mat overlay = img.clone();
    cv::fillPoly(overlay, std::vector<std::vector<cv::Point>>{poly}, cv::Scalar(225, 200, 170));
    cv::addWeighted(overlay, 0.6, img, 0.4, 0, img);
  }
  for (std::size_t i = 1; i < line.x.size(); ++i)
    cv::line(img, px(line.x[i - 1], line.y[i - 1]), px(line.x[i], line.y[i]), blue, 2, cv::LINE_AA);
  if (hline) {
    for (double x = x0; x < x1; x += (x1 - x0) / 60.0)
      cv::line(img, px(x, *hline), px(std::min(x1, x + (x1 - x0) / 120.0), *hline), red, 2, cv::LINE_AA);
  }
  for (std::size_t i = 0; i < dots.x.size(); ++i) cv::circle(img, px(dots.x[i], dots.y[i]), 4, red, -1, cv::LINE_AA);
  cv::putText(img, title, cv::Point(left, 32), cv::FONT_HERSHEY_SIMPLEX, 0.7, black, 1, cv::LINE_AA);
  cv::putText(img, xlabel, cv::Point(width / 2 - 60, height - 20), cv::FONT_HERSHEY_SIMPLEX, 0.55, black, 1,
              cv::LINE_AA);
  cv::putText(img, ylabel, cv::Point(8, top - 10), cv::FONT_HERSHEY_SIMPLEX, 0.55, black, 1, cv::LINE_AA);
  return img;
}

inline void render_result(const json& r, const std::string& path) {
  Series line, dots;
  std::string title, xlabel, ylabel;
  std::optional<double> hline;
  const auto mode = r.at("mode").get<std::string>();
  if (mode == "agreement" || mode == "nmax") {
    for (const auto& p : r.at("curve")) {
      const double m = p.at("mean_srocc"), h = p.at("ci_half_width");
      line.x.push_back(p.at("votes_per_image"));
      line.y.push_back(m);
      line.lo.push_back(m - h);
      line.hi.push_back(m + h);
    }
    title = mode == "agreement" ? "Agreement between disjoint worker groups" : "Worker groups vs ground-truth half";
    xlabel = "votes per image";
    ylabel = "SROCC";
    if (mode == "nmax") hline = r.at("model_srocc").get<double>();
  } else if (mode == "rmse") {
    for (const auto& p : r.at("curve")) {
      line.x.push_back(p.at("size"));
      line.y.push_back(p.at("mean_rmse"));
      line.lo.push_back(p.at("ci_low"));
      line.hi.push_back(p.at("ci_high"));
    }
    title = "Bootstrapped RMSE against reference";
    xlabel = "ratings per image";
    ylabel = "RMSE";
  } else if (mode == "fit") {
    const double a = r.at("a"), b = r.at("b");
    double xmax = 1.0;
    for (const auto& p : r.at("points")) {
      dots.x.push_back(p.at("x"));
      dots.y.push_back(p.at("y"));
      xmax = std::max(xmax, dots.x.back());
    }
    for (const auto& p : r.at("predictions")) xmax = std::max(xmax, p.at("x").get<double>());
    for (int i = 0; i <= 200; ++i) {
      const double x = 1.0 + (xmax - 1.0) * i / 200.0;
      line.x.push_back(x);
      line.y.push_back(extrapolation_curve(x, a, b));
    }
    title = "Extrapolation fit";
    xlabel = "x";
    ylabel = "y";
  } else {
    fail(ErrorCode::invalid_argument, "no plot for mode " + mode);
  }
  const auto img = render_plot(line, dots, title, xlabel, ylabel, hline);
  require(cv::imwrite(path, img), ErrorCode::io, "cannot write plot " + path);
}

// Core stages plus the image stages, with plotting enabled.
inline StageRegistry all_stages() {
  auto reg = core_stages(render_result);
  reg.emplace("indicators", indicators_kind());
  reg.emplace("crop", crop_kind());
  return reg;
}

}  // namespace curation_forge::cv_stages

#pragma once

// Files exchanged between stages beyond the three catalog formats:
//   indicators   JSON lines, one IndicatorVector per line
//   faces        JSON lines, {"image_id", "boxes": [[x, y, w, h], ...]}
//   score tables CSV with header image_id,score (model scores, references)
//   fit points   CSV with header x,y
//   histograms   CSV, one distribution per line, no header
// plus JSON documents for plans and reports.

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "curation_forge/analysis.hpp"
#include "curation_forge/catalog.hpp"
#include "curation_forge/cropper.hpp"
#include "curation_forge/diversity.hpp"
#include "curation_forge/error.hpp"
#include "curation_forge/indicators.hpp"
#include "curation_forge/ratings.hpp"
#include "curation_forge/tag_sampler.hpp"
#include "json.hpp"

namespace curation_forge {

namespace detail {

inline std::ifstream open_in(const std::string& path, const char* what) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::io, std::string("cannot open ") + what + " " + path);
  return in;
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::io, "cannot write " + path);
  return out;
}

inline void close_out(std::ofstream& out, const std::string& path) {
  out.close();
  require(!out.fail(), ErrorCode::io, "write failed for " + path);
}

inline bool blank(const std::string& line) { return line.find_first_not_of(" \t\r") == std::string::npos; }

inline double parse_real(const std::string& s, std::size_t line_no, const char* what) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw ParseError(line_no, std::string("bad ") + what + " '" + s + "'");
  }
  if (used != s.size() || !std::isfinite(v)) throw ParseError(line_no, std::string("bad ") + what + " '" + s + "'");
  return v;
}

inline std::string strip_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Indicators

inline nlohmann::json to_json(const IndicatorVector& v) {
  nlohmann::json j = {{"image_id", v.image_id},        {"brightness", v.brightness}, {"colorfulness", v.colorfulness},
                      {"rms_contrast", v.rms_contrast}, {"sharpness", v.sharpness},   {"bitrate", v.bitrate},
                      {"resolution", v.resolution}};
  j["jpeg_quality"] = v.jpeg_quality ? nlohmann::json(*v.jpeg_quality) : nlohmann::json(nullptr);
  j["content_cluster"] = v.content_cluster ? nlohmann::json(*v.content_cluster) : nlohmann::json(nullptr);
  return j;
}

inline IndicatorVector indicator_from_json(const nlohmann::json& j, std::size_t line_no) {
  IndicatorVector v;
  try {
    v.image_id = j.at("image_id").get<std::string>();
    v.brightness = j.at("brightness").get<double>();
    v.colorfulness = j.at("colorfulness").get<double>();
    v.rms_contrast = j.at("rms_contrast").get<double>();
    v.sharpness = j.at("sharpness").get<double>();
    v.bitrate = j.at("bitrate").get<double>();
    v.resolution = j.at("resolution").get<double>();
    if (j.contains("jpeg_quality") && !j["jpeg_quality"].is_null()) v.jpeg_quality = j["jpeg_quality"].get<int>();
    if (j.contains("content_cluster") && !j["content_cluster"].is_null())
      v.content_cluster = j["content_cluster"].get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(line_no, std::string("bad indicator record: ") + e.what());
  }
  if (v.image_id.empty()) throw ParseError(line_no, "empty image_id");
  return v;
}

inline std::vector<IndicatorVector> read_indicators(std::istream& in) {
  std::vector<IndicatorVector> out;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::blank(line)) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(line_no, std::string("invalid JSON: ") + e.what());
    }
    auto v = indicator_from_json(j, line_no);
    if (!seen.insert(v.image_id).second)
      fail(ErrorCode::duplicate_id, "duplicate image id '" + v.image_id + "' at line " + std::to_string(line_no));
    out.push_back(std::move(v));
  }
  return out;
}

inline std::vector<IndicatorVector> read_indicators(const std::string& path) {
  auto in = detail::open_in(path, "indicator file");
  return read_indicators(in);
}

inline void write_indicators(const std::string& path, std::span<const IndicatorVector> vectors) {
  auto out = detail::open_out(path);
  for (const auto& v : vectors) out << to_json(v).dump() << '\n';
  detail::close_out(out, path);
}

// ---------------------------------------------------------------------------
// Face boxes

inline std::map<std::string, std::vector<FaceBox>> read_faces(const std::string& path) {
  auto in = detail::open_in(path, "face file");
  std::map<std::string, std::vector<FaceBox>> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::blank(line)) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      auto& boxes = out[j.at("image_id").get<std::string>()];
      for (const auto& b : j.at("boxes")) {
        const auto v = b.get<std::vector<std::size_t>>();
        if (v.size() != 4) throw ParseError(line_no, "a face box needs 4 numbers");
        boxes.push_back({v[0], v[1], v[2], v[3]});
      }
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(line_no, std::string("bad face record: ") + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Small CSV tables

inline std::map<std::string, double> read_score_table(const std::string& path) {
  auto in = detail::open_in(path, "score table");
  std::map<std::string, double> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = detail::strip_cr(line);
    if (line_no == 1) {
      if (line != "image_id,score") throw ParseError(1, "expected header 'image_id,score'");
      continue;
    }
    if (detail::blank(line)) continue;
    const auto f = detail::split_csv(line, line_no);
    if (f.size() != 2) throw ParseError(line_no, "expected 2 fields");
    if (!out.emplace(f[0], detail::parse_real(f[1], line_no, "score")).second)
      fail(ErrorCode::duplicate_id, "duplicate image id '" + f[0] + "' at line " + std::to_string(line_no));
  }
  return out;
}

inline void write_score_table(const std::string& path, const std::map<std::string, double>& scores) {
  auto out = detail::open_out(path);
  out << "image_id,score\n";
  for (const auto& [id, s] : scores) out << detail::csv_field(id) << ',' << nlohmann::json(s).dump() << '\n';
  detail::close_out(out, path);
}

inline std::vector<FitPoint> read_fit_points(const std::string& path) {
  auto in = detail::open_in(path, "fit point table");
  std::vector<FitPoint> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = detail::strip_cr(line);
    if (line_no == 1) {
      if (line != "x,y") throw ParseError(1, "expected header 'x,y'");
      continue;
    }
    if (detail::blank(line)) continue;
    const auto f = detail::split_csv(line, line_no);
    if (f.size() != 2) throw ParseError(line_no, "expected 2 fields");
    out.push_back({detail::parse_real(f[0], line_no, "x"), detail::parse_real(f[1], line_no, "y")});
  }
  return out;
}

inline std::vector<std::vector<double>> read_distributions(const std::string& path) {
  auto in = detail::open_in(path, "distribution table");
  std::vector<std::vector<double>> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = detail::strip_cr(line);
    if (detail::blank(line)) continue;
    std::vector<double> row;
    for (const auto& f : detail::split_csv(line, line_no)) row.push_back(detail::parse_real(f, line_no, "value"));
    out.push_back(std::move(row));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Rating outputs

inline void write_worker_stats(const std::string& path, std::span<const WorkerStats> workers) {
  auto out = detail::open_out(path);
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v).dump() : std::string(); };
  out << "worker_id,verdict,quiz_total,quiz_correct,quiz_accuracy,hidden_total,hidden_correct,hidden_accuracy,"
         "plcc_vs_prelim,plcc_pairs,c1,c2,c3,c4,c5,lineclick_ratio,note\n";
  for (const auto& w : workers) {
    out << detail::csv_field(w.worker_id) << ',' << to_string(w.verdict) << ',' << w.quiz_total << ','
        << w.quiz_correct << ',' << opt(w.quiz_accuracy) << ',' << w.hidden_total << ',' << w.hidden_correct << ','
        << opt(w.hidden_accuracy) << ',' << opt(w.plcc_vs_prelim) << ',' << w.plcc_pairs;
    for (auto c : w.counts) out << ',' << c;
    const std::string ratio = std::isinf(w.lineclick_ratio) ? "inf" : nlohmann::json(w.lineclick_ratio).dump();
    out << ',' << ratio << ',' << detail::csv_field(w.note) << '\n';
  }
  detail::close_out(out, path);
}

inline void write_mos(const std::string& path, std::span<const MosRecord> records,
                      const std::optional<LinearFit>& alignment = std::nullopt) {
  auto out = detail::open_out(path);
  out << "image_id,mos,vote_count,sd,c1,c2,c3,c4,c5";
  if (alignment) out << ",mos_aligned";
  out << '\n';
  for (const auto& r : records) {
    out << detail::csv_field(r.image_id) << ',' << (r.mos ? nlohmann::json(*r.mos).dump() : "") << ','
        << r.vote_count << ',' << nlohmann::json(r.sd).dump();
    for (auto c : r.distribution) out << ',' << c;
    if (alignment)
      out << ',' << (r.mos ? nlohmann::json(alignment->slope * *r.mos + alignment->intercept).dump() : "");
    out << '\n';
  }
  detail::close_out(out, path);
}

// ---------------------------------------------------------------------------
// JSON documents

inline nlohmann::json to_json(const SamplingPlan& plan) {
  nlohmann::json dims = nlohmann::json::array();
  for (std::size_t d = 0; d < plan.dim_names.size(); ++d)
    dims.push_back({{"name", plan.dim_names[d]},
                    {"bins", plan.histograms[d].size()},
                    {"histogram", plan.histograms[d]}});
  return {{"mode", plan.mode == SamplingMode::exact ? "exact" : "local_search"},
          {"target", plan.target},
          {"objective", plan.objective},
          {"restarts", plan.restarts},
          {"selected_ids", plan.selected_ids},
          {"dimensions", dims},
          {"trace", plan.trace}};
}

inline nlohmann::json to_json(const DedupResult& r) {
  return {{"removed_ids", r.removed_ids}, {"pair_distances", r.pair_distances}};
}

inline nlohmann::json to_json(const TagPlan& p) {
  return {{"quota", p.quota},
          {"target_size", p.target_size},
          {"reached_target", p.reached_target},
          {"untagged_images", p.untagged_images},
          {"selected_ids", p.selected_ids},
          {"source_counts", p.source_counts},
          {"selected_counts", p.selected_counts}};
}

inline nlohmann::json to_json(const CropWindow& w) {
  return {{"x", w.x}, {"y", w.y}, {"w", w.w}, {"h", w.h}, {"score", w.score}};
}

inline void write_json(const std::string& path, const nlohmann::json& j) {
  auto out = detail::open_out(path);
  out << j.dump(2) << '\n';
  detail::close_out(out, path);
}

}  // namespace curation_forge

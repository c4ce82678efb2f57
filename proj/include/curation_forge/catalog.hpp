#pragma once

// Data model shared by every stage, plus the three on-disk formats:
//   catalog   JSON lines, one ImageRecord per line
//   features  binary, "CFFV" header then (id, dim x float32) records
//   ratings   CSV, worker_id,image_id,score,is_test,allowed_answers,timestamp

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <openssl/evp.h>

#include "curation_forge/error.hpp"
#include "json.hpp"

namespace curation_forge {

struct TagScore {
  std::string tag;
  double confidence = 0.0;  // machine confidence in [0,1]

  bool operator==(const TagScore&) const = default;
};

struct ImageRecord {
  std::string id;
  std::string uri;
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::uint64_t byte_size = 0;
  std::vector<TagScore> tags;
  std::optional<std::vector<std::uint8_t>> exif;

  bool operator==(const ImageRecord&) const = default;
};

struct FeatureVector {
  std::string image_id;
  std::vector<float> values;

  std::size_t dim() const noexcept { return values.size(); }
  bool operator==(const FeatureVector&) const = default;
};

// Subset of the ACR scale {1..5}, stored as a bit mask.
class AnswerSet {
 public:
  AnswerSet() = default;
  AnswerSet(std::initializer_list<int> scores) {
    for (int s : scores) insert(s);
  }

  void insert(int score) {
    require(score >= 1 && score <= 5, ErrorCode::invalid_argument,
            "answer outside 1..5: " + std::to_string(score));
    mask_ = static_cast<std::uint8_t>(mask_ | (1u << (score - 1)));
  }
  bool contains(int score) const noexcept {
    return score >= 1 && score <= 5 && (mask_ >> (score - 1)) & 1u;
  }
  int size() const noexcept { return std::popcount(mask_); }
  bool empty() const noexcept { return mask_ == 0; }

  std::vector<int> values() const {
    std::vector<int> out;
    for (int s = 1; s <= 5; ++s)
      if (contains(s)) out.push_back(s);
    return out;
  }

  // "2|3|4"
  std::string to_string() const {
    std::string out;
    for (int s : values()) {
      if (!out.empty()) out += '|';
      out += static_cast<char>('0' + s);
    }
    return out;
  }

  static AnswerSet parse(std::string_view text) {
    AnswerSet set;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      const auto bar = text.find('|', pos);
      const auto item = text.substr(pos, bar == std::string_view::npos
                                             ? std::string_view::npos
                                             : bar - pos);
      require(item.size() == 1 && item[0] >= '1' && item[0] <= '5',
              ErrorCode::parse, "bad allowed answer '" + std::string(item) + "'");
      set.insert(item[0] - '0');
      if (bar == std::string_view::npos) break;
      pos = bar + 1;
    }
    return set;
  }

  bool operator==(const AnswerSet&) const = default;

 private:
  std::uint8_t mask_ = 0;
};

struct RatingEvent {
  std::string worker_id;
  std::string image_id;
  int score = 0;  // ACR 1..5
  bool is_test = false;
  std::optional<AnswerSet> allowed_answers;
  std::optional<std::int64_t> timestamp;

  bool operator==(const RatingEvent&) const = default;
};

namespace detail {

inline std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                bytes.data(), static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

inline std::optional<std::vector<std::uint8_t>> base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) return std::nullopt;
  std::vector<std::uint8_t> out(3 * text.size() / 4);
  const int n = EVP_DecodeBlock(out.data(),
                                reinterpret_cast<const unsigned char*>(text.data()),
                                static_cast<int>(text.size()));
  if (n < 0) return std::nullopt;
  // EVP_DecodeBlock keeps the bytes produced by '=' padding.
  std::size_t pad = 0;
  if (!text.empty() && text.back() == '=') ++pad;
  if (text.size() > 1 && text[text.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Catalog (JSON lines)

inline nlohmann::json to_json(const ImageRecord& rec) {
  nlohmann::json tags = nlohmann::json::array();
  for (const auto& t : rec.tags)
    tags.push_back({{"tag", t.tag}, {"confidence", t.confidence}});
  nlohmann::json j = {{"id", rec.id},
                      {"uri", rec.uri},
                      {"width", rec.width},
                      {"height", rec.height},
                      {"byte_size", rec.byte_size},
                      {"tags", std::move(tags)}};
  if (rec.exif) j["exif"] = detail::base64_encode(*rec.exif);
  return j;
}

inline ImageRecord parse_catalog_line(std::string_view line, std::size_t line_no) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(line_no, std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ParseError(line_no, "record is not an object");

  ImageRecord rec;
  try {
    rec.id = j.at("id").get<std::string>();
    rec.uri = j.value("uri", std::string{});
    rec.width = j.at("width").get<std::uint32_t>();
    rec.height = j.at("height").get<std::uint32_t>();
    rec.byte_size = j.value("byte_size", std::uint64_t{0});
    if (j.contains("tags")) {
      for (const auto& t : j.at("tags")) {
        rec.tags.push_back({t.at("tag").get<std::string>(),
                            t.at("confidence").get<double>()});
      }
    }
    if (j.contains("exif") && !j["exif"].is_null()) {
      auto blob = detail::base64_decode(j["exif"].get<std::string>());
      if (!blob) throw ParseError(line_no, "exif is not valid base64");
      rec.exif = std::move(*blob);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(line_no, std::string("bad field: ") + e.what());
  }

  if (rec.id.empty()) throw ParseError(line_no, "empty id");
  if (rec.width < 1 || rec.height < 1)
    throw ParseError(line_no, "width and height must be >= 1");
  for (const auto& t : rec.tags) {
    if (!(t.confidence >= 0.0 && t.confidence <= 1.0))
      throw ParseError(line_no, "tag confidence outside [0,1] for '" + t.tag + "'");
  }
  return rec;
}

inline std::vector<ImageRecord> read_catalog(std::istream& in) {
  std::vector<ImageRecord> out;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto rec = parse_catalog_line(line, line_no);
    if (!seen.insert(rec.id).second)
      fail(ErrorCode::duplicate_id, "duplicate image id '" + rec.id + "' at line " +
                                        std::to_string(line_no));
    out.push_back(std::move(rec));
  }
  return out;
}

inline std::vector<ImageRecord> read_catalog(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::io, "cannot open catalog " + path);
  return read_catalog(in);
}

inline void write_catalog(std::ostream& out, const std::vector<ImageRecord>& records) {
  for (const auto& rec : records) out << to_json(rec).dump() << '\n';
}

inline void write_catalog(const std::string& path, const std::vector<ImageRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::io, "cannot write " + path);
  write_catalog(out, records);
}

// ---------------------------------------------------------------------------
// Feature file (binary, little-endian)
//
//   offset 0   char[4]  "CFFV"
//          4   u32      version (1)
//          8   u32      dim
//         12   u64      count
//   then count records: u32 id length, id bytes (UTF-8), dim x float32

inline constexpr std::array<char, 4> kFeatureMagic = {'C', 'F', 'F', 'V'};
inline constexpr std::uint32_t kFeatureVersion = 1;

namespace detail {

template <typename T>
void put_le(std::ostream& out, T value) {
  using U = std::make_unsigned_t<T>;
  auto u = static_cast<U>(value);
  char buf[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<char>((u >> (8 * i)) & 0xFF);
  out.write(buf, sizeof(T));
}

template <typename T>
T get_le(std::istream& in, const char* what) {
  unsigned char buf[sizeof(T)];
  in.read(reinterpret_cast<char*>(buf), sizeof(T));
  if (in.gcount() != static_cast<std::streamsize>(sizeof(T)))
    fail(ErrorCode::truncated, std::string("feature file truncated while reading ") + what);
  std::make_unsigned_t<T> u = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i)
    u |= static_cast<std::make_unsigned_t<T>>(buf[i]) << (8 * i);
  return static_cast<T>(u);
}

}  // namespace detail

inline void write_features(std::ostream& out, const std::vector<FeatureVector>& vectors) {
  const std::size_t dim = vectors.empty() ? 0 : vectors.front().dim();
  require(vectors.empty() || dim > 0, ErrorCode::invalid_argument, "feature dim must be positive");
  for (const auto& v : vectors) {
    require(v.dim() == dim, ErrorCode::mixed_dimension,
            "feature '" + v.image_id + "' has dim " + std::to_string(v.dim()) +
                ", expected " + std::to_string(dim));
    for (float x : v.values)
      require(std::isfinite(x), ErrorCode::invalid_argument,
              "non-finite feature value for '" + v.image_id + "'");
  }
  out.write(kFeatureMagic.data(), kFeatureMagic.size());
  detail::put_le<std::uint32_t>(out, kFeatureVersion);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(dim));
  detail::put_le<std::uint64_t>(out, vectors.size());
  for (const auto& v : vectors) {
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(v.image_id.size()));
    out.write(v.image_id.data(), static_cast<std::streamsize>(v.image_id.size()));
    for (float x : v.values) detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(x));
  }
}

inline void write_features(const std::string& path, const std::vector<FeatureVector>& vectors) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::io, "cannot write " + path);
  write_features(out, vectors);
  require(static_cast<bool>(out), ErrorCode::io, "write failed for " + path);
}

inline std::vector<FeatureVector> read_features(std::istream& in) {
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (in.gcount() != static_cast<std::streamsize>(magic.size()))
    fail(ErrorCode::truncated, "feature file truncated in header");
  require(magic == kFeatureMagic, ErrorCode::corrupt_file, "bad feature file magic");
  const auto version = detail::get_le<std::uint32_t>(in, "version");
  require(version == kFeatureVersion, ErrorCode::corrupt_file,
          "unsupported feature file version " + std::to_string(version));
  const auto dim = detail::get_le<std::uint32_t>(in, "dim");
  const auto count = detail::get_le<std::uint64_t>(in, "count");
  require(count == 0 || dim > 0, ErrorCode::corrupt_file, "zero dim with nonzero count");

  std::vector<FeatureVector> out;
  for (std::uint64_t i = 0; i < count; ++i) {
    FeatureVector v;
    const auto id_len = detail::get_le<std::uint32_t>(in, "id length");
    v.image_id.resize(id_len);
    in.read(v.image_id.data(), id_len);
    if (in.gcount() != static_cast<std::streamsize>(id_len))
      fail(ErrorCode::truncated, "feature file truncated in id of record " + std::to_string(i));
    v.values.resize(dim);
    for (auto& x : v.values) x = std::bit_cast<float>(detail::get_le<std::uint32_t>(in, "values"));
    out.push_back(std::move(v));
  }
  return out;
}

inline std::vector<FeatureVector> read_features(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::io, "cannot open feature file " + path);
  return read_features(in);
}

// ---------------------------------------------------------------------------
// Ratings (CSV)

inline constexpr std::string_view kRatingsHeader =
    "worker_id,image_id,score,is_test,allowed_answers,timestamp";

namespace detail {

// Splits one CSV record; supports double-quoted fields with "" escapes.
inline std::vector<std::string> split_csv(std::string_view line, std::size_t line_no) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  if (quoted) throw ParseError(line_no, "unterminated quoted field");
  fields.push_back(std::move(cur));
  return fields;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

inline long long parse_int(const std::string& s, std::size_t line_no, const char* what) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError(line_no, std::string("bad ") + what + " '" + s + "'");
  }
}

}  // namespace detail

inline std::vector<RatingEvent> read_ratings(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) return {};
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kRatingsHeader) throw ParseError(1, "unexpected ratings header '" + line + "'");

  std::vector<RatingEvent> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto f = detail::split_csv(line, line_no);
    if (f.size() != 6)
      throw ParseError(line_no, "expected 6 fields, got " + std::to_string(f.size()));
    RatingEvent ev;
    ev.worker_id = f[0];
    ev.image_id = f[1];
    if (ev.worker_id.empty() || ev.image_id.empty()) throw ParseError(line_no, "empty id");
    const auto score = detail::parse_int(f[2], line_no, "score");
    if (score < 1 || score > 5) throw ParseError(line_no, "score outside 1..5");
    ev.score = static_cast<int>(score);
    if (f[3] == "1" || f[3] == "true") {
      ev.is_test = true;
    } else if (f[3] == "0" || f[3] == "false") {
      ev.is_test = false;
    } else {
      throw ParseError(line_no, "bad is_test '" + f[3] + "'");
    }
    if (!f[4].empty()) {
      try {
        ev.allowed_answers = AnswerSet::parse(f[4]);
      } catch (const Error& e) {
        throw ParseError(line_no, e.what());
      }
      if (ev.allowed_answers->size() > 3)
        throw ParseError(line_no, "more than 3 allowed answers");
    }
    if (!f[5].empty()) ev.timestamp = detail::parse_int(f[5], line_no, "timestamp");
    out.push_back(std::move(ev));
  }
  return out;
}

inline std::vector<RatingEvent> read_ratings(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::io, "cannot open ratings " + path);
  return read_ratings(in);
}

inline void write_ratings(std::ostream& out, const std::vector<RatingEvent>& events) {
  out << kRatingsHeader << '\n';
  for (const auto& ev : events) {
    out << detail::csv_field(ev.worker_id) << ',' << detail::csv_field(ev.image_id) << ','
        << ev.score << ',' << (ev.is_test ? 1 : 0) << ','
        << (ev.allowed_answers ? ev.allowed_answers->to_string() : std::string{}) << ',';
    if (ev.timestamp) out << *ev.timestamp;
    out << '\n';
  }
}

inline void write_ratings(const std::string& path, const std::vector<RatingEvent>& events) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::io, "cannot write " + path);
  write_ratings(out, events);
}

}  // namespace curation_forge

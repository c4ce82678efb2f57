#pragma once

// Crowd-rating reliability pipeline: test questions from expert ratings,
// staged worker filtering (quiz, hidden tests, outliers, line clickers),
// per-worker [1, 100] normalization, MOS aggregation, expert alignment.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "curation_forge/catalog.hpp"
#include "curation_forge/error.hpp"
#include "curation_forge/parallel.hpp"

namespace curation_forge {

// ---------------------------------------------------------------------------
// Test questions

struct TestQuestion {
  std::string image_id;
  double expert_mos = 0.0;
  double expert_sd = 0.0;
  AnswerSet allowed_answers;

  bool operator==(const TestQuestion&) const = default;
};

inline constexpr std::size_t kMaxAllowedAnswers = 3;

// Rounded [mos - sd, mos + sd] clamped to 1..5; when more than three integers
// qualify, the three nearest the MOS are kept (ties toward the lower one).
inline AnswerSet allowed_answers_for(double mos, double sd) {
  const long lo = std::max(1L, std::lround(mos - sd));
  const long hi = std::min(5L, std::lround(mos + sd));
  std::vector<long> span;
  for (long v = lo; v <= hi; ++v) span.push_back(v);
  if (span.empty()) span.push_back(std::clamp(std::lround(mos), 1L, 5L));
  std::stable_sort(span.begin(), span.end(), [&](long a, long b) {
    return std::abs(static_cast<double>(a) - mos) < std::abs(static_cast<double>(b) - mos);
  });
  if (span.size() > kMaxAllowedAnswers) span.resize(kMaxAllowedAnswers);
  AnswerSet set;
  for (long v : span) set.insert(static_cast<int>(v));
  return set;
}

inline TestQuestion make_test_question(const std::string& image_id, std::span<const double> expert_scores) {
  require(expert_scores.size() >= 2, ErrorCode::precondition,
          "test question " + image_id + " needs at least 2 expert ratings");
  double mean = 0.0;
  for (double s : expert_scores) mean += s;
  mean /= static_cast<double>(expert_scores.size());
  double ss = 0.0;
  for (double s : expert_scores) ss += (s - mean) * (s - mean);
  const double sd = std::sqrt(ss / static_cast<double>(expert_scores.size() - 1));
  return {image_id, mean, sd, allowed_answers_for(mean, sd)};
}

// One question per image, in image-id order.
inline std::vector<TestQuestion> make_test_questions(const std::map<std::string, std::vector<double>>& expert) {
  std::vector<TestQuestion> out;
  for (const auto& [id, scores] : expert) out.push_back(make_test_question(id, scores));
  return out;
}

inline nlohmann::json to_json(const TestQuestion& q) {
  auto answers = nlohmann::json::array();
  for (int v : q.allowed_answers.values()) answers.push_back(v);
  return {{"image_id", q.image_id}, {"expert_mos", q.expert_mos}, {"expert_sd", q.expert_sd},
          {"allowed_answers", answers}};
}

inline void write_questions(const std::string& path, std::span<const TestQuestion> questions) {
  auto arr = nlohmann::json::array();
  for (const auto& q : questions) arr.push_back(to_json(q));
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::io, "cannot write " + path);
  out << arr.dump(2) << '\n';
}

// JSON array of {image_id, expert_mos, expert_sd, allowed_answers: [..]}.
inline std::vector<TestQuestion> read_questions(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::io, "cannot open questions " + path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::parse, path + ": " + e.what());
  }
  require(doc.is_array(), ErrorCode::parse, path + ": expected a JSON array of questions");
  std::vector<TestQuestion> out;
  for (const auto& item : doc) {
    try {
      TestQuestion q;
      q.image_id = item.at("image_id").get<std::string>();
      q.expert_mos = item.value("expert_mos", 0.0);
      q.expert_sd = item.value("expert_sd", 0.0);
      for (const auto& v : item.at("allowed_answers")) {
        const int a = v.get<int>();
        require(a >= 1 && a <= 5, ErrorCode::parse, "allowed answer outside 1..5 for " + q.image_id);
        q.allowed_answers.insert(a);
      }
      require(!q.allowed_answers.empty() && static_cast<std::size_t>(q.allowed_answers.size()) <= kMaxAllowedAnswers, ErrorCode::parse,
              "question " + q.image_id + " needs 1 to 3 allowed answers");
      out.push_back(std::move(q));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::parse, path + ": " + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Worker filtering

struct FilterThresholds {
  double quiz_accuracy = 0.7;
  double hidden_accuracy = 0.7;
  double outlier_plcc = 0.5;
  double lineclick_ratio = 2.0;
};

enum class Verdict { kept, failed_quiz, failed_hidden, outlier, line_clicker };

inline const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::kept: return "kept";
    case Verdict::failed_quiz: return "failed_quiz";
    case Verdict::failed_hidden: return "failed_hidden";
    case Verdict::outlier: return "outlier";
    case Verdict::line_clicker: return "line_clicker";
  }
  return "?";
}

inline constexpr std::size_t kMinPlccImages = 3;

struct WorkerStats {
  std::string worker_id;
  std::size_t quiz_total = 0, quiz_correct = 0;
  std::size_t hidden_total = 0, hidden_correct = 0;
  std::optional<double> quiz_accuracy;    // absent without quiz events
  std::optional<double> hidden_accuracy;  // absent without hidden test events
  std::optional<double> plcc_vs_prelim;   // absent if not reached or not computable
  std::size_t plcc_pairs = 0;
  std::array<std::size_t, 5> counts{};    // non-test answers per score
  double lineclick_ratio = 0.0;           // +inf when the other four counts are all 0
  Verdict verdict = Verdict::kept;
  std::string note;
};

struct FilterResult {
  std::vector<WorkerStats> workers;  // by worker id
  std::vector<RatingEvent> kept_events;  // non-test events of kept workers, input order
};

namespace detail {

inline double pearson(std::span<const double> x, std::span<const double> y) {
  const std::size_t n = x.size();
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  return sxy / std::sqrt(sxx * syy);
}

inline double lineclick_ratio(const std::array<std::size_t, 5>& counts) {
  const std::size_t top = *std::max_element(counts.begin(), counts.end());
  std::size_t total = 0;
  for (auto c : counts) total += c;
  const std::size_t rest = total - top;
  if (rest == 0) return std::numeric_limits<double>::infinity();
  return static_cast<double>(top) / static_cast<double>(rest);
}

}  // namespace detail

// Quiz events are a worker's test events that come before their first
// non-test event (timestamp order when every event of that worker carries
// one, file order otherwise); all later test events are hidden tests.
// Stages run in order and the verdict names the first one failed. Pass
// rules: accuracy at least the quiz/hidden thresholds, PLCC not below the
// outlier threshold, line-click ratio not above its threshold. A stage
// without evidence (no events, fewer than 3 images for PLCC) is passed.
inline FilterResult filter_workers(std::span<const RatingEvent> events, std::span<const TestQuestion> questions,
                                   const FilterThresholds& th = {}) {
  std::unordered_map<std::string, const TestQuestion*> qmap;
  for (const auto& q : questions) qmap[q.image_id] = &q;

  std::map<std::string, std::vector<std::size_t>> by_worker;
  for (std::size_t i = 0; i < events.size(); ++i) by_worker[events[i].worker_id].push_back(i);

  std::vector<std::string> ids;
  std::vector<std::vector<std::size_t>> lists;
  for (auto& [w, list] : by_worker) {
    ids.push_back(w);
    lists.push_back(std::move(list));
  }
  const std::size_t nw = ids.size();
  std::vector<WorkerStats> stats(nw);

  auto allowed = [&](const RatingEvent& ev) -> AnswerSet {
    if (ev.allowed_answers && !ev.allowed_answers->empty()) return *ev.allowed_answers;
    const auto it = qmap.find(ev.image_id);
    require(it != qmap.end(), ErrorCode::precondition,
            "test event by " + ev.worker_id + " on " + ev.image_id + " has no allowed answers");
    return it->second->allowed_answers;
  };

  // Resolve answer sets up front so a missing question fails the whole call.
  for (const auto& ev : events)
    if (ev.is_test) (void)allowed(ev);

  parallel_for(nw, [&](std::size_t w) {
    auto& s = stats[w];
    s.worker_id = ids[w];
    auto order = lists[w];
    const bool timed = std::all_of(order.begin(), order.end(), [&](std::size_t i) { return events[i].timestamp.has_value(); });
    if (timed)
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) { return *events[a].timestamp < *events[b].timestamp; });
    bool in_quiz = true;
    for (auto i : order) {
      const auto& ev = events[i];
      if (!ev.is_test) {
        in_quiz = false;
        ++s.counts[ev.score - 1];
        continue;
      }
      const bool ok = allowed(ev).contains(ev.score);
      if (in_quiz) {
        ++s.quiz_total;
        s.quiz_correct += ok;
      } else {
        ++s.hidden_total;
        s.hidden_correct += ok;
      }
    }
    if (s.quiz_total) s.quiz_accuracy = static_cast<double>(s.quiz_correct) / static_cast<double>(s.quiz_total);
    if (s.hidden_total)
      s.hidden_accuracy = static_cast<double>(s.hidden_correct) / static_cast<double>(s.hidden_total);
    s.lineclick_ratio = detail::lineclick_ratio(s.counts);

    if (s.quiz_accuracy && *s.quiz_accuracy < th.quiz_accuracy) {
      s.verdict = Verdict::failed_quiz;
    } else if (s.hidden_accuracy && *s.hidden_accuracy < th.hidden_accuracy) {
      s.verdict = Verdict::failed_hidden;
    }
  }, 16);

  // Stage 3 barrier: preliminary MOS on raw scores of stage-2 survivors.
  std::unordered_map<std::string, std::pair<double, std::size_t>> prelim;
  for (std::size_t w = 0; w < nw; ++w) {
    if (stats[w].verdict != Verdict::kept) continue;
    for (auto i : lists[w]) {
      if (events[i].is_test) continue;
      auto& [sum, n] = prelim[events[i].image_id];
      sum += events[i].score;
      ++n;
    }
  }

  parallel_for(nw, [&](std::size_t w) {
    auto& s = stats[w];
    if (s.verdict != Verdict::kept) return;
    std::vector<double> own, ref;
    for (auto i : lists[w]) {
      if (events[i].is_test) continue;
      const auto& [sum, n] = prelim.at(events[i].image_id);
      own.push_back(events[i].score);
      ref.push_back(sum / static_cast<double>(n));
    }
    s.plcc_pairs = own.size();
    if (own.size() < kMinPlccImages) {
      s.note = "plcc skipped: fewer than 3 rated images";
    } else {
      const double r = detail::pearson(own, ref);
      if (std::isnan(r)) {
        s.note = "plcc skipped: constant scores";
      } else {
        s.plcc_vs_prelim = r;
        if (r < th.outlier_plcc) s.verdict = Verdict::outlier;
      }
    }
    if (s.verdict == Verdict::kept && s.lineclick_ratio > th.lineclick_ratio) s.verdict = Verdict::line_clicker;
  }, 16);

  FilterResult result;
  std::unordered_map<std::string, bool> keep;
  for (const auto& s : stats) keep[s.worker_id] = s.verdict == Verdict::kept;
  for (const auto& ev : events)
    if (!ev.is_test && keep.at(ev.worker_id)) result.kept_events.push_back(ev);
  result.workers = std::move(stats);
  return result;
}

// ---------------------------------------------------------------------------
// Normalization and MOS

struct NormalizedEvent {
  std::string worker_id;
  std::string image_id;
  int score = 0;
  double normalized = 0.0;
};

// Per worker: 1 + 99 (s - min) / (max - min), over that worker's events.
inline std::vector<NormalizedEvent> normalize_scores(std::span<const RatingEvent> events) {
  std::unordered_map<std::string, std::pair<int, int>> range;
  for (const auto& ev : events) {
    auto [it, fresh] = range.try_emplace(ev.worker_id, ev.score, ev.score);
    if (!fresh) {
      it->second.first = std::min(it->second.first, ev.score);
      it->second.second = std::max(it->second.second, ev.score);
    }
  }
  std::vector<std::string> constant;
  for (const auto& [w, r] : range)
    if (r.first == r.second) constant.push_back(w);
  if (!constant.empty()) {
    std::sort(constant.begin(), constant.end());
    std::string names;
    for (const auto& w : constant) names += (names.empty() ? "" : ", ") + w;
    fail(ErrorCode::degenerate, "cannot normalize constant raters: " + names);
  }
  std::vector<NormalizedEvent> out;
  out.reserve(events.size());
  for (const auto& ev : events) {
    const auto [lo, hi] = range.at(ev.worker_id);
    const double n = 1.0 + 99.0 * static_cast<double>(ev.score - lo) / static_cast<double>(hi - lo);
    out.push_back({ev.worker_id, ev.image_id, ev.score, n});
  }
  return out;
}

struct MosRecord {
  std::string image_id;
  std::optional<double> mos;  // absent with zero votes
  std::size_t vote_count = 0;
  double sd = 0.0;  // sample SD; 0 with fewer than 2 votes
  std::array<std::size_t, 5> distribution{};  // raw 1..5 counts
};

// One record per image, in id order. Scores are summed in sorted order so the
// result does not depend on event order. `include` adds records (possibly
// with zero votes) for images that must appear.
inline std::vector<MosRecord> compute_mos(std::span<const NormalizedEvent> events,
                                          std::span<const std::string> include = {}) {
  std::map<std::string, std::vector<const NormalizedEvent*>> by_image;
  for (const auto& id : include) by_image[id];
  for (const auto& ev : events) by_image[ev.image_id].push_back(&ev);
  std::vector<MosRecord> out;
  for (auto& [id, list] : by_image) {
    MosRecord r;
    r.image_id = id;
    r.vote_count = list.size();
    std::vector<double> v;
    for (const auto* ev : list) {
      v.push_back(ev->normalized);
      if (ev->score >= 1 && ev->score <= 5) ++r.distribution[ev->score - 1];
    }
    std::sort(v.begin(), v.end());
    if (!v.empty()) {
      double sum = 0.0;
      for (double x : v) sum += x;
      const double mean = sum / static_cast<double>(v.size());
      r.mos = mean;
      if (v.size() >= 2) {
        double ss = 0.0;
        for (double x : v) ss += (x - mean) * (x - mean);
        r.sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
      }
    }
    out.push_back(std::move(r));
  }
  return out;
}

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
};

inline constexpr LinearFit kPaperExpertAlignment{1.12, -10.43};

// Least-squares line mapping crowd MOS (x) to expert MOS (y).
inline LinearFit align_to_experts(std::span<const double> crowd, std::span<const double> expert) {
  require(crowd.size() == expert.size(), ErrorCode::invalid_argument, "crowd/expert sizes differ");
  require(crowd.size() >= 2, ErrorCode::precondition, "alignment needs at least 2 pairs");
  const double n = static_cast<double>(crowd.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < crowd.size(); ++i) {
    mx += crowd[i];
    my += expert[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < crowd.size(); ++i) {
    sxx += (crowd[i] - mx) * (crowd[i] - mx);
    sxy += (crowd[i] - mx) * (expert[i] - my);
  }
  require(sxx > 0.0, ErrorCode::degenerate, "crowd MOS values are constant");
  const double slope = sxy / sxx;
  return {slope, my - slope * mx};
}

}  // namespace curation_forge

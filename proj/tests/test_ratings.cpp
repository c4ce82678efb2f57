#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <set>

#include "curation_forge/ratings.hpp"
#include "synthetic_crowd.hpp"

namespace cf = curation_forge;

namespace {

cf::RatingEvent ev(std::string w, std::string img, int score, bool test = false,
                   std::optional<std::int64_t> ts = std::nullopt) {
  return {std::move(w), std::move(img), score, test, std::nullopt, ts};
}

// Integers v in 1..5 whose rounding cell [v - 0.5, v + 0.5) meets [lo, hi],
// then the three nearest to the MOS, lower first on ties.
std::set<int> oracle_allowed(double mos, double sd) {
  std::vector<int> vs;
  for (int v = 1; v <= 5; ++v)
    if (v - 0.5 <= mos + sd && v + 0.5 > mos - sd) vs.push_back(v);
  std::sort(vs.begin(), vs.end(), [&](int a, int b) {
    const double da = std::fabs(a - mos), db = std::fabs(b - mos);
    return da != db ? da < db : a < b;
  });
  if (vs.size() > 3) vs.resize(3);
  return {vs.begin(), vs.end()};
}

std::vector<double> ranks(const std::vector<double>& x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = (i + j) / 2.0 + 1;
    i = j + 1;
  }
  return r;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  return cf::detail::pearson(ranks(a), ranks(b));
}

}  // namespace

TEST(TestQuestions, Examples) {
  const std::vector<double> fours = {4, 4, 4};
  const auto q4 = cf::make_test_question("a", fours);
  EXPECT_EQ(q4.expert_sd, 0.0);
  EXPECT_EQ(q4.allowed_answers, (cf::AnswerSet{4}));

  const std::vector<double> spread = {3, 4, 5};
  const auto q345 = cf::make_test_question("b", spread);
  EXPECT_DOUBLE_EQ(q345.expert_mos, 4.0);
  EXPECT_DOUBLE_EQ(q345.expert_sd, 1.0);
  EXPECT_EQ(q345.allowed_answers, (cf::AnswerSet{3, 4, 5}));

  const std::vector<double> extremes = {1, 5};
  const auto q15 = cf::make_test_question("c", extremes);
  EXPECT_DOUBLE_EQ(q15.expert_mos, 3.0);
  EXPECT_NEAR(q15.expert_sd, 2.8284271247461903, 1e-15);
  EXPECT_EQ(q15.allowed_answers, (cf::AnswerSet{2, 3, 4}));

  const std::vector<double> one = {3};
  EXPECT_THROW(cf::make_test_question("d", one), cf::Error);
}

TEST(TestQuestions, CapTiesGoLow) {
  // mos 3.5, sd 2: span 2..5 (round half away: 1.5 -> 2, 5.5 -> 6 -> 5); nearest 3,4 then 2 vs 5 tie -> 2.
  EXPECT_EQ(cf::allowed_answers_for(3.5, 2.0), (cf::AnswerSet{2, 3, 4}));
  EXPECT_EQ(cf::allowed_answers_for(2.5, 0.0), (cf::AnswerSet{3}));  // half away from zero
}

TEST(TestQuestions, MatchOracleOnRandomExperts) {
  auto rng = cf::make_rng(404);
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<double> s(2 + cf::uniform_index(rng, 12));
    for (auto& x : s) x = 1.0 + static_cast<double>(cf::uniform_index(rng, 5));
    const auto q = cf::make_test_question("x", s);
    const auto vals = q.allowed_answers.values();
    EXPECT_EQ(std::set<int>(vals.begin(), vals.end()), oracle_allowed(q.expert_mos, q.expert_sd)) << trial;
    EXPECT_GE(q.allowed_answers.size(), 1);
    EXPECT_LE(q.allowed_answers.size(), 3);
  }
}

TEST(TestQuestions, JsonRoundTrip) {
  const std::map<std::string, std::vector<double>> expert = {{"a", {3, 4, 5}}, {"b", {1, 2}}, {"c", {5, 5, 4}}};
  const auto qs = cf::make_test_questions(expert);
  const auto path = (std::filesystem::temp_directory_path() / "cf_questions.json").string();
  cf::write_questions(path, qs);
  EXPECT_EQ(cf::read_questions(path), qs);
  std::filesystem::remove(path);
}

TEST(FilterWorkers, PaperDefaults) {
  const cf::FilterThresholds th;
  EXPECT_EQ(th.quiz_accuracy, 0.7);
  EXPECT_EQ(th.hidden_accuracy, 0.7);
  EXPECT_EQ(th.outlier_plcc, 0.5);
  EXPECT_EQ(th.lineclick_ratio, 2.0);
}

TEST(FilterWorkers, PerfectQuizAndLineClicker) {
  const std::vector<cf::TestQuestion> qs = {{"q1", 3, 1, cf::AnswerSet{2, 3, 4}}, {"q2", 5, 0, cf::AnswerSet{5}}};
  std::vector<cf::RatingEvent> e = {ev("w", "q1", 3, true, 0), ev("w", "q2", 5, true, 1)};
  for (int i = 0; i < 6; ++i) e.push_back(ev("w", "m" + std::to_string(i), 5, false, 2 + i));
  // A second worker anchors the preliminary MOS.
  for (int i = 0; i < 6; ++i) e.push_back(ev("v", "m" + std::to_string(i), 1 + i % 5, false));
  const auto r = cf::filter_workers(e, qs);
  const auto& w = r.workers[1];
  ASSERT_EQ(w.worker_id, "w");
  EXPECT_EQ(w.quiz_accuracy, 1.0);
  EXPECT_FALSE(w.hidden_accuracy.has_value());
  EXPECT_TRUE(std::isinf(w.lineclick_ratio));
  EXPECT_EQ(w.verdict, cf::Verdict::line_clicker);
  EXPECT_EQ(r.workers[0].verdict, cf::Verdict::kept);
  EXPECT_EQ(r.kept_events.size(), 6u);
  for (const auto& k : r.kept_events) EXPECT_EQ(k.worker_id, "v");
}

TEST(FilterWorkers, QuizBoundaryIsInclusive) {
  std::vector<cf::TestQuestion> qs;
  std::vector<cf::RatingEvent> e;
  for (int i = 0; i < 20; ++i) {
    qs.push_back({"q" + std::to_string(i), 3, 0, cf::AnswerSet{3}});
    e.push_back(ev("w14", "q" + std::to_string(i), i < 14 ? 3 : 1, true, i));
    e.push_back(ev("w13", "q" + std::to_string(i), i < 13 ? 3 : 1, true, i));
  }
  const auto r = cf::filter_workers(e, qs);
  EXPECT_EQ(r.workers[0].worker_id, "w13");
  EXPECT_EQ(r.workers[0].verdict, cf::Verdict::failed_quiz);
  EXPECT_EQ(r.workers[1].verdict, cf::Verdict::line_clicker);  // passed the quiz; no main ratings -> 0/0
  EXPECT_EQ(r.workers[1].quiz_accuracy, 0.7);
}

TEST(FilterWorkers, QuizSplitUsesTimestampsThenFileOrder) {
  const std::vector<cf::TestQuestion> qs = {{"q", 3, 0, cf::AnswerSet{3}}};
  // By timestamp the wrong answer (t=5) comes after the main rating (t=2): hidden, not quiz.
  std::vector<cf::RatingEvent> timed = {ev("w", "q", 1, true, 5), ev("w", "m", 3, false, 2), ev("w", "q", 3, true, 1)};
  auto r = cf::filter_workers(timed, qs);
  EXPECT_EQ(r.workers[0].quiz_total, 1u);
  EXPECT_EQ(r.workers[0].quiz_correct, 1u);
  EXPECT_EQ(r.workers[0].hidden_total, 1u);
  EXPECT_EQ(r.workers[0].verdict, cf::Verdict::failed_hidden);

  // One missing timestamp: file order, so both test events precede the main one.
  timed[1].timestamp.reset();
  std::swap(timed[1], timed[2]);
  r = cf::filter_workers(timed, qs);
  EXPECT_EQ(r.workers[0].quiz_total, 2u);
  EXPECT_EQ(r.workers[0].hidden_total, 0u);
  EXPECT_EQ(r.workers[0].verdict, cf::Verdict::failed_quiz);
}

TEST(FilterWorkers, EventAnswerSetOverridesAndMissingQuestionFails) {
  std::vector<cf::RatingEvent> e = {ev("w", "q", 2, true, 0)};
  e[0].allowed_answers = cf::AnswerSet{1, 2};
  EXPECT_EQ(cf::filter_workers(e, {}).workers[0].quiz_correct, 1u);
  e[0].allowed_answers.reset();
  EXPECT_THROW(cf::filter_workers(e, {}), cf::Error);
}

TEST(FilterWorkers, TooFewImagesForPlccIsKept) {
  std::vector<cf::RatingEvent> e = {ev("a", "m1", 1), ev("a", "m2", 5), ev("b", "m1", 5), ev("b", "m2", 1),
                                     ev("b", "m3", 3)};
  const auto r = cf::filter_workers(e, {});
  EXPECT_FALSE(r.workers[0].plcc_vs_prelim.has_value());
  EXPECT_FALSE(r.workers[0].note.empty());
  EXPECT_EQ(r.workers[0].verdict, cf::Verdict::kept);
}

TEST(FilterWorkers, OutlierBelowHalfRemoved) {
  std::vector<cf::RatingEvent> e;
  for (int w = 0; w < 5; ++w)
    for (int i = 0; i < 10; ++i) e.push_back(ev("h" + std::to_string(w), "m" + std::to_string(i), 1 + i / 2));
  for (int i = 0; i < 10; ++i) e.push_back(ev("x", "m" + std::to_string(i), 5 - i / 2));
  const auto r = cf::filter_workers(e, {});
  const auto& x = r.workers.back();
  ASSERT_EQ(x.worker_id, "x");
  ASSERT_TRUE(x.plcc_vs_prelim.has_value());
  EXPECT_LT(*x.plcc_vs_prelim, 0.5);
  EXPECT_EQ(x.verdict, cf::Verdict::outlier);
  for (std::size_t i = 0; i + 1 < r.workers.size(); ++i) EXPECT_EQ(r.workers[i].verdict, cf::Verdict::kept);
}

TEST(FilterWorkers, SyntheticPopulation) {
  const auto crowd = cf_test::make_crowd(0);
  const auto r = cf::filter_workers(crowd.events, crowd.questions);
  std::size_t honest_kept = 0;
  std::map<std::string, const cf::WorkerStats*> by_id;
  for (const auto& w : r.workers) by_id[w.worker_id] = &w;
  for (const auto& id : crowd.clicker_ids) EXPECT_NE(by_id.at(id)->verdict, cf::Verdict::kept) << id;
  for (const auto& id : crowd.honest_ids) honest_kept += by_id.at(id)->verdict == cf::Verdict::kept;
  EXPECT_GE(honest_kept, 38u);

  // Recompute quiz accuracy and line-click ratio for every worker directly.
  std::map<std::string, cf::AnswerSet> allowed;
  for (const auto& q : crowd.questions) allowed[q.image_id] = q.allowed_answers;
  for (const auto& [id, stats] : by_id) {
    std::vector<cf::RatingEvent> mine;
    for (const auto& e : crowd.events)
      if (e.worker_id == id) mine.push_back(e);
    std::sort(mine.begin(), mine.end(), [](const auto& a, const auto& b) { return *a.timestamp < *b.timestamp; });
    int quiz = 0, quiz_ok = 0;
    std::array<int, 5> counts{};
    bool started = false;
    for (const auto& e : mine) {
      if (!e.is_test) {
        started = true;
        ++counts[e.score - 1];
      } else if (!started) {
        ++quiz;
        quiz_ok += allowed.at(e.image_id).contains(e.score);
      }
    }
    EXPECT_EQ(stats->quiz_accuracy.value(), double(quiz_ok) / quiz);
    const int top = *std::max_element(counts.begin(), counts.end());
    const int rest = std::accumulate(counts.begin(), counts.end(), 0) - top;
    EXPECT_EQ(stats->lineclick_ratio, double(top) / rest);
  }

  // Stages 1, 2 and 4 are a fixpoint on the survivors.
  std::set<std::string> kept;
  for (const auto& w : r.workers)
    if (w.verdict == cf::Verdict::kept) kept.insert(w.worker_id);
  std::vector<cf::RatingEvent> again;
  for (const auto& e : crowd.events)
    if (kept.count(e.worker_id)) again.push_back(e);
  for (const auto& w : cf::filter_workers(again, crowd.questions).workers) {
    EXPECT_NE(w.verdict, cf::Verdict::failed_quiz);
    EXPECT_NE(w.verdict, cf::Verdict::failed_hidden);
    EXPECT_NE(w.verdict, cf::Verdict::line_clicker);
  }

  // Final MOS tracks the planted truth.
  const auto norm = cf::normalize_scores(r.kept_events);
  const auto mos = cf::compute_mos(norm);
  std::vector<double> got, truth;
  for (const auto& m : mos) {
    got.push_back(*m.mos);
    truth.push_back(crowd.truth.at(m.image_id));
  }
  EXPECT_EQ(mos.size(), crowd.truth.size());
  EXPECT_GE(spearman(got, truth), 0.95);
}

TEST(Normalize, Examples) {
  std::vector<cf::RatingEvent> e = {ev("full", "a", 1), ev("full", "b", 5), ev("full", "c", 3),
                                    ev("pair", "a", 2), ev("pair", "b", 4),
                                    ev("mid", "a", 2), ev("mid", "b", 3), ev("mid", "c", 4)};
  const auto n = cf::normalize_scores(e);
  EXPECT_EQ(n[0].normalized, 1.0);
  EXPECT_EQ(n[1].normalized, 100.0);
  EXPECT_EQ(n[2].normalized, 50.5);
  EXPECT_EQ(n[3].normalized, 1.0);
  EXPECT_EQ(n[4].normalized, 100.0);
  EXPECT_EQ(n[6].normalized, 50.5);
}

TEST(Normalize, ConstantRaterNamed) {
  std::vector<cf::RatingEvent> e = {ev("ok", "a", 1), ev("ok", "b", 2), ev("flat", "a", 3), ev("flat", "b", 3)};
  try {
    cf::normalize_scores(e);
    FAIL() << "expected an error";
  } catch (const cf::Error& err) {
    EXPECT_EQ(err.code(), cf::ErrorCode::degenerate);
    EXPECT_NE(std::string(err.what()).find("flat"), std::string::npos);
  }
}

TEST(Normalize, PreservesWithinWorkerOrder) {
  auto rng = cf::make_rng(6);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<cf::RatingEvent> e;
    for (int i = 0; i < 12; ++i) e.push_back(ev("w", std::to_string(i), 1 + static_cast<int>(cf::uniform_index(rng, 5))));
    e.push_back(ev("w", "lo", 1));
    e.push_back(ev("w", "hi", 4));
    const auto n = cf::normalize_scores(e);
    for (std::size_t i = 0; i < e.size(); ++i)
      for (std::size_t j = 0; j < e.size(); ++j) {
        EXPECT_EQ(e[i].score < e[j].score, n[i].normalized < n[j].normalized);
        EXPECT_EQ(e[i].score == e[j].score, n[i].normalized == n[j].normalized);
      }
    EXPECT_EQ(std::min_element(n.begin(), n.end(), [](auto& a, auto& b) { return a.normalized < b.normalized; })->normalized, 1.0);
    EXPECT_EQ(std::max_element(n.begin(), n.end(), [](auto& a, auto& b) { return a.normalized < b.normalized; })->normalized, 100.0);
  }
}

TEST(Mos, Examples) {
  const std::vector<cf::NormalizedEvent> one = {{"w", "a", 3, 50.5}};
  const auto m1 = cf::compute_mos(one);
  EXPECT_EQ(m1[0].mos, 50.5);
  EXPECT_EQ(m1[0].vote_count, 1u);
  EXPECT_EQ(m1[0].sd, 0.0);
  EXPECT_EQ(m1[0].distribution, (std::array<std::size_t, 5>{0, 0, 1, 0, 0}));

  const std::vector<cf::NormalizedEvent> two = {{"w", "a", 1, 1.0}, {"v", "a", 5, 100.0}};
  const auto m2 = cf::compute_mos(two);
  EXPECT_EQ(m2[0].mos, 50.5);
  EXPECT_NEAR(m2[0].sd, 70.00357133746822, 1e-12);

  const std::vector<std::string> extra = {"b"};
  const auto m3 = cf::compute_mos(two, extra);
  ASSERT_EQ(m3.size(), 2u);
  EXPECT_EQ(m3[1].vote_count, 0u);
  EXPECT_FALSE(m3[1].mos.has_value());
}

TEST(Mos, PermutationInvariantAndInRange) {
  auto rng = cf::make_rng(10);
  std::vector<cf::NormalizedEvent> e;
  for (int i = 0; i < 500; ++i)
    e.push_back({"w" + std::to_string(i % 7), "img" + std::to_string(cf::uniform_index(rng, 20)), 3,
                 1.0 + 99.0 * cf::uniform_unit(rng)});
  const auto base = cf::compute_mos(e);
  for (int p = 0; p < 10; ++p) {
    cf::shuffle(e.begin(), e.end(), rng);
    const auto again = cf::compute_mos(e);
    ASSERT_EQ(again.size(), base.size());
    for (std::size_t i = 0; i < base.size(); ++i) {
      EXPECT_EQ(again[i].mos, base[i].mos);
      EXPECT_EQ(again[i].sd, base[i].sd);
    }
  }
  for (const auto& m : base) {
    EXPECT_GE(*m.mos, 1.0);
    EXPECT_LE(*m.mos, 100.0);
  }
}

TEST(Align, ExactLineAndNormalEquations) {
  const std::vector<double> x = {1, 2, 3, 4}, y = {3, 5, 7, 9};
  const auto fit = cf::align_to_experts(x, y);
  EXPECT_DOUBLE_EQ(fit.slope, 2.0);
  EXPECT_DOUBLE_EQ(fit.intercept, 1.0);
  EXPECT_EQ(cf::kPaperExpertAlignment.slope, 1.12);
  EXPECT_EQ(cf::kPaperExpertAlignment.intercept, -10.43);

  auto rng = cf::make_rng(17);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 2 + cf::uniform_index(rng, 50);
    std::vector<double> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = 1 + 99 * cf::uniform_unit(rng);
      b[i] = 1 + 99 * cf::uniform_unit(rng);
    }
    // Normal equations: [n Sx; Sx Sxx] [c; m] = [Sy; Sxy].
    long double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < n; ++i) {
      sx += a[i];
      sy += b[i];
      sxx += (long double)a[i] * a[i];
      sxy += (long double)a[i] * b[i];
    }
    const long double det = n * sxx - sx * sx;
    const double m = static_cast<double>((n * sxy - sx * sy) / det);
    const double c = static_cast<double>((sy * sxx - sx * sxy) / det);
    const auto f = cf::align_to_experts(a, b);
    EXPECT_NEAR(f.slope, m, 1e-10 * std::max(1.0, std::fabs(m)));
    EXPECT_NEAR(f.intercept, c, 1e-10 * std::max(1.0, std::fabs(c)));
  }
  const std::vector<double> flat = {2, 2, 2};
  EXPECT_THROW(cf::align_to_experts(flat, std::span<const double>(y).first(3)), cf::Error);
}

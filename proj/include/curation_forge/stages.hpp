#pragma once

// Stage kinds that need no image decoding. The command line and the
// pipeline runner both go through these, so a stage behaves the same either
// way.

#include <algorithm>
#include <cmath>
#include <functional>
#include <initializer_list>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "curation_forge/analysis.hpp"
#include "curation_forge/catalog.hpp"
#include "curation_forge/diversity.hpp"
#include "curation_forge/formats.hpp"
#include "curation_forge/indicators.hpp"
#include "curation_forge/losses.hpp"
#include "curation_forge/pipeline.hpp"
#include "curation_forge/ratings.hpp"
#include "curation_forge/tag_sampler.hpp"
#include "json.hpp"

namespace curation_forge {

// Renders an analysis result (the JSON written to `out`) into an image file.
using PlotRenderer = std::function<void(const nlohmann::json& result, const std::string& path)>;

namespace detail {

using nlohmann::json;

inline std::size_t count_param(const StageContext& ctx, const std::string& key, std::size_t min_value = 0) {
  const auto v = ctx.get<long long>(key);
  require(v >= static_cast<long long>(min_value), ErrorCode::invalid_argument,
          key + " must be >= " + std::to_string(min_value));
  return static_cast<std::size_t>(v);
}

inline std::vector<std::size_t> size_list(const StageContext& ctx, const std::string& key) {
  std::vector<std::size_t> out;
  for (const auto& v : ctx.params().at(key)) {
    require(v.get<long long>() >= 1, ErrorCode::invalid_argument, key + " entries must be >= 1");
    out.push_back(v.get<std::size_t>());
  }
  return out;
}

inline std::vector<std::size_t> one_to(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{1});
  return v;
}

// Indicator names from a string list; an empty list means all seven scalars.
inline std::vector<Indicator> indicator_list(const StageContext& ctx, const std::string& key) {
  std::vector<Indicator> out;
  for (const auto& v : ctx.params().at(key)) out.push_back(parse_indicator(v.get<std::string>()));
  if (out.empty()) out.assign(kScalarIndicators.begin(), kScalarIndicators.end());
  return out;
}

inline void one_of(const json& p, const std::string& key, std::initializer_list<const char*> allowed) {
  const auto v = p.at(key).get<std::string>();
  std::string list;
  for (const auto* a : allowed) {
    if (v == a) return;
    list += (list.empty() ? "" : ", ") + std::string(a);
  }
  fail(ErrorCode::invalid_argument, key + " must be one of " + list + "; got '" + v + "'");
}

inline json finite_or_null(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

inline json curve_json(const std::vector<AgreementPoint>& pts) {
  json a = json::array();
  for (const auto& p : pts)
    a.push_back({{"group_size", p.group_size},
                 {"votes_per_image", p.votes_per_image},
                 {"mean_srocc", p.mean_srocc},
                 {"ci_half_width", p.ci_half_width},
                 {"used_repeats", p.used_repeats}});
  return a;
}

// ---------------------------------------------------------------------------

inline StageKind trim_kind() {
  StageKind k;
  k.help = "Drop images whose indicators lie beyond a z-score threshold";
  k.paths = {{"indicators", PathRole::input}, {"out", PathRole::output}, {"removed", PathRole::output, false}};
  k.params = {{"z", ParamType::number, false, kDefaultTrimZ}, {"dims", ParamType::string_list, false, json::array()}};
  k.run = [](StageContext& ctx) {
    const auto vectors = read_indicators(ctx.path("indicators"));
    const auto res = trim_by_zscore(vectors, ctx.get<double>("z"), indicator_list(ctx, "dims"));
    for (const auto& w : res.stats.warnings) ctx.warn(w);
    write_indicators(ctx.path("out"), res.kept);
    if (ctx.has_path("removed")) write_json(ctx.path("removed"), res.removed_ids);
    return json{{"input", vectors.size()}, {"kept", res.kept.size()}, {"removed", res.removed_ids.size()}};
  };
  return k;
}

inline StageKind features_check_kind() {
  StageKind k;
  k.help = "Validate a feature file and its coverage of an indicator set";
  k.paths = {{"features", PathRole::input}, {"indicators", PathRole::input, false}, {"out", PathRole::output, false}};
  k.run = [](StageContext& ctx) {
    const auto features = read_features(ctx.path("features"));
    json report = {{"count", features.size()}, {"dim", features.empty() ? 0 : features[0].dim()}};
    std::vector<std::string> problems;
    std::map<std::string, std::size_t> seen;
    std::size_t nonfinite = 0, zero_norm = 0;
    for (const auto& f : features) {
      ++seen[f.image_id];
      double norm = 0.0;
      bool finite = true;
      for (float x : f.values) {
        finite = finite && std::isfinite(x);
        norm += static_cast<double>(x) * x;
      }
      if (!finite) {
        ++nonfinite;
        problems.push_back(f.image_id + ": non-finite value");
      } else if (norm == 0.0) {
        ++zero_norm;
      }
    }
    std::size_t dups = 0;
    for (const auto& [id, n] : seen)
      if (n > 1) {
        ++dups;
        problems.push_back(id + ": appears " + std::to_string(n) + " times");
      }
    report["duplicate_ids"] = dups;
    report["non_finite"] = nonfinite;
    report["zero_norm"] = zero_norm;
    if (zero_norm > 0) ctx.warn(std::to_string(zero_norm) + " feature vectors have zero norm");
    if (ctx.has_path("indicators")) {
      const auto vectors = read_indicators(ctx.path("indicators"));
      std::size_t missing = 0;
      std::set<std::string> ind_ids;
      for (const auto& v : vectors) {
        ind_ids.insert(v.image_id);
        if (!seen.count(v.image_id)) {
          ++missing;
          problems.push_back(v.image_id + ": no feature vector");
        }
      }
      std::size_t extra = 0;
      for (const auto& [id, n] : seen) extra += ind_ids.count(id) ? 0 : 1;
      report["indicators"] = vectors.size();
      report["missing_features"] = missing;
      report["unused_features"] = extra;
      if (extra > 0) ctx.warn(std::to_string(extra) + " feature vectors have no indicator record");
    }
    report["problems"] = problems;
    if (ctx.has_path("out")) write_json(ctx.path("out"), report);
    if (!problems.empty()) {
      std::string msg = std::to_string(problems.size()) + " problem(s), first: " + problems.front();
      fail(ErrorCode::precondition, msg);
    }
    return report;
  };
  return k;
}

inline StageKind sample_tags_kind() {
  StageKind k;
  k.help = "Tag-balanced selection from a catalog";
  k.paths = {{"catalog", PathRole::input}, {"out", PathRole::output}};
  k.params = {{"quota", ParamType::integer_or_string, false, "auto"}, {"target", ParamType::integer, true}};
  k.run = [](StageContext& ctx) {
    const auto catalog = read_catalog(ctx.path("catalog"));
    const auto target = count_param(ctx, "target", 1);
    std::size_t quota = 0;
    const auto& q = ctx.params().at("quota");
    if (q.is_string()) {
      require(q.get<std::string>() == "auto", ErrorCode::invalid_argument, "quota must be an integer or \"auto\"");
      quota = find_quota(catalog, target);
    } else {
      quota = count_param(ctx, "quota", 1);
    }
    const auto plan = sample_by_tags(catalog, quota, target);
    if (!plan.reached_target)
      ctx.warn("selection stopped at " + std::to_string(plan.selected_ids.size()) + " of " + std::to_string(target) +
               " images");
    write_json(ctx.path("out"), to_json(plan));
    return json{{"catalog", catalog.size()},
                {"quota", quota},
                {"selected", plan.selected_ids.size()},
                {"reached_target", plan.reached_target},
                {"tags", plan.source_counts.size()}};
  };
  return k;
}

inline SamplingMode parse_mode(const std::string& mode, std::size_t n) {
  if (mode == "exact") return SamplingMode::exact;
  if (mode == "local") return SamplingMode::local_search;
  require(mode == "auto", ErrorCode::invalid_argument, "mode must be auto, exact or local");
  return n <= kExactSizeCap ? SamplingMode::exact : SamplingMode::local_search;
}

inline StageKind sample_diverse_kind() {
  StageKind k;
  k.help = "Select a subset whose indicator and content histograms are as uniform as possible";
  k.paths = {{"indicators", PathRole::input},
             {"features", PathRole::input, false},
             {"out", PathRole::output},
             {"selected", PathRole::output, false}};
  k.params = {{"k", ParamType::integer, false, 200},
              {"bins", ParamType::integer, false, 200},
              {"target", ParamType::integer, true},
              {"mode", ParamType::string, false, "auto"},
              {"restarts", ParamType::integer, false, static_cast<long long>(kDefaultRestarts)}};
  k.randomized = true;
  k.validate = [](const json& p) {
    one_of(p, "mode", {"auto", "exact", "local"});
    require(p["k"].get<long long>() == 0 || p.contains("features"), ErrorCode::invalid_argument,
            "k > 0 needs a features file");
  };
  k.run = [](StageContext& ctx) {
    auto vectors = read_indicators(ctx.path("indicators"));
    require(!vectors.empty(), ErrorCode::precondition, "no indicator records");
    const auto clusters = count_param(ctx, "k");
    const auto bins = count_param(ctx, "bins", 1);
    const auto target = count_param(ctx, "target", 1);
    const auto restarts = count_param(ctx, "restarts", 1);
    json codebook = nullptr;
    if (clusters > 0) {
      require(ctx.has_path("features"), ErrorCode::invalid_argument, "k > 0 needs a features file");
      const auto all = read_features(ctx.path("features"));
      std::unordered_map<std::string, const FeatureVector*> by_id;
      for (const auto& f : all) by_id.emplace(f.image_id, &f);
      std::vector<FeatureVector> feats;
      for (const auto& v : vectors) {
        const auto it = by_id.find(v.image_id);
        require(it != by_id.end(), ErrorCode::precondition, v.image_id + " has no feature vector");
        feats.push_back(*it->second);
      }
      const auto book = fit_codebook(feats, clusters, mix_seed(ctx.seed(), 0xc0deb00c));
      for (std::size_t i = 0; i < vectors.size(); ++i)
        vectors[i].content_cluster = static_cast<int>(assign(book, feats[i]));
      codebook = {{"k", book.k}, {"dim", book.dim}, {"iterations", book.iterations}, {"converged", book.converged}};
    }
    const auto problem = make_indicator_problem(vectors, bins, clusters);
    const auto mode = parse_mode(ctx.get<std::string>("mode"), vectors.size());
    const auto plan = sample_uniform(problem, target, mode, ctx.seed(), restarts);
    auto j = to_json(plan);
    j["codebook"] = codebook;
    write_json(ctx.path("out"), j);
    if (ctx.has_path("selected")) {
      std::vector<IndicatorVector> chosen;
      for (auto i : plan.selected) chosen.push_back(vectors[i]);
      write_indicators(ctx.path("selected"), chosen);
    }
    return json{{"population", vectors.size()},
                {"selected", plan.selected_ids.size()},
                {"mode", mode == SamplingMode::exact ? "exact" : "local"},
                {"objective", plan.objective}};
  };
  return k;
}

inline StageKind dedup_kind() {
  StageKind k;
  k.help = "Remove the closest pairs in scaled indicator space";
  k.paths = {{"indicators", PathRole::input}, {"out", PathRole::output}, {"kept", PathRole::output, false}};
  k.params = {{"remove", ParamType::integer, true}};
  k.run = [](StageContext& ctx) {
    const auto vectors = read_indicators(ctx.path("indicators"));
    const auto res = dedup(vectors, count_param(ctx, "remove"));
    write_json(ctx.path("out"), to_json(res));
    if (ctx.has_path("kept")) {
      const std::set<std::string> gone(res.removed_ids.begin(), res.removed_ids.end());
      std::vector<IndicatorVector> kept;
      for (const auto& v : vectors)
        if (!gone.count(v.image_id)) kept.push_back(v);
      write_indicators(ctx.path("kept"), kept);
    }
    return json{{"input", vectors.size()}, {"removed", res.removed_ids.size()}};
  };
  return k;
}

inline StageKind ratings_kind() {
  StageKind k;
  k.help = "Screen workers with test questions and compute MOS from the kept ratings";
  k.paths = {{"events", PathRole::input},
             {"questions", PathRole::input, false},
             {"out_mos", PathRole::output},
             {"out_workers", PathRole::output},
             {"out_events", PathRole::output, false}};
  const FilterThresholds th;
  k.params = {{"quiz_acc", ParamType::number, false, th.quiz_accuracy},
              {"hidden_acc", ParamType::number, false, th.hidden_accuracy},
              {"outlier_plcc", ParamType::number, false, th.outlier_plcc},
              {"lineclick", ParamType::number, false, th.lineclick_ratio}};
  k.run = [](StageContext& ctx) {
    const auto events = read_ratings(ctx.path("events"));
    std::vector<TestQuestion> questions;
    if (ctx.has_path("questions")) questions = read_questions(ctx.path("questions"));
    FilterThresholds th;
    th.quiz_accuracy = ctx.get<double>("quiz_acc");
    th.hidden_accuracy = ctx.get<double>("hidden_acc");
    th.outlier_plcc = ctx.get<double>("outlier_plcc");
    th.lineclick_ratio = ctx.get<double>("lineclick");
    const auto res = filter_workers(events, questions, th);
    const auto normalized = normalize_scores(res.kept_events);
    const auto mos = compute_mos(normalized);
    write_worker_stats(ctx.path("out_workers"), res.workers);
    write_mos(ctx.path("out_mos"), mos);
    if (ctx.has_path("out_events")) write_ratings(ctx.path("out_events"), res.kept_events);
    json verdicts = json::object();
    for (auto v : {Verdict::kept, Verdict::failed_quiz, Verdict::failed_hidden, Verdict::outlier, Verdict::line_clicker})
      verdicts[to_string(v)] = 0;
    for (const auto& w : res.workers) verdicts[to_string(w.verdict)] = verdicts[to_string(w.verdict)].get<int>() + 1;
    return json{{"events", events.size()},
                {"workers", res.workers.size()},
                {"verdicts", verdicts},
                {"kept_events", res.kept_events.size()},
                {"images", mos.size()}};
  };
  return k;
}

inline std::vector<NormalizedEvent> as_unnormalized(std::span<const RatingEvent> events) {
  std::vector<NormalizedEvent> out;
  for (const auto& e : events)
    if (!e.is_test) out.push_back({e.worker_id, e.image_id, e.score, static_cast<double>(e.score)});
  return out;
}

inline std::vector<RatingEvent> non_test(std::vector<RatingEvent> events) {
  std::erase_if(events, [](const RatingEvent& e) { return e.is_test; });
  return events;
}

inline StageKind mos_kind() {
  StageKind k;
  k.help = "Per-image MOS from rating events, optionally aligned to an expert scale";
  k.paths = {{"events", PathRole::input}, {"experts", PathRole::input, false}, {"out", PathRole::output}};
  k.params = {{"normalize", ParamType::boolean, false, true}, {"align", ParamType::string, false, "none"}};
  k.validate = [](const json& p) {
    one_of(p, "align", {"none", "paper", "fit"});
    require(p["align"] != "fit" || p.contains("experts"), ErrorCode::invalid_argument,
            "align = fit needs an experts score table");
  };
  k.run = [](StageContext& ctx) {
    const auto events = non_test(read_ratings(ctx.path("events")));
    const auto normalized = ctx.get<bool>("normalize") ? normalize_scores(events) : as_unnormalized(events);
    const auto mos = compute_mos(normalized);
    const auto align = ctx.get<std::string>("align");
    std::optional<LinearFit> fit;
    json summary = {{"events", events.size()}, {"images", mos.size()}, {"align", align}};
    if (align == "paper") {
      fit = kPaperExpertAlignment;
    } else if (align == "fit") {
      require(ctx.has_path("experts"), ErrorCode::invalid_argument, "align = fit needs an experts score table");
      const auto experts = read_score_table(ctx.path("experts"));
      std::vector<double> crowd, expert;
      for (const auto& r : mos) {
        const auto it = experts.find(r.image_id);
        if (it == experts.end() || !r.mos) continue;
        crowd.push_back(*r.mos);
        expert.push_back(it->second);
      }
      fit = align_to_experts(crowd, expert);
      summary["aligned_pairs"] = crowd.size();
    } else {
      require(align == "none", ErrorCode::invalid_argument, "align must be none, paper or fit");
    }
    if (fit) summary["alignment"] = {{"slope", fit->slope}, {"intercept", fit->intercept}};
    write_mos(ctx.path("out"), mos, fit);
    return summary;
  };
  return k;
}

inline std::map<std::string, double> mos_reference(std::span<const Vote> votes) {
  std::map<std::string, std::vector<double>> by;
  for (const auto& v : votes) by[v.image_id].push_back(v.score);
  std::map<std::string, double> out;
  for (auto& [id, s] : by) out[id] = sorted_mean(s);
  return out;
}

inline StageKind analyze_kind(PlotRenderer plot) {
  StageKind k;
  k.help = "Reliability analyses: group agreement, bootstrapped RMSE, model equivalence, ICC";
  k.paths = {{"events", PathRole::input},
             {"reference", PathRole::input, false},
             {"model_scores", PathRole::input, false},
             {"out", PathRole::output},
             {"plot", PathRole::output, false}};
  k.params = {{"mode", ParamType::string, true},
              {"repeats", ParamType::integer, false, 200},
              {"sizes", ParamType::integer_list, false, json::array()},
              {"max_group", ParamType::integer, false, 0},
              {"resampling", ParamType::string, false, "without"},
              {"scale", ParamType::string, false, "auto"}};
  k.randomized = true;
  k.validate = [plot](const json& p) {
    one_of(p, "mode", {"agreement", "rmse", "nmax", "icc"});
    one_of(p, "resampling", {"without", "with"});
    one_of(p, "scale", {"auto", "raw", "normalized"});
    require(p["mode"] != "nmax" || p.contains("model_scores"), ErrorCode::invalid_argument, "nmax needs model_scores");
    require(p["mode"] != "icc" || !p.contains("plot"), ErrorCode::invalid_argument, "icc has no curve to plot");
    require(!p.contains("plot") || static_cast<bool>(plot), ErrorCode::invalid_argument,
            "plot rendering is not available in this build");
  };
  k.run = [plot](StageContext& ctx) {
    const auto mode = ctx.get<std::string>("mode");
    require(mode == "agreement" || mode == "rmse" || mode == "nmax" || mode == "icc", ErrorCode::invalid_argument,
            "mode must be agreement, rmse, nmax or icc");
    auto scale = ctx.get<std::string>("scale");
    if (scale == "auto") scale = mode == "rmse" ? "normalized" : "raw";
    require(scale == "raw" || scale == "normalized", ErrorCode::invalid_argument, "scale must be auto, raw or normalized");
    const auto events = non_test(read_ratings(ctx.path("events")));
    const auto votes = scale == "raw" ? votes_from(events) : votes_from(normalize_scores(events));
    require(!votes.empty(), ErrorCode::precondition, "no non-test rating events");
    const auto repeats = count_param(ctx, "repeats", 1);
    auto sizes = size_list(ctx, "sizes");
    const auto table = tabulate(votes);

    json out = {{"mode", mode}, {"scale", scale}, {"images", table.images.size()}, {"workers", table.workers.size()},
                {"votes", votes.size()}};
    json summary = {{"mode", mode}};
    if (mode == "icc") {
      const auto r = icc(votes);
      out.update({{"icc", r.icc}, {"ms_between", r.ms_between}, {"ms_within", r.ms_within}, {"k0", r.k0}});
      summary["icc"] = r.icc;
    } else if (mode == "agreement") {
      AgreementCurve c;
      if (!sizes.empty()) {
        c = group_agreement_curve(votes, std::span<const std::size_t>(sizes), repeats, ctx.seed());
      } else {
        auto g = count_param(ctx, "max_group");
        if (g == 0) g = table.workers.size() / 2;
        c = group_agreement_curve(votes, g, repeats, ctx.seed());
      }
      out["repeats"] = c.repeats;
      out["curve"] = curve_json(c.points);
      if (!c.points.empty()) summary["final_srocc"] = c.points.back().mean_srocc;
    } else if (mode == "rmse") {
      const auto reference = ctx.has_path("reference") ? read_score_table(ctx.path("reference")) : mos_reference(votes);
      const auto rs = ctx.get<std::string>("resampling");
      require(rs == "without" || rs == "with", ErrorCode::invalid_argument, "resampling must be with or without");
      const auto how = rs == "with" ? Resampling::with_replacement : Resampling::without_replacement;
      if (sizes.empty()) {
        std::size_t fewest = std::numeric_limits<std::size_t>::max();
        for (const auto& list : table.by_image) fewest = std::min(fewest, list.size());
        sizes = one_to(fewest);
      }
      const auto c = bootstrap_rmse_vs_reference(votes, reference, sizes, repeats, ctx.seed(), how);
      json pts = json::array();
      for (const auto& p : c.points)
        pts.push_back({{"size", p.size}, {"mean_rmse", p.mean_rmse}, {"ci_low", p.ci_low}, {"ci_high", p.ci_high}});
      out.update({{"repeats", c.repeats}, {"resampling", rs}, {"reference", ctx.has_path("reference") ? "file" : "mos"},
                  {"curve", pts}});
      if (!c.points.empty()) summary["final_rmse"] = c.points.back().mean_rmse;
    } else {
      require(ctx.has_path("model_scores"), ErrorCode::invalid_argument, "nmax needs model_scores");
      const auto model = read_score_table(ctx.path("model_scores"));
      if (sizes.empty()) sizes = one_to(table.workers.size() - table.workers.size() / 2);
      const auto r = nmax_equivalence(votes, model, sizes, repeats, ctx.seed());
      out.update({{"repeats", r.repeats},
                  {"model_srocc", r.model_srocc},
                  {"crossing", finite_or_null(r.crossing)},
                  {"n_max", r.n_max == kNmaxUnbounded ? json(nullptr) : json(r.n_max)},
                  {"unbounded", r.n_max == kNmaxUnbounded},
                  {"curve", curve_json(r.curve)}});
      summary.update({{"model_srocc", r.model_srocc}, {"n_max", out["n_max"]}});
    }
    write_json(ctx.path("out"), out);
    if (ctx.has_path("plot")) {
      require(mode != "icc", ErrorCode::invalid_argument, "icc has no curve to plot");
      require(static_cast<bool>(plot), ErrorCode::invalid_argument, "plot rendering is not available in this build");
      plot(out, ctx.path("plot"));
    }
    return summary;
  };
  return k;
}

inline StageKind fit_kind(PlotRenderer plot) {
  StageKind k;
  k.help = "Fit y = 1 - 1/(x^a + b) with multi-start least squares and bootstrap CIs";
  k.paths = {{"points", PathRole::input}, {"out", PathRole::output}, {"plot", PathRole::output, false}};
  k.params = {{"restarts", ParamType::integer, false, static_cast<long long>(kDefaultFitRestarts)},
              {"bootstrap", ParamType::integer, false, static_cast<long long>(kDefaultFitBootstrap)},
              {"predict_at", ParamType::number_list, false, json::array()}};
  k.randomized = true;
  k.validate = [plot](const json& p) {
    require(!p.contains("plot") || static_cast<bool>(plot), ErrorCode::invalid_argument,
            "plot rendering is not available in this build");
  };
  k.run = [plot](StageContext& ctx) {
    const auto pts = read_fit_points(ctx.path("points"));
    const auto fit =
        fit_extrapolation(pts, count_param(ctx, "restarts", 1), count_param(ctx, "bootstrap"), ctx.seed());
    json preds = json::array();
    for (const auto& x : ctx.params().at("predict_at")) {
      const auto p = predict(fit, x.get<double>());
      preds.push_back({{"x", x}, {"value", p.value}, {"ci_low", p.ci_low}, {"ci_high", p.ci_high}});
    }
    json points = json::array();
    for (const auto& p : pts) points.push_back({{"x", p.x}, {"y", p.y}});
    const json out = {{"mode", "fit"},
                      {"a", fit.a},
                      {"b", fit.b},
                      {"residual", fit.residual},
                      {"ci_a", {fit.ci_a[0], fit.ci_a[1]}},
                      {"ci_b", {fit.ci_b[0], fit.ci_b[1]}},
                      {"restarts", fit.restarts},
                      {"bootstrap_repeats", fit.bootstrap_repeats},
                      {"bootstrap_skipped", fit.bootstrap_skipped},
                      {"points", points},
                      {"predictions", preds}};
    if (fit.bootstrap_skipped > 0)
      ctx.warn(std::to_string(fit.bootstrap_skipped) + " bootstrap resamples had a single distinct x");
    write_json(ctx.path("out"), out);
    if (ctx.has_path("plot")) {
      require(static_cast<bool>(plot), ErrorCode::invalid_argument, "plot rendering is not available in this build");
      plot(out, ctx.path("plot"));
    }
    return json{{"a", fit.a}, {"b", fit.b}, {"residual", fit.residual}, {"predictions", preds}};
  };
  return k;
}

inline StageKind losses_kind() {
  StageKind k;
  k.help = "Evaluate a training loss row by row over two distribution files";
  k.paths = {{"p", PathRole::input}, {"phat", PathRole::input}, {"out", PathRole::output, false}};
  k.params = {{"loss", ParamType::string, true}, {"delta", ParamType::number, false, kHuberDelta}};
  k.validate = [](const json& p) { parse_loss(p["loss"].get<std::string>()); };
  k.run = [](StageContext& ctx) {
    const auto kind = parse_loss(ctx.get<std::string>("loss"));
    const auto p = read_distributions(ctx.path("p"));
    const auto q = read_distributions(ctx.path("phat"));
    require(p.size() == q.size(), ErrorCode::invalid_argument,
            "p has " + std::to_string(p.size()) + " rows, phat has " + std::to_string(q.size()));
    const double delta = ctx.get<double>("delta");
    std::vector<double> values;
    for (std::size_t i = 0; i < p.size(); ++i) values.push_back(evaluate_loss(kind, p[i], q[i], delta));
    const double mean =
        values.empty() ? 0.0 : std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
    const json summary = {{"loss", ctx.get<std::string>("loss")}, {"rows", values.size()}, {"mean", mean}, {"values", values}};
    if (ctx.has_path("out")) write_json(ctx.path("out"), summary);
    return summary;
  };
  return k;
}

}  // namespace detail

// `plot` is used by analyze and fit when a plot path is given.
inline StageRegistry core_stages(PlotRenderer plot = {}) {
  return {{"trim", detail::trim_kind()},
          {"features-check", detail::features_check_kind()},
          {"sample-tags", detail::sample_tags_kind()},
          {"sample-diverse", detail::sample_diverse_kind()},
          {"dedup", detail::dedup_kind()},
          {"ratings", detail::ratings_kind()},
          {"mos", detail::mos_kind()},
          {"analyze", detail::analyze_kind(plot)},
          {"fit", detail::fit_kind(plot)},
          {"losses", detail::losses_kind()}};
}

}  // namespace curation_forge

#pragma once

// Correlation statistics and the reliability analyses run on crowd votes:
// bootstrapped RMSE against a reference, inter-group agreement curves,
// model-to-group equivalence, ICC, and the training-size extrapolation fit.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include <Eigen/Core>
#include <unsupported/Eigen/NonLinearOptimization>

#include "curation_forge/catalog.hpp"
#include "curation_forge/error.hpp"
#include "curation_forge/parallel.hpp"
#include "curation_forge/random.hpp"
#include "curation_forge/ratings.hpp"

namespace curation_forge {

// ---------------------------------------------------------------------------
// Correlations

inline constexpr std::size_t kMinStatLength = 3;

namespace detail {

inline void check_stat_inputs(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size(), ErrorCode::invalid_argument, "statistic inputs differ in length");
  require(x.size() >= kMinStatLength, ErrorCode::precondition, "statistics need at least 3 values");
}

}  // namespace detail

// 1-based ranks; tied values share the mean of their positions.
inline std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

inline double plcc(std::span<const double> x, std::span<const double> y) {
  detail::check_stat_inputs(x, y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  require(sxx > 0 && syy > 0, ErrorCode::degenerate, "correlation of a constant series is undefined");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

inline double srocc(std::span<const double> x, std::span<const double> y) {
  detail::check_stat_inputs(x, y);
  const auto rx = average_ranks(x), ry = average_ranks(y);
  return plcc(rx, ry);
}

inline double rmse(std::span<const double> x, std::span<const double> y) {
  detail::check_stat_inputs(x, y);
  double ss = 0;
  for (std::size_t i = 0; i < x.size(); ++i) ss += (x[i] - y[i]) * (x[i] - y[i]);
  return std::sqrt(ss / static_cast<double>(x.size()));
}

// Linear-interpolated quantile of sorted data (q in [0, 1]).
inline double quantile_sorted(std::span<const double> sorted, double q) {
  require(!sorted.empty(), ErrorCode::precondition, "quantile of an empty sample");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

// ---------------------------------------------------------------------------
// Votes

struct Vote {
  std::string worker_id;
  std::string image_id;
  double score = 0.0;
};

// Main-task events only; test-question answers are not votes.
inline std::vector<Vote> votes_from(std::span<const RatingEvent> events) {
  std::vector<Vote> out;
  for (const auto& ev : events)
    if (!ev.is_test) out.push_back({ev.worker_id, ev.image_id, static_cast<double>(ev.score)});
  return out;
}

inline std::vector<Vote> votes_from(std::span<const NormalizedEvent> events) {
  std::vector<Vote> out;
  out.reserve(events.size());
  for (const auto& ev : events) out.push_back({ev.worker_id, ev.image_id, ev.normalized});
  return out;
}

namespace detail {

// Votes indexed by dense worker/image numbers, both in id order.
struct VoteTable {
  std::vector<std::string> workers, images;
  std::vector<std::vector<std::pair<std::size_t, double>>> by_image;  // (worker, score)
};

inline VoteTable tabulate(std::span<const Vote> votes) {
  VoteTable t;
  std::map<std::string, std::size_t> w, im;
  for (const auto& v : votes) {
    require(std::isfinite(v.score), ErrorCode::invalid_argument, "vote score must be finite");
    w.emplace(v.worker_id, 0);
    im.emplace(v.image_id, 0);
  }
  for (auto& [id, idx] : w) {
    idx = t.workers.size();
    t.workers.push_back(id);
  }
  for (auto& [id, idx] : im) {
    idx = t.images.size();
    t.images.push_back(id);
  }
  t.by_image.resize(t.images.size());
  for (const auto& v : votes) t.by_image[im.at(v.image_id)].emplace_back(w.at(v.worker_id), v.score);
  for (auto& list : t.by_image) std::sort(list.begin(), list.end());
  return t;
}

// Mean of sorted values, so the result is independent of sampling order.
inline double sorted_mean(std::vector<double>& v) {
  std::sort(v.begin(), v.end());
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// Per-image MOS over workers flagged in `member`; count 0 where none voted.
struct GroupMos {
  std::vector<double> mos;
  std::vector<std::size_t> count;
};

inline GroupMos group_mos(const VoteTable& t, const std::vector<char>& member) {
  GroupMos g{std::vector<double>(t.images.size(), 0.0), std::vector<std::size_t>(t.images.size(), 0)};
  std::vector<double> buf;
  for (std::size_t i = 0; i < t.images.size(); ++i) {
    buf.clear();
    for (const auto& [w, s] : t.by_image[i])
      if (member[w]) buf.push_back(s);
    if (buf.empty()) continue;
    g.count[i] = buf.size();
    g.mos[i] = sorted_mean(buf);
  }
  return g;
}

inline std::uint64_t stage_seed(std::uint64_t seed, std::size_t stage) { return mix_seed(seed, 0x5eed0000ULL + stage); }

}  // namespace detail

// ---------------------------------------------------------------------------
// Bootstrapped RMSE of subsampled MOS against a reference

enum class Resampling { without_replacement, with_replacement };

struct RmsePoint {
  std::size_t size = 0;  // ratings per image
  double mean_rmse = 0.0;
  double ci_low = 0.0, ci_high = 0.0;  // 2.5 / 97.5 percentiles over repeats
};

struct RmseCurve {
  std::vector<RmsePoint> points;
  std::size_t repeats = 0;
  std::size_t images = 0;
  Resampling mode = Resampling::without_replacement;
};

inline RmseCurve bootstrap_rmse_vs_reference(std::span<const Vote> votes, const std::map<std::string, double>& reference,
                                             std::span<const std::size_t> sizes, std::size_t repeats,
                                             std::uint64_t seed,
                                             Resampling mode = Resampling::without_replacement) {
  require(repeats >= 1, ErrorCode::invalid_argument, "repeats must be >= 1");
  const auto t = detail::tabulate(votes);
  require(t.images.size() >= kMinStatLength, ErrorCode::precondition, "need at least 3 rated images");
  std::vector<double> ref(t.images.size());
  for (std::size_t i = 0; i < t.images.size(); ++i) {
    const auto it = reference.find(t.images[i]);
    require(it != reference.end(), ErrorCode::precondition, "reference has no MOS for image " + t.images[i]);
    ref[i] = it->second;
  }
  std::size_t fewest = std::numeric_limits<std::size_t>::max();
  for (const auto& list : t.by_image) fewest = std::min(fewest, list.size());

  RmseCurve curve;
  curve.repeats = repeats;
  curve.images = t.images.size();
  curve.mode = mode;
  for (std::size_t si = 0; si < sizes.size(); ++si) {
    const std::size_t k = sizes[si];
    require(k >= 1, ErrorCode::invalid_argument, "subsample size must be >= 1");
    if (mode == Resampling::without_replacement)
      require(k <= fewest, ErrorCode::precondition,
              "subsample size " + std::to_string(k) + " exceeds the " + std::to_string(fewest) +
                  " ratings available for some image (without replacement)");
    std::vector<double> per_repeat(repeats);
    parallel_for(
        repeats,
        [&](std::size_t r) {
          auto rng = make_rng(detail::stage_seed(seed, si), r);
          std::vector<double> pool, pick, mos(t.images.size());
          for (std::size_t i = 0; i < t.images.size(); ++i) {
            const auto& list = t.by_image[i];
            pick.clear();
            if (mode == Resampling::with_replacement) {
              for (std::size_t j = 0; j < k; ++j) pick.push_back(list[uniform_index(rng, list.size())].second);
            } else {
              pool.clear();
              for (const auto& wv : list) pool.push_back(wv.second);
              for (std::size_t j = 0; j < k; ++j) {  // partial Fisher-Yates
                std::swap(pool[j], pool[j + uniform_index(rng, pool.size() - j)]);
                pick.push_back(pool[j]);
              }
            }
            mos[i] = detail::sorted_mean(pick);
          }
          per_repeat[r] = rmse(mos, ref);
        },
        8);
    double sum = 0;
    for (double v : per_repeat) sum += v;
    std::sort(per_repeat.begin(), per_repeat.end());
    curve.points.push_back({k, sum / static_cast<double>(repeats), quantile_sorted(per_repeat, 0.025),
                            quantile_sorted(per_repeat, 0.975)});
  }
  return curve;
}

// ---------------------------------------------------------------------------
// Agreement between disjoint groups of workers

struct AgreementPoint {
  std::size_t group_size = 0;    // workers per group
  double votes_per_image = 0.0;  // mean over compared images and both groups
  double mean_srocc = 0.0;
  double ci_half_width = 0.0;  // 1.96 standard errors of the mean
  std::size_t used_repeats = 0;  // repeats with a defined correlation
};

struct AgreementCurve {
  std::vector<AgreementPoint> points;
  std::size_t repeats = 0;
};

namespace detail {

struct RepeatSample {
  bool ok = false;
  double srocc = 0.0;
  double votes_per_image = 0.0;
};

// SROCC between `a` and `b` on images both cover; for the votes-per-image
// figure only the counts of `a` (and of `b` when `both`) are averaged.
inline RepeatSample compare_groups(const GroupMos& a, const GroupMos& b, bool both) {
  std::vector<double> x, y;
  double votes = 0;
  for (std::size_t i = 0; i < a.mos.size(); ++i) {
    if (a.count[i] == 0 || b.count[i] == 0) continue;
    x.push_back(a.mos[i]);
    y.push_back(b.mos[i]);
    votes += both ? 0.5 * static_cast<double>(a.count[i] + b.count[i]) : static_cast<double>(a.count[i]);
  }
  RepeatSample s;
  if (x.size() < kMinStatLength) return s;
  const auto cx = std::minmax_element(x.begin(), x.end()), cy = std::minmax_element(y.begin(), y.end());
  if (*cx.first == *cx.second || *cy.first == *cy.second) return s;
  s.ok = true;
  s.srocc = srocc(x, y);
  s.votes_per_image = votes / static_cast<double>(x.size());
  return s;
}

inline AgreementPoint summarize(std::size_t group_size, const std::vector<RepeatSample>& samples) {
  AgreementPoint p;
  p.group_size = group_size;
  double s = 0, v = 0;
  for (const auto& r : samples)
    if (r.ok) {
      ++p.used_repeats;
      s += r.srocc;
      v += r.votes_per_image;
    }
  require(p.used_repeats > 0, ErrorCode::degenerate,
          "no repeat at group size " + std::to_string(group_size) + " produced a defined correlation");
  const double n = static_cast<double>(p.used_repeats);
  p.mean_srocc = s / n;
  p.votes_per_image = v / n;
  if (p.used_repeats > 1) {
    double ss = 0;
    for (const auto& r : samples)
      if (r.ok) ss += (r.srocc - p.mean_srocc) * (r.srocc - p.mean_srocc);
    p.ci_half_width = 1.96 * std::sqrt(ss / (n - 1) / n);
  }
  return p;
}

inline void check_sizes(std::span<const std::size_t> sizes, std::size_t limit, const char* what) {
  require(!sizes.empty(), ErrorCode::invalid_argument, "no group sizes given");
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    require(sizes[i] >= 1, ErrorCode::invalid_argument, "group sizes must be >= 1");
    require(i == 0 || sizes[i] > sizes[i - 1], ErrorCode::invalid_argument, "group sizes must be strictly increasing");
  }
  require(sizes.back() <= limit, ErrorCode::precondition,
          std::string("insufficient workers: ") + what + " allows groups of at most " + std::to_string(limit) +
              ", requested " + std::to_string(sizes.back()));
}

// One draw: two disjoint groups of g workers from a fresh shuffle.
inline RepeatSample agreement_repeat(const VoteTable& t, std::size_t g, Rng& rng) {
  std::vector<std::size_t> order(t.workers.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  shuffle(order.begin(), order.end(), rng);
  std::vector<char> in_a(order.size(), 0), in_b(order.size(), 0);
  for (std::size_t j = 0; j < g; ++j) {
    in_a[order[j]] = 1;
    in_b[order[g + j]] = 1;
  }
  return compare_groups(group_mos(t, in_a), group_mos(t, in_b), true);
}

}  // namespace detail

inline AgreementCurve group_agreement_curve(std::span<const Vote> votes, std::span<const std::size_t> group_sizes,
                                            std::size_t repeats, std::uint64_t seed) {
  require(repeats >= 1, ErrorCode::invalid_argument, "repeats must be >= 1");
  const auto t = detail::tabulate(votes);
  detail::check_sizes(group_sizes, t.workers.size() / 2, "two disjoint groups");
  AgreementCurve curve;
  curve.repeats = repeats;
  for (std::size_t si = 0; si < group_sizes.size(); ++si) {
    std::vector<detail::RepeatSample> samples(repeats);
    parallel_for(
        repeats,
        [&](std::size_t r) {
          auto rng = make_rng(detail::stage_seed(seed, si), r);
          samples[r] = detail::agreement_repeat(t, group_sizes[si], rng);
        },
        4);
    curve.points.push_back(detail::summarize(group_sizes[si], samples));
  }
  return curve;
}

inline AgreementCurve group_agreement_curve(std::span<const Vote> votes, std::size_t max_group_size,
                                            std::size_t repeats, std::uint64_t seed) {
  std::vector<std::size_t> sizes(max_group_size);
  std::iota(sizes.begin(), sizes.end(), std::size_t{1});
  return group_agreement_curve(votes, sizes, repeats, seed);
}

// ---------------------------------------------------------------------------
// Model-to-group equivalence

inline constexpr std::size_t kNmaxUnbounded = std::numeric_limits<std::size_t>::max();

struct NmaxResult {
  double model_srocc = 0.0;  // mean over repeats, against the ground-truth half
  std::vector<AgreementPoint> curve;  // groups from the other half vs the ground truth
  double crossing = 0.0;  // interpolated votes per image; +inf when unbounded
  std::size_t n_max = 0;  // floor(crossing), or kNmaxUnbounded
  std::size_t repeats = 0;
};

namespace detail {

// Largest x at which the piecewise-linear curve is <= level. Below the first
// point the first segment is extended toward zero.
inline double crossing_point(const std::vector<AgreementPoint>& c, double level) {
  if (c.back().mean_srocc <= level) return std::numeric_limits<double>::infinity();
  for (std::size_t i = c.size() - 1; i-- > 0;) {
    const auto &p = c[i], &q = c[i + 1];
    if (p.mean_srocc <= level && level < q.mean_srocc)
      return p.votes_per_image +
             (level - p.mean_srocc) / (q.mean_srocc - p.mean_srocc) * (q.votes_per_image - p.votes_per_image);
  }
  if (c.size() < 2 || c[1].mean_srocc <= c[0].mean_srocc) return 0.0;
  const auto &p = c[0], &q = c[1];
  const double x = p.votes_per_image -
                   (p.mean_srocc - level) / (q.mean_srocc - p.mean_srocc) * (q.votes_per_image - p.votes_per_image);
  return std::max(0.0, x);
}

}  // namespace detail

inline NmaxResult nmax_equivalence(std::span<const Vote> votes, const std::map<std::string, double>& model_scores,
                                   std::span<const std::size_t> group_sizes, std::size_t repeats,
                                   std::uint64_t seed) {
  require(repeats >= 1, ErrorCode::invalid_argument, "repeats must be >= 1");
  const auto t = detail::tabulate(votes);
  std::vector<double> model(t.images.size());
  for (std::size_t i = 0; i < t.images.size(); ++i) {
    const auto it = model_scores.find(t.images[i]);
    require(it != model_scores.end(), ErrorCode::precondition, "model scores do not cover image " + t.images[i]);
    model[i] = it->second;
  }
  const std::size_t truth_half = t.workers.size() / 2;
  detail::check_sizes(group_sizes, t.workers.size() - truth_half, "the non-truth half");
  const detail::GroupMos model_mos{model, std::vector<std::size_t>(model.size(), 1)};

  struct Draw {
    detail::RepeatSample model;
    std::vector<detail::RepeatSample> groups;
  };
  std::vector<Draw> draws(repeats);
  parallel_for(
      repeats,
      [&](std::size_t r) {
        auto rng = make_rng(detail::stage_seed(seed, 0), r);
        std::vector<std::size_t> order(t.workers.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        shuffle(order.begin(), order.end(), rng);
        std::vector<char> in_truth(order.size(), 0);
        for (std::size_t j = 0; j < truth_half; ++j) in_truth[order[j]] = 1;
        const auto truth = detail::group_mos(t, in_truth);
        draws[r].model = detail::compare_groups(truth, model_mos, false);
        std::vector<std::size_t> rest(order.begin() + static_cast<std::ptrdiff_t>(truth_half), order.end());
        for (std::size_t g : group_sizes) {
          shuffle(rest.begin(), rest.end(), rng);
          std::vector<char> in_group(order.size(), 0);
          for (std::size_t j = 0; j < g; ++j) in_group[rest[j]] = 1;
          draws[r].groups.push_back(detail::compare_groups(detail::group_mos(t, in_group), truth, false));
        }
      },
      4);

  NmaxResult res;
  res.repeats = repeats;
  std::vector<detail::RepeatSample> model_samples;
  for (const auto& d : draws) model_samples.push_back(d.model);
  res.model_srocc = detail::summarize(0, model_samples).mean_srocc;
  for (std::size_t si = 0; si < group_sizes.size(); ++si) {
    std::vector<detail::RepeatSample> samples;
    for (const auto& d : draws) samples.push_back(d.groups[si]);
    res.curve.push_back(detail::summarize(group_sizes[si], samples));
  }
  res.crossing = detail::crossing_point(res.curve, res.model_srocc);
  res.n_max = std::isinf(res.crossing) ? kNmaxUnbounded : static_cast<std::size_t>(std::floor(res.crossing));
  return res;
}

// ---------------------------------------------------------------------------
// Intra-class correlation

struct IccResult {
  double icc = 0.0;
  double ms_between = 0.0, ms_within = 0.0;
  double k0 = 0.0;  // effective ratings per image for unbalanced designs
  std::size_t images = 0, ratings = 0;
};

// ICC(1,1): one-way random effects with images as targets, single measure.
inline IccResult icc(std::span<const Vote> votes) {
  const auto t = detail::tabulate(votes);
  require(t.workers.size() >= 2 && t.images.size() >= 2, ErrorCode::precondition,
          "ICC needs at least 2 workers and 2 images");
  const double n = static_cast<double>(t.images.size());
  double total = 0, big_n = 0, sum_k2 = 0;
  for (const auto& list : t.by_image) {
    for (const auto& wv : list) total += wv.second;
    big_n += static_cast<double>(list.size());
    sum_k2 += static_cast<double>(list.size() * list.size());
  }
  require(big_n > n, ErrorCode::degenerate, "ICC needs some image with more than one rating");
  const double grand = total / big_n;
  double ssb = 0, ssw = 0;
  for (const auto& list : t.by_image) {
    double m = 0;
    for (const auto& wv : list) m += wv.second;
    m /= static_cast<double>(list.size());
    ssb += static_cast<double>(list.size()) * (m - grand) * (m - grand);
    for (const auto& wv : list) ssw += (wv.second - m) * (wv.second - m);
  }
  IccResult r;
  r.images = t.images.size();
  r.ratings = static_cast<std::size_t>(big_n);
  r.ms_between = ssb / (n - 1);
  r.ms_within = ssw / (big_n - n);
  r.k0 = (big_n - sum_k2 / big_n) / (n - 1);
  const double denom = r.ms_between + (r.k0 - 1) * r.ms_within;
  require(denom > 0, ErrorCode::degenerate, "ICC is undefined when every rating is identical");
  r.icc = (r.ms_between - r.ms_within) / denom;
  return r;
}

// ---------------------------------------------------------------------------
// Training-size extrapolation: f(x) = 1 - 1 / (x^a + b)

struct FitPoint {
  double x = 0.0;
  double y = 0.0;
};

struct FitResult {
  double a = 0.0, b = 0.0;
  double residual = 0.0;  // sum of squared residuals
  std::array<double, 2> ci_a{}, ci_b{};  // 2.5 / 97.5 bootstrap percentiles
  std::size_t restarts = 0;
  std::size_t bootstrap_repeats = 0;  // resamples that produced a fit
  std::size_t bootstrap_skipped = 0;  // resamples with a single distinct x
  std::vector<std::pair<double, double>> bootstrap;  // (a, b) per resample
};

inline double extrapolation_curve(double x, double a, double b) { return 1.0 - 1.0 / (std::pow(x, a) + b); }

inline constexpr std::size_t kDefaultFitRestarts = 16;
inline constexpr std::size_t kDefaultFitBootstrap = 200;

namespace detail {

// Residuals y - f(x) in log-parameters (u, v) = (log a, log b).
struct ExtrapolationFunctor {
  using Scalar = double;
  enum { InputsAtCompileTime = Eigen::Dynamic, ValuesAtCompileTime = Eigen::Dynamic };
  using InputType = Eigen::VectorXd;
  using ValueType = Eigen::VectorXd;
  using JacobianType = Eigen::MatrixXd;

  const std::vector<FitPoint>* pts;

  int inputs() const { return 2; }
  int values() const { return static_cast<int>(pts->size()); }

  static constexpr double kHuge = 1e150;

  int operator()(const Eigen::VectorXd& p, Eigen::VectorXd& fvec) const {
    const double a = std::exp(p[0]), b = std::exp(p[1]);
    for (std::size_t i = 0; i < pts->size(); ++i) {
      const double xa = std::pow((*pts)[i].x, a);
      const double f = (xa + b > kHuge || !std::isfinite(xa)) ? 1.0 : 1.0 - 1.0 / (xa + b);
      fvec[static_cast<Eigen::Index>(i)] = (*pts)[i].y - f;
    }
    return 0;
  }

  int df(const Eigen::VectorXd& p, Eigen::MatrixXd& jac) const {
    const double a = std::exp(p[0]), b = std::exp(p[1]);
    for (std::size_t i = 0; i < pts->size(); ++i) {
      const auto row = static_cast<Eigen::Index>(i);
      const double x = (*pts)[i].x, xa = std::pow(x, a), z = xa + b;
      if (!std::isfinite(xa) || z > kHuge) {
        jac(row, 0) = jac(row, 1) = 0.0;
        continue;
      }
      // df/da = x^a ln x / z^2, df/db = 1 / z^2; residual is y - f.
      jac(row, 0) = -(xa / z) * (std::log(x) / z) * a;
      jac(row, 1) = -(1.0 / z) * (b / z);
    }
    return 0;
  }
};

inline double fit_rss(const std::vector<FitPoint>& pts, double a, double b) {
  double ss = 0;
  for (const auto& p : pts) {
    const double r = p.y - extrapolation_curve(p.x, a, b);
    ss += r * r;
  }
  return ss;
}

// Best of `restarts` local descents from a prefix-stable start sequence.
inline std::pair<double, double> fit_multistart(const std::vector<FitPoint>& pts, std::size_t restarts,
                                                std::uint64_t seed) {
  auto rng = make_rng(seed);
  ExtrapolationFunctor fn{&pts};
  double best_a = 1.0, best_b = 1.0, best = std::numeric_limits<double>::infinity();
  for (std::size_t s = 0; s < restarts; ++s) {
    Eigen::VectorXd p(2);
    if (s == 0) {
      p << std::log(0.5), 0.0;
    } else {
      p << std::log(0.02) + uniform_unit(rng) * (std::log(3.0) - std::log(0.02)),
          std::log(1e-3) + uniform_unit(rng) * (std::log(1e3) - std::log(1e-3));
    }
    Eigen::LevenbergMarquardt<ExtrapolationFunctor> lm(fn);
    lm.parameters.ftol = 1e-15;
    lm.parameters.xtol = 1e-15;
    lm.parameters.maxfev = 2000;
    lm.minimize(p);
    if (!p.allFinite()) continue;
    const double a = std::exp(p[0]), b = std::exp(p[1]);
    const double rss = fit_rss(pts, a, b);
    if (std::isfinite(rss) && rss < best) {
      best = rss;
      best_a = a;
      best_b = b;
    }
  }
  require(std::isfinite(best), ErrorCode::degenerate, "extrapolation fit did not converge from any start");
  return {best_a, best_b};
}

inline bool has_two_sizes(const std::vector<FitPoint>& pts) {
  for (const auto& p : pts)
    if (p.x != pts.front().x) return true;
  return false;
}

}  // namespace detail

inline FitResult fit_extrapolation(std::span<const FitPoint> points, std::size_t restarts = kDefaultFitRestarts,
                                   std::size_t bootstrap = kDefaultFitBootstrap, std::uint64_t seed = 0) {
  require(points.size() >= 3, ErrorCode::precondition, "extrapolation fit needs at least 3 points");
  require(restarts >= 1, ErrorCode::invalid_argument, "restarts must be >= 1");
  for (const auto& p : points) {
    require(std::isfinite(p.x) && p.x > 0, ErrorCode::precondition, "training sizes must be > 0");
    require(p.y > 0 && p.y < 1, ErrorCode::precondition, "scores must lie in (0, 1)");
  }
  std::vector<FitPoint> pts(points.begin(), points.end());
  require(detail::has_two_sizes(pts), ErrorCode::degenerate, "all points share one training size");

  FitResult res;
  res.restarts = restarts;
  std::tie(res.a, res.b) = detail::fit_multistart(pts, restarts, detail::stage_seed(seed, 0));
  res.residual = detail::fit_rss(pts, res.a, res.b);

  std::vector<std::optional<std::pair<double, double>>> boot(bootstrap);
  parallel_for(
      bootstrap,
      [&](std::size_t r) {
        auto rng = make_rng(detail::stage_seed(seed, 1), r);
        std::vector<FitPoint> sample;
        for (std::size_t i = 0; i < pts.size(); ++i) sample.push_back(pts[uniform_index(rng, pts.size())]);
        if (!detail::has_two_sizes(sample)) return;
        try {
          boot[r] = detail::fit_multistart(sample, restarts, mix_seed(detail::stage_seed(seed, 2), r));
        } catch (const Error&) {
        }
      },
      4);
  std::vector<double> as, bs;
  for (const auto& o : boot) {
    if (!o) {
      ++res.bootstrap_skipped;
      continue;
    }
    res.bootstrap.push_back(*o);
    as.push_back(o->first);
    bs.push_back(o->second);
  }
  res.bootstrap_repeats = res.bootstrap.size();
  if (!as.empty()) {
    std::sort(as.begin(), as.end());
    std::sort(bs.begin(), bs.end());
    res.ci_a = {quantile_sorted(as, 0.025), quantile_sorted(as, 0.975)};
    res.ci_b = {quantile_sorted(bs, 0.025), quantile_sorted(bs, 0.975)};
  } else {
    res.ci_a = {res.a, res.a};
    res.ci_b = {res.b, res.b};
  }
  return res;
}

struct Prediction {
  double value = 0.0;
  double ci_low = 0.0, ci_high = 0.0;
};

// Fitted value at x with percentile bounds over the bootstrap fits.
inline Prediction predict(const FitResult& fit, double x) {
  require(x > 0, ErrorCode::invalid_argument, "prediction size must be > 0");
  Prediction p{extrapolation_curve(x, fit.a, fit.b), 0.0, 0.0};
  std::vector<double> v;
  for (const auto& [a, b] : fit.bootstrap) v.push_back(extrapolation_curve(x, a, b));
  if (v.empty()) {
    p.ci_low = p.ci_high = p.value;
    return p;
  }
  std::sort(v.begin(), v.end());
  p.ci_low = quantile_sorted(v, 0.025);
  p.ci_high = quantile_sorted(v, 0.975);
  return p;
}

}  // namespace curation_forge

#pragma once

// Content quantization (k-means codebook over deep features), sampling toward
// uniform per-dimension histograms, and closest-pair near-duplicate removal.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "curation_forge/catalog.hpp"
#include "curation_forge/error.hpp"
#include "curation_forge/indicators.hpp"
#include "curation_forge/parallel.hpp"
#include "curation_forge/random.hpp"

namespace curation_forge {

inline constexpr std::size_t kDefaultClusters = 200;
inline constexpr std::size_t kDefaultBins = 200;
inline constexpr std::size_t kMaxKmeansIterations = 300;
inline constexpr std::size_t kExactSizeCap = 24;
// Independent greedy + swap runs per local search; one run alone misses the
// optimum on roughly one small instance in eight.
inline constexpr std::size_t kDefaultRestarts = 16;

// ---------------------------------------------------------------------------
// Codebook

struct ContentCodebook {
  std::size_t k = 0;
  std::size_t dim = 0;
  std::uint64_t seed = 0;
  std::vector<std::vector<double>> centroids;
  std::size_t iterations = 0;
  bool converged = false;
};

namespace detail {

inline double squared_distance(std::span<const float> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    s += d * d;
  }
  return s;
}

}  // namespace detail

inline std::size_t assign(const ContentCodebook& book, std::span<const float> feature) {
  require(feature.size() == book.dim, ErrorCode::mixed_dimension,
          "feature has dimension " + std::to_string(feature.size()) + ", codebook expects " +
              std::to_string(book.dim));
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < book.centroids.size(); ++c) {
    const double d = detail::squared_distance(feature, book.centroids[c]);
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

inline std::size_t assign(const ContentCodebook& book, const FeatureVector& feature) {
  return assign(book, std::span<const float>(feature.values));
}

// k-means++ seeding, then Lloyd iterations until the assignment stops changing
// (or the iteration cap). An emptied cluster is re-seeded with the point
// farthest from its current centroid.
inline ContentCodebook fit_codebook(std::span<const FeatureVector> features, std::size_t k,
                                    std::uint64_t seed) {
  require(k >= 1, ErrorCode::invalid_argument, "k must be >= 1");
  require(features.size() >= k, ErrorCode::precondition,
          "k-means needs at least k = " + std::to_string(k) + " points, got " +
              std::to_string(features.size()));
  const std::size_t n = features.size(), dim = features[0].dim();
  for (const auto& f : features)
    require(f.dim() == dim, ErrorCode::mixed_dimension, "features have mixed dimensions");

  ContentCodebook book;
  book.k = k;
  book.dim = dim;
  book.seed = seed;
  auto rng = make_rng(seed);
  auto as_double = [&](std::size_t i) {
    return std::vector<double>(features[i].values.begin(), features[i].values.end());
  };

  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  book.centroids.push_back(as_double(uniform_index(rng, n)));
  while (book.centroids.size() < k) {
    const auto& last = book.centroids.back();
    parallel_for(n, [&](std::size_t i) {
      d2[i] = std::min(d2[i], detail::squared_distance(features[i].values, last));
    });
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    std::size_t pick = 0;
    if (total > 0.0) {
      double r = uniform_unit(rng) * total;
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        if (d2[i] > 0.0 && r < d2[i]) {
          pick = i;
          break;
        }
        r -= d2[i];
      }
      while (d2[pick] == 0.0) --pick;  // round-off fallback onto a positive-weight point
    } else {
      pick = uniform_index(rng, n);
    }
    book.centroids.push_back(as_double(pick));
  }

  std::vector<std::size_t> labels(n, k), next(n);
  std::vector<double> dist(n);
  for (std::size_t it = 0; it < kMaxKmeansIterations; ++it) {
    parallel_for(n, [&](std::size_t i) {
      next[i] = assign(book, features[i]);
      dist[i] = detail::squared_distance(features[i].values, book.centroids[next[i]]);
    });
    if (next == labels) {
      book.converged = true;
      break;
    }
    labels = next;
    book.iterations = it + 1;

    std::vector<std::vector<double>> sums(k, std::vector<double>(dim, 0.0));
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++counts[labels[i]];
      for (std::size_t j = 0; j < dim; ++j) sums[labels[i]][j] += features[i].values[j];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) {
        const auto far = static_cast<std::size_t>(std::max_element(dist.begin(), dist.end()) - dist.begin());
        book.centroids[c] = as_double(far);
        dist[far] = 0.0;
        continue;
      }
      for (std::size_t j = 0; j < dim; ++j) book.centroids[c][j] = sums[c][j] / static_cast<double>(counts[c]);
    }
  }
  return book;
}

// ---------------------------------------------------------------------------
// Quantization

// Seven scalar indicators per image. Absent JPEG quality is imputed with the
// mean of the present values (0 when none are present).
inline std::vector<std::array<double, 7>> indicator_matrix(std::span<const IndicatorVector> vectors) {
  double jpeg_sum = 0.0;
  std::size_t jpeg_n = 0;
  for (const auto& v : vectors)
    if (v.jpeg_quality) {
      jpeg_sum += *v.jpeg_quality;
      ++jpeg_n;
    }
  const double jpeg_fill = jpeg_n ? jpeg_sum / static_cast<double>(jpeg_n) : 0.0;
  std::vector<std::array<double, 7>> out;
  out.reserve(vectors.size());
  for (const auto& v : vectors) {
    std::array<double, 7> row{};
    for (std::size_t d = 0; d < kScalarIndicators.size(); ++d)
      row[d] = indicator_value(v, kScalarIndicators[d]).value_or(jpeg_fill);
    for (double x : row) require(std::isfinite(x), ErrorCode::invalid_argument, "non-finite indicator in " + v.image_id);
    out.push_back(row);
  }
  return out;
}

// Equal-width bins over [min, max] of one column; max lands in bin N - 1,
// a constant column goes entirely to bin 0.
inline std::vector<std::uint32_t> quantize_column(std::span<const double> values, std::size_t bins) {
  require(bins >= 1, ErrorCode::invalid_argument, "bin count must be >= 1");
  std::vector<std::uint32_t> out(values.size(), 0);
  if (values.empty()) return out;
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *lo_it, hi = *hi_it;
  if (!(hi > lo)) return out;
  const double nb = static_cast<double>(bins);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double b = std::floor((values[i] - lo) / (hi - lo) * nb);
    out[i] = static_cast<std::uint32_t>(std::min(b, nb - 1.0));
  }
  return out;
}

// Per image, one bin index per scalar indicator.
inline std::vector<std::array<std::uint32_t, 7>> quantize_indicators(std::span<const IndicatorVector> vectors,
                                                                     std::size_t bins) {
  const auto m = indicator_matrix(vectors);
  std::vector<std::array<std::uint32_t, 7>> out(m.size());
  std::vector<double> col(m.size());
  for (std::size_t d = 0; d < 7; ++d) {
    for (std::size_t i = 0; i < m.size(); ++i) col[i] = m[i][d];
    const auto q = quantize_column(col, bins);
    for (std::size_t i = 0; i < m.size(); ++i) out[i][d] = q[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Uniform-histogram sampling

struct HistogramDimension {
  std::string name;
  std::size_t bins = 0;
  std::vector<std::uint32_t> labels;  // per image, in [0, bins)
};

struct HistogramProblem {
  std::vector<std::string> ids;
  std::vector<HistogramDimension> dims;
};

enum class SamplingMode { exact, local_search };

struct SamplingPlan {
  SamplingMode mode = SamplingMode::local_search;
  std::size_t target = 0;
  std::vector<std::size_t> selected;  // ascending population indices
  std::vector<std::string> selected_ids;
  std::vector<std::string> dim_names;
  std::vector<std::vector<std::size_t>> histograms;  // per dimension
  double objective = 0.0;
  std::vector<double> trace;  // objective after construction and after each accepted swap
  std::size_t restarts = 0;
};

inline void validate(const HistogramProblem& p) {
  for (const auto& d : p.dims) {
    require(d.bins >= 1, ErrorCode::invalid_argument, "dimension " + d.name + " has no bins");
    require(d.labels.size() == p.ids.size(), ErrorCode::invalid_argument,
            "dimension " + d.name + " has " + std::to_string(d.labels.size()) + " labels for " +
                std::to_string(p.ids.size()) + " images");
    for (auto b : d.labels)
      require(b < d.bins, ErrorCode::invalid_argument, "bin index out of range in dimension " + d.name);
  }
}

// Sum over dimensions of the L1 distance between the selection histogram and
// the uniform target M / bins.
inline double histogram_objective(const HistogramProblem& p, std::span<const std::size_t> selection) {
  const double m = static_cast<double>(selection.size());
  double total = 0.0;
  for (const auto& d : p.dims) {
    std::vector<std::size_t> h(d.bins, 0);
    for (auto i : selection) ++h[d.labels[i]];
    const double t = m / static_cast<double>(d.bins);
    for (auto c : h) total += std::abs(static_cast<double>(c) - t);
  }
  return total;
}

// Seven quantized indicators plus the content cluster as an eighth dimension.
inline HistogramProblem make_indicator_problem(std::span<const IndicatorVector> vectors, std::size_t bins,
                                               std::size_t clusters) {
  HistogramProblem p;
  const auto q = quantize_indicators(vectors, bins);
  for (const auto& v : vectors) p.ids.push_back(v.image_id);
  for (std::size_t d = 0; d < 7; ++d) {
    HistogramDimension dim{std::string(indicator_name(kScalarIndicators[d])), bins, {}};
    for (const auto& row : q) dim.labels.push_back(row[d]);
    p.dims.push_back(std::move(dim));
  }
  if (clusters > 0) {
    HistogramDimension dim{"content", clusters, {}};
    for (const auto& v : vectors) {
      require(v.content_cluster.has_value(), ErrorCode::precondition, v.image_id + " has no content cluster");
      require(*v.content_cluster >= 0 && static_cast<std::size_t>(*v.content_cluster) < clusters,
              ErrorCode::invalid_argument, v.image_id + " has an out-of-range content cluster");
      dim.labels.push_back(static_cast<std::uint32_t>(*v.content_cluster));
    }
    p.dims.push_back(std::move(dim));
  }
  return p;
}

namespace detail {

class HistogramState {
 public:
  HistogramState(const HistogramProblem& p, std::size_t m) : p_(p) {
    for (const auto& d : p.dims) {
      h_.emplace_back(d.bins, 0);
      t_.push_back(static_cast<double>(m) / static_cast<double>(d.bins));
    }
    objective_ = 0.0;
    for (std::size_t d = 0; d < h_.size(); ++d) objective_ += t_[d] * static_cast<double>(h_[d].size());
  }

  double objective() const { return objective_; }

  double add_delta(std::size_t i) const {
    double s = 0.0;
    for (std::size_t d = 0; d < h_.size(); ++d) s += step(d, p_.dims[d].labels[i], +1);
    return s;
  }

  double swap_delta(std::size_t out, std::size_t in) const {
    double s = 0.0;
    for (std::size_t d = 0; d < h_.size(); ++d) {
      const auto bo = p_.dims[d].labels[out], bi = p_.dims[d].labels[in];
      if (bo == bi) continue;
      s += step(d, bo, -1) + step(d, bi, +1);
    }
    return s;
  }

  void add(std::size_t i) { move(i, +1); }
  void remove(std::size_t i) { move(i, -1); }

  const std::vector<std::vector<std::size_t>>& histograms() const { return h_; }

 private:
  double step(std::size_t d, std::uint32_t b, int sign) const {
    const double c = static_cast<double>(h_[d][b]);
    return std::abs(c + sign - t_[d]) - std::abs(c - t_[d]);
  }

  void move(std::size_t i, int sign) {
    for (std::size_t d = 0; d < h_.size(); ++d) {
      const auto b = p_.dims[d].labels[i];
      objective_ += step(d, b, sign);
      h_[d][b] = static_cast<std::size_t>(static_cast<long long>(h_[d][b]) + sign);
    }
  }

  const HistogramProblem& p_;
  std::vector<std::vector<std::size_t>> h_;
  std::vector<double> t_;
  double objective_ = 0.0;
};

inline constexpr double kImproveEps = 1e-9;

// Greedy construction followed by best-improvement swaps until none improves.
inline std::vector<std::size_t> local_search_once(const HistogramProblem& p, std::size_t m, Rng& rng,
                                                  std::vector<double>& trace) {
  const std::size_t n = p.ids.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  shuffle(order.begin(), order.end(), rng);

  HistogramState state(p, m);
  std::vector<char> in(n, 0);
  for (std::size_t step = 0; step < m; ++step) {
    std::size_t best = n;
    double best_delta = std::numeric_limits<double>::infinity();
    for (auto i : order) {
      if (in[i]) continue;
      const double d = state.add_delta(i);
      if (d < best_delta - kImproveEps) {
        best_delta = d;
        best = i;
      }
    }
    in[best] = 1;
    state.add(best);
  }
  trace.push_back(state.objective());

  for (;;) {
    std::size_t out_i = n, in_j = n;
    double best_delta = -kImproveEps;
    for (auto i : order) {
      if (!in[i]) continue;
      for (auto j : order) {
        if (in[j]) continue;
        const double d = state.swap_delta(i, j);
        if (d < best_delta) {
          best_delta = d;
          out_i = i;
          in_j = j;
        }
      }
    }
    if (out_i == n) break;
    const double before = state.objective();
    state.remove(out_i);
    state.add(in_j);
    in[out_i] = 0;
    in[in_j] = 1;
    require(state.objective() <= before, ErrorCode::precondition, "local search objective increased");
    trace.push_back(state.objective());
  }

  std::vector<std::size_t> sel;
  for (std::size_t i = 0; i < n; ++i)
    if (in[i]) sel.push_back(i);
  return sel;
}

struct BranchAndBound {
  const HistogramProblem& p;
  std::size_t m;
  std::vector<std::vector<std::size_t>> h;
  std::vector<double> t;
  double overfull = 0.0;  // sum over dims and bins of max(0, h - t)
  std::vector<std::size_t> current, best;
  double best_objective;

  BranchAndBound(const HistogramProblem& problem, std::size_t target, std::vector<std::size_t> incumbent)
      : p(problem), m(target), best(std::move(incumbent)) {
    for (const auto& d : p.dims) {
      h.emplace_back(d.bins, 0);
      t.push_back(static_cast<double>(m) / static_cast<double>(d.bins));
    }
    best_objective = histogram_objective(p, best);
  }

  void push(std::size_t i) {
    for (std::size_t d = 0; d < h.size(); ++d) {
      auto& c = h[d][p.dims[d].labels[i]];
      overfull += std::max(0.0, c + 1.0 - t[d]) - std::max(0.0, c - t[d]);
      ++c;
    }
    current.push_back(i);
  }

  void pop() {
    const auto i = current.back();
    current.pop_back();
    for (std::size_t d = 0; d < h.size(); ++d) {
      auto& c = h[d][p.dims[d].labels[i]];
      --c;
      overfull -= std::max(0.0, c + 1.0 - t[d]) - std::max(0.0, c - t[d]);
    }
  }

  // Every histogram of the finished selection sums to m, as does its target,
  // so its L1 error is twice its overfull mass; adding images never shrinks it.
  void search(std::size_t next) {
    if (2.0 * overfull >= best_objective - kImproveEps) return;
    if (current.size() == m) {
      const double obj = histogram_objective(p, current);
      if (obj < best_objective - kImproveEps) {
        best_objective = obj;
        best = current;
      }
      return;
    }
    if (p.ids.size() - next < m - current.size()) return;
    push(next);
    search(next + 1);
    pop();
    search(next + 1);
  }
};

}  // namespace detail

inline SamplingPlan sample_uniform(const HistogramProblem& problem, std::size_t target, SamplingMode mode,
                                   std::uint64_t seed, std::size_t restarts = kDefaultRestarts) {
  validate(problem);
  const std::size_t n = problem.ids.size();
  require(target <= n, ErrorCode::precondition,
          "target " + std::to_string(target) + " exceeds population " + std::to_string(n));
  require(mode != SamplingMode::exact || n <= kExactSizeCap, ErrorCode::precondition,
          "exact mode is limited to populations of " + std::to_string(kExactSizeCap) + " images");
  require(restarts >= 1, ErrorCode::invalid_argument, "restarts must be >= 1");

  SamplingPlan plan;
  plan.mode = mode;
  plan.target = target;
  plan.restarts = restarts;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < restarts; ++r) {
    auto rng = make_rng(seed, r);
    std::vector<double> trace;
    auto sel = detail::local_search_once(problem, target, rng, trace);
    const double obj = histogram_objective(problem, sel);
    if (obj < best - detail::kImproveEps) {
      best = obj;
      plan.selected = std::move(sel);
      plan.trace = std::move(trace);
    }
  }

  if (mode == SamplingMode::exact) {
    detail::BranchAndBound bb(problem, target, plan.selected);
    bb.search(0);
    plan.selected = bb.best;
    std::sort(plan.selected.begin(), plan.selected.end());
    plan.trace.clear();
  }

  plan.objective = histogram_objective(problem, plan.selected);
  for (auto i : plan.selected) plan.selected_ids.push_back(problem.ids[i]);
  for (const auto& d : problem.dims) {
    plan.dim_names.push_back(d.name);
    std::vector<std::size_t> h(d.bins, 0);
    for (auto i : plan.selected) ++h[d.labels[i]];
    plan.histograms.push_back(std::move(h));
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Near-duplicate removal

struct DedupPoint {
  std::string id;
  std::vector<double> coords;  // scaled indicators
  std::optional<int> cluster;  // content coordinate: 0 if equal, else 1
};

struct DedupResult {
  std::vector<std::string> removed_ids;  // in removal order
  std::vector<double> pair_distances;    // closest-pair distance at each removal
};

// Indicators scaled to [0, 1] over the population (constant indicator -> 0).
inline std::vector<DedupPoint> dedup_points(std::span<const IndicatorVector> vectors) {
  const auto m = indicator_matrix(vectors);
  std::array<double, 7> lo{}, hi{};
  lo.fill(std::numeric_limits<double>::infinity());
  hi.fill(-std::numeric_limits<double>::infinity());
  for (const auto& row : m)
    for (std::size_t d = 0; d < 7; ++d) {
      lo[d] = std::min(lo[d], row[d]);
      hi[d] = std::max(hi[d], row[d]);
    }
  std::vector<DedupPoint> pts;
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    DedupPoint p{vectors[i].image_id, std::vector<double>(7, 0.0), vectors[i].content_cluster};
    for (std::size_t d = 0; d < 7; ++d)
      if (hi[d] > lo[d]) p.coords[d] = (m[i][d] - lo[d]) / (hi[d] - lo[d]);
    pts.push_back(std::move(p));
  }
  return pts;
}

inline double dedup_distance2(const DedupPoint& a, const DedupPoint& b) {
  double s = 0.0;
  for (std::size_t d = 0; d < a.coords.size(); ++d) {
    const double x = a.coords[d] - b.coords[d];
    s += x * x;
  }
  if (a.cluster != b.cluster) s += 1.0;
  return s;
}

// Repeatedly removes a member of the globally closest surviving pair. Pairs
// are ordered by (distance, smaller id, larger id); the larger id is removed.
// Each point caches its nearest survivor, so only points whose neighbor was
// just removed are rescanned.
inline DedupResult dedup(std::span<const DedupPoint> points, std::size_t remove_count) {
  const std::size_t n = points.size();
  require(remove_count == 0 || remove_count < n, ErrorCode::precondition,
          "remove count " + std::to_string(remove_count) + " must be below the population " + std::to_string(n));
  for (const auto& p : points)
    require(p.coords.size() == points[0].coords.size() && p.cluster.has_value() == points[0].cluster.has_value(),
            ErrorCode::mixed_dimension, "dedup points have mixed coordinates");
  {
    std::vector<std::string_view> ids;
    for (const auto& p : points) ids.push_back(p.id);
    std::sort(ids.begin(), ids.end());
    require(std::adjacent_find(ids.begin(), ids.end()) == ids.end(), ErrorCode::duplicate_id,
            "dedup ids must be unique");
  }

  using Key = std::tuple<double, std::string_view, std::string_view>;
  auto key = [&](std::size_t i, std::size_t j) -> Key {
    const std::string_view a = points[i].id, b = points[j].id;
    return {dedup_distance2(points[i], points[j]), std::min(a, b), std::max(a, b)};
  };

  std::vector<char> alive(n, 1);
  std::vector<std::size_t> nn(n, n);
  auto rescan = [&](std::size_t i) {
    std::size_t best = n;
    Key best_key{};
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i || !alive[j]) continue;
      const Key k = key(i, j);
      if (best == n || k < best_key) {
        best = j;
        best_key = k;
      }
    }
    nn[i] = best;
  };

  DedupResult result;
  if (remove_count == 0) return result;
  parallel_for(n, rescan, 64);

  for (std::size_t round = 0; round < remove_count; ++round) {
    std::size_t bi = n;
    Key best_key{};
    for (std::size_t i = 0; i < n; ++i) {
      if (!alive[i]) continue;
      const Key k = key(i, nn[i]);
      if (bi == n || k < best_key) {
        bi = i;
        best_key = k;
      }
    }
    const std::size_t bj = nn[bi];
    const std::size_t victim = points[bi].id > points[bj].id ? bi : bj;
    alive[victim] = 0;
    result.removed_ids.push_back(points[victim].id);
    result.pair_distances.push_back(std::sqrt(std::get<0>(best_key)));

    std::vector<std::size_t> stale;
    for (std::size_t i = 0; i < n; ++i)
      if (alive[i] && nn[i] == victim) stale.push_back(i);
    parallel_for(stale.size(), [&](std::size_t s) { rescan(stale[s]); }, 64);
  }
  return result;
}

inline DedupResult dedup(std::span<const IndicatorVector> vectors, std::size_t remove_count) {
  const auto pts = dedup_points(vectors);
  return dedup(std::span<const DedupPoint>(pts), remove_count);
}

}  // namespace curation_forge

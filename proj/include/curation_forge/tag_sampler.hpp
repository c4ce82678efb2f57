#pragma once

// Tag-quota content pre-sampling. Rare tags (fewer than Q images) are taken
// whole; every other tag, in increasing order of frequency, is topped up to Q
// images with its most confident untaken candidates. Selection stops as soon
// as the target size is reached.

#include <algorithm>
#include <cstddef>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "curation_forge/catalog.hpp"
#include "curation_forge/error.hpp"

namespace curation_forge {

struct TagPlan {
  std::size_t quota = 0;
  std::size_t target_size = 0;
  std::vector<std::string> selected_ids;  // in selection order
  std::map<std::string, std::size_t> source_counts;    // tag -> images in the catalog
  std::map<std::string, std::size_t> selected_counts;  // tag -> images in the selection
  std::size_t untagged_images = 0;
  bool reached_target = false;
};

namespace detail {

struct TagIndex {
  struct Candidate {
    std::size_t image;
    double confidence;
  };
  std::vector<std::string> names;                   // sorted by (count, name)
  std::vector<std::vector<Candidate>> candidates;   // per tag, by (confidence desc, catalog order)
  std::vector<std::vector<std::size_t>> image_tags; // per image, tag indices
  std::size_t untagged = 0;
  std::size_t max_count = 0;

  explicit TagIndex(std::span<const ImageRecord> catalog) {
    std::unordered_map<std::string, std::size_t> lookup;
    std::vector<std::string> raw_names;
    std::vector<std::vector<Candidate>> raw;
    image_tags.resize(catalog.size());
    for (std::size_t i = 0; i < catalog.size(); ++i) {
      if (catalog[i].tags.empty()) ++untagged;
      for (const auto& t : catalog[i].tags) {
        auto [it, inserted] = lookup.try_emplace(t.tag, raw_names.size());
        if (inserted) {
          raw_names.push_back(t.tag);
          raw.emplace_back();
        }
        auto& list = raw[it->second];
        // A tag listed twice on one image counts once, at its top confidence.
        if (!list.empty() && list.back().image == i) {
          list.back().confidence = std::max(list.back().confidence, t.confidence);
        } else {
          list.push_back({i, t.confidence});
        }
      }
    }

    std::vector<std::size_t> order(raw_names.size());
    for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (raw[a].size() != raw[b].size()) return raw[a].size() < raw[b].size();
      return raw_names[a] < raw_names[b];
    });
    for (std::size_t rank = 0; rank < order.size(); ++rank) {
      auto list = std::move(raw[order[rank]]);
      std::stable_sort(list.begin(), list.end(), [](const Candidate& a, const Candidate& b) {
        return a.confidence > b.confidence;
      });
      for (const auto& c : list) image_tags[c.image].push_back(rank);
      max_count = std::max(max_count, list.size());
      names.push_back(std::move(raw_names[order[rank]]));
      candidates.push_back(std::move(list));
    }
  }
};

// Runs the quota procedure; `limit` caps the selection size.
inline std::vector<std::size_t> run_tag_quota(const TagIndex& index, std::size_t quota,
                                              std::size_t limit, std::vector<std::size_t>& counts) {
  std::vector<std::size_t> selected;
  std::vector<char> taken(index.image_tags.size(), 0);
  counts.assign(index.names.size(), 0);

  auto add = [&](std::size_t image) {
    if (taken[image]) return true;
    if (selected.size() >= limit) return false;
    taken[image] = 1;
    selected.push_back(image);
    for (auto t : index.image_tags[image]) ++counts[t];
    return selected.size() < limit;
  };

  // Tags are stored in increasing-count order, so the rare tags come first.
  std::size_t t = 0;
  for (; t < index.names.size() && index.candidates[t].size() < quota; ++t) {
    for (const auto& c : index.candidates[t])
      if (!add(c.image)) return selected;
  }
  for (; t < index.names.size(); ++t) {
    for (const auto& c : index.candidates[t]) {
      if (counts[t] >= quota) break;
      if (taken[c.image]) continue;
      if (!add(c.image)) return selected;
    }
  }
  return selected;
}

}  // namespace detail

inline TagPlan sample_by_tags(std::span<const ImageRecord> catalog, std::size_t quota,
                              std::size_t target_size) {
  require(quota >= 1, ErrorCode::invalid_argument, "quota must be >= 1");
  require(target_size >= 1, ErrorCode::invalid_argument, "target size must be >= 1");
  require(target_size <= catalog.size(), ErrorCode::precondition,
          "target size " + std::to_string(target_size) + " exceeds catalog size " +
              std::to_string(catalog.size()));
  const detail::TagIndex index(catalog);
  std::vector<std::size_t> counts;
  const auto picked = detail::run_tag_quota(index, quota, target_size, counts);

  TagPlan plan;
  plan.quota = quota;
  plan.target_size = target_size;
  plan.untagged_images = index.untagged;
  plan.reached_target = picked.size() == target_size;
  for (auto i : picked) plan.selected_ids.push_back(catalog[i].id);
  for (std::size_t t = 0; t < index.names.size(); ++t) {
    plan.source_counts[index.names[t]] = index.candidates[t].size();
    plan.selected_counts[index.names[t]] = counts[t];
  }
  return plan;
}

// Size of the selection when the procedure runs to natural completion.
inline std::size_t natural_selection_size(std::span<const ImageRecord> catalog, std::size_t quota) {
  const detail::TagIndex index(catalog);
  std::vector<std::size_t> counts;
  return detail::run_tag_quota(index, quota, std::numeric_limits<std::size_t>::max(), counts).size();
}

// Smallest quota in [1, max tag count] whose natural selection reaches the
// target, found by integer bisection. Returns the upper end when even the
// largest quota falls short.
inline std::size_t find_quota(std::span<const ImageRecord> catalog, std::size_t target_size) {
  require(target_size <= catalog.size(), ErrorCode::precondition,
          "target size exceeds catalog size");
  const detail::TagIndex index(catalog);
  require(index.max_count >= 1, ErrorCode::precondition, "catalog has no tags");
  std::vector<std::size_t> counts;
  auto natural = [&](std::size_t q) {
    return detail::run_tag_quota(index, q, std::numeric_limits<std::size_t>::max(), counts).size();
  };
  std::size_t lo = 1, hi = index.max_count;
  while (lo < hi) {
    const std::size_t mid = lo + (hi - lo) / 2;
    if (natural(mid) >= target_size) {
      hi = mid;
    } else {
      lo = mid + 1;
    }
  }
  return lo;
}

}  // namespace curation_forge

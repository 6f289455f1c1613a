#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "scrc/error.hpp"
#include "scrc/geometry.hpp"

namespace scrc {

/// Stable descending order of scores; equal scores keep input order.
inline std::vector<std::size_t> rank_candidates(std::span<const double> scores) {
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (!std::isfinite(scores[i]))
      throw InputError("non-finite score for candidate " + std::to_string(i));
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

struct RankedCandidate {
  std::size_t index;  // position in the original candidate list
  BoundingBox box;
  std::string region_key;
  double score;
};

struct RankedResult {
  std::string query;
  std::string image_id;
  std::vector<RankedCandidate> ranked;  // best first
  BoundingBox gt_box;
  std::string gt_region_key;
};

inline RankedResult make_ranked_result(std::string query, std::string image_id,
                                       std::span<const BoundingBox> boxes,
                                       std::span<const std::string> region_keys,
                                       std::span<const double> scores, BoundingBox gt_box,
                                       std::string gt_region_key = {}) {
  if (boxes.size() != scores.size() || region_keys.size() != scores.size())
    throw InputError("boxes, region keys and scores differ in length");
  RankedResult r{std::move(query), std::move(image_id), {}, gt_box, std::move(gt_region_key)};
  for (const auto i : rank_candidates(scores))
    r.ranked.push_back({i, boxes[i], region_keys[i], scores[i]});
  return r;
}

enum class Scenario { kGtBoxes, kProposals };

struct MetricsReport {
  Scenario scenario = Scenario::kGtBoxes;
  std::size_t queries = 0;
  double p_at_1 = 0.0;
  std::map<std::size_t, double> recall_at;  // k -> R@k
  double oracle = 0.0;

  double r_at(std::size_t k) const {
    const auto it = recall_at.find(k);
    if (it == recall_at.end()) throw InputError("R@" + std::to_string(k) + " not computed");
    return it->second;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["queries"] = queries;
    if (scenario == Scenario::kGtBoxes) {
      j["scenario"] = "gt_boxes";
      j["p_at_1"] = p_at_1;
    } else {
      j["scenario"] = "proposals";
      for (const auto& [k, v] : recall_at) j["r_at_" + std::to_string(k)] = v;
      j["oracle"] = oracle;
    }
    return j;
  }
};

namespace detail {

inline bool is_gt(const RankedCandidate& c, const RankedResult& r) {
  return r.gt_region_key.empty() ? c.box == r.gt_box : c.region_key == r.gt_region_key;
}

}  // namespace detail

/// Candidates are the image's annotated boxes; a query is correct when its
/// top-ranked candidate is the ground-truth record itself (matched by region
/// key when one is given, else by exact box).
inline MetricsReport eval_gt_scenario(const std::vector<RankedResult>& results) {
  if (results.empty()) throw InputError("no queries to evaluate");
  std::size_t correct = 0;
  for (std::size_t q = 0; q < results.size(); ++q) {
    const auto& r = results[q];
    if (std::none_of(r.ranked.begin(), r.ranked.end(),
                     [&](const RankedCandidate& c) { return detail::is_gt(c, r); }))
      throw InputError("query " + std::to_string(q) + " ('" + r.query +
                       "'): ground-truth box is not among the candidates");
    if (detail::is_gt(r.ranked.front(), r)) ++correct;
  }
  MetricsReport m;
  m.scenario = Scenario::kGtBoxes;
  m.queries = results.size();
  m.p_at_1 = static_cast<double>(correct) / static_cast<double>(results.size());
  return m;
}

/// Rank (1-based) of the first IoU hit, or 0 when no candidate is a hit.
inline std::size_t first_hit_rank(const RankedResult& r) {
  for (std::size_t i = 0; i < r.ranked.size(); ++i)
    if (is_hit(r.ranked[i].box, r.gt_box)) return i + 1;
  return 0;
}

inline MetricsReport eval_proposal_scenario(const std::vector<RankedResult>& results,
                                            std::vector<std::size_t> k_list = {1, 10}) {
  if (results.empty()) throw InputError("no queries to evaluate");
  std::map<std::size_t, std::size_t> hits_at;
  for (auto k : k_list) {
    if (k < 1) throw InputError("k must be >= 1");
    hits_at[k] = 0;
  }
  std::size_t oracle_hits = 0;
  for (std::size_t q = 0; q < results.size(); ++q) {
    const auto& r = results[q];
    if (r.ranked.empty())
      throw InputError("query " + std::to_string(q) + " ('" + r.query + "') has no candidates");
    const auto rank = first_hit_rank(r);
    if (rank == 0) continue;
    ++oracle_hits;
    for (auto& [k, n] : hits_at)
      if (rank <= k) ++n;
  }
  MetricsReport m;
  m.scenario = Scenario::kProposals;
  m.queries = results.size();
  const auto denom = static_cast<double>(results.size());
  for (const auto& [k, n] : hits_at) m.recall_at[k] = static_cast<double>(n) / denom;
  m.oracle = static_cast<double>(oracle_hits) / denom;
  return m;
}

/// One CSV row per query: query, image_id, rank-1 IoU and hit flags.
inline std::string per_query_csv(const std::vector<RankedResult>& results, Scenario scenario) {
  auto quote = [](const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
      if (c == '"') out += '"';
      out += c;
    }
    return out + "\"";
  };
  std::ostringstream os;
  os.precision(9);
  if (scenario == Scenario::kGtBoxes) {
    os << "query,image_id,rank1_iou,correct_at_1\n";
    for (const auto& r : results) {
      const auto& top = r.ranked.front();
      os << quote(r.query) << ',' << quote(r.image_id) << ',' << iou(top.box, r.gt_box) << ','
         << (detail::is_gt(top, r) ? 1 : 0) << '\n';
    }
  } else {
    os << "query,image_id,rank1_iou,hit_at_1,hit_at_10,oracle_hit\n";
    for (const auto& r : results) {
      const auto rank = first_hit_rank(r);
      os << quote(r.query) << ',' << quote(r.image_id) << ',' << iou(r.ranked.front().box, r.gt_box)
         << ',' << (rank == 1 ? 1 : 0) << ',' << (rank >= 1 && rank <= 10 ? 1 : 0) << ','
         << (rank >= 1 ? 1 : 0) << '\n';
    }
  }
  return os.str();
}

}  // namespace scrc

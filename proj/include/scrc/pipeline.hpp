#pragma once

// Glue between stored data and the model: builds candidate lists for the two
// evaluation scenarios and for single-query retrieval.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "scrc/datastore.hpp"
#include "scrc/metrics.hpp"
#include "scrc/model.hpp"

namespace scrc {

template <typename T>
struct ScoringContext {
  const ScrcParams<T>& params;
  const ScrcConfig& config;
  const Vocabulary& vocab;
  const FeatureStore& region_store;
  const FeatureStore& context_store;
};

template <typename T>
RankedResult rank_boxes(const ScoringContext<T>& ctx, const std::string& query,
                                     const std::string& image_id, const ImageSize& size,
                                     const std::vector<BoundingBox>& boxes,
                                     const std::vector<std::string>& keys,
                                     const BoundingBox& gt_box, const std::string& gt_key) {
  const auto tokens = encode(ctx.vocab, query);
  if (tokens.empty()) throw InputError("query '" + query + "' has no tokens");
  std::vector<VisualInput> cands;
  cands.reserve(boxes.size());
  for (std::size_t i = 0; i < boxes.size(); ++i)
    cands.push_back(visual_input(ctx.region_store, ctx.context_store, keys[i], image_id,
                                 encode_spatial(boxes[i], size)));
  const auto scores =
      score_candidates(ctx.params, ctx.config, tokens, std::span<const VisualInput>(cands));
  return make_ranked_result(query, image_id, boxes, keys, scores, gt_box, gt_key);
}

/// Every description of every annotated object, scored against all annotated
/// boxes of its image.
template <typename T>
std::vector<RankedResult> gt_scenario_results(const ScoringContext<T>& ctx,
                                              const std::vector<AnnotationRecord>& records) {
  std::map<std::string, std::vector<const AnnotationRecord*>> by_image;
  for (const auto& r : records) by_image[r.image_id].push_back(&r);
  std::vector<RankedResult> out;
  for (const auto& rec : records) {
    const auto& siblings = by_image.at(rec.image_id);
    std::vector<BoundingBox> boxes;
    std::vector<std::string> keys;
    for (const auto* s : siblings) {
      boxes.push_back(s->box);
      keys.push_back(s->region_key);
    }
    for (const auto& desc : rec.descriptions) {
      out.push_back(
          rank_boxes(ctx, desc, rec.image_id, rec.size, boxes, keys, rec.box, rec.region_key));
    }
  }
  return out;
}

/// Every description scored against the proposal boxes of its image; hits are
/// decided later by IoU against the annotated box.
template <typename T>
std::vector<RankedResult> proposal_scenario_results(const ScoringContext<T>& ctx,
                                                    const std::vector<AnnotationRecord>& records,
                                                    const std::vector<ProposalSet>& proposals) {
  std::map<std::string, const ProposalSet*> by_image;
  for (const auto& p : proposals)
    if (!by_image.emplace(p.image_id, &p).second)
      throw InputError("duplicate proposal set for image '" + p.image_id + "'");
  std::vector<RankedResult> out;
  for (const auto& rec : records) {
    const auto it = by_image.find(rec.image_id);
    if (it == by_image.end() || it->second->boxes.empty())
      throw InputError("no proposals for image '" + rec.image_id + "'");
    for (const auto& desc : rec.descriptions) {
      out.push_back(rank_boxes(ctx, desc, rec.image_id, rec.size, it->second->boxes,
                               it->second->region_keys, rec.box, std::string{}));
    }
  }
  return out;
}

}  // namespace scrc

#pragma once

// Toy retrieval dataset with planted structure. Each image holds four
// regions at the left, right, top and bottom. Two colors are used per image,
// each on exactly two regions, so a query "<color> <position>" can only be
// resolved with the box geometry: region features carry the color alone.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "scrc/datastore.hpp"
#include "scrc/rng.hpp"

namespace scrc {

inline constexpr std::array<const char*, 6> kSynthColors = {"red",    "green",  "blue",
                                                            "yellow", "purple", "orange"};
inline constexpr std::array<const char*, 4> kSynthPositions = {"left", "right", "top",
                                                               "bottom"};
/// One-hot color block followed by two constant channels.
inline constexpr std::size_t kSynthFeatDim = kSynthColors.size() + 2;

struct SynthOptions {
  std::size_t images = 16;
  std::size_t random_proposals = 4;  // background boxes per image on top of 4 jittered ones
  std::uint64_t seed = 0;
};

struct SynthDataset {
  FeatureStore region_store{kSynthFeatDim};
  FeatureStore context_store{kSynthFeatDim};
  std::vector<AnnotationRecord> annotations;
  std::vector<CaptionRecord> captions;
  std::vector<ProposalSet> proposals;
};

namespace detail {

inline std::vector<float> color_feature(std::size_t color) {
  std::vector<float> f(kSynthFeatDim, 0.0f);
  f[color] = 1.0f;
  f[kSynthColors.size()] = 0.5f;
  f[kSynthColors.size() + 1] = 0.5f;
  return f;
}

inline std::vector<float> background_feature() {
  std::vector<float> f(kSynthFeatDim, 0.0f);
  f[kSynthColors.size()] = 0.5f;
  f[kSynthColors.size() + 1] = 0.5f;
  return f;
}

/// Region box for a position slot, as fractions of the image, jittered.
inline BoundingBox slot_box(std::size_t position, const ImageSize& size, Rng& rng) {
  // centers in normalized [0,1] coordinates
  constexpr std::array<std::array<double, 2>, 4> centers = {
      {{0.18, 0.5}, {0.82, 0.5}, {0.5, 0.18}, {0.5, 0.82}}};
  const double cx = centers[position][0] + rng.uniform(-0.03, 0.03);
  const double cy = centers[position][1] + rng.uniform(-0.03, 0.03);
  const double hw = 0.12 + rng.uniform(-0.02, 0.02);
  const double hh = 0.12 + rng.uniform(-0.02, 0.02);
  return {std::round(std::max(0.0, cx - hw) * size.width),
          std::round(std::max(0.0, cy - hh) * size.height),
          std::round(std::min(1.0, cx + hw) * size.width),
          std::round(std::min(1.0, cy + hh) * size.height)};
}

inline BoundingBox jitter_box(const BoundingBox& b, const ImageSize& size, Rng& rng) {
  const double dx = 0.05 * b.width(), dy = 0.05 * b.height();
  BoundingBox out{b.x_min + std::round(rng.uniform(-dx, dx)),
                  b.y_min + std::round(rng.uniform(-dy, dy)),
                  b.x_max + std::round(rng.uniform(-dx, dx)),
                  b.y_max + std::round(rng.uniform(-dy, dy))};
  out.x_min = std::max(0.0, out.x_min);
  out.y_min = std::max(0.0, out.y_min);
  out.x_max = std::min(size.width, out.x_max);
  out.y_max = std::min(size.height, out.y_max);
  return out;
}

inline BoundingBox random_box(const ImageSize& size, Rng& rng) {
  const double w = std::round(size.width * rng.uniform(0.1, 0.4));
  const double h = std::round(size.height * rng.uniform(0.1, 0.4));
  const double x = std::round(rng.uniform(0.0, size.width - w));
  const double y = std::round(rng.uniform(0.0, size.height - h));
  return {x, y, x + w, y + h};
}

inline std::string image_key(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "img%03zu", i);
  return buf;
}

}  // namespace detail

inline SynthDataset make_synth_dataset(const SynthOptions& opt) {
  SynthDataset ds;
  Rng rng(opt.seed);
  for (std::size_t i = 0; i < opt.images; ++i) {
    const auto image_id = detail::image_key(i);
    const ImageSize size{static_cast<double>(160 + 40 * rng.below(5)),
                         static_cast<double>(120 + 40 * rng.below(4))};

    const auto c1 = static_cast<std::size_t>(rng.below(kSynthColors.size()));
    auto c2 = static_cast<std::size_t>(rng.below(kSynthColors.size() - 1));
    if (c2 >= c1) ++c2;
    std::vector<std::size_t> colors = {c1, c1, c2, c2};  // indexed by position slot
    rng.shuffle(colors);
    std::vector<std::size_t> order = {0, 1, 2, 3};  // listing order of the regions
    rng.shuffle(order);

    std::vector<float> context = detail::background_feature();
    context[c1] = 1.0f;
    context[c2] = 1.0f;
    ds.context_store.add(image_id, context);

    std::string caption_a, caption_b;
    std::vector<BoundingBox> region_boxes(4);
    for (std::size_t n = 0; n < 4; ++n) {
      const auto pos = order[n];
      const auto key = image_id + "_r" + std::to_string(n);
      region_boxes[pos] = detail::slot_box(pos, size, rng);
      ds.region_store.add(key, detail::color_feature(colors[pos]));
      const std::string desc =
          std::string(kSynthColors[colors[pos]]) + " " + kSynthPositions[pos];
      ds.annotations.push_back({image_id, size, region_boxes[pos], key, {desc}});
      caption_a += (caption_a.empty() ? "" : " ") + desc;
    }
    for (std::size_t pos = 0; pos < 4; ++pos)
      caption_b += (caption_b.empty() ? "" : " ") + std::string(kSynthColors[colors[pos]]) +
                   " " + kSynthPositions[pos];
    ds.captions.push_back({image_id, {caption_a, caption_b}});

    ProposalSet props;
    props.image_id = image_id;
    props.size = size;
    std::vector<std::pair<BoundingBox, std::vector<float>>> cands;
    for (std::size_t pos = 0; pos < 4; ++pos)
      cands.emplace_back(detail::jitter_box(region_boxes[pos], size, rng),
                         detail::color_feature(colors[pos]));
    for (std::size_t k = 0; k < opt.random_proposals; ++k)
      cands.emplace_back(detail::random_box(size, rng), detail::background_feature());
    rng.shuffle(cands);
    for (std::size_t k = 0; k < cands.size(); ++k) {
      const auto key = image_id + "_p" + std::to_string(k);
      ds.region_store.add(key, cands[k].second);
      props.boxes.push_back(cands[k].first);
      props.region_keys.push_back(key);
    }
    ds.proposals.push_back(std::move(props));
  }
  return ds;
}

/// Settings for caption pretraining on the toy data.
inline nlohmann::json synth_pretrain_config() {
  return {{"embed_dim", 16}, {"hidden_dim", 24}, {"lr", 0.1}, {"steps", 500}};
}

/// Settings for retrieval fine-tuning on the toy data.
inline nlohmann::json synth_finetune_config() {
  return {{"lr", 0.01}, {"steps", 2000}};
}

struct SynthPaths {
  std::string region_features, context_features, annotations, captions, proposals,
      pretrain_config, finetune_config;

  explicit SynthPaths(const std::filesystem::path& dir)
      : region_features((dir / "region_features.bin").string()),
        context_features((dir / "context_features.bin").string()),
        annotations((dir / "annotations.jsonl").string()),
        captions((dir / "captions.jsonl").string()),
        proposals((dir / "proposals.jsonl").string()),
        pretrain_config((dir / "pretrain.json").string()),
        finetune_config((dir / "finetune.json").string()) {}
};

inline SynthPaths write_synth_dataset(const SynthDataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  SynthPaths paths(dir);
  save_feature_store(ds.region_store, paths.region_features);
  save_feature_store(ds.context_store, paths.context_features);
  save_json_lines(ds.annotations, paths.annotations);
  save_json_lines(ds.captions, paths.captions);
  save_json_lines(ds.proposals, paths.proposals);
  write_text_file(paths.pretrain_config, synth_pretrain_config().dump(2) + "\n");
  write_text_file(paths.finetune_config, synth_finetune_config().dump(2) + "\n");
  return paths;
}

}  // namespace scrc

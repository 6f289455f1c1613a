#pragma once

// Caption pretraining, weight transfer into the local branch, and retrieval
// fine-tuning. A step consumes one minibatch; the batch loss is the mean of
// per-example negative log-likelihoods.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "scrc/datastore.hpp"
#include "scrc/error.hpp"
#include "scrc/model.hpp"
#include "scrc/nncore.hpp"
#include "scrc/rng.hpp"

namespace scrc {

enum class Phase { kPretrain, kFinetune };

struct TrainConfig {
  double lr = 0.001;
  double momentum = 0.9;
  double clip_norm = 10.0;
  std::size_t steps = 1000;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  Phase phase = Phase::kFinetune;
  std::size_t log_every = 100;

  static TrainConfig defaults(Phase phase) {
    TrainConfig c;
    c.phase = phase;
    c.lr = phase == Phase::kPretrain ? 0.01 : 0.001;
    return c;
  }

  void validate() const {
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be finite and >= 0");
    if (steps < 1) throw ConfigError("steps must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (log_every < 1) throw ConfigError("log_every must be >= 1");
  }
};

struct IntervalLoss {
  std::size_t end_step;
  double mean_loss;
};

struct TrainReport {
  std::vector<IntervalLoss> intervals;
  double initial_loss = 0.0;  // loss of the first batch, before any update
  double final_loss = 0.0;    // mean loss of the last interval
  std::size_t steps = 0;
  double wall_seconds = 0.0;

  nlohmann::json to_json(bool include_timing = true) const {
    nlohmann::json iv = nlohmann::json::array();
    for (const auto& i : intervals) iv.push_back({{"step", i.end_step}, {"mean_loss", i.mean_loss}});
    nlohmann::json j{{"intervals", iv},
                     {"initial_loss", initial_loss},
                     {"final_loss", final_loss},
                     {"steps", steps}};
    if (include_timing) j["wall_seconds"] = wall_seconds;
    return j;
  }
};

/// Seeded permutation of [0, count) cut into batches. Every index appears
/// once; the last batch may be short.
inline std::vector<std::vector<std::size_t>> make_batches(std::size_t count,
                                                          std::size_t batch_size,
                                                          std::uint64_t seed,
                                                          std::uint64_t epoch) {
  if (batch_size < 1) throw InputError("batch_size must be >= 1");
  std::vector<std::size_t> order(count);
  for (std::size_t i = 0; i < count; ++i) order[i] = i;
  Rng rng(mix_seed(seed, epoch));
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < count; start += batch_size) {
    const auto end = std::min(count, start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

template <typename Item>
std::vector<std::vector<Item>> make_batches(const std::vector<Item>& items,
                                            std::size_t batch_size, std::uint64_t seed,
                                            std::uint64_t epoch) {
  std::vector<std::vector<Item>> out;
  for (const auto& b : make_batches(items.size(), batch_size, seed, epoch)) {
    auto& dst = out.emplace_back();
    for (auto i : b) dst.push_back(items[i]);
  }
  return out;
}

struct TrainingExample {
  TokenSequence tokens;
  VisualInput visual;
};

/// Parameters that receive gradient under `cfg`; masked-out branches are left
/// out so the optimizer never touches them.
template <typename T>
std::vector<NamedParam<T>> trainable_params(ScrcParams<T>& p, const ScrcConfig& cfg) {
  std::vector<NamedParam<T>> out;
  for (auto& np : p.named()) {
    const bool local = np.name.starts_with("lstm_local.") || np.name == "W_local";
    const bool global = np.name.starts_with("lstm_global.") || np.name == "W_global";
    if (local && cfg.caption_mode) continue;
    if (global && cfg.mask_context) continue;
    out.push_back(np);
  }
  return out;
}

/// Mean negative log-likelihood of `examples` under the current params.
template <typename T>
double mean_loss(const ScrcParams<T>& p, const ScrcConfig& cfg,
                 const std::vector<TrainingExample>& examples) {
  double total = 0.0;
  for (const auto& ex : examples) total -= forward(p, cfg, ex.tokens, ex.visual).log_prob;
  return examples.empty() ? 0.0 : total / static_cast<double>(examples.size());
}

template <typename T>
TrainReport train_examples(ScrcParams<T>& p, const ScrcConfig& cfg,
                           const std::vector<TrainingExample>& examples,
                           const TrainConfig& tc) {
  cfg.validate();
  tc.validate();
  p.validate(cfg);
  if (examples.empty()) throw InputError("no training examples");
  const auto start = std::chrono::steady_clock::now();

  SgdOptimizer<T> opt(tc.lr, tc.momentum, tc.clip_norm);
  const auto params = trainable_params(p, cfg);
  p.zero_grads();

  TrainReport report;
  std::uint64_t epoch = 0;
  auto batches = make_batches(examples.size(), tc.batch_size, tc.seed, epoch);
  std::size_t next_batch = 0;
  double interval_sum = 0.0;
  std::size_t interval_steps = 0;

  for (std::size_t step = 0; step < tc.steps; ++step) {
    if (next_batch == batches.size()) {
      batches = make_batches(examples.size(), tc.batch_size, tc.seed, ++epoch);
      next_batch = 0;
    }
    const auto& batch = batches[next_batch++];
    const T scale = T{1} / static_cast<T>(batch.size());
    double batch_loss = 0.0;
    for (const auto idx : batch) {
      const auto& ex = examples[idx];
      const auto trace = forward(p, cfg, ex.tokens, ex.visual);
      batch_loss -= trace.log_prob;
      backward(p, cfg, trace, trace.targets, scale);
    }
    batch_loss /= static_cast<double>(batch.size());
    if (!std::isfinite(batch_loss))
      throw TrainingError("non-finite loss at step " + std::to_string(step));
    if (step == 0) report.initial_loss = batch_loss;
    opt.step(params);

    interval_sum += batch_loss;
    ++interval_steps;
    if (interval_steps == tc.log_every || step + 1 == tc.steps) {
      report.intervals.push_back({step + 1, interval_sum / static_cast<double>(interval_steps)});
      interval_sum = 0.0;
      interval_steps = 0;
    }
  }
  report.steps = tc.steps;
  report.final_loss = report.intervals.back().mean_loss;
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

/// (image, caption) pairs for caption-mode training. The local branch is not
/// evaluated in caption mode, so the region side is left empty.
inline std::vector<TrainingExample> caption_examples(const std::vector<CaptionRecord>& captions,
                                                     const FeatureStore& context_store,
                                                     const Vocabulary& vocab) {
  std::vector<TrainingExample> out;
  for (const auto& rec : captions) {
    if (!context_store.contains(rec.image_id))
      throw InputError("context feature key '" + rec.image_id + "' not found");
    const auto context = context_store.at_double(rec.image_id);
    for (const auto& cap : rec.captions) {
      auto tokens = encode(vocab, cap);
      if (tokens.empty())
        throw InputError("caption '" + cap + "' of image '" + rec.image_id + "' has no tokens");
      out.push_back({std::move(tokens), VisualInput{{}, context, {}}});
    }
  }
  return out;
}

inline std::vector<TrainingExample> retrieval_examples(const std::vector<TrainingTuple>& tuples,
                                                       const FeatureStore& region_store,
                                                       const FeatureStore& context_store) {
  std::vector<TrainingExample> out;
  out.reserve(tuples.size());
  for (const auto& t : tuples)
    out.push_back({t.tokens, visual_input(region_store, context_store, t.region_key,
                                          t.image_id, t.spatial)});
  return out;
}

/// Maximizes log p(caption | image) with the local branch switched off.
template <typename T>
TrainReport pretrain_captioning(ScrcParams<T>& p, const ScrcConfig& cfg,
                                const std::vector<CaptionRecord>& captions,
                                const FeatureStore& context_store, const Vocabulary& vocab,
                                const TrainConfig& tc) {
  if (!cfg.caption_mode) throw ConfigError("pretraining requires caption_mode");
  return train_examples(p, cfg, caption_examples(captions, context_store, vocab), tc);
}

/// Minimizes the summed description NLL over all (image, box, description)
/// tuples; each step averages over one minibatch.
template <typename T>
TrainReport finetune_retrieval(ScrcParams<T>& p, const ScrcConfig& cfg,
                               const std::vector<TrainingTuple>& tuples,
                               const FeatureStore& region_store,
                               const FeatureStore& context_store, const TrainConfig& tc) {
  if (cfg.caption_mode) throw ConfigError("fine-tuning requires the full model");
  if (tuples.empty()) throw InputError("no training tuples");
  return train_examples(p, cfg, retrieval_examples(tuples, region_store, context_store), tc);
}

/// Initializes the local branch from the pretrained global branch: LSTM
/// weights over [h_language, x_box] take the global weights over
/// [h_language, x_context], weights over x_spatial are zeroed, and W_local
/// becomes a copy of W_global.
template <typename T>
void transfer_weights(ScrcParams<T>& p, const ScrcConfig& cfg) {
  p.validate(cfg);
  const std::size_t shared = cfg.global_input_dim();
  if (p.lstm_local.input_dim() != shared + kSpatialDim ||
      p.lstm_local.hidden() != p.lstm_global.hidden())
    throw ConfigError("local and global branches have incompatible shapes");
  for (std::size_t k = 0; k < 4; ++k) {
    auto& dst = p.lstm_local.w_x[k].value;
    const auto& src = p.lstm_global.w_x[k].value;
    for (std::size_t r = 0; r < dst.rows(); ++r) {
      for (std::size_t c = 0; c < shared; ++c) dst(r, c) = src(r, c);
      for (std::size_t c = shared; c < dst.cols(); ++c) dst(r, c) = T{0};
    }
    p.lstm_local.w_h[k].value = p.lstm_global.w_h[k].value;
    p.lstm_local.b[k].value = p.lstm_global.b[k].value;
  }
  p.w_local.value = p.w_global.value;
}

}  // namespace scrc

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "scrc/gradcheck.hpp"
#include "scrc/model.hpp"
#include "test_util.hpp"

namespace {

using namespace scrc;
using namespace scrc::testing;

Vec<double> logits_for(const ScrcParams<double>& p, const ScrcConfig& cfg, TokenId token,
                       const VisualInput& v) {
  auto state = ModelState<double>::zeros(cfg.hidden_dim);
  return step_logits(p, cfg, token, prepare_visual<double>(cfg, v), state).logits;
}

TEST(ScrcConfig, ValidatesDimsAndFlags) {
  auto cfg = tiny_config();
  EXPECT_NO_THROW(cfg.validate());
  cfg.caption_mode = true;
  cfg.mask_context = true;
  EXPECT_THROW(cfg.validate(), ConfigError);
  auto small = tiny_config(3);
  EXPECT_THROW(small.validate(), ConfigError);
  auto zero = tiny_config(9, 0);
  EXPECT_THROW(zero.validate(), ConfigError);
}

TEST(StepLogits, ZeroNetworkIsUniform) {
  const auto cfg = tiny_config();
  const ScrcParams<double> p(cfg);
  Rng rng(1);
  const auto logits = logits_for(p, cfg, kBos, random_visual(cfg, rng));
  for (double z : logits) EXPECT_EQ(z, 0.0);
  for (double q : softmax(logits)) EXPECT_DOUBLE_EQ(q, 1.0 / 9.0);
}

TEST(StepLogits, CaptionModeEqualsZeroLocalWeights) {
  const auto cfg = tiny_config();
  auto cap_cfg = cfg;
  cap_cfg.caption_mode = true;
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    auto p = random_params(cfg, rng);
    p.w_local.value.fill(0.0);
    const auto v = random_visual(cfg, rng);
    const auto token = static_cast<TokenId>(rng.below(cfg.vocab_size));
    const auto full = logits_for(p, cfg, token, v);
    auto other = v;  // the region side is irrelevant in caption mode
    other.x_box = random_vector(rng, cfg.feat_dim, 5.0);
    other.x_spatial.fill(3.0);
    const auto cap = logits_for(p, cap_cfg, token, other);
    for (std::size_t i = 0; i < cap.size(); ++i) EXPECT_NEAR(cap[i], full[i], 1e-10);
  }
}

TEST(StepLogits, MaskContextIgnoresContext) {
  auto cfg = tiny_config();
  cfg.mask_context = true;
  Rng rng(3);
  const auto p = random_params(cfg, rng);
  auto v = random_visual(cfg, rng);
  const auto a = logits_for(p, cfg, 4, v);
  v.x_context = random_vector(rng, cfg.feat_dim, 3.0);
  EXPECT_EQ(a, logits_for(p, cfg, 4, v));
  v.x_context.clear();  // not even read
  EXPECT_EQ(a, logits_for(p, cfg, 4, v));
}

TEST(StepLogits, MaskSpatialIgnoresSpatial) {
  auto cfg = tiny_config();
  cfg.mask_spatial = true;
  Rng rng(4);
  const auto p = random_params(cfg, rng);
  auto v = random_visual(cfg, rng);
  const auto a = logits_for(p, cfg, 5, v);
  v.x_spatial.fill(0.9);
  EXPECT_EQ(a, logits_for(p, cfg, 5, v));
}

TEST(StepLogits, ContextMattersWhenNotMasked) {
  const auto cfg = tiny_config();
  Rng rng(5);
  const auto p = random_params(cfg, rng);
  auto v = random_visual(cfg, rng);
  const auto a = logits_for(p, cfg, 5, v);
  v.x_context = random_vector(rng, cfg.feat_dim);
  EXPECT_NE(a, logits_for(p, cfg, 5, v));
}

TEST(StepLogits, RejectsWrongFeatureLength) {
  const auto cfg = tiny_config();
  Rng rng(6);
  const auto p = random_params(cfg, rng);
  auto v = random_visual(cfg, rng);
  v.x_box.push_back(1.0);
  EXPECT_THROW(logits_for(p, cfg, 3, v), ShapeError);
}

TEST(SequenceLogProb, ZeroNetworkLengthOne) {
  const auto cfg = tiny_config();
  const ScrcParams<double> p(cfg);
  Rng rng(7);
  const double lp = sequence_log_prob(p, cfg, {{5}, random_visual(cfg, rng)});
  EXPECT_NEAR(lp, 2.0 * std::log(1.0 / 9.0), 1e-14);
}

TEST(SequenceLogProb, EqualsProductOfStepwiseSoftmax) {
  const auto cfg = tiny_config();
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const auto p = random_params(cfg, rng);
    const auto v = random_visual(cfg, rng);
    const auto q = random_tokens(cfg, rng, 5);
    const auto prepared = prepare_visual<double>(cfg, v);
    auto state = ModelState<double>::zeros(cfg.hidden_dim);
    double prob = 1.0;
    TokenId in = kBos;
    auto targets = q;
    targets.push_back(kEos);
    for (TokenId t : targets) {
      const auto out = step_logits(p, cfg, in, prepared, state);
      prob *= softmax(out.logits)[t];
      in = t;
    }
    EXPECT_NEAR(std::exp(sequence_log_prob(p, cfg, {q, v})), prob, 1e-10);
  }
}

TEST(SequenceLogProb, ChainRuleOverManualSteps) {
  const auto cfg = tiny_config();
  Rng rng(9);
  const auto p = random_params(cfg, rng);
  const auto v = random_visual(cfg, rng);
  const auto prepared = prepare_visual<double>(cfg, v);
  auto state = ModelState<double>::zeros(cfg.hidden_dim);
  const TokenId w1 = 4, w2 = 7;
  const auto s1 = step_logits(p, cfg, kBos, prepared, state);
  const auto s2 = step_logits(p, cfg, w1, prepared, state);
  const auto s3 = step_logits(p, cfg, w2, prepared, state);
  const double manual = std::log(softmax(s1.logits)[w1]) + std::log(softmax(s2.logits)[w2]) +
                        std::log(softmax(s3.logits)[kEos]);
  EXPECT_NEAR(sequence_log_prob(p, cfg, {{w1, w2}, v}), manual, 1e-12);
}

TEST(SequenceLogProb, RejectsEmptyAndOutOfRangeQueries) {
  const auto cfg = tiny_config();
  Rng rng(10);
  const auto p = random_params(cfg, rng);
  const auto v = random_visual(cfg, rng);
  EXPECT_THROW(sequence_log_prob(p, cfg, {{}, v}), InputError);
  EXPECT_THROW(sequence_log_prob(p, cfg, {{9}, v}), InputError);
}

TEST(ScoreCandidates, PointwiseProperties) {
  const auto cfg = tiny_config();
  Rng rng(11);
  const auto p = random_params(cfg, rng);
  const TokenSequence q{3, 6, 8};
  std::vector<VisualInput> cands;
  for (int i = 0; i < 5; ++i) cands.push_back(random_visual(cfg, rng));
  cands.push_back(cands[1]);
  const auto scores = score_candidates(p, cfg, q, std::span<const VisualInput>(cands));
  EXPECT_EQ(scores[1], scores[5]);
  EXPECT_EQ(scores[2], sequence_log_prob(p, cfg, {q, cands[2]}));

  std::vector<VisualInput> rev(cands.rbegin(), cands.rend());
  const auto rscores = score_candidates(p, cfg, q, std::span<const VisualInput>(rev));
  for (std::size_t i = 0; i < scores.size(); ++i) EXPECT_EQ(rscores[i], scores[scores.size() - 1 - i]);

  const auto one = score_candidates(p, cfg, q, std::span<const VisualInput>(cands.data(), 1));
  EXPECT_EQ(one[0], sequence_log_prob(p, cfg, {q, cands[0]}));
}

TEST(ScoreCandidates, ErrorNamesCandidate) {
  const auto cfg = tiny_config();
  Rng rng(12);
  const auto p = random_params(cfg, rng);
  std::vector<VisualInput> cands{random_visual(cfg, rng), random_visual(cfg, rng)};
  cands[1].x_box.pop_back();
  try {
    score_candidates(p, cfg, {4}, std::span<const VisualInput>(cands));
    FAIL() << "expected InputError";
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("candidate 1"), std::string::npos) << e.what();
  }
}

std::vector<TrainingExample> examples_for(const ScrcConfig& cfg, Rng& rng, int n) {
  std::vector<TrainingExample> out;
  for (int i = 0; i < n; ++i) out.push_back({random_tokens(cfg, rng, 4), random_visual(cfg, rng)});
  return out;
}

TEST(Backward, MatchesFiniteDifferencesInEveryMode) {
  Rng rng(13);
  for (int mode = 0; mode < 4; ++mode) {
    auto cfg = tiny_config(7, 3, 4, 2);
    cfg.caption_mode = mode == 1;
    cfg.mask_spatial = mode == 2;
    cfg.mask_context = mode == 3;
    auto p = random_params(cfg, rng);
    const auto res = check_gradients(p, cfg, examples_for(cfg, rng, 2));
    EXPECT_LT(res.max_rel_error, 1e-6) << "mode " << mode << " " << res.to_json().dump();
  }
}

TEST(Backward, CaptionModeLeavesLocalBranchGradientZero) {
  auto cfg = tiny_config();
  cfg.caption_mode = true;
  Rng rng(14);
  auto p = random_params(cfg, rng);
  for (const auto& ex : examples_for(cfg, rng, 3)) {
    const auto tr = forward(p, cfg, ex.tokens, ex.visual);
    backward(p, cfg, tr, tr.targets);
  }
  for (auto& np : p.named()) {
    const bool local = np.name.starts_with("lstm_local.") || np.name == "W_local";
    if (!local) continue;
    for (double g : np.tensor->grad.data()) EXPECT_EQ(g, 0.0) << np.name;
  }
}

TEST(Backward, MaskSpatialLeavesSpatialColumnsGradientZero) {
  auto cfg = tiny_config();
  cfg.mask_spatial = true;
  Rng rng(15);
  auto p = random_params(cfg, rng);
  for (const auto& ex : examples_for(cfg, rng, 3)) {
    const auto tr = forward(p, cfg, ex.tokens, ex.visual);
    backward(p, cfg, tr, tr.targets);
  }
  const std::size_t first = cfg.hidden_dim + cfg.feat_dim;
  bool any_nonzero = false;
  for (const auto& w : p.lstm_local.w_x) {
    for (std::size_t r = 0; r < w.rows(); ++r) {
      for (std::size_t c = 0; c < w.cols(); ++c) {
        if (c >= first) EXPECT_EQ(w.grad(r, c), 0.0);
        else any_nonzero = any_nonzero || w.grad(r, c) != 0.0;
      }
    }
  }
  EXPECT_TRUE(any_nonzero);
}

TEST(Backward, RejectsMismatchedTrace) {
  const auto cfg = tiny_config();
  Rng rng(16);
  auto p = random_params(cfg, rng);
  auto other = p;
  const auto v = random_visual(cfg, rng);
  const auto tr = forward(p, cfg, {4, 5}, v);
  EXPECT_THROW(backward(other, cfg, tr, tr.targets), ContractError);
  EXPECT_THROW(backward(p, cfg, tr, TokenSequence{4, 2}), ContractError);
  auto masked = cfg;
  masked.mask_context = true;
  EXPECT_THROW(backward(p, masked, tr, tr.targets), ContractError);
}

TEST(Backward, ScaleMultipliesGradients) {
  const auto cfg = tiny_config();
  Rng rng(17);
  auto p = random_params(cfg, rng);
  const auto v = random_visual(cfg, rng);
  const auto tr = forward(p, cfg, {4, 5}, v);
  backward(p, cfg, tr, tr.targets);
  const auto once = p.r.grad;
  p.zero_grads();
  backward(p, cfg, tr, tr.targets, 0.25);
  for (std::size_t i = 0; i < once.size(); ++i)
    EXPECT_NEAR(p.r.grad.data()[i], 0.25 * once.data()[i], 1e-15);
}

TEST(Params, NamesAreUniqueAndStable) {
  const auto cfg = tiny_config();
  ScrcParams<double> p(cfg);
  std::vector<std::string> names;
  for (const auto& np : p.named()) names.push_back(np.name);
  EXPECT_EQ(names.size(), 1u + 3u * 12u + 3u);
  EXPECT_EQ(names.front(), "embed");
  EXPECT_EQ(names[1], "lstm_language.W_xi");
  EXPECT_EQ(names.back(), "r");
  auto sorted = names;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(std::adjacent_find(sorted.begin(), sorted.end()), sorted.end());
}

TEST(Gradcheck, DefaultInstanceWithinTolerance) {
  const auto res = run_gradcheck(0);
  std::size_t total = 0;
  for (const auto& np : ScrcParams<double>(gradcheck_config()).named()) total += np.tensor->value.size();
  EXPECT_EQ(res.elements, total);
  EXPECT_LT(res.max_rel_error, 1e-5) << res.to_json().dump();
}

}  // namespace

#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

#include "scrc/model.hpp"

namespace scrc {

struct Generation {
  TokenSequence tokens;  // content tokens, no markers
  double log_prob = 0.0;  // includes the <eos> term
};

namespace detail {

/// Higher score first; equal scores fall back to the lexicographically
/// smaller token sequence.
inline bool better(double sa, const TokenSequence& a, double sb,
                   const TokenSequence& b) {
  if (sa != sb) return sa > sb;
  return a < b;
}

}  // namespace detail

/// Beam search for argmax_S log p(S, <eos> | visual).
///
/// Only content tokens (ids >= 3) and <eos> are proposed. Once a hypothesis
/// holds max_len content tokens its sole extension is <eos>. Every finished
/// hypothesis takes one of the beam_width slots for good, so width 1 is
/// greedy decoding and a width covering every hypothesis is exhaustive.
template <typename T>
Generation generate_description(const ScrcParams<T>& p, const ScrcConfig& cfg,
                                const VisualInput& visual,
                                std::size_t beam_width, std::size_t max_len) {
  if (beam_width < 1) throw InputError("beam_width must be >= 1");
  if (max_len < 1) throw InputError("max_len must be >= 1");
  const auto prepared = prepare_visual<T>(cfg, visual);

  struct Live {
    TokenSequence tokens;
    double score;
    ModelState<T> state;
    Vec<double> next_log_probs;
  };
  struct Candidate {
    std::size_t parent;
    TokenId token;
    TokenSequence tokens;  // content tokens including `token` unless <eos>
    double score;
  };

  auto advance = [&](ModelState<T>& state, TokenId token) {
    auto out = step_logits(p, cfg, token, prepared, state);
    const auto lp = log_softmax(std::span<const T>(out.logits));
    return Vec<double>(lp.begin(), lp.end());
  };

  std::vector<Live> live;
  {
    auto state = ModelState<T>::zeros(cfg.hidden_dim);
    auto lp = advance(state, kBos);
    live.push_back({{}, 0.0, std::move(state), std::move(lp)});
  }
  std::vector<Generation> finished;

  while (!live.empty() && finished.size() < beam_width) {
    std::vector<Candidate> cands;
    for (std::size_t n = 0; n < live.size(); ++n) {
      const auto& h = live[n];
      cands.push_back({n, kEos, h.tokens, h.score + h.next_log_probs[kEos]});
      if (h.tokens.size() >= max_len) continue;
      for (TokenId v = kNumReserved; v < cfg.vocab_size; ++v) {
        TokenSequence seq = h.tokens;
        seq.push_back(v);
        cands.push_back({n, v, std::move(seq), h.score + h.next_log_probs[v]});
      }
    }
    std::sort(cands.begin(), cands.end(),
              [](const Candidate& a, const Candidate& b) {
                if (a.score != b.score) return a.score > b.score;
                if (a.tokens != b.tokens) return a.tokens < b.tokens;
                // A finished and a live hypothesis can share content tokens.
                return a.token == kEos && b.token != kEos;
              });
    const std::size_t slots = beam_width - finished.size();
    if (cands.size() > slots) cands.resize(slots);

    std::vector<Live> next;
    for (auto& c : cands) {
      if (c.token == kEos) {
        finished.push_back({std::move(c.tokens), c.score});
        continue;
      }
      ModelState<T> state = live[c.parent].state;
      auto lp = advance(state, c.token);
      next.push_back({std::move(c.tokens), c.score, std::move(state),
                      std::move(lp)});
    }
    live = std::move(next);
  }

  auto best = std::min_element(
      finished.begin(), finished.end(),
      [](const Generation& a, const Generation& b) {
        return detail::better(a.log_prob, a.tokens, b.log_prob, b.tokens);
      });
  return *best;
}

}  // namespace scrc

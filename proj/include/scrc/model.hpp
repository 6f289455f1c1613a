#pragma once

// The spatial-context recurrent scoring network.
//
// Per timestep t the language LSTM consumes the embedded input token; the
// local LSTM consumes [h_language, x_box, x_spatial] and the global LSTM
// consumes [h_language, x_context]. Next-word logits are
//
//   W_local * h_local + W_global * h_global + r
//
// A query w_1..w_T is scored as log p(w_1..w_T, <eos>) with inputs
// <bos>, w_1..w_T. Caption mode drops the local branch entirely (the
// W_local = 0 restriction); mask_spatial feeds zeros in place of x_spatial;
// mask_context drops the W_global term.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "scrc/error.hpp"
#include "scrc/geometry.hpp"
#include "scrc/nncore.hpp"
#include "scrc/rng.hpp"
#include "scrc/text.hpp"

namespace scrc {

struct ScrcConfig {
  std::size_t vocab_size = 0;
  std::size_t embed_dim = 1000;
  std::size_t hidden_dim = 1000;
  std::size_t feat_dim = 1000;
  bool caption_mode = false;
  bool mask_spatial = false;
  bool mask_context = false;

  static constexpr std::size_t spatial_dim = kSpatialDim;

  std::size_t local_input_dim() const noexcept {
    return hidden_dim + feat_dim + spatial_dim;
  }
  std::size_t global_input_dim() const noexcept {
    return hidden_dim + feat_dim;
  }

  void validate() const {
    if (vocab_size <= kNumReserved)
      throw ConfigError("vocab_size must exceed the 3 reserved tokens");
    if (embed_dim == 0 || hidden_dim == 0 || feat_dim == 0)
      throw ConfigError("embed_dim, hidden_dim and feat_dim must be positive");
    if (caption_mode && mask_context)
      throw ConfigError(
          "caption_mode with mask_context leaves no visual branch");
  }

  friend bool operator==(const ScrcConfig&, const ScrcConfig&) = default;
};

template <typename T>
struct ScrcParams {
  ParamTensor<T> embed;  // embed_dim x vocab_size; column per token
  LstmParams<T> lstm_language;
  LstmParams<T> lstm_local;
  LstmParams<T> lstm_global;
  ParamTensor<T> w_local;   // vocab_size x hidden_dim
  ParamTensor<T> w_global;  // vocab_size x hidden_dim
  ParamTensor<T> r;         // vocab_size x 1

  ScrcParams() = default;
  explicit ScrcParams(const ScrcConfig& cfg)
      : embed(cfg.embed_dim, cfg.vocab_size),
        lstm_language(cfg.embed_dim, cfg.hidden_dim),
        lstm_local(cfg.local_input_dim(), cfg.hidden_dim),
        lstm_global(cfg.global_input_dim(), cfg.hidden_dim),
        w_local(cfg.vocab_size, cfg.hidden_dim),
        w_global(cfg.vocab_size, cfg.hidden_dim),
        r(cfg.vocab_size, 1) {}

  /// Uniform(-radius, radius) weights, zero biases.
  static ScrcParams initialized(const ScrcConfig& cfg, Rng& rng,
                                double radius = 0.08) {
    ScrcParams p(cfg);
    p.embed.value = init_uniform<T>(rng, cfg.embed_dim, cfg.vocab_size, radius);
    p.lstm_language.init(rng, radius);
    p.lstm_local.init(rng, radius);
    p.lstm_global.init(rng, radius);
    p.w_local.value = init_uniform<T>(rng, cfg.vocab_size, cfg.hidden_dim, radius);
    p.w_global.value =
        init_uniform<T>(rng, cfg.vocab_size, cfg.hidden_dim, radius);
    return p;
  }

  template <typename F>
  void for_each(F&& f) {
    f(std::string("embed"), embed);
    lstm_language.for_each("lstm_language", f);
    lstm_local.for_each("lstm_local", f);
    lstm_global.for_each("lstm_global", f);
    f(std::string("W_local"), w_local);
    f(std::string("W_global"), w_global);
    f(std::string("r"), r);
  }
  template <typename F>
  void for_each(F&& f) const {
    f(std::string("embed"), embed);
    lstm_language.for_each("lstm_language", f);
    lstm_local.for_each("lstm_local", f);
    lstm_global.for_each("lstm_global", f);
    f(std::string("W_local"), w_local);
    f(std::string("W_global"), w_global);
    f(std::string("r"), r);
  }

  std::vector<NamedParam<T>> named() {
    std::vector<NamedParam<T>> out;
    for_each([&](const std::string& n, ParamTensor<T>& p) {
      out.push_back({n, &p});
    });
    return out;
  }

  void zero_grads() {
    for_each([](const std::string&, ParamTensor<T>& p) { p.zero_grad(); });
  }

  void validate(const ScrcConfig& cfg) const {
    auto expect = [](const ParamTensor<T>& p, std::size_t r, std::size_t c,
                     const char* name) {
      if (p.rows() != r || p.cols() != c || !p.value.same_shape(p.grad))
        throw ShapeError(std::string(name) + " has shape " +
                         shape_str(p.rows(), p.cols()) + ", expected " +
                         shape_str(r, c));
    };
    expect(embed, cfg.embed_dim, cfg.vocab_size, "embed");
    expect(w_local, cfg.vocab_size, cfg.hidden_dim, "W_local");
    expect(w_global, cfg.vocab_size, cfg.hidden_dim, "W_global");
    expect(r, cfg.vocab_size, 1, "r");
    const std::pair<const LstmParams<T>*, std::size_t> lstms[] = {
        {&lstm_language, cfg.embed_dim},
        {&lstm_local, cfg.local_input_dim()},
        {&lstm_global, cfg.global_input_dim()}};
    for (const auto& [l, in] : lstms) {
      l->validate();
      if (l->input_dim() != in || l->hidden() != cfg.hidden_dim)
        throw ShapeError("LSTM shape inconsistent with config");
    }
  }

  template <typename U>
  ScrcParams<U> cast() const {
    ScrcParams<U> out;
    auto conv = [](const ParamTensor<T>& src) {
      std::vector<U> data(src.value.data().begin(), src.value.data().end());
      return ParamTensor<U>(Matrix<U>(src.rows(), src.cols(), std::move(data)));
    };
    auto conv_lstm = [&](const LstmParams<T>& src) {
      LstmParams<U> l;
      for (std::size_t k = 0; k < 4; ++k) {
        l.w_x[k] = conv(src.w_x[k]);
        l.w_h[k] = conv(src.w_h[k]);
        l.b[k] = conv(src.b[k]);
      }
      return l;
    };
    out.embed = conv(embed);
    out.lstm_language = conv_lstm(lstm_language);
    out.lstm_local = conv_lstm(lstm_local);
    out.lstm_global = conv_lstm(lstm_global);
    out.w_local = conv(w_local);
    out.w_global = conv(w_global);
    out.r = conv(r);
    return out;
  }
};

/// Visual side of one candidate: region feature, whole-image feature and
/// the box's spatial encoding.
struct VisualInput {
  std::vector<double> x_box;
  std::vector<double> x_context;
  SpatialFeature x_spatial{};
};

struct ScoreRequest {
  TokenSequence query;
  VisualInput visual;
};

/// Visual input laid out as the non-recurrent tails of the two branch LSTM
/// inputs, with masks applied.
template <typename T>
struct PreparedVisual {
  Vec<T> local_tail;   // [x_box, x_spatial]
  Vec<T> global_tail;  // [x_context]
};

template <typename T>
PreparedVisual<T> prepare_visual(const ScrcConfig& cfg, const VisualInput& v) {
  PreparedVisual<T> out;
  if (!cfg.caption_mode) {
    if (v.x_box.size() != cfg.feat_dim)
      throw ShapeError("x_box length " + std::to_string(v.x_box.size()) +
                       " != feat_dim " + std::to_string(cfg.feat_dim));
    out.local_tail.reserve(cfg.feat_dim + kSpatialDim);
    for (double x : v.x_box) out.local_tail.push_back(static_cast<T>(x));
    for (double x : v.x_spatial)
      out.local_tail.push_back(cfg.mask_spatial ? T{0} : static_cast<T>(x));
  }
  if (!cfg.mask_context) {
    if (v.x_context.size() != cfg.feat_dim)
      throw ShapeError("x_context length " + std::to_string(v.x_context.size()) +
                       " != feat_dim " + std::to_string(cfg.feat_dim));
    out.global_tail.assign(v.x_context.begin(), v.x_context.end());
  }
  return out;
}

template <typename T>
struct ModelState {
  LstmState<T> language;
  LstmState<T> local;
  LstmState<T> global;

  static ModelState zeros(std::size_t hidden) {
    return {LstmState<T>::zeros(hidden), LstmState<T>::zeros(hidden),
            LstmState<T>::zeros(hidden)};
  }
};

template <typename T>
struct StepTrace {
  TokenId input = 0;
  StepCache<T> language;
  std::optional<StepCache<T>> local;
  std::optional<StepCache<T>> global;
  Vec<T> logits;
};

template <typename T>
struct StepOutput {
  Vec<T> logits;
  StepTrace<T> trace;
};

template <typename T>
Vec<T> concat(std::span<const T> a, std::span<const T> b) {
  Vec<T> out;
  out.reserve(a.size() + b.size());
  out.insert(out.end(), a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

template <typename T>
Vec<T> embed_token(const ScrcParams<T>& p, TokenId token) {
  if (token >= p.embed.cols())
    throw InputError("token id " + std::to_string(token) +
                     " outside vocabulary of size " +
                     std::to_string(p.embed.cols()));
  Vec<T> e(p.embed.rows());
  for (std::size_t k = 0; k < e.size(); ++k) e[k] = p.embed.value(k, token);
  return e;
}

/// One timestep from an already-embedded input; advances `state`.
template <typename T>
StepOutput<T> step_logits(const ScrcParams<T>& p, const ScrcConfig& cfg,
                          std::span<const T> embedded,
                          const PreparedVisual<T>& visual,
                          ModelState<T>& state) {
  StepOutput<T> out;
  auto [lang, lang_cache] = lstm_step(p.lstm_language, embedded, state.language);
  state.language = std::move(lang);
  out.trace.language = std::move(lang_cache);
  const std::span<const T> h_lang(state.language.h);

  out.logits.assign(p.r.value.data().begin(), p.r.value.data().end());
  auto add_branch = [&](const Matrix<T>& w, const Vec<T>& h) {
    const Vec<T> term = matvec(w, h);
    for (std::size_t v = 0; v < term.size(); ++v) out.logits[v] += term[v];
  };
  if (!cfg.caption_mode) {
    const Vec<T> in = concat(h_lang, std::span<const T>(visual.local_tail));
    auto [local, cache] = lstm_step(p.lstm_local, std::span<const T>(in),
                                    state.local);
    state.local = std::move(local);
    out.trace.local = std::move(cache);
    add_branch(p.w_local.value, state.local.h);
  }
  if (!cfg.mask_context) {
    const Vec<T> in = concat(h_lang, std::span<const T>(visual.global_tail));
    auto [global, cache] = lstm_step(p.lstm_global, std::span<const T>(in),
                                     state.global);
    state.global = std::move(global);
    out.trace.global = std::move(cache);
    add_branch(p.w_global.value, state.global.h);
  }
  out.trace.logits = out.logits;
  return out;
}

template <typename T>
StepOutput<T> step_logits(const ScrcParams<T>& p, const ScrcConfig& cfg,
                          TokenId token, const PreparedVisual<T>& visual,
                          ModelState<T>& state) {
  const Vec<T> e = embed_token(p, token);
  auto out = step_logits(p, cfg, std::span<const T>(e), visual, state);
  out.trace.input = token;
  return out;
}

template <typename T>
struct ForwardTrace {
  const ScrcParams<T>* owner = nullptr;
  TokenSequence targets;  // w_1..w_T, <eos>
  std::vector<StepTrace<T>> steps;
  Accum<T> log_prob = 0;
};

/// Runs <bos>, w_1..w_T through the network and records every step.
template <typename T>
ForwardTrace<T> forward(const ScrcParams<T>& p, const ScrcConfig& cfg,
                        const TokenSequence& query, const VisualInput& visual) {
  if (query.empty()) throw InputError("empty query");
  const auto prepared = prepare_visual<T>(cfg, visual);
  ForwardTrace<T> trace;
  trace.owner = &p;
  trace.targets = query;
  trace.targets.push_back(kEos);
  trace.steps.reserve(trace.targets.size());
  auto state = ModelState<T>::zeros(cfg.hidden_dim);
  TokenId input = kBos;
  Accum<T> total = 0;
  for (const TokenId target : trace.targets) {
    if (target >= cfg.vocab_size)
      throw InputError("token id " + std::to_string(target) +
                       " outside vocabulary");
    auto out = step_logits(p, cfg, input, prepared, state);
    total += log_softmax_at(std::span<const T>(out.logits), target);
    trace.steps.push_back(std::move(out.trace));
    input = target;
  }
  trace.log_prob = total;
  return trace;
}

template <typename T>
double sequence_log_prob(const ScrcParams<T>& p, const ScrcConfig& cfg,
                         const ScoreRequest& request) {
  return static_cast<double>(forward(p, cfg, request.query, request.visual).log_prob);
}

/// Pointwise scores of one query against each candidate, in input order.
template <typename T>
std::vector<double> score_candidates(const ScrcParams<T>& p,
                                     const ScrcConfig& cfg,
                                     const TokenSequence& query,
                                     std::span<const VisualInput> candidates) {
  if (candidates.empty()) throw InputError("no candidates to score");
  std::vector<double> scores;
  scores.reserve(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    try {
      scores.push_back(static_cast<double>(forward(p, cfg, query, candidates[i]).log_prob));
    } catch (const Error& e) {
      throw InputError("candidate " + std::to_string(i) + ": " + e.what());
    }
  }
  return scores;
}

namespace detail {

/// One prediction branch at one step: W * h into the logits, then the
/// branch LSTM. Adds the h_language slice of the LSTM input gradient to
/// `dh_lang` and advances the recurrent gradients.
template <typename T>
void backward_branch(ParamTensor<T>& w, LstmParams<T>& lstm,
                     const StepCache<T>& cache, std::span<const T> dlogits,
                     std::size_t hidden, Vec<T>& dh_next, Vec<T>& dc_next,
                     Vec<T>& dh_lang) {
  Vec<T> h(hidden);
  for (std::size_t j = 0; j < hidden; ++j)
    h[j] = cache.gate[kOutput][j] * cache.tanh_c[j];
  add_outer(w.grad, dlogits, std::span<const T>(h));
  Vec<T> dh = dh_next;
  matvec_transposed_add(w.value, dlogits, std::span<T>(dh));
  const auto g = lstm_step_backward(lstm, cache, std::span<const T>(dh),
                                    std::span<const T>(dc_next));
  for (std::size_t j = 0; j < hidden; ++j) dh_lang[j] += g.dx[j];
  dh_next = g.dh_prev;
  dc_next = g.dc_prev;
}

}  // namespace detail

/// Accumulates scale * d(-log p)/d(params) into the parameter gradients.
template <typename T>
void backward(ScrcParams<T>& p, const ScrcConfig& cfg,
              const ForwardTrace<T>& trace, const TokenSequence& targets,
              T scale = T{1}) {
  if (trace.owner != &p)
    throw ContractError("backward: trace was produced by other parameters");
  if (targets != trace.targets || trace.steps.size() != targets.size())
    throw ContractError("backward: targets do not match the forward trace");

  const std::size_t hidden = cfg.hidden_dim;
  const std::size_t vocab = cfg.vocab_size;
  Vec<T> dh_lang_next(hidden, T{0}), dc_lang_next(hidden, T{0});
  Vec<T> dh_local_next(hidden, T{0}), dc_local_next(hidden, T{0});
  Vec<T> dh_global_next(hidden, T{0}), dc_global_next(hidden, T{0});

  for (std::size_t t = trace.steps.size(); t-- > 0;) {
    const auto& step = trace.steps[t];
    if (step.logits.size() != vocab || step.local.has_value() == cfg.caption_mode ||
        step.global.has_value() == cfg.mask_context)
      throw ContractError("backward: trace does not match config");

    Vec<T> dlogits = softmax(step.logits);
    dlogits[targets[t]] -= T{1};
    for (auto& v : dlogits) v *= scale;
    const std::span<const T> dl(dlogits);
    for (std::size_t v = 0; v < vocab; ++v) p.r.grad(v, 0) += dl[v];

    Vec<T> dh_lang = dh_lang_next;

    if (step.local) {
      detail::backward_branch(p.w_local, p.lstm_local, *step.local, dl, hidden,
                      dh_local_next, dc_local_next, dh_lang);
    }
    if (step.global) {
      detail::backward_branch(p.w_global, p.lstm_global, *step.global, dl, hidden,
                      dh_global_next, dc_global_next, dh_lang);
    }
    const auto g = lstm_step_backward(p.lstm_language, step.language,
                                      std::span<const T>(dh_lang),
                                      std::span<const T>(dc_lang_next));
    dh_lang_next = g.dh_prev;
    dc_lang_next = g.dc_prev;
    for (std::size_t k = 0; k < g.dx.size(); ++k)
      p.embed.grad(k, step.input) += g.dx[k];
  }
}

}  // namespace scrc

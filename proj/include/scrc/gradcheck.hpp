#pragma once

// Central-difference verification of the analytic SCRC gradients. Only the
// forward pass is used to build the numeric side.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "scrc/model.hpp"
#include "scrc/rng.hpp"
#include "scrc/train.hpp"

namespace scrc {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t elements = 0;

  nlohmann::json to_json() const {
    return {{"max_rel_error", max_rel_error}, {"worst_param", worst_param},
            {"worst_index", worst_index},     {"analytic", analytic},
            {"numeric", numeric},             {"elements_checked", elements}};
  }
};

inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

/// Summed negative log-likelihood over `examples`.
template <typename T>
Accum<T> total_nll(const ScrcParams<T>& p, const ScrcConfig& cfg,
                   const std::vector<TrainingExample>& examples) {
  Accum<T> total = 0;
  for (const auto& ex : examples) total -= forward(p, cfg, ex.tokens, ex.visual).log_prob;
  return total;
}

/// Compares the 64-bit analytic gradients from backward() against central
/// differences for every parameter element. The differences are taken on
/// the same network instantiated with scalar type `Probe`; with long double
/// the rounding noise of the loss no longer swamps small gradients.
template <typename Probe = long double>
GradCheckResult check_gradients(ScrcParams<double>& p, const ScrcConfig& cfg,
                                const std::vector<TrainingExample>& examples,
                                double step = 1e-5) {
  p.zero_grads();
  for (const auto& ex : examples) {
    const auto trace = forward(p, cfg, ex.tokens, ex.visual);
    backward(p, cfg, trace, trace.targets);
  }
  auto probe = p.template cast<Probe>();
  auto probe_params = probe.named();
  const auto analytic_params = p.named();
  GradCheckResult res;
  for (std::size_t n = 0; n < probe_params.size(); ++n) {
    const auto& np = analytic_params[n];
    auto& values = probe_params[n].tensor->value.data();
    const auto& grads = np.tensor->grad.data();
    for (std::size_t e = 0; e < values.size(); ++e) {
      const Probe saved = values[e];
      values[e] = saved + static_cast<Probe>(step);
      const auto up = total_nll(probe, cfg, examples);
      values[e] = saved - static_cast<Probe>(step);
      const auto down = total_nll(probe, cfg, examples);
      values[e] = saved;
      const double numeric = static_cast<double>((up - down) / (2 * static_cast<Probe>(step)));
      const double err = relative_error(grads[e], numeric);
      ++res.elements;
      if (err > res.max_rel_error || res.worst_param.empty()) {
        res.max_rel_error = std::max(res.max_rel_error, err);
        res.worst_param = np.name;
        res.worst_index = e;
        res.analytic = grads[e];
        res.numeric = numeric;
      }
    }
  }
  return res;
}

/// The small configuration used for gradient verification.
inline ScrcConfig gradcheck_config() {
  ScrcConfig cfg;
  cfg.vocab_size = 12;
  cfg.embed_dim = 6;
  cfg.hidden_dim = 8;
  cfg.feat_dim = 5;
  return cfg;
}

/// Random parameters and a handful of random training examples.
inline std::vector<TrainingExample> random_examples(const ScrcConfig& cfg, Rng& rng,
                                                    std::size_t count, std::size_t max_len) {
  std::vector<TrainingExample> out;
  for (std::size_t n = 0; n < count; ++n) {
    TrainingExample ex;
    const auto len = 1 + rng.below(max_len);
    for (std::size_t t = 0; t < len; ++t)
      ex.tokens.push_back(static_cast<TokenId>(rng.below(cfg.vocab_size)));
    ex.visual.x_box.resize(cfg.feat_dim);
    ex.visual.x_context.resize(cfg.feat_dim);
    for (auto& v : ex.visual.x_box) v = rng.uniform(-1.0, 1.0);
    for (auto& v : ex.visual.x_context) v = rng.uniform(-1.0, 1.0);
    for (auto& v : ex.visual.x_spatial) v = rng.uniform(-1.0, 1.0);
    out.push_back(std::move(ex));
  }
  return out;
}

template <typename Probe = long double>
GradCheckResult run_gradcheck(std::uint64_t seed, const ScrcConfig& cfg = gradcheck_config()) {
  Rng rng(seed);
  auto p = ScrcParams<double>::initialized(cfg, rng, 0.5);
  for (auto& np : p.named())
    if (np.name.find(".b_") != std::string::npos || np.name == "r")
      np.tensor->value = init_uniform<double>(rng, np.tensor->rows(), np.tensor->cols(), 0.5);
  const auto examples = random_examples(cfg, rng, 3, 4);
  return check_gradients<Probe>(p, cfg, examples);
}

}  // namespace scrc

#pragma once

// Dense linear algebra, activations, the LSTM unit with exact gradients and
// a momentum SGD optimizer. Everything is templated on the scalar type:
// float for training, double for gradient verification.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "scrc/error.hpp"
#include "scrc/rng.hpp"

namespace scrc {

template <typename T>
using Vec = std::vector<T>;

template <typename T>
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T{0})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_)
      throw ShapeError("matrix data length " + std::to_string(data_.size()) +
                       " != " + std::to_string(rows_) + "x" +
                       std::to_string(cols_));
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = T{1};
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols_ + c];
  }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::vector<T>& data() noexcept { return data_; }
  const std::vector<T>& data() const noexcept { return data_; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_shape(const Matrix& o) const noexcept {
    return rows_ == o.rows_ && cols_ == o.cols_;
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](T v) { return std::isfinite(v); });
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

inline std::string shape_str(std::size_t r, std::size_t c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

template <typename T>
Vec<T> matvec(const Matrix<T>& m, std::span<const T> v) {
  if (m.cols() != v.size())
    throw ShapeError("matvec: matrix " + shape_str(m.rows(), m.cols()) +
                     " times vector of length " + std::to_string(v.size()));
  Vec<T> out(m.rows(), T{0});
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto row = m.row(r);
    T acc{0};
    for (std::size_t c = 0; c < row.size(); ++c) acc += row[c] * v[c];
    out[r] = acc;
  }
  return out;
}

template <typename T>
Vec<T> matvec(const Matrix<T>& m, const Vec<T>& v) {
  return matvec(m, std::span<const T>(v));
}

/// out += m^T v
template <typename T>
void matvec_transposed_add(const Matrix<T>& m, std::span<const T> v,
                           std::span<T> out) {
  if (m.rows() != v.size() || m.cols() != out.size())
    throw ShapeError("matvec_transposed_add: matrix " +
                     shape_str(m.rows(), m.cols()) + ", vector " +
                     std::to_string(v.size()) + ", out " +
                     std::to_string(out.size()));
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const T vr = v[r];
    if (vr == T{0}) continue;
    const auto row = m.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) out[c] += row[c] * vr;
  }
}

/// m += a b^T
template <typename T>
void add_outer(Matrix<T>& m, std::span<const T> a, std::span<const T> b) {
  if (m.rows() != a.size() || m.cols() != b.size())
    throw ShapeError("add_outer: matrix " + shape_str(m.rows(), m.cols()) +
                     " vs " + shape_str(a.size(), b.size()));
  for (std::size_t r = 0; r < a.size(); ++r) {
    const T ar = a[r];
    if (ar == T{0}) continue;
    auto row = m.row(r);
    for (std::size_t c = 0; c < b.size(); ++c) row[c] += ar * b[c];
  }
}

template <typename T>
T sigmoid(T x) {
  if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
  const T e = std::exp(x);
  return e / (T{1} + e);
}

template <typename T>
Vec<T> sigmoid(std::span<const T> x) {
  Vec<T> out(x.size());
  std::transform(x.begin(), x.end(), out.begin(),
                 [](T v) { return sigmoid(v); });
  return out;
}

template <typename T>
Vec<T> tanh_act(std::span<const T> x) {
  Vec<T> out(x.size());
  std::transform(x.begin(), x.end(), out.begin(),
                 [](T v) { return std::tanh(v); });
  return out;
}

/// Numerically stable softmax (max-subtracted).
template <typename T>
Vec<T> softmax(std::span<const T> logits) {
  if (logits.empty()) throw ShapeError("softmax of empty vector");
  const T mx = *std::max_element(logits.begin(), logits.end());
  Vec<T> out(logits.size());
  T sum{0};
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    sum += out[i];
  }
  for (auto& v : out) v /= sum;
  return out;
}

template <typename T>
Vec<T> softmax(const Vec<T>& logits) {
  return softmax(std::span<const T>(logits));
}

/// Log-domain accumulator type: at least double.
template <typename T>
using Accum = std::conditional_t<(sizeof(T) > sizeof(double)), T, double>;

template <typename T>
Accum<T> log_sum_exp(std::span<const T> logits) {
  using A = Accum<T>;
  if (logits.empty()) throw ShapeError("log_softmax of empty vector");
  const A mx = static_cast<A>(*std::max_element(logits.begin(), logits.end()));
  A sum{0};
  for (T v : logits) sum += std::exp(static_cast<A>(v) - mx);
  return mx + std::log(sum);
}

/// log(softmax(logits))[index] without forming the full distribution.
template <typename T>
Accum<T> log_softmax_at(std::span<const T> logits, std::size_t index) {
  const auto lse = log_sum_exp(logits);
  if (index >= logits.size())
    throw ShapeError("log_softmax index " + std::to_string(index) +
                     " out of range " + std::to_string(logits.size()));
  return static_cast<Accum<T>>(logits[index]) - lse;
}

template <typename T>
Vec<Accum<T>> log_softmax(std::span<const T> logits) {
  const auto lse = log_sum_exp(logits);
  Vec<Accum<T>> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i)
    out[i] = static_cast<Accum<T>>(logits[i]) - lse;
  return out;
}

template <typename T>
struct ParamTensor {
  Matrix<T> value;
  Matrix<T> grad;

  ParamTensor() = default;
  ParamTensor(std::size_t rows, std::size_t cols)
      : value(rows, cols), grad(rows, cols) {}
  explicit ParamTensor(Matrix<T> v)
      : value(std::move(v)), grad(value.rows(), value.cols()) {}

  std::size_t rows() const noexcept { return value.rows(); }
  std::size_t cols() const noexcept { return value.cols(); }
  void zero_grad() { grad.fill(T{0}); }
};

template <typename T>
Matrix<T> init_uniform(Rng& rng, std::size_t rows, std::size_t cols,
                       double radius) {
  if (!(radius > 0.0))
    throw InputError("init_uniform: radius must be positive");
  Matrix<T> m(rows, cols);
  for (auto& v : m.data()) v = static_cast<T>(rng.uniform(-radius, radius));
  return m;
}

enum Gate : std::size_t { kInput = 0, kForget = 1, kOutput = 2, kCell = 3 };
inline constexpr std::array<const char*, 4> kGateSuffix = {"i", "f", "o", "g"};

/// Parameters of one LSTM unit: per-gate input weights, recurrent weights
/// and biases, indexed by Gate.
template <typename T>
struct LstmParams {
  std::array<ParamTensor<T>, 4> w_x;
  std::array<ParamTensor<T>, 4> w_h;
  std::array<ParamTensor<T>, 4> b;

  LstmParams() = default;
  LstmParams(std::size_t input_dim, std::size_t hidden) {
    for (std::size_t k = 0; k < 4; ++k) {
      w_x[k] = ParamTensor<T>(hidden, input_dim);
      w_h[k] = ParamTensor<T>(hidden, hidden);
      b[k] = ParamTensor<T>(hidden, 1);
    }
  }

  std::size_t input_dim() const noexcept { return w_x[0].cols(); }
  std::size_t hidden() const noexcept { return w_h[0].rows(); }

  void validate() const {
    const auto in = input_dim(), h = hidden();
    for (std::size_t k = 0; k < 4; ++k) {
      if (w_x[k].rows() != h || w_x[k].cols() != in || w_h[k].rows() != h ||
          w_h[k].cols() != h || b[k].rows() != h || b[k].cols() != 1)
        throw ShapeError("inconsistent LSTM parameter shapes");
    }
  }

  /// Visits (name, tensor) in a fixed order.
  template <typename F>
  void for_each(const std::string& prefix, F&& f) {
    for (std::size_t k = 0; k < 4; ++k)
      f(prefix + ".W_x" + kGateSuffix[k], w_x[k]);
    for (std::size_t k = 0; k < 4; ++k)
      f(prefix + ".W_h" + kGateSuffix[k], w_h[k]);
    for (std::size_t k = 0; k < 4; ++k)
      f(prefix + ".b_" + kGateSuffix[k], b[k]);
  }
  template <typename F>
  void for_each(const std::string& prefix, F&& f) const {
    for (std::size_t k = 0; k < 4; ++k)
      f(prefix + ".W_x" + kGateSuffix[k], w_x[k]);
    for (std::size_t k = 0; k < 4; ++k)
      f(prefix + ".W_h" + kGateSuffix[k], w_h[k]);
    for (std::size_t k = 0; k < 4; ++k)
      f(prefix + ".b_" + kGateSuffix[k], b[k]);
  }

  void init(Rng& rng, double radius) {
    for (std::size_t k = 0; k < 4; ++k) {
      w_x[k].value = init_uniform<T>(rng, w_x[k].rows(), w_x[k].cols(), radius);
      w_h[k].value = init_uniform<T>(rng, w_h[k].rows(), w_h[k].cols(), radius);
      b[k].value.fill(T{0});
    }
  }
};

template <typename T>
struct LstmState {
  Vec<T> h;
  Vec<T> c;

  static LstmState zeros(std::size_t hidden) {
    return {Vec<T>(hidden, T{0}), Vec<T>(hidden, T{0})};
  }
};

/// Intermediates of one forward step, consumed by lstm_step_backward.
template <typename T>
struct StepCache {
  const LstmParams<T>* owner = nullptr;
  Vec<T> x;
  Vec<T> h_prev;
  Vec<T> c_prev;
  std::array<Vec<T>, 4> gate;  // post-activation i, f, o, g
  Vec<T> c;
  Vec<T> tanh_c;
};

template <typename T>
struct StepGrads {
  Vec<T> dx;
  Vec<T> dh_prev;
  Vec<T> dc_prev;
};

template <typename T>
std::pair<LstmState<T>, StepCache<T>> lstm_step(const LstmParams<T>& p,
                                                std::span<const T> x,
                                                const LstmState<T>& prev) {
  const std::size_t hidden = p.hidden();
  if (x.size() != p.input_dim())
    throw ShapeError("lstm_step: input length " + std::to_string(x.size()) +
                     " != input_dim " + std::to_string(p.input_dim()));
  if (prev.h.size() != hidden || prev.c.size() != hidden)
    throw ShapeError("lstm_step: state size != hidden " +
                     std::to_string(hidden));

  StepCache<T> cache;
  cache.owner = &p;
  cache.x.assign(x.begin(), x.end());
  cache.h_prev = prev.h;
  cache.c_prev = prev.c;
  for (std::size_t k = 0; k < 4; ++k) {
    Vec<T> pre = matvec(p.w_x[k].value, x);
    const Vec<T> rec = matvec(p.w_h[k].value, std::span<const T>(prev.h));
    for (std::size_t j = 0; j < hidden; ++j)
      pre[j] += rec[j] + p.b[k].value(j, 0);
    cache.gate[k] = k == kCell ? tanh_act(std::span<const T>(pre))
                               : sigmoid(std::span<const T>(pre));
  }
  const auto& i = cache.gate[kInput];
  const auto& f = cache.gate[kForget];
  const auto& o = cache.gate[kOutput];
  const auto& g = cache.gate[kCell];

  LstmState<T> next{Vec<T>(hidden), Vec<T>(hidden)};
  cache.tanh_c.resize(hidden);
  for (std::size_t j = 0; j < hidden; ++j) {
    next.c[j] = f[j] * prev.c[j] + i[j] * g[j];
    cache.tanh_c[j] = std::tanh(next.c[j]);
    next.h[j] = o[j] * cache.tanh_c[j];
  }
  cache.c = next.c;
  return {std::move(next), std::move(cache)};
}

/// Backpropagates upstream gradients (dh into h_t, dc into c_t) through one
/// step. Parameter gradients are accumulated into `p`.
template <typename T>
StepGrads<T> lstm_step_backward(LstmParams<T>& p, const StepCache<T>& cache,
                                std::span<const T> dh, std::span<const T> dc) {
  const std::size_t hidden = p.hidden();
  if (cache.owner != &p)
    throw ContractError("lstm_step_backward: cache belongs to other params");
  if (cache.x.size() != p.input_dim() || cache.c.size() != hidden ||
      cache.h_prev.size() != hidden)
    throw ContractError("lstm_step_backward: cache shape does not match params");
  if (dh.size() != hidden || dc.size() != hidden)
    throw ShapeError("lstm_step_backward: upstream gradient size != hidden");

  const auto& i = cache.gate[kInput];
  const auto& f = cache.gate[kForget];
  const auto& o = cache.gate[kOutput];
  const auto& g = cache.gate[kCell];

  std::array<Vec<T>, 4> da;
  for (auto& v : da) v.assign(hidden, T{0});
  StepGrads<T> out{Vec<T>(p.input_dim(), T{0}), Vec<T>(hidden, T{0}),
                   Vec<T>(hidden, T{0})};
  for (std::size_t j = 0; j < hidden; ++j) {
    const T tc = cache.tanh_c[j];
    const T dct = dc[j] + dh[j] * o[j] * (T{1} - tc * tc);
    const T d_o = dh[j] * tc;
    const T d_i = dct * g[j];
    const T d_g = dct * i[j];
    const T d_f = dct * cache.c_prev[j];
    out.dc_prev[j] = dct * f[j];
    da[kInput][j] = d_i * i[j] * (T{1} - i[j]);
    da[kForget][j] = d_f * f[j] * (T{1} - f[j]);
    da[kOutput][j] = d_o * o[j] * (T{1} - o[j]);
    da[kCell][j] = d_g * (T{1} - g[j] * g[j]);
  }
  for (std::size_t k = 0; k < 4; ++k) {
    const std::span<const T> dak(da[k]);
    add_outer(p.w_x[k].grad, dak, std::span<const T>(cache.x));
    add_outer(p.w_h[k].grad, dak, std::span<const T>(cache.h_prev));
    for (std::size_t j = 0; j < hidden; ++j) p.b[k].grad(j, 0) += dak[j];
    matvec_transposed_add(p.w_x[k].value, dak, std::span<T>(out.dx));
    matvec_transposed_add(p.w_h[k].value, dak, std::span<T>(out.dh_prev));
  }
  return out;
}

template <typename T>
struct NamedParam {
  std::string name;
  ParamTensor<T>* tensor;
};

/// SGD with momentum and global-norm gradient clipping. Velocities are kept
/// per parameter position, so the parameter list must keep a stable order.
template <typename T>
class SgdOptimizer {
 public:
  SgdOptimizer(double lr, double momentum, double clip_norm)
      : lr_(lr), momentum_(momentum), clip_norm_(clip_norm) {
    if (!(lr >= 0.0) || !std::isfinite(lr))
      throw ConfigError("learning rate must be finite and non-negative");
    if (!(momentum >= 0.0 && momentum < 1.0))
      throw ConfigError("momentum must lie in [0, 1)");
    if (!(clip_norm > 0.0))
      throw ConfigError("clip_norm must be positive");
  }

  double lr() const noexcept { return lr_; }

  /// Returns the global gradient norm before clipping.
  double step(const std::vector<NamedParam<T>>& params) {
    if (velocity_.empty()) {
      for (const auto& p : params)
        velocity_.emplace_back(p.tensor->rows(), p.tensor->cols());
    }
    if (velocity_.size() != params.size())
      throw ContractError("optimizer parameter list changed size");

    double sq = 0.0;
    for (const auto& p : params) {
      if (!p.tensor->grad.all_finite())
        throw TrainingError("non-finite gradient in parameter '" + p.name +
                            "'");
      for (T g : p.tensor->grad.data())
        sq += static_cast<double>(g) * static_cast<double>(g);
    }
    const double norm = std::sqrt(sq);
    const double scale =
        (std::isfinite(clip_norm_) && norm > clip_norm_) ? clip_norm_ / norm
                                                         : 1.0;
    const T mom = static_cast<T>(momentum_);
    const T step = static_cast<T>(lr_ * scale);
    for (std::size_t n = 0; n < params.size(); ++n) {
      auto& value = params[n].tensor->value.data();
      auto& grad = params[n].tensor->grad.data();
      auto& vel = velocity_[n].data();
      if (vel.size() != value.size())
        throw ContractError("optimizer velocity shape mismatch for '" +
                            params[n].name + "'");
      for (std::size_t e = 0; e < value.size(); ++e) {
        vel[e] = mom * vel[e] - step * grad[e];
        value[e] += vel[e];
        grad[e] = T{0};
      }
    }
    return norm;
  }

 private:
  double lr_;
  double momentum_;
  double clip_norm_;
  std::vector<Matrix<T>> velocity_;
};

}  // namespace scrc

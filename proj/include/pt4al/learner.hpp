#pragma once

// Small feedforward classifier: optional valid 2-D convolution, a stack of
// dense hidden layers, and a linear output layer trained with softmax
// cross-entropy and momentum SGD. Used both as the rotation model and as the
// main task model.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "pt4al/error.hpp"
#include "pt4al/rng.hpp"
#include "pt4al/tensor.hpp"

namespace pt4al {

enum class Activation { relu, tanh };

struct InputShape {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 1;

  std::size_t size() const { return height * width * channels; }
  friend bool operator==(const InputShape&, const InputShape&) = default;
};

/// Single convolution layer, stride 1, no padding. Disabled when filters == 0.
struct ConvSpec {
  std::size_t filters = 0;
  std::size_t kernel = 3;

  bool enabled() const { return filters > 0; }
  friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};

/// Step schedule: the rate is multiplied by `decay` once each milestone
/// (a fraction of the epoch budget) has been reached.
struct LrSchedule {
  double initial = 0.05;
  std::vector<double> milestones{0.5, 0.75};
  double decay = 0.1;

  double rate_at(std::size_t epoch, std::size_t epochs) const {
    double rate = initial;
    for (double m : milestones) {
      if (static_cast<double>(epoch) >= m * static_cast<double>(epochs)) rate *= decay;
    }
    return rate;
  }
  friend bool operator==(const LrSchedule&, const LrSchedule&) = default;
};

struct LearnerConfig {
  InputShape input;
  ConvSpec conv;
  std::vector<std::size_t> hidden{128, 64};
  std::size_t classes = 2;
  Activation activation = Activation::relu;
  LrSchedule schedule;
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::size_t epochs = 20;
  std::size_t minibatch = 32;
  std::uint64_t seed = 0;
  double init_scale = 1.0;

  void validate() const {
    require(input.size() > 0, "learner input dimensions must be positive");
    require(classes >= 2, "learner needs at least 2 output classes");
    require(epochs >= 1, "learner needs at least 1 epoch");
    require(minibatch >= 1, "minibatch size must be positive");
    require(schedule.initial >= 0.0 && std::isfinite(schedule.initial),
            "learning rate must be finite and non-negative");
    require(schedule.decay > 0.0, "learning-rate decay must be positive");
    require(momentum >= 0.0 && momentum < 1.0, "momentum must lie in [0, 1)");
    require(weight_decay >= 0.0, "weight decay must be non-negative");
    require(init_scale >= 0.0 && std::isfinite(init_scale), "init scale must be finite and non-negative");
    for (auto width : hidden) require(width > 0, "hidden layer widths must be positive");
    if (conv.enabled()) {
      require(conv.kernel >= 1 && conv.kernel <= input.height && conv.kernel <= input.width,
              "convolution kernel does not fit the input");
    }
  }

  friend bool operator==(const LearnerConfig&, const LearnerConfig&) = default;
};

/// Flat list of parameter tensors. Layout: [conv weight {F,k,k,C}, conv bias {F}]
/// when convolution is enabled, then (weight {out,in}, bias {out}) per dense layer.
/// Gradients share the same layout.
struct Parameters {
  std::vector<Tensor> tensors;

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.size();
    return n;
  }
  bool all_finite() const {
    return std::all_of(tensors.begin(), tensors.end(), [](const Tensor& t) { return t.all_finite(); });
  }
  friend bool operator==(const Parameters&, const Parameters&) = default;
};

using Gradient = Parameters;

struct LearnerState {
  LearnerConfig config;
  Parameters params;
  std::size_t trained_epochs = 0;

  friend bool operator==(const LearnerState&, const LearnerState&) = default;
};

/// Row-major design matrix with class labels.
struct LabeledSet {
  std::size_t dim = 0;
  std::vector<double> inputs;
  std::vector<std::size_t> labels;

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }
  std::span<const double> row(std::size_t i) const { return {inputs.data() + i * dim, dim}; }

  void add(std::span<const double> x, std::size_t label) {
    if (dim == 0 && labels.empty()) dim = x.size();
    require(x.size() == dim, "example dimension mismatch");
    inputs.insert(inputs.end(), x.begin(), x.end());
    labels.push_back(label);
  }
};

namespace detail {

inline std::size_t conv_out_height(const LearnerConfig& c) { return c.input.height - c.conv.kernel + 1; }
inline std::size_t conv_out_width(const LearnerConfig& c) { return c.input.width - c.conv.kernel + 1; }

inline std::size_t dense_input_size(const LearnerConfig& c) {
  if (!c.conv.enabled()) return c.input.size();
  return c.conv.filters * conv_out_height(c) * conv_out_width(c);
}

inline std::size_t first_dense_index(const LearnerConfig& c) { return c.conv.enabled() ? 2 : 0; }

inline double activate(Activation a, double z) {
  return a == Activation::relu ? (z > 0.0 ? z : 0.0) : std::tanh(z);
}

/// Derivative expressed through the pre-activation z and output value.
inline double activate_prime(Activation a, double z, double out) {
  return a == Activation::relu ? (z > 0.0 ? 1.0 : 0.0) : 1.0 - out * out;
}

inline double log_sum_exp(std::span<const double> logits) {
  const double peak = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z - peak);
  return peak + std::log(sum);
}

/// Intermediate values of one forward pass.
struct Trace {
  std::vector<double> conv_pre;
  std::vector<double> conv_act;
  std::vector<std::vector<double>> pre;  // per dense layer
  std::vector<std::vector<double>> act;  // per dense layer; last entry equals pre (linear output)
};

inline Parameters zero_like(const Parameters& p) {
  Parameters z;
  z.tensors.reserve(p.tensors.size());
  for (const auto& t : p.tensors) z.tensors.emplace_back(t.shape(), 0.0);
  return z;
}

inline void check_layout(const LearnerState& state) {
  const auto& c = state.config;
  const std::size_t expected = first_dense_index(c) + 2 * (c.hidden.size() + 1);
  require(state.params.tensors.size() == expected, "parameter layout does not match learner config");
}

inline void forward(const LearnerState& state, std::span<const double> x, Trace& trace) {
  const auto& c = state.config;
  const auto& p = state.params.tensors;
  std::span<const double> a = x;

  if (c.conv.enabled()) {
    const std::size_t oh = conv_out_height(c), ow = conv_out_width(c);
    const std::size_t k = c.conv.kernel, ch = c.input.channels, w = c.input.width;
    const auto& kw = p[0];
    const auto& kb = p[1];
    trace.conv_pre.assign(c.conv.filters * oh * ow, 0.0);
    trace.conv_act.resize(trace.conv_pre.size());
    for (std::size_t f = 0; f < c.conv.filters; ++f) {
      const double* filter = kw.data().data() + f * k * k * ch;
      for (std::size_t i = 0; i < oh; ++i) {
        for (std::size_t j = 0; j < ow; ++j) {
          double z = kb[f];
          for (std::size_t di = 0; di < k; ++di) {
            const double* in_row = x.data() + ((i + di) * w + j) * ch;
            const double* f_row = filter + di * k * ch;
            for (std::size_t t = 0; t < k * ch; ++t) z += f_row[t] * in_row[t];
          }
          const std::size_t o = (f * oh + i) * ow + j;
          trace.conv_pre[o] = z;
          trace.conv_act[o] = activate(c.activation, z);
        }
      }
    }
    a = trace.conv_act;
  }

  const std::size_t layers = c.hidden.size() + 1;
  trace.pre.resize(layers);
  trace.act.resize(layers);
  const std::size_t base = first_dense_index(c);
  for (std::size_t l = 0; l < layers; ++l) {
    const auto& weight = p[base + 2 * l];
    const auto& bias = p[base + 2 * l + 1];
    const std::size_t out = weight.shape()[0], in = weight.shape()[1];
    auto& z = trace.pre[l];
    z.resize(out);
    const double* wd = weight.data().data();
    for (std::size_t o = 0; o < out; ++o) {
      const double* row = wd + o * in;
      double s = 0.0;
      for (std::size_t i = 0; i < in; ++i) s += row[i] * a[i];
      z[o] = s + bias[o];
    }
    auto& y = trace.act[l];
    if (l + 1 < layers) {
      y.resize(out);
      for (std::size_t o = 0; o < out; ++o) y[o] = activate(c.activation, z[o]);
    } else {
      y = z;
    }
    a = y;
  }
}

/// Adds the gradient of -log softmax(x)[label] to `g`; returns that loss.
inline double accumulate(const LearnerState& state, std::span<const double> x, std::size_t label,
                         Trace& trace, Parameters& g) {
  const auto& c = state.config;
  const auto& p = state.params.tensors;
  forward(state, x, trace);
  const std::vector<double>& logits = trace.pre.back();
  const double lse = log_sum_exp(logits);
  const double loss = lse - logits[label];

  std::vector<double> delta(logits.size());
  for (std::size_t o = 0; o < logits.size(); ++o) delta[o] = std::exp(logits[o] - lse);
  delta[label] -= 1.0;

  const std::size_t base = first_dense_index(c);
  const std::size_t layers = c.hidden.size() + 1;
  std::vector<double> back;
  for (std::size_t l = layers; l-- > 0;) {
    std::span<const double> input;
    if (l > 0) {
      input = trace.act[l - 1];
    } else if (c.conv.enabled()) {
      input = trace.conv_act;
    } else {
      input = x;
    }
    const auto& weight = p[base + 2 * l];
    auto& gw = g.tensors[base + 2 * l];
    auto& gb = g.tensors[base + 2 * l + 1];
    const std::size_t out = weight.shape()[0], in = weight.shape()[1];
    double* gwd = gw.data().data();
    for (std::size_t o = 0; o < out; ++o) {
      const double d = delta[o];
      gb[o] += d;
      if (d == 0.0) continue;
      double* row = gwd + o * in;
      for (std::size_t i = 0; i < in; ++i) row[i] += d * input[i];
    }
    if (l == 0 && !c.conv.enabled()) break;

    back.assign(in, 0.0);
    const double* wd = weight.data().data();
    for (std::size_t o = 0; o < out; ++o) {
      const double d = delta[o];
      if (d == 0.0) continue;
      const double* row = wd + o * in;
      for (std::size_t i = 0; i < in; ++i) back[i] += row[i] * d;
    }
    const auto& pre = l > 0 ? trace.pre[l - 1] : trace.conv_pre;
    const auto& act = l > 0 ? trace.act[l - 1] : trace.conv_act;
    delta.resize(in);
    for (std::size_t i = 0; i < in; ++i) delta[i] = back[i] * activate_prime(c.activation, pre[i], act[i]);
  }

  if (c.conv.enabled()) {
    const std::size_t oh = conv_out_height(c), ow = conv_out_width(c);
    const std::size_t k = c.conv.kernel, ch = c.input.channels, w = c.input.width;
    auto& gk = g.tensors[0];
    auto& gkb = g.tensors[1];
    for (std::size_t f = 0; f < c.conv.filters; ++f) {
      double* filter = gk.data().data() + f * k * k * ch;
      for (std::size_t i = 0; i < oh; ++i) {
        for (std::size_t j = 0; j < ow; ++j) {
          const double d = delta[(f * oh + i) * ow + j];
          if (d == 0.0) continue;
          gkb[f] += d;
          for (std::size_t di = 0; di < k; ++di) {
            const double* in_row = x.data() + ((i + di) * w + j) * ch;
            double* f_row = filter + di * k * ch;
            for (std::size_t t = 0; t < k * ch; ++t) f_row[t] += d * in_row[t];
          }
        }
      }
    }
  }
  return loss;
}

inline void scale(Parameters& g, double factor) {
  for (auto& t : g.tensors) {
    for (double& v : t.data()) v *= factor;
  }
}

}  // namespace detail

inline LearnerState init_learner(const LearnerConfig& config) {
  config.validate();
  LearnerState state;
  state.config = config;
  auto rng = make_stream(config.seed, "init");

  // He-normal scaled by init_scale; biases start at zero.
  auto add_layer = [&](std::vector<std::size_t> weight_shape, std::size_t fan_in, std::size_t out) {
    Tensor weight(std::move(weight_shape));
    const double stddev = config.init_scale * std::sqrt(2.0 / static_cast<double>(fan_in));
    for (double& v : weight.data()) v = stddev * standard_normal(rng);
    state.params.tensors.push_back(std::move(weight));
    state.params.tensors.emplace_back(std::vector<std::size_t>{out}, 0.0);
  };

  if (config.conv.enabled()) {
    const std::size_t k = config.conv.kernel, ch = config.input.channels;
    add_layer({config.conv.filters, k, k, ch}, k * k * ch, config.conv.filters);
  }
  std::size_t in = detail::dense_input_size(config);
  for (auto width : config.hidden) {
    add_layer({width, in}, in, width);
    in = width;
  }
  add_layer({config.classes, in}, in, config.classes);
  return state;
}

/// Numerically stable softmax (max subtraction).
inline std::vector<double> softmax(std::span<const double> logits) {
  require(!logits.empty(), "softmax of an empty vector");
  const double peak = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) sum += (p[i] = std::exp(logits[i] - peak));
  for (double& v : p) v /= sum;
  return p;
}

inline std::vector<double> logits(const LearnerState& state, std::span<const double> x) {
  require(x.size() == state.config.input.size(), "input size does not match learner input dimensions");
  detail::check_layout(state);
  detail::Trace trace;
  detail::forward(state, x, trace);
  return trace.pre.back();
}

inline std::vector<double> predict_proba(const LearnerState& state, std::span<const double> x) {
  return softmax(logits(state, x));
}

inline std::vector<double> predict_proba(const LearnerState& state, const Tensor& x) {
  return predict_proba(state, x.data());
}

inline std::size_t predict_class(const LearnerState& state, std::span<const double> x) {
  const auto z = logits(state, x);
  return static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
}

/// Cross-entropy -log p_label, evaluated as logsumexp(z) - z_label.
inline double per_sample_loss(const LearnerState& state, std::span<const double> x, std::size_t label) {
  require(label < state.config.classes, "label index out of range");
  const auto z = logits(state, x);
  return std::max(0.0, detail::log_sum_exp(z) - z[label]);
}

inline double per_sample_loss(const LearnerState& state, const Tensor& x, std::size_t label) {
  return per_sample_loss(state, x.data(), label);
}

/// Gradient of the mean cross-entropy over the examples `indices` of `data`.
inline Gradient grad(const LearnerState& state, const LabeledSet& data, std::span<const std::size_t> indices) {
  require(!indices.empty(), "gradient of an empty minibatch");
  require(data.dim == state.config.input.size(), "dataset dimension does not match learner input");
  detail::check_layout(state);
  Gradient g = detail::zero_like(state.params);
  detail::Trace trace;
  for (auto i : indices) {
    require(i < data.size(), "minibatch index out of range");
    require(data.labels[i] < state.config.classes, "label index out of range");
    detail::accumulate(state, data.row(i), data.labels[i], trace, g);
  }
  detail::scale(g, 1.0 / static_cast<double>(indices.size()));
  return g;
}

inline Gradient grad(const LearnerState& state, const LabeledSet& data) {
  std::vector<std::size_t> all(data.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return grad(state, data, all);
}

inline double mean_loss(const LearnerState& state, const LabeledSet& data) {
  require(!data.empty(), "mean loss of an empty dataset");
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) total += per_sample_loss(state, data.row(i), data.labels[i]);
  return total / static_cast<double>(data.size());
}

inline double accuracy(const LearnerState& state, const LabeledSet& data) {
  require(!data.empty(), "accuracy of an empty dataset");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < data.size(); ++i) hits += predict_class(state, data.row(i)) == data.labels[i];
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

struct TrainHooks {
  /// Consecutive runs of this many examples are shuffled and batched as a unit.
  std::size_t group_size = 1;
  std::function<void(std::size_t epoch, const LearnerState&)> on_epoch_end;
};

struct TrainResult {
  LearnerState state;
  std::vector<double> loss_trace;  // mean minibatch loss per epoch
};

/// Momentum SGD over `config.epochs` epochs. Minibatch order comes from the
/// "shuffle" substream of `config.seed`, so the result is a pure function of
/// the inputs.
inline TrainResult train(LearnerState state, const LabeledSet& data, const LearnerConfig& config,
                         const TrainHooks& hooks = {}) {
  config.validate();
  require(!data.empty(), "cannot train on an empty dataset");
  require(data.dim == state.config.input.size(), "dataset dimension does not match learner input");
  require(hooks.group_size >= 1 && data.size() % hooks.group_size == 0,
          "dataset size must be a multiple of the group size");
  for (auto y : data.labels) require(y < state.config.classes, "label index out of range");
  detail::check_layout(state);

  const std::size_t groups = data.size() / hooks.group_size;
  const std::size_t groups_per_batch = std::max<std::size_t>(1, config.minibatch / hooks.group_size);
  std::vector<std::size_t> order(groups);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto rng = make_stream(config.seed, "shuffle");

  Parameters velocity = detail::zero_like(state.params);
  Parameters g = detail::zero_like(state.params);
  detail::Trace trace;
  TrainResult result;
  result.loss_trace.reserve(config.epochs);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle(std::span<std::size_t>(order), rng);
    const double rate = config.schedule.rate_at(epoch, config.epochs);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < groups; start += groups_per_batch) {
      const std::size_t stop = std::min(groups, start + groups_per_batch);
      for (auto& t : g.tensors) t.fill(0.0);
      std::size_t n = 0;
      for (std::size_t gi = start; gi < stop; ++gi) {
        for (std::size_t m = 0; m < hooks.group_size; ++m) {
          const std::size_t i = order[gi] * hooks.group_size + m;
          epoch_loss += detail::accumulate(state, data.row(i), data.labels[i], trace, g);
          ++n;
        }
      }
      const double inv = 1.0 / static_cast<double>(n);
      for (std::size_t t = 0; t < g.tensors.size(); ++t) {
        auto w = state.params.tensors[t].data();
        auto v = velocity.tensors[t].data();
        auto d = g.tensors[t].data();
        // Odd tensors are biases and are not decayed.
        const double decay = (t % 2 == 0) ? config.weight_decay : 0.0;
        for (std::size_t k = 0; k < w.size(); ++k) {
          v[k] = config.momentum * v[k] + d[k] * inv + decay * w[k];
          w[k] -= rate * v[k];
        }
      }
    }
    result.loss_trace.push_back(epoch_loss / static_cast<double>(data.size()));
    ++state.trained_epochs;
    if (!state.params.all_finite()) throw RuntimeError("training diverged: non-finite weights");
    if (hooks.on_epoch_end) hooks.on_epoch_end(epoch, state);
  }
  result.state = std::move(state);
  return result;
}

}  // namespace pt4al

#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "pt4al/al_loop.hpp"
#include "pt4al/learner.hpp"
#include "pt4al/rng.hpp"

namespace pt4al::testing {

inline LearnerConfig small_config(InputShape input, std::vector<std::size_t> hidden, std::size_t classes,
                                  Activation act = Activation::relu, ConvSpec conv = {}) {
  LearnerConfig c;
  c.input = input;
  c.hidden = std::move(hidden);
  c.classes = classes;
  c.activation = act;
  c.conv = conv;
  return c;
}

inline LabeledSet random_set(std::size_t dim, std::size_t classes, std::size_t n, std::uint64_t seed) {
  auto rng = make_stream(seed, "test-set");
  LabeledSet set;
  set.dim = dim;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> x(dim);
    for (double& v : x) v = uniform_real(rng);
    set.add(x, uniform_index(rng, classes));
  }
  return set;
}

/// Largest per-coordinate relative error between the analytic gradient and
/// central differences of the mean loss. Biases are first moved off zero:
/// with zero biases a dead ReLU layer puts every downstream pre-activation
/// exactly on the kink, where central differences measure half a slope.
inline double gradient_check_error(LearnerState state, const LabeledSet& set, double step = 1e-5) {
  auto rng = make_stream(state.config.seed, "probe-biases");
  for (std::size_t t = 1; t < state.params.tensors.size(); t += 2) {
    for (double& b : state.params.tensors[t].data()) {
      b = (uniform_real(rng) < 0.5 ? -1.0 : 1.0) * (0.05 + 0.2 * uniform_real(rng));
    }
  }
  const auto analytic = grad(state, set);
  double worst = 0.0;
  for (std::size_t t = 0; t < state.params.tensors.size(); ++t) {
    for (std::size_t k = 0; k < state.params.tensors[t].size(); ++k) {
      double& w = state.params.tensors[t][k];
      const double saved = w;
      w = saved + step;
      const double up = mean_loss(state, set);
      w = saved - step;
      const double down = mean_loss(state, set);
      w = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic.tensors[t][k];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

/// Small synthetic setup for loop-level tests.
inline PreparedData small_data(std::size_t per_class = 60, std::size_t classes = 3, std::uint64_t seed = 5) {
  DatasetSpec spec;
  spec.synthetic = {per_class, classes, 8, 0.1, seed};
  spec.split_seed = seed + 1;
  return prepare_dataset(spec);
}

inline ALConfig small_al(std::size_t iterations, std::size_t budget, Strategy strategy, std::uint64_t seed = 3) {
  ALConfig c;
  c.iterations = iterations;
  c.budget = budget;
  c.strategy = strategy;
  c.seed = seed;
  c.pretext.hidden = {16};
  c.pretext.epochs = 3;
  c.pretext.schedule.initial = 0.02;
  c.main.hidden = {16};
  c.main.epochs = 5;
  c.main.schedule.initial = 0.02;
  c.main.minibatch = 8;
  return c;
}

}  // namespace pt4al::testing

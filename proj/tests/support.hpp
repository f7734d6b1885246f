// Shared fixtures for the unit and acceptance tests.
#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "car/model.hpp"

namespace car::testing {

/// init_params with every vector (contexts, biases) randomised too, so no
/// gradient path starts at an exactly-zero input.
inline ModelParams random_params(std::size_t dim, std::size_t items, std::size_t users,
                                 std::size_t max_len, bool user_embedding, Variant variant,
                                 std::uint64_t seed) {
  ModelShape shape{dim, items, users, max_len, user_embedding, variant};
  ModelParams p = init_params(shape, seed);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (auto* v : {&p.context, &p.gate_context, &p.ff1_bias, &p.ff2_bias}) {
    for (Eigen::Index i = 0; i < v->size(); ++i) (*v)(i) = u(rng);
  }
  return p;
}

/// `real` random items left-padded to `width`.
inline std::vector<ItemIndex> random_prefix(std::mt19937_64& rng, std::size_t real,
                                            std::size_t width, std::size_t items) {
  std::vector<ItemIndex> prefix(width - real, kPaddingItem);
  std::uniform_int_distribution<ItemIndex> pick(1, static_cast<ItemIndex>(items));
  for (std::size_t i = 0; i < real; ++i) prefix.push_back(pick(rng));
  return prefix;
}

/// Smallest |pre-activation| of the ReLU layer; near zero the loss has a kink
/// and finite differences are meaningless.
inline double relu_margin(std::span<const ItemIndex> prefix, UserIndex user, const ModelParams& p) {
  ForwardTrace trace;
  const ItemIndex any = 1;
  forward(prefix, user, std::span<const ItemIndex>(&any, 1), p, &trace);
  const Vector pre = p.ff1.transpose() * trace.personalized + p.ff1_bias;
  return pre.cwiseAbs().minCoeff();
}

inline constexpr double kVanishingGradient = 1e-9;

struct TensorError {
  std::string name;
  // ||analytic - numeric|| / max(||analytic||, ||numeric||). When both norms
  // are below kVanishingGradient (a structurally zero gradient, e.g. the gate
  // on a one-item prefix) the ratio is round-off over round-off, so the
  // absolute difference is reported instead and `vanishing` is set.
  double relative = 0.0;
  double absolute = 0.0;
  bool vanishing = false;
};

/// Central finite differences of pair_loss against pair_loss_and_gradient,
/// one relative error per tensor.
inline std::vector<TensorError> gradient_errors(std::span<const ItemIndex> prefix, UserIndex user,
                                                ItemIndex pos, ItemIndex neg, const ModelParams& p,
                                                double step = 1e-4) {
  ModelParams grads = p.zeros_like();
  pair_loss_and_gradient(prefix, user, pos, neg, p, grads);

  ModelParams probe = p;
  const auto analytic = tensor_views(std::as_const(grads));
  const auto weights = tensor_views(probe);
  std::vector<std::string> names;
  for_each_tensor(p, [&](std::string_view n, const auto&) { names.emplace_back(n); });

  std::vector<TensorError> out;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (std::size_t i = 0; i < weights[k].size(); ++i) {
      const double saved = weights[k][i];
      weights[k][i] = saved + step;
      const double up = pair_loss(prefix, user, pos, neg, probe);
      weights[k][i] = saved - step;
      const double down = pair_loss(prefix, user, pos, neg, probe);
      weights[k][i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      diff2 += (analytic[k][i] - numeric) * (analytic[k][i] - numeric);
      a2 += analytic[k][i] * analytic[k][i];
      n2 += numeric * numeric;
    }
    const double scale = std::max(std::sqrt(a2), std::sqrt(n2));
    const double absolute = std::sqrt(diff2);
    if (scale < kVanishingGradient) {
      out.push_back({names[k], absolute, absolute, true});
    } else {
      out.push_back({names[k], absolute / scale, absolute, false});
    }
  }
  return out;
}

}  // namespace car::testing

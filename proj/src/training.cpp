#include "car/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ostream>
#include <stdexcept>
#include <utility>

#include <fmt/format.h>

#include "car/util.hpp"

namespace car {

void TrainConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  if (!(learning_rate > 0)) throw std::invalid_argument("learning rate must be > 0");
  if (dim < 1) throw std::invalid_argument("d must be >= 1");
  if (max_len < 1) throw std::invalid_argument("n must be >= 1");
  if (patience < 1) throw std::invalid_argument("patience must be >= 1");
  if (max_epochs < 1) throw std::invalid_argument("max epochs must be >= 1");
  if (!(beta1 > 0 && beta1 < 1)) throw std::invalid_argument("beta1 must lie in (0, 1)");
  if (!(beta2 > 0 && beta2 < 1)) throw std::invalid_argument("beta2 must lie in (0, 1)");
  if (!(epsilon > 0)) throw std::invalid_argument("epsilon must be > 0");
  if (threads < 1) throw std::invalid_argument("threads must be >= 1");
}

OptimizerState OptimizerState::for_params(const ModelParams& p) {
  return {p.zeros_like(), p.zeros_like(), 0};
}

ItemIndex sample_negative(std::span<const ItemIndex> prefix, ItemIndex target,
                          std::size_t num_items, std::mt19937_64& rng) {
  std::vector<ItemIndex> excluded;
  excluded.reserve(prefix.size() + 1);
  for (auto i : prefix) {
    if (i != kPaddingItem) excluded.push_back(i);
  }
  if (target != kPaddingItem) excluded.push_back(target);
  std::sort(excluded.begin(), excluded.end());
  excluded.erase(std::unique(excluded.begin(), excluded.end()), excluded.end());
  const auto is_excluded = [&](ItemIndex i) {
    return std::binary_search(excluded.begin(), excluded.end(), i);
  };

  std::size_t in_catalog = 0;
  for (auto i : excluded) in_catalog += i <= num_items ? 1 : 0;
  const std::size_t pool = num_items - in_catalog;
  if (pool == 0) throw std::invalid_argument("no item left to sample as a negative");

  std::uniform_int_distribution<std::size_t> pick(1, num_items);
  if (pool * 4 >= num_items) {
    while (true) {
      const auto i = static_cast<ItemIndex>(pick(rng));
      if (!is_excluded(i)) return i;
    }
  }
  // Small pool: pick its k-th member directly.
  std::size_t k = std::uniform_int_distribution<std::size_t>(0, pool - 1)(rng);
  for (ItemIndex i = 1; i <= num_items; ++i) {
    if (is_excluded(i)) continue;
    if (k-- == 0) return i;
  }
  throw std::logic_error("unreachable: negative pool exhausted");
}

double accumulate_gradients(std::span<const PairExample> batch, const ModelParams& p,
                            ModelParams& grads, std::size_t threads) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  const double scale = 1.0 / static_cast<double>(batch.size());
  const std::size_t chunks = std::max<std::size_t>(1, std::min(threads, batch.size()));

  auto run = [&](std::size_t begin, std::size_t end, ModelParams& into) {
    double loss = 0.0;
    for (std::size_t i = begin; i < end; ++i) {
      const auto& ex = batch[i];
      if (ex.negative == kPaddingItem) {
        throw std::invalid_argument(fmt::format("instance {} has no sampled negative", i));
      }
      double l = 0.0;
      try {
        l = pair_loss_and_gradient(ex.prefix, ex.user, ex.positive, ex.negative, p, into, scale);
      } catch (const std::runtime_error& e) {
        throw std::runtime_error(fmt::format("instance {}: {}", i, e.what()));
      }
      if (!std::isfinite(l)) throw std::runtime_error(fmt::format("instance {}: non-finite loss", i));
      loss += l;
    }
    return loss;
  };

  for_each_tensor(grads, [](std::string_view, auto& t) { t.setZero(); });
  if (chunks == 1) return run(0, batch.size(), grads) * scale;

  std::vector<ModelParams> partial(chunks, grads);
  std::vector<double> losses(chunks, 0.0);
  parallel_chunks(batch.size(), chunks, [&](std::size_t c, std::size_t b, std::size_t e) {
    losses[c] = run(b, e, partial[c]);
  });
  double loss = 0.0;
  const auto dst = tensor_views(grads);
  for (std::size_t c = 0; c < chunks; ++c) {
    loss += losses[c];
    const auto src = tensor_views(std::as_const(partial[c]));
    for (std::size_t k = 0; k < dst.size(); ++k) {
      for (std::size_t i = 0; i < dst[k].size(); ++i) dst[k][i] += src[k][i];
    }
  }
  return loss * scale;
}

GradientResult compute_gradients(std::span<const PairExample> batch, const ModelParams& p,
                                 std::size_t threads) {
  GradientResult r{p.zeros_like(), 0.0};
  r.mean_loss = accumulate_gradients(batch, p, r.grads, threads);
  return r;
}

void adam_step(ModelParams& p, const ModelParams& grads, OptimizerState& state,
               const TrainConfig& config) {
  ++state.step;
  const double step = static_cast<double>(state.step);
  const double correct1 = 1.0 - std::pow(config.beta1, step);
  const double correct2 = 1.0 - std::pow(config.beta2, step);

  const auto weights = tensor_views(p);
  const auto grad = tensor_views(grads);
  const auto first = tensor_views(state.first_moment);
  const auto second = tensor_views(state.second_moment);
  for (std::size_t k = 0; k < weights.size(); ++k) {
    auto w = weights[k];
    auto m = first[k];
    auto v = second[k];
    auto g = grad[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
      const double m_hat = m[i] / correct1;
      const double v_hat = v[i] / correct2;
      w[i] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon);
    }
  }
  p.item_emb.row(kPaddingItem).setZero();
}

FitResult fit(const SplitCorpus& split, const TrainConfig& config, const ValidationHook& hook) {
  config.validate();
  if (!hook) throw std::invalid_argument("fit requires a validation hook");

  struct Slot {
    std::uint32_t list;
    std::uint32_t target;  // position in the list's training items
  };
  std::vector<Slot> slots;
  for (std::size_t l = 0; l < split.lists.size(); ++l) {
    for (std::size_t k = 1; k < split.lists[l].train.size(); ++k) {
      slots.push_back({static_cast<std::uint32_t>(l), static_cast<std::uint32_t>(k)});
    }
  }
  if (slots.empty()) throw std::invalid_argument("no training instances (every list is too short)");

  ModelShape shape;
  shape.dim = config.dim;
  shape.num_items = split.num_items;
  shape.num_users = split.num_users;
  shape.max_len = config.max_len;
  shape.use_user_embedding = config.use_user_embedding;
  shape.variant = config.variant;

  FitResult result;
  ModelParams params = init_params(shape, mix_seed(config.seed, 0));
  ModelParams grads = params.zeros_like();
  OptimizerState opt = OptimizerState::for_params(params);
  std::mt19937_64 rng(mix_seed(config.seed, 1));

  double best = -1.0;
  std::size_t since_best = 0;
  std::vector<PairExample> batch;
  batch.reserve(config.batch_size);

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::shuffle(slots.begin(), slots.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < slots.size(); b += config.batch_size) {
      const std::size_t e = std::min(slots.size(), b + config.batch_size);
      batch.resize(e - b);
      for (std::size_t i = b; i < e; ++i) {
        const auto& list = split.lists[slots[i].list];
        auto& ex = batch[i - b];
        const std::span<const ItemIndex> train(list.train);
        pad_window(train.first(slots[i].target), config.max_len, ex.prefix);
        ex.user = list.owner;
        ex.positive = list.train[slots[i].target];
        ex.negative = sample_negative(ex.prefix, ex.positive, split.num_items, rng);
      }
      const double loss = accumulate_gradients(batch, params, grads, config.threads);
      loss_sum += loss * static_cast<double>(batch.size());
      adam_step(params, grads, opt, config);
    }
    if (!params.all_finite()) {
      throw std::runtime_error(fmt::format("parameters became non-finite in epoch {}", epoch));
    }

    const ValidationScore val = hook(params);
    EpochLog entry;
    entry.epoch = epoch;
    entry.train_loss = loss_sum / static_cast<double>(slots.size());
    entry.val_ndcg5 = val.ndcg5;
    entry.val_hr5 = val.hr5;
    if (config.log_timing) {
      entry.seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
    result.log.push_back(entry);

    if (val.ndcg5 > best) {
      best = val.ndcg5;
      result.params = params;
      result.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  return result;
}

void write_training_log(std::span<const EpochLog> log, std::ostream& out) {
  out << "epoch,train_loss,val_ndcg5,val_hr5,seconds\n";
  for (const auto& e : log) {
    out << fmt::format("{},{:.8f},{:.6f},{:.6f},{:.3f}\n", e.epoch, e.train_loss, e.val_ndcg5,
                       e.val_hr5, e.seconds);
  }
}

}  // namespace car

#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "car/corpus.hpp"
#include "car/model.hpp"

namespace car {

struct TrainConfig {
  std::size_t batch_size = 128;
  double learning_rate = 0.001;
  std::size_t dim = 50;
  std::size_t max_len = 500;  // n
  std::size_t patience = 10;
  std::size_t max_epochs = 100;
  std::uint64_t seed = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  bool use_user_embedding = false;
  Variant variant = Variant::kCar;
  std::size_t threads = 1;
  bool log_timing = false;  // fill the `seconds` log column with wall time

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

struct OptimizerState {
  ModelParams first_moment;
  ModelParams second_moment;
  std::uint64_t step = 0;

  static OptimizerState for_params(const ModelParams& p);
};

/// Uniform over 1..num_items excluding `target` and every item in `prefix`.
/// Throws std::invalid_argument when nothing is left to draw.
ItemIndex sample_negative(std::span<const ItemIndex> prefix, ItemIndex target,
                          std::size_t num_items, std::mt19937_64& rng);

struct PairExample {
  std::vector<ItemIndex> prefix;
  UserIndex user = 0;
  ItemIndex positive = kPaddingItem;
  ItemIndex negative = kPaddingItem;
};

struct GradientResult {
  ModelParams grads;
  double mean_loss = 0.0;
};

/// Mean BPR loss over the batch and its exact gradient. Zeroes `grads` first.
/// With threads > 1 the batch is cut into fixed chunks reduced in order.
double accumulate_gradients(std::span<const PairExample> batch, const ModelParams& p,
                            ModelParams& grads, std::size_t threads = 1);
GradientResult compute_gradients(std::span<const PairExample> batch, const ModelParams& p,
                                 std::size_t threads = 1);

/// Bias-corrected Adam; re-zeroes the padding embedding afterwards.
void adam_step(ModelParams& p, const ModelParams& grads, OptimizerState& state,
               const TrainConfig& config);

struct ValidationScore {
  double ndcg5 = 0.0;
  double hr5 = 0.0;
};

using ValidationHook = std::function<ValidationScore(const ModelParams&)>;

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_ndcg5 = 0.0;
  double val_hr5 = 0.0;
  double seconds = 0.0;
};

struct FitResult {
  ModelParams params;  // best validation epoch
  std::size_t best_epoch = 0;
  std::vector<EpochLog> log;
};

/// Seeded shuffled mini-batch training with early stopping on the hook's
/// NDCG@5: stops once `patience` epochs pass without a strict improvement
/// and returns the best epoch's parameters.
FitResult fit(const SplitCorpus& split, const TrainConfig& config, const ValidationHook& hook);

void write_training_log(std::span<const EpochLog> log, std::ostream& out);

}  // namespace car

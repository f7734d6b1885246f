#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "car/cooc.hpp"
#include "car/corpus.hpp"
#include "car/model.hpp"
#include "car/training.hpp"

namespace car {

/// `count` distinct items drawn uniformly from 1..num_items minus `exclude`
/// and `target`, followed by `target`. Throws std::invalid_argument if the
/// pool holds fewer than `count` items.
std::vector<ItemIndex> sample_candidates(std::span<const ItemIndex> exclude, ItemIndex target,
                                         std::size_t num_items, std::size_t count,
                                         std::mt19937_64& rng);

/// 1-based rank of scores[target_pos] in descending order. Every other
/// candidate scoring at least as high ranks ahead of the target.
std::size_t rank_of_target(std::span<const double> scores, std::size_t target_pos);

double hr_at_k(std::size_t rank, std::size_t k);
double ndcg_at_k(std::size_t rank, std::size_t k);

enum class EvalTarget { kTest, kValidation };

struct EvalOptions {
  std::size_t negatives = 100;
  std::vector<std::size_t> cutoffs{5, 10};
  std::uint64_t seed = 1;
  std::size_t threads = 1;
  EvalTarget target = EvalTarget::kTest;
};

struct ListOutcome {
  std::string list_id;
  std::size_t rank = 0;
};

struct EvalReport {
  std::vector<std::size_t> cutoffs;
  std::vector<double> hit_rate;  // mean per cutoff
  std::vector<double> ndcg;      // mean per cutoff
  std::vector<ListOutcome> lists;

  double mean_hr(std::size_t k) const;
  double mean_ndcg(std::size_t k) const;
};

/// Scores `candidates` given the list and its (unpadded) input items.
using Scorer = std::function<std::vector<double>(
    const ListSplit& list, std::span<const ItemIndex> input, std::span<const ItemIndex> candidates)>;

/// Ranks each list's held-out item against sampled negatives. Candidate sets
/// depend only on (seed, list position, target kind), so two scorers see the
/// same candidates under the same seed.
EvalReport evaluate_with(const SplitCorpus& split, const Scorer& scorer, const EvalOptions& options);

/// evaluate_with over the model's forward pass, feeding the most recent
/// `max_len` input items.
EvalReport evaluate(const ModelParams& params, const SplitCorpus& split, const EvalOptions& options);

/// Early-stopping hook: NDCG@5 / HR@5 on validation items with candidates
/// fixed by `seed`.
ValidationHook validation_hook(const SplitCorpus& split, std::size_t negatives, std::uint64_t seed,
                               std::size_t threads = 1);

void write_report_csv(const EvalReport& report, std::ostream& out);
/// One JSON object per line: {"list", "rank", "ndcg5", "hr5", ...}.
void write_list_records(const EvalReport& report, std::ostream& out);
std::vector<ListOutcome> read_list_records(std::istream& in);

// ---------------------------------------------------------------------------

struct AblationRun {
  Variant variant = Variant::kCar;
  FitResult fit;
  EvalReport report;
};

/// Trains and tests CAR, no-gating, CPPM-only and GUPM-only under the same
/// config and seeds.
std::array<AblationRun, 4> run_ablation(const SplitCorpus& split, const TrainConfig& config,
                                        const EvalOptions& options);

void write_ablation_csv(std::span<const AblationRun> runs, std::ostream& out);

enum class Winner { kGupm, kTie, kCppm };

struct GroupSummary {
  std::string name;
  std::size_t lists = 0;
  double gupm_ndcg5 = 0.0;
  double cppm_ndcg5 = 0.0;
  double consistency = 0.0;  // NaN for an empty group
};

struct WinnerAnalysis {
  std::array<GroupSummary, 3> groups;  // gupm_wins, tie, cppm_wins
  std::vector<Winner> assignment;      // aligned with the GUPM outcomes
};

/// Partitions lists by per-list NDCG@5 (exact equality is a tie) and averages
/// each group's NDCG and consistency. Throws std::invalid_argument when the
/// two outcome sets cover different lists or a consistency score is missing.
WinnerAnalysis winner_consistency_analysis(std::span<const ListOutcome> gupm,
                                           std::span<const ListOutcome> cppm,
                                           std::span<const ConsistencyRecord> consistency);

void write_analysis_csv(const WinnerAnalysis& analysis, std::ostream& out);

}  // namespace car

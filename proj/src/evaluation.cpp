#include "car/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include <fmt/format.h>
#include "json.hpp"

#include "car/util.hpp"

namespace car {

std::vector<ItemIndex> sample_candidates(std::span<const ItemIndex> exclude, ItemIndex target,
                                         std::size_t num_items, std::size_t count,
                                         std::mt19937_64& rng) {
  std::vector<bool> blocked(num_items + 1, false);
  blocked[kPaddingItem] = true;
  std::size_t blocked_count = 0;
  auto block = [&](ItemIndex i) {
    if (i <= num_items && !blocked[i]) {
      blocked[i] = true;
      ++blocked_count;
    }
  };
  for (auto i : exclude) block(i);
  block(target);
  const std::size_t pool = num_items - blocked_count;
  if (pool < count) {
    throw std::invalid_argument(
        fmt::format("only {} eligible negatives, {} requested", pool, count));
  }

  std::vector<ItemIndex> out;
  out.reserve(count + 1);
  if (pool >= 2 * count) {
    std::uniform_int_distribution<std::size_t> pick(1, num_items);
    while (out.size() < count) {
      const auto i = static_cast<ItemIndex>(pick(rng));
      if (blocked[i]) continue;
      blocked[i] = true;  // distinct
      out.push_back(i);
    }
  } else {
    std::vector<ItemIndex> eligible;
    eligible.reserve(pool);
    for (ItemIndex i = 1; i <= num_items; ++i) {
      if (!blocked[i]) eligible.push_back(i);
    }
    // Partial Fisher-Yates.
    for (std::size_t k = 0; k < count; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, eligible.size() - 1);
      std::swap(eligible[k], eligible[pick(rng)]);
      out.push_back(eligible[k]);
    }
  }
  out.push_back(target);
  return out;
}

std::size_t rank_of_target(std::span<const double> scores, std::size_t target_pos) {
  if (target_pos >= scores.size()) throw std::out_of_range("target position outside scores");
  const double t = scores[target_pos];
  std::size_t ahead = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (i != target_pos && !(scores[i] < t)) ++ahead;
  }
  return ahead + 1;
}

double hr_at_k(std::size_t rank, std::size_t k) { return rank >= 1 && rank <= k ? 1.0 : 0.0; }

double ndcg_at_k(std::size_t rank, std::size_t k) {
  if (rank < 1 || rank > k) return 0.0;
  return 1.0 / std::log2(static_cast<double>(rank) + 1.0);
}

namespace {

std::size_t cutoff_slot(const std::vector<std::size_t>& cutoffs, std::size_t k) {
  auto it = std::find(cutoffs.begin(), cutoffs.end(), k);
  if (it == cutoffs.end()) throw std::out_of_range(fmt::format("report has no cutoff {}", k));
  return static_cast<std::size_t>(it - cutoffs.begin());
}

}  // namespace

double EvalReport::mean_hr(std::size_t k) const { return hit_rate[cutoff_slot(cutoffs, k)]; }
double EvalReport::mean_ndcg(std::size_t k) const { return ndcg[cutoff_slot(cutoffs, k)]; }

EvalReport evaluate_with(const SplitCorpus& split, const Scorer& scorer, const EvalOptions& options) {
  if (options.cutoffs.empty()) throw std::invalid_argument("no cutoffs requested");
  EvalReport report;
  report.cutoffs = options.cutoffs;
  report.lists.resize(split.lists.size());
  const std::uint64_t stream_base = options.target == EvalTarget::kTest ? 0 : 1ULL << 40;

  parallel_chunks(split.lists.size(), options.threads,
                  [&](std::size_t, std::size_t begin, std::size_t end) {
    std::vector<ItemIndex> input;
    std::vector<ItemIndex> whole;
    for (std::size_t l = begin; l < end; ++l) {
      const auto& list = split.lists[l];
      ItemIndex target = list.test;
      input = list.train;
      if (options.target == EvalTarget::kTest) {
        input.push_back(list.validation);
      } else {
        target = list.validation;
      }
      whole = list.train;
      whole.push_back(list.validation);
      whole.push_back(list.test);

      std::mt19937_64 rng(mix_seed(options.seed, stream_base + l));
      const auto candidates =
          sample_candidates(whole, target, split.num_items, options.negatives, rng);
      const auto scores = scorer(list, input, candidates);
      if (scores.size() != candidates.size()) {
        throw std::logic_error("scorer returned the wrong number of scores");
      }
      report.lists[l] = {list.id, rank_of_target(scores, candidates.size() - 1)};
    }
  });

  report.hit_rate.assign(options.cutoffs.size(), 0.0);
  report.ndcg.assign(options.cutoffs.size(), 0.0);
  if (!report.lists.empty()) {
    for (std::size_t c = 0; c < options.cutoffs.size(); ++c) {
      double hr = 0.0, ndcg = 0.0;
      for (const auto& o : report.lists) {
        hr += hr_at_k(o.rank, options.cutoffs[c]);
        ndcg += ndcg_at_k(o.rank, options.cutoffs[c]);
      }
      report.hit_rate[c] = hr / static_cast<double>(report.lists.size());
      report.ndcg[c] = ndcg / static_cast<double>(report.lists.size());
    }
  }
  return report;
}

EvalReport evaluate(const ModelParams& params, const SplitCorpus& split, const EvalOptions& options) {
  Scorer scorer = [&params](const ListSplit& list, std::span<const ItemIndex> input,
                            std::span<const ItemIndex> candidates) {
    const std::size_t take = std::min(input.size(), params.max_len);
    return forward(input.last(take), list.owner, candidates, params);
  };
  return evaluate_with(split, scorer, options);
}

ValidationHook validation_hook(const SplitCorpus& split, std::size_t negatives, std::uint64_t seed,
                               std::size_t threads) {
  EvalOptions options;
  options.negatives = negatives;
  options.cutoffs = {5};
  options.seed = seed;
  options.threads = threads;
  options.target = EvalTarget::kValidation;
  return [&split, options](const ModelParams& params) {
    const auto report = evaluate(params, split, options);
    return ValidationScore{report.mean_ndcg(5), report.mean_hr(5)};
  };
}

void write_report_csv(const EvalReport& report, std::ostream& out) {
  std::string header, row;
  for (std::size_t c = 0; c < report.cutoffs.size(); ++c) {
    const auto k = report.cutoffs[c];
    header += fmt::format("{}hr@{},ndcg@{}", c ? "," : "", k, k);
    row += fmt::format("{}{:.6f},{:.6f}", c ? "," : "", report.hit_rate[c], report.ndcg[c]);
  }
  out << header << '\n' << row << '\n';
}

void write_list_records(const EvalReport& report, std::ostream& out) {
  for (const auto& o : report.lists) {
    nlohmann::ordered_json j;
    j["list"] = o.list_id;
    j["rank"] = o.rank;
    j["ndcg5"] = ndcg_at_k(o.rank, 5);
    j["hr5"] = static_cast<int>(hr_at_k(o.rank, 5));
    for (auto k : report.cutoffs) {
      if (k == 5) continue;
      j[fmt::format("ndcg{}", k)] = ndcg_at_k(o.rank, k);
      j[fmt::format("hr{}", k)] = static_cast<int>(hr_at_k(o.rank, k));
    }
    out << j.dump() << '\n';
  }
}

std::vector<ListOutcome> read_list_records(std::istream& in) {
  std::vector<ListOutcome> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back({j.at("list").get<std::string>(), j.at("rank").get<std::size_t>()});
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(lineno, e.what());
    }
  }
  return out;
}

std::array<AblationRun, 4> run_ablation(const SplitCorpus& split, const TrainConfig& config,
                                        const EvalOptions& options) {
  std::array<AblationRun, 4> runs;
  const std::array variants{Variant::kCar, Variant::kNoGating, Variant::kCppmOnly,
                            Variant::kGupmOnly};
  const auto hook = validation_hook(split, options.negatives, options.seed, options.threads);
  for (std::size_t v = 0; v < variants.size(); ++v) {
    TrainConfig c = config;
    c.variant = variants[v];
    runs[v].variant = variants[v];
    runs[v].fit = fit(split, c, hook);
    runs[v].report = evaluate(runs[v].fit.params, split, options);
  }
  return runs;
}

void write_ablation_csv(std::span<const AblationRun> runs, std::ostream& out) {
  if (runs.empty()) return;
  const auto& cutoffs = runs.front().report.cutoffs;
  out << "variant";
  for (auto k : cutoffs) out << fmt::format(",hr@{},ndcg@{}", k, k);
  out << ",best_epoch\n";
  for (const auto& r : runs) {
    out << variant_name(r.variant);
    for (std::size_t c = 0; c < cutoffs.size(); ++c) {
      out << fmt::format(",{:.6f},{:.6f}", r.report.hit_rate[c], r.report.ndcg[c]);
    }
    out << ',' << r.fit.best_epoch << '\n';
  }
}

WinnerAnalysis winner_consistency_analysis(std::span<const ListOutcome> gupm,
                                           std::span<const ListOutcome> cppm,
                                           std::span<const ConsistencyRecord> consistency) {
  if (gupm.size() != cppm.size()) {
    throw std::invalid_argument(
        fmt::format("GUPM covers {} lists, CPPM {}", gupm.size(), cppm.size()));
  }
  std::unordered_map<std::string, std::size_t> cppm_rank;
  for (const auto& o : cppm) {
    if (!cppm_rank.emplace(o.list_id, o.rank).second) {
      throw std::invalid_argument(fmt::format("list '{}' appears twice", o.list_id));
    }
  }
  std::unordered_map<std::string, double> score;
  for (const auto& r : consistency) score.emplace(r.list_id, r.score);

  WinnerAnalysis a;
  a.groups[0].name = "gupm_wins";
  a.groups[1].name = "tie";
  a.groups[2].name = "cppm_wins";
  std::unordered_set<std::string> seen;
  for (const auto& g : gupm) {
    if (!seen.insert(g.list_id).second) {
      throw std::invalid_argument(fmt::format("list '{}' appears twice", g.list_id));
    }
    auto it = cppm_rank.find(g.list_id);
    if (it == cppm_rank.end()) {
      throw std::invalid_argument(fmt::format("list '{}' missing from the CPPM outcomes", g.list_id));
    }
    auto s = score.find(g.list_id);
    if (s == score.end()) {
      throw std::invalid_argument(fmt::format("no consistency score for list '{}'", g.list_id));
    }
    const double ng = ndcg_at_k(g.rank, 5);
    const double nc = ndcg_at_k(it->second, 5);
    const Winner w = ng > nc ? Winner::kGupm : (ng < nc ? Winner::kCppm : Winner::kTie);
    a.assignment.push_back(w);
    auto& group = a.groups[static_cast<std::size_t>(w)];
    group.lists++;
    group.gupm_ndcg5 += ng;
    group.cppm_ndcg5 += nc;
    group.consistency += s->second;
  }
  for (auto& group : a.groups) {
    if (group.lists == 0) {
      group.consistency = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    const auto n = static_cast<double>(group.lists);
    group.gupm_ndcg5 /= n;
    group.cppm_ndcg5 /= n;
    group.consistency /= n;
  }
  return a;
}

void write_analysis_csv(const WinnerAnalysis& analysis, std::ostream& out) {
  out << "group,lists,gupm_ndcg5,cppm_ndcg5,mean_consistency\n";
  for (const auto& g : analysis.groups) {
    out << fmt::format("{},{},{:.6f},{:.6f},{:.6f}\n", g.name, g.lists, g.gupm_ndcg5, g.cppm_ndcg5,
                       g.consistency);
  }
}

}  // namespace car

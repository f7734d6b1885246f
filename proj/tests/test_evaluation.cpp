#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "car/evaluation.hpp"
#include "car/synthetic.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace car;
using doctest::Approx;

namespace {

// Sorts (score, is_target) descending, target last among equals.
std::size_t oracle_rank(const std::vector<double>& scores, std::size_t target) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return (a == target) < (b == target);
  });
  return static_cast<std::size_t>(std::find(order.begin(), order.end(), target) - order.begin()) + 1;
}

SplitCorpus split_of(std::size_t lists, std::uint64_t seed) {
  SyntheticSpec spec;
  spec.clusters = 4;
  spec.items_per_cluster = 60;
  spec.lists = lists;
  spec.min_len = 5;
  spec.max_len = 12;
  spec.drift = 0.3;
  spec.segment = 3;
  spec.seed = seed;
  return split_corpus(generate_synthetic(spec).corpus);
}

}  // namespace

TEST_CASE("candidate sampling") {
  std::mt19937_64 rng(5);
  SUBCASE("100 negatives plus the target, none from the list") {
    const std::vector<ItemIndex> exclude{3, 9, 27, 81, 3};
    for (int trial = 0; trial < 50; ++trial) {
      const auto c = sample_candidates(exclude, 50, 500, 100, rng);
      REQUIRE(c.size() == 101);
      CHECK(c.back() == 50);
      CHECK(std::count(c.begin(), c.end(), 50) == 1);
      CHECK(std::set<ItemIndex>(c.begin(), c.end()).size() == 101);
      for (auto i : c) {
        CHECK(i >= 1);
        CHECK(i <= 500);
        CHECK(std::find(exclude.begin(), exclude.end(), i) == exclude.end());
      }
    }
  }
  SUBCASE("exactly enough eligible items is a forced set") {
    std::vector<ItemIndex> exclude{1, 2, 3};
    // catalog 104, excluded 3 plus the target leaves exactly 100
    const auto a = sample_candidates(exclude, 4, 104, 100, rng);
    std::set<ItemIndex> negatives(a.begin(), a.end() - 1);
    std::set<ItemIndex> expected;
    for (ItemIndex i = 5; i <= 104; ++i) expected.insert(i);
    CHECK(negatives == expected);
  }
  SUBCASE("too small a pool") {
    const std::vector<ItemIndex> exclude{1, 2};
    CHECK_THROWS_AS(sample_candidates(exclude, 3, 50, 48, rng), std::invalid_argument);
  }
}

TEST_CASE("rank and metrics") {
  const std::vector<double> clear{0.1, 0.5, 0.9};
  CHECK(rank_of_target(clear, 2) == 1);
  const std::vector<double> tie{0.1, 0.9, 0.9};
  CHECK(rank_of_target(tie, 2) == 2);
  CHECK(hr_at_k(1, 5) == 1.0);
  CHECK(ndcg_at_k(1, 5) == 1.0);
  CHECK(ndcg_at_k(2, 5) == Approx(0.6309).epsilon(1e-4));
  CHECK(std::abs(ndcg_at_k(2, 5) - 1.0 / std::log2(3.0)) < 1e-12);
  CHECK(hr_at_k(11, 10) == 0.0);
  CHECK(ndcg_at_k(11, 10) == 0.0);
  CHECK(hr_at_k(10, 10) == 1.0);

  for (std::size_t rank = 1; rank <= 101; ++rank) {
    CHECK(ndcg_at_k(rank, 5) <= hr_at_k(rank, 5));
    CHECK(ndcg_at_k(rank, 5) <= ndcg_at_k(rank, 10));
    CHECK(hr_at_k(rank, 5) <= hr_at_k(rank, 10));
  }
}

TEST_CASE("rank matches a brute-force sort with ties") {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> scores(2 + rng() % 100);
    for (auto& s : scores) s = static_cast<double>(rng() % 7);
    const std::size_t target = rng() % scores.size();
    CHECK(rank_of_target(scores, target) == oracle_rank(scores, target));
  }
}

TEST_CASE("evaluation protocol") {
  const auto split = split_of(200, 2);
  EvalOptions opts;
  opts.negatives = 50;

  SUBCASE("an oracle scorer scores every metric 1") {
    const Scorer oracle = [](const ListSplit&, std::span<const ItemIndex>,
                             std::span<const ItemIndex> cands) {
      std::vector<double> s(cands.size(), 0.0);
      s.back() = 1.0;
      return s;
    };
    const auto r = evaluate_with(split, oracle, opts);
    CHECK(r.mean_hr(5) == 1.0);
    CHECK(r.mean_ndcg(5) == 1.0);
    CHECK(r.mean_ndcg(10) == 1.0);
  }
  SUBCASE("a constant scorer ranks last under pessimistic ties") {
    const Scorer flat = [](const ListSplit&, std::span<const ItemIndex>,
                           std::span<const ItemIndex> cands) {
      return std::vector<double>(cands.size(), 0.0);
    };
    const auto r = evaluate_with(split, flat, opts);
    for (const auto& o : r.lists) CHECK(o.rank == 51);
    CHECK(r.mean_hr(10) == 0.0);
  }
  SUBCASE("inputs and candidates follow the split") {
    for (auto target : {EvalTarget::kTest, EvalTarget::kValidation}) {
      opts.target = target;
      const Scorer check = [&](const ListSplit& l, std::span<const ItemIndex> input,
                               std::span<const ItemIndex> cands) {
        const bool test = target == EvalTarget::kTest;
        CHECK(input.size() == l.train.size() + (test ? 1 : 0));
        CHECK(cands.back() == (test ? l.test : l.validation));
        for (std::size_t i = 0; i + 1 < cands.size(); ++i) {
          CHECK(std::find(l.train.begin(), l.train.end(), cands[i]) == l.train.end());
          CHECK(cands[i] != l.validation);
          CHECK(cands[i] != l.test);
        }
        return std::vector<double>(cands.size(), 0.0);
      };
      evaluate_with(split, check, opts);
    }
  }
  SUBCASE("same seed, same report; threads do not change it") {
    const auto p = testing::random_params(6, split.num_items, split.num_users, 10, false,
                                          Variant::kCar, 3);
    const auto a = evaluate(p, split, opts);
    const auto b = evaluate(p, split, opts);
    opts.threads = 3;
    const auto c = evaluate(p, split, opts);
    std::ostringstream sa, sb, sc;
    write_report_csv(a, sa);
    write_list_records(a, sa);
    write_report_csv(b, sb);
    write_list_records(b, sb);
    write_report_csv(c, sc);
    write_list_records(c, sc);
    CHECK(sa.str() == sb.str());
    CHECK(sa.str() == sc.str());
    CHECK(a.mean_hr(10) >= a.mean_hr(5));
    CHECK(a.mean_hr(5) >= a.mean_ndcg(5));
    CHECK(a.mean_ndcg(5) >= 0.0);
    CHECK(a.mean_hr(10) <= 1.0);
  }
}

TEST_CASE("random scorer is calibrated") {
  const auto split = split_of(3000, 4);
  std::mt19937_64 rng(99);
  const Scorer random = [&](const ListSplit&, std::span<const ItemIndex>,
                            std::span<const ItemIndex> cands) {
    std::vector<double> s(cands.size());
    std::uniform_real_distribution<double> u;
    for (auto& x : s) x = u(rng);
    return s;
  };
  const auto r = evaluate_with(split, random, EvalOptions{});
  const double n = static_cast<double>(r.lists.size());
  for (std::size_t k : {5, 10}) {
    const double p = static_cast<double>(k) / 101.0;
    CHECK(std::abs(r.mean_hr(k) - p) <= 3 * std::sqrt(p * (1 - p) / n));
  }
}

TEST_CASE("report files") {
  EvalReport r;
  r.cutoffs = {5, 10};
  r.hit_rate = {0.5, 0.75};
  r.ndcg = {0.25, 0.3125};
  r.lists = {{"a", 1}, {"b", 7}, {"c", 2}};
  std::ostringstream csv;
  write_report_csv(r, csv);
  CHECK(csv.str() == "hr@5,ndcg@5,hr@10,ndcg@10\n0.500000,0.250000,0.750000,0.312500\n");

  std::stringstream jsonl;
  write_list_records(r, jsonl);
  const auto text = jsonl.str();
  CHECK(text.rfind("{\"list\":\"a\",\"rank\":1,\"ndcg5\":1.0,\"hr5\":1,", 0) == 0);
  const auto back = read_list_records(jsonl);
  REQUIRE(back.size() == 3);
  CHECK(back[1].list_id == "b");
  CHECK(back[1].rank == 7);

  std::istringstream bad("{\"list\":\"a\"}\n");
  CHECK_THROWS_AS(read_list_records(bad), ParseError);
}

TEST_CASE("winner analysis") {
  // Ranks 1 vs 3, 2 vs 2, 9 vs 1, 8 vs 20 (both outside the cutoff: a tie).
  const std::vector<ListOutcome> gupm{{"a", 1}, {"b", 2}, {"c", 9}, {"d", 8}};
  const std::vector<ListOutcome> cppm{{"c", 1}, {"a", 3}, {"d", 20}, {"b", 2}};
  const std::vector<ConsistencyRecord> cons{{"a", 0.9}, {"b", 0.5}, {"c", 0.1}, {"d", 0.3}};
  const auto w = winner_consistency_analysis(gupm, cppm, cons);
  CHECK(w.assignment == std::vector<Winner>{Winner::kGupm, Winner::kTie, Winner::kCppm, Winner::kTie});
  CHECK(w.groups[0].lists == 1);
  CHECK(w.groups[1].lists == 2);
  CHECK(w.groups[2].lists == 1);
  CHECK(w.groups[0].consistency == 0.9);
  CHECK(w.groups[1].consistency == Approx(0.4));
  CHECK(w.groups[2].consistency == 0.1);
  CHECK(w.groups[0].gupm_ndcg5 == 1.0);
  CHECK(w.groups[0].cppm_ndcg5 == Approx(0.5));
  CHECK(w.groups[2].cppm_ndcg5 == 1.0);

  SUBCASE("identical reports tie everywhere") {
    const auto same = winner_consistency_analysis(gupm, gupm, cons);
    CHECK(same.groups[1].lists == 4);
    CHECK(std::isnan(same.groups[0].consistency));
  }
  SUBCASE("mismatched inputs") {
    const std::vector<ListOutcome> short_cppm{{"a", 1}};
    CHECK_THROWS_AS(winner_consistency_analysis(gupm, short_cppm, cons), std::invalid_argument);
    std::vector<ListOutcome> renamed = cppm;
    renamed[0].list_id = "z";
    CHECK_THROWS_AS(winner_consistency_analysis(gupm, renamed, cons), std::invalid_argument);
    const std::vector<ConsistencyRecord> partial{{"a", 0.9}};
    CHECK_THROWS_AS(winner_consistency_analysis(gupm, cppm, partial), std::invalid_argument);
  }
  SUBCASE("groups partition the lists") {
    std::mt19937_64 rng(6);
    std::vector<ListOutcome> g, c;
    std::vector<ConsistencyRecord> s;
    for (int i = 0; i < 500; ++i) {
      const auto id = std::to_string(i);
      g.push_back({id, 1 + rng() % 12});
      c.push_back({id, 1 + rng() % 12});
      s.push_back({id, 0.0});
    }
    const auto a = winner_consistency_analysis(g, c, s);
    CHECK(a.groups[0].lists + a.groups[1].lists + a.groups[2].lists == 500);
    CHECK(a.assignment.size() == 500);
  }
}

TEST_CASE("ablation runs four variants") {
  const auto split = split_of(80, 7);
  TrainConfig cfg;
  cfg.dim = 6;
  cfg.max_len = 8;
  cfg.max_epochs = 2;
  cfg.batch_size = 64;
  EvalOptions opts;
  opts.negatives = 30;
  const auto runs = run_ablation(split, cfg, opts);
  std::ostringstream csv;
  write_ablation_csv(runs, csv);
  std::istringstream in(csv.str());
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  REQUIRE(lines.size() == 5);
  CHECK(lines[0] == "variant,hr@5,ndcg@5,hr@10,ndcg@10,best_epoch");
  CHECK(lines[1].rfind("car,", 0) == 0);
  CHECK(lines[2].rfind("no-gating,", 0) == 0);
  CHECK(lines[3].rfind("cppm,", 0) == 0);
  CHECK(lines[4].rfind("gupm,", 0) == 0);
  for (const auto& r : runs) CHECK(r.fit.params.variant == r.variant);
}

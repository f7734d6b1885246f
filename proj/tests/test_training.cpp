#include <cmath>
#include <map>
#include <random>
#include <sstream>

#include "car/evaluation.hpp"
#include "car/synthetic.hpp"
#include "car/training.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace car;
using doctest::Approx;

namespace {

SplitCorpus small_split(std::uint64_t seed, std::size_t lists = 300) {
  SyntheticSpec spec;
  spec.clusters = 5;
  spec.items_per_cluster = 20;
  spec.lists = lists;
  spec.min_len = 8;
  spec.max_len = 14;
  spec.drift = 0.0;
  spec.seed = seed;
  return split_corpus(generate_synthetic(spec).corpus);
}

TrainConfig small_config() {
  TrainConfig c;
  c.dim = 8;
  c.max_len = 10;
  c.batch_size = 32;
  c.learning_rate = 0.01;
  c.max_epochs = 4;
  return c;
}

}  // namespace

TEST_CASE("config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.beta1 = 1.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.beta2 = 0.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.patience = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("negative sampling") {
  std::mt19937_64 rng(1);
  SUBCASE("forced choice") {
    const std::vector<ItemIndex> prefix{0, 0, 1};
    for (int i = 0; i < 100; ++i) CHECK(sample_negative(prefix, 2, 3, rng) == 3);
  }
  SUBCASE("empty pool") {
    const std::vector<ItemIndex> prefix{1, 2};
    CHECK_THROWS_AS(sample_negative(prefix, 3, 3, rng), std::invalid_argument);
  }
  auto uniform_over_three = [&](std::span<const ItemIndex> prefix, ItemIndex target,
                                std::size_t num_items, std::array<ItemIndex, 3> pool) {
    std::map<ItemIndex, int> counts;
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) {
      const auto n = sample_negative(prefix, target, num_items, rng);
      CHECK(n != target);
      ++counts[n];
    }
    CHECK(counts.size() == 3);
    const double expected = draws / 3.0;
    const double sigma = std::sqrt(draws * (1.0 / 3.0) * (2.0 / 3.0));
    for (auto item : pool) CHECK(std::abs(counts[item] - expected) <= 3 * sigma);
  };
  SUBCASE("uniform over a large pool share") {
    const std::vector<ItemIndex> prefix{0, 1};
    uniform_over_three(prefix, 2, 5, {3, 4, 5});
  }
  SUBCASE("uniform over a small pool share") {
    std::vector<ItemIndex> prefix;
    for (ItemIndex i = 1; i <= 16; ++i) prefix.push_back(i);
    uniform_over_three(prefix, 17, 20, {18, 19, 20});
  }
}

TEST_CASE("gradients of a batch") {
  std::mt19937_64 rng(4);
  const auto p = testing::random_params(6, 20, 2, 8, true, Variant::kCar, 11);
  std::vector<PairExample> batch;
  for (int i = 0; i < 7; ++i) {
    PairExample ex{testing::random_prefix(rng, 1 + rng() % 8, 8, 20), static_cast<UserIndex>(i % 2),
                   static_cast<ItemIndex>(1 + rng() % 20), 0};
    ex.negative = sample_negative(ex.prefix, ex.positive, 20, rng);
    batch.push_back(ex);
  }

  SUBCASE("a duplicated instance has the same mean gradient as one copy") {
    const std::vector<PairExample> once{batch[0]};
    const std::vector<PairExample> twice{batch[0], batch[0]};
    const auto a = compute_gradients(once, p);
    const auto b = compute_gradients(twice, p);
    CHECK(a.mean_loss == b.mean_loss);
    // Equal up to summation order.
    const auto va = tensor_views(std::as_const(a.grads));
    const auto vb = tensor_views(std::as_const(b.grads));
    for (std::size_t k = 0; k < va.size(); ++k) {
      for (std::size_t i = 0; i < va[k].size(); ++i) {
        CHECK(vb[k][i] == Approx(va[k][i]).epsilon(1e-12).scale(1.0));
      }
    }
  }
  SUBCASE("equal scores give ln 2 and a gradient that separates them") {
    auto q = p;
    q.item_emb.row(5) = q.item_emb.row(6);
    const std::vector<PairExample> one{{batch[0].prefix, 0, 5, 6}};
    auto g = compute_gradients(one, q);
    CHECK(g.mean_loss == Approx(std::log(2.0)).epsilon(1e-12));
    // Descending the gradient on the positive row raises its score.
    const ItemIndex c5 = 5;
    ForwardTrace trace;
    forward(one[0].prefix, 0, std::span<const ItemIndex>(&c5, 1), q, &trace);
    CHECK(-g.grads.item_emb.row(5).dot(trace.head) > 0.0);
  }
  SUBCASE("threaded reduction agrees with the serial pass") {
    const auto serial = compute_gradients(batch, p, 1);
    const auto threaded = compute_gradients(batch, p, 3);
    CHECK(threaded.mean_loss == Approx(serial.mean_loss).epsilon(1e-12));
    const auto a = tensor_views(std::as_const(serial.grads));
    const auto b = tensor_views(std::as_const(threaded.grads));
    for (std::size_t k = 0; k < a.size(); ++k) {
      for (std::size_t i = 0; i < a[k].size(); ++i) CHECK(b[k][i] == Approx(a[k][i]).epsilon(1e-10));
    }
    CHECK(compute_gradients(batch, p, 3).mean_loss == threaded.mean_loss);
  }
  SUBCASE("a step at lr 1e-5 decreases the pair loss") {
    for (const auto& ex : batch) {
      auto q = p;
      const std::vector<PairExample> one{ex};
      const auto g = compute_gradients(one, q);
      TrainConfig cfg;
      cfg.learning_rate = 1e-5;
      auto state = OptimizerState::for_params(q);
      adam_step(q, g.grads, state, cfg);
      CHECK(pair_loss(ex.prefix, ex.user, ex.positive, ex.negative, q) < g.mean_loss);
    }
  }
}

TEST_CASE("Adam") {
  auto p = testing::random_params(3, 5, 1, 4, true, Variant::kCar, 2);
  const TrainConfig cfg;
  SUBCASE("first step with unit gradient moves every weight by -lr") {
    auto g = p.zeros_like();
    for (auto v : tensor_views(g)) std::fill(v.begin(), v.end(), 1.0);
    auto q = p;
    auto state = OptimizerState::for_params(q);
    adam_step(q, g, state, cfg);
    const auto before = tensor_views(std::as_const(p));
    const auto after = tensor_views(std::as_const(q));
    for (std::size_t k = 0; k < before.size(); ++k) {
      for (std::size_t i = 0; i < before[k].size(); ++i) {
        if (k == 0 && i < p.dim) continue;  // padding row
        CHECK(after[k][i] - before[k][i] == Approx(-0.001).epsilon(1e-7));
      }
    }
    CHECK(q.item_emb.row(0).isZero(0.0));
    CHECK(state.step == 1);
  }
  SUBCASE("zero gradient leaves weights and decays moments") {
    auto state = OptimizerState::for_params(p);
    for (auto v : tensor_views(state.first_moment)) std::fill(v.begin(), v.end(), 0.5);
    for (auto v : tensor_views(state.second_moment)) std::fill(v.begin(), v.end(), 0.25);
    state.step = 3;
    auto fresh = OptimizerState::for_params(p);
    auto q = p;
    adam_step(q, p.zeros_like(), fresh, cfg);
    CHECK(q.item_emb == p.item_emb);
    CHECK(q.gate == p.gate);
    auto r = p;
    adam_step(r, p.zeros_like(), state, cfg);
    CHECK(state.first_moment.gate(0, 0) == Approx(0.45));
    CHECK(state.second_moment.gate(0, 0) == Approx(0.25 * 0.999));
  }
  SUBCASE("identical steps from identical states agree") {
    std::mt19937_64 rng(3);
    auto g = p.zeros_like();
    std::normal_distribution<double> n;
    for (auto v : tensor_views(g))
      for (auto& x : v) x = n(rng);
    auto a = p, b = p;
    auto sa = OptimizerState::for_params(p), sb = OptimizerState::for_params(p);
    for (int i = 0; i < 3; ++i) {
      adam_step(a, g, sa, cfg);
      adam_step(b, g, sb, cfg);
    }
    const auto va = tensor_views(std::as_const(a));
    const auto vb = tensor_views(std::as_const(b));
    for (std::size_t k = 0; k < va.size(); ++k) {
      CHECK(std::equal(va[k].begin(), va[k].end(), vb[k].begin(), vb[k].end()));
    }
  }
}

TEST_CASE("early stopping returns the best epoch") {
  const auto split = small_split(1, 60);
  auto cfg = small_config();
  cfg.patience = 1;
  cfg.max_epochs = 10;
  std::vector<ModelParams> seen;
  double score = 0.9;
  const auto hook = [&](const ModelParams& p) {
    seen.push_back(p);
    score -= 0.1;
    return ValidationScore{score, score};
  };
  const auto result = fit(split, cfg, hook);
  CHECK(result.log.size() == 2);
  CHECK(result.best_epoch == 1);
  REQUIRE(seen.size() == 2);
  CHECK(result.params.item_emb == seen[0].item_emb);
  CHECK(result.params.item_emb != seen[1].item_emb);
  CHECK(result.params.item_emb.row(0).isZero(0.0));
}

TEST_CASE("patience counts epochs without strict improvement") {
  const auto split = small_split(2, 60);
  auto cfg = small_config();
  cfg.patience = 3;
  cfg.max_epochs = 20;
  const std::vector<double> scores{0.1, 0.3, 0.3, 0.2, 0.31, 0.31, 0.31, 0.31, 0.5};
  std::size_t calls = 0;
  const auto hook = [&](const ModelParams&) {
    const double s = scores[calls++];
    return ValidationScore{s, s};
  };
  const auto result = fit(split, cfg, hook);
  CHECK(result.best_epoch == 5);
  CHECK(result.log.size() == 8);
}

TEST_CASE("training is reproducible and learns") {
  const auto split = small_split(3);
  const auto cfg = small_config();
  const auto hook = validation_hook(split, 50, 1);
  const auto a = fit(split, cfg, hook);
  const auto b = fit(split, cfg, hook);
  std::ostringstream la, lb;
  write_training_log(a.log, la);
  write_training_log(b.log, lb);
  CHECK(la.str() == lb.str());
  CHECK(a.params.item_emb == b.params.item_emb);
  CHECK(la.str().rfind("epoch,train_loss,val_ndcg5,val_hr5,seconds\n", 0) == 0);

  // Clustered lists are learnable: validation improves over the first epochs
  // and the loss falls.
  REQUIRE(a.log.size() == cfg.max_epochs);
  CHECK(a.log.back().val_ndcg5 > a.log.front().val_ndcg5);
  CHECK(a.log.back().train_loss < a.log.front().train_loss);

  auto other = cfg;
  other.seed = 2;
  CHECK(fit(split, other, hook).params.item_emb != a.params.item_emb);
}

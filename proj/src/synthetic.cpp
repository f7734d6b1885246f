#include "car/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>
#include <stdexcept>

#include <fmt/format.h>

namespace car {

void SyntheticSpec::validate() const {
  if (clusters < 1 || items_per_cluster < 1 || lists < 1 || min_len < 1 || lists_per_user < 1) {
    throw std::invalid_argument("synthetic counts must all be >= 1");
  }
  if (min_len > max_len) throw std::invalid_argument("list length range is empty");
  if (!(drift >= 0.0 && drift <= 1.0)) throw std::invalid_argument("drift must lie in [0, 1]");
  if (drift > 0.0) {
    if (clusters < 2) throw std::invalid_argument("drifting lists need at least 2 clusters");
    if (segment < 1) throw std::invalid_argument("drift segment must be >= 1");
    if (segment >= min_len) {
      throw std::invalid_argument(fmt::format(
          "drift segment {} does not fit in lists of minimum length {}", segment, min_len));
    }
  }
}

SyntheticCorpus generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  SyntheticCorpus out;
  Corpus& c = out.corpus;

  for (std::size_t k = 0; k < spec.clusters; ++k) {
    for (std::size_t i = 0; i < spec.items_per_cluster; ++i) {
      c.item_names.push_back(fmt::format("c{}_i{}", k, i));
    }
  }
  const std::size_t users = (spec.lists + spec.lists_per_user - 1) / spec.lists_per_user;
  for (std::size_t u = 0; u < users; ++u) c.user_names.push_back(fmt::format("u{:05}", u));

  const auto drifting =
      static_cast<std::size_t>(std::llround(spec.drift * static_cast<double>(spec.lists)));
  std::vector<std::size_t> order(spec.lists);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  out.drift.assign(spec.lists, false);
  for (std::size_t i = 0; i < drifting; ++i) out.drift[order[i]] = true;

  std::uniform_int_distribution<std::size_t> pick_cluster(0, spec.clusters - 1);
  std::uniform_int_distribution<std::size_t> pick_len(spec.min_len, spec.max_len);
  std::uniform_int_distribution<std::size_t> pick_item(0, spec.items_per_cluster - 1);
  auto item_of = [&](std::size_t cluster) {
    return static_cast<ItemIndex>(1 + cluster * spec.items_per_cluster + pick_item(rng));
  };

  for (std::size_t l = 0; l < spec.lists; ++l) {
    ItemList list;
    list.id = fmt::format("L{:05}", l);
    list.owner = static_cast<UserIndex>(l / spec.lists_per_user);
    const std::size_t len = pick_len(rng);
    const std::size_t home = pick_cluster(rng);
    std::size_t other = home;
    if (out.drift[l]) {
      other = std::uniform_int_distribution<std::size_t>(0, spec.clusters - 2)(rng);
      if (other >= home) ++other;
    }
    const std::size_t switch_at = out.drift[l] ? len - spec.segment : len;
    for (std::size_t i = 0; i < len; ++i) list.items.push_back(item_of(i < switch_at ? home : other));
    c.lists.push_back(std::move(list));
    out.cluster.push_back(home);
    out.drift_cluster.push_back(other);
  }

  // Drop catalog entries no list drew so the corpus matches what a parse of
  // its own serialisation would produce.
  Corpus compacted;
  compacted.user_names = c.user_names;
  std::vector<ItemIndex> remap(c.item_names.size(), kPaddingItem);
  for (auto& list : c.lists) {
    for (auto& item : list.items) {
      if (remap[item] == kPaddingItem) {
        remap[item] = static_cast<ItemIndex>(compacted.item_names.size());
        compacted.item_names.push_back(c.item_names[item]);
      }
      item = remap[item];
    }
  }
  compacted.lists = std::move(c.lists);
  out.corpus = std::move(compacted);
  return out;
}

void write_regimes_csv(const SyntheticCorpus& s, std::ostream& out) {
  out << "list,drift,cluster,drift_cluster\n";
  for (std::size_t l = 0; l < s.corpus.lists.size(); ++l) {
    out << fmt::format("{},{},{},{}\n", s.corpus.lists[l].id, s.drift[l] ? 1 : 0, s.cluster[l],
                       s.drift_cluster[l]);
  }
}

}  // namespace car

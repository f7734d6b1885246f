#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "car/corpus.hpp"

namespace car {

/// Clustered list corpus with a planted share of lists whose final segment
/// switches to another cluster.
struct SyntheticSpec {
  std::size_t clusters = 10;
  std::size_t items_per_cluster = 100;
  std::size_t lists = 2000;
  std::size_t min_len = 20;
  std::size_t max_len = 40;
  double drift = 0.5;
  std::size_t segment = 5;
  std::size_t lists_per_user = 5;
  std::uint64_t seed = 1;

  void validate() const;
};

struct SyntheticCorpus {
  Corpus corpus;
  // Per list, aligned with corpus.lists.
  std::vector<bool> drift;
  std::vector<std::size_t> cluster;
  std::vector<std::size_t> drift_cluster;  // == cluster when not drifting
};

/// Exactly round(drift * lists) lists drift. Items are drawn uniformly with
/// replacement from the list's cluster. Deterministic for a given seed.
SyntheticCorpus generate_synthetic(const SyntheticSpec& spec);

/// `list,drift,cluster,drift_cluster` rows.
void write_regimes_csv(const SyntheticCorpus& s, std::ostream& out);

}  // namespace car

#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "car/corpus.hpp"

namespace car {

/// Skip-gram item vectors, one row per catalog index (row 0 is the unused
/// padding slot and stays zero).
struct CoocEmbeddings {
  std::size_t dim = 0;
  std::vector<double> data;  // (num_items + 1) * dim, row-major

  std::size_t rows() const { return dim == 0 ? 0 : data.size() / dim; }
  std::span<const double> row(ItemIndex i) const { return {data.data() + i * dim, dim}; }
  std::span<double> row(ItemIndex i) { return {data.data() + i * dim, dim}; }
};

struct SkipGramConfig {
  std::size_t dim = 50;
  std::size_t window = 5;
  std::size_t negatives = 5;
  std::size_t epochs = 5;
  double learning_rate = 0.025;
  std::uint64_t seed = 1;
};

/// Skip-gram with negative sampling, lists as sentences. Single-threaded and
/// deterministic for a given seed. Throws std::invalid_argument when the
/// lists yield no (center, context) pair.
CoocEmbeddings train_cooc_embeddings(std::span<const std::vector<ItemIndex>> lists,
                                     std::size_t num_items, const SkipGramConfig& config);

/// a.b / (|a||b|); 0 when either vector is all zeros.
double cosine(std::span<const double> a, std::span<const double> b);

/// Sum of cosine(e_i, e_last) over the items before the last, divided by the
/// full list length N.
double consistency_score(std::span<const ItemIndex> list, const CoocEmbeddings& emb);

struct ConsistencyRecord {
  std::string list_id;
  double score = 0.0;
};

struct HistogramBin {
  double low = 0.0;
  double high = 0.0;
  std::size_t count = 0;
};

/// Equal-width bins over [-1, 1]; 1.0 lands in the last bin.
std::vector<HistogramBin> consistency_histogram(std::span<const ConsistencyRecord> records,
                                                std::size_t bins);

/// Text format: `count dim` header, then `item_name v1 ... v_dim` per item.
void write_embeddings(const CoocEmbeddings& emb, const Corpus& c, std::ostream& out);
CoocEmbeddings read_embeddings(std::istream& in, const Corpus& c);

void write_consistency_csv(std::span<const ConsistencyRecord> records, std::ostream& out);
std::vector<ConsistencyRecord> read_consistency_csv(std::istream& in);
void write_histogram_csv(std::span<const HistogramBin> bins, std::ostream& out);

}  // namespace car

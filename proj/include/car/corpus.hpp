#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace car {

/// Dense catalog index of an item. Index 0 is reserved for the padding item
/// and never names a real item.
using ItemIndex = std::uint32_t;
using UserIndex = std::uint32_t;

inline constexpr ItemIndex kPaddingItem = 0;

/// Malformed input text; carries the 1-based line number.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Well-formed input that violates a data constraint (duplicate positions,
/// lists too short to split, and so on).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ItemList {
  std::string id;
  UserIndex owner = 0;
  std::vector<ItemIndex> items;  // curation order

  bool operator==(const ItemList&) const = default;
};

/// Users, items and ordered lists. `item_names[0]` is the padding slot, so
/// real items occupy indices 1..num_items().
struct Corpus {
  std::vector<std::string> user_names;
  std::vector<std::string> item_names{"<pad>"};
  std::vector<ItemList> lists;

  std::size_t num_users() const { return user_names.size(); }
  std::size_t num_items() const { return item_names.size() - 1; }
  std::size_t num_interactions() const;

  bool operator==(const Corpus&) const = default;
};

struct CorpusStats {
  std::size_t users = 0;
  std::size_t lists = 0;
  std::size_t items = 0;
  std::size_t interactions = 0;
  double lists_per_user = 0.0;
  double items_per_list = 0.0;
  double density = 0.0;
};

/// Reads `user<TAB>list<TAB>item<TAB>position` lines. Blank lines and lines
/// starting with '#' are skipped. Lists come back in order of first
/// appearance, each sorted by position with input order breaking ties.
Corpus parse_interactions(std::istream& in);
Corpus parse_interactions_file(const std::string& path);

/// Writes the corpus in the format parse_interactions reads, positions 0..N-1.
void write_interactions(const Corpus& c, std::ostream& out);
void write_interactions_file(const Corpus& c, const std::string& path);

/// One pass dropping items seen fewer than `min_item_count` times, then one
/// pass dropping lists left shorter than `min_list_len`. Users and items that
/// no longer appear in any list are removed and indices are compacted.
Corpus filter_corpus(const Corpus& c, std::size_t min_item_count,
                     std::size_t min_list_len);

/// Keeps the first `max_len` items of every list.
Corpus truncate_lists(const Corpus& c, std::size_t max_len);

CorpusStats corpus_stats(const Corpus& c);
std::string stats_report(const CorpusStats& s);  // key=value lines
std::string stats_csv_header();
std::string stats_csv_row(const CorpusStats& s);

// ---------------------------------------------------------------------------
// Train / validation / test partition.

struct ListSplit {
  std::string id;
  UserIndex owner = 0;
  std::vector<ItemIndex> train;
  ItemIndex validation = kPaddingItem;
  ItemIndex test = kPaddingItem;

  /// Training items followed by the validation item.
  std::vector<ItemIndex> test_input() const;
};

struct TrainingInstance {
  std::vector<ItemIndex> prefix;  // exactly n entries, padding first
  ItemIndex target = kPaddingItem;
};

struct SplitCorpus {
  std::size_t num_items = 0;
  std::size_t num_users = 0;
  std::vector<ListSplit> lists;

  std::size_t num_training_instances() const;
};

/// Last item to test, second-to-last to validation, the rest to training.
/// Throws DataError naming the first list shorter than 3.
SplitCorpus split_corpus(const Corpus& c);

/// Left-pads (or keeps the most recent `n` of) `items` into `out`.
void pad_window(std::span<const ItemIndex> items, std::size_t n,
                std::vector<ItemIndex>& out);

/// Every item from the second onwards becomes a target with the items before
/// it as the padded prefix; a list of length L yields L-1 instances.
std::vector<TrainingInstance> make_training_instances(
    std::span<const ItemIndex> list_prefix, std::size_t n);

}  // namespace car

#include "car/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <string_view>
#include <unordered_map>

#include <fmt/format.h>

namespace car {

ParseError::ParseError(std::size_t line, const std::string& what)
    : std::runtime_error(fmt::format("line {}: {}", line, what)), line_(line) {}

std::size_t Corpus::num_interactions() const {
  std::size_t total = 0;
  for (const auto& l : lists) total += l.items.size();
  return total;
}

namespace {

// Assigns dense indices to names in order of first appearance.
class Interner {
 public:
  explicit Interner(std::vector<std::string>& names) : names_(names) {
    for (std::size_t i = 0; i < names_.size(); ++i) index_.emplace(names_[i], i);
  }

  std::uint32_t operator()(std::string_view name) {
    auto [it, inserted] =
        index_.try_emplace(std::string(name), static_cast<std::uint32_t>(names_.size()));
    if (inserted) names_.emplace_back(name);
    return it->second;
  }

 private:
  std::vector<std::string>& names_;
  std::unordered_map<std::string, std::uint32_t> index_;
};

std::string_view trim_cr(std::string_view s) {
  if (!s.empty() && s.back() == '\r') s.remove_suffix(1);
  return s;
}

struct RawEntry {
  std::string user;
  std::string item;
  std::uint64_t position;
  std::size_t line;
};

}  // namespace

Corpus parse_interactions(std::istream& in) {
  std::vector<std::string> list_order;
  std::unordered_map<std::string, std::size_t> list_slot;
  std::vector<std::vector<RawEntry>> raw;

  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view view = trim_cr(line);
    if (view.empty() || view.front() == '#') continue;

    std::string_view fields[4];
    std::size_t nfields = 0;
    while (true) {
      const auto tab = view.find('\t');
      if (nfields == 4) throw ParseError(lineno, "expected 4 tab-separated fields, got more");
      fields[nfields++] = view.substr(0, tab);
      if (tab == std::string_view::npos) break;
      view.remove_prefix(tab + 1);
    }
    if (nfields != 4) {
      throw ParseError(lineno, fmt::format("expected 4 tab-separated fields, got {}", nfields));
    }
    for (std::size_t f = 0; f < 3; ++f) {
      if (fields[f].empty()) throw ParseError(lineno, "empty identifier field");
    }
    std::uint64_t position = 0;
    const auto& pos = fields[3];
    auto [ptr, ec] = std::from_chars(pos.data(), pos.data() + pos.size(), position);
    if (ec != std::errc() || ptr != pos.data() + pos.size() || pos.empty()) {
      throw ParseError(lineno, fmt::format("position '{}' is not a non-negative integer", pos));
    }

    auto [it, inserted] = list_slot.try_emplace(std::string(fields[1]), raw.size());
    if (inserted) {
      list_order.emplace_back(fields[1]);
      raw.emplace_back();
    }
    raw[it->second].push_back(
        RawEntry{std::string(fields[0]), std::string(fields[2]), position, lineno});
  }

  Corpus c;
  Interner users(c.user_names);
  Interner items(c.item_names);
  c.lists.reserve(raw.size());
  for (std::size_t l = 0; l < raw.size(); ++l) {
    auto& entries = raw[l];
    std::stable_sort(entries.begin(), entries.end(),
                     [](const RawEntry& a, const RawEntry& b) { return a.position < b.position; });
    for (std::size_t i = 1; i < entries.size(); ++i) {
      if (entries[i].position == entries[i - 1].position) {
        throw DataError(fmt::format("list '{}' has duplicate position {} (line {})",
                                    list_order[l], entries[i].position, entries[i].line));
      }
    }
    ItemList list;
    list.id = list_order[l];
    // Owner is the user on the earliest line of the list.
    const auto first = std::min_element(
        entries.begin(), entries.end(),
        [](const RawEntry& a, const RawEntry& b) { return a.line < b.line; });
    list.owner = users(first->user);
    list.items.reserve(entries.size());
    for (const auto& e : entries) list.items.push_back(items(e.item));
    c.lists.push_back(std::move(list));
  }
  return c;
}

Corpus parse_interactions_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(fmt::format("cannot open '{}'", path));
  return parse_interactions(in);
}

void write_interactions(const Corpus& c, std::ostream& out) {
  for (const auto& list : c.lists) {
    const auto& user = c.user_names.at(list.owner);
    for (std::size_t i = 0; i < list.items.size(); ++i) {
      out << user << '\t' << list.id << '\t' << c.item_names.at(list.items[i]) << '\t' << i
          << '\n';
    }
  }
}

void write_interactions_file(const Corpus& c, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(fmt::format("cannot write '{}'", path));
  write_interactions(c, out);
}

namespace {

// Rebuilds user and item tables so only referenced entries remain, indexed
// in order of first appearance (the same order parse_interactions produces).
Corpus compact(const Corpus& c, std::vector<ItemList> lists) {
  Corpus out;
  std::vector<std::uint32_t> user_map(c.user_names.size(), UINT32_MAX);
  std::vector<std::uint32_t> item_map(c.item_names.size(), UINT32_MAX);
  for (auto& l : lists) {
    auto& u = user_map[l.owner];
    if (u == UINT32_MAX) {
      u = static_cast<std::uint32_t>(out.user_names.size());
      out.user_names.push_back(c.user_names[l.owner]);
    }
    l.owner = u;
    for (auto& i : l.items) {
      auto& m = item_map[i];
      if (m == UINT32_MAX) {
        m = static_cast<std::uint32_t>(out.item_names.size());
        out.item_names.push_back(c.item_names[i]);
      }
      i = m;
    }
  }
  out.lists = std::move(lists);
  return out;
}

}  // namespace

Corpus filter_corpus(const Corpus& c, std::size_t min_item_count, std::size_t min_list_len) {
  if (min_item_count < 1 || min_list_len < 1) {
    throw std::invalid_argument("filter thresholds must be >= 1");
  }
  std::vector<std::size_t> counts(c.item_names.size(), 0);
  for (const auto& l : c.lists) {
    for (auto i : l.items) ++counts[i];
  }

  std::vector<ItemList> kept;
  for (const auto& l : c.lists) {
    ItemList filtered{l.id, l.owner, {}};
    for (auto i : l.items) {
      if (counts[i] >= min_item_count) filtered.items.push_back(i);
    }
    if (filtered.items.size() >= min_list_len) kept.push_back(std::move(filtered));
  }
  return compact(c, std::move(kept));
}

Corpus truncate_lists(const Corpus& c, std::size_t max_len) {
  if (max_len < 1) throw std::invalid_argument("max_len must be >= 1");
  std::vector<ItemList> lists = c.lists;
  for (auto& l : lists) {
    if (l.items.size() > max_len) l.items.resize(max_len);
  }
  return compact(c, std::move(lists));
}

CorpusStats corpus_stats(const Corpus& c) {
  CorpusStats s;
  s.users = c.num_users();
  s.lists = c.lists.size();
  s.items = c.num_items();
  s.interactions = c.num_interactions();
  if (s.users > 0) s.lists_per_user = static_cast<double>(s.lists) / s.users;
  if (s.lists > 0) s.items_per_list = static_cast<double>(s.interactions) / s.lists;
  if (s.lists > 0 && s.items > 0) {
    s.density = static_cast<double>(s.interactions) /
                (static_cast<double>(s.lists) * static_cast<double>(s.items));
  }
  return s;
}

std::string stats_report(const CorpusStats& s) {
  return fmt::format(
      "users={}\nlists={}\nitems={}\ninteractions={}\nlists_per_user={:.4f}\n"
      "items_per_list={:.4f}\ndensity={:.8f}\n",
      s.users, s.lists, s.items, s.interactions, s.lists_per_user, s.items_per_list, s.density);
}

std::string stats_csv_header() {
  return "users,lists,items,interactions,lists_per_user,items_per_list,density\n";
}

std::string stats_csv_row(const CorpusStats& s) {
  return fmt::format("{},{},{},{},{:.4f},{:.4f},{:.8f}\n", s.users, s.lists, s.items,
                     s.interactions, s.lists_per_user, s.items_per_list, s.density);
}

std::vector<ItemIndex> ListSplit::test_input() const {
  std::vector<ItemIndex> input = train;
  input.push_back(validation);
  return input;
}

std::size_t SplitCorpus::num_training_instances() const {
  std::size_t total = 0;
  for (const auto& l : lists) {
    if (l.train.size() >= 2) total += l.train.size() - 1;
  }
  return total;
}

SplitCorpus split_corpus(const Corpus& c) {
  SplitCorpus split;
  split.num_items = c.num_items();
  split.num_users = c.num_users();
  split.lists.reserve(c.lists.size());
  for (const auto& l : c.lists) {
    const auto n = l.items.size();
    if (n < 3) {
      throw DataError(
          fmt::format("list '{}' has {} items; at least 3 are needed to split", l.id, n));
    }
    ListSplit s;
    s.id = l.id;
    s.owner = l.owner;
    s.train.assign(l.items.begin(), l.items.end() - 2);
    s.validation = l.items[n - 2];
    s.test = l.items[n - 1];
    split.lists.push_back(std::move(s));
  }
  return split;
}

void pad_window(std::span<const ItemIndex> items, std::size_t n, std::vector<ItemIndex>& out) {
  out.assign(n, kPaddingItem);
  const std::size_t take = std::min(items.size(), n);
  std::copy(items.end() - static_cast<std::ptrdiff_t>(take), items.end(),
            out.end() - static_cast<std::ptrdiff_t>(take));
}

std::vector<TrainingInstance> make_training_instances(std::span<const ItemIndex> list_prefix,
                                                      std::size_t n) {
  std::vector<TrainingInstance> out;
  if (list_prefix.size() < 2) return out;
  out.reserve(list_prefix.size() - 1);
  for (std::size_t k = 1; k < list_prefix.size(); ++k) {
    TrainingInstance inst;
    pad_window(list_prefix.first(k), n, inst.prefix);
    inst.target = list_prefix[k];
    out.push_back(std::move(inst));
  }
  return out;
}

}  // namespace car

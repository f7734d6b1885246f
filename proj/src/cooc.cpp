#include "car/cooc.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include <fmt/format.h>

namespace car {

namespace {

// Cumulative unigram^0.75 distribution over catalog indices.
class NegativeTable {
 public:
  NegativeTable(std::span<const std::vector<ItemIndex>> lists, std::size_t num_items) {
    std::vector<double> counts(num_items + 1, 0.0);
    for (const auto& l : lists) {
      for (auto i : l) counts[i] += 1.0;
    }
    cumulative_.resize(num_items + 1, 0.0);
    double acc = 0.0;
    for (std::size_t i = 0; i <= num_items; ++i) {
      acc += i == kPaddingItem ? 0.0 : std::pow(counts[i], 0.75);
      cumulative_[i] = acc;
    }
  }

  ItemIndex sample(std::mt19937_64& rng) const {
    const double u = std::uniform_real_distribution<double>(0.0, cumulative_.back())(rng);
    auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
    if (it == cumulative_.end()) --it;
    return static_cast<ItemIndex>(it - cumulative_.begin());
  }

 private:
  std::vector<double> cumulative_;
};

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

CoocEmbeddings train_cooc_embeddings(std::span<const std::vector<ItemIndex>> lists,
                                     std::size_t num_items, const SkipGramConfig& config) {
  if (config.dim < 1 || config.window < 1 || config.negatives < 1) {
    throw std::invalid_argument("dim, window and negatives must be >= 1");
  }
  std::size_t tokens = 0;
  bool has_pair = false;
  for (const auto& l : lists) {
    tokens += l.size();
    has_pair = has_pair || l.size() >= 2;
    for (auto i : l) {
      if (i == kPaddingItem || i > num_items) {
        throw std::invalid_argument(fmt::format("item index {} outside catalog", i));
      }
    }
  }
  if (!has_pair) {
    throw std::invalid_argument("corpus has no list with two or more items; nothing to train");
  }

  const std::size_t dim = config.dim;
  std::mt19937_64 rng(config.seed);
  CoocEmbeddings emb;
  emb.dim = dim;
  emb.data.assign((num_items + 1) * dim, 0.0);
  std::vector<double> context_vecs((num_items + 1) * dim, 0.0);
  {
    std::uniform_real_distribution<double> init(-0.5 / dim, 0.5 / dim);
    for (std::size_t i = dim; i < emb.data.size(); ++i) emb.data[i] = init(rng);
  }

  const NegativeTable table(lists, num_items);
  const double total = static_cast<double>(tokens * config.epochs) + 1.0;
  std::size_t processed = 0;
  std::vector<double> grad_in(dim);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (const auto& list : lists) {
      const auto len = static_cast<std::ptrdiff_t>(list.size());
      for (std::ptrdiff_t pos = 0; pos < len; ++pos, ++processed) {
        const double lr =
            config.learning_rate * std::max(1.0 - processed / total, 1e-4);
        // word2vec-style shrunken window
        const auto shrink = static_cast<std::ptrdiff_t>(rng() % config.window);
        const auto reach = static_cast<std::ptrdiff_t>(config.window) - shrink;
        const ItemIndex center = list[pos];
        for (std::ptrdiff_t ctx = std::max<std::ptrdiff_t>(0, pos - reach);
             ctx <= std::min(len - 1, pos + reach); ++ctx) {
          if (ctx == pos) continue;
          double* input = emb.data.data() + list[ctx] * dim;
          std::fill(grad_in.begin(), grad_in.end(), 0.0);
          for (std::size_t k = 0; k <= config.negatives; ++k) {
            ItemIndex target = center;
            double label = 1.0;
            if (k > 0) {
              target = table.sample(rng);
              if (target == center) continue;
              label = 0.0;
            }
            double* output = context_vecs.data() + target * dim;
            double dot = 0.0;
            for (std::size_t j = 0; j < dim; ++j) dot += input[j] * output[j];
            const double g = (label - sigmoid(dot)) * lr;
            for (std::size_t j = 0; j < dim; ++j) grad_in[j] += g * output[j];
            for (std::size_t j = 0; j < dim; ++j) output[j] += g * input[j];
          }
          for (std::size_t j = 0; j < dim; ++j) input[j] += grad_in[j];
        }
      }
    }
  }
  return emb;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("cosine: dimension mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

double consistency_score(std::span<const ItemIndex> list, const CoocEmbeddings& emb) {
  if (list.size() < 2) throw std::invalid_argument("consistency_score needs at least 2 items");
  for (auto i : list) {
    if (i == kPaddingItem || i >= emb.rows()) {
      throw std::out_of_range(fmt::format("no embedding for item index {}", i));
    }
  }
  const auto last = emb.row(list.back());
  double sum = 0.0;
  for (std::size_t i = 0; i + 1 < list.size(); ++i) sum += cosine(emb.row(list[i]), last);
  return sum / static_cast<double>(list.size());
}

std::vector<HistogramBin> consistency_histogram(std::span<const ConsistencyRecord> records,
                                                std::size_t bins) {
  if (bins < 1) throw std::invalid_argument("bins must be >= 1");
  const double width = 2.0 / static_cast<double>(bins);
  std::vector<HistogramBin> hist(bins);
  for (std::size_t b = 0; b < bins; ++b) {
    hist[b].low = -1.0 + width * static_cast<double>(b);
    hist[b].high = b + 1 == bins ? 1.0 : -1.0 + width * static_cast<double>(b + 1);
  }
  for (const auto& r : records) {
    const double clamped = std::clamp(r.score, -1.0, 1.0);
    auto b = static_cast<std::size_t>(std::floor((clamped + 1.0) / width));
    hist[std::min(b, bins - 1)].count++;
  }
  return hist;
}

void write_embeddings(const CoocEmbeddings& emb, const Corpus& c, std::ostream& out) {
  if (emb.rows() != c.num_items() + 1) {
    throw std::invalid_argument("embedding table does not match corpus catalog");
  }
  out << c.num_items() << ' ' << emb.dim << '\n';
  for (ItemIndex i = 1; i <= c.num_items(); ++i) {
    out << c.item_names[i];
    for (double v : emb.row(i)) out << ' ' << fmt::format("{:.17g}", v);
    out << '\n';
  }
}

CoocEmbeddings read_embeddings(std::istream& in, const Corpus& c) {
  std::size_t count = 0, dim = 0;
  if (!(in >> count >> dim) || dim == 0) throw std::runtime_error("bad embeddings header");
  std::unordered_map<std::string, ItemIndex> lookup;
  for (ItemIndex i = 1; i <= c.num_items(); ++i) lookup.emplace(c.item_names[i], i);

  CoocEmbeddings emb;
  emb.dim = dim;
  emb.data.assign((c.num_items() + 1) * dim, 0.0);
  std::vector<bool> seen(c.num_items() + 1, false);
  std::string name;
  std::vector<double> values(dim);
  for (std::size_t r = 0; r < count; ++r) {
    if (!(in >> name)) throw std::runtime_error(fmt::format("embeddings: missing row {}", r + 1));
    for (auto& v : values) {
      if (!(in >> v)) throw std::runtime_error(fmt::format("embeddings: short row for '{}'", name));
    }
    auto it = lookup.find(name);
    if (it == lookup.end()) continue;
    std::copy(values.begin(), values.end(), emb.row(it->second).begin());
    seen[it->second] = true;
  }
  for (ItemIndex i = 1; i <= c.num_items(); ++i) {
    if (!seen[i]) {
      throw std::runtime_error(fmt::format("embeddings: no vector for item '{}'", c.item_names[i]));
    }
  }
  return emb;
}

void write_consistency_csv(std::span<const ConsistencyRecord> records, std::ostream& out) {
  out << "list,consistency\n";
  for (const auto& r : records) out << r.list_id << ',' << fmt::format("{:.17g}", r.score) << '\n';
}

std::vector<ConsistencyRecord> read_consistency_csv(std::istream& in) {
  std::vector<ConsistencyRecord> records;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || (lineno == 1 && line.rfind("list,", 0) == 0)) continue;
    const auto comma = line.rfind(',');
    if (comma == std::string::npos) {
      throw ParseError(lineno, "expected 'list,consistency'");
    }
    ConsistencyRecord r;
    r.list_id = line.substr(0, comma);
    try {
      r.score = std::stod(line.substr(comma + 1));
    } catch (const std::exception&) {
      throw ParseError(lineno, "consistency value is not a number");
    }
    records.push_back(std::move(r));
  }
  return records;
}

void write_histogram_csv(std::span<const HistogramBin> bins, std::ostream& out) {
  out << "bin_low,bin_high,count\n";
  for (const auto& b : bins) out << fmt::format("{:.4f},{:.4f},{}\n", b.low, b.high, b.count);
}

}  // namespace car

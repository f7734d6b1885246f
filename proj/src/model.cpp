#include "car/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <random>
#include <stdexcept>

#include <fmt/format.h>

namespace car {

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::kCar: return "car";
    case Variant::kNoGating: return "no-gating";
    case Variant::kCppmOnly: return "cppm";
    case Variant::kGupmOnly: return "gupm";
  }
  return "unknown";
}

Variant parse_variant(std::string_view name) {
  for (auto v : {Variant::kCar, Variant::kNoGating, Variant::kCppmOnly, Variant::kGupmOnly}) {
    if (name == variant_name(v)) return v;
  }
  throw std::invalid_argument(
      fmt::format("unknown variant '{}' (expected car, no-gating, cppm or gupm)", name));
}

ModelParams ModelParams::zeros_like() const {
  ModelParams z = *this;
  for_each_tensor(z, [](std::string_view, auto& t) { t.setZero(); });
  return z;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for_each_tensor(*this, [&](std::string_view, const auto& t) { n += t.size(); });
  return n;
}

bool ModelParams::all_finite() const {
  bool ok = true;
  for_each_tensor(*this, [&](std::string_view, const auto& t) { ok = ok && t.allFinite(); });
  return ok;
}

std::vector<std::span<double>> tensor_views(ModelParams& p) {
  std::vector<std::span<double>> out;
  for_each_tensor(p, [&](std::string_view, auto& t) {
    out.emplace_back(t.data(), static_cast<std::size_t>(t.size()));
  });
  return out;
}

std::vector<std::span<const double>> tensor_views(const ModelParams& p) {
  std::vector<std::span<const double>> out;
  for_each_tensor(p, [&](std::string_view, const auto& t) {
    out.emplace_back(t.data(), static_cast<std::size_t>(t.size()));
  });
  return out;
}

ModelParams init_params(const ModelShape& shape, std::uint64_t seed) {
  if (shape.dim < 1) throw std::invalid_argument("dim must be >= 1");
  if (shape.max_len < 1) throw std::invalid_argument("max_len must be >= 1");
  ModelParams p;
  p.dim = shape.dim;
  p.num_items = shape.num_items;
  p.num_users = shape.num_users;
  p.max_len = shape.max_len;
  p.use_user_embedding = shape.use_user_embedding;
  p.variant = shape.variant;

  std::mt19937_64 rng(seed);
  auto glorot = [&](Eigen::Index rows, Eigen::Index cols) {
    RowMatrix m(rows, cols);
    const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
    std::uniform_real_distribution<double> u(-limit, limit);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
    return m;
  };
  const auto d = static_cast<Eigen::Index>(shape.dim);
  p.item_emb = glorot(static_cast<Eigen::Index>(shape.num_items + 1), d);
  p.item_emb.row(kPaddingItem).setZero();
  p.user_emb = glorot(static_cast<Eigen::Index>(shape.num_users), d);
  p.key_proj = glorot(d, d);
  p.query_proj = glorot(d, d);
  p.context = Vector::Zero(d);
  p.gate_key_proj = glorot(d, d);
  p.gate_context = Vector::Zero(d);
  p.gate = glorot(2, 2 * d);
  p.ff1 = glorot(d, d);
  p.ff1_bias = Vector::Zero(d);
  p.ff2 = glorot(d, d);
  p.ff2_bias = Vector::Zero(d);
  return p;
}

namespace {

void softmax_inplace(Eigen::Ref<Vector> v) {
  const double m = v.maxCoeff();
  v = (v.array() - m).exp();
  v /= v.sum();
}

// Backward through softmax: given weights a and dL/da, returns dL/dlogits.
Vector softmax_backward(const Vector& a, const Vector& da) {
  return a.cwiseProduct((da.array() - a.dot(da)).matrix());
}

std::size_t count_real(std::span<const bool> mask) {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
}

RowMatrix gather_real(const RowMatrix& items, std::span<const bool> mask) {
  RowMatrix r(static_cast<Eigen::Index>(count_real(mask)), items.cols());
  Eigen::Index k = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) r.row(k++) = items.row(static_cast<Eigen::Index>(i));
  }
  return r;
}

std::vector<double> scatter_weights(const Vector& w, std::span<const bool> mask) {
  std::vector<double> out(mask.size(), 0.0);
  Eigen::Index k = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) out[i] = w(k++);
  }
  return out;
}

void check_mask(const RowMatrix& items, std::span<const bool> mask) {
  if (static_cast<std::size_t>(items.rows()) != mask.size()) {
    throw std::invalid_argument("items and mask lengths differ");
  }
  if (count_real(mask) == 0) throw std::invalid_argument("every prefix position is masked");
}

// Attention over compact real rows where logits are rows . key_query.
// key_query folds the key projection into the query: (A x).q = x.(A^T q).
struct Pooled {
  Vector key_query;
  Vector weights;
  Vector pooled;
};

Pooled attend(const RowMatrix& real, const Vector& key_query) {
  Pooled out;
  out.key_query = key_query;
  out.weights = real * key_query;
  softmax_inplace(out.weights);
  out.pooled = real.transpose() * out.weights;
  return out;
}

// Backward of attend() given dL/dpooled. Accumulates into dreal and returns
// dL/dkey_query.
Vector attend_backward(const RowMatrix& real, const Pooled& fw, const Vector& dpooled,
                       RowMatrix& dreal) {
  const Vector dweights = real * dpooled;
  const Vector dlogits = softmax_backward(fw.weights, dweights);
  dreal.noalias() += fw.weights * dpooled.transpose();
  dreal.noalias() += dlogits * fw.key_query.transpose();
  return real.transpose() * dlogits;
}

bool uses_gupm(Variant v) { return v != Variant::kCppmOnly; }
bool uses_cppm(Variant v) { return v != Variant::kGupmOnly; }

struct ForwardCache {
  std::vector<ItemIndex> real_items;
  std::vector<std::size_t> positions;
  RowMatrix real;
  Pooled gupm, cppm, gate_list;
  Vector cppm_query;  // query_proj * x_t
  Vector z_consistency, z;
  Eigen::Vector2d gate = Eigen::Vector2d::Zero();
  Vector fused, personalized, pre, hidden, head;
};

void run_forward(std::span<const ItemIndex> prefix, UserIndex user, const ModelParams& p,
                 ForwardCache& c) {
  c.real_items.clear();
  c.positions.clear();
  for (std::size_t i = 0; i < prefix.size(); ++i) {
    const ItemIndex item = prefix[i];
    if (item == kPaddingItem) continue;
    if (item > p.num_items) throw std::out_of_range(fmt::format("item index {} outside catalog", item));
    c.real_items.push_back(item);
    c.positions.push_back(i);
  }
  if (c.real_items.empty()) throw std::invalid_argument("prefix has no real item");

  const auto t = static_cast<Eigen::Index>(c.real_items.size());
  const auto d = static_cast<Eigen::Index>(p.dim);
  c.real.resize(t, d);
  for (Eigen::Index i = 0; i < t; ++i) c.real.row(i) = p.item_emb.row(c.real_items[i]);
  const Vector last = c.real.row(t - 1).transpose();

  if (uses_gupm(p.variant)) c.gupm = attend(c.real, p.key_proj.transpose() * p.context);
  if (uses_cppm(p.variant)) {
    c.cppm_query = p.query_proj * last;
    c.cppm = attend(c.real, p.key_proj.transpose() * c.cppm_query);
  }

  switch (p.variant) {
    case Variant::kCar: {
      c.z_consistency = (c.real.rowwise() - last.transpose()).colwise().mean().transpose();
      c.gate_list = attend(c.real, p.gate_key_proj.transpose() * p.gate_context);
      c.z.resize(2 * d);
      c.z << c.z_consistency, c.gate_list.pooled;
      c.gate = p.gate * c.z;
      softmax_inplace(c.gate);
      c.fused = c.gate(0) * c.cppm.pooled + c.gate(1) * c.gupm.pooled;
      break;
    }
    case Variant::kNoGating:
      c.gate = Eigen::Vector2d(1.0, 1.0);
      c.fused = c.cppm.pooled + c.gupm.pooled;
      break;
    case Variant::kCppmOnly:
      c.gate = Eigen::Vector2d(1.0, 0.0);
      c.fused = c.cppm.pooled;
      break;
    case Variant::kGupmOnly:
      c.gate = Eigen::Vector2d(0.0, 1.0);
      c.fused = c.gupm.pooled;
      break;
  }

  c.personalized = personalize(c.fused, user, p);
  c.pre = p.ff1.transpose() * c.personalized + p.ff1_bias;
  c.hidden = c.pre.cwiseMax(0.0);
  c.head = p.ff2.transpose() * c.hidden + p.ff2_bias;
}

double softplus(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void check_candidate(ItemIndex item, const ModelParams& p) {
  if (item == kPaddingItem) throw std::invalid_argument("the padding item cannot be scored");
  if (item > p.num_items) throw std::invalid_argument(fmt::format("item index {} outside catalog", item));
}

}  // namespace

AttentionResult attention_pool(const RowMatrix& values, const RowMatrix& keys, const Vector& query,
                               std::span<const bool> mask) {
  check_mask(values, mask);
  if (keys.rows() != values.rows()) throw std::invalid_argument("keys and values lengths differ");
  const RowMatrix real_values = gather_real(values, mask);
  const RowMatrix real_keys = gather_real(keys, mask);
  Vector w = real_keys * query;
  softmax_inplace(w);
  return {real_values.transpose() * w, scatter_weights(w, mask)};
}

AttentionResult gupm_embed(const RowMatrix& items, std::span<const bool> mask,
                           const ModelParams& p) {
  return attention_pool(items, items * p.key_proj.transpose(), p.context, mask);
}

namespace {
Eigen::Index last_real(std::span<const bool> mask) {
  for (std::size_t i = mask.size(); i-- > 0;) {
    if (mask[i]) return static_cast<Eigen::Index>(i);
  }
  throw std::invalid_argument("every prefix position is masked");
}
}  // namespace

AttentionResult cppm_embed(const RowMatrix& items, std::span<const bool> mask,
                           const ModelParams& p) {
  check_mask(items, mask);
  const Vector query = p.query_proj * items.row(last_real(mask)).transpose();
  return attention_pool(items, items * p.key_proj.transpose(), query, mask);
}

Vector gate_input_consistency(const RowMatrix& items, std::span<const bool> mask) {
  check_mask(items, mask);
  const RowMatrix real = gather_real(items, mask);
  // Mean of differences rather than difference of means: exactly zero when
  // every item equals the last.
  return (real.rowwise() - items.row(last_real(mask))).colwise().mean().transpose();
}

AttentionResult gate_input_list(const RowMatrix& items, std::span<const bool> mask,
                                const ModelParams& p) {
  return attention_pool(items, items * p.gate_key_proj.transpose(), p.gate_context, mask);
}

Eigen::Vector2d gate_values(const Vector& z_consistency, const Vector& z_list,
                            const ModelParams& p) {
  Vector z(z_consistency.size() + z_list.size());
  z << z_consistency, z_list;
  Eigen::Vector2d g = p.gate * z;
  softmax_inplace(g);
  return g;
}

Vector fuse(const Vector& cppm, const Vector& gupm, const Eigen::Vector2d& gate) {
  return gate(0) * cppm + gate(1) * gupm;
}

Vector personalize(const Vector& list_embedding, UserIndex user, const ModelParams& p) {
  if (!p.use_user_embedding) return list_embedding;
  if (user >= p.num_users) throw std::out_of_range(fmt::format("unknown user index {}", user));
  return list_embedding + p.user_emb.row(user).transpose();
}

Vector feed_forward(const Vector& input, const ModelParams& p) {
  const Vector hidden = (p.ff1.transpose() * input + p.ff1_bias).cwiseMax(0.0);
  return p.ff2.transpose() * hidden + p.ff2_bias;
}

double score(ItemIndex item, const Vector& head, const ModelParams& p) {
  check_candidate(item, p);
  return p.item_emb.row(item).dot(head);
}

double bpr_pair_loss(double positive_score, double negative_score) {
  return softplus(negative_score - positive_score);
}

std::vector<double> forward(std::span<const ItemIndex> prefix, UserIndex user,
                            std::span<const ItemIndex> candidates, const ModelParams& p,
                            ForwardTrace* trace) {
  ForwardCache c;
  run_forward(prefix, user, p, c);
  std::vector<double> scores;
  scores.reserve(candidates.size());
  for (auto item : candidates) scores.push_back(score(item, c.head, p));

  if (trace != nullptr) {
    auto spread = [&](const Pooled& pool, bool used) {
      std::vector<double> w(prefix.size(), 0.0);
      if (!used) return w;
      for (std::size_t k = 0; k < c.positions.size(); ++k) w[c.positions[k]] = pool.weights(static_cast<Eigen::Index>(k));
      return w;
    };
    const bool gated = p.variant == Variant::kCar;
    trace->gupm_weights = spread(c.gupm, uses_gupm(p.variant));
    trace->cppm_weights = spread(c.cppm, uses_cppm(p.variant));
    trace->gate_list_weights = spread(c.gate_list, gated);
    trace->gate = c.gate;
    trace->gupm = uses_gupm(p.variant) ? c.gupm.pooled : Vector();
    trace->cppm = uses_cppm(p.variant) ? c.cppm.pooled : Vector();
    trace->z_consistency = gated ? c.z_consistency : Vector();
    trace->z_list = gated ? c.gate_list.pooled : Vector();
    trace->fused = c.fused;
    trace->personalized = c.personalized;
    trace->head = c.head;
  }
  return scores;
}

double pair_loss(std::span<const ItemIndex> prefix, UserIndex user, ItemIndex positive,
                 ItemIndex negative, const ModelParams& p) {
  const ItemIndex cands[] = {positive, negative};
  const auto s = forward(prefix, user, cands, p);
  return bpr_pair_loss(s[0], s[1]);
}

double pair_loss_and_gradient(std::span<const ItemIndex> prefix, UserIndex user,
                              ItemIndex positive, ItemIndex negative, const ModelParams& p,
                              ModelParams& g, double scale) {
  check_candidate(positive, p);
  check_candidate(negative, p);
  ForwardCache c;
  run_forward(prefix, user, p, c);

  const Vector x_pos = p.item_emb.row(positive).transpose();
  const Vector x_neg = p.item_emb.row(negative).transpose();
  const double margin = x_pos.dot(c.head) - x_neg.dot(c.head);
  const double loss = softplus(-margin);
  if (!std::isfinite(loss)) throw std::runtime_error("non-finite pair loss");

  // dL/dmargin = -sigmoid(-margin)
  const double dmargin = -sigmoid(-margin) * scale;
  g.item_emb.row(positive) += dmargin * c.head.transpose();
  g.item_emb.row(negative) -= dmargin * c.head.transpose();
  const Vector dhead = dmargin * (x_pos - x_neg);

  // feed-forward head
  g.ff2.noalias() += c.hidden * dhead.transpose();
  g.ff2_bias += dhead;
  const Vector dpre = (p.ff2 * dhead).cwiseProduct(
      (c.pre.array() > 0.0).cast<double>().matrix());
  g.ff1.noalias() += c.personalized * dpre.transpose();
  g.ff1_bias += dpre;
  const Vector dfused = p.ff1 * dpre;
  if (p.use_user_embedding) g.user_emb.row(user) += dfused.transpose();

  const auto t = c.real.rows();
  RowMatrix dreal = RowMatrix::Zero(t, c.real.cols());
  Vector dcppm, dgupm;
  switch (p.variant) {
    case Variant::kCar: {
      dcppm = c.gate(0) * dfused;
      dgupm = c.gate(1) * dfused;
      const Eigen::Vector2d dgate(c.cppm.pooled.dot(dfused), c.gupm.pooled.dot(dfused));
      const Eigen::Vector2d dlogit = c.gate.cwiseProduct(
          (dgate.array() - c.gate.dot(dgate)).matrix());
      g.gate.noalias() += dlogit * c.z.transpose();
      const Vector dz = p.gate.transpose() * dlogit;
      const auto d = static_cast<Eigen::Index>(p.dim);
      const Vector dz_consistency = dz.head(d);
      const Vector dz_list = dz.tail(d);
      // z_c = mean(real) - x_t
      dreal.rowwise() += (dz_consistency / static_cast<double>(t)).transpose();
      dreal.row(t - 1) -= dz_consistency.transpose();
      const Vector dkq = attend_backward(c.real, c.gate_list, dz_list, dreal);
      // key_query = gate_key_proj^T gate_context
      g.gate_key_proj.noalias() += p.gate_context * dkq.transpose();
      g.gate_context.noalias() += p.gate_key_proj * dkq;
      break;
    }
    case Variant::kNoGating:
      dcppm = dfused;
      dgupm = dfused;
      break;
    case Variant::kCppmOnly:
      dcppm = dfused;
      break;
    case Variant::kGupmOnly:
      dgupm = dfused;
      break;
  }

  if (uses_gupm(p.variant)) {
    const Vector dkq = attend_backward(c.real, c.gupm, dgupm, dreal);
    g.key_proj.noalias() += p.context * dkq.transpose();
    g.context.noalias() += p.key_proj * dkq;
  }
  if (uses_cppm(p.variant)) {
    const Vector dkq = attend_backward(c.real, c.cppm, dcppm, dreal);
    g.key_proj.noalias() += c.cppm_query * dkq.transpose();
    const Vector dquery = p.key_proj * dkq;
    const Vector last = c.real.row(t - 1).transpose();
    g.query_proj.noalias() += dquery * last.transpose();
    dreal.row(t - 1) += (p.query_proj.transpose() * dquery).transpose();
  }

  for (Eigen::Index i = 0; i < t; ++i) g.item_emb.row(c.real_items[i]) += dreal.row(i);
  return loss;
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'C', 'A', 'R', 'C', 'K', 'P', 'T', '1'};

template <class T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& in) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw std::runtime_error("checkpoint truncated");
  }
  return v;
}

}  // namespace

void save_checkpoint(const ModelParams& p, std::ostream& out) {
  out.write(kMagic, sizeof(kMagic));
  put<std::uint64_t>(out, p.dim);
  put<std::uint64_t>(out, p.num_items);
  put<std::uint64_t>(out, p.num_users);
  put<std::uint64_t>(out, p.max_len);
  put<std::uint8_t>(out, p.use_user_embedding ? 1 : 0);
  put<std::uint8_t>(out, static_cast<std::uint8_t>(p.variant));
  std::uint32_t count = 0;
  for_each_tensor(p, [&](std::string_view, const auto&) { ++count; });
  put<std::uint32_t>(out, count);
  for_each_tensor(p, [&](std::string_view name, const auto& t) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(t.rows()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(t.cols()));
    // Column vectors and row-major matrices are both contiguous in row order.
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
  });
  if (!out) throw std::runtime_error("failed writing checkpoint");
}

ModelParams load_checkpoint(std::istream& in) {
  char magic[sizeof(kMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("not a checkpoint (bad magic)");
  }
  ModelParams p;
  p.dim = get<std::uint64_t>(in);
  p.num_items = get<std::uint64_t>(in);
  p.num_users = get<std::uint64_t>(in);
  p.max_len = get<std::uint64_t>(in);
  p.use_user_embedding = get<std::uint8_t>(in) != 0;
  const auto variant = get<std::uint8_t>(in);
  if (variant > static_cast<std::uint8_t>(Variant::kGupmOnly)) {
    throw std::runtime_error("checkpoint has unknown variant");
  }
  p.variant = static_cast<Variant>(variant);
  const auto count = get<std::uint32_t>(in);

  const auto d = static_cast<Eigen::Index>(p.dim);
  ModelShape shape{p.dim, p.num_items, p.num_users, p.max_len, p.use_user_embedding, p.variant};
  // Expected shapes come from a zero-initialised model of the same header.
  ModelParams expected = p;
  expected.item_emb = RowMatrix::Zero(static_cast<Eigen::Index>(shape.num_items + 1), d);
  expected.user_emb = RowMatrix::Zero(static_cast<Eigen::Index>(shape.num_users), d);
  expected.key_proj = expected.query_proj = expected.gate_key_proj = RowMatrix::Zero(d, d);
  expected.ff1 = expected.ff2 = RowMatrix::Zero(d, d);
  expected.gate = RowMatrix::Zero(2, 2 * d);
  expected.context = expected.gate_context = Vector::Zero(d);
  expected.ff1_bias = expected.ff2_bias = Vector::Zero(d);

  std::uint32_t seen = 0;
  for_each_tensor(expected, [&](std::string_view name, auto& t) {
    ++seen;
    const auto len = get<std::uint32_t>(in);
    std::string stored(len, '\0');
    if (!in.read(stored.data(), len)) throw std::runtime_error("checkpoint truncated");
    if (stored != name) {
      throw std::runtime_error(fmt::format("checkpoint tensor '{}' where '{}' expected", stored, name));
    }
    const auto rows = get<std::uint64_t>(in);
    const auto cols = get<std::uint64_t>(in);
    if (rows != static_cast<std::uint64_t>(t.rows()) || cols != static_cast<std::uint64_t>(t.cols())) {
      throw std::runtime_error(fmt::format("checkpoint tensor '{}' has shape {}x{}, expected {}x{}",
                                           name, rows, cols, t.rows(), t.cols()));
    }
    if (!in.read(reinterpret_cast<char*>(t.data()),
                 static_cast<std::streamsize>(t.size() * sizeof(double)))) {
      throw std::runtime_error("checkpoint truncated");
    }
  });
  if (seen != count) throw std::runtime_error("checkpoint tensor count mismatch");
  return expected;
}

void save_checkpoint_file(const ModelParams& p, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(fmt::format("cannot write '{}'", path));
  save_checkpoint(p, out);
}

ModelParams load_checkpoint_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(fmt::format("cannot open '{}'", path));
  return load_checkpoint(in);
}

}  // namespace car

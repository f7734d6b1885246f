#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "car/corpus.hpp"

namespace car {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Which list embedding feeds the prediction head.
enum class Variant : std::uint8_t {
  kCar = 0,       // gated mixture of both preference models
  kNoGating = 1,  // unweighted sum of both
  kCppmOnly = 2,  // last-item-query attention only
  kGupmOnly = 3,  // global-context attention only
};

std::string_view variant_name(Variant v);
Variant parse_variant(std::string_view name);

/// Every learnable tensor plus the shape metadata a checkpoint needs.
/// Matrices act on column vectors: keys are `key_proj * x`, the gate is
/// `gate * [z_c; z_l]`. The feed-forward weights keep the row-vector
/// convention, hidden = relu(ff1^T l + ff1_bias).
struct ModelParams {
  std::size_t dim = 0;
  std::size_t num_items = 0;
  std::size_t num_users = 0;
  std::size_t max_len = 0;  // prefix window n
  bool use_user_embedding = false;
  Variant variant = Variant::kCar;

  RowMatrix item_emb;       // (num_items + 1) x dim, row 0 is padding and stays zero
  RowMatrix user_emb;       // num_users x dim
  RowMatrix key_proj;       // shared by both preference models
  RowMatrix query_proj;     // maps the last item to the CPPM query
  Vector context;           // GUPM query
  RowMatrix gate_key_proj;  // gate-private key projection
  Vector gate_context;      // gate-private query
  RowMatrix gate;           // 2 x (2 dim); row 0 scores CPPM, row 1 GUPM
  RowMatrix ff1;
  Vector ff1_bias;
  RowMatrix ff2;
  Vector ff2_bias;

  /// Same shapes and metadata, every tensor zero. Used for gradients and
  /// optimizer moments.
  ModelParams zeros_like() const;
  std::size_t parameter_count() const;
  bool all_finite() const;
};

/// Visits (name, tensor) for every learnable tensor in a fixed order.
template <class Params, class Fn>
void for_each_tensor(Params& p, Fn&& fn) {
  fn("item_emb", p.item_emb);
  fn("user_emb", p.user_emb);
  fn("key_proj", p.key_proj);
  fn("query_proj", p.query_proj);
  fn("context", p.context);
  fn("gate_key_proj", p.gate_key_proj);
  fn("gate_context", p.gate_context);
  fn("gate", p.gate);
  fn("ff1", p.ff1);
  fn("ff1_bias", p.ff1_bias);
  fn("ff2", p.ff2);
  fn("ff2_bias", p.ff2_bias);
}

/// Flat views of every tensor in for_each_tensor order; views of two models
/// with the same shape line up element for element.
std::vector<std::span<double>> tensor_views(ModelParams& p);
std::vector<std::span<const double>> tensor_views(const ModelParams& p);

struct ModelShape {
  std::size_t dim = 50;
  std::size_t num_items = 0;
  std::size_t num_users = 0;
  std::size_t max_len = 500;
  bool use_user_embedding = false;
  Variant variant = Variant::kCar;
};

/// Glorot-uniform matrices and embeddings, zero biases and context vectors,
/// zero padding row.
ModelParams init_params(const ModelShape& shape, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Building blocks. `items` holds one embedding per prefix position; `mask`
// marks the real (non-padding) positions.

struct AttentionResult {
  Vector pooled;
  std::vector<double> weights;  // one per position, exactly 0 where masked
};

/// softmax over key.query restricted to unmasked positions, then the
/// weighted sum of values. Throws std::invalid_argument if all are masked.
AttentionResult attention_pool(const RowMatrix& values, const RowMatrix& keys, const Vector& query,
                               std::span<const bool> mask);

AttentionResult gupm_embed(const RowMatrix& items, std::span<const bool> mask,
                           const ModelParams& p);
AttentionResult cppm_embed(const RowMatrix& items, std::span<const bool> mask,
                           const ModelParams& p);
/// Centroid of the real items (including the last) minus the last real item.
Vector gate_input_consistency(const RowMatrix& items, std::span<const bool> mask);
AttentionResult gate_input_list(const RowMatrix& items, std::span<const bool> mask,
                                const ModelParams& p);
/// (g_cppm, g_gupm) = softmax(gate * [z_c; z_l]).
Eigen::Vector2d gate_values(const Vector& z_consistency, const Vector& z_list,
                            const ModelParams& p);
Vector fuse(const Vector& cppm, const Vector& gupm, const Eigen::Vector2d& gate);
/// Throws std::out_of_range for an unknown user when user embeddings are on.
Vector personalize(const Vector& list_embedding, UserIndex user, const ModelParams& p);
Vector feed_forward(const Vector& input, const ModelParams& p);
/// Throws std::invalid_argument for the padding item or an out-of-range item.
double score(ItemIndex item, const Vector& head, const ModelParams& p);
/// -log sigmoid(pos - neg), computed as softplus(neg - pos).
double bpr_pair_loss(double positive_score, double negative_score);

struct ForwardTrace {
  std::vector<double> gupm_weights;
  std::vector<double> cppm_weights;
  std::vector<double> gate_list_weights;
  Eigen::Vector2d gate = Eigen::Vector2d::Zero();  // effective (cppm, gupm) mixing
  Vector gupm, cppm;
  Vector z_consistency, z_list;
  Vector fused, personalized, head;
};

/// Scores `candidates` for one prefix (padding allowed anywhere before the
/// real items; padding positions are ignored).
std::vector<double> forward(std::span<const ItemIndex> prefix, UserIndex user,
                            std::span<const ItemIndex> candidates, const ModelParams& p,
                            ForwardTrace* trace = nullptr);

/// Loss of one (prefix, positive, negative) triple; accumulates
/// `scale * dloss/dparam` into `grads`. Padding positions get no gradient.
double pair_loss_and_gradient(std::span<const ItemIndex> prefix, UserIndex user,
                              ItemIndex positive, ItemIndex negative, const ModelParams& p,
                              ModelParams& grads, double scale = 1.0);

/// Same loss without gradients; the finite-difference oracle uses this.
double pair_loss(std::span<const ItemIndex> prefix, UserIndex user, ItemIndex positive,
                 ItemIndex negative, const ModelParams& p);

// ---------------------------------------------------------------------------
// Checkpoints: little-endian binary, magic "CARCKPT1", shape header, then
// each tensor as name, rows, cols and raw doubles.

void save_checkpoint(const ModelParams& p, std::ostream& out);
ModelParams load_checkpoint(std::istream& in);
void save_checkpoint_file(const ModelParams& p, const std::string& path);
ModelParams load_checkpoint_file(const std::string& path);

}  // namespace car

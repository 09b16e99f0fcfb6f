#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ovv/detections.hpp"
#include "ovv/heatmap.hpp"
#include "ovv/tokenizer.hpp"
#include "ovv/types.hpp"
#include "ovv/video.hpp"

namespace ovv {

enum class Aggregation { heatmap_weighted, binary_block_mask };

struct ModelConfig {
  // Input clip geometry.
  int frames = 8;
  int height = 32;
  int width = 32;
  int channels = 3;
  TubeDims tube{2, 8, 8};
  /// Pixels enter the embedding as (v - pixel_mean) / pixel_std. Raw [0, 1]
  /// values leave small sprites nearly invisible next to the background.
  double pixel_mean = 0.45;
  double pixel_std = 0.25;

  int depth = 4;
  int dim = 64;
  int heads = 4;
  int mlp_hidden = 256;
  int num_classes = 4;

  /// Blocks whose keys/values are augmented with object tokens. Empty means
  /// the plain space-time ViViT.
  std::vector<int> oam_layers;
  Aggregation aggregation = Aggregation::heatmap_weighted;
  bool use_identity_embedding = true;
  int max_tracks = 8;

  TokenGridSpec grid() const;
  int patch_dim() const { return tube.volume() * channels; }
  bool is_oam_layer(int layer) const;
  void validate() const;
};

/// {floor(L/6), floor(L/2), L-1}, deduplicated; {2, 6, 11} at L = 12.
std::vector<int> default_oam_layers(int depth);

template <typename Scalar>
using ParamStore = std::map<std::string, Matrix<Scalar>>;

/// Weights ~ N(0, 0.02), biases 0, layer-norm gains 1, identity tables 0.
template <typename Scalar>
ParamStore<Scalar> init_params(const ModelConfig& cfg, std::uint64_t seed);

/// Adds U(-scale/2, scale/2) noise to every entry, including zero-initialised
/// biases and tables. Gradient checks use this to move away from the init
/// point, where many gradients are too small to compare against differences.
template <typename Scalar>
void perturb_params(ParamStore<Scalar>& params, std::uint64_t seed, double scale);

template <typename To, typename From>
ParamStore<To> cast_params(const ParamStore<From>& params) {
  ParamStore<To> out;
  for (const auto& [name, m] : params) out.emplace(name, m.template cast<To>());
  return out;
}

template <typename Scalar>
ParamStore<Scalar> zeros_like(const ParamStore<Scalar>& params) {
  ParamStore<Scalar> out;
  for (const auto& [name, m] : params) out.emplace(name, Matrix<Scalar>::Zero(m.rows(), m.cols()));
  return out;
}

template <typename Scalar>
std::size_t parameter_count(const ParamStore<Scalar>& params) {
  std::size_t n = 0;
  for (const auto& [name, m] : params) n += static_cast<std::size_t>(m.size());
  return n;
}

// ---------------------------------------------------------------------------
// Primitive layers. Each forward optionally records a cache; the matching
// backward accumulates parameter gradients into `grads` (same keys as the
// parameter store) and returns input gradients.

template <typename Scalar>
struct LayerNormCache {
  Matrix<Scalar> normalized;
  ColumnVector<Scalar> inv_std;
};

template <typename Scalar>
struct AttentionCache {
  Matrix<Scalar> q_in, k_in, v_in;
  Matrix<Scalar> q, k, v;
  Matrix<Scalar> heads_out;
  std::vector<Matrix<Scalar>> probs;
};

template <typename Scalar>
struct AttentionGrads {
  Matrix<Scalar> queries, keys, values;
};

/// Multi-head scaled dot-product attention with output projection. Parameters
/// under `prefix`: wq bq wk bk wv bv wo bo.
template <typename Scalar>
Matrix<Scalar> mha(const Matrix<Scalar>& queries, const Matrix<Scalar>& keys, const Matrix<Scalar>& values,
                   const ParamStore<Scalar>& params, const std::string& prefix, int heads,
                   AttentionCache<Scalar>* cache = nullptr);

template <typename Scalar>
AttentionGrads<Scalar> mha_backward(const AttentionCache<Scalar>& cache, const Matrix<Scalar>& d_out,
                                    const ParamStore<Scalar>& params, ParamStore<Scalar>& grads,
                                    const std::string& prefix, int heads);

/// Heatmap-weighted (or block-masked) rows pooled into one object token.
template <typename Scalar>
struct PoolGroup {
  int object_id = 0;
  int token_frame = 0;
  std::vector<int> rows;        // rows of the current token matrix
  std::vector<Scalar> weights;  // affinity of each row, all > 0
};

/// Groups for the current rows (flat grid index per row), one per
/// (object, token-frame) with non-empty support, sorted by (object, frame).
template <typename Scalar>
std::vector<PoolGroup<Scalar>> build_pool_groups(const InstanceAffinity& affinity, std::span<const int> row_tokens,
                                                 const TokenGridSpec& grid);

template <typename Scalar>
struct ObjectTokenSet {
  Matrix<Scalar> features;
  std::vector<int> object_ids;
  std::vector<int> token_frames;

  int size() const { return static_cast<int>(features.rows()); }
};

template <typename Scalar>
struct PoolCache {
  std::vector<int> pair_row;
  std::vector<Scalar> pair_weight;
  Matrix<Scalar> weighted, hidden_pre, hidden, out;
  Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> argmax;  // groups x D, pair index
};

/// w = max over rows of MLP(weight * row); the MLP is D->D->D with GELU,
/// parameters under `prefix`: w1 b1 w2 b2.
template <typename Scalar>
ObjectTokenSet<Scalar> pool_object_tokens(const Matrix<Scalar>& tokens, std::span<const PoolGroup<Scalar>> groups,
                                          const ParamStore<Scalar>& params, const std::string& prefix,
                                          PoolCache<Scalar>* cache = nullptr);

/// Adds row `object_id` of the identity table to each object token.
template <typename Scalar>
void add_identity(ObjectTokenSet<Scalar>& objects, const Matrix<Scalar>& table);

template <typename Scalar>
struct BlockCache {
  Matrix<Scalar> input;
  LayerNormCache<Scalar> ln1;
  Matrix<Scalar> normed;
  bool has_objects = false;
  std::vector<PoolGroup<Scalar>> groups;
  PoolCache<Scalar> pool;
  AttentionCache<Scalar> attn;
  Matrix<Scalar> mid;
  LayerNormCache<Scalar> ln2;
  Matrix<Scalar> normed2;
  Matrix<Scalar> mlp_pre;
  Matrix<Scalar> mlp_act;
};

/// Pre-LN transformer block. With a non-empty group list the keys/values are
/// [normed tokens; object tokens] and the object tokens are pooled from the
/// normed tokens of this block (identity rows added when `use_identity`).
/// An empty group list is exactly the vanilla block.
template <typename Scalar>
Matrix<Scalar> transformer_block(const Matrix<Scalar>& x, const ParamStore<Scalar>& params, const std::string& prefix,
                                 int heads, std::span<const PoolGroup<Scalar>> groups, bool use_identity,
                                 BlockCache<Scalar>* cache = nullptr);

template <typename Scalar>
Matrix<Scalar> vanilla_block(const Matrix<Scalar>& x, const ParamStore<Scalar>& params, const std::string& prefix,
                             int heads, BlockCache<Scalar>* cache = nullptr) {
  return transformer_block<Scalar>(x, params, prefix, heads, {}, false, cache);
}

template <typename Scalar>
Matrix<Scalar> oam_block(const Matrix<Scalar>& x, std::span<const PoolGroup<Scalar>> groups,
                         const ParamStore<Scalar>& params, const std::string& prefix, int heads, bool use_identity,
                         BlockCache<Scalar>* cache = nullptr) {
  return transformer_block<Scalar>(x, params, prefix, heads, groups, use_identity, cache);
}

template <typename Scalar>
Matrix<Scalar> transformer_block_backward(const BlockCache<Scalar>& cache, const Matrix<Scalar>& d_out,
                                          const ParamStore<Scalar>& params, ParamStore<Scalar>& grads,
                                          const std::string& prefix, int heads, bool use_identity);

// ---------------------------------------------------------------------------
// Whole model.

/// Everything the network consumes for one clip, on the full token grid.
template <typename Scalar>
struct ModelInput {
  TokenGridSpec grid;
  Matrix<Scalar> patches;
  std::vector<TokenCoord> coords;
  TokenScores scores;
  /// objects x N, heatmap-weighted or block-mask per ModelConfig::aggregation.
  InstanceAffinity affinity;
};

/// Tokenizes a clip of cfg.frames frames, renders heatmaps, and computes
/// token scores and object affinities. Untracked detections are linked with
/// the greedy IoU tracker first.
template <typename Scalar>
ModelInput<Scalar> prepare_input(const ModelConfig& cfg, const VideoTensor& clip, const DetectionTrackSet& tracks);

/// Which tokens survive and where they are dropped. `keep` lists flat grid
/// indices in row order; nullopt keeps all N tokens in grid order.
struct TokenPlan {
  std::optional<std::vector<int>> keep;
  int drop_layer = 0;
};

template <typename Scalar>
struct ForwardCache {
  std::vector<int> embedded_tokens;
  std::vector<int> final_tokens;
  std::vector<BlockCache<Scalar>> blocks;
  LayerNormCache<Scalar> final_ln;
  Matrix<Scalar> pooled;
};

/// Returns 1 x num_classes logits.
template <typename Scalar>
Matrix<Scalar> forward(const ModelConfig& cfg, const ParamStore<Scalar>& params, const ModelInput<Scalar>& input,
                       const TokenPlan& plan, ForwardCache<Scalar>* cache = nullptr);

template <typename Scalar>
void backward(const ModelConfig& cfg, const ParamStore<Scalar>& params, const ModelInput<Scalar>& input,
              const TokenPlan& plan, const ForwardCache<Scalar>& cache, const Matrix<Scalar>& d_logits,
              ParamStore<Scalar>& grads);

}  // namespace ovv

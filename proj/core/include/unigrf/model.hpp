#pragma once

// The unified generative model. A user history i_1, b_1, ..., i_n, b_n is
// embedded as 2n interleaved tokens and run through a causal pre-norm
// transformer. Outputs at item tokens feed the click-probability head
// (ranking); outputs at behavior tokens are next-item vectors scored by inner
// product against the item table (retrieval). Candidate items may be appended
// after the history: each attends to the whole valid history and to itself,
// never to other candidates, so one pass scores many candidates exactly as
// separate appended-sequence passes would.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "unigrf/checkpoint.hpp"
#include "unigrf/dataset.hpp"
#include "unigrf/tensor.hpp"

namespace unigrf::model {

using data::ItemIndex;
using ad::Tensor;

struct ModelConfig {
  std::size_t num_items = 0;  // |I|; the item table has |I|+1 rows
  std::size_t max_len = 200;  // n
  std::size_t dim = 64;
  std::size_t heads = 2;
  std::size_t layers = 2;
  std::size_t ffn_mult = 4;

  void validate() const;
  std::size_t head_dim() const { return dim / heads; }
  /// Interleaved positions: 2n history slots plus one appended-candidate slot.
  std::size_t num_positions() const { return 2 * max_len + 1; }
};

/// Closed form:
///   (|I|+1)d + 3d + (2n+1)d                      embeddings
/// + L[(4 + 2f)d^2 + (f + 5)d]                    blocks (attention 4d^2, two norms, f-wide FFN)
/// + 2d                                           final norm
/// + d*(d/2) + d/2 + d/2 + 1                      ranking head
std::size_t parameter_count(const ModelConfig& config);

// Behavior-table rows.
inline constexpr std::size_t kBehaviorPadding = 0;
inline constexpr std::size_t kBehaviorNoClick = 1;
inline constexpr std::size_t kBehaviorClick = 2;

template <typename T>
struct BlockParams {
  Tensor<T> norm1_gain, norm1_bias;
  std::vector<Tensor<T>> query, key, value, output;  // one per head
  Tensor<T> norm2_gain, norm2_bias;
  Tensor<T> ffn_in, ffn_in_bias, ffn_out, ffn_out_bias;
};

template <typename T>
class ModelParams {
 public:
  /// Random initialisation from `seed`.
  ModelParams(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }

  Tensor<T> item_embeddings;
  Tensor<T> behavior_embeddings;
  Tensor<T> positions;
  std::vector<BlockParams<T>> blocks;
  Tensor<T> final_gain, final_bias;
  Tensor<T> head_hidden, head_hidden_bias, head_out, head_out_bias;

  /// Every trainable tensor, in checkpoint order.
  std::vector<Tensor<T>>& parameters() { return all_; }
  const std::vector<Tensor<T>>& parameters() const { return all_; }
  std::size_t size() const;

  void zero_grads();

  /// Adds `model/...` and `head/...` records plus `meta/model_config`.
  void save_to(TensorArchive& archive) const;
  static ModelConfig config_from(const TensorArchive& archive);
  /// Overwrites values; names and shapes must match exactly.
  void load_from(const TensorArchive& archive);

 private:
  Tensor<T> make(const std::string& name, std::size_t rows, std::size_t cols, std::vector<T> values);

  ModelConfig config_;
  std::vector<Tensor<T>> all_;
};

/// Embedded token rows for one forward pass.
///
/// History rows cover sequence slots first_slot..n-1: row 2(k-first_slot) is
/// the item token of slot k, the following row its behavior token. Candidate
/// rows follow the history rows.
template <typename T>
struct EmbeddedSequence {
  Tensor<T> tokens;
  std::size_t length = 0;      // n
  std::size_t first_slot = 0;  // 0 when not trimmed
  std::size_t candidates = 0;
  std::vector<std::uint8_t> key_valid;  // per row

  std::size_t history_rows() const { return 2 * (length - first_slot); }
};

/// With `trim_padding`, leading padding slots are omitted entirely. Since
/// padding keys are masked, outputs at valid slots are unchanged by trimming.
template <typename T>
EmbeddedSequence<T> interleave_embed(std::span<const ItemIndex> items, std::span<const std::uint8_t> behaviors,
                                     std::span<const ItemIndex> candidates, const ModelParams<T>& params,
                                     bool trim_padding = true);

template <typename T>
struct TransformOutputs {
  Tensor<T> hidden;             // every token row after the final norm
  Tensor<T> behavior_latents;   // row r = output at the item token of slot first_slot + r
  Tensor<T> next_item_latents;  // row r = output at the behavior token of slot first_slot + r
  Tensor<T> candidate_latents;  // one row per appended candidate (undefined if none)
  std::size_t first_slot = 0;
  std::size_t length = 0;
};

/// Boolean attention mask (1 = blocked) for an embedded sequence; row-major rows x rows.
template <typename T>
std::vector<std::uint8_t> attention_mask(const EmbeddedSequence<T>& seq);

template <typename T>
TransformOutputs<T> forward_transform(const EmbeddedSequence<T>& seq, const ModelParams<T>& params);

/// Pre-sigmoid ranking-head output for each latent row (rows x 1).
template <typename T>
Tensor<T> ranking_logits(const Tensor<T>& latents, const ModelParams<T>& params);

/// sigmoid(f(latent)) for a single d-vector.
template <typename T>
T ranking_score(std::span<const T> latent, const ModelParams<T>& params);

/// Inner product of `latent` with every real item; entry j-1 scores item j.
template <typename T>
std::vector<T> retrieval_scores(std::span<const T> latent, const Tensor<T>& item_embeddings);

/// Click probability of `candidate` appended after the history's last slot.
template <typename T>
T target_aware_score(std::span<const ItemIndex> items, std::span<const std::uint8_t> behaviors,
                     ItemIndex candidate, const ModelParams<T>& params);

/// One forward over a history plus candidates, for evaluation and sample mining.
template <typename T>
struct UserScores {
  std::vector<T> next_item_latent;     // output at the final behavior token
  std::vector<T> candidate_ranking;    // click probability per candidate
};

template <typename T>
UserScores<T> score_user(std::span<const ItemIndex> items, std::span<const std::uint8_t> behaviors,
                         std::span<const ItemIndex> candidates, const ModelParams<T>& params);

template <typename T>
std::vector<T> row_values(const Tensor<T>& t, std::size_t row);

}  // namespace unigrf::model

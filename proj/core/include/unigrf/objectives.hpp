#pragma once

// Stage losses. Both are built as sums over contributing terms with a count,
// so the trainer can form batch means over every term in the batch.

#include <cstddef>
#include <span>
#include <vector>

#include "unigrf/model.hpp"

namespace unigrf::objectives {

using ad::Tensor;
using data::ItemIndex;

/// -log(exp(s+) / (exp(s+) + sum_j exp(s_j))) for one latent row against a
/// positive and a negative set, inner-product similarities, stable LSE.
template <typename T>
Tensor<T> sampled_softmax_loss(const Tensor<T>& latent, ItemIndex positive, std::span<const ItemIndex> negatives,
                               const Tensor<T>& item_embeddings);

/// Sum of terms plus how many terms were summed. `sum` is undefined when count == 0.
template <typename T>
struct LossSum {
  Tensor<T> sum;
  std::size_t count = 0;

  Tensor<T> mean() const;
};

/// Retrieval terms for one user: the next-item latent read after slot k-1 is
/// matched against the true item at slot k, for every valid slot after the
/// first. Negatives are shared across the user's positions.
template <typename T>
LossSum<T> retrieval_loss_terms(const model::TransformOutputs<T>& outputs, std::span<const ItemIndex> items,
                                std::span<const ItemIndex> negatives, const model::ModelParams<T>& params);

/// Ranking BCE terms over the user's valid slots, logits form. Appended
/// candidate rows (auxiliary positives) are added with label 1.
template <typename T>
LossSum<T> ranking_loss_terms(const model::TransformOutputs<T>& outputs, std::span<const ItemIndex> items,
                              std::span<const std::uint8_t> behaviors, const model::ModelParams<T>& params);

/// Sum over rows of softplus(z) - y z for an Rx1 logit tensor.
template <typename T>
Tensor<T> bce_with_logits_sum(const Tensor<T>& logits, std::span<const std::uint8_t> labels);

/// Mean forms of the above, for single-user use.
template <typename T>
Tensor<T> retrieval_loss_over_sequence(const model::TransformOutputs<T>& outputs, std::span<const ItemIndex> items,
                                       std::span<const ItemIndex> negatives, const model::ModelParams<T>& params);
template <typename T>
Tensor<T> ranking_bce_loss(const model::TransformOutputs<T>& outputs, std::span<const ItemIndex> items,
                           std::span<const std::uint8_t> behaviors, const model::ModelParams<T>& params);

/// Both stage losses of one user from a single forward pass. Auxiliary
/// positives are appended as candidate tokens.
template <typename T>
struct UserLoss {
  LossSum<T> retrieval;
  LossSum<T> ranking;
};

template <typename T>
UserLoss<T> user_loss(std::span<const ItemIndex> items, std::span<const std::uint8_t> behaviors,
                      std::span<const ItemIndex> negatives, std::span<const ItemIndex> auxiliary_positives,
                      const model::ModelParams<T>& params);

struct LossRecord {
  double loss_retrieval = 0.0;
  double loss_ranking = 0.0;
  std::size_t retrieval_terms = 0;
  std::size_t ranking_terms = 0;
};

}  // namespace unigrf::objectives

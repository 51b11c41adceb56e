#include "unigrf/objectives.hpp"

#include <algorithm>

#include "unigrf/errors.hpp"

namespace unigrf::objectives {

namespace {

std::vector<std::size_t> as_rows(std::span<const ItemIndex> items) {
  return std::vector<std::size_t>(items.begin(), items.end());
}

void check_disjoint(std::span<const ItemIndex> positives, std::span<const ItemIndex> negatives) {
  if (negatives.empty()) throw ContractError("sampled softmax: negative set is empty");
  std::vector<ItemIndex> sorted(negatives.begin(), negatives.end());
  std::sort(sorted.begin(), sorted.end());
  for (auto p : positives) {
    if (std::binary_search(sorted.begin(), sorted.end(), p))
      throw ContractError("sampled softmax: positive item " + std::to_string(p) + " is also a negative");
  }
}

// Per-row loss for latents H (K x d) with positives (K) and shared negatives.
template <typename T>
Tensor<T> softmax_terms(const Tensor<T>& latents, std::span<const ItemIndex> positives,
                        std::span<const ItemIndex> negatives, const Tensor<T>& item_embeddings) {
  auto pos_rows = ad::gather_rows(item_embeddings, as_rows(positives));
  auto pos_logit = ad::row_sum(ad::elementwise_mul(latents, pos_rows));
  auto neg_rows = ad::gather_rows(item_embeddings, as_rows(negatives));
  auto neg_logits = ad::matmul(latents, ad::transpose(neg_rows));
  auto lse = ad::log_sum_exp_row(ad::concat_cols<T>({pos_logit, neg_logits}));
  return ad::sub(lse, pos_logit);
}

}  // namespace

template <typename T>
Tensor<T> LossSum<T>::mean() const {
  if (count == 0) throw ContractError("loss mean over zero terms");
  return ad::scale(sum, T(1) / static_cast<T>(count));
}

template <typename T>
Tensor<T> sampled_softmax_loss(const Tensor<T>& latent, ItemIndex positive, std::span<const ItemIndex> negatives,
                               const Tensor<T>& item_embeddings) {
  if (latent.rows() != 1) throw ShapeError("sampled_softmax_loss: latent must be a single row");
  const ItemIndex pos[] = {positive};
  check_disjoint(pos, negatives);
  return softmax_terms(latent, pos, negatives, item_embeddings);
}

template <typename T>
LossSum<T> retrieval_loss_terms(const model::TransformOutputs<T>& outputs, std::span<const ItemIndex> items,
                                std::span<const ItemIndex> negatives, const model::ModelParams<T>& params) {
  std::vector<std::size_t> latent_rows;
  std::vector<ItemIndex> targets;
  bool seen_valid = false;
  for (std::size_t k = outputs.first_slot; k < items.size(); ++k) {
    if (items[k] == data::kPadding) continue;
    if (seen_valid) {
      latent_rows.push_back(k - 1 - outputs.first_slot);
      targets.push_back(items[k]);
    }
    seen_valid = true;
  }
  LossSum<T> out;
  if (targets.empty()) return out;
  check_disjoint(targets, negatives);
  auto latents = ad::gather_rows(outputs.next_item_latents, std::move(latent_rows));
  out.sum = ad::sum_all(softmax_terms(latents, targets, negatives, params.item_embeddings));
  out.count = targets.size();
  return out;
}

template <typename T>
Tensor<T> bce_with_logits_sum(const Tensor<T>& logits, std::span<const std::uint8_t> labels) {
  if (logits.cols() != 1 || logits.rows() != labels.size())
    throw ShapeError("bce_with_logits_sum: logits " + ad::shape_string(logits.shape()) + " vs " +
                     std::to_string(labels.size()) + " labels");
  std::vector<T> y(labels.begin(), labels.end());
  auto softplus = ad::log_sum_exp_row(ad::concat_cols<T>({Tensor<T>::zeros(logits.rows(), 1), logits}));
  auto yz = ad::elementwise_mul(logits, Tensor<T>::constant(logits.rows(), 1, std::move(y)));
  return ad::sum_all(ad::sub(softplus, yz));
}

template <typename T>
LossSum<T> ranking_loss_terms(const model::TransformOutputs<T>& outputs, std::span<const ItemIndex> items,
                              std::span<const std::uint8_t> behaviors, const model::ModelParams<T>& params) {
  std::vector<std::size_t> rows;
  std::vector<std::uint8_t> labels;
  for (std::size_t k = outputs.first_slot; k < items.size(); ++k) {
    if (items[k] == data::kPadding) continue;
    rows.push_back(k - outputs.first_slot);
    labels.push_back(behaviors[k] ? 1 : 0);
  }
  LossSum<T> out;
  std::vector<Tensor<T>> parts;
  if (!rows.empty()) parts.push_back(ad::gather_rows(outputs.behavior_latents, std::move(rows)));
  if (outputs.candidate_latents.defined()) {
    parts.push_back(outputs.candidate_latents);
    labels.insert(labels.end(), outputs.candidate_latents.rows(), 1);
  }
  if (parts.empty()) return out;
  auto latents = parts.size() == 1 ? parts.front() : ad::concat_rows(parts);
  out.sum = bce_with_logits_sum(model::ranking_logits(latents, params), labels);
  out.count = labels.size();
  return out;
}

template <typename T>
Tensor<T> retrieval_loss_over_sequence(const model::TransformOutputs<T>& outputs, std::span<const ItemIndex> items,
                                       std::span<const ItemIndex> negatives, const model::ModelParams<T>& params) {
  return retrieval_loss_terms(outputs, items, negatives, params).mean();
}

template <typename T>
Tensor<T> ranking_bce_loss(const model::TransformOutputs<T>& outputs, std::span<const ItemIndex> items,
                           std::span<const std::uint8_t> behaviors, const model::ModelParams<T>& params) {
  return ranking_loss_terms(outputs, items, behaviors, params).mean();
}

template <typename T>
UserLoss<T> user_loss(std::span<const ItemIndex> items, std::span<const std::uint8_t> behaviors,
                      std::span<const ItemIndex> negatives, std::span<const ItemIndex> auxiliary_positives,
                      const model::ModelParams<T>& params) {
  bool any_valid = false;
  for (auto i : items) any_valid = any_valid || i != data::kPadding;
  UserLoss<T> out;
  if (!any_valid) return out;
  const auto seq = model::interleave_embed(items, behaviors, auxiliary_positives, params);
  const auto outputs = model::forward_transform(seq, params);
  out.retrieval = retrieval_loss_terms(outputs, items, negatives, params);
  out.ranking = ranking_loss_terms(outputs, items, behaviors, params);
  return out;
}

#define UNIGRF_INSTANTIATE_OBJECTIVES(T)                                                                        \
  template struct LossSum<T>;                                                                                   \
  template Tensor<T> sampled_softmax_loss(const Tensor<T>&, ItemIndex, std::span<const ItemIndex>,             \
                                          const Tensor<T>&);                                                   \
  template LossSum<T> retrieval_loss_terms(const model::TransformOutputs<T>&, std::span<const ItemIndex>,      \
                                           std::span<const ItemIndex>, const model::ModelParams<T>&);          \
  template LossSum<T> ranking_loss_terms(const model::TransformOutputs<T>&, std::span<const ItemIndex>,        \
                                         std::span<const std::uint8_t>, const model::ModelParams<T>&);         \
  template Tensor<T> bce_with_logits_sum(const Tensor<T>&, std::span<const std::uint8_t>);                     \
  template Tensor<T> retrieval_loss_over_sequence(const model::TransformOutputs<T>&,                           \
                                                  std::span<const ItemIndex>, std::span<const ItemIndex>,      \
                                                  const model::ModelParams<T>&);                               \
  template Tensor<T> ranking_bce_loss(const model::TransformOutputs<T>&, std::span<const ItemIndex>,           \
                                      std::span<const std::uint8_t>, const model::ModelParams<T>&);            \
  template UserLoss<T> user_loss(std::span<const ItemIndex>, std::span<const std::uint8_t>,                    \
                                 std::span<const ItemIndex>, std::span<const ItemIndex>,                       \
                                 const model::ModelParams<T>&);

UNIGRF_INSTANTIATE_OBJECTIVES(float)
UNIGRF_INSTANTIATE_OBJECTIVES(double)

#undef UNIGRF_INSTANTIATE_OBJECTIVES

}  // namespace unigrf::objectives

#include "unigrf/model.hpp"

#include <cmath>
#include <limits>
#include <random>

#include "unigrf/errors.hpp"
#include "unigrf/rng.hpp"

namespace unigrf::model {

void ModelConfig::validate() const {
  if (num_items == 0) throw ConfigError("model: catalog is empty");
  if (max_len < 1) throw ConfigError("model: max_len must be positive");
  if (dim < 2 || heads == 0 || dim % heads != 0)
    throw ConfigError("model: dim " + std::to_string(dim) + " must be divisible by heads " + std::to_string(heads));
  if (dim % 2 != 0) throw ConfigError("model: dim must be even (ranking head width is d/2)");
  if (layers == 0) throw ConfigError("model: at least one layer is required");
  if (ffn_mult == 0) throw ConfigError("model: ffn_mult must be positive");
}

std::size_t parameter_count(const ModelConfig& c) {
  const std::size_t d = c.dim, f = c.ffn_mult;
  const std::size_t embeddings = (c.num_items + 1) * d + 3 * d + (2 * c.max_len + 1) * d;
  const std::size_t block = (4 + 2 * f) * d * d + (f + 5) * d;
  const std::size_t head = d * (d / 2) + d / 2 + d / 2 + 1;
  return embeddings + c.layers * block + 2 * d + head;
}

// --- parameters -------------------------------------------------------------

template <typename T>
Tensor<T> ModelParams<T>::make(const std::string& name, std::size_t rows, std::size_t cols, std::vector<T> values) {
  auto t = Tensor<T>::parameter(name, {rows, cols}, std::move(values));
  all_.push_back(t);
  return t;
}

template <typename T>
ModelParams<T>::ModelParams(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(splitmix64(seed ^ 0x6d6f64656cULL));
  const std::size_t d = config_.dim, dh = config_.head_dim(), f = config_.ffn_mult * d;
  auto normal = [&](std::size_t count, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<T> v(count);
    for (auto& x : v) x = static_cast<T>(dist(rng));
    return v;
  };
  auto fill = [](std::size_t count, double value) { return std::vector<T>(count, static_cast<T>(value)); };
  const double emb_std = 1.0 / std::sqrt(static_cast<double>(d));
  const double residual_scale = 1.0 / std::sqrt(2.0 * static_cast<double>(config_.layers));

  auto items = normal((config_.num_items + 1) * d, emb_std);
  std::fill(items.begin(), items.begin() + static_cast<std::ptrdiff_t>(d), T(0));  // padding row
  item_embeddings = make("model/item_embeddings", config_.num_items + 1, d, std::move(items));
  behavior_embeddings = make("model/behavior_embeddings", 3, d, normal(3 * d, emb_std));
  positions = make("model/positions", config_.num_positions(), d, normal(config_.num_positions() * d, emb_std));

  for (std::size_t l = 0; l < config_.layers; ++l) {
    const std::string p = "model/layer" + std::to_string(l) + "/";
    BlockParams<T> b;
    b.norm1_gain = make(p + "norm1/gain", 1, d, fill(d, 1.0));
    b.norm1_bias = make(p + "norm1/bias", 1, d, fill(d, 0.0));
    for (std::size_t h = 0; h < config_.heads; ++h) {
      const std::string hp = p + "attn/head" + std::to_string(h) + "/";
      b.query.push_back(make(hp + "query", d, dh, normal(d * dh, 1.0 / std::sqrt(double(d)))));
      b.key.push_back(make(hp + "key", d, dh, normal(d * dh, 1.0 / std::sqrt(double(d)))));
      b.value.push_back(make(hp + "value", d, dh, normal(d * dh, 1.0 / std::sqrt(double(d)))));
      b.output.push_back(make(hp + "output", dh, d, normal(dh * d, residual_scale / std::sqrt(double(d)))));
    }
    b.norm2_gain = make(p + "norm2/gain", 1, d, fill(d, 1.0));
    b.norm2_bias = make(p + "norm2/bias", 1, d, fill(d, 0.0));
    b.ffn_in = make(p + "ffn/in/weight", d, f, normal(d * f, 1.0 / std::sqrt(double(d))));
    b.ffn_in_bias = make(p + "ffn/in/bias", 1, f, fill(f, 0.0));
    b.ffn_out = make(p + "ffn/out/weight", f, d, normal(f * d, residual_scale / std::sqrt(double(f))));
    b.ffn_out_bias = make(p + "ffn/out/bias", 1, d, fill(d, 0.0));
    blocks.push_back(std::move(b));
  }
  final_gain = make("model/final_norm/gain", 1, d, fill(d, 1.0));
  final_bias = make("model/final_norm/bias", 1, d, fill(d, 0.0));
  head_hidden = make("head/hidden/weight", d, d / 2, normal(d * (d / 2), 1.0 / std::sqrt(double(d))));
  head_hidden_bias = make("head/hidden/bias", 1, d / 2, fill(d / 2, 0.0));
  head_out = make("head/out/weight", d / 2, 1, normal(d / 2, 1.0 / std::sqrt(double(d / 2))));
  head_out_bias = make("head/out/bias", 1, 1, fill(1, 0.0));
}

template <typename T>
std::size_t ModelParams<T>::size() const {
  std::size_t total = 0;
  for (const auto& p : all_) total += p.size();
  return total;
}

template <typename T>
void ModelParams<T>::zero_grads() {
  ad::zero_grads<T>(all_);
}

template <typename T>
void ModelParams<T>::save_to(TensorArchive& archive) const {
  archive.add("meta/model_config", {6},
              {double(config_.num_items), double(config_.max_len), double(config_.dim), double(config_.heads),
               double(config_.layers), double(config_.ffn_mult)});
  for (const auto& p : all_) {
    std::vector<double> values(p.values().begin(), p.values().end());
    archive.add(p.name(), {p.rows(), p.cols()}, std::move(values));
  }
}

template <typename T>
ModelConfig ModelParams<T>::config_from(const TensorArchive& archive) {
  const auto& v = archive.get("meta/model_config").values;
  if (v.size() != 6) throw DataError("checkpoint: meta/model_config must hold 6 values");
  ModelConfig c;
  c.num_items = static_cast<std::size_t>(v[0]);
  c.max_len = static_cast<std::size_t>(v[1]);
  c.dim = static_cast<std::size_t>(v[2]);
  c.heads = static_cast<std::size_t>(v[3]);
  c.layers = static_cast<std::size_t>(v[4]);
  c.ffn_mult = static_cast<std::size_t>(v[5]);
  return c;
}

template <typename T>
void ModelParams<T>::load_from(const TensorArchive& archive) {
  for (auto& p : all_) {
    const auto& rec = archive.get(p.name());
    if (rec.extents.size() != 2 || rec.extents[0] != p.rows() || rec.extents[1] != p.cols())
      throw DataError("checkpoint: shape mismatch for " + p.name());
    auto dst = p.mutable_values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(rec.values[i]);
  }
}

// --- embedding --------------------------------------------------------------

template <typename T>
EmbeddedSequence<T> interleave_embed(std::span<const ItemIndex> items, std::span<const std::uint8_t> behaviors,
                                     std::span<const ItemIndex> candidates, const ModelParams<T>& params,
                                     bool trim_padding) {
  const auto& cfg = params.config();
  const std::size_t n = items.size();
  if (n != cfg.max_len || behaviors.size() != n)
    throw ContractError("interleave_embed: expected " + std::to_string(cfg.max_len) + " slots, got " +
                        std::to_string(n) + " items / " + std::to_string(behaviors.size()) + " behaviors");
  for (auto i : items) {
    if (i > cfg.num_items) throw ContractError("interleave_embed: item index " + std::to_string(i) + " out of range");
  }
  for (auto c : candidates) {
    if (c == data::kPadding || c > cfg.num_items)
      throw ContractError("interleave_embed: invalid candidate index " + std::to_string(c));
  }

  std::size_t first = 0;
  if (trim_padding) {
    while (first < n && items[first] == data::kPadding) ++first;
    if (first == n) first = 0;  // nothing valid: keep the full padded layout
  }
  const std::size_t slots = n - first;
  const std::size_t cands = candidates.size();

  std::vector<std::size_t> item_rows, behavior_rows, order, position_rows;
  item_rows.reserve(slots + cands);
  behavior_rows.reserve(slots);
  for (std::size_t k = first; k < n; ++k) {
    item_rows.push_back(items[k]);
    if (items[k] == data::kPadding) {
      behavior_rows.push_back(kBehaviorPadding);
    } else {
      behavior_rows.push_back(behaviors[k] ? kBehaviorClick : kBehaviorNoClick);
    }
  }
  for (auto c : candidates) item_rows.push_back(c);

  // concat_rows(items, behaviors) has item rows [0, slots+cands) then behavior rows.
  const std::size_t behavior_base = slots + cands;
  EmbeddedSequence<T> out;
  out.length = n;
  out.first_slot = first;
  out.candidates = cands;
  for (std::size_t s = 0; s < slots; ++s) {
    const std::size_t k = first + s;
    const bool valid = items[k] != data::kPadding;
    order.push_back(s);
    order.push_back(behavior_base + s);
    position_rows.push_back(2 * k);
    position_rows.push_back(2 * k + 1);
    out.key_valid.push_back(valid ? 1 : 0);
    out.key_valid.push_back(valid ? 1 : 0);
  }
  for (std::size_t c = 0; c < cands; ++c) {
    order.push_back(slots + c);
    position_rows.push_back(2 * n);
    out.key_valid.push_back(1);
  }

  auto item_part = ad::gather_rows(params.item_embeddings, std::move(item_rows));
  auto behavior_part = ad::gather_rows(params.behavior_embeddings, std::move(behavior_rows));
  auto stacked = ad::concat_rows<T>({item_part, behavior_part});
  auto interleaved = ad::gather_rows(stacked, std::move(order));
  out.tokens = ad::add(interleaved, ad::gather_rows(params.positions, std::move(position_rows)));
  return out;
}

// --- transformer ------------------------------------------------------------

template <typename T>
std::vector<std::uint8_t> attention_mask(const EmbeddedSequence<T>& seq) {
  const std::size_t hist = seq.history_rows();
  const std::size_t rows = hist + seq.candidates;
  std::vector<std::uint8_t> blocked(rows * rows, 1);
  for (std::size_t i = 0; i < rows; ++i) {
    const bool candidate = i >= hist;
    for (std::size_t j = 0; j < rows; ++j) {
      bool allowed;
      if (j == i) {
        allowed = true;
      } else if (j >= hist) {
        allowed = false;  // nobody attends to candidates except themselves
      } else {
        allowed = seq.key_valid[j] && (candidate || j < i);
      }
      blocked[i * rows + j] = allowed ? 0 : 1;
    }
  }
  return blocked;
}

template <typename T>
TransformOutputs<T> forward_transform(const EmbeddedSequence<T>& seq, const ModelParams<T>& params) {
  const auto& cfg = params.config();
  const std::size_t hist = seq.history_rows();
  if (seq.tokens.rows() != hist + seq.candidates || seq.tokens.cols() != cfg.dim)
    throw ContractError("forward_transform: token tensor has shape " + ad::shape_string(seq.tokens.shape()));
  const auto mask = attention_mask(seq);
  const T inv_sqrt_dh = T(1) / std::sqrt(static_cast<T>(cfg.head_dim()));
  const T neg_inf = -std::numeric_limits<T>::infinity();

  Tensor<T> x = seq.tokens;
  for (const auto& b : params.blocks) {
    auto h = ad::layer_norm(x, b.norm1_gain, b.norm1_bias);
    Tensor<T> attended;
    for (std::size_t head = 0; head < cfg.heads; ++head) {
      auto q = ad::matmul(h, b.query[head]);
      auto k = ad::matmul(h, b.key[head]);
      auto v = ad::matmul(h, b.value[head]);
      auto scores = ad::scale(ad::matmul(q, ad::transpose(k)), inv_sqrt_dh);
      auto weights = ad::softmax_row(ad::masked_fill(scores, mask, neg_inf));
      auto projected = ad::matmul(ad::matmul(weights, v), b.output[head]);
      attended = attended.defined() ? ad::add(attended, projected) : projected;
    }
    x = ad::add(x, attended);
    auto h2 = ad::layer_norm(x, b.norm2_gain, b.norm2_bias);
    auto inner = ad::silu(ad::add(ad::matmul(h2, b.ffn_in), b.ffn_in_bias));
    x = ad::add(x, ad::add(ad::matmul(inner, b.ffn_out), b.ffn_out_bias));
  }
  x = ad::layer_norm(x, params.final_gain, params.final_bias);

  TransformOutputs<T> out;
  out.hidden = x;
  out.first_slot = seq.first_slot;
  out.length = seq.length;
  std::vector<std::size_t> item_rows, behavior_rows, candidate_rows;
  for (std::size_t r = 0; r < hist; r += 2) {
    item_rows.push_back(r);
    behavior_rows.push_back(r + 1);
  }
  for (std::size_t c = 0; c < seq.candidates; ++c) candidate_rows.push_back(hist + c);
  out.behavior_latents = ad::gather_rows(x, std::move(item_rows));
  out.next_item_latents = ad::gather_rows(x, std::move(behavior_rows));
  if (!candidate_rows.empty()) out.candidate_latents = ad::gather_rows(x, std::move(candidate_rows));
  return out;
}

// --- heads ------------------------------------------------------------------

template <typename T>
Tensor<T> ranking_logits(const Tensor<T>& latents, const ModelParams<T>& params) {
  auto hidden = ad::silu(ad::add(ad::matmul(latents, params.head_hidden), params.head_hidden_bias));
  return ad::add(ad::matmul(hidden, params.head_out), params.head_out_bias);
}

template <typename T>
T ranking_score(std::span<const T> latent, const ModelParams<T>& params) {
  if (latent.size() != params.config().dim) throw ContractError("ranking_score: latent has wrong width");
  auto row = Tensor<T>::constant(1, latent.size(), std::vector<T>(latent.begin(), latent.end()));
  return ad::sigmoid(ranking_logits(row, params)).item();
}

template <typename T>
std::vector<T> retrieval_scores(std::span<const T> latent, const Tensor<T>& item_embeddings) {
  const std::size_t d = item_embeddings.cols();
  if (latent.size() != d) throw ContractError("retrieval_scores: latent has wrong width");
  const auto table = item_embeddings.values();
  std::vector<T> scores(item_embeddings.rows() - 1);
  for (std::size_t j = 1; j < item_embeddings.rows(); ++j) {
    const T* row = table.data() + j * d;
    T s = T(0);
    for (std::size_t c = 0; c < d; ++c) s += latent[c] * row[c];
    scores[j - 1] = s;
  }
  return scores;
}

template <typename T>
std::vector<T> row_values(const Tensor<T>& t, std::size_t row) {
  const auto v = t.values();
  return std::vector<T>(v.begin() + static_cast<std::ptrdiff_t>(row * t.cols()),
                        v.begin() + static_cast<std::ptrdiff_t>((row + 1) * t.cols()));
}

template <typename T>
UserScores<T> score_user(std::span<const ItemIndex> items, std::span<const std::uint8_t> behaviors,
                         std::span<const ItemIndex> candidates, const ModelParams<T>& params) {
  const auto seq = interleave_embed(items, behaviors, candidates, params);
  const auto out = forward_transform(seq, params);
  UserScores<T> scores;
  scores.next_item_latent = row_values(out.next_item_latents, out.next_item_latents.rows() - 1);
  if (!candidates.empty()) {
    auto probs = ad::sigmoid(ranking_logits(out.candidate_latents, params));
    scores.candidate_ranking.assign(probs.values().begin(), probs.values().end());
  }
  return scores;
}

template <typename T>
T target_aware_score(std::span<const ItemIndex> items, std::span<const std::uint8_t> behaviors,
                     ItemIndex candidate, const ModelParams<T>& params) {
  if (candidate == data::kPadding) throw ContractError("target_aware_score: candidate is the padding index");
  bool any_valid = false;
  for (auto i : items) any_valid = any_valid || i != data::kPadding;
  if (!any_valid) throw ContractError("target_aware_score: history has no valid slot");
  const ItemIndex cands[] = {candidate};
  return score_user<T>(items, behaviors, cands, params).candidate_ranking.front();
}

#define UNIGRF_INSTANTIATE_MODEL(T)                                                                      \
  template class ModelParams<T>;                                                                         \
  template EmbeddedSequence<T> interleave_embed(std::span<const ItemIndex>, std::span<const std::uint8_t>, \
                                                std::span<const ItemIndex>, const ModelParams<T>&, bool); \
  template std::vector<std::uint8_t> attention_mask(const EmbeddedSequence<T>&);                          \
  template TransformOutputs<T> forward_transform(const EmbeddedSequence<T>&, const ModelParams<T>&);      \
  template Tensor<T> ranking_logits(const Tensor<T>&, const ModelParams<T>&);                             \
  template T ranking_score(std::span<const T>, const ModelParams<T>&);                                    \
  template std::vector<T> retrieval_scores(std::span<const T>, const Tensor<T>&);                         \
  template std::vector<T> row_values(const Tensor<T>&, std::size_t);                                      \
  template UserScores<T> score_user(std::span<const ItemIndex>, std::span<const std::uint8_t>,            \
                                    std::span<const ItemIndex>, const ModelParams<T>&);                   \
  template T target_aware_score(std::span<const ItemIndex>, std::span<const std::uint8_t>, ItemIndex,     \
                                const ModelParams<T>&);

UNIGRF_INSTANTIATE_MODEL(float)
UNIGRF_INSTANTIATE_MODEL(double)

#undef UNIGRF_INSTANTIATE_MODEL

}  // namespace unigrf::model

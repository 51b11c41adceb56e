#include "unigrf/enhancer.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>

#include "unigrf/errors.hpp"
#include "unigrf/log.hpp"

namespace unigrf::enhance {

void EnhancerConfig::validate() const {
  if (!(alpha > 0.0)) throw ConfigError("enhancer: alpha must be > 0");
  if (negatives == 0) throw ConfigError("enhancer: negative-set size must be positive");
  if (m > negatives)
    throw ConfigError("enhancer: m = " + std::to_string(m) + " exceeds negative-set size " + std::to_string(negatives));
}

double relative_score(double score_retrieval, double score_ranking) {
  return score_retrieval * (score_retrieval / score_ranking - 1.0);
}

template <typename T>
std::vector<ScoredNegative> score_negatives(std::span<const ItemIndex> items, std::span<const std::uint8_t> behaviors,
                                            std::span<const ItemIndex> negatives,
                                            const model::ModelParams<T>& params) {
  std::vector<ScoredNegative> out;
  if (negatives.empty()) return out;
  const auto scores = model::score_user(items, behaviors, negatives, params);
  const auto table = params.item_embeddings.values();
  const std::size_t d = params.config().dim;
  out.reserve(negatives.size());
  for (std::size_t j = 0; j < negatives.size(); ++j) {
    const T* row = table.data() + static_cast<std::size_t>(negatives[j]) * d;
    double dot = 0.0;
    for (std::size_t c = 0; c < d; ++c) dot += double(scores.next_item_latent[c]) * double(row[c]);
    ScoredNegative s;
    s.item = negatives[j];
    s.score_retrieval = 1.0 / (1.0 + std::exp(-dot));
    s.score_ranking = scores.candidate_ranking[j];
    s.relative_score = relative_score(s.score_retrieval, s.score_ranking);
    out.push_back(s);
  }
  return out;
}

std::vector<ItemIndex> refresh_hard_set(std::span<const ScoredNegative> scored, std::size_t m) {
  if (m > scored.size())
    throw ContractError("refresh_hard_set: m = " + std::to_string(m) + " exceeds " + std::to_string(scored.size()) +
                        " scored items");
  std::vector<std::size_t> order(scored.size());
  std::iota(order.begin(), order.end(), 0);
  auto better = [&](std::size_t x, std::size_t y) {
    if (scored[x].relative_score != scored[y].relative_score) return scored[x].relative_score > scored[y].relative_score;
    return scored[x].item < scored[y].item;
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m), order.end(), better);
  std::vector<ItemIndex> hard;
  hard.reserve(m);
  for (std::size_t i = 0; i < m; ++i) hard.push_back(scored[order[i]].item);
  std::sort(hard.begin(), hard.end());
  return hard;
}

std::vector<ItemIndex> detect_potential_positives(std::span<const ScoredNegative> scored, double alpha) {
  std::vector<ItemIndex> flagged;
  for (const auto& s : scored) {
    if (s.score_ranking > alpha) flagged.push_back(s.item);
  }
  return flagged;
}

namespace {

std::vector<ItemIndex> sorted_union(std::span<const ItemIndex> a, std::span<const ItemIndex> b) {
  std::vector<ItemIndex> out;
  out.reserve(a.size() + b.size());
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

std::vector<ItemIndex> sorted_copy(std::span<const ItemIndex> a) {
  std::vector<ItemIndex> v(a.begin(), a.end());
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

}  // namespace

std::vector<ItemIndex> compose_next_epoch_negatives(std::span<const ItemIndex> hard,
                                                    std::span<const ItemIndex> potential,
                                                    std::span<const ItemIndex> positives, std::size_t num_items,
                                                    std::size_t size, Rng& rng) {
  const auto h = sorted_copy(hard);
  if (size < h.size())
    throw ContractError("compose_next_epoch_negatives: size " + std::to_string(size) + " below |H| = " +
                        std::to_string(h.size()));
  const auto exclude = sorted_union(sorted_union(sorted_copy(positives), sorted_copy(potential)), h);
  auto fresh = data::sample_uniform_negatives(num_items, exclude, size - h.size(), rng);
  std::vector<ItemIndex> out = h;
  out.insert(out.end(), fresh.begin(), fresh.end());
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<AuxiliaryExample> apply_relabels(std::uint32_t user, std::span<const ItemIndex> potential) {
  std::vector<AuxiliaryExample> out;
  out.reserve(potential.size());
  for (auto p : potential) out.push_back({user, p, 1});
  return out;
}

std::string_view action_name(AuditAction a) {
  switch (a) {
    case AuditAction::hard:
      return "hard";
    case AuditAction::relabel:
      return "relabel";
    case AuditAction::drop:
      return "drop";
  }
  return "drop";
}

std::vector<ItemIndex> negative_exclusions(std::span<const ItemIndex> observed, std::span<const ItemIndex> potential) {
  return sorted_union(observed, potential);
}

UserSamples initial_samples(std::span<const ItemIndex> observed, std::size_t num_items, std::size_t size, Rng& rng) {
  UserSamples s;
  s.negatives = data::sample_uniform_negatives(num_items, observed, size, rng);
  std::sort(s.negatives.begin(), s.negatives.end());
  return s;
}

template <typename T>
RefreshCounts refresh_user(const data::UserSequence& seq, std::span<const ItemIndex> observed,
                           UserSamples& samples, const EnhancerConfig& config, const model::ModelParams<T>& params,
                           Rng& rng, std::vector<AuditRow>* audit) {
  const std::size_t num_items = params.config().num_items;
  RefreshCounts counts;
  if (config.disabled() || seq.num_valid() == 0) {
    samples.hard.clear();
    samples.negatives =
        compose_next_epoch_negatives({}, samples.potential, observed, num_items, config.negatives, rng);
    return counts;
  }

  const auto scored = score_negatives<T>(seq.items, seq.behaviors, samples.negatives, params);
  auto flagged = detect_potential_positives(scored, config.alpha);

  // Every relabel shrinks the sampling pool for good. Admit only as many as
  // keep I \ (observed, P) at least |S| large, most confident first.
  const std::size_t pool = num_items - negative_exclusions(observed, samples.potential).size();
  const std::size_t capacity = pool > config.negatives ? pool - config.negatives : 0;
  if (flagged.size() > capacity) {
    std::vector<ScoredNegative> ranked;
    for (const auto& s : scored)
      if (s.score_ranking > config.alpha) ranked.push_back(s);
    std::sort(ranked.begin(), ranked.end(), [](const ScoredNegative& a, const ScoredNegative& b) {
      return a.score_ranking != b.score_ranking ? a.score_ranking > b.score_ranking : a.item < b.item;
    });
    flagged.clear();
    for (std::size_t i = 0; i < capacity; ++i) flagged.push_back(ranked[i].item);
    warn("enhancer: user " + std::to_string(seq.user) + " relabel capped at " + std::to_string(capacity) +
         " to keep the negative pool feasible");
  }
  const auto flagged_sorted = sorted_copy(flagged);

  std::vector<ScoredNegative> remaining;
  remaining.reserve(scored.size());
  for (const auto& s : scored) {
    if (!std::binary_search(flagged_sorted.begin(), flagged_sorted.end(), s.item)) remaining.push_back(s);
  }
  const std::size_t m = std::min(config.m, remaining.size());
  samples.hard = refresh_hard_set(remaining, m);

  const std::size_t before = samples.potential.size();
  samples.potential = sorted_union(samples.potential, flagged_sorted);
  counts.potential_new = samples.potential.size() - before;
  counts.hard = samples.hard.size();

  if (audit) {
    for (const auto& s : scored) {
      AuditAction action = AuditAction::drop;
      if (std::binary_search(flagged_sorted.begin(), flagged_sorted.end(), s.item)) {
        action = AuditAction::relabel;
      } else if (std::binary_search(samples.hard.begin(), samples.hard.end(), s.item)) {
        action = AuditAction::hard;
      }
      audit->push_back({seq.user, s, action});
    }
  }

  samples.negatives =
      compose_next_epoch_negatives(samples.hard, samples.potential, observed, num_items, config.negatives, rng);
  return counts;
}

void write_audit_csv(const std::filesystem::path& path, std::span<const AuditRow> rows) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write enhancer audit file " + path.string());
  out << "user,item,score_retrieval,score_ranking,relative_score,action\n";
  out << std::setprecision(17);
  for (const auto& r : rows) {
    out << r.user << ',' << r.scored.item << ',' << r.scored.score_retrieval << ',' << r.scored.score_ranking << ','
        << r.scored.relative_score << ',' << action_name(r.action) << '\n';
  }
}

template std::vector<ScoredNegative> score_negatives(std::span<const ItemIndex>, std::span<const std::uint8_t>,
                                                     std::span<const ItemIndex>, const model::ModelParams<float>&);
template std::vector<ScoredNegative> score_negatives(std::span<const ItemIndex>, std::span<const std::uint8_t>,
                                                     std::span<const ItemIndex>, const model::ModelParams<double>&);
template RefreshCounts refresh_user(const data::UserSequence&, std::span<const ItemIndex>, UserSamples&,
                                    const EnhancerConfig&, const model::ModelParams<float>&, Rng&,
                                    std::vector<AuditRow>*);
template RefreshCounts refresh_user(const data::UserSequence&, std::span<const ItemIndex>, UserSamples&,
                                    const EnhancerConfig&, const model::ModelParams<double>&, Rng&,
                                    std::vector<AuditRow>*);

}  // namespace unigrf::enhance

#pragma once

// Ranking-driven sample enhancement. At each epoch boundary a user's negative
// set is scored by both heads. Negatives the ranker confidently likes become
// relabelled positives (P); among the rest, those retrieval ranks much higher
// than the ranker are kept as hard negatives (H) for the next epoch.

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <span>
#include <string_view>
#include <vector>

#include "unigrf/dataset.hpp"
#include "unigrf/model.hpp"
#include "unigrf/rng.hpp"

namespace unigrf::enhance {

using data::ItemIndex;

struct ScoredNegative {
  ItemIndex item = data::kPadding;
  double score_retrieval = 0.0;
  double score_ranking = 0.0;
  double relative_score = 0.0;
};

struct EnhancerConfig {
  std::size_t m = 5;
  double alpha = 0.85;
  std::size_t negatives = 128;  // |S|

  void validate() const;
  /// No hard negatives and no relabelling possible: scoring is skipped.
  bool disabled() const { return m == 0 && alpha >= 1.0; }
};

/// retrieval * (retrieval / ranking - 1).
double relative_score(double score_retrieval, double score_ranking);

/// Scores S with one forward over the history plus every negative appended as a candidate.
template <typename T>
std::vector<ScoredNegative> score_negatives(std::span<const ItemIndex> items, std::span<const std::uint8_t> behaviors,
                                            std::span<const ItemIndex> negatives, const model::ModelParams<T>& params);

/// Items of the m largest relative scores, ties to the smaller index, sorted by item.
std::vector<ItemIndex> refresh_hard_set(std::span<const ScoredNegative> scored, std::size_t m);

/// Items with ranking score strictly above alpha, in input order.
std::vector<ItemIndex> detect_potential_positives(std::span<const ScoredNegative> scored, double alpha);

/// H plus uniform draws from I \ (positives, P, H) up to `size`, sorted.
std::vector<ItemIndex> compose_next_epoch_negatives(std::span<const ItemIndex> hard,
                                                    std::span<const ItemIndex> potential,
                                                    std::span<const ItemIndex> positives, std::size_t num_items,
                                                    std::size_t size, Rng& rng);

/// One target-aware ranking example with label 1 per relabelled item.
struct AuxiliaryExample {
  std::uint32_t user = 0;
  ItemIndex candidate = data::kPadding;
  std::uint8_t label = 1;
};

std::vector<AuxiliaryExample> apply_relabels(std::uint32_t user, std::span<const ItemIndex> potential);

/// Per-user sets carried between epochs.
struct UserSamples {
  std::vector<ItemIndex> negatives;  // S, sorted
  std::vector<ItemIndex> hard;       // H, sorted
  std::vector<ItemIndex> potential;  // P, sorted, persistent
};

enum class AuditAction { hard, relabel, drop };
std::string_view action_name(AuditAction a);

struct AuditRow {
  std::uint32_t user = 0;
  ScoredNegative scored;
  AuditAction action = AuditAction::drop;
};

struct RefreshCounts {
  std::size_t hard = 0;
  std::size_t potential_new = 0;
};

/// Exclusion set for negative sampling: observed items merged with P (both sorted).
std::vector<ItemIndex> negative_exclusions(std::span<const ItemIndex> observed, std::span<const ItemIndex> potential);

/// Initial S for a user: a uniform draw excluding observed items.
UserSamples initial_samples(std::span<const ItemIndex> observed, std::size_t num_items, std::size_t size, Rng& rng);

/// Epoch-boundary refresh of one user's sets. With a disabled config the
/// negatives are simply redrawn uniformly.
template <typename T>
RefreshCounts refresh_user(const data::UserSequence& seq, std::span<const ItemIndex> observed,
                           UserSamples& samples, const EnhancerConfig& config, const model::ModelParams<T>& params,
                           Rng& rng, std::vector<AuditRow>* audit = nullptr);

void write_audit_csv(const std::filesystem::path& path, std::span<const AuditRow> rows);

}  // namespace unigrf::enhance

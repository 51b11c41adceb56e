#pragma once

// Full-catalog retrieval metrics and target-aware ranking AUC.

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "unigrf/dataset.hpp"
#include "unigrf/model.hpp"

namespace unigrf::eval {

/// 1 + number of entries strictly greater than scores[target]. Ties count in the target's favour.
template <typename T>
std::size_t rank_of(std::span<const T> scores, std::size_t target);

struct TopKMetrics {
  std::map<std::size_t, double> ndcg;
  std::map<std::size_t, double> hr;
  double mrr = 0.0;
};

TopKMetrics topk_metrics(std::span<const std::size_t> ranks, std::span<const std::size_t> ks);

/// Mann-Whitney AUC via mid-rank rank sums. Absent when only one class is present.
std::optional<double> auc(std::span<const double> scores, std::span<const std::uint8_t> labels);

inline constexpr const char* kAucPopulation =
    "one target-aware click probability per user for the held-out item, labelled by its binarized rating";
inline constexpr const char* kTiePolicy = "retrieval rank counts strictly greater scores; AUC uses mid-ranks";

struct EvalReport {
  std::string split;
  std::vector<std::size_t> ks;
  std::map<std::size_t, double> ndcg;
  std::map<std::size_t, double> hr;
  double mrr = 0.0;
  std::optional<double> auc;
  std::size_t users = 0;
  std::size_t num_items = 0;

  std::string to_json() const;
  void save(const std::filesystem::path& path) const;
};

struct UserResult {
  std::uint32_t user = 0;
  data::ItemIndex target = data::kPadding;
  std::size_t rank = 0;
  double ranking_score = 0.0;
  std::uint8_t label = 0;
};

struct EvalOptions {
  std::vector<std::size_t> ks{10, 50};
  std::size_t workers = 1;
  std::vector<UserResult>* per_user = nullptr;  // filled in user order when set
};

/// Rank of the held-out item in the full catalog plus its target-aware score, for one user.
template <typename T>
UserResult evaluate_user(const data::UserSequence& seq, data::Split split, const model::ModelParams<T>& params);

template <typename T>
EvalReport evaluate(const model::ModelParams<T>& params, const data::Dataset& dataset, data::Split split,
                    const EvalOptions& options = {});

void write_rank_dump(const std::filesystem::path& path, std::span<const UserResult> rows);

}  // namespace unigrf::eval

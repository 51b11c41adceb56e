#include "unigrf/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <thread>

#include <json.hpp>

#include "unigrf/errors.hpp"
#include "unigrf/log.hpp"

namespace unigrf::eval {

template <typename T>
std::size_t rank_of(std::span<const T> scores, std::size_t target) {
  if (target >= scores.size()) throw ContractError("rank_of: target index out of range");
  const T ref = scores[target];
  std::size_t greater = 0;
  for (const T s : scores) greater += s > ref ? 1 : 0;
  return greater + 1;
}

TopKMetrics topk_metrics(std::span<const std::size_t> ranks, std::span<const std::size_t> ks) {
  if (ranks.empty()) throw ContractError("topk_metrics: no ranks");
  TopKMetrics m;
  const double n = static_cast<double>(ranks.size());
  for (auto k : ks) {
    double hits = 0.0, gain = 0.0;
    for (auto r : ranks) {
      if (r == 0) throw ContractError("topk_metrics: ranks start at 1");
      if (r <= k) {
        hits += 1.0;
        gain += 1.0 / std::log2(static_cast<double>(r) + 1.0);
      }
    }
    m.hr[k] = hits / n;
    m.ndcg[k] = gain / n;
  }
  double rr = 0.0;
  for (auto r : ranks) rr += 1.0 / static_cast<double>(r);
  m.mrr = rr / n;
  return m;
}

std::optional<double> auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw ContractError("auc: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::size_t pos = 0;
  for (auto l : labels) pos += l ? 1 : 0;
  const std::size_t neg = n - pos;
  for (double s : scores)
    if (std::isnan(s)) throw NumericError("auc: NaN score");
  if (pos == 0 || neg == 0) {
    warn("AUC undefined: only one class present among " + std::to_string(n) + " examples");
    return std::nullopt;
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t t = i; t < j; ++t) rank_sum += labels[order[t]] ? mid : 0.0;
    i = j;
  }
  const double p = static_cast<double>(pos), q = static_cast<double>(neg);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * q);
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["split"] = split;
  j["users"] = users;
  j["num_items"] = num_items;
  j["ks"] = ks;
  for (auto k : ks) {
    j["ndcg@" + std::to_string(k)] = ndcg.at(k);
    j["hr@" + std::to_string(k)] = hr.at(k);
  }
  j["mrr"] = mrr;
  if (auc) {
    j["auc"] = *auc;
  } else {
    j["auc"] = nullptr;
  }
  j["metadata"] = {{"auc_population", kAucPopulation},
                   {"tie_policy", kTiePolicy},
                   {"candidates", "entire catalog, seen items included"}};
  return j.dump(2) + "\n";
}

void EvalReport::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write report " + path.string());
  out << to_json();
}

template <typename T>
UserResult evaluate_user(const data::UserSequence& seq, data::Split split, const model::ModelParams<T>& params) {
  const auto ec = data::eval_case(seq, split);
  const data::ItemIndex candidate[] = {ec.target};
  const auto scores = model::score_user<T>(ec.items, ec.behaviors, candidate, params);
  const auto catalog = model::retrieval_scores<T>(scores.next_item_latent, params.item_embeddings);
  // A NaN target score would otherwise rank first, since nothing compares greater.
  const bool finite = std::isfinite(static_cast<double>(scores.candidate_ranking.front())) &&
                      std::all_of(catalog.begin(), catalog.end(), [](T v) { return std::isfinite(static_cast<double>(v)); });
  if (!finite) throw NumericError("non-finite score while evaluating user " + std::to_string(seq.user));
  UserResult r;
  r.user = seq.user;
  r.target = ec.target;
  r.rank = rank_of<T>(catalog, ec.target - 1);
  r.ranking_score = scores.candidate_ranking.front();
  r.label = ec.label;
  return r;
}

template <typename T>
EvalReport evaluate(const model::ModelParams<T>& params, const data::Dataset& dataset, data::Split split,
                    const EvalOptions& options) {
  if (params.config().num_items != dataset.catalog.num_items())
    throw DataError("catalog mismatch: model has " + std::to_string(params.config().num_items) +
                    " items, dataset has " + std::to_string(dataset.catalog.num_items()));
  if (params.config().max_len != dataset.max_len)
    throw DataError("sequence length mismatch: model n = " + std::to_string(params.config().max_len) +
                    ", dataset n = " + std::to_string(dataset.max_len));
  const auto& seqs = dataset.sequences;
  if (seqs.empty()) throw DataError("evaluate: dataset has no users");
  std::vector<UserResult> results(seqs.size());
  const std::size_t workers = std::max<std::size_t>(1, std::min(options.workers, seqs.size()));
  auto run = [&](std::size_t shard) {
    for (std::size_t u = shard; u < seqs.size(); u += workers) results[u] = evaluate_user(seqs[u], split, params);
  };
  if (workers == 1) {
    run(0);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          run(w);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  std::vector<std::size_t> ranks;
  std::vector<double> scores;
  std::vector<std::uint8_t> labels;
  for (const auto& r : results) {
    ranks.push_back(r.rank);
    scores.push_back(r.ranking_score);
    labels.push_back(r.label);
  }
  const auto m = topk_metrics(ranks, options.ks);
  EvalReport report;
  report.split = split == data::Split::valid ? "valid" : "test";
  report.ks = options.ks;
  report.ndcg = m.ndcg;
  report.hr = m.hr;
  report.mrr = m.mrr;
  report.auc = auc(scores, labels);
  report.users = results.size();
  report.num_items = dataset.catalog.num_items();
  if (options.per_user) *options.per_user = std::move(results);
  return report;
}

void write_rank_dump(const std::filesystem::path& path, std::span<const UserResult> rows) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write rank dump " + path.string());
  out << "user,target,rank,ranking_score,label\n" << std::setprecision(17);
  for (const auto& r : rows)
    out << r.user << ',' << r.target << ',' << r.rank << ',' << r.ranking_score << ',' << int(r.label) << '\n';
}

template std::size_t rank_of(std::span<const float>, std::size_t);
template std::size_t rank_of(std::span<const double>, std::size_t);
template UserResult evaluate_user(const data::UserSequence&, data::Split, const model::ModelParams<float>&);
template UserResult evaluate_user(const data::UserSequence&, data::Split, const model::ModelParams<double>&);
template EvalReport evaluate(const model::ModelParams<float>&, const data::Dataset&, data::Split, const EvalOptions&);
template EvalReport evaluate(const model::ModelParams<double>&, const data::Dataset&, data::Split,
                             const EvalOptions&);

}  // namespace unigrf::eval

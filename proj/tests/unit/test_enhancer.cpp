#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <cmath>
#include <random>
#include <set>

#include "tempdir.hpp"
#include "unigrf/enhancer.hpp"
#include "unigrf/errors.hpp"
#include "unigrf/log.hpp"
#include "unigrf/objectives.hpp"

using namespace unigrf;
using namespace unigrf::enhance;
using data::ItemIndex;

namespace {

ScoredNegative make(ItemIndex item, double retrieval, double ranking) {
  return {item, retrieval, ranking, relative_score(retrieval, ranking)};
}

std::vector<ItemIndex> brute_top_m(const std::vector<ScoredNegative>& scored, std::size_t m) {
  auto v = scored;
  std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) {
    if (a.relative_score != b.relative_score) return a.relative_score > b.relative_score;
    return a.item < b.item;
  });
  std::vector<ItemIndex> out;
  for (std::size_t i = 0; i < m; ++i) out.push_back(v[i].item);
  std::sort(out.begin(), out.end());
  return out;
}

model::ModelConfig small_model(std::size_t items, std::size_t n) {
  model::ModelConfig c;
  c.num_items = items;
  c.max_len = n;
  c.dim = 8;
  c.heads = 2;
  c.layers = 1;
  c.ffn_mult = 2;
  return c;
}

void randomize(model::ModelParams<double>& p, std::uint64_t seed, double scale) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, scale);
  for (auto& t : p.parameters())
    for (auto& v : t.mutable_values()) v = normal(rng);
}

bool is_sorted_unique(const std::vector<ItemIndex>& v) {
  return std::adjacent_find(v.begin(), v.end(), std::greater_equal<>()) == v.end();
}

}  // namespace

TEST_CASE("relative score examples") {
  CHECK(relative_score(0.9, 0.3) == 1.8);
  // The real value of 0.2 * (0.25 - 1) on the double inputs sits halfway
  // between two doubles; the correctly rounded result is one ulp from -0.15.
  const double got = relative_score(0.2, 0.8);
  CHECK(got == 0.2 * -0.75);
  CHECK(std::abs(got - -0.15) <= std::nextafter(0.15, 1.0) - 0.15);
  CHECK(relative_score(0.37, 0.37) == 0.0);
}

TEST_CASE("relative score sign structure") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> unit(1e-6, 1.0 - 1e-6);
  for (int i = 0; i < 10000; ++i) {
    const double r = unit(rng), k = unit(rng);
    const double s = relative_score(r, k);
    CHECK((s > 0.0) == (r > k));
    CHECK((s < 0.0) == (r < k));
    CHECK(s == r * (r / k - 1.0));
  }
}

TEST_CASE("hard set examples") {
  std::vector<ScoredNegative> s{make(4, 0.9, 0.3), make(2, 0.2, 0.8), make(9, 0.5, 0.5)};
  CHECK(refresh_hard_set(s, 0).empty());
  CHECK(refresh_hard_set(s, 3) == std::vector<ItemIndex>{2, 4, 9});
  CHECK(refresh_hard_set(s, 1) == std::vector<ItemIndex>{4});
  CHECK_THROWS_AS(refresh_hard_set(s, 4), ContractError);
}

TEST_CASE("hard set equals brute-force sort with ties") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t size = 1 + rng() % 32;
    std::vector<ItemIndex> pool(100);
    std::iota(pool.begin(), pool.end(), 1);
    std::shuffle(pool.begin(), pool.end(), rng);
    std::vector<ScoredNegative> scored;
    const bool coarse = trial % 2 == 0;  // coarse scores force ties
    for (std::size_t i = 0; i < size; ++i) {
      const double r = coarse ? 0.1 * (1 + rng() % 4) : std::uniform_real_distribution<double>(0.01, 0.99)(rng);
      const double k = coarse ? 0.1 * (1 + rng() % 4) : std::uniform_real_distribution<double>(0.01, 0.99)(rng);
      scored.push_back(make(pool[i], r, k));
    }
    const std::size_t m = rng() % (size + 1);
    CHECK(refresh_hard_set(scored, m) == brute_top_m(scored, m));
  }
}

TEST_CASE("potential positives by threshold") {
  std::vector<ScoredNegative> s{make(1, 0.5, 0.91), make(2, 0.5, 0.40), make(3, 0.5, 0.86)};
  CHECK(detect_potential_positives(s, 0.85) == std::vector<ItemIndex>{1, 3});
  CHECK(detect_potential_positives(s, std::nextafter(1.0, 0.0)).empty());
  std::vector<ScoredNegative> all{make(5, 0.1, 0.9), make(6, 0.3, 0.9)};
  CHECK(detect_potential_positives(all, 0.5) == std::vector<ItemIndex>{5, 6});
  CHECK(detect_potential_positives(all, 0.9).empty());  // strictly above
}

TEST_CASE("compose next-epoch negatives") {
  SUBCASE("constraint example over 1000 draws") {
    const std::vector<ItemIndex> pos{1, 2}, p{3}, h{4, 5};
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
      Rng rng(seed);
      const auto s = compose_next_epoch_negatives(h, p, pos, 20, 6, rng);
      REQUIRE(s.size() == 6);
      CHECK(is_sorted_unique(s));
      CHECK(std::binary_search(s.begin(), s.end(), 4));
      CHECK(std::binary_search(s.begin(), s.end(), 5));
      for (ItemIndex banned : {1u, 2u, 3u, 0u}) CHECK_FALSE(std::binary_search(s.begin(), s.end(), banned));
      for (auto i : s) CHECK(i <= 20);
    }
  }
  SUBCASE("|H| = size returns H exactly") {
    Rng rng(1);
    const std::vector<ItemIndex> h{7, 3, 9};
    CHECK(compose_next_epoch_negatives(h, {}, {}, 20, 3, rng) == std::vector<ItemIndex>{3, 7, 9});
  }
  SUBCASE("size below |H| and exhausted catalog are contract errors") {
    Rng rng(1);
    const std::vector<ItemIndex> h{1, 2, 3}, pos{4, 5, 6, 7};
    CHECK_THROWS_AS(compose_next_epoch_negatives(h, {}, {}, 20, 2, rng), ContractError);
    CHECK_THROWS_AS(compose_next_epoch_negatives(h, {}, pos, 8, 5, rng), ContractError);
  }
}

TEST_CASE("relabels yield one auxiliary example each") {
  CHECK(apply_relabels(3, {}).empty());
  const std::vector<ItemIndex> p{4, 8, 9};
  const auto aux = apply_relabels(3, p);
  REQUIRE(aux.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(aux[i].user == 3);
    CHECK(aux[i].candidate == p[i]);
    CHECK(aux[i].label == 1);
  }
}

TEST_CASE("score_negatives uses both heads at the final position") {
  auto c = small_model(15, 6);
  model::ModelParams<double> params(c, 1);
  randomize(params, 5, 0.6);
  const std::vector<ItemIndex> items{0, 0, 3, 7, 1, 12}, negs{2, 5, 9, 14};
  const std::vector<std::uint8_t> beh{0, 0, 1, 0, 1, 1};
  const auto scored = score_negatives<double>(items, beh, negs, params);
  REQUIRE(scored.size() == negs.size());
  const auto latent = model::score_user<double>(items, beh, {}, params).next_item_latent;
  for (std::size_t i = 0; i < negs.size(); ++i) {
    CHECK(scored[i].item == negs[i]);
    double dot = 0.0;
    for (std::size_t col = 0; col < c.dim; ++col) dot += latent[col] * params.item_embeddings.at(negs[i], col);
    CHECK(std::abs(scored[i].score_retrieval - 1.0 / (1.0 + std::exp(-dot))) < 1e-12);
    CHECK(std::abs(scored[i].score_ranking - model::target_aware_score<double>(items, beh, negs[i], params)) < 1e-12);
    CHECK(scored[i].relative_score == relative_score(scored[i].score_retrieval, scored[i].score_ranking));
    CHECK(scored[i].score_ranking > 0.0);
    CHECK(scored[i].score_ranking < 1.0);
  }
  CHECK(score_negatives<double>(items, beh, {}, params).empty());
}

TEST_CASE("auxiliary example loss equals BCE of the recomputed target-aware score") {
  auto c = small_model(15, 6);
  model::ModelParams<double> params(c, 1);
  randomize(params, 6, 0.6);
  const std::vector<ItemIndex> items{0, 4, 3, 7, 1, 12}, negs{2};
  const std::vector<std::uint8_t> beh{0, 1, 1, 0, 1, 1};
  const std::vector<ItemIndex> p{5, 9, 11};
  const auto aux = apply_relabels(0, p);
  std::vector<ItemIndex> cands;
  for (const auto& a : aux) cands.push_back(a.candidate);
  const auto base = objectives::user_loss<double>(items, beh, negs, {}, params);
  double prev = base.ranking.sum.item();
  for (std::size_t i = 0; i < cands.size(); ++i) {
    const std::vector<ItemIndex> upto(cands.begin(), cands.begin() + i + 1);
    const double sum = objectives::user_loss<double>(items, beh, negs, upto, params).ranking.sum.item();
    const double expected = -std::log(model::target_aware_score<double>(items, beh, cands[i], params));
    CHECK(std::abs((sum - prev) - expected) < 1e-10);
    prev = sum;
  }
}

TEST_CASE("refresh keeps the set invariants across epochs") {
  warnings_enabled() = false;  // the small catalog hits the relabel cap
  const std::size_t items = 40, n = 8;
  auto c = small_model(items, n);
  model::ModelParams<double> params(c, 2);
  randomize(params, 7, 1.2);  // wide scores so both H and P are exercised
  EnhancerConfig cfg;
  cfg.m = 3;
  cfg.alpha = 0.7;
  cfg.negatives = 10;
  std::mt19937_64 gen(3);
  std::size_t relabelled = 0, hard_total = 0;
  for (int user = 0; user < 30; ++user) {
    data::UserSequence seq;
    seq.user = static_cast<std::uint32_t>(user);
    seq.items.assign(n, 0);
    seq.behaviors.assign(n, 0);
    seq.valid_mask.assign(n, 0);
    std::set<ItemIndex> obs;
    for (std::size_t k = n - 1 - gen() % 5; k < n; ++k) {
      seq.items[k] = static_cast<ItemIndex>(1 + gen() % items);
      seq.behaviors[k] = static_cast<std::uint8_t>(gen() % 2);
      seq.valid_mask[k] = 1;
      obs.insert(seq.items[k]);
    }
    const std::vector<ItemIndex> observed(obs.begin(), obs.end());
    Rng rng = user_stream(11, user, 0);
    auto samples = initial_samples(observed, items, cfg.negatives, rng);
    for (int epoch = 1; epoch <= 6; ++epoch) {
      const auto previous = samples.negatives;
      const auto previous_p = samples.potential;
      Rng er = user_stream(11, user, epoch);
      std::vector<AuditRow> audit;
      const auto counts = refresh_user<double>(seq, observed, samples, cfg, params, er, &audit);
      hard_total += counts.hard;
      relabelled += counts.potential_new;
      CHECK(samples.negatives.size() == cfg.negatives);
      CHECK(is_sorted_unique(samples.negatives));
      CHECK(is_sorted_unique(samples.hard));
      CHECK(is_sorted_unique(samples.potential));
      CHECK(samples.hard.size() <= cfg.m);
      CHECK(counts.potential_new == samples.potential.size() - previous_p.size());
      CHECK(std::includes(samples.potential.begin(), samples.potential.end(), previous_p.begin(), previous_p.end()));
      for (auto h : samples.hard) {
        CHECK(std::binary_search(previous.begin(), previous.end(), h));          // H from previous S
        CHECK(std::binary_search(samples.negatives.begin(), samples.negatives.end(), h));  // and kept in S'
      }
      for (auto i : samples.negatives) {
        CHECK(i != data::kPadding);
        CHECK_FALSE(obs.count(i));
        CHECK_FALSE(std::binary_search(samples.potential.begin(), samples.potential.end(), i));
      }
      REQUIRE(audit.size() == previous.size());
      for (const auto& row : audit) {
        const bool in_h = std::binary_search(samples.hard.begin(), samples.hard.end(), row.scored.item);
        CHECK((row.action == AuditAction::hard) == in_h);
        const bool in_p = std::binary_search(samples.potential.begin(), samples.potential.end(), row.scored.item);
        CHECK((row.action == AuditAction::relabel) == in_p);
        if (in_p) CHECK(row.scored.score_ranking > cfg.alpha);
      }
    }
  }
  CHECK(relabelled > 0);
  CHECK(hard_total > 0);
  warnings_enabled() = true;
}

TEST_CASE("relabelling stops before the negative pool runs dry") {
  warnings_enabled() = false;
  const std::size_t items = 16;
  auto c = small_model(items, 4);
  model::ModelParams<double> params(c, 2);
  // A large positive output bias makes every candidate look liked.
  params.head_out_bias.mutable_values()[0] = 50.0;
  EnhancerConfig cfg;
  cfg.m = 2;
  cfg.alpha = 0.5;
  cfg.negatives = 6;
  data::UserSequence seq;
  seq.items = {0, 1, 2, 3};
  seq.behaviors = {0, 1, 0, 1};
  seq.valid_mask = {0, 1, 1, 1};
  const std::vector<ItemIndex> observed{1, 2, 3, 4, 5};
  Rng rng(4);
  auto samples = initial_samples(observed, items, cfg.negatives, rng);
  for (int epoch = 0; epoch < 5; ++epoch) {
    refresh_user<double>(seq, observed, samples, cfg, params, rng);
    CHECK(items - negative_exclusions(observed, samples.potential).size() >= cfg.negatives);
    CHECK(samples.negatives.size() == cfg.negatives);
  }
  CHECK(samples.potential.size() == items - observed.size() - cfg.negatives);
  warnings_enabled() = true;
}

TEST_CASE("disabled enhancer resamples uniformly") {
  EnhancerConfig cfg;
  cfg.m = 0;
  cfg.alpha = 1.0;
  cfg.negatives = 10;
  CHECK(cfg.disabled());
  auto c = small_model(60, 4);
  model::ModelParams<double> params(c, 3);
  data::UserSequence seq;
  seq.items = {0, 1, 2, 3};
  seq.behaviors = {0, 1, 1, 0};
  seq.valid_mask = {0, 1, 1, 1};
  std::vector<ItemIndex> observed{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  Rng rng(1);
  auto samples = initial_samples(observed, 60, cfg.negatives, rng);
  std::vector<std::size_t> counts(50, 0);
  for (int epoch = 0; epoch < 5000; ++epoch) {
    refresh_user<double>(seq, observed, samples, cfg, params, rng);
    CHECK(samples.hard.empty());
    CHECK(samples.potential.empty());
    for (auto i : samples.negatives) ++counts[i - 11];
  }
  double chi = 0.0;
  const double expected = 5000.0 * 10.0 / 50.0;
  for (auto k : counts) chi += (double(k) - expected) * (double(k) - expected) / expected;
  CHECK(chi < 85.3505646086);  // chi-square upper 0.001 quantile, 49 dof
}

TEST_CASE("config validation and audit file") {
  EnhancerConfig cfg;
  cfg.negatives = 4;
  cfg.m = 5;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.m = 4;
  CHECK_NOTHROW(cfg.validate());
  cfg.alpha = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  testing::TempDir dir("audit");
  const std::vector<AuditRow> rows{{2, make(5, 0.9, 0.3), AuditAction::hard},
                                   {2, make(6, 0.5, 0.95), AuditAction::relabel}};
  write_audit_csv(dir / "audit.csv", rows);
  const auto text = testing::read_text(dir / "audit.csv");
  CHECK(text.rfind("user,item,score_retrieval,score_ranking,relative_score,action\n", 0) == 0);
  CHECK(text.find("2,5,0.90000000000000002,0.29999999999999999,1.8") != std::string::npos);
  CHECK(text.find(",relabel\n") != std::string::npos);
}

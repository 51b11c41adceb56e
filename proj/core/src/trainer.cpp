#include "unigrf/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <type_traits>

#include <json.hpp>

#include "unigrf/checkpoint.hpp"
#include "unigrf/errors.hpp"
#include "unigrf/log.hpp"
#include "unigrf/objectives.hpp"
#include "unigrf/rng.hpp"

namespace unigrf::train {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

// --- config -------------------------------------------------------------------

namespace {

// Visits every field with its JSON key. `hashed` is false for fields that do not affect results.
template <typename Config, typename F>
void visit_fields(Config& c, F&& f) {
  f("data_dir", c.data_dir, true);
  f("raw_path", c.raw_path, true);
  f("raw_format", c.raw_format, true);
  f("auto_prepare", c.auto_prepare, true);
  f("max_len", c.max_len, true);
  f("dim", c.dim, true);
  f("heads", c.heads, true);
  f("layers", c.layers, true);
  f("ffn_mult", c.ffn_mult, true);
  f("negatives", c.negatives, true);
  f("m", c.m, true);
  f("alpha", c.alpha, true);
  f("temperature", c.temperature, true);
  f("lambda_a", c.lambda_a, true);
  f("lambda_b", c.lambda_b, true);
  f("ema_decay", c.ema_decay, true);
  f("weighter_granularity", c.weighter_granularity, true);
  f("fixed_weights", c.fixed_weights, true);
  f("auto_scale", c.auto_scale, true);
  f("lr", c.lr, true);
  f("beta1", c.beta1, true);
  f("beta2", c.beta2, true);
  f("adam_eps", c.adam_eps, true);
  f("batch_size", c.batch_size, true);
  f("max_epochs", c.max_epochs, true);
  f("patience", c.patience, true);
  f("seed", c.seed, true);
  f("precision", c.precision, true);
  f("output_dir", c.output_dir, false);
  f("eval_workers", c.eval_workers, false);
  f("record_timing", c.record_timing, false);
  f("enhancer_audit", c.enhancer_audit, false);
}

json config_json(const RunConfig& c, bool hashed_only) {
  json j;
  visit_fields(const_cast<RunConfig&>(c), [&](const char* key, auto& value, bool hashed) {
    if (!hashed_only || hashed) j[key] = value;
  });
  return j;
}

std::string number(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string optional_number(const std::optional<double>& v) { return v ? number(*v) : std::string(); }

void write_text(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
    out.flush();
    if (!out) throw DataError("write failed for " + path.string() + " (disk full?)");
  }
  fs::rename(tmp, path);
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace

void RunConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string(name) + " must be positive");
  };
  if (max_len < 3) throw ConfigError("max_len must be at least 3");
  positive(dim, "dim");
  positive(heads, "heads");
  positive(layers, "layers");
  positive(ffn_mult, "ffn_mult");
  positive(batch_size, "batch_size");
  positive(max_epochs, "max_epochs");
  positive(eval_workers, "eval_workers");
  if (dim % heads != 0) throw ConfigError("dim must be divisible by heads");
  if (dim % 2 != 0) throw ConfigError("dim must be even");
  if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("Adam betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be > 0");
  data::parse_format(raw_format);
  numeric_width();
  enhancer_config().validate();
  weighter_config().validate();
}

Precision RunConfig::numeric_width() const {
  if (precision == "f64" || precision == "float64" || precision == "64") return Precision::f64;
  if (precision == "f32" || precision == "float32" || precision == "32") return Precision::f32;
  throw ConfigError("precision must be f32 or f64, got '" + precision + "'");
}

model::ModelConfig RunConfig::model_config(std::size_t num_items) const {
  model::ModelConfig c;
  c.num_items = num_items;
  c.max_len = max_len;
  c.dim = dim;
  c.heads = heads;
  c.layers = layers;
  c.ffn_mult = ffn_mult;
  return c;
}

enhance::EnhancerConfig RunConfig::enhancer_config() const { return {m, alpha, negatives}; }

weighting::WeighterConfig RunConfig::weighter_config() const {
  weighting::WeighterConfig w;
  w.temperature = temperature;
  w.lambda_a = lambda_a;
  w.lambda_b = lambda_b;
  w.ema_decay = ema_decay;
  w.granularity = weighting::parse_granularity(weighter_granularity);
  w.fixed = fixed_weights;
  w.auto_scale = auto_scale;
  return w;
}

ad::AdamOptions RunConfig::adam_options() const { return {lr, beta1, beta2, adam_eps}; }

std::string RunConfig::to_json() const { return config_json(*this, false).dump(2) + "\n"; }

RunConfig RunConfig::from_json(std::string_view text, const RunConfig& base) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  RunConfig c = base;
  std::vector<std::string> known;
  visit_fields(c, [&](const char* key, auto& value, bool) {
    known.emplace_back(key);
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(value);
    } catch (const json::exception&) {
      throw ConfigError(std::string("config field '") + key + "' has the wrong type");
    }
  });
  for (const auto& item : j.items()) {
    if (std::find(known.begin(), known.end(), item.key()) == known.end())
      throw ConfigError("unknown config field '" + item.key() + "'");
  }
  return c;
}

RunConfig RunConfig::load(const fs::path& path, const RunConfig& base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str(), base);
}

std::vector<std::string> RunConfig::field_names() {
  RunConfig c;
  std::vector<std::string> names;
  visit_fields(c, [&](const char* key, auto&, bool) { names.emplace_back(key); });
  return names;
}

void RunConfig::set(std::string_view key, std::string_view value) {
  bool found = false;
  const std::string text(value);
  visit_fields(*this, [&](const char* name, auto& field, bool) {
    if (key != name) return;
    found = true;
    using F = std::decay_t<decltype(field)>;
    auto fail = [&] { throw ConfigError("invalid value '" + text + "' for " + name); };
    if constexpr (std::is_same_v<F, std::string>) {
      field = text;
    } else if constexpr (std::is_same_v<F, bool>) {
      if (text == "true" || text == "1") {
        field = true;
      } else if (text == "false" || text == "0") {
        field = false;
      } else {
        fail();
      }
    } else if constexpr (std::is_floating_point_v<F>) {
      std::size_t used = 0;
      try {
        field = std::stod(text, &used);
      } catch (const std::exception&) {
        fail();
      }
      if (used != text.size()) fail();
    } else {
      F parsed{};
      auto res = std::from_chars(text.data(), text.data() + text.size(), parsed);
      if (res.ec != std::errc() || res.ptr != text.data() + text.size()) fail();
      field = parsed;
    }
  });
  if (!found) throw ConfigError("unknown config field '" + std::string(key) + "'");
}

RunConfig RunConfig::from_json(std::string_view text) { return from_json(text, RunConfig{}); }
RunConfig RunConfig::load(const fs::path& path) { return load(path, RunConfig{}); }

std::string RunConfig::hash() const {
  const auto text = config_json(*this, true).dump();
  return data::fnv1a_hex({reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

fs::path resolve_output(const std::string& dir) {
  fs::path p(dir);
  if (p.is_relative()) {
    if (const char* root = std::getenv("UNIGRF_OUTPUT_ROOT"); root && *root) return fs::path(root) / p;
  }
  return p;
}

// --- data ---------------------------------------------------------------------

PrepareResult prepare_data(const fs::path& raw, data::InputFormat format, std::size_t n, const fs::path& out_dir,
                           std::uint64_t seed) {
  if (!fs::exists(raw)) throw DataError("raw input not found: " + raw.string());
  const auto source_hash = data::file_hash(raw);
  if (fs::exists(out_dir / "manifest.json") && fs::exists(out_dir / "sequences.bin")) {
    try {
      auto existing = data::read_manifest(out_dir);
      if (existing.source_hash == source_hash && existing.n == n &&
          existing.source_format == data::format_name(format) && existing.seed == seed)
        return {existing, true};
    } catch (const DataError&) {
      // unreadable manifest: rebuild below
    }
  }
  auto parsed = data::parse_interactions(raw, format);
  auto dataset = data::build_dataset(parsed, n);
  data::StoreManifest manifest;
  manifest.seed = seed;
  manifest.source_path = raw.string();
  manifest.source_format = std::string(data::format_name(format));
  manifest.source_hash = source_hash;
  manifest.malformed_rows = parsed.report.malformed;
  return {data::save_processed(dataset, out_dir, manifest), false};
}

data::Dataset load_dataset(const RunConfig& config) {
  if (config.data_dir.empty()) throw ConfigError("data_dir is not set");
  const fs::path dir(config.data_dir);
  if (!fs::exists(dir / "manifest.json")) {
    if (!config.auto_prepare || config.raw_path.empty())
      throw DataError("no processed store in " + dir.string() + " (run prepare, or set auto_prepare and raw_path)");
    prepare_data(config.raw_path, data::parse_format(config.raw_format), config.max_len, dir);
  }
  auto ds = data::load_processed(dir);
  if (ds.max_len != config.max_len)
    throw ConfigError("store in " + dir.string() + " was prepared with n = " + std::to_string(ds.max_len) +
                      " but the config asks for max_len = " + std::to_string(config.max_len));
  return ds;
}

// --- training -----------------------------------------------------------------

namespace {

constexpr std::uint64_t kShuffleSalt = 0x73687566666c65ULL;

template <typename T>
TensorArchive checkpoint_archive(const model::ModelParams<T>& params, std::size_t epoch) {
  TensorArchive ar;
  params.save_to(ar);
  ar.add("meta/precision", {1}, {double(sizeof(T) * 8)});
  ar.add("meta/epoch", {1}, {double(epoch)});
  return ar;
}

struct StageTotals {
  double retrieval = 0.0;
  double ranking = 0.0;
  std::size_t retrieval_terms = 0;
  std::size_t ranking_terms = 0;

  double mean_retrieval() const { return retrieval_terms ? retrieval / double(retrieval_terms) : 0.0; }
  double mean_ranking() const { return ranking_terms ? ranking / double(ranking_terms) : 0.0; }
  void add(const StageTotals& o) {
    retrieval += o.retrieval;
    ranking += o.ranking;
    retrieval_terms += o.retrieval_terms;
    ranking_terms += o.ranking_terms;
  }
};

template <typename T>
void accumulate(StageTotals& totals, const objectives::UserLoss<T>& ul) {
  if (ul.retrieval.count) {
    totals.retrieval += double(ul.retrieval.sum.item());
    totals.retrieval_terms += ul.retrieval.count;
  }
  if (ul.ranking.count) {
    totals.ranking += double(ul.ranking.sum.item());
    totals.ranking_terms += ul.ranking.count;
  }
}

class CsvLog {
 public:
  CsvLog(const fs::path& path, const char* header) : out_(path, std::ios::trunc) {
    if (!out_) throw DataError("cannot write " + path.string());
    out_ << header << '\n';
    out_.flush();
  }
  void row(const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) out_ << (i ? "," : "") << fields[i];
    out_ << '\n';
    out_.flush();
    if (!out_) throw DataError("metrics write failed (disk full?)");
  }

 private:
  std::ofstream out_;
};

template <typename T>
TrainResult train_impl(const RunConfig& cfg, const data::Dataset& ds) {
  using Clock = std::chrono::steady_clock;
  TrainResult result;
  result.run_dir = resolve_output(cfg.output_dir);
  fs::create_directories(result.run_dir);
  const auto& dir = result.run_dir;

  const auto mcfg = cfg.model_config(ds.catalog.num_items());
  mcfg.validate();
  const auto ecfg = cfg.enhancer_config();
  if (ds.sequences.empty()) throw DataError("dataset has no users");
  if (ds.max_len != cfg.max_len)
    throw ConfigError("dataset n = " + std::to_string(ds.max_len) + " differs from max_len = " +
                      std::to_string(cfg.max_len));

  model::ModelParams<T> params(mcfg, cfg.seed);
  result.param_count = model::parameter_count(mcfg);
  ad::Adam<T> adam(cfg.adam_options());
  weighting::WeighterState weighter(cfg.weighter_config());
  const bool per_step = weighter.config.granularity == weighting::Granularity::step;
  const std::string config_hash = cfg.hash();

  json manifest;
  manifest["config"] = config_json(cfg, false);
  manifest["config_hash"] = config_hash;
  manifest["param_count"] = result.param_count;
  manifest["dataset"] = {{"users", ds.sequences.size()},
                         {"items", ds.catalog.num_items()},
                         {"n", ds.max_len},
                         {"interactions", ds.stats.interactions}};
  manifest["weighter"] = {{"lambda_a", weighter.config.lambda_a},
                          {"lambda_b", weighter.config.lambda_b},
                          {"lambda_b_effective", weighter.config.lambda_b},
                          {"lambda_switch_step", nullptr}};
  write_text(dir / "run_manifest.json", manifest.dump(2) + "\n");

  const std::size_t users = ds.sequences.size();
  std::vector<enhance::UserSamples> samples(users);
  for (std::size_t u = 0; u < users; ++u) {
    auto rng = user_stream(cfg.seed, u, 0);
    samples[u] = enhance::initial_samples(ds.observed[u], mcfg.num_items, ecfg.negatives, rng);
  }

  CsvLog metrics(dir / "metrics.csv", kMetricsHeader);
  CsvLog trace(dir / "weighter_trace.csv", kTraceHeader);
  auto trace_row = [&](std::size_t t, double la, double lb) {
    trace.row({std::to_string(t), number(la), number(lb), number(weighter.rates.a), number(weighter.rates.b),
               number(weighter.weights.a), number(weighter.weights.b)});
  };

  // Epoch-0 checkpoint, so a run that diverges in its first epoch still leaves a usable model.
  checkpoint_archive(params, 0).save(dir / "last.ckpt");

  std::vector<std::size_t> order(users);
  std::iota(order.begin(), order.end(), 0);
  std::size_t epochs_since_best = 0;
  std::size_t step = 0;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto started = Clock::now();
    Rng shuffle_rng(splitmix64(cfg.seed ^ kShuffleSalt) + epoch);
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    StageTotals epoch_totals;
    for (std::size_t begin = 0; begin < users; begin += cfg.batch_size) {
      const std::size_t end = std::min(users, begin + cfg.batch_size);
      auto forward = [&](std::size_t u) {
        const auto& seq = ds.sequences[u];
        return objectives::user_loss<T>(seq.items, seq.behaviors, samples[u].negatives, samples[u].potential, params);
      };

      // The weights of this step depend on this step's losses, so adaptive
      // per-step weighting needs the batch losses before any backward pass.
      StageTotals batch;
      const bool adaptive_step = per_step && !weighter.config.fixed;
      if (adaptive_step) {
        for (std::size_t i = begin; i < end; ++i) accumulate(batch, forward(order[i]));
        if (!std::isfinite(batch.mean_retrieval()) || !std::isfinite(batch.mean_ranking()))
          throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", step " + std::to_string(step));
        weighting::advance(batch.mean_retrieval(), batch.mean_ranking(), weighter);
      }
      const double w_a = weighter.weights.a, w_b = weighter.weights.b;

      // Per-user backward with seeds that reproduce the batch-mean combined loss.
      StageTotals counts;
      for (std::size_t i = begin; i < end; ++i) {
        const std::size_t valid = ds.sequences[order[i]].num_valid();
        counts.retrieval_terms += valid > 1 ? valid - 1 : 0;
        counts.ranking_terms += valid > 0 ? valid + samples[order[i]].potential.size() : 0;
      }
      params.zero_grads();
      StageTotals observed;
      for (std::size_t i = begin; i < end; ++i) {
        auto ul = forward(order[i]);
        accumulate(observed, ul);
        ad::Tensor<T> total;
        if (ul.retrieval.count && w_a != 0.0)
          total = ad::scale(ul.retrieval.sum, static_cast<T>(w_a / double(counts.retrieval_terms)));
        if (ul.ranking.count && w_b != 0.0) {
          auto part = ad::scale(ul.ranking.sum, static_cast<T>(w_b / double(counts.ranking_terms)));
          total = total.defined() ? ad::add(total, part) : part;
        }
        if (total.defined()) ad::backward(total);
      }
      if (!std::isfinite(observed.mean_retrieval()) || !std::isfinite(observed.mean_ranking()))
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", step " + std::to_string(step));
      adam.step(params.parameters());

      if (per_step) {
        if (!adaptive_step) weighting::advance(observed.mean_retrieval(), observed.mean_ranking(), weighter);
        trace_row(step, observed.mean_retrieval(), observed.mean_ranking());
      }
      epoch_totals.add(observed);
      ++step;
    }
    result.optimizer_steps = step;

    if (!per_step) {
      weighting::advance(epoch_totals.mean_retrieval(), epoch_totals.mean_ranking(), weighter);
      trace_row(epoch, epoch_totals.mean_retrieval(), epoch_totals.mean_ranking());
    }
    if (epoch == 1 && weighter.config.auto_scale && epoch_totals.mean_ranking() > 0.0) {
      weighter.config.lambda_b = epoch_totals.mean_retrieval() / epoch_totals.mean_ranking();
      weighter.weights = weighting::compute_weights(weighter.rates, weighter.config.temperature,
                                                    weighter.config.lambda_a, weighter.config.lambda_b);
      manifest["weighter"]["lambda_b_effective"] = weighter.config.lambda_b;
      manifest["weighter"]["lambda_switch_step"] = per_step ? step : epoch + 1;
      write_text(dir / "run_manifest.json", manifest.dump(2) + "\n");
    }

    // Epoch-boundary sample refresh with the parameters frozen.
    std::size_t hard_total = 0, potential_new = 0, potential_total = 0;
    std::vector<enhance::AuditRow> audit;
    for (std::size_t u = 0; u < users; ++u) {
      auto rng = user_stream(cfg.seed, u, epoch);
      const auto c = enhance::refresh_user<T>(ds.sequences[u], ds.observed[u], samples[u], ecfg, params, rng,
                                               cfg.enhancer_audit ? &audit : nullptr);
      hard_total += c.hard;
      potential_new += c.potential_new;
      potential_total += samples[u].potential.size();
    }
    ++result.enhancer_refreshes;
    if (cfg.enhancer_audit) enhance::write_audit_csv(dir / ("enhancer_audit_epoch" + std::to_string(epoch) + ".csv"), audit);

    eval::EvalOptions eopt;
    eopt.workers = cfg.eval_workers;
    const auto val = eval::evaluate(params, ds, data::Split::valid, eopt);

    EpochLog log;
    log.epoch = epoch;
    log.loss_retrieval = epoch_totals.mean_retrieval();
    log.loss_ranking = epoch_totals.mean_ranking();
    log.r_a = weighter.rates.a;
    log.r_b = weighter.rates.b;
    log.w_a = weighter.weights.a;
    log.w_b = weighter.weights.b;
    log.val_ndcg10 = val.ndcg.at(10);
    log.val_hr10 = val.hr.at(10);
    log.val_mrr = val.mrr;
    log.val_auc = val.auc;
    log.hard_set_size = hard_total;
    log.potential_set_new = potential_new;
    log.potential_set_total = potential_total;

    const auto archive = checkpoint_archive(params, epoch);
    archive.save(dir / "last.ckpt");
    if (log.val_ndcg10 > result.best_val_ndcg10) {
      result.best_val_ndcg10 = log.val_ndcg10;
      result.best_epoch = epoch;
      epochs_since_best = 0;
      archive.save(dir / "best.ckpt");
      json best = {{"epoch", epoch},
                   {"val_ndcg10", log.val_ndcg10},
                   {"val_hr10", log.val_hr10},
                   {"val_mrr", log.val_mrr},
                   {"val_auc", log.val_auc ? json(*log.val_auc) : json(nullptr)},
                   {"config_hash", config_hash}};
      write_text(dir / "best.json", best.dump(2) + "\n");
    } else {
      ++epochs_since_best;
    }

    log.wall_seconds =
        cfg.record_timing ? std::chrono::duration<double>(Clock::now() - started).count() : 0.0;
    metrics.row({std::to_string(log.epoch), number(log.loss_retrieval), number(log.loss_ranking), number(log.r_a),
                 number(log.r_b), number(log.w_a), number(log.w_b), number(log.val_ndcg10), number(log.val_hr10),
                 number(log.val_mrr), optional_number(log.val_auc), std::to_string(log.hard_set_size),
                 std::to_string(log.potential_set_new), number(log.wall_seconds)});
    result.epochs.push_back(log);

    if (epochs_since_best >= cfg.patience) {
      result.stopped_early = epoch < cfg.max_epochs;
      break;
    }
  }
  return result;
}

}  // namespace

TrainResult run_training(const RunConfig& config, const data::Dataset& dataset) {
  config.validate();
  if (config.numeric_width() == Precision::f32) return train_impl<float>(config, dataset);
  return train_impl<double>(config, dataset);
}

namespace {

template <typename T>
eval::EvalReport eval_impl(const TensorArchive& ar, const data::Dataset& ds, data::Split split,
                           const eval::EvalOptions& options) {
  const auto cfg = model::ModelParams<T>::config_from(ar);
  if (cfg.num_items != ds.catalog.num_items())
    throw DataError("catalog mismatch: checkpoint has " + std::to_string(cfg.num_items) + " items, dataset has " +
                    std::to_string(ds.catalog.num_items()));
  model::ModelParams<T> params(cfg, 0);
  params.load_from(ar);
  return eval::evaluate(params, ds, split, options);
}

}  // namespace

eval::EvalReport run_eval(const fs::path& checkpoint, const data::Dataset& dataset, data::Split split,
                          const eval::EvalOptions& options) {
  const auto ar = TensorArchive::load(checkpoint);
  const bool single = ar.contains("meta/precision") && ar.get("meta/precision").values.at(0) == 32.0;
  return single ? eval_impl<float>(ar, dataset, split, options) : eval_impl<double>(ar, dataset, split, options);
}

// --- sweep ------------------------------------------------------------------------

SweepAxis parse_axis(std::string_view name) {
  if (name == "m") return SweepAxis::m;
  if (name == "layers") return SweepAxis::layers;
  throw ConfigError("sweep axis must be 'm' or 'layers', got '" + std::string(name) + "'");
}

std::string_view axis_name(SweepAxis axis) { return axis == SweepAxis::m ? "m" : "layers"; }

std::vector<SweepRow> run_sweep(const RunConfig& config, const data::Dataset& dataset, SweepAxis axis,
                                const std::vector<std::size_t>& values) {
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  const fs::path root = resolve_output(config.output_dir);
  fs::create_directories(root);
  std::vector<SweepRow> rows;
  for (auto v : values) {
    SweepRow row;
    row.value = std::to_string(v);
    RunConfig sub = config;
    if (axis == SweepAxis::m) {
      sub.m = v;
    } else {
      sub.layers = v;
    }
    sub.output_dir = (root / (std::string(axis_name(axis)) + "=" + row.value)).string();
    try {
      row.param_count = model::parameter_count(sub.model_config(dataset.catalog.num_items()));
      const auto res = run_training(sub, dataset);
      row.epochs_run = res.epochs.size();
      row.best_epoch = res.best_epoch;
      eval::EvalOptions eopt;
      eopt.workers = sub.eval_workers;
      const auto val = run_eval(res.run_dir / "best.ckpt", dataset, data::Split::valid, eopt);
      const auto test = run_eval(res.run_dir / "best.ckpt", dataset, data::Split::test, eopt);
      val.save(res.run_dir / "best_valid.json");
      test.save(res.run_dir / "best_test.json");
      row.val_ndcg10 = val.ndcg.at(10);
      row.val_hr10 = val.hr.at(10);
      row.val_mrr = val.mrr;
      row.val_auc = val.auc;
      row.test_ndcg10 = test.ndcg.at(10);
      row.test_hr10 = test.hr.at(10);
      row.test_mrr = test.mrr;
      row.test_auc = test.auc;
      row.ok = true;
    } catch (const std::exception& e) {
      row.error = e.what();
      warn("sweep " + std::string(axis_name(axis)) + "=" + row.value + " failed: " + row.error);
    }
    rows.push_back(row);
  }

  std::ostringstream out;
  out << "axis,value,status,param_count,epochs_run,best_epoch,val_ndcg10,val_hr10,val_mrr,val_auc,test_ndcg10,"
         "test_hr10,test_mrr,test_auc,error\n";
  for (const auto& r : rows) {
    std::string err = r.error;
    std::replace(err.begin(), err.end(), ',', ';');
    std::replace(err.begin(), err.end(), '\n', ' ');
    out << axis_name(axis) << ',' << r.value << ',' << (r.ok ? "ok" : "failed") << ',' << r.param_count << ','
        << r.epochs_run << ',' << r.best_epoch << ',' << number(r.val_ndcg10) << ',' << number(r.val_hr10) << ','
        << number(r.val_mrr) << ',' << optional_number(r.val_auc) << ',' << number(r.test_ndcg10) << ','
        << number(r.test_hr10) << ',' << number(r.test_mrr) << ',' << optional_number(r.test_auc) << ',' << err
        << '\n';
  }
  write_text(root / "summary.csv", out.str());
  return rows;
}

// --- report -------------------------------------------------------------------------

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw DataError("missing column " + name);
    return static_cast<std::size_t>(it - header.begin());
  }
};

Table read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  Table t;
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + " is empty");
  t.header = split_csv(line);
  while (std::getline(in, line)) {
    if (!line.empty()) t.rows.push_back(split_csv(line));
  }
  return t;
}

double parse_double(const std::string& s) {
  try {
    return std::stod(s);
  } catch (const std::exception&) {
    throw DataError("not a number: '" + s + "'");
  }
}

}  // namespace

std::string RunReport::to_json() const {
  json j = {{"epochs", epochs},
            {"best_epoch", best_epoch},
            {"best_val_ndcg10", best_val_ndcg10},
            {"trace_steps", trace_steps},
            {"steps_with_unequal_rates", steps_with_unequal_rates},
            {"monotonicity_violations", monotonicity_violations},
            {"missing_columns", missing_columns},
            {"ok", ok()}};
  return j.dump(2) + "\n";
}

RunReport report(const fs::path& run_dir) {
  RunReport rep;
  const auto metrics = read_csv(run_dir / "metrics.csv");
  for (const auto& col : split_csv(kMetricsHeader)) {
    if (std::find(metrics.header.begin(), metrics.header.end(), col) == metrics.header.end())
      rep.missing_columns.push_back(col);
  }
  rep.epochs = metrics.rows.size();
  if (rep.missing_columns.empty()) {
    const auto ndcg = metrics.column("val_ndcg10");
    double best = -1.0;
    for (const auto& r : metrics.rows) {
      const double v = parse_double(r.at(ndcg));
      if (v > best) {
        best = v;
        rep.best_epoch = static_cast<std::size_t>(parse_double(r.at(0)));
      }
    }
    rep.best_val_ndcg10 = best;
  }

  const auto manifest = read_json(run_dir / "run_manifest.json");
  const double lambda_a = manifest.at("weighter").at("lambda_a").get<double>();
  const double lambda_b = manifest.at("weighter").at("lambda_b").get<double>();
  const double lambda_b_late = manifest.at("weighter").at("lambda_b_effective").get<double>();
  const auto& switch_at = manifest.at("weighter").at("lambda_switch_step");
  const double switch_step = switch_at.is_null() ? INFINITY : switch_at.get<double>();

  const bool fixed = manifest.at("config").value("fixed_weights", false);
  const auto trace = read_csv(run_dir / "weighter_trace.csv");
  const std::size_t ct = trace.column("t"), cra = trace.column("r_a"), crb = trace.column("r_b"),
                    cwa = trace.column("w_a"), cwb = trace.column("w_b");
  for (const auto& r : trace.rows) {
    ++rep.trace_steps;
    const double t = parse_double(r.at(ct));
    const double ra = parse_double(r.at(cra)), rb = parse_double(r.at(crb));
    const double na = parse_double(r.at(cwa)) / lambda_a;
    const double nb = parse_double(r.at(cwb)) / (t >= switch_step ? lambda_b_late : lambda_b);
    if (ra == rb || fixed) continue;
    ++rep.steps_with_unequal_rates;
    if ((ra > rb) != (na > nb) || na == nb) ++rep.monotonicity_violations;
  }
  write_text(run_dir / "report.json", rep.to_json());
  return rep;
}

}  // namespace unigrf::train

#pragma once

// Training orchestration and the operations behind the command-line tool.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "unigrf/dataset.hpp"
#include "unigrf/enhancer.hpp"
#include "unigrf/evaluator.hpp"
#include "unigrf/model.hpp"
#include "unigrf/optimizer.hpp"
#include "unigrf/weighter.hpp"

namespace unigrf::train {

enum class Precision { f32, f64 };

struct RunConfig {
  // data
  std::string data_dir;  // processed store
  std::string raw_path;  // prepared into data_dir when auto_prepare is set and no store exists
  std::string raw_format = "dat";
  bool auto_prepare = false;

  // model
  std::size_t max_len = 200;
  std::size_t dim = 64;
  std::size_t heads = 2;
  std::size_t layers = 2;
  std::size_t ffn_mult = 4;

  // sampling and enhancement
  std::size_t negatives = 128;
  std::size_t m = 5;
  double alpha = 0.85;

  // weighting
  double temperature = 1.0;
  double lambda_a = 1.0;
  double lambda_b = 1.0;
  double ema_decay = 0.9;
  std::string weighter_granularity = "step";
  bool fixed_weights = false;
  bool auto_scale = false;

  // optimisation
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t batch_size = 64;
  std::size_t max_epochs = 100;
  std::size_t patience = 5;

  // run
  std::uint64_t seed = 42;
  std::string precision = "f64";
  std::string output_dir = "runs/default";
  std::size_t eval_workers = 1;
  bool record_timing = true;
  bool enhancer_audit = false;

  void validate() const;
  Precision numeric_width() const;
  model::ModelConfig model_config(std::size_t num_items) const;
  enhance::EnhancerConfig enhancer_config() const;
  weighting::WeighterConfig weighter_config() const;
  ad::AdamOptions adam_options() const;

  /// Pretty JSON with every field.
  std::string to_json() const;
  /// Overlays the keys present in `text` onto `base`. Unknown keys are a ConfigError.
  static RunConfig from_json(std::string_view text, const RunConfig& base);
  static RunConfig from_json(std::string_view text);
  static RunConfig load(const std::filesystem::path& path, const RunConfig& base);
  static RunConfig load(const std::filesystem::path& path);

  static std::vector<std::string> field_names();
  /// Sets one field from its text form; booleans accept true/false/1/0.
  void set(std::string_view key, std::string_view value);

  /// FNV-1a over the canonical JSON of every field that affects results
  /// (output location, timing and worker count excluded).
  std::string hash() const;
};

/// output_dir resolved against $UNIGRF_OUTPUT_ROOT when relative and the variable is set.
std::filesystem::path resolve_output(const std::string& dir);

struct EpochLog {
  std::size_t epoch = 0;
  double loss_retrieval = 0.0;
  double loss_ranking = 0.0;
  double r_a = 1.0, r_b = 1.0;
  double w_a = 0.5, w_b = 0.5;
  double val_ndcg10 = 0.0;
  double val_hr10 = 0.0;
  double val_mrr = 0.0;
  std::optional<double> val_auc;
  std::size_t hard_set_size = 0;
  std::size_t potential_set_new = 0;
  std::size_t potential_set_total = 0;
  double wall_seconds = 0.0;
};

struct TraceRecord {
  std::size_t t = 0;
  double loss_retrieval = 0.0;
  double loss_ranking = 0.0;
  double r_a = 1.0, r_b = 1.0;
  double w_a = 0.5, w_b = 0.5;
};

inline constexpr const char* kMetricsHeader =
    "epoch,loss_retrieval,loss_ranking,r_a,r_b,w_a,w_b,val_ndcg10,val_hr10,val_mrr,val_auc,hard_set_size,"
    "potential_set_new,wall_seconds";
inline constexpr const char* kTraceHeader = "t,L_retr,L_rank,r_a,r_b,w_a,w_b";

struct TrainResult {
  std::filesystem::path run_dir;
  std::vector<EpochLog> epochs;
  std::size_t best_epoch = 0;
  double best_val_ndcg10 = -1.0;
  bool stopped_early = false;
  std::size_t optimizer_steps = 0;
  std::size_t enhancer_refreshes = 0;
  std::size_t param_count = 0;
};

/// Loads the configured store, preparing it first when allowed.
data::Dataset load_dataset(const RunConfig& config);

/// Trains on `dataset`; writes metrics.csv, weighter_trace.csv, last.ckpt,
/// best.ckpt, best.json, run_manifest.json (and audit files on request) into
/// the resolved output directory. A non-finite loss throws NumericError and
/// leaves the previous epoch's checkpoint in place.
TrainResult run_training(const RunConfig& config, const data::Dataset& dataset);

/// Evaluates a checkpoint at the precision it was trained in.
eval::EvalReport run_eval(const std::filesystem::path& checkpoint, const data::Dataset& dataset, data::Split split,
                          const eval::EvalOptions& options = {});

struct PrepareResult {
  data::StoreManifest manifest;
  bool reused = false;  // an identical store already existed
};

PrepareResult prepare_data(const std::filesystem::path& raw, data::InputFormat format, std::size_t n,
                           const std::filesystem::path& out_dir, std::uint64_t seed = 0);

enum class SweepAxis { m, layers };
SweepAxis parse_axis(std::string_view name);
std::string_view axis_name(SweepAxis axis);

struct SweepRow {
  std::string value;
  bool ok = false;
  std::string error;
  std::size_t param_count = 0;
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
  double val_ndcg10 = 0.0, val_hr10 = 0.0, val_mrr = 0.0;
  std::optional<double> val_auc;
  double test_ndcg10 = 0.0, test_hr10 = 0.0, test_mrr = 0.0;
  std::optional<double> test_auc;
};

/// One training run per value under output_dir/<axis>=<value>; a failed run
/// is recorded and the sweep continues. Writes summary.csv in output_dir.
std::vector<SweepRow> run_sweep(const RunConfig& config, const data::Dataset& dataset, SweepAxis axis,
                                const std::vector<std::size_t>& values);

struct RunReport {
  std::size_t epochs = 0;
  std::size_t best_epoch = 0;
  double best_val_ndcg10 = 0.0;
  std::size_t trace_steps = 0;
  std::size_t steps_with_unequal_rates = 0;
  std::size_t monotonicity_violations = 0;
  std::vector<std::string> missing_columns;
  bool ok() const { return monotonicity_violations == 0 && missing_columns.empty(); }
  std::string to_json() const;
};

/// Post-run audit of a run directory: checks metrics columns and that every
/// trace step orders the normalised weights like the rates.
RunReport report(const std::filesystem::path& run_dir);

}  // namespace unigrf::train

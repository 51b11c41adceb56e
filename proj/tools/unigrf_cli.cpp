// unigrf: prepare data, train, evaluate, sweep and audit runs.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "unigrf/errors.hpp"
#include "unigrf/trainer.hpp"

namespace fs = std::filesystem;
using namespace unigrf;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfig = 2, kData = 3, kNumeric = 4 };

std::string flag_name(std::string field) {
  std::replace(field.begin(), field.end(), '_', '-');
  return "--" + field;
}

// One value option per config field; the ones given on the command line override the file.
struct Overrides {
  std::map<std::string, std::string> values;
  std::optional<std::string> config_path;
  bool no_timing = false;

  void attach(CLI::App* cmd) {
    cmd->add_option("-c,--config", config_path, "JSON config file (flags override it)");
    for (const auto& field : train::RunConfig::field_names()) {
      cmd->add_option_function<std::string>(
          flag_name(field), [this, field](const std::string& v) { values[field] = v; }, "config field " + field);
    }
    cmd->add_flag("--no-timing", no_timing, "write wall_seconds as 0 so metrics files are reproducible");
  }

  train::RunConfig resolve() const {
    train::RunConfig cfg = config_path ? train::RunConfig::load(*config_path) : train::RunConfig{};
    for (const auto& [k, v] : values) cfg.set(k, v);
    if (no_timing) cfg.record_timing = false;
    cfg.validate();
    return cfg;
  }
};

data::Split parse_split(const std::string& s) {
  if (s == "valid") return data::Split::valid;
  if (s == "test") return data::Split::test;
  throw ConfigError("split must be valid or test, got '" + s + "'");
}

std::vector<std::size_t> parse_values(const std::string& text) {
  std::vector<std::size_t> out;
  std::string item;
  for (std::size_t i = 0; i <= text.size(); ++i) {
    if (i == text.size() || text[i] == ',') {
      if (item.empty()) throw ConfigError("empty entry in value list '" + text + "'");
      try {
        out.push_back(std::stoul(item));
      } catch (const std::exception&) {
        throw ConfigError("not a count: '" + item + "'");
      }
      item.clear();
    } else {
      item.push_back(text[i]);
    }
  }
  return out;
}

void print_report(const eval::EvalReport& r) {
  std::printf("%s users=%zu", r.split.c_str(), r.users);
  for (auto k : r.ks) std::printf(" ndcg@%zu=%.6f hr@%zu=%.6f", k, r.ndcg.at(k), k, r.hr.at(k));
  std::printf(" mrr=%.6f auc=%s\n", r.mrr, r.auc ? std::to_string(*r.auc).c_str() : "n/a");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unified generative retrieval and ranking recommender"};
  app.require_subcommand(1);

  auto* prepare = app.add_subcommand("prepare", "parse a MovieLens-style log into a processed store");
  std::string raw, format = "dat", out_dir;
  std::size_t n = 200;
  std::uint64_t prep_seed = 0;
  prepare->add_option("-i,--input", raw, "ratings file")->required();
  prepare->add_option("-f,--format", format, "dat or csv");
  prepare->add_option("-n,--max-len", n, "training sequence length");
  prepare->add_option("-o,--out", out_dir, "store directory")->required();
  prepare->add_option("--seed", prep_seed, "seed recorded in the manifest");

  auto* train_cmd = app.add_subcommand("train", "train a model");
  Overrides train_over;
  train_over.attach(train_cmd);

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string ckpt, data_dir, split = "test", report_out, rank_dump;
  std::size_t workers = 1;
  eval_cmd->add_option("--checkpoint", ckpt, "checkpoint file")->required();
  eval_cmd->add_option("--data", data_dir, "processed store")->required();
  eval_cmd->add_option("--split", split, "valid or test");
  eval_cmd->add_option("-o,--out", report_out, "write the JSON report here");
  eval_cmd->add_option("--rank-dump", rank_dump, "write per-user ranks as CSV");
  eval_cmd->add_option("--workers", workers, "evaluation threads");

  auto* sweep = app.add_subcommand("sweep", "one training run per value of m or layers");
  Overrides sweep_over;
  sweep_over.attach(sweep);
  std::string axis, values;
  sweep->add_option("--axis", axis, "m or layers")->required();
  sweep->add_option("--values", values, "comma-separated values")->required();

  auto* report_cmd = app.add_subcommand("report", "audit a finished run directory");
  std::string run_dir;
  report_cmd->add_option("--run", run_dir, "run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*prepare) {
      const auto res = train::prepare_data(raw, data::parse_format(format), n, out_dir, prep_seed);
      const auto& s = res.manifest.stats;
      std::printf("%s %s: users=%zu items=%zu interactions=%zu mean_len=%.4f sequences=%s\n",
                  res.reused ? "unchanged" : "prepared", out_dir.c_str(), s.users, s.items, s.interactions,
                  s.mean_sequence_length, res.manifest.sequences_hash.c_str());
    } else if (*train_cmd) {
      const auto cfg = train_over.resolve();
      const auto ds = train::load_dataset(cfg);
      const auto res = train::run_training(cfg, ds);
      std::printf("trained %zu epochs (%zu steps); best epoch %zu val ndcg@10=%.6f; outputs in %s\n",
                  res.epochs.size(), res.optimizer_steps, res.best_epoch, res.best_val_ndcg10,
                  res.run_dir.string().c_str());
      const auto test = train::run_eval(res.run_dir / "best.ckpt", ds, data::Split::test);
      test.save(res.run_dir / "best_test.json");
      print_report(test);
    } else if (*eval_cmd) {
      const auto ds = data::load_processed(data_dir);
      std::vector<eval::UserResult> per_user;
      eval::EvalOptions opt;
      opt.workers = workers;
      if (!rank_dump.empty()) opt.per_user = &per_user;
      const auto rep = train::run_eval(ckpt, ds, parse_split(split), opt);
      if (!report_out.empty()) rep.save(report_out);
      if (!rank_dump.empty()) eval::write_rank_dump(rank_dump, per_user);
      print_report(rep);
    } else if (*sweep) {
      const auto cfg = sweep_over.resolve();
      const auto ds = train::load_dataset(cfg);
      const auto rows = train::run_sweep(cfg, ds, train::parse_axis(axis), parse_values(values));
      std::size_t failed = 0;
      for (const auto& r : rows) {
        failed += r.ok ? 0 : 1;
        std::printf("%s=%s %s params=%zu val_ndcg10=%.6f test_ndcg10=%.6f%s%s\n", axis.c_str(), r.value.c_str(),
                    r.ok ? "ok" : "FAILED", r.param_count, r.val_ndcg10, r.test_ndcg10, r.ok ? "" : " ",
                    r.error.c_str());
      }
      std::printf("summary: %s\n", (train::resolve_output(cfg.output_dir) / "summary.csv").string().c_str());
      return failed ? kFailure : kOk;
    } else if (*report_cmd) {
      const auto rep = train::report(run_dir);
      std::cout << rep.to_json();
      return rep.ok() ? kOk : kFailure;
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfig;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kData;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return kNumeric;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kFailure;
  }
  return kOk;
}

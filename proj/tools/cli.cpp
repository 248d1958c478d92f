#include "cli.hpp"

#include <atomic>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "cissl/audit.hpp"
#include "cissl/checkpoint.hpp"
#include "cissl/csv.hpp"
#include "cissl/datagen.hpp"
#include "cissl/errors.hpp"
#include "cissl/log.hpp"
#include "cissl/trainer.hpp"

namespace cissl::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc);
  os << text;
  if (!os) throw std::runtime_error("cannot write '" + path.string() + "'");
}

json config_json(const ExperimentConfig& cfg) {
  json j = json::object();
  for (const auto& key : config_keys()) j[key] = get_config_value(cfg, key);
  return j;
}

struct CommonOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
};

void add_common(CLI::App* cmd, CommonOptions& opts, const std::string& default_out) {
  cmd->add_option("--config", opts.config_path, "key = value config file (defaults when omitted)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--seed", opts.seed, "overrides the seed from the config");
  opts.out_dir = default_out;
  cmd->add_option("--out", opts.out_dir, "output directory")->capture_default_str();
}

ExperimentConfig load_config(const CommonOptions& opts) {
  ExperimentConfig cfg = opts.config_path.empty() ? ExperimentConfig{} : parse_config(opts.config_path);
  if (opts.seed) cfg.train.seed = *opts.seed;
  cfg.validate();
  return cfg;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  for (auto& part : csv::split(text)) {
    if (!part.empty()) out.push_back(part);
  }
  return out;
}

}  // namespace

EvalReport train_into(const ExperimentConfig& cfg, const fs::path& dir) {
  cfg.validate();
  fs::create_directories(dir);
  const fs::path config_path = dir / "config.txt";
  const fs::path manifest_path = dir / "manifest.json";
  const fs::path metrics_path = dir / "metrics.csv";
  const fs::path summary_path = dir / "summary.json";
  const fs::path checkpoint_dir = dir / "checkpoint";

  write_text(config_path, emit_config(cfg));
  json manifest;
  manifest["command"] = "train";
  manifest["version"] = CISSL_VERSION;
  manifest["seed"] = cfg.train.seed;
  manifest["data_seed"] = cfg.data.seed;
  manifest["config"] = config_json(cfg);
  manifest["started"] = utc_now();
  manifest["finished"] = nullptr;
  manifest["outputs"] = {{"config", config_path.filename().string()},
                         {"metrics", metrics_path.filename().string()},
                         {"summary", summary_path.filename().string()},
                         {"checkpoint", checkpoint_dir.filename().string()}};
  write_text(manifest_path, manifest.dump(2) + "\n");

  const LongTailDataset ds = make_dataset(cfg.data);
  std::ofstream metrics(metrics_path, std::ios::trunc);
  metrics << csv::join(history_header(ds.num_classes())) << '\n' << std::flush;
  if (!metrics) throw std::runtime_error("cannot write '" + metrics_path.string() + "'");

  TrainState state = init_state(cfg);
  TrainHooks hooks;
  hooks.on_eval = [&](const HistoryRow& row) {
    metrics << csv::join(history_fields(row)) << '\n' << std::flush;
  };
  run_training(state, ds, cfg, hooks);
  metrics.close();
  save_checkpoint(state, checkpoint_dir);

  const EvalReport report = evaluate(state.model, ds.test_features(), ds.test_labels(), eval_head(cfg));
  json summary;
  summary["method"] = to_string(cfg.train.method);
  summary["iterations"] = state.iter;
  summary["seed"] = cfg.train.seed;
  summary["eval_head"] = eval_head(cfg) == kAuxHead ? "aux" : "backbone";
  summary["report"] = json::parse(report_json(report));
  write_text(summary_path, summary.dump(2) + "\n");

  manifest["finished"] = utc_now();
  write_text(manifest_path, manifest.dump(2) + "\n");
  return report;
}

std::vector<SweepCell> expand_sweep(const ExperimentConfig& base, const std::vector<std::string>& grid,
                                    const std::vector<std::uint64_t>& seeds) {
  struct Axis {
    std::string key;
    std::vector<std::string> values;
  };
  std::vector<Axis> axes;
  for (const auto& entry : grid) {
    const auto eq = entry.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError("sweep grid entry '" + entry + "' is not key=v1,v2,...");
    }
    Axis a{entry.substr(0, eq), split_list(entry.substr(eq + 1))};
    if (a.values.empty()) throw ConfigError(a.key + ": sweep grid lists no values");
    axes.push_back(std::move(a));
  }
  const std::vector<std::uint64_t> seed_list = seeds.empty() ? std::vector{base.train.seed} : seeds;

  std::vector<SweepCell> cells;
  std::vector<std::size_t> pos(axes.size(), 0);
  while (true) {
    for (auto seed : seed_list) {
      SweepCell cell{"", base};
      for (std::size_t a = 0; a < axes.size(); ++a) {
        set_config_value(cell.config, axes[a].key, axes[a].values[pos[a]]);
        cell.name += axes[a].key + "=" + axes[a].values[pos[a]] + "__";
      }
      cell.config.train.seed = seed;
      cell.name += "seed=" + std::to_string(seed);
      cell.config.validate();
      cells.push_back(std::move(cell));
    }
    std::size_t a = axes.size();
    while (a > 0) {
      --a;
      if (++pos[a] < axes[a].values.size()) break;
      pos[a] = 0;
      if (a == 0) return cells;
    }
    if (axes.empty()) return cells;
  }
}

namespace {

int cmd_gen_data(const CommonOptions& opts, std::ostream& out) {
  ExperimentConfig cfg = opts.config_path.empty() ? ExperimentConfig{} : parse_config(opts.config_path);
  if (opts.seed) cfg.data.seed = *opts.seed;
  cfg.validate();
  const auto ds = make_dataset(cfg.data);
  export_dataset(ds, opts.out_dir);
  out << "wrote " << ds.num_labeled() << " labeled, " << ds.num_unlabeled() << " unlabeled, "
      << ds.test_labels().size() << " test rows to " << opts.out_dir << '\n';
  return kExitOk;
}

int cmd_train(const CommonOptions& opts, std::ostream& out) {
  const ExperimentConfig cfg = load_config(opts);
  const auto report = train_into(cfg, opts.out_dir);
  out << "balanced accuracy " << report.balanced_accuracy << " after " << cfg.train.total_iters
      << " iterations; outputs in " << opts.out_dir << '\n';
  return kExitOk;
}

int cmd_eval(const std::string& run_dir, const std::string& report_path, const std::string& features_path,
             std::ostream& out) {
  const fs::path dir(run_dir);
  const ExperimentConfig cfg = parse_config(dir / "config.txt");
  const auto ds = make_dataset(cfg.data);
  const TrainState state = load_checkpoint(dir / "checkpoint", cfg);
  const auto report = evaluate(state.model, ds.test_features(), ds.test_labels(), eval_head(cfg));
  const std::string text = report_json(report);
  write_text(report_path.empty() ? dir / "eval.json" : fs::path(report_path), text + "\n");
  export_features(state.model, ds, features_path.empty() ? dir / "features.csv" : fs::path(features_path),
                  eval_head(cfg));
  out << text << '\n';
  return kExitOk;
}

int cmd_gradcheck(std::size_t configs, std::uint64_t seed, double tolerance, std::ostream& out) {
  const auto report = run_gradient_audit(configs, seed, tolerance);
  std::map<std::string, double> worst;
  std::size_t failures = 0;
  for (const auto& c : report.cases) {
    worst[c.term] = std::max(worst[c.term], c.max_rel_error);
    if (!c.passed) {
      ++failures;
      out << "FAIL " << c.term << " config " << c.config << " rel error " << c.max_rel_error << " at "
          << c.worst_parameter << '\n';
    }
  }
  for (const auto& [term, err] : worst) out << term << " max rel error " << err << '\n';
  out << (failures == 0 ? "gradient audit passed" : "gradient audit FAILED") << " (" << configs
      << " configurations, tolerance " << tolerance << ")\n";
  return failures == 0 ? kExitOk : kExitNumeric;
}

int cmd_motivation(const CommonOptions& opts, std::optional<std::size_t> phase1_iters, bool no_freeze,
                   std::ostream& out) {
  const ExperimentConfig cfg = load_config(opts);
  const auto imbalanced = make_dataset(cfg.data);
  const auto balanced = make_balanced_counterpart(cfg.data);
  ProtocolOptions po;
  po.freeze = !no_freeze;
  po.phase1_iters = phase1_iters;
  const auto res = frozen_backbone_protocol(cfg, balanced, imbalanced, po);

  fs::create_directories(opts.out_dir);
  write_text(fs::path(opts.out_dir) / "config.txt", emit_config(cfg));
  json j;
  j["acc_joint"] = res.acc_joint;
  j["acc_frozen"] = res.acc_frozen;
  j["phase1_iters"] = phase1_iters.value_or(cfg.train.total_iters);
  j["phase2_iters"] = cfg.train.total_iters;
  j["freeze"] = po.freeze;
  j["seed"] = cfg.train.seed;
  write_text(fs::path(opts.out_dir) / "motivation.json", j.dump(2) + "\n");
  out << "joint " << res.acc_joint << " frozen-balanced " << res.acc_frozen << '\n';
  return kExitOk;
}

int cmd_sweep(const CommonOptions& opts, const std::vector<std::string>& grid,
              const std::string& seeds_text, std::size_t jobs, std::ostream& out) {
  const ExperimentConfig base = load_config(opts);
  std::vector<std::uint64_t> seeds;
  for (const auto& s : split_list(seeds_text)) {
    seeds.push_back(static_cast<std::uint64_t>(csv::parse_int(s)));
  }
  const auto cells = expand_sweep(base, grid, seeds);
  const fs::path root(opts.out_dir);
  fs::create_directories(root);

  std::vector<double> accuracy(cells.size(), 0.0);
  std::vector<std::string> errors(cells.size());
  std::vector<int> codes(cells.size(), kExitOk);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      try {
        accuracy[i] = train_into(cells[i].config, root / cells[i].name).balanced_accuracy;
        log_info("sweep cell " + cells[i].name + " done");
      } catch (const NumericError& e) {
        codes[i] = kExitNumeric;
        errors[i] = e.what();
      } catch (const ConfigError& e) {
        codes[i] = kExitValidation;
        errors[i] = e.what();
      } catch (const std::exception& e) {
        codes[i] = kExitUsage;
        errors[i] = e.what();
      }
    }
  };
  const std::size_t n_threads = std::max<std::size_t>(1, std::min(jobs, cells.size()));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  csv::Table table;
  table.header = {"cell", "seed", "balanced_accuracy", "status"};
  int code = kExitOk;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    table.rows.push_back({cells[i].name, std::to_string(cells[i].config.train.seed),
                          codes[i] == kExitOk ? csv::format_double(accuracy[i]) : "",
                          codes[i] == kExitOk ? "ok" : errors[i]});
    out << cells[i].name << ": "
        << (codes[i] == kExitOk ? "balanced accuracy " + csv::format_double(accuracy[i]) : "error: " + errors[i])
        << '\n';
    if (code == kExitOk) code = codes[i];
  }
  csv::write(root / "sweep.csv", table);
  return code;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Class-imbalanced semi-supervised learning lab", "cissl"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(CISSL_VERSION));

  CommonOptions gen_opts, train_opts, motivation_opts, sweep_opts;
  auto* gen = app.add_subcommand("gen-data", "write the synthetic dataset as CSV");
  add_common(gen, gen_opts, "data");

  auto* train = app.add_subcommand("train", "train one model and write a run directory");
  add_common(train, train_opts, "run");

  std::string run_dir, report_path, features_path;
  auto* eval = app.add_subcommand("eval", "evaluate a run's checkpoint and export test features");
  eval->add_option("--run", run_dir, "run directory written by train")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--report", report_path, "report path (default RUN/eval.json)");
  eval->add_option("--features", features_path, "feature CSV path (default RUN/features.csv)");

  std::size_t audit_configs = 20;
  std::uint64_t audit_seed = 7;
  double audit_tol = 1e-5;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference audit of every loss gradient");
  gradcheck->add_option("--configs", audit_configs, "random configurations")->capture_default_str();
  gradcheck->add_option("--seed", audit_seed, "audit seed")->capture_default_str();
  gradcheck->add_option("--tolerance", audit_tol, "max relative error")->capture_default_str();

  std::optional<std::size_t> phase1_iters;
  bool no_freeze = false;
  auto* motivation = app.add_subcommand("motivation", "joint vs frozen-balanced-backbone comparison");
  add_common(motivation, motivation_opts, "motivation");
  motivation->add_option("--phase1-iters", phase1_iters, "balanced pre-training length (default total_iters)");
  motivation->add_flag("--no-freeze", no_freeze, "keep every parameter trainable in phase 2");

  std::vector<std::string> grid;
  std::string seeds_text;
  std::size_t jobs = 1;
  auto* sweep = app.add_subcommand("sweep", "train every cell of a key/seed grid");
  add_common(sweep, sweep_opts, "sweep");
  sweep->add_option("--grid", grid, "key=v1,v2,... (repeatable)");
  sweep->add_option("--seeds", seeds_text, "comma separated training seeds");
  sweep->add_option("--jobs", jobs, "cells trained in parallel")->capture_default_str()->check(CLI::PositiveNumber);

  std::vector<std::string> argv_rev(args.rbegin(), args.rend());
  try {
    app.parse(std::move(argv_rev));
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*gen) return cmd_gen_data(gen_opts, out);
    if (*train) return cmd_train(train_opts, out);
    if (*eval) return cmd_eval(run_dir, report_path, features_path, out);
    if (*gradcheck) return cmd_gradcheck(audit_configs, audit_seed, audit_tol, out);
    if (*motivation) return cmd_motivation(motivation_opts, phase1_iters, no_freeze, out);
    if (*sweep) return cmd_sweep(sweep_opts, grid, seeds_text, jobs, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace cissl::cli

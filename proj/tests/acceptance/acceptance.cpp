// Runs every acceptance criterion and prints one PASS/FAIL line per criterion.
// Exit status is nonzero when any criterion fails.
//
// Usage: acceptance [criterion numbers...]   (all when none are given)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "bacon_oracle.hpp"
#include "cissl/audit.hpp"
#include "cissl/bacon.hpp"
#include "cissl/checkpoint.hpp"
#include "cissl/config.hpp"
#include "cissl/datagen.hpp"
#include "cissl/eval.hpp"
#include "cissl/trainer.hpp"
#include "contrastive_problem.hpp"
#include "test_support.hpp"
#ifdef CISSL_HAVE_CLI
#include "cli.hpp"
#endif

using namespace cissl;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

const std::vector<std::uint64_t> kSeeds{1, 2, 3, 4, 5};

// Desk-scale setting shared by the directional experiments: six classes in
// 16 dimensions, imbalance 50 on both splits, 10% of the data labeled.
// Cluster separation and contrastive temperature are tuned for a 16-d
// mixture rather than taken from the image-scale defaults.
ExperimentConfig desk_config(Method method, std::uint64_t seed) {
  ExperimentConfig cfg;
  cfg.data.num_classes = 6;
  cfg.data.input_dim = 16;
  cfg.data.gamma_labeled = 50.0;
  cfg.data.gamma_unlabeled = 50.0;
  cfg.data.n1_labeled = 100;
  cfg.data.n1_unlabeled = 900;
  cfg.data.class_sep = 4.0;
  cfg.data.seed = seed;
  cfg.train.method = method;
  cfg.train.total_iters = 20000;
  cfg.train.warmup_iters = 6000;
  cfg.train.temp_base = 0.5;
  cfg.train.seed = seed;
  return cfg;
}

struct RunResult {
  double accuracy = 0.0;
  double dispersion = 0.0;
};

RunResult train_and_evaluate(const ExperimentConfig& cfg) {
  const auto ds = make_dataset(cfg.data);
  const auto st = run_training(cfg, ds);
  const auto report = evaluate(st.model, ds.test_features(), ds.test_labels(), eval_head(cfg));
  return {report.balanced_accuracy, report.dispersion_ratio};
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

RunResult logged_run(const ExperimentConfig& cfg, const char* tag) {
  const auto r = train_and_evaluate(cfg);
  std::printf("  %s seed %llu%s: balanced accuracy %.4f, dispersion %.4f\n", to_string(cfg.train.method).c_str(),
              static_cast<unsigned long long>(cfg.train.seed), tag, r.accuracy, r.dispersion);
  std::fflush(stdout);
  return r;
}

Outcome gradient_oracles() {
  const auto t0 = Clock::now();
  const auto report = run_gradient_audit(20, 7, 1e-5);
  const double elapsed = seconds_since(t0);
  std::set<std::string> terms;
  for (const auto& c : report.cases) terms.insert(c.term);
  const std::set<std::string> expected{"loss_s", "loss_u", "loss_cls", "loss_consis", "loss_back", "loss_bacon"};
  const bool ok = report.passed() && terms == expected && report.cases.size() == 20 * expected.size();
  return {ok && elapsed < 60.0, fmt("%zu checks over 6 terms, worst relative error %.3g (< 1e-5), %.1f s (< 60 s)",
                                    report.cases.size(), report.worst_error(), elapsed)};
}

Outcome brute_force_loss() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(Rng(seed).split(2).next_u64());
    const auto p = test_support::random_problem(rng, 8, 3, 4);
    const double got = bacon_loss(p.batch()).loss;
    const double want = test_support::oracle_bacon_loss(p.oracle());
    worst = std::max(worst, std::abs(got - want));
    if (!std::isfinite(got)) worst = INFINITY;
  }
  const double elapsed = seconds_since(t0);
  return {worst < 1e-12 && elapsed < 10.0,
          fmt("100 seeds, max |loss - naive| %.3g (< 1e-12), %.2f s (< 10 s)", worst, elapsed)};
}

Outcome dataset_invariants() {
  const auto counts = longtail_counts(1000, 100.0, 10);
  bool ok = counts.front() == 1000 && counts.back() == 10 &&
            static_cast<double>(counts.front()) / static_cast<double>(counts.back()) == 100.0;
  ok = ok && std::is_sorted(counts.rbegin(), counts.rend());

  LongTailSpec spec;
  spec.n1_labeled = 1000;
  spec.n1_unlabeled = 1000;
  spec.gamma_labeled = 100.0;
  spec.gamma_unlabeled = 100.0;
  spec.num_classes = 10;
  spec.test_per_class = 1;
  auto per_class = [&](const std::vector<int>& labels) {
    std::vector<std::size_t> n(spec.num_classes, 0);
    for (int y : labels) ++n[static_cast<std::size_t>(y)];
    return n;
  };
  const auto plain = make_dataset(spec);
  spec.invert_unlabeled = true;
  const auto inverted = make_dataset(spec);
  const auto labeled = per_class(plain.labeled_labels());
  const auto unlabeled = per_class(plain.diagnostic_unlabeled_labels());
  auto reversed = per_class(inverted.diagnostic_unlabeled_labels());
  std::reverse(reversed.begin(), reversed.end());
  const bool split_ok = labeled == counts && unlabeled == counts && reversed == unlabeled &&
                        per_class(inverted.labeled_labels()) == counts;
  std::ostringstream shown;
  for (auto c : counts) shown << c << ' ';
  return {ok && split_ok, fmt("counts %shead/tail %.1f, non-increasing %s, inverted split reversed %s",
                              shown.str().c_str(), static_cast<double>(counts.front()) / counts.back(),
                              std::is_sorted(counts.rbegin(), counts.rend()) ? "yes" : "no",
                              reversed == unlabeled ? "yes" : "no")};
}

Outcome bta_contract() {
  std::size_t checks = 0, failures = 0;
  for (double tau : {0.05, 0.1, 0.5, 1.0}) {
    for (double eta : {0.0, 0.25, 0.5, 0.9, 0.999}) {
      for (std::size_t total : {1ul, 10ul, 20000ul}) {
        const BtaSchedule sched{tau, eta, total, BtaMode::decay};
        for (std::size_t max_count : {1ul, 7ul, 1000ul}) {
          for (std::size_t n = 1; n <= max_count; n += std::max<std::size_t>(1, max_count / 13)) {
            ++checks;
            if (bta_temperature(sched, total, static_cast<double>(n), static_cast<double>(max_count)) != tau) {
              ++failures;
            }
          }
          for (std::size_t t = 0; t < total; t += std::max<std::size_t>(1, total / 7)) {
            double prev = INFINITY;
            for (std::size_t n = 1; n <= max_count; n += std::max<std::size_t>(1, max_count / 13)) {
              const double temp =
                  bta_temperature(sched, t, static_cast<double>(n), static_cast<double>(max_count));
              ++checks;
              if (!(temp > 0.0)) ++failures;
              if (eta > 0.0 && !(temp < prev)) ++failures;
              prev = temp;
            }
          }
        }
      }
    }
  }
  return {failures == 0, fmt("%zu checks, %zu violations", checks, failures)};
}

Outcome warmup_gating() {
  ExperimentConfig cfg = desk_config(Method::bacon, 1);
  const auto ds = make_dataset(cfg.data);
  TrainState gated = init_state(cfg);
  TrainState plain = init_state(cfg);
  std::size_t first_mismatch = 0;
  bool identical = true;
  for (std::size_t t = 0; t < cfg.train.warmup_iters && identical; ++t) {
    const auto a = train_step(gated, ds, cfg);
    const auto b = train_step_without_contrastive(plain, ds, cfg);
    identical = a == b && gated.model.same_parameters(plain.model) && gated.bank == plain.bank &&
                gated.rng == plain.rng && !a.contrastive_active;
    if (!identical) first_mismatch = t;
  }
  const std::size_t bank = gated.bank.size();
  // The contrastive path is live once warmup ends.
  train_step(gated, ds, cfg);
  train_step_without_contrastive(plain, ds, cfg);
  const bool diverges = !gated.model.same_parameters(plain.model);
  return {identical && bank > 0 && diverges,
          identical ? fmt("%zu warmup steps bit-identical, bank holds %zu features, trajectories split at t = %zu: %s",
                          cfg.train.warmup_iters, bank, cfg.train.warmup_iters, diverges ? "yes" : "no")
                    : fmt("trajectories differ at step %zu", first_mismatch)};
}

Outcome method_ordering() {
  const auto t0 = Clock::now();
  std::map<Method, std::vector<double>> acc, disp;
  for (auto seed : kSeeds) {
    for (Method m : {Method::fixmatch, Method::abc, Method::bacon}) {
      const auto r = logged_run(desk_config(m, seed), "");
      acc[m].push_back(r.accuracy);
      disp[m].push_back(r.dispersion);
    }
  }
  const double elapsed = seconds_since(t0);
  const double fix = mean(acc[Method::fixmatch]), abc = mean(acc[Method::abc]), bacon = mean(acc[Method::bacon]);
  const double d_abc = mean(disp[Method::abc]), d_bacon = mean(disp[Method::bacon]);
  const bool ok = bacon - abc > 0.0 && abc - fix > 0.0 && d_bacon < d_abc && elapsed < 900.0;
  return {ok, fmt("mean balanced accuracy bacon %.4f, abc %.4f, fixmatch %.4f; dispersion bacon %.4f vs abc %.4f; "
                  "%.0f s (< 900 s)",
                  bacon, abc, fix, d_bacon, d_abc, elapsed)};
}

Outcome motivation_protocol() {
  std::vector<double> joint, frozen;
  for (auto seed : kSeeds) {
    ExperimentConfig cfg = desk_config(Method::abc, seed);
    cfg.train.total_iters = 10000;
    cfg.train.warmup_iters = 3000;
    const auto r = frozen_backbone_protocol(cfg, make_balanced_counterpart(cfg.data), make_dataset(cfg.data));
    std::printf("  seed %llu: joint %.4f, frozen balanced backbone %.4f\n", static_cast<unsigned long long>(seed),
                r.acc_joint, r.acc_frozen);
    std::fflush(stdout);
    joint.push_back(r.acc_joint);
    frozen.push_back(r.acc_frozen);
  }
  return {mean(frozen) > mean(joint),
          fmt("mean balanced accuracy frozen %.4f vs joint %.4f", mean(frozen), mean(joint))};
}

// Overlapping clusters (the default separation), where head-biased
// pseudo-labels actually cost accuracy. Mask counts come from the bank's
// predicted distribution: labeled-split counts would hand the masks the
// labeled distribution as a prior for the unlabeled data, which is the
// assumption the inverted split breaks.
ExperimentConfig robustness_config(Method method, std::uint64_t seed, bool inverted) {
  ExperimentConfig cfg = desk_config(method, seed);
  cfg.data.class_sep = 2.0;
  cfg.data.invert_unlabeled = inverted;
  cfg.train.mask_counts = MaskCountSource::bank;
  return cfg;
}

Outcome inverse_imbalance() {
  std::map<Method, std::vector<double>> drop;
  for (auto seed : kSeeds) {
    for (Method m : {Method::fixmatch, Method::bacon}) {
      const auto standard = logged_run(robustness_config(m, seed, false), "");
      const auto inverted = logged_run(robustness_config(m, seed, true), " inverted");
      drop[m].push_back(standard.accuracy - inverted.accuracy);
    }
  }
  const double d_bacon = mean(drop[Method::bacon]), d_fix = mean(drop[Method::fixmatch]);
  return {d_bacon < d_fix, fmt("mean drop bacon %.4f vs fixmatch %.4f", d_bacon, d_fix)};
}

#ifdef CISSL_HAVE_CLI

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

Outcome ablation_structure() {
  struct Combo {
    bool rns;
    BtaMode bta;
  };
  const std::vector<Combo> combos{{true, BtaMode::off}, {false, BtaMode::naive}, {true, BtaMode::naive},
                                  {true, BtaMode::decay}};
  test_support::TempDir dir;
  std::set<std::string> echoes;
  std::size_t completed = 0;
  std::string accs;
  for (std::size_t i = 0; i < combos.size(); ++i) {
    ExperimentConfig cfg = desk_config(Method::bacon, 1);
    cfg.train.total_iters = 3000;
    cfg.train.warmup_iters = 1000;
    cfg.train.use_rns = combos[i].rns;
    cfg.train.bta_mode = combos[i].bta;
    const auto run = dir.path() / ("combo" + std::to_string(i));
    const auto report = cli::train_into(cfg, run);
    const auto rows = read_history_csv(run / "metrics.csv");
    if (!rows.empty() && rows.back().iter == cfg.train.total_iters && std::isfinite(report.balanced_accuracy)) {
      ++completed;
    }
    echoes.insert(slurp(run / "config.txt"));
    accs += fmt(" %s/%s %.3f", combos[i].rns ? "rns" : "no-rns", to_string(combos[i].bta).c_str(),
                report.balanced_accuracy);
  }
  const TrainConfig defaults;
  const bool default_ok = defaults.use_rns && defaults.bta_mode == BtaMode::decay;
  return {completed == combos.size() && echoes.size() == combos.size() && default_ok,
          fmt("%zu/4 runs completed, %zu distinct config echoes, default is rns + decay: %s;%s", completed,
              echoes.size(), default_ok ? "yes" : "no", accs.c_str())};
}

Outcome determinism() {
  test_support::TempDir dir;
  ExperimentConfig cfg = desk_config(Method::bacon, 3);
  cfg.train.total_iters = 3000;
  cfg.train.warmup_iters = 1000;
  cfg.train.eval_every = 250;
  std::ofstream(dir.path() / "config.txt") << emit_config(cfg);
  std::ostringstream out, err;
  std::vector<int> codes;
  for (const char* name : {"a", "b"}) {
    codes.push_back(cli::run({"train", "--config", (dir.path() / "config.txt").string(), "--out",
                              (dir.path() / name).string()},
                             out, err));
  }
  const std::string a = slurp(dir.path() / "a" / "metrics.csv");
  const std::string b = slurp(dir.path() / "b" / "metrics.csv");
  const bool ok = codes == std::vector<int>{0, 0} && !a.empty() && a == b;
  return {ok, fmt("exit codes %d %d, metrics.csv %zu bytes, byte-identical: %s", codes[0], codes[1], a.size(),
                  a == b ? "yes" : "no")};
}

#else

Outcome ablation_structure() { return {false, "built without the command-line tool"}; }
Outcome determinism() { return {false, "built without the command-line tool"}; }

#endif

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient oracle suite", gradient_oracles},
      {"brute-force loss equivalence", brute_force_loss},
      {"dataset invariants", dataset_invariants},
      {"temperature schedule contract", bta_contract},
      {"warmup gating", warmup_gating},
      {"method ordering and dispersion", method_ordering},
      {"frozen balanced backbone", motivation_protocol},
      {"inverse imbalance robustness", inverse_imbalance},
      {"ablation structure", ablation_structure},
      {"determinism", determinism},
  };
  std::set<std::size_t> selected;
  for (int i = 1; i < argc; ++i) selected.insert(static_cast<std::size_t>(std::stoul(argv[i])));

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!selected.empty() && !selected.contains(i + 1)) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("criterion %zu (%s): %s  %s  [%.1f s]\n", i + 1, criteria[i].first.c_str(), o.pass ? "PASS" : "FAIL",
                o.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
    if (!o.pass) ++failures;
  }
  return failures == 0 ? 0 : 1;
}

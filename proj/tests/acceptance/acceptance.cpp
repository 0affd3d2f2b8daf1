// Acceptance suite: one PASS/FAIL line per criterion.
//   acceptance            run all ten
//   acceptance --only 7   run one (exit status reflects that criterion)

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "depo/actors.hpp"
#include "depo/mcts.hpp"
#include "depo/pipeline.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace depo;
using namespace depo::testing;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

fs::path work_root;

fs::path fresh_dir(const std::string& name) {
  const fs::path d = work_root / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

// Pointer views plus reference scores, z0 optionally pinned.
LossAndGradient loss_with_z0(const PolicyParams& theta, const PolicyParams& ref, const std::vector<Trajectory>& d,
                             const std::vector<Trajectory>& u, const TrainConfig& cfg, std::optional<double> z0) {
  std::vector<const Trajectory*> pd, pu;
  std::vector<ReferenceScores> rs;
  for (const auto& t : d) pd.push_back(&t);
  for (const auto& t : u) pu.push_back(&t);
  for (const auto* t : pd) rs.push_back(reference_scores(ref, *t));
  for (const auto* t : pu) rs.push_back(reference_scores(ref, *t));
  std::vector<const ReferenceScores*> rd, ru;
  for (std::size_t i = 0; i < rs.size(); ++i) (i < pd.size() ? rd : ru).push_back(&rs[i]);
  return depo_loss(theta, pd, pu, rd, ru, cfg, z0);
}

// Largest relative error among coordinates well above finite-difference noise.
double worst_significant(const std::vector<double>& a, const std::vector<double>& f) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double scale = std::max(std::abs(a[i]), std::abs(f[i]));
    if (scale > 1e-4) worst = std::max(worst, std::abs(a[i] - f[i]) / scale);
  }
  return worst;
}

Outcome reduction_identity() {
  const auto t0 = Clock::now();
  int mismatches = 0;
  const int batches = 60;
  for (int b = 0; b < batches; ++b) {
    const auto seed = static_cast<std::uint64_t>(b);
    const ModelConfig cfg = mini_config(12 + b % 3, 24 + 4 * (b % 3), 1 + b % 2);
    const auto ref = random_policy(cfg, 1000 + seed);
    const auto theta = random_policy(cfg, 2000 + seed);
    Rng rng(seed);
    std::vector<Trajectory> d, u;
    const int nd = 1 + static_cast<int>(uniform_below(rng, 4));
    const int nu = static_cast<int>(uniform_below(rng, 4));
    for (int i = 0; i < nd; ++i)
      d.push_back(random_trajectory(cfg, rng, 1 + static_cast<int>(uniform_below(rng, 3)), Label::Desirable));
    for (int i = 0; i < nu; ++i)
      u.push_back(random_trajectory(cfg, rng, 1 + static_cast<int>(uniform_below(rng, 3)), Label::Undesirable));
    TrainConfig tc;
    tc.alpha1 = tc.alpha2 = 0.0;
    tc.penalty_enabled = false;
    const double got = depo_loss(theta, ref, d, u, tc).report.loss;
    const double want = oracle::vanilla_kto_loss(theta, ref, d, u, tc.beta, tc.lambda_d, tc.lambda_u);
    if (got != want) ++mismatches;
  }
  const double secs = seconds_since(t0);
  return {mismatches == 0 && secs < 10.0,
          std::to_string(batches) + " batches, " + std::to_string(mismatches) + " mismatches, " + fmt("%.1f s", secs)};
}

Outcome gradient_correctness() {
  const auto t0 = Clock::now();
  std::size_t failures = 0, checked = 0;
  double worst = 0.0;
  const double alphas[] = {0.0, 1.0, 3.0};
  const int configs = 24;
  for (int k = 0; k < configs; ++k) {
    const auto seed = static_cast<std::uint64_t>(k);
    const ModelConfig cfg = k % 2 ? mini_config(12, 20) : ModelConfig{10, 20, 6, 2, 2, 4};
    if (cfg.parameter_count() > 1000) return {false, "mini config exceeds 1k parameters"};
    const auto ref = random_policy(cfg, 300 + seed);
    const auto theta = random_policy(cfg, 700 + seed);
    Rng rng(seed);
    const std::vector<Trajectory> d{random_trajectory(cfg, rng, 1 + k % 2, Label::Desirable, 2)};
    const std::vector<Trajectory> u{random_trajectory(cfg, rng, 1, Label::Undesirable, 2)};
    TrainConfig tc;
    tc.alpha1 = tc.alpha2 = alphas[k % 3];
    tc.penalty_enabled = k % 4 == 1;
    const auto base = loss_with_z0(theta, ref, d, u, tc, std::nullopt);
    // z0 is detached, so the numeric derivative holds it at its base value.
    const auto numeric = oracle::finite_difference(
        [&](const std::vector<double>& x) {
          return loss_with_z0(PolicyParams{cfg, x}, ref, d, u, tc, base.report.z0).report.loss;
        },
        theta.values, 1e-5);
    auto c = oracle::compare_gradients(base.gradient, numeric, 1e-4);
    failures += c.failures;
    checked += c.checked;
    worst = std::max(worst, worst_significant(base.gradient, numeric));

    const auto sft = sft_loss(theta, d);
    const auto sft_numeric = oracle::finite_difference(
        [&](const std::vector<double>& x) { return sft_loss(PolicyParams{cfg, x}, d).report.loss; }, theta.values,
        1e-5);
    c = oracle::compare_gradients(sft.gradient, sft_numeric, 1e-4);
    failures += c.failures;
    checked += c.checked;
    worst = std::max(worst, worst_significant(sft.gradient, sft_numeric));
  }
  const double secs = seconds_since(t0);
  return {failures == 0 && secs < 120.0, std::to_string(configs) + " configs, " + std::to_string(checked) +
                                             " coordinates, " + std::to_string(failures) + " failures, worst rel (|g| > 1e-4) " +
                                             fmt("%.2e", worst) + ", " + fmt("%.1f s", secs)};
}

Outcome bonus_arithmetic() {
  struct Case {
    int steps, tokens_per_step;
    Label label;
    double a1, a2, want;
  };
  const Case cases[] = {
      {6, 30, Label::Desirable, 3.0, 3.0, 0.6},  {2, 4, Label::Desirable, 1.0, 1.0, 0.75},
      {1, 8, Label::Desirable, 3.0, 3.0, 3.375}, {4, 16, Label::Desirable, 2.0, 0.0, 0.125},
      {6, 30, Label::Desirable, 0.0, 0.0, 0.0},  {6, 30, Label::Undesirable, 3.0, 3.0, 0.0},
  };
  int bad = 0;
  for (const auto& c : cases) {
    const auto t = sized_trajectory(c.steps, c.tokens_per_step, c.label);
    if (efficiency_bonus(t, c.a1, c.a2) != c.want) ++bad;
  }
  const double b = efficiency_bonus(sized_trajectory(6, 30, Label::Desirable), 3.0, 3.0);
  return {bad == 0, std::to_string(std::size(cases)) + " hand values, b(30 tokens, 6 steps) = " + fmt("%.17g", b)};
}

Outcome mcts_oracle() {
  const auto t0 = Clock::now();
  EnvParams p;
  p.grid.width = p.grid.height = 3;
  const Environment env(p);
  SearchConfig cfg;
  cfg.simulations = 500;
  cfg.max_depth = 6;
  int tasks = 0, runs = 0, hits = 0;
  for (std::uint64_t k = 0; tasks < 20; ++k) {
    const auto task = env.make_task(EnvKind::GridWorld, k);
    const auto best = oracle::optimal_reward(env, task, 6);
    if (!best) continue;
    ++tasks;
    for (std::uint64_t s = 0; s < 5; ++s) {
      cfg.seed = s;
      HeuristicActor actor(0.3);
      double found = 0.0;
      for (const auto& t : search(env, task, cfg, actor)) found = std::max(found, *t.final_reward);
      ++runs;
      if (found == *best) ++hits;
    }
  }
  const double secs = seconds_since(t0);
  const double rate = static_cast<double>(hits) / runs;
  return {rate >= 0.95 && secs < 60.0, std::to_string(hits) + "/" + std::to_string(runs) + " runs optimal, " +
                                           fmt("%.1f s", secs)};
}

Outcome labeling_partition() {
  const LabelConfig cfg = gridworld_label_preset();
  Rng rng(55);
  std::vector<Trajectory> in;
  const std::size_t n = 10000;
  for (std::size_t i = 0; i < n; ++i) {
    // A quarter of the rewards sit on the 0.1 grid so thresholds are hit exactly.
    const double r = uniform_below(rng, 4) == 0 ? 0.1 * static_cast<double>(uniform_below(rng, 11)) : uniform01(rng);
    const int steps = 1 + static_cast<int>(uniform_below(rng, 12));
    auto t = sized_trajectory(steps, 2 + static_cast<int>(uniform_below(rng, 20)), Label::Discard, r);
    t.label.reset();
    t.task.id = "t" + std::to_string(i);
    in.push_back(std::move(t));
  }
  const auto d = build_dataset(in, cfg, truncation_rephraser(static_cast<std::size_t>(cfg.rephrase_budget)));
  std::map<std::string, Label> got;
  for (const auto& t : d.desirable) got[t.task.id] = Label::Desirable;
  for (const auto& t : d.undesirable) got[t.task.id] = Label::Undesirable;
  std::size_t mismatches = 0, want_d = 0, want_u = 0, want_x = 0;
  for (const auto& t : in) {
    const Label want = oracle::relabel(*t.final_reward, t.steps.size(), cfg);
    const auto it = got.find(t.task.id);
    const Label have = it == got.end() ? Label::Discard : it->second;
    if (want != have) ++mismatches;
    (want == Label::Desirable ? want_d : want == Label::Undesirable ? want_u : want_x)++;
  }
  const bool conserved = d.desirable.size() + d.undesirable.size() + d.discarded_count == n;
  return {mismatches == 0 && conserved,
          "D/U/discard " + std::to_string(d.desirable.size()) + "/" + std::to_string(d.undesirable.size()) + "/" +
              std::to_string(d.discarded_count) + " (oracle " + std::to_string(want_d) + "/" + std::to_string(want_u) +
              "/" + std::to_string(want_x) + "), " + std::to_string(mismatches) + " mismatches"};
}

Outcome metrics_oracle() {
  Rng rng(77);
  std::vector<Trajectory> trajs;
  for (int i = 0; i < 500; ++i) {
    const int steps = 1 + static_cast<int>(uniform_below(rng, 30));
    const int per = 2 + static_cast<int>(uniform_below(rng, 24));
    auto t = sized_trajectory(steps, per, Label::Discard, uniform01(rng));
    t.label.reset();
    t.success = uniform_below(rng, 3) == 0;
    t.provenance = Provenance::Eval;
    trajs.push_back(std::move(t));
  }
  const auto m = compute_metrics(trajs);
  const auto o = oracle::recompute_metrics(trajs);
  const double got[] = {m.success_rate, m.mean_reward, m.tokens_all, m.steps_all, m.tokens_succ, m.steps_succ};
  const double want[] = {o.success_rate, o.mean_reward, o.tokens_all, o.steps_all, o.tokens_succ, o.steps_succ};
  double worst = 0.0;
  for (int i = 0; i < 6; ++i) {
    const double scale = std::max(std::abs(got[i]), std::abs(want[i]));
    if (scale > 0) worst = std::max(worst, std::abs(got[i] - want[i]) / scale);
  }
  return {worst <= 1e-12, "500 trajectories, worst rel " + fmt("%.2e", worst)};
}

// Desk experiment shared by criteria 7 and 8.
PipelineConfig desk_config(const fs::path& root) {
  PipelineConfig cfg;
  cfg.set_seed(1);
  cfg.env_kind = EnvKind::GridWorld;
  cfg.tasks = 40;
  cfg.env.grid.view_radius = 4;
  cfg.search.simulations = 25;
  cfg.search.max_depth = 20;
  cfg.policy = ModelConfig{cfg.policy.vocab_size, 128, 32, 2, 4, 64};
  cfg.max_step_tokens = 20;
  cfg.train.epochs = 8;
  cfg.train.batch_size = 8;
  cfg.train.learning_rate = 0.002;
  cfg.eval.episodes = 100;
  cfg.paths.root = root;
  validate(cfg);
  return cfg;
}

struct DeskRun {
  std::size_t desirable = 0, undesirable = 0;
  std::map<std::string, MetricsReport> metrics;
};

// Runs generate -> label -> sft, then post-trains each named variant from the
// BC checkpoint. Variants: kto, depo, depo_penalty.
DeskRun desk_experiment(const fs::path& root, const std::vector<std::string>& variants) {
  PipelineConfig cfg = desk_config(root);
  std::ostringstream log;
  const fs::path data = cfg.paths.data(), ckpts = cfg.paths.checkpoints();
  cmd_generate(cfg, cfg.tasks, data / kTrajectoriesFile, log);
  const auto labeled = cmd_label(cfg, data / kTrajectoriesFile, data, log);
  DeskRun run;
  run.desirable = labeled.desirable.size();
  run.undesirable = labeled.undesirable.size();

  const auto train = [&](const PipelineConfig& c, LossKind kind, const std::string& name) {
    TrainPaths p;
    p.data_dir = data;
    if (kind != LossKind::SFT) p.reference = ckpts / "bc.ckpt";
    p.output = ckpts / (name + ".ckpt");
    p.log = ckpts / (name + "_train_log.jsonl");
    cmd_train(c, kind, p, log);
    run.metrics[name] = cmd_eval(c, p.output, EvalOutputs{c.paths.reports(), name, {}, {}}, log);
  };
  train(cfg, LossKind::SFT, "bc");

  PipelineConfig post = cfg;
  post.train.epochs = 3;
  post.train.learning_rate = 0.0005;
  for (const auto& v : variants) {
    PipelineConfig c = post;
    if (v == "depo_penalty") c.train.penalty_enabled = true;
    train(c, v == "kto" ? LossKind::KTO : LossKind::DEPO, v);
  }
  return run;
}

std::string row(const std::string& name, const MetricsReport& m) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "    %-13s Succ %.2f  T@All %7.2f  S@All %6.2f", name.c_str(), m.success_rate,
                m.tokens_all, m.steps_all);
  return buf;
}

Outcome directional_efficiency() {
  const auto t0 = Clock::now();
  const auto run = desk_experiment(fresh_dir("criterion7"), {"kto", "depo"});
  const double secs = seconds_since(t0);
  const auto& bc = run.metrics.at("bc");
  const auto& kto = run.metrics.at("kto");
  const auto& dp = run.metrics.at("depo");
  struct Check {
    const char* what;
    bool ok;
  };
  const Check checks[] = {
      {"labeled >= 300", run.desirable + run.undesirable >= 300},
      {"T@All <= 0.9 BC", dp.tokens_all <= 0.9 * bc.tokens_all},
      {"T@All <= 1.05 KTO", dp.tokens_all <= 1.05 * kto.tokens_all},
      {"S@All <= 1.05 KTO", dp.steps_all <= 1.05 * kto.steps_all},
      {"Succ >= BC - 0.05", dp.success_rate >= bc.success_rate - 0.05},
      {"runtime < 15 min", secs < 900.0},
  };
  bool pass = true;
  std::string detail = std::to_string(run.desirable) + " D / " + std::to_string(run.undesirable) + " U, " +
                       fmt("%.0f s", secs) + "\n" + row("bc", bc) + "\n" + row("kto", kto) + "\n" + row("depo", dp);
  for (const auto& c : checks) {
    pass = pass && c.ok;
    detail += std::string("\n    ") + (c.ok ? "ok   " : "MISS ") + c.what;
  }
  return {pass, detail};
}

Outcome penalty_ablation() {
  const auto run = desk_experiment(fresh_dir("criterion8"), {"depo", "depo_penalty"});
  const auto& dp = run.metrics.at("depo");
  const auto& pen = run.metrics.at("depo_penalty");
  return {pen.success_rate <= dp.success_rate + 0.02,
          "\n" + row("depo", dp) + "\n" + row("depo_penalty", pen)};
}

Outcome sample_efficiency() {
  const auto t0 = Clock::now();
  PipelineConfig cfg;
  cfg.set_seed(4);
  cfg.tasks = 12;
  cfg.env.grid.view_radius = 4;
  cfg.search.simulations = 25;
  cfg.search.max_depth = 20;
  cfg.policy = ModelConfig{cfg.policy.vocab_size, 128, 16, 1, 2, 16};
  cfg.max_step_tokens = 20;
  cfg.train.epochs = 2;
  cfg.train.batch_size = 8;
  cfg.train.learning_rate = 0.002;
  cfg.paths.root = fresh_dir("criterion9");
  validate(cfg);
  std::ostringstream log;
  const fs::path data = cfg.paths.data();
  cmd_generate(cfg, cfg.tasks, data / kTrajectoriesFile, log);
  const auto full = cmd_label(cfg, data / kTrajectoriesFile, data, log);
  TrainPaths bc;
  bc.data_dir = data;
  bc.output = cfg.paths.checkpoints() / "bc.ckpt";
  bc.log = cfg.paths.checkpoints() / "bc_train_log.jsonl";
  cmd_train(cfg, LossKind::SFT, bc, log);

  const double fractions[] = {0.25, 0.5, 0.75, 1.0};
  bool sizes_ok = true;
  for (double f : fractions) {
    const auto s = cmd_subset(cfg, f, data, data / ("subset_" + std::to_string(static_cast<int>(f * 100))), log);
    const auto want_d = static_cast<std::size_t>(std::llround(f * static_cast<double>(full.desirable.size())));
    const auto want_u = static_cast<std::size_t>(std::llround(f * static_cast<double>(full.undesirable.size())));
    sizes_ok = sizes_ok && s.desirable.size() == want_d && s.undesirable.size() == want_u;
  }

  int monotone = 0;
  std::string losses;
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    PipelineConfig c = cfg;
    c.train.seed = seed;
    double prev = std::numeric_limits<double>::infinity();
    bool ok = true;
    losses += "\n    seed " + std::to_string(seed) + ":";
    for (double f : fractions) {
      const fs::path dir = data / ("sweep_" + std::to_string(seed) + "_" + std::to_string(static_cast<int>(f * 100)));
      write_labeled(subset(full, f, seed), dir);
      TrainPaths p;
      p.data_dir = dir;
      p.reference = bc.output;
      p.output = dir / "depo.ckpt";
      p.log = dir / "depo_train_log.jsonl";
      const double loss = cmd_train(c, LossKind::DEPO, p, log).epochs.back().loss;
      losses += fmt(" %.4f", loss);
      ok = ok && loss <= prev;
      prev = loss;
    }
    if (ok) ++monotone;
  }
  const double secs = seconds_since(t0);
  return {sizes_ok && monotone >= 3, std::string("subset sizes ") + (sizes_ok ? "exact" : "WRONG") + ", monotone on " +
                                         std::to_string(monotone) + "/4 seeds, " + fmt("%.0f s", secs) + losses};
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::map<std::string, std::string> tree_bytes(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = file_bytes(e.path());
  return out;
}

Outcome determinism() {
  std::map<std::string, std::string> trees[2];
  for (int r = 0; r < 2; ++r) {
    PipelineConfig cfg;
    cfg.set_seed(3);
    cfg.tasks = 4;
    cfg.env.grid.width = cfg.env.grid.height = 4;
    cfg.search.simulations = 40;
    cfg.search.max_depth = 12;
    cfg.policy = ModelConfig{cfg.policy.vocab_size, 128, 16, 1, 2, 16};
    cfg.max_step_tokens = 20;
    cfg.train.epochs = 1;
    cfg.train.batch_size = 16;
    cfg.eval.episodes = 4;
    cfg.paths.root = fresh_dir("criterion10_run" + std::to_string(r));
    validate(cfg);
    std::ostringstream log;
    const fs::path data = cfg.paths.data(), ckpts = cfg.paths.checkpoints();
    cmd_generate(cfg, cfg.tasks, data / kTrajectoriesFile, log);
    cmd_label(cfg, data / kTrajectoriesFile, data, log);
    for (const auto kind : {LossKind::SFT, LossKind::DEPO}) {
      const std::string name = kind == LossKind::SFT ? "bc" : "depo";
      TrainPaths p;
      p.data_dir = data;
      if (kind != LossKind::SFT) p.reference = ckpts / "bc.ckpt";
      p.output = ckpts / (name + ".ckpt");
      p.log = ckpts / (name + "_train_log.jsonl");
      p.epoch_dir = ckpts / (name + "_epochs");
      cmd_train(cfg, kind, p, log);
    }
    cmd_eval(cfg, ckpts / "depo.ckpt", EvalOutputs{cfg.paths.reports(), "depo", ckpts / "bc.ckpt", {}}, log);
    cmd_report(cfg, log);
    trees[r] = tree_bytes(cfg.paths.root);
  }
  std::size_t differing = 0;
  for (const auto& [name, bytes] : trees[0]) {
    const auto it = trees[1].find(name);
    if (it == trees[1].end() || it->second != bytes) ++differing;
  }
  const bool same_set = trees[0].size() == trees[1].size();
  return {same_set && differing == 0 && !trees[0].empty(),
          std::to_string(trees[0].size()) + " files compared, " + std::to_string(differing) + " differ"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  int only = 0;
  std::string work = (fs::temp_directory_path() / "depo_acceptance").string();
  app.add_option("--only", only, "run a single criterion (1-10)")->check(CLI::Range(1, 10));
  app.add_option("--work", work, "scratch directory for pipeline runs");
  CLI11_PARSE(app, argc, argv);
  work_root = work;

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"reduction identity", reduction_identity},
      {"gradient correctness", gradient_correctness},
      {"bonus arithmetic", bonus_arithmetic},
      {"MCTS oracle", mcts_oracle},
      {"labeling partition", labeling_partition},
      {"metrics oracle", metrics_oracle},
      {"directional efficiency", directional_efficiency},
      {"penalty ablation", penalty_ablation},
      {"sample-efficiency mechanics", sample_efficiency},
      {"determinism", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (only != 0 && only != id) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << criteria[i].first << "): " << o.detail
              << std::endl;
    if (!o.pass) ++failed;
  }
  return failed == 0 ? 0 : 1;
}

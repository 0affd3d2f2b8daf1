// depo: generate -> label -> sft -> kto/depo -> eval -> report.

#include <CLI11.hpp>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "depo/errors.hpp"
#include "depo/pipeline.hpp"

namespace fs = std::filesystem;
using namespace depo;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

std::optional<fs::path> opt_path(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return fs::path(s);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual-efficiency preference optimization pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_root;
  app.add_option("--config", config_path, "pipeline config (JSON)");
  app.add_option("--seed", seed, "global seed (overrides the config)");
  app.add_option("--out", out_root, "output root directory (overrides paths.root)");

  auto* gen = app.add_subcommand("generate", "search trajectories with MCTS");
  std::optional<int> tasks;
  std::string gen_out;
  gen->add_option("--tasks", tasks, "number of tasks (default env.tasks)");
  gen->add_option("--output", gen_out, "dataset file (default <data>/trajectories.jsonl)");

  auto* lab = app.add_subcommand("label", "label trajectories desirable/undesirable");
  std::string lab_in, lab_out;
  lab->add_option("--in", lab_in, "dataset file (default <data>/trajectories.jsonl)");
  lab->add_option("--out-dir", lab_out, "output directory (default <data>)");

  struct TrainFlags {
    std::string data, ref, init, output;
  };
  TrainFlags tf[3];
  const LossKind kinds[3] = {LossKind::SFT, LossKind::KTO, LossKind::DEPO};
  CLI::App* trainers[3];
  const char* names[3] = {"sft", "kto", "depo"};
  const char* about[3] = {"behavioral cloning on desirable trajectories",
                          "KTO post-training from the BC checkpoint",
                          "efficiency-aware KTO post-training from the BC checkpoint"};
  for (int i = 0; i < 3; ++i) {
    trainers[i] = app.add_subcommand(names[i], about[i]);
    trainers[i]->add_option("--data", tf[i].data, "labeled data directory (default <data>)");
    trainers[i]->add_option("--init", tf[i].init, "initial checkpoint");
    trainers[i]->add_option("--output", tf[i].output, "output checkpoint");
    if (i > 0) trainers[i]->add_option("--ref", tf[i].ref, "reference checkpoint (default <checkpoints>/bc.ckpt)");
  }

  auto* ev = app.add_subcommand("eval", "roll out a checkpoint and report metrics");
  std::string ev_ckpt, ev_compare, ev_name, ev_dump;
  ev->add_option("--checkpoint", ev_ckpt, "checkpoint to evaluate")->required();
  ev->add_option("--compare", ev_compare, "baseline checkpoint for relative deltas");
  ev->add_option("--name", ev_name, "report name (default checkpoint stem)");
  ev->add_option("--dump-episodes", ev_dump, "write the episodes as a trajectory dataset");

  auto* sub = app.add_subcommand("subset", "stratified subsample of a labeled dataset");
  double fraction = 1.0;
  std::string sub_in, sub_out;
  sub->add_option("--fraction", fraction, "fraction in (0, 1]")->required();
  sub->add_option("--in", sub_in, "labeled data directory (default <data>)");
  sub->add_option("--out-dir", sub_out, "output directory (default <data>/subset_<percent>)");

  auto* rep = app.add_subcommand("report", "tabulate metric reports");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    PipelineConfig cfg = config_path.empty() ? PipelineConfig{} : load_config(config_path);
    if (seed) cfg.set_seed(*seed);
    if (!out_root.empty()) cfg.paths.root = out_root;
    validate(cfg);
    const fs::path data = cfg.paths.data();
    const fs::path ckpts = cfg.paths.checkpoints();

    if (gen->parsed()) {
      cmd_generate(cfg, tasks.value_or(cfg.tasks), gen_out.empty() ? data / kTrajectoriesFile : fs::path(gen_out),
                   std::cout);
    } else if (lab->parsed()) {
      cmd_label(cfg, lab_in.empty() ? data / kTrajectoriesFile : fs::path(lab_in),
                lab_out.empty() ? data : fs::path(lab_out), std::cout);
    } else if (ev->parsed()) {
      EvalOutputs outs{cfg.paths.reports(), ev_name, opt_path(ev_compare), opt_path(ev_dump)};
      cmd_eval(cfg, ev_ckpt, outs, std::cout);
    } else if (sub->parsed()) {
      const fs::path in = sub_in.empty() ? data : fs::path(sub_in);
      const fs::path out =
          sub_out.empty() ? data / ("subset_" + std::to_string(static_cast<int>(fraction * 100 + 0.5))) : fs::path(sub_out);
      cmd_subset(cfg, fraction, in, out, std::cout);
    } else if (rep->parsed()) {
      cmd_report(cfg, std::cout);
    } else {
      for (int i = 0; i < 3; ++i) {
        if (!trainers[i]->parsed()) continue;
        const std::string default_name = i == 0 ? "bc" : names[i];
        TrainPaths p;
        p.data_dir = tf[i].data.empty() ? data : fs::path(tf[i].data);
        if (i > 0) p.reference = tf[i].ref.empty() ? ckpts / "bc.ckpt" : fs::path(tf[i].ref);
        p.init = opt_path(tf[i].init);
        p.output = tf[i].output.empty() ? ckpts / (default_name + ".ckpt") : fs::path(tf[i].output);
        p.log = p.output.parent_path() / (p.output.stem().string() + "_train_log.jsonl");
        p.epoch_dir = p.output.parent_path() / (p.output.stem().string() + "_epochs");
        cmd_train(cfg, kinds[i], p, std::cout);
      }
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}

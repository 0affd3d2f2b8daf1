#include "depo/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numeric>
#include <ostream>
#include <sstream>

#include "depo/errors.hpp"
#include "depo/parallel.hpp"

namespace depo {
namespace {

namespace fs = std::filesystem;

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

std::vector<Trajectory> read_required(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("input file not found: " + path.string());
  return read_dataset(path);
}

PolicyParams load_required(const fs::path& path, const ModelConfig& expected, const char* what) {
  if (!fs::exists(path)) throw ConfigError(std::string(what) + " checkpoint not found: " + path.string());
  return load_checkpoint(path, expected);
}

}  // namespace

std::vector<Trajectory> generate_trajectories(const PipelineConfig& cfg, int tasks) {
  validate(cfg);
  const Environment env(cfg.env);
  std::optional<PolicyParams> rollout_params;
  if (cfg.search.rollout_policy == RolloutPolicy::LearnedPolicy) {
    if (!cfg.paths.rollout_checkpoint) {
      throw ConfigError("rollout_policy LearnedPolicy needs paths.rollout_checkpoint");
    }
    rollout_params = load_required(cfg.paths.root / *cfg.paths.rollout_checkpoint, cfg.policy, "rollout");
  }
  std::vector<std::vector<Trajectory>> per_task(static_cast<std::size_t>(std::max(tasks, 0)));
  parallel_for(per_task.size(), [&](std::size_t k) {
    const Persona& persona = cfg.personas[k % cfg.personas.size()];
    const Task task = env.make_task(cfg.env_kind, mix_seed(cfg.seed, k));
    SearchConfig sc = cfg.search;
    sc.tree_verbose_prob = persona.verbose_prob;
    std::unique_ptr<Actor> actor;
    switch (sc.rollout_policy) {
      case RolloutPolicy::UniformRandom:
        actor = std::make_unique<UniformRandomActor>();
        break;
      case RolloutPolicy::Heuristic:
        actor = std::make_unique<HeuristicActor>(persona.noise, persona.verbose_prob);
        break;
      case RolloutPolicy::LearnedPolicy:
        actor = std::make_unique<LearnedPolicyActor>(*rollout_params, cfg.rollout_temperature, cfg.max_step_tokens);
        break;
    }
    per_task[k] = search(env, task, sc, *actor);
  });
  std::vector<Trajectory> out;
  for (auto& v : per_task) {
    for (auto& t : v) out.push_back(std::move(t));
  }
  return out;
}

GenerateSummary cmd_generate(const PipelineConfig& cfg, int tasks, const fs::path& out_file, std::ostream& log) {
  if (tasks < 0) throw ConfigError("task count must be >= 0");
  if (tasks == 0) log << "warning: 0 tasks requested; writing an empty dataset\n";
  const auto trajs = generate_trajectories(cfg, tasks);
  write_dataset(trajs, out_file);
  GenerateSummary s;
  s.tasks = tasks;
  s.trajectories = trajs.size();
  s.reward_histogram.assign(10, 0);
  for (const auto& t : trajs) {
    const double r = t.final_reward.value_or(0.0);
    s.reward_histogram[std::min<std::size_t>(9, static_cast<std::size_t>(std::floor(std::clamp(r, 0.0, 1.0) * 10)))]++;
  }
  log << "tasks: " << tasks << "\ntrajectories: " << s.trajectories << "\nreward histogram:\n";
  for (std::size_t b = 0; b < 10; ++b) {
    log << "  [" << b / 10.0 << ", " << (b + 1) / 10.0 << (b == 9 ? "]" : ")") << "  " << s.reward_histogram[b] << "\n";
  }
  log << "wrote " << out_file.string() << "\n";
  return s;
}

void write_labeled(const LabeledDataset& data, const fs::path& dir) {
  write_dataset(data.desirable, dir / kDesirableFile);
  write_dataset(data.undesirable, dir / kUndesirableFile);
}

LabeledDataset read_labeled(const fs::path& dir, bool need_undesirable) {
  LabeledDataset d;
  d.desirable = read_required(dir / kDesirableFile);
  if (need_undesirable || fs::exists(dir / kUndesirableFile)) d.undesirable = read_required(dir / kUndesirableFile);
  for (const auto& t : d.desirable) {
    if (t.label != Label::Desirable) throw FormatError(t.task.id + " in " + kDesirableFile + " is not labeled Desirable");
  }
  for (const auto& t : d.undesirable) {
    if (t.label != Label::Undesirable) {
      throw FormatError(t.task.id + " in " + kUndesirableFile + " is not labeled Undesirable");
    }
  }
  return d;
}

LabeledDataset cmd_label(const PipelineConfig& cfg, const fs::path& in_file, const fs::path& out_dir, std::ostream& log) {
  validate(cfg.labeling);
  const auto trajs = read_required(in_file);
  LabeledDataset data = build_dataset(trajs, cfg.labeling, make_rephraser(cfg));
  write_labeled(data, out_dir);
  nlohmann::ordered_json j;
  j["input"] = trajs.size();
  j["desirable"] = data.desirable.size();
  j["undesirable"] = data.undesirable.size();
  j["discarded"] = data.discarded_count;
  j["duplicates"] = data.duplicate_count;
  write_text(out_dir / kLabelCountsFile, j.dump(2) + "\n");
  log << "input: " << trajs.size() << "\ndesirable: " << data.desirable.size()
      << "\nundesirable: " << data.undesirable.size() << "\ndiscarded: " << data.discarded_count
      << " (duplicates " << data.duplicate_count << ")\n";
  return data;
}

TrainResult cmd_train(const PipelineConfig& cfg, LossKind kind, const TrainPaths& paths, std::ostream& log) {
  validate(cfg);
  std::optional<PolicyParams> ref;
  if (kind != LossKind::SFT) {
    if (!paths.reference) throw ConfigError("a reference (behavioral cloning) checkpoint is required");
    ref = load_required(*paths.reference, cfg.policy, "reference");
  }
  PolicyParams init;
  if (paths.init) {
    init = load_required(*paths.init, cfg.policy, "initial");
  } else if (ref) {
    init = *ref;
  } else {
    init = make_policy(cfg.policy, mix_seed(cfg.train.seed, 0x696e6974));
  }
  const LabeledDataset data = read_labeled(paths.data_dir, kind != LossKind::SFT);
  if (fs::exists(paths.log)) fs::remove(paths.log);
  TrainOutputs outs{paths.epoch_dir, paths.log};
  TrainResult result = train(init, ref ? *ref : init, data, cfg.train, kind, outs);
  save_checkpoint(result.params, paths.output);
  log << to_string(kind) << ": " << data.desirable.size() << " desirable, "
      << (kind == LossKind::SFT ? 0 : data.undesirable.size()) << " undesirable, " << cfg.train.epochs << " epochs\n";
  for (std::size_t e = 0; e < result.epochs.size(); ++e) {
    log << "  epoch " << e + 1 << " loss " << result.epochs[e].loss << "\n";
  }
  log << "wrote " << paths.output.string() << "\n";
  return result;
}

MetricsReport cmd_eval(const PipelineConfig& cfg, const fs::path& checkpoint, const EvalOutputs& outputs,
                       std::ostream& log) {
  validate(cfg);
  const PolicyParams params = load_required(checkpoint, cfg.policy, "evaluated");
  std::optional<PolicyParams> baseline;
  if (outputs.compare) baseline = load_required(*outputs.compare, cfg.policy, "baseline");
  const Environment env(cfg.env);
  const auto evaluate = [&](const PolicyParams& p) {
    const auto episodes = run_episodes(p, env, cfg.env_kind, cfg.eval.episodes, cfg.eval.seed, cfg.max_step_tokens);
    MetricsReport m = compute_metrics(episodes, cfg.eval.success_threshold);
    m.seed = cfg.eval.seed;
    return std::make_pair(m, episodes);
  };
  const auto [metrics, episodes] = evaluate(params);
  const std::string name = outputs.name.empty() ? checkpoint.stem().string() : outputs.name;
  const std::string text = format_report(metrics, name);
  write_text(outputs.report_dir / (name + ".txt"), text);
  write_text(outputs.report_dir / (name + "_metrics.jsonl"), report_json_line(metrics, name) + "\n");
  if (outputs.dump_episodes) write_dataset(episodes, *outputs.dump_episodes);
  log << text;
  if (baseline) {
    const MetricsReport base = evaluate(*baseline).first;
    const std::string base_name = outputs.compare->stem().string();
    const std::string cmp = format_comparison(compare_metrics(base, metrics), base_name, name);
    write_text(outputs.report_dir / (name + "_vs_" + base_name + ".txt"), cmp);
    log << cmp;
  }
  return metrics;
}

LabeledDataset subset(const LabeledDataset& data, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("subset fraction must be in (0, 1]");
  const auto take = [&](const std::vector<Trajectory>& src, std::uint64_t stream) {
    std::vector<std::size_t> idx(src.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(mix_seed(seed, stream));
    shuffle(std::span<std::size_t>(idx), rng);
    const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(src.size())));
    std::vector<Trajectory> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) out.push_back(src[idx[i]]);
    return out;
  };
  LabeledDataset out;
  out.desirable = take(data.desirable, 1);
  out.undesirable = take(data.undesirable, 2);
  return out;
}

LabeledDataset cmd_subset(const PipelineConfig& cfg, double fraction, const fs::path& in_dir, const fs::path& out_dir,
                          std::ostream& log) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("subset fraction must be in (0, 1]");
  const LabeledDataset full = read_labeled(in_dir);
  LabeledDataset part = subset(full, fraction, cfg.seed);
  write_labeled(part, out_dir);
  log << "subset " << fraction << ": " << part.desirable.size() << "/" << full.desirable.size() << " desirable, "
      << part.undesirable.size() << "/" << full.undesirable.size() << " undesirable\n";
  return part;
}

std::map<std::string, MetricsReport> cmd_report(const PipelineConfig& cfg, std::ostream& log) {
  const fs::path dir = cfg.paths.reports();
  if (!fs::is_directory(dir)) throw ConfigError("report directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string n = e.path().filename().string();
    if (e.is_regular_file() && n.size() > 14 && n.ends_with("_metrics.jsonl")) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::map<std::string, MetricsReport> out;
  for (const auto& f : files) {
    std::ifstream is(f);
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      const auto name = nlohmann::json::parse(line).value("name", f.stem().string());
      out[name] = parse_report_json_line(line);
    }
  }
  std::ostringstream os;
  char buf[200];
  std::snprintf(buf, sizeof(buf), "%-16s %8s %8s %8s %8s %8s %8s %6s\n", "model", "Succ.", "Re.", "T@All", "S@All",
                "T@Succ.", "S@Succ.", "n");
  os << buf;
  for (const auto& [name, m] : out) {
    std::snprintf(buf, sizeof(buf), "%-16s %8.3f %8.3f %8.2f %8.2f %8.2f %8.2f %6zu%s\n", name.substr(0, 16).c_str(),
                  m.success_rate, m.mean_reward, m.tokens_all, m.steps_all, m.tokens_succ, m.steps_succ, m.episodes,
                  m.low_success ? "  *" : "");
    os << buf;
  }
  if (std::any_of(out.begin(), out.end(), [](const auto& kv) { return kv.second.low_success; })) {
    os << "* Succ. below 0.2\n";
  }
  write_text(dir / "summary.txt", os.str());
  log << os.str();
  return out;
}

}  // namespace depo

#include "depo/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <nlohmann/json.hpp>
#include <sstream>

#include "depo/errors.hpp"
#include "depo/parallel.hpp"

namespace depo {
namespace {

std::size_t agent_tokens(const Trajectory& t) {
  std::size_t n = 0;
  for (const auto& s : t.steps) n += s.agent_token_count();
  return n;
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

}  // namespace

Trajectory run_episode(const Environment& env, const Task& task, Actor& actor, Rng& rng) {
  const ResetResult start = env.reset(task);
  Trajectory traj;
  traj.task = task;
  traj.initial_observation = start.observation.tokens;
  traj.provenance = Provenance::Eval;
  EnvState state = start.state;
  while (!state.terminal) {
    const EpisodeView view{env, task, traj.initial_observation, traj.steps, state};
    ActorDecision d = actor.act(view, rng);
    StepResult r = env.step(state, d.action);
    AgentStep step;
    step.thought_tokens = std::move(d.thought);
    step.action = std::move(d.action);
    step.action_tokens = std::move(d.action_tokens);
    step.observation_tokens = std::move(r.observation.tokens);
    step.legal = r.legal;
    traj.steps.push_back(std::move(step));
    state = std::move(r.state);
  }
  traj.final_reward = env.final_reward(state);
  traj.success = env.success(state);
  return traj;
}

std::vector<Trajectory> run_episodes(const Environment& env, EnvKind kind, int n, std::uint64_t seed,
                                     const ActorFactory& make_actor) {
  if (n < 1) throw std::invalid_argument("run_episodes needs n >= 1");
  std::vector<Trajectory> out(static_cast<std::size_t>(n));
  parallel_for(out.size(), [&](std::size_t i) {
    const std::uint64_t task_seed = seed + i;
    const Task task = env.make_task(kind, task_seed);
    auto actor = make_actor();
    Rng rng(mix_seed(task_seed, 0x6576616c));
    out[i] = run_episode(env, task, *actor, rng);
  });
  return out;
}

std::vector<Trajectory> run_episodes(const PolicyParams& params, const Environment& env, EnvKind kind, int n,
                                     std::uint64_t seed, int max_step_tokens) {
  return run_episodes(env, kind, n, seed, [&]() -> std::unique_ptr<Actor> {
    return std::make_unique<LearnedPolicyActor>(params, 0.0, max_step_tokens);
  });
}

MetricsReport compute_metrics(std::span<const Trajectory> trajs, double success_threshold) {
  if (trajs.empty()) throw std::invalid_argument("compute_metrics on an empty episode list");
  MetricsReport m;
  m.episodes = trajs.size();
  // Integer totals and a sorted reward sum keep the result independent of
  // episode order.
  std::uint64_t tokens = 0, steps = 0, tokens_s = 0, steps_s = 0;
  std::vector<double> rewards;
  rewards.reserve(trajs.size());
  for (const auto& t : trajs) {
    if (!t.final_reward) throw ContractViolation("episode " + t.task.id + " has no final reward");
    const bool ok = t.success ? *t.success : *t.final_reward >= success_threshold;
    const std::uint64_t tk = agent_tokens(t);
    const std::uint64_t st = t.steps.size();
    rewards.push_back(*t.final_reward);
    tokens += tk;
    steps += st;
    if (ok) {
      ++m.successes;
      tokens_s += tk;
      steps_s += st;
    }
  }
  std::sort(rewards.begin(), rewards.end());
  double reward = 0.0;
  for (double r : rewards) reward += r;
  const auto n = static_cast<double>(m.episodes);
  m.success_rate = static_cast<double>(m.successes) / n;
  m.mean_reward = reward / n;
  m.tokens_all = static_cast<double>(tokens) / n;
  m.steps_all = static_cast<double>(steps) / n;
  if (m.successes > 0) {
    const auto ns = static_cast<double>(m.successes);
    m.tokens_succ = static_cast<double>(tokens_s) / ns;
    m.steps_succ = static_cast<double>(steps_s) / ns;
  }
  m.no_success = m.successes == 0;
  m.low_success = m.success_rate < 0.2;
  return m;
}

std::string format_report(const MetricsReport& m, const std::string& title) {
  std::ostringstream os;
  os << title << " (" << m.episodes << " episodes, seed " << m.seed << ")\n";
  os << "  Succ.    " << fixed(m.success_rate, 4) << "\n";
  os << "  Re.      " << fixed(m.mean_reward, 4) << "\n";
  os << "  T@All    " << fixed(m.tokens_all, 2) << "\n";
  os << "  S@All    " << fixed(m.steps_all, 2) << "\n";
  os << "  T@Succ.  " << fixed(m.tokens_succ, 2) << (m.no_success ? "  (no successes)" : "") << "\n";
  os << "  S@Succ.  " << fixed(m.steps_succ, 2) << (m.no_success ? "  (no successes)" : "") << "\n";
  if (m.low_success) os << "  note: Succ. below 0.2\n";
  return os.str();
}

std::string report_json_line(const MetricsReport& m, const std::string& name) {
  nlohmann::ordered_json j;
  j["name"] = name;
  j["episodes"] = m.episodes;
  j["seed"] = m.seed;
  j["successes"] = m.successes;
  j["success_rate"] = m.success_rate;
  j["mean_reward"] = m.mean_reward;
  j["tokens_all"] = m.tokens_all;
  j["steps_all"] = m.steps_all;
  j["tokens_succ"] = m.tokens_succ;
  j["steps_succ"] = m.steps_succ;
  j["no_success"] = m.no_success;
  j["low_success"] = m.low_success;
  return j.dump();
}

MetricsReport parse_report_json_line(const std::string& line) {
  try {
    const auto j = nlohmann::json::parse(line);
    MetricsReport m;
    m.episodes = j.at("episodes").get<std::size_t>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.successes = j.at("successes").get<std::size_t>();
    m.success_rate = j.at("success_rate").get<double>();
    m.mean_reward = j.at("mean_reward").get<double>();
    m.tokens_all = j.at("tokens_all").get<double>();
    m.steps_all = j.at("steps_all").get<double>();
    m.tokens_succ = j.at("tokens_succ").get<double>();
    m.steps_succ = j.at("steps_succ").get<double>();
    m.no_success = j.at("no_success").get<bool>();
    m.low_success = j.at("low_success").get<bool>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed metrics record: ") + e.what());
  }
}

std::vector<MetricDelta> compare_metrics(const MetricsReport& baseline, const MetricsReport& candidate) {
  const std::pair<const char*, double MetricsReport::*> fields[] = {
      {"Succ.", &MetricsReport::success_rate}, {"Re.", &MetricsReport::mean_reward},
      {"T@All", &MetricsReport::tokens_all},   {"S@All", &MetricsReport::steps_all},
      {"T@Succ.", &MetricsReport::tokens_succ}, {"S@Succ.", &MetricsReport::steps_succ},
  };
  std::vector<MetricDelta> out;
  for (const auto& [name, field] : fields) {
    MetricDelta d{name, baseline.*field, candidate.*field, std::nullopt};
    if (d.baseline != 0.0) {
      d.percent = (d.candidate - d.baseline) / d.baseline * 100.0;
    } else if (d.candidate == 0.0) {
      d.percent = 0.0;
    }
    out.push_back(d);
  }
  return out;
}

std::string format_comparison(const std::vector<MetricDelta>& deltas, const std::string& baseline_name,
                              const std::string& candidate_name) {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof(line), "%-9s %12s %12s %10s\n", "metric", baseline_name.substr(0, 12).c_str(),
                candidate_name.substr(0, 12).c_str(), "delta");
  os << line;
  for (const auto& d : deltas) {
    const std::string pct = d.percent ? fixed(*d.percent, 1) + "%" : "n/a";
    std::snprintf(line, sizeof(line), "%-9s %12.4f %12.4f %10s\n", d.metric.c_str(), d.baseline, d.candidate,
                  pct.c_str());
    os << line;
  }
  return os.str();
}

}  // namespace depo

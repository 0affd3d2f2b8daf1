#include "depo/trajectory.hpp"

#include <fstream>
#include <nlohmann/json.hpp>

#include "depo/errors.hpp"

namespace depo {
namespace {

using ojson = nlohmann::ordered_json;

Tokens read_tokens(const ojson& j) {
  Tokens out;
  out.reserve(j.size());
  for (const auto& t : j) {
    const auto id = t.get<long long>();
    if (!vocab().valid(static_cast<TokenId>(id)) || id != static_cast<TokenId>(id)) {
      throw FormatError("token id " + std::to_string(id) + " outside vocabulary");
    }
    out.push_back(static_cast<TokenId>(id));
  }
  return out;
}

}  // namespace

std::string_view to_string(Label label) {
  switch (label) {
    case Label::Desirable:
      return "Desirable";
    case Label::Undesirable:
      return "Undesirable";
    case Label::Discard:
      return "Discard";
  }
  return "?";
}

std::string_view to_string(Provenance provenance) {
  switch (provenance) {
    case Provenance::MCTS:
      return "MCTS";
    case Provenance::Rollout:
      return "Rollout";
    case Provenance::Eval:
      return "Eval";
  }
  return "?";
}

Label parse_label(std::string_view name) {
  if (name == "Desirable") return Label::Desirable;
  if (name == "Undesirable") return Label::Undesirable;
  if (name == "Discard") return Label::Discard;
  throw FormatError("unknown label '" + std::string(name) + "'");
}

Provenance parse_provenance(std::string_view name) {
  if (name == "MCTS") return Provenance::MCTS;
  if (name == "Rollout") return Provenance::Rollout;
  if (name == "Eval") return Provenance::Eval;
  throw FormatError("unknown provenance '" + std::string(name) + "'");
}

Tokens AgentStep::output_tokens() const {
  Tokens out = thought_tokens;
  out.insert(out.end(), action_tokens.begin(), action_tokens.end());
  return out;
}

Tokens action_segment(const EnvAction& action) {
  Tokens out = {tok::kEot};
  const auto body = serialize_action(action);
  out.insert(out.end(), body.begin(), body.end());
  out.push_back(tok::kEos);
  return out;
}

AgentStep make_step(Tokens thought, EnvAction action, Tokens observation, bool legal) {
  AgentStep s;
  s.thought_tokens = std::move(thought);
  s.action_tokens = action_segment(action);
  s.action = std::move(action);
  s.observation_tokens = std::move(observation);
  s.legal = legal;
  return s;
}

TokenStats token_stats(const Trajectory& traj) {
  if (traj.steps.empty()) throw ContractViolation("token_stats on a trajectory without steps");
  TokenStats s;
  s.total_steps = traj.steps.size();
  for (const auto& step : traj.steps) s.total_tokens += step.agent_token_count();
  s.mean_tokens_per_step = static_cast<double>(s.total_tokens) / static_cast<double>(s.total_steps);
  return s;
}

std::string action_sequence_key(const Trajectory& traj) {
  std::string key = std::string(to_string(traj.task.env_kind)) + "|" + traj.task.id + "|" +
                    std::to_string(traj.task.seed);
  for (const auto& s : traj.steps) {
    key += '|';
    for (auto t : s.action_tokens) {
      key += std::to_string(t);
      key += ',';
    }
  }
  return key;
}

std::string serialize_trajectory(const Trajectory& traj) {
  ojson j;
  j["task_id"] = traj.task.id;
  j["env_kind"] = to_string(traj.task.env_kind);
  j["seed"] = traj.task.seed;
  j["instruction"] = traj.task.instruction_tokens;
  j["initial_observation"] = traj.initial_observation;
  ojson steps = ojson::array();
  for (const auto& s : traj.steps) {
    ojson step;
    step["thought"] = s.thought_tokens;
    step["action"] = {{"verb", to_string(s.action.verb)}, {"args", s.action.args}, {"tokens", s.action_tokens}};
    step["observation"] = s.observation_tokens;
    step["legal"] = s.legal;
    steps.push_back(std::move(step));
  }
  j["steps"] = std::move(steps);
  j["final_reward"] = traj.final_reward ? ojson(*traj.final_reward) : ojson(nullptr);
  j["success"] = traj.success ? ojson(*traj.success) : ojson(nullptr);
  j["label"] = traj.label ? ojson(to_string(*traj.label)) : ojson(nullptr);
  j["provenance"] = to_string(traj.provenance);
  return j.dump();
}

Trajectory parse_trajectory(std::string_view line) {
  ojson j;
  try {
    j = ojson::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("invalid JSON: ") + e.what());
  }
  try {
    Trajectory t;
    t.task.id = j.at("task_id").get<std::string>();
    try {
      t.task.env_kind = parse_env_kind(j.at("env_kind").get<std::string>());
    } catch (const ConfigError& e) {
      throw FormatError(e.what());
    }
    t.task.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("instruction")) t.task.instruction_tokens = read_tokens(j["instruction"]);
    if (j.contains("initial_observation")) t.initial_observation = read_tokens(j["initial_observation"]);
    for (const auto& s : j.at("steps")) {
      AgentStep step;
      step.thought_tokens = read_tokens(s.at("thought"));
      const auto& a = s.at("action");
      const auto verb = parse_verb(a.at("verb").get<std::string>());
      if (!verb) throw FormatError("unknown verb '" + a.at("verb").get<std::string>() + "'");
      step.action.verb = *verb;
      step.action.args = read_tokens(a.at("args"));
      step.action_tokens = a.contains("tokens") ? read_tokens(a["tokens"]) : action_segment(step.action);
      step.observation_tokens = read_tokens(s.at("observation"));
      step.legal = s.at("legal").get<bool>();
      t.steps.push_back(std::move(step));
    }
    if (!j.at("final_reward").is_null()) t.final_reward = j["final_reward"].get<double>();
    if (j.contains("success") && !j["success"].is_null()) t.success = j["success"].get<bool>();
    if (!j.at("label").is_null()) t.label = parse_label(j["label"].get<std::string>());
    t.provenance = parse_provenance(j.at("provenance").get<std::string>());
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("invalid record: ") + e.what());
  }
}

std::size_t write_dataset(const std::vector<Trajectory>& trajs, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  for (const auto& t : trajs) out << serialize_trajectory(t) << '\n';
  if (!out) throw std::runtime_error("write to " + path.string() + " failed");
  return trajs.size();
}

std::vector<Trajectory> read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<Trajectory> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(parse_trajectory(line));
    } catch (const FormatError& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace depo

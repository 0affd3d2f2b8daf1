#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "depo/envs.hpp"
#include "depo/vocab.hpp"

namespace depo {

enum class Label { Desirable, Undesirable, Discard };
enum class Provenance { MCTS, Rollout, Eval };

std::string_view to_string(Label label);
std::string_view to_string(Provenance provenance);
Label parse_label(std::string_view name);
Provenance parse_provenance(std::string_view name);

// One ReAct turn. The agent emits thought_tokens followed by action_tokens;
// action_tokens is the emitted action segment: <eot> verb args <eos> for a
// well-formed step, or whatever the policy produced when it was unparseable.
struct AgentStep {
  Tokens thought_tokens;
  EnvAction action;
  Tokens action_tokens;
  Tokens observation_tokens;  // o_{t+1}, environment-emitted
  bool legal = true;

  std::size_t agent_token_count() const { return thought_tokens.size() + action_tokens.size(); }
  // thought ++ action segment: what the policy scores for this step.
  Tokens output_tokens() const;

  bool operator==(const AgentStep&) const = default;
};

// Canonical action segment for a well-formed step.
Tokens action_segment(const EnvAction& action);

// Builds a step with the canonical action segment.
AgentStep make_step(Tokens thought, EnvAction action, Tokens observation, bool legal = true);

struct Trajectory {
  Task task;
  Tokens initial_observation;  // o_1
  std::vector<AgentStep> steps;
  std::optional<double> final_reward;
  std::optional<bool> success;  // environment success predicate at termination
  std::optional<Label> label;
  Provenance provenance = Provenance::MCTS;

  std::size_t step_count() const { return steps.size(); }
  bool operator==(const Trajectory&) const = default;
};

struct TokenStats {
  double mean_tokens_per_step = 0.0;
  std::size_t total_steps = 0;
  std::size_t total_tokens = 0;
};

// Agent-emitted tokens only; observations are excluded. Throws
// ContractViolation for a trajectory without steps.
TokenStats token_stats(const Trajectory& traj);

// Key identifying a trajectory's task and action sequence; used for de-duplication.
std::string action_sequence_key(const Trajectory& traj);

// Line-delimited dataset: one JSON object per trajectory.
std::string serialize_trajectory(const Trajectory& traj);
Trajectory parse_trajectory(std::string_view line);  // throws FormatError

std::size_t write_dataset(const std::vector<Trajectory>& trajs, const std::filesystem::path& path);
// Throws FormatError naming the 1-based line number of a malformed record.
std::vector<Trajectory> read_dataset(const std::filesystem::path& path);

}  // namespace depo

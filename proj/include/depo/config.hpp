#pragma once

// Pipeline configuration: one JSON document with sections env, search,
// labeling, policy, train, eval and paths. Unknown keys are rejected.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "depo/envs.hpp"
#include "depo/labeling.hpp"
#include "depo/mcts.hpp"
#include "depo/model.hpp"
#include "depo/train.hpp"

namespace depo {

// Scripted data-generation actor: tasks cycle through the persona list.
struct Persona {
  double noise = 0.0;
  double verbose_prob = 0.0;
};

std::vector<Persona> default_personas();

struct EvalConfig {
  int episodes = 100;
  std::uint64_t seed = 1'000'000;
  double success_threshold = 1.0;  // used only for episodes without a stored predicate
};

struct PathsConfig {
  std::filesystem::path root = ".";
  std::filesystem::path data_dir = "data";
  std::filesystem::path checkpoint_dir = "checkpoints";
  std::filesystem::path report_dir = "reports";
  std::optional<std::filesystem::path> rollout_checkpoint;  // for rollout_policy LearnedPolicy

  std::filesystem::path data() const { return root / data_dir; }
  std::filesystem::path checkpoints() const { return root / checkpoint_dir; }
  std::filesystem::path reports() const { return root / report_dir; }
};

struct PipelineConfig {
  std::uint64_t seed = 0;

  EnvKind env_kind = EnvKind::GridWorld;
  int tasks = 20;
  EnvParams env;

  SearchConfig search;
  std::vector<Persona> personas = default_personas();

  LabelConfig labeling = gridworld_label_preset();
  std::string rephraser = "truncate";  // "truncate" or "identity"

  ModelConfig policy;
  int max_step_tokens = 24;
  double rollout_temperature = 1.0;

  TrainConfig train;
  EvalConfig eval;
  PathsConfig paths;

  // Section seeds given explicitly in the file; otherwise they follow `seed`.
  bool search_seed_set = false;
  bool train_seed_set = false;

  void set_seed(std::uint64_t s);
};

// Throws ConfigError naming the offending key or violated invariant.
PipelineConfig parse_config(const std::string& json_text);
PipelineConfig load_config(const std::filesystem::path& path);
void validate(const PipelineConfig& cfg);
std::string to_json(const PipelineConfig& cfg);

Rephraser make_rephraser(const PipelineConfig& cfg);

}  // namespace depo

#include "fixtures.hpp"

namespace depo::testing {

ModelConfig mini_config(int vocab, int context, int layers) {
  return ModelConfig{vocab, context, 8, layers, 2, 8};
}

PolicyParams random_policy(const ModelConfig& cfg, std::uint64_t seed, double stddev) {
  PolicyParams p{cfg, std::vector<double>(cfg.parameter_count())};
  Rng rng(seed);
  for (auto& x : p.values) x = stddev * standard_normal(rng);
  return p;
}

namespace {

TokenId content(const ModelConfig& cfg, Rng& rng) {
  return static_cast<TokenId>(7 + uniform_below(rng, static_cast<std::uint64_t>(cfg.vocab_size - 7)));
}

}  // namespace

AgentStep random_step(const ModelConfig& cfg, Rng& rng, int max_thought) {
  AgentStep s;
  const auto n = uniform_below(rng, static_cast<std::uint64_t>(max_thought + 1));
  for (std::uint64_t i = 0; i < n; ++i) s.thought_tokens.push_back(content(cfg, rng));
  const TokenId arg = content(cfg, rng);
  s.action = EnvAction{Verb::Noop, {arg}};
  s.action_tokens = {tok::kEot, arg, tok::kEos};
  const auto m = 1 + uniform_below(rng, 3);
  for (std::uint64_t i = 0; i < m; ++i) s.observation_tokens.push_back(content(cfg, rng));
  return s;
}

Trajectory random_trajectory(const ModelConfig& cfg, Rng& rng, int steps, std::optional<Label> label,
                             int max_thought) {
  Trajectory t;
  t.task.id = "toy-" + std::to_string(rng() % 100000);
  t.task.instruction_tokens = {content(cfg, rng), content(cfg, rng)};
  t.initial_observation = {content(cfg, rng)};
  for (int i = 0; i < steps; ++i) t.steps.push_back(random_step(cfg, rng, max_thought));
  t.final_reward = 1.0;
  t.success = true;
  t.label = label;
  return t;
}

AgentStep sized_step(int thought, int action) {
  AgentStep s;
  s.thought_tokens.assign(static_cast<std::size_t>(thought), 7);
  if (action >= 1) {
    s.action_tokens.assign(static_cast<std::size_t>(action), 8);
    s.action_tokens.back() = tok::kEos;
  }
  s.action = EnvAction{Verb::Noop, {}};
  return s;
}

Trajectory sized_trajectory(int steps, int tokens_per_step, Label label, double reward) {
  Trajectory t;
  t.task.id = "sized";
  t.task.instruction_tokens = {7};
  t.initial_observation = {8};
  for (int i = 0; i < steps; ++i) t.steps.push_back(sized_step(tokens_per_step - 2, 2));
  t.final_reward = reward;
  t.success = reward >= 1.0;
  t.label = label;
  return t;
}

}  // namespace depo::testing

#pragma once

// Acting interfaces used by tree search rollouts and evaluation, plus the
// scripted actors that stand in for a large model during data generation.

#include <memory>
#include <span>

#include "depo/envs.hpp"
#include "depo/rng.hpp"
#include "depo/trajectory.hpp"

namespace depo {

struct EpisodeView {
  const Environment& env;
  const Task& task;
  const Tokens& initial_observation;
  std::span<const AgentStep> steps;  // steps taken so far in this episode
  const EnvState& state;
};

struct ActorDecision {
  Tokens thought;
  EnvAction action;
  Tokens action_tokens;  // emitted action segment, ending with <eos>
};

class Actor {
 public:
  virtual ~Actor() = default;
  virtual ActorDecision act(const EpisodeView& episode, Rng& rng) = 0;
};

enum class ThoughtStyle { Concise, Verbose };

// "I see X; I will do Y" style thought describing `action` from `state`.
Tokens templated_thought(const Environment& env, const EnvState& state, const EnvAction& action,
                         ThoughtStyle style);

// The scripted solver's preferred action (no noise).
EnvAction scripted_action(const Environment& env, const EnvState& state, Rng& rng);

class UniformRandomActor final : public Actor {
 public:
  ActorDecision act(const EpisodeView& episode, Rng& rng) override;
};

// Scripted per-environment solver. With probability `noise` it takes a uniformly
// random legal action instead; each thought is verbose with probability
// `verbose_prob`.
class HeuristicActor final : public Actor {
 public:
  HeuristicActor(double noise = 0.0, double verbose_prob = 0.0) : noise_(noise), verbose_prob_(verbose_prob) {}
  ActorDecision act(const EpisodeView& episode, Rng& rng) override;

  double noise() const { return noise_; }
  double verbose_prob() const { return verbose_prob_; }

 private:
  double noise_;
  double verbose_prob_;
};

// Actor that always emits the no-op action with an empty thought.
class NoopActor final : public Actor {
 public:
  ActorDecision act(const EpisodeView& episode, Rng& rng) override;
};

}  // namespace depo

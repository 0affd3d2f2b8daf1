#include <doctest.h>

#include "depo/actors.hpp"

using namespace depo;

namespace {

struct Played {
  EnvState state;
  std::vector<AgentStep> steps;
};

Played play(const Environment& env, const Task& task, Actor& actor, std::uint64_t seed) {
  Rng rng(seed);
  auto [state, obs] = env.reset(task);
  Played p;
  while (!state.terminal) {
    const EpisodeView view{env, task, obs.tokens, p.steps, state};
    auto d = actor.act(view, rng);
    auto r = env.step(state, d.action);
    AgentStep s;
    s.thought_tokens = d.thought;
    s.action = d.action;
    s.action_tokens = d.action_tokens;
    s.observation_tokens = r.observation.tokens;
    s.legal = r.legal;
    p.steps.push_back(s);
    state = r.state;
  }
  p.state = state;
  return p;
}

}  // namespace

TEST_CASE("noise-free heuristic solves small grids") {
  EnvParams params;
  params.grid.width = params.grid.height = 3;
  const Environment env(params);
  HeuristicActor actor;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto p = play(env, env.make_task(EnvKind::GridWorld, seed), actor, seed);
    CHECK(env.success(p.state));
    CHECK(p.steps.size() <= 6);
    for (const auto& s : p.steps) CHECK(s.legal);
  }
}

TEST_CASE("noise-free heuristic buys the exact item in three steps") {
  const Environment env;
  HeuristicActor actor;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto p = play(env, env.make_task(EnvKind::ShopSim, seed), actor, seed);
    CHECK(env.final_reward(p.state) == 1.0);
    CHECK(p.steps.size() == 3);
  }
}

TEST_CASE("decisions are well formed") {
  const Environment env;
  UniformRandomActor random;
  HeuristicActor noisy(0.5, 0.5);
  for (Actor* actor : std::initializer_list<Actor*>{&random, &noisy}) {
    for (auto kind : {EnvKind::GridWorld, EnvKind::ShopSim}) {
      for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto p = play(env, env.make_task(kind, seed), *actor, seed);
        for (const auto& s : p.steps) {
          CHECK(s.legal);
          CHECK_FALSE(s.thought_tokens.empty());
          CHECK(s.action_tokens == action_segment(s.action));
          for (auto t : s.thought_tokens) CHECK(t >= 7);
        }
      }
    }
  }
}

TEST_CASE("verbose thoughts are longer") {
  const Environment env;
  for (auto kind : {EnvKind::GridWorld, EnvKind::ShopSim}) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto state = env.reset(env.make_task(kind, seed)).state;
      Rng rng(seed);
      const auto a = scripted_action(env, state, rng);
      CHECK(templated_thought(env, state, a, ThoughtStyle::Verbose).size() >
            templated_thought(env, state, a, ThoughtStyle::Concise).size());
    }
  }
}

TEST_CASE("actors are deterministic given the rng") {
  const Environment env;
  HeuristicActor actor(0.3, 0.5);
  const auto task = env.make_task(EnvKind::GridWorld, 8);
  CHECK(play(env, task, actor, 4).steps == play(env, task, actor, 4).steps);
}

TEST_CASE("no-op actor runs to the horizon") {
  const Environment env;
  NoopActor actor;
  const auto p = play(env, env.make_task(EnvKind::GridWorld, 2), actor, 0);
  CHECK(p.steps.size() == static_cast<std::size_t>(env.params().grid.max_steps));
  CHECK(p.steps[0].thought_tokens.empty());
  CHECK(p.steps[0].agent_token_count() == 3);
}

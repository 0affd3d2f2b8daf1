#pragma once

// Shared builders for unit tests: tiny architectures, random parameters and
// synthetic trajectories over a small token range.

#include <cstdint>
#include <vector>

#include "depo/policy.hpp"
#include "depo/trajectory.hpp"

namespace depo::testing {

// About 800 parameters; token ids 7..vocab-1 carry content.
ModelConfig mini_config(int vocab = 12, int context = 16, int layers = 1);

// Parameters drawn with a larger spread than the training init so that
// attention and softmax are far from uniform.
PolicyParams random_policy(const ModelConfig& cfg, std::uint64_t seed, double stddev = 0.5);

// Random step: thought of 0..max_thought content tokens, action segment
// <eot> x <eos>, observation of 1..3 content tokens.
AgentStep random_step(const ModelConfig& cfg, Rng& rng, int max_thought = 3);

// Trajectory with the given number of steps over the mini vocabulary.
Trajectory random_trajectory(const ModelConfig& cfg, Rng& rng, int steps, std::optional<Label> label = {},
                             int max_thought = 3);

// Step with exactly `thought` thought tokens and `action` action tokens.
AgentStep sized_step(int thought, int action);

// Trajectory of `steps` steps each with `tokens_per_step` agent tokens.
Trajectory sized_trajectory(int steps, int tokens_per_step, Label label, double reward = 1.0);

}  // namespace depo::testing

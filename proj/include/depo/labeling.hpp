#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "depo/trajectory.hpp"

namespace depo {

struct LabelConfig {
  double kappa0 = 0.9;
  double kappa1 = 0.9;
  double kappa2 = 0.7;
  int step_threshold = 7;
  bool require_strict_margin = false;
  int rephrase_budget = 12;  // thought-token budget of the default rephraser
};

// Threshold presets: GridWorld uses [0.9, 1] / [0.7, 0.9); ShopSim requires r == 1.
LabelConfig gridworld_label_preset();
LabelConfig shopsim_label_preset();

// Throws ConfigError naming the violated ordering 0 < k2 < k1 <= k0 <= 1.
void validate(const LabelConfig& cfg);

struct LabeledDataset {
  std::vector<Trajectory> desirable;
  std::vector<Trajectory> undesirable;
  // Below-threshold trajectories plus duplicates dropped by de-duplication,
  // so |desirable| + |undesirable| + discarded_count equals the input size.
  std::size_t discarded_count = 0;
  std::size_t duplicate_count = 0;
};

Label label_by_reward(const Trajectory& traj, const LabelConfig& cfg);
Label filter_by_steps(Label label, const Trajectory& traj, const LabelConfig& cfg);

struct RephraseContext {
  const Trajectory& trajectory;
  std::size_t step_index;
};

// Pure function: thought tokens x context -> rewritten thought tokens.
using Rephraser = std::function<Tokens(std::span<const TokenId> thought, const RephraseContext& ctx)>;

Rephraser identity_rephraser();
Rephraser truncation_rephraser(std::size_t budget);

// Rewrites thoughts only. For Desirable trajectories a step whose rewrite is
// longer than the original keeps the original, so tokens per step never grow.
// Throws std::out_of_range if the rephraser emits a token outside the vocabulary.
Trajectory rephrase(const Trajectory& traj, const Rephraser& rephraser);

// label_by_reward -> filter_by_steps -> rephrase, then de-duplication by
// action sequence within each set.
LabeledDataset build_dataset(std::span<const Trajectory> trajs, const LabelConfig& cfg, const Rephraser& rephraser);

}  // namespace depo

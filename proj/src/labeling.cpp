#include "depo/labeling.hpp"

#include <stdexcept>
#include <string>
#include <unordered_set>

#include "depo/errors.hpp"

namespace depo {

LabelConfig gridworld_label_preset() { return {0.9, 0.9, 0.7, 7, false, 12}; }

LabelConfig shopsim_label_preset() { return {1.0, 0.9, 0.7, 7, false, 12}; }

void validate(const LabelConfig& cfg) {
  if (!(cfg.kappa2 > 0.0)) throw ConfigError("labeling: kappa2 must be > 0");
  if (!(cfg.kappa2 < cfg.kappa1)) throw ConfigError("labeling: kappa2 must be < kappa1");
  if (!(cfg.kappa1 <= cfg.kappa0)) throw ConfigError("labeling: kappa1 must be <= kappa0");
  if (!(cfg.kappa0 <= 1.0)) throw ConfigError("labeling: kappa0 must be <= 1");
  if (cfg.require_strict_margin && !(cfg.kappa0 > cfg.kappa1)) {
    throw ConfigError("labeling: require_strict_margin needs kappa0 > kappa1");
  }
  if (cfg.step_threshold < 1) throw ConfigError("labeling: step_threshold must be >= 1");
  if (cfg.rephrase_budget < 0) throw ConfigError("labeling: rephrase_budget must be >= 0");
}

Label label_by_reward(const Trajectory& traj, const LabelConfig& cfg) {
  if (!traj.final_reward) throw ContractViolation("label_by_reward: trajectory has no final reward");
  const double r = *traj.final_reward;
  if (r >= cfg.kappa0) return Label::Desirable;
  if (r >= cfg.kappa2 && r < cfg.kappa1) return Label::Undesirable;
  return Label::Discard;
}

Label filter_by_steps(Label label, const Trajectory& traj, const LabelConfig& cfg) {
  if (label == Label::Desirable && traj.steps.size() >= static_cast<std::size_t>(cfg.step_threshold)) {
    return Label::Undesirable;
  }
  return label;
}

Rephraser identity_rephraser() {
  return [](std::span<const TokenId> thought, const RephraseContext&) { return Tokens(thought.begin(), thought.end()); };
}

Rephraser truncation_rephraser(std::size_t budget) {
  return [budget](std::span<const TokenId> thought, const RephraseContext&) {
    const auto n = std::min(budget, thought.size());
    return Tokens(thought.begin(), thought.begin() + static_cast<std::ptrdiff_t>(n));
  };
}

Trajectory rephrase(const Trajectory& traj, const Rephraser& rephraser) {
  Trajectory out = traj;
  const bool desirable = traj.label == Label::Desirable;
  for (std::size_t i = 0; i < out.steps.size(); ++i) {
    const auto& original = traj.steps[i].thought_tokens;
    Tokens rewritten = rephraser(original, RephraseContext{traj, i});
    for (auto t : rewritten) {
      if (!vocab().valid(t)) {
        throw std::out_of_range("rephraser emitted token " + std::to_string(t) + " outside the vocabulary");
      }
    }
    if (desirable && rewritten.size() > original.size()) continue;
    out.steps[i].thought_tokens = std::move(rewritten);
  }
  return out;
}

LabeledDataset build_dataset(std::span<const Trajectory> trajs, const LabelConfig& cfg, const Rephraser& rephraser) {
  LabeledDataset out;
  std::unordered_set<std::string> seen_d;
  std::unordered_set<std::string> seen_u;
  for (const auto& t : trajs) {
    const Label label = filter_by_steps(label_by_reward(t, cfg), t, cfg);
    if (label == Label::Discard) {
      ++out.discarded_count;
      continue;
    }
    Trajectory labeled = t;
    labeled.label = label;
    labeled = rephrase(labeled, rephraser);
    const std::string key = action_sequence_key(labeled);
    if (label == Label::Desirable) {
      if (seen_d.insert(key).second) {
        out.desirable.push_back(std::move(labeled));
        continue;
      }
    } else if (seen_u.insert(key).second) {
      out.undesirable.push_back(std::move(labeled));
      continue;
    }
    ++out.duplicate_count;
    ++out.discarded_count;
  }
  return out;
}

}  // namespace depo

#pragma once

// Independent reference implementations used to check the library. They favor
// directness over speed and share no code paths with the routines they check
// beyond the public model forward pass.

#include <functional>
#include <span>
#include <vector>

#include "depo/envs.hpp"
#include "depo/eval.hpp"
#include "depo/labeling.hpp"
#include "depo/policy.hpp"

namespace depo::oracle {

// Log-probability of `output` scored one position at a time: a fresh forward
// pass per prefix, softmax of the last row in long double.
double logprob_by_prefix(const PolicyParams& params, const HistoryEncoding& history, std::span<const TokenId> output);

// Next-token distribution after `prefix` (last-row softmax, long double).
std::vector<double> next_token_probs(const PolicyParams& params, std::span<const TokenId> prefix);

// Central differences of f at x, coordinate by coordinate.
std::vector<double> finite_difference(const std::function<double(const std::vector<double>&)>& f,
                                      std::vector<double> x, double h);

struct GradientCheck {
  std::size_t checked = 0;
  std::size_t failures = 0;
  double worst_relative = 0.0;
};
// |a - f| <= rel_tol * max(|a|, |f|), or |a - f| <= abs_floor for coordinates
// whose gradient is at the finite-difference noise level.
GradientCheck compare_gradients(std::span<const double> analytic, std::span<const double> numeric, double rel_tol,
                                double abs_floor = 1e-9);

// Vanilla KTO loss: per-step log-ratios through step_logprob, reference point
// through kl_to_reference, sigmoid value function.
double vanilla_kto_loss(const PolicyParams& theta, const PolicyParams& ref, std::span<const Trajectory> desirable,
                        std::span<const Trajectory> undesirable, double beta, double lambda_d, double lambda_u);

// Threshold rule plus step filter written out as a decision table.
Label relabel(double reward, std::size_t steps, const LabelConfig& cfg);

// Single-pass recomputation of the six metrics.
MetricsReport recompute_metrics(std::span<const Trajectory> trajs);

// sum_i p_i log(p_i / q_i) in long double.
double kl_direct(std::span<const double> p, std::span<const double> q);

// Best final reward over every action sequence of at most `depth` steps that
// reaches a terminal state; nullopt if none does.
std::optional<double> optimal_reward(const Environment& env, const Task& task, int depth);

}  // namespace depo::oracle

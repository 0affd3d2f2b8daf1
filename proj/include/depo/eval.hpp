#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "depo/actors.hpp"
#include "depo/policy.hpp"

namespace depo {

struct MetricsReport {
  double success_rate = 0.0;  // Succ.
  double mean_reward = 0.0;   // Re.
  double tokens_all = 0.0;    // T@All
  double steps_all = 0.0;     // S@All
  double tokens_succ = 0.0;   // T@Succ.
  double steps_succ = 0.0;    // S@Succ.
  std::size_t episodes = 0;
  std::size_t successes = 0;
  std::uint64_t seed = 0;
  bool no_success = false;
  bool low_success = false;  // Succ. < 0.2; reported, never suppressed

  bool operator==(const MetricsReport&) const = default;
};

// Plays one episode to termination. The trajectory carries the final reward,
// the success predicate and provenance Eval.
Trajectory run_episode(const Environment& env, const Task& task, Actor& actor, Rng& rng);

using ActorFactory = std::function<std::unique_ptr<Actor>()>;

// n episodes with task seeds seed, seed+1, ...; episodes run in parallel, one
// actor per episode.
std::vector<Trajectory> run_episodes(const Environment& env, EnvKind kind, int n, std::uint64_t seed,
                                     const ActorFactory& make_actor);

// Temperature-0 decoding of a learned policy.
std::vector<Trajectory> run_episodes(const PolicyParams& params, const Environment& env, EnvKind kind, int n,
                                     std::uint64_t seed, int max_step_tokens);

// Success comes from the stored environment predicate; trajectories without one
// fall back to final_reward >= success_threshold.
MetricsReport compute_metrics(std::span<const Trajectory> trajs, double success_threshold = 1.0);

std::string format_report(const MetricsReport& m, const std::string& title);
std::string report_json_line(const MetricsReport& m, const std::string& name);
MetricsReport parse_report_json_line(const std::string& line);

// Relative change (candidate - baseline) / baseline in percent; empty when the
// baseline is zero and the candidate is not.
struct MetricDelta {
  std::string metric;
  double baseline = 0.0;
  double candidate = 0.0;
  std::optional<double> percent;
};
std::vector<MetricDelta> compare_metrics(const MetricsReport& baseline, const MetricsReport& candidate);
std::string format_comparison(const std::vector<MetricDelta>& deltas, const std::string& baseline_name,
                              const std::string& candidate_name);

}  // namespace depo

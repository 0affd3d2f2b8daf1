#pragma once

// Monte Carlo tree search over environment states (UCT selection, random
// expansion, actor rollouts, mean-value backpropagation). The tree lives in an
// index-addressed arena; node references are indices.

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include "depo/actors.hpp"
#include "depo/envs.hpp"
#include "depo/rng.hpp"
#include "depo/trajectory.hpp"

namespace depo {

using NodeId = std::size_t;

struct SearchNode {
  EnvState state;
  std::optional<AgentStep> incoming;  // step that led here from the parent
  double q_value = 0.0;
  std::uint64_t visits = 0;
  std::optional<NodeId> parent;
  std::vector<NodeId> children;
  std::vector<EnvAction> untried_actions;
  int depth = 0;
};

enum class RolloutPolicy { UniformRandom, Heuristic, LearnedPolicy };

std::string_view to_string(RolloutPolicy p);
RolloutPolicy parse_rollout_policy(std::string_view name);  // throws ConfigError

struct SearchConfig {
  double exploration_weight = 1.0;
  int max_depth = 64;
  int simulations = 500;
  RolloutPolicy rollout_policy = RolloutPolicy::Heuristic;
  std::uint64_t seed = 0;
  // Probability that a thought attached to a tree edge is verbose.
  double tree_verbose_prob = 0.0;
};

void validate(const SearchConfig& cfg);

class SearchTree {
 public:
  SearchTree(const Environment& env, EnvState root_state, int max_depth);

  const Environment& env() const { return *env_; }
  NodeId root() const { return 0; }
  SearchNode& node(NodeId id) { return nodes_[id]; }
  const SearchNode& node(NodeId id) const { return nodes_[id]; }
  std::size_t size() const { return nodes_.size(); }
  int max_depth() const { return max_depth_; }

  // Appends a child; the caller supplies the resulting state and step.
  NodeId add_child(NodeId parent, EnvState state, AgentStep step);

 private:
  const Environment* env_;
  std::vector<SearchNode> nodes_;
  int max_depth_;
};

// q + w * sqrt(ln(parent_visits) / visits); rejects visits == 0.
double uct_score(double q, std::uint64_t parent_visits, std::uint64_t visits, double w);

// Root-to-leaf path. Stops at the first node that is terminal or still has
// untried actions; unvisited children win over visited ones; ties are broken
// uniformly at random.
std::vector<NodeId> select(const SearchTree& tree, double w, Rng& rng);

// Removes one untried action uniformly at random and adds the resulting child.
NodeId expand(SearchTree& tree, NodeId node, Rng& rng, double verbose_prob = 0.0);

struct RolloutResult {
  double reward = 0.0;
  std::vector<AgentStep> tail;
  bool terminated = false;
};

// Acts from the node's state until terminal or total depth == cfg.max_depth.
// `prefix` holds the tree steps from the root so learned actors see the full
// history.
RolloutResult rollout(const SearchTree& tree, NodeId node, const SearchConfig& cfg, Actor& actor, Rng& rng,
                      const Task& task, const Tokens& initial_observation);

void backpropagate(SearchTree& tree, const std::vector<NodeId>& path, double reward);

// Steps along the tree path from the root to `node`.
std::vector<AgentStep> path_steps(const SearchTree& tree, NodeId node);

// Owns one search tree and the harvested trajectories.
class Searcher {
 public:
  Searcher(const Environment& env, const Task& task, const SearchConfig& cfg, Actor& actor);

  // One select -> expand -> rollout -> backpropagate iteration.
  void iterate();
  void run();  // cfg.simulations iterations

  const SearchTree& tree() const { return tree_; }
  std::uint64_t iterations() const { return iterations_; }
  // Distinct (by action sequence) root-to-end trajectories in discovery order.
  const std::vector<Trajectory>& trajectories() const { return trajectories_; }

 private:
  const Environment& env_;
  Task task_;
  SearchConfig cfg_;
  Actor& actor_;
  Tokens initial_observation_;
  SearchTree tree_;
  Rng rng_;
  std::uint64_t iterations_ = 0;
  std::vector<Trajectory> trajectories_;
  std::unordered_set<std::string> seen_;
};

std::vector<Trajectory> search(const Environment& env, const Task& task, const SearchConfig& cfg, Actor& actor);

}  // namespace depo

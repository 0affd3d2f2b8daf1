#include "depo/mcts.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "depo/errors.hpp"

namespace depo {

std::string_view to_string(RolloutPolicy p) {
  switch (p) {
    case RolloutPolicy::UniformRandom:
      return "UniformRandom";
    case RolloutPolicy::Heuristic:
      return "Heuristic";
    case RolloutPolicy::LearnedPolicy:
      return "LearnedPolicy";
  }
  return "?";
}

RolloutPolicy parse_rollout_policy(std::string_view name) {
  if (name == "UniformRandom") return RolloutPolicy::UniformRandom;
  if (name == "Heuristic") return RolloutPolicy::Heuristic;
  if (name == "LearnedPolicy") return RolloutPolicy::LearnedPolicy;
  throw ConfigError("unknown rollout_policy '" + std::string(name) + "'");
}

void validate(const SearchConfig& cfg) {
  if (!(cfg.exploration_weight >= 0.0)) throw ConfigError("search.exploration_weight must be >= 0");
  if (cfg.max_depth < 1) throw ConfigError("search.max_depth must be >= 1");
  if (cfg.simulations < 1) throw ConfigError("search.simulations must be >= 1");
  if (cfg.tree_verbose_prob < 0.0 || cfg.tree_verbose_prob > 1.0) {
    throw ConfigError("search.tree_verbose_prob must be in [0, 1]");
  }
}

SearchTree::SearchTree(const Environment& env, EnvState root_state, int max_depth)
    : env_(&env), max_depth_(max_depth) {
  SearchNode root;
  root.untried_actions = env.legal_actions(root_state);
  if (max_depth_ <= 0) root.untried_actions.clear();
  root.state = std::move(root_state);
  nodes_.push_back(std::move(root));
}

NodeId SearchTree::add_child(NodeId parent, EnvState state, AgentStep step) {
  SearchNode child;
  child.depth = nodes_[parent].depth + 1;
  if (child.depth < max_depth_) child.untried_actions = env_->legal_actions(state);
  child.state = std::move(state);
  child.incoming = std::move(step);
  child.parent = parent;
  const NodeId id = nodes_.size();
  nodes_.push_back(std::move(child));
  nodes_[parent].children.push_back(id);
  return id;
}

double uct_score(double q, std::uint64_t parent_visits, std::uint64_t visits, double w) {
  if (visits == 0) throw ContractViolation("uct_score requires visits >= 1");
  if (parent_visits < 1) throw ContractViolation("uct_score requires parent_visits >= 1");
  return q + w * std::sqrt(std::log(static_cast<double>(parent_visits)) / static_cast<double>(visits));
}

std::vector<NodeId> select(const SearchTree& tree, double w, Rng& rng) {
  std::vector<NodeId> path = {tree.root()};
  std::vector<NodeId> best;
  for (;;) {
    const SearchNode& n = tree.node(path.back());
    if (n.state.terminal || !n.untried_actions.empty() || n.children.empty()) break;
    best.clear();
    double best_score = -std::numeric_limits<double>::infinity();
    for (NodeId c : n.children) {
      const SearchNode& child = tree.node(c);
      const double score = child.visits == 0 ? std::numeric_limits<double>::infinity()
                                             : uct_score(child.q_value, std::max<std::uint64_t>(n.visits, 1),
                                                         child.visits, w);
      if (score > best_score) {
        best_score = score;
        best.assign(1, c);
      } else if (score == best_score) {
        best.push_back(c);
      }
    }
    const NodeId pick = best.size() == 1 ? best[0] : best[static_cast<std::size_t>(uniform_below(rng, best.size()))];
    path.push_back(pick);
  }
  return path;
}

NodeId expand(SearchTree& tree, NodeId node, Rng& rng, double verbose_prob) {
  SearchNode& n = tree.node(node);
  if (n.state.terminal) throw ContractViolation("expand called on a terminal node");
  if (n.untried_actions.empty()) throw ContractViolation("expand called on a fully expanded node");
  const auto i = static_cast<std::size_t>(uniform_below(rng, n.untried_actions.size()));
  EnvAction action = n.untried_actions[i];
  n.untried_actions.erase(n.untried_actions.begin() + static_cast<std::ptrdiff_t>(i));
  const auto style = uniform01(rng) < verbose_prob ? ThoughtStyle::Verbose : ThoughtStyle::Concise;
  Tokens thought = templated_thought(tree.env(), n.state, action, style);
  StepResult r = tree.env().step(n.state, action);
  AgentStep step = make_step(std::move(thought), std::move(action), std::move(r.observation.tokens), r.legal);
  return tree.add_child(node, std::move(r.state), std::move(step));
}

std::vector<AgentStep> path_steps(const SearchTree& tree, NodeId node) {
  std::vector<AgentStep> steps;
  std::optional<NodeId> cur = node;
  while (cur) {
    const SearchNode& n = tree.node(*cur);
    if (n.incoming) steps.push_back(*n.incoming);
    cur = n.parent;
  }
  std::reverse(steps.begin(), steps.end());
  return steps;
}

namespace {

struct RolloutOutcome {
  RolloutResult result;
  EnvState end_state;
};

RolloutOutcome rollout_impl(const SearchTree& tree, NodeId node, const SearchConfig& cfg, Actor& actor, Rng& rng,
                            const Task& task, const Tokens& initial_observation) {
  const Environment& env = tree.env();
  const SearchNode& start = tree.node(node);
  RolloutOutcome out{{}, start.state};
  std::vector<AgentStep> history = path_steps(tree, node);
  const std::size_t prefix = history.size();
  int depth = start.depth;
  EnvState& state = out.end_state;
  while (!state.terminal && depth < cfg.max_depth) {
    const ActorDecision d = actor.act({env, task, initial_observation, history, state}, rng);
    StepResult r = env.step(state, d.action);
    AgentStep step;
    step.thought_tokens = d.thought;
    step.action = d.action;
    step.action_tokens = d.action_tokens;
    step.observation_tokens = std::move(r.observation.tokens);
    step.legal = r.legal;
    history.push_back(std::move(step));
    state = std::move(r.state);
    ++depth;
  }
  out.result.terminated = state.terminal;
  out.result.reward = state.terminal ? env.final_reward(state) : env.truncated_reward(state);
  out.result.tail.assign(std::make_move_iterator(history.begin() + static_cast<std::ptrdiff_t>(prefix)),
                         std::make_move_iterator(history.end()));
  return out;
}

}  // namespace

RolloutResult rollout(const SearchTree& tree, NodeId node, const SearchConfig& cfg, Actor& actor, Rng& rng,
                      const Task& task, const Tokens& initial_observation) {
  return rollout_impl(tree, node, cfg, actor, rng, task, initial_observation).result;
}

void backpropagate(SearchTree& tree, const std::vector<NodeId>& path, double reward) {
  for (NodeId id : path) {
    SearchNode& n = tree.node(id);
    n.visits += 1;
    n.q_value += (reward - n.q_value) / static_cast<double>(n.visits);
  }
}

Searcher::Searcher(const Environment& env, const Task& task, const SearchConfig& cfg, Actor& actor)
    : env_(env),
      task_(task),
      cfg_(cfg),
      actor_(actor),
      initial_observation_(),
      tree_(env, env.reset(task).state, cfg.max_depth),
      rng_(mix_seed(cfg.seed, task.seed)) {
  validate(cfg_);
  initial_observation_ = env.reset(task).observation.tokens;
}

void Searcher::iterate() {
  std::vector<NodeId> path = select(tree_, cfg_.exploration_weight, rng_);
  const SearchNode& leaf = tree_.node(path.back());
  if (!leaf.state.terminal && !leaf.untried_actions.empty()) {
    path.push_back(expand(tree_, path.back(), rng_, cfg_.tree_verbose_prob));
  }
  RolloutOutcome out = rollout_impl(tree_, path.back(), cfg_, actor_, rng_, task_, initial_observation_);
  backpropagate(tree_, path, out.result.reward);
  ++iterations_;

  Trajectory traj;
  traj.task = task_;
  traj.initial_observation = initial_observation_;
  traj.steps = path_steps(tree_, path.back());
  traj.steps.insert(traj.steps.end(), std::make_move_iterator(out.result.tail.begin()),
                    std::make_move_iterator(out.result.tail.end()));
  if (traj.steps.empty()) return;
  traj.final_reward = out.result.reward;
  traj.success = out.end_state.terminal && env_.success(out.end_state);
  traj.provenance = Provenance::MCTS;
  if (seen_.insert(action_sequence_key(traj)).second) trajectories_.push_back(std::move(traj));
}

void Searcher::run() {
  for (int i = 0; i < cfg_.simulations; ++i) iterate();
}

std::vector<Trajectory> search(const Environment& env, const Task& task, const SearchConfig& cfg, Actor& actor) {
  Searcher s(env, task, cfg, actor);
  s.run();
  return s.trajectories();
}

}  // namespace depo

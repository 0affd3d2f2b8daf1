#pragma once

// Token-level agent policy on top of the transformer: history serialization,
// exact step log-probabilities and their gradients, sampling, KL to a
// reference policy, and the binary checkpoint format.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "depo/actors.hpp"
#include "depo/model.hpp"
#include "depo/trajectory.hpp"

namespace depo {

struct PolicyParams {
  ModelConfig config;
  std::vector<double> values;

  bool operator==(const PolicyParams&) const = default;
};

PolicyParams make_policy(const ModelConfig& cfg, std::uint64_t seed);

// [BOS, INSTR, u..., (OBS, o_i..., AGENT, out_i...)*, OBS, o_t..., AGENT]
struct HistoryEncoding {
  Tokens tokens;
  std::size_t dropped_steps = 0;  // oldest (o_i, out_i) blocks removed to fit
};

// History before step `steps.size()`: `steps` are the turns already taken.
// Oldest turns are dropped until tokens.size() + reserve <= context; throws
// std::length_error when the instruction and current observation alone do not fit.
HistoryEncoding encode_history(std::span<const TokenId> instruction, std::span<const TokenId> initial_observation,
                               std::span<const AgentStep> steps, int context, std::size_t reserve);

// History for scoring step `index` of `traj`, with room for that step's output.
HistoryEncoding step_history(const Trajectory& traj, std::size_t index, int context);

// Sum of log-probabilities of step_output given history. step_output must be
// non-empty and end with <eos>.
double step_logprob(const PolicyParams& params, const HistoryEncoding& history,
                    std::span<const TokenId> step_output);

// Gradient of step_logprob with respect to every parameter.
std::vector<double> logprob_gradient(const PolicyParams& params, const HistoryEncoding& history,
                                     std::span<const TokenId> step_output);

// Mean over output positions of KL(theta || ref) summed over the vocabulary.
double kl_to_reference(const PolicyParams& theta, const PolicyParams& ref, const HistoryEncoding& history,
                       std::span<const TokenId> step_output);

// KL(p || q) of two log-probability rows.
double row_kl(std::span<const double> logp, std::span<const double> logq);

// Autoregressive sampling until <eos> or max_step_tokens; the result always
// ends with <eos>. Temperature 0 is argmax with ties to the lowest id.
Tokens sample_step(const PolicyParams& params, const HistoryEncoding& history, double temperature,
                   int max_step_tokens, Rng& rng);

// Splits a sampled step into thought and action segment and parses the action.
// Output without <eot> or with an unparseable action becomes a flagged no-op.
struct ParsedStep {
  Tokens thought;
  Tokens action_tokens;
  EnvAction action;
  bool parsed = true;
};
ParsedStep parse_step_output(EnvKind kind, std::span<const TokenId> output);

// All per-step quantities of one trajectory under one policy, computed with as
// few forward passes as the context allows. Results are bit-identical to
// calling step_logprob on every step_history.
class TrajectoryPass {
 public:
  TrajectoryPass(const PolicyParams& params, const Trajectory& traj, Exec exec = Exec::Serial);

  std::size_t steps() const { return step_logprob_.size(); }
  const std::vector<double>& step_logprobs() const { return step_logprob_; }
  // Log-softmax rows of every agent-emitted position, steps in order.
  std::span<const double> log_probs() const { return log_probs_; }
  // [first, last) row range of each step.
  const std::vector<std::size_t>& step_row_begin() const { return step_row_begin_; }
  std::size_t rows() const { return targets_.size(); }
  const Tokens& targets() const { return targets_; }

  // grad += sum_t weight[t] * d(step_logprob_t)/d(theta)
  void backward(std::span<const double> step_weights, std::span<double> grad, Exec exec = Exec::Serial) const;

 private:
  struct Window {
    Tokens tokens;
    std::vector<int> rows;
    std::size_t first_row = 0;  // index into targets_
    ForwardCache cache;
  };
  const PolicyParams& params_;
  std::vector<Window> windows_;
  Tokens targets_;
  std::vector<std::size_t> row_step_;
  std::vector<std::size_t> step_row_begin_;
  std::vector<double> log_probs_;
  std::vector<double> step_logprob_;
};

// Per-step KL(theta || ref) from two passes over the same trajectory.
std::vector<double> step_kls(const TrajectoryPass& theta, std::span<const double> ref_log_probs, int vocab_size);

// Actor driven by a learned policy; reuses the decoder state while the
// history only grows.
class LearnedPolicyActor final : public Actor {
 public:
  LearnedPolicyActor(const PolicyParams& params, double temperature, int max_step_tokens);
  ActorDecision act(const EpisodeView& episode, Rng& rng) override;

 private:
  const PolicyParams& params_;
  Transformer model_;
  Decoder decoder_;
  Tokens fed_;
  double temperature_;
  int max_step_tokens_;
};

// Little-endian layout: "DEPOCKPT", u32 version, i32 x 6 architecture
// (vocab, context, d_model, layers, heads, d_ff), u64 count, f64 x count.
inline constexpr std::uint32_t kCheckpointVersion = 1;
void save_checkpoint(const PolicyParams& params, const std::filesystem::path& path);
// Throws FormatError on a malformed file and ConfigError when `expected` is
// given and the stored architecture differs.
PolicyParams load_checkpoint(const std::filesystem::path& path, const std::optional<ModelConfig>& expected = {});

}  // namespace depo

#pragma once

// Training objectives (behavioral cloning, KTO, the efficiency-bonus variant
// and its penalty ablation) and the Adam epoch loop.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "depo/labeling.hpp"
#include "depo/policy.hpp"

namespace depo {

enum class LossKind { SFT, KTO, DEPO };
std::string_view to_string(LossKind kind);

struct TrainConfig {
  double beta = 0.2;
  double lambda_d = 1.0;
  double lambda_u = 1.0;
  double alpha1 = 3.0;
  double alpha2 = 3.0;
  bool penalty_enabled = false;
  double learning_rate = 1e-3;
  int epochs = 3;
  int batch_size = 8;
  std::uint64_t seed = 0;
};

// Throws ConfigError naming the offending field.
void validate(const TrainConfig& cfg);

struct LossReport {
  double loss = 0.0;
  double mean_implied_reward_D = 0.0;
  double mean_implied_reward_U = 0.0;
  double z0 = 0.0;
  double mean_bonus = 0.0;
  double grad_norm = 0.0;
};

struct LossAndGradient {
  LossReport report;
  std::vector<double> gradient;
};

// Token-normalized negative log-likelihood of the agent-emitted tokens.
LossAndGradient sft_loss(const PolicyParams& params, std::span<const Trajectory> batch);

// a1 / mean tokens per step + a2 / steps for Desirable, 0 for Undesirable.
double efficiency_bonus(const Trajectory& traj, double alpha1, double alpha2);
// Mirror image: nonzero only for Undesirable.
double penalty(const Trajectory& traj, double alpha1, double alpha2);

double sigmoid(double x);

// Reference-policy quantities for one trajectory, fixed during training.
struct ReferenceScores {
  std::vector<double> step_logprobs;
  std::vector<double> log_probs;  // log-softmax rows of every agent position
};
ReferenceScores reference_scores(const PolicyParams& ref, const Trajectory& traj);

struct ImpliedReward {
  double value = 0.0;
  double log_ratio = 0.0;  // mean over steps of logpi_theta - logpi_ref
  double offset = 0.0;     // bonus plus penalty, constant in theta
};
ImpliedReward implied_reward(const PolicyParams& theta, const PolicyParams& ref, const Trajectory& traj,
                             const TrainConfig& cfg);
// d(implied reward)/d(theta); the offset contributes nothing.
std::vector<double> implied_reward_gradient(const PolicyParams& theta, const Trajectory& traj);

double kto_value(double r, double z0, Label label, const TrainConfig& cfg);

// Mean over D then U of lambda(tau) - v(tau); z0 is a detached batch mean of
// per-trajectory KLs clamped at zero.
LossAndGradient depo_loss(const PolicyParams& theta, const PolicyParams& ref, std::span<const Trajectory> batch_d,
                          std::span<const Trajectory> batch_u, const TrainConfig& cfg);
// Same, with reference scores precomputed (ref_d[i] belongs to batch_d[i]).
// z0_override replaces the batch KL reference point.
LossAndGradient depo_loss(const PolicyParams& theta, std::span<const Trajectory* const> batch_d,
                          std::span<const Trajectory* const> batch_u, std::span<const ReferenceScores* const> ref_d,
                          std::span<const ReferenceScores* const> ref_u, const TrainConfig& cfg,
                          std::optional<double> z0_override = std::nullopt);

// Forces the settings that make depo_loss the vanilla KTO loss.
TrainConfig as_kto(TrainConfig cfg);

struct TrainOutputs {
  std::optional<std::filesystem::path> checkpoint_dir;  // epoch_<k>.ckpt per epoch
  std::optional<std::filesystem::path> log_path;        // one JSON LossReport per epoch
};

struct TrainResult {
  PolicyParams params;
  std::vector<LossReport> epochs;
};

// Throws ConfigError for an empty training set and std::runtime_error naming
// the epoch and batch when a loss or gradient is not finite.
TrainResult train(const PolicyParams& init, const PolicyParams& ref, const LabeledDataset& data, const TrainConfig& cfg,
                  LossKind kind, const TrainOutputs& outputs = {});

}  // namespace depo

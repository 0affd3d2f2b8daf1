#include "depo/train.hpp"

#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numeric>
#include <string>

#include "depo/errors.hpp"
#include "depo/parallel.hpp"

namespace depo {
namespace {

double efficiency_term(const Trajectory& traj, double alpha1, double alpha2) {
  const TokenStats s = token_stats(traj);
  return alpha1 / s.mean_tokens_per_step + alpha2 / static_cast<double>(s.total_steps);
}

Label require_label(const Trajectory& traj) {
  if (!traj.label || *traj.label == Label::Discard) {
    throw ContractViolation("trajectory " + traj.task.id + " is not labeled Desirable or Undesirable");
  }
  return *traj.label;
}

double offset_for(const Trajectory& traj, const TrainConfig& cfg) {
  double off = efficiency_bonus(traj, cfg.alpha1, cfg.alpha2);
  if (cfg.penalty_enabled) off += penalty(traj, cfg.alpha1, cfg.alpha2);
  return off;
}

double mean_log_ratio(std::span<const double> theta, std::span<const double> ref) {
  double s = 0.0;
  for (std::size_t t = 0; t < theta.size(); ++t) s += theta[t] - ref[t];
  return s / static_cast<double>(theta.size());
}

double mean_of(std::span<const double> xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

double l2_norm(std::span<const double> g) {
  double s = 0.0;
  for (double x : g) s += x * x;
  return std::sqrt(s);
}

// Sums per-sample gradients in sample order.
std::vector<double> ordered_sum(const std::vector<std::vector<double>>& parts, std::size_t size) {
  std::vector<double> g(size, 0.0);
  for (const auto& p : parts) {
    for (std::size_t j = 0; j < size; ++j) g[j] += p[j];
  }
  return g;
}

class Adam {
 public:
  explicit Adam(std::size_t n, double lr) : m_(n, 0.0), v_(n, 0.0), lr_(lr) {}

  void step(std::vector<double>& params, std::span<const double> grad) {
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    for (std::size_t j = 0; j < params.size(); ++j) {
      m_[j] = kBeta1 * m_[j] + (1.0 - kBeta1) * grad[j];
      v_[j] = kBeta2 * v_[j] + (1.0 - kBeta2) * grad[j] * grad[j];
      const double mhat = m_[j] / c1;
      const double vhat = v_[j] / c2;
      params[j] -= lr_ * mhat / (std::sqrt(vhat) + kEps);
    }
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;
  std::vector<double> m_, v_;
  double lr_;
  std::uint64_t t_ = 0;
};

bool finite_all(const LossAndGradient& lg) {
  if (!std::isfinite(lg.report.loss)) return false;
  for (double g : lg.gradient) {
    if (!std::isfinite(g)) return false;
  }
  return true;
}

}  // namespace

std::string_view to_string(LossKind kind) {
  switch (kind) {
    case LossKind::SFT:
      return "SFT";
    case LossKind::KTO:
      return "KTO";
    case LossKind::DEPO:
      return "DEPO";
  }
  return "?";
}

void validate(const TrainConfig& cfg) {
  const auto positive = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(std::string("train.") + name + " must be > 0");
  };
  positive(cfg.beta, "beta");
  positive(cfg.lambda_d, "lambda_d");
  positive(cfg.lambda_u, "lambda_u");
  if (!(cfg.alpha1 >= 0.0) || !std::isfinite(cfg.alpha1)) throw ConfigError("train.alpha1 must be >= 0");
  if (!(cfg.alpha2 >= 0.0) || !std::isfinite(cfg.alpha2)) throw ConfigError("train.alpha2 must be >= 0");
  if (!(cfg.learning_rate >= 0.0) || !std::isfinite(cfg.learning_rate)) {
    throw ConfigError("train.learning_rate must be >= 0");
  }
  if (cfg.epochs < 0) throw ConfigError("train.epochs must be >= 0");
  if (cfg.batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

LossAndGradient sft_loss(const PolicyParams& params, std::span<const Trajectory> batch) {
  if (batch.empty()) throw std::invalid_argument("sft_loss on an empty batch");
  std::size_t total_tokens = 0;
  for (const auto& t : batch) {
    if (t.steps.empty()) throw std::invalid_argument("sft_loss on a trajectory without steps");
    total_tokens += token_stats(t).total_tokens;
  }
  const double scale = -1.0 / static_cast<double>(total_tokens);
  std::vector<double> sums(batch.size());
  std::vector<std::vector<double>> grads(batch.size());
  parallel_for(batch.size(), [&](std::size_t i) {
    const TrajectoryPass pass(params, batch[i]);
    double s = 0.0;
    for (double lp : pass.step_logprobs()) s += lp;
    sums[i] = s;
    grads[i].assign(params.values.size(), 0.0);
    const std::vector<double> w(pass.steps(), scale);
    pass.backward(w, grads[i]);
  });
  double total = 0.0;
  for (double s : sums) total += s;
  LossAndGradient out;
  out.report.loss = -total / static_cast<double>(total_tokens);
  out.gradient = ordered_sum(grads, params.values.size());
  out.report.grad_norm = l2_norm(out.gradient);
  return out;
}

double efficiency_bonus(const Trajectory& traj, double alpha1, double alpha2) {
  if (require_label(traj) != Label::Desirable) return 0.0;
  return efficiency_term(traj, alpha1, alpha2);
}

double penalty(const Trajectory& traj, double alpha1, double alpha2) {
  if (require_label(traj) != Label::Undesirable) return 0.0;
  return efficiency_term(traj, alpha1, alpha2);
}

ReferenceScores reference_scores(const PolicyParams& ref, const Trajectory& traj) {
  const TrajectoryPass pass(ref, traj);
  return ReferenceScores{pass.step_logprobs(), std::vector<double>(pass.log_probs().begin(), pass.log_probs().end())};
}

ImpliedReward implied_reward(const PolicyParams& theta, const PolicyParams& ref, const Trajectory& traj,
                             const TrainConfig& cfg) {
  require_label(traj);
  const TrajectoryPass pt(theta, traj);
  const TrajectoryPass pr(ref, traj);
  ImpliedReward r;
  r.log_ratio = mean_log_ratio(pt.step_logprobs(), pr.step_logprobs());
  r.offset = offset_for(traj, cfg);
  r.value = r.log_ratio + r.offset;
  return r;
}

std::vector<double> implied_reward_gradient(const PolicyParams& theta, const Trajectory& traj) {
  const TrajectoryPass pass(theta, traj);
  std::vector<double> grad(theta.values.size(), 0.0);
  const std::vector<double> w(pass.steps(), 1.0 / static_cast<double>(pass.steps()));
  pass.backward(w, grad);
  return grad;
}

double kto_value(double r, double z0, Label label, const TrainConfig& cfg) {
  switch (label) {
    case Label::Desirable:
      return cfg.lambda_d * sigmoid(cfg.beta * (r - z0));
    case Label::Undesirable:
      return cfg.lambda_u * sigmoid(cfg.beta * (z0 - r));
    case Label::Discard:
      break;
  }
  throw ContractViolation("kto_value needs a Desirable or Undesirable label");
}

LossAndGradient depo_loss(const PolicyParams& theta, const PolicyParams& ref, std::span<const Trajectory> batch_d,
                          std::span<const Trajectory> batch_u, const TrainConfig& cfg) {
  std::vector<const Trajectory*> d, u;
  for (const auto& t : batch_d) d.push_back(&t);
  for (const auto& t : batch_u) u.push_back(&t);
  std::vector<ReferenceScores> rs(d.size() + u.size());
  parallel_for(rs.size(), [&](std::size_t i) {
    rs[i] = reference_scores(ref, i < d.size() ? *d[i] : *u[i - d.size()]);
  });
  std::vector<const ReferenceScores*> rd, ru;
  for (std::size_t i = 0; i < rs.size(); ++i) (i < d.size() ? rd : ru).push_back(&rs[i]);
  return depo_loss(theta, d, u, rd, ru, cfg);
}

LossAndGradient depo_loss(const PolicyParams& theta, std::span<const Trajectory* const> batch_d,
                          std::span<const Trajectory* const> batch_u, std::span<const ReferenceScores* const> ref_d,
                          std::span<const ReferenceScores* const> ref_u, const TrainConfig& cfg,
                          std::optional<double> z0_override) {
  const std::size_t nd = batch_d.size(), n = nd + batch_u.size();
  if (n == 0) throw std::invalid_argument("depo_loss on an empty batch");
  if (ref_d.size() != nd || ref_u.size() != batch_u.size()) {
    throw std::invalid_argument("reference scores do not match the batch");
  }
  const auto traj_at = [&](std::size_t i) -> const Trajectory& { return i < nd ? *batch_d[i] : *batch_u[i - nd]; };
  const auto ref_at = [&](std::size_t i) -> const ReferenceScores& { return i < nd ? *ref_d[i] : *ref_u[i - nd]; };
  for (std::size_t i = 0; i < n; ++i) {
    const Label want = i < nd ? Label::Desirable : Label::Undesirable;
    if (require_label(traj_at(i)) != want) {
      throw std::invalid_argument("trajectory " + traj_at(i).task.id + " is in the " +
                                  std::string(to_string(want)) + " batch with a different label");
    }
  }

  const int V = theta.config.vocab_size;
  std::vector<std::optional<TrajectoryPass>> passes(n);
  std::vector<double> log_ratio(n), kl(n);
  parallel_for(n, [&](std::size_t i) {
    passes[i].emplace(theta, traj_at(i));
    const auto& rs = ref_at(i);
    if (rs.step_logprobs.size() != passes[i]->steps()) throw std::invalid_argument("stale reference scores");
    log_ratio[i] = mean_log_ratio(passes[i]->step_logprobs(), rs.step_logprobs);
    kl[i] = mean_of(step_kls(*passes[i], rs.log_probs, V));
  });
  double kl_sum = 0.0;
  for (double k : kl) kl_sum += k;
  const double z0 = z0_override ? *z0_override : std::max(0.0, kl_sum / static_cast<double>(n));

  LossAndGradient out;
  std::vector<double> dloss_dr(n);
  double loss_sum = 0.0, rd_sum = 0.0, ru_sum = 0.0, bonus_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Trajectory& t = traj_at(i);
    const Label label = i < nd ? Label::Desirable : Label::Undesirable;
    const double offset = offset_for(t, cfg);
    const double r = log_ratio[i] + offset;
    const double v = kto_value(r, z0, label, cfg);
    const double lambda = label == Label::Desirable ? cfg.lambda_d : cfg.lambda_u;
    loss_sum += lambda - v;
    if (label == Label::Desirable) {
      const double s = sigmoid(cfg.beta * (r - z0));
      dloss_dr[i] = -cfg.lambda_d * cfg.beta * s * (1.0 - s) / static_cast<double>(n);
      rd_sum += r;
    } else {
      const double s = sigmoid(cfg.beta * (z0 - r));
      dloss_dr[i] = cfg.lambda_u * cfg.beta * s * (1.0 - s) / static_cast<double>(n);
      ru_sum += r;
    }
    bonus_sum += offset;
  }
  out.report.loss = loss_sum / static_cast<double>(n);
  out.report.z0 = z0;
  out.report.mean_implied_reward_D = nd ? rd_sum / static_cast<double>(nd) : 0.0;
  out.report.mean_implied_reward_U = n > nd ? ru_sum / static_cast<double>(n - nd) : 0.0;
  out.report.mean_bonus = bonus_sum / static_cast<double>(n);

  std::vector<std::vector<double>> grads(n);
  parallel_for(n, [&](std::size_t i) {
    grads[i].assign(theta.values.size(), 0.0);
    const std::vector<double> w(passes[i]->steps(), dloss_dr[i] / static_cast<double>(passes[i]->steps()));
    passes[i]->backward(w, grads[i]);
    passes[i].reset();
  });
  out.gradient = ordered_sum(grads, theta.values.size());
  out.report.grad_norm = l2_norm(out.gradient);
  return out;
}

TrainConfig as_kto(TrainConfig cfg) {
  cfg.alpha1 = 0.0;
  cfg.alpha2 = 0.0;
  cfg.penalty_enabled = false;
  return cfg;
}

TrainResult train(const PolicyParams& init, const PolicyParams& ref, const LabeledDataset& data, const TrainConfig& cfg_in,
                  LossKind kind, const TrainOutputs& outputs) {
  validate(cfg_in);
  const TrainConfig cfg = kind == LossKind::KTO ? as_kto(cfg_in) : cfg_in;
  if (init.config != ref.config) throw ConfigError("reference policy architecture differs from the trained policy");

  std::vector<const Trajectory*> items;
  for (const auto& t : data.desirable) items.push_back(&t);
  if (kind != LossKind::SFT) {
    for (const auto& t : data.undesirable) items.push_back(&t);
  }
  if (items.empty()) {
    throw ConfigError(kind == LossKind::SFT ? "no desirable trajectories to train on"
                                            : "no labeled trajectories to train on");
  }

  std::vector<ReferenceScores> refs;
  if (kind != LossKind::SFT) {
    refs.resize(items.size());
    parallel_for(items.size(), [&](std::size_t i) { refs[i] = reference_scores(ref, *items[i]); });
  }

  std::ofstream log;
  if (outputs.log_path) {
    if (outputs.log_path->has_parent_path()) std::filesystem::create_directories(outputs.log_path->parent_path());
    log.open(*outputs.log_path, std::ios::app);
    if (!log) throw std::runtime_error("cannot open training log " + outputs.log_path->string());
  }

  TrainResult result{init, {}};
  Adam adam(init.values.size(), cfg.learning_rate);
  std::vector<std::size_t> order(items.size());
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
    shuffle(std::span<std::size_t>(order), rng);

    LossReport sum;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += bs, ++batches) {
      const std::size_t end = std::min(order.size(), start + bs);
      LossAndGradient lg;
      if (kind == LossKind::SFT) {
        std::vector<Trajectory> batch;
        for (std::size_t k = start; k < end; ++k) batch.push_back(*items[order[k]]);
        lg = sft_loss(result.params, batch);
      } else {
        std::vector<const Trajectory*> bd, bu;
        std::vector<const ReferenceScores*> rd, ru;
        for (std::size_t k = start; k < end; ++k) {
          const std::size_t idx = order[k];
          const bool desirable = *items[idx]->label == Label::Desirable;
          (desirable ? bd : bu).push_back(items[idx]);
          (desirable ? rd : ru).push_back(&refs[idx]);
        }
        lg = depo_loss(result.params, bd, bu, rd, ru, cfg);
      }
      if (!finite_all(lg)) {
        throw std::runtime_error("non-finite " + std::string(to_string(kind)) + " loss or gradient in epoch " +
                                 std::to_string(epoch + 1) + ", batch " + std::to_string(batches + 1));
      }
      adam.step(result.params.values, lg.gradient);
      sum.loss += lg.report.loss;
      sum.mean_implied_reward_D += lg.report.mean_implied_reward_D;
      sum.mean_implied_reward_U += lg.report.mean_implied_reward_U;
      sum.z0 += lg.report.z0;
      sum.mean_bonus += lg.report.mean_bonus;
      sum.grad_norm += lg.report.grad_norm;
    }
    const double nb = static_cast<double>(batches);
    LossReport rep{sum.loss / nb,        sum.mean_implied_reward_D / nb, sum.mean_implied_reward_U / nb,
                   sum.z0 / nb,          sum.mean_bonus / nb,            sum.grad_norm / nb};
    result.epochs.push_back(rep);
    if (outputs.checkpoint_dir) {
      save_checkpoint(result.params, *outputs.checkpoint_dir / ("epoch_" + std::to_string(epoch + 1) + ".ckpt"));
    }
    if (log) {
      nlohmann::ordered_json j;
      j["loss_kind"] = to_string(kind);
      j["epoch"] = epoch + 1;
      j["loss"] = rep.loss;
      j["mean_implied_reward_D"] = rep.mean_implied_reward_D;
      j["mean_implied_reward_U"] = rep.mean_implied_reward_U;
      j["z0"] = rep.z0;
      j["mean_bonus"] = rep.mean_bonus;
      j["grad_norm"] = rep.grad_norm;
      log << j.dump() << '\n';
    }
  }
  return result;
}

}  // namespace depo

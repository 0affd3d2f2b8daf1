#include "depo/policy.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>

#include "depo/errors.hpp"

namespace depo {
namespace {

constexpr char kMagic[8] = {'D', 'E', 'P', 'O', 'C', 'K', 'P', 'T'};

void check_output(const PolicyParams& params, std::span<const TokenId> output) {
  if (output.empty()) throw std::invalid_argument("step output is empty");
  if (output.back() != tok::kEos) throw std::invalid_argument("step output does not end with <eos>");
  for (auto t : output) {
    if (t < 0 || t >= params.config.vocab_size) {
      throw std::out_of_range("token id " + std::to_string(t) + " outside vocabulary");
    }
  }
}

// Sequence fed to the model and the rows predicting each output token.
void scoring_input(const PolicyParams& params, const HistoryEncoding& history, std::span<const TokenId> output,
                   Tokens& tokens, std::vector<int>& rows) {
  check_output(params, output);
  if (history.tokens.empty()) throw std::invalid_argument("history is empty");
  const std::size_t needed = history.tokens.size() + output.size() - 1;
  if (needed > static_cast<std::size_t>(params.config.context)) {
    throw std::length_error("history of " + std::to_string(history.tokens.size()) + " tokens plus step output exceeds context " +
                            std::to_string(params.config.context));
  }
  tokens = history.tokens;
  tokens.insert(tokens.end(), output.begin(), output.end() - 1);
  rows.resize(output.size());
  for (std::size_t k = 0; k < output.size(); ++k) rows[k] = static_cast<int>(history.tokens.size() - 1 + k);
}

void log_softmax_rows(std::span<const double> logits, std::size_t rows, int V, std::vector<double>& out) {
  const std::size_t base = out.size();
  out.resize(base + rows * static_cast<std::size_t>(V));
  for (std::size_t r = 0; r < rows; ++r) {
    log_softmax(logits.subspan(r * static_cast<std::size_t>(V), static_cast<std::size_t>(V)),
                std::span<double>(out).subspan(base + r * static_cast<std::size_t>(V), static_cast<std::size_t>(V)));
  }
}

TokenId choose_token(std::span<const double> logits, double temperature, Rng& rng) {
  if (temperature <= 0.0) {
    return static_cast<TokenId>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> w(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    w[i] = std::exp((logits[i] - mx) / temperature);
    sum += w[i];
  }
  const double u = uniform01(rng) * sum;
  double acc = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    acc += w[i];
    if (u < acc) return static_cast<TokenId>(i);
  }
  // Rounding can leave u at the very top; take the last token with mass.
  for (std::size_t i = w.size(); i-- > 0;) {
    if (w[i] > 0.0) return static_cast<TokenId>(i);
  }
  return tok::kEos;
}

// Continues decoding after the history has been fed.
Tokens decode_step(Decoder& decoder, Tokens& fed, int context, double temperature, int max_step_tokens, Rng& rng) {
  Tokens out;
  while (true) {
    TokenId t = choose_token(decoder.logits(), temperature, rng);
    const bool last_slot = static_cast<int>(out.size()) + 1 >= max_step_tokens;
    const bool context_full = static_cast<int>(decoder.length()) >= context;
    if (t != tok::kEos && (last_slot || context_full)) t = tok::kEos;
    out.push_back(t);
    if (t == tok::kEos) break;
    decoder.feed(t);
    fed.push_back(t);
  }
  return out;
}

void put_bytes(std::ostream& os, std::uint64_t v, int n) {
  char buf[8];
  for (int i = 0; i < n; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(buf, n);
}

std::uint64_t get_bytes(std::istream& is, int n, const std::filesystem::path& path) {
  unsigned char buf[8];
  is.read(reinterpret_cast<char*>(buf), n);
  if (is.gcount() != n) throw FormatError(path.string() + ": truncated checkpoint");
  std::uint64_t v = 0;
  for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

}  // namespace

PolicyParams make_policy(const ModelConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  PolicyParams p{cfg, std::vector<double>(cfg.parameter_count())};
  Rng rng(seed);
  init_parameters(cfg, p.values, rng);
  return p;
}

HistoryEncoding encode_history(std::span<const TokenId> instruction, std::span<const TokenId> initial_observation,
                               std::span<const AgentStep> steps, int context, std::size_t reserve) {
  const std::size_t n = steps.size();
  const auto obs_of = [&](std::size_t i) -> std::span<const TokenId> {
    return i == 0 ? initial_observation : std::span<const TokenId>(steps[i - 1].observation_tokens);
  };
  const std::size_t header = 2 + instruction.size();
  const std::size_t tail = 2 + obs_of(n).size();
  std::vector<std::size_t> block(n);
  std::size_t total = header + tail;
  for (std::size_t i = 0; i < n; ++i) {
    block[i] = 2 + obs_of(i).size() + steps[i].agent_token_count();
    total += block[i];
  }
  const std::size_t limit = static_cast<std::size_t>(std::max(context, 0));
  std::size_t drop = 0;
  while (total + reserve > limit && drop < n) total -= block[drop++];
  if (total + reserve > limit) {
    throw std::length_error("instruction and current observation need " + std::to_string(total + reserve) +
                            " tokens, context is " + std::to_string(context));
  }
  HistoryEncoding h;
  h.dropped_steps = drop;
  h.tokens.reserve(total);
  h.tokens.push_back(tok::kBos);
  h.tokens.push_back(tok::kInstr);
  h.tokens.insert(h.tokens.end(), instruction.begin(), instruction.end());
  for (std::size_t i = drop; i < n; ++i) {
    const auto o = obs_of(i);
    h.tokens.push_back(tok::kObs);
    h.tokens.insert(h.tokens.end(), o.begin(), o.end());
    h.tokens.push_back(tok::kAgent);
    h.tokens.insert(h.tokens.end(), steps[i].thought_tokens.begin(), steps[i].thought_tokens.end());
    h.tokens.insert(h.tokens.end(), steps[i].action_tokens.begin(), steps[i].action_tokens.end());
  }
  const auto cur = obs_of(n);
  h.tokens.push_back(tok::kObs);
  h.tokens.insert(h.tokens.end(), cur.begin(), cur.end());
  h.tokens.push_back(tok::kAgent);
  return h;
}

HistoryEncoding step_history(const Trajectory& traj, std::size_t index, int context) {
  if (index >= traj.steps.size()) throw std::out_of_range("step index outside trajectory");
  const std::size_t out = traj.steps[index].agent_token_count();
  return encode_history(traj.task.instruction_tokens, traj.initial_observation,
                        std::span<const AgentStep>(traj.steps).first(index), context, out == 0 ? 0 : out - 1);
}

double step_logprob(const PolicyParams& params, const HistoryEncoding& history,
                    std::span<const TokenId> step_output) {
  Tokens tokens;
  std::vector<int> rows;
  scoring_input(params, history, step_output, tokens, rows);
  const Transformer model(params.config, params.values);
  ForwardCache cache;
  std::vector<double> logits, lp;
  model.forward(tokens, rows, cache, logits);
  const int V = params.config.vocab_size;
  log_softmax_rows(logits, rows.size(), V, lp);
  double sum = 0.0;
  for (std::size_t k = 0; k < step_output.size(); ++k) sum += lp[k * static_cast<std::size_t>(V) + static_cast<std::size_t>(step_output[k])];
  return sum;
}

std::vector<double> logprob_gradient(const PolicyParams& params, const HistoryEncoding& history,
                                     std::span<const TokenId> step_output) {
  Tokens tokens;
  std::vector<int> rows;
  scoring_input(params, history, step_output, tokens, rows);
  const Transformer model(params.config, params.values);
  ForwardCache cache;
  std::vector<double> logits, lp;
  model.forward(tokens, rows, cache, logits);
  const auto V = static_cast<std::size_t>(params.config.vocab_size);
  log_softmax_rows(logits, rows.size(), static_cast<int>(V), lp);
  std::vector<double> dlogits(lp.size());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    for (std::size_t v = 0; v < V; ++v) dlogits[k * V + v] = -std::exp(lp[k * V + v]);
    dlogits[k * V + static_cast<std::size_t>(step_output[k])] += 1.0;
  }
  std::vector<double> grad(params.values.size(), 0.0);
  model.backward(cache, dlogits, grad);
  return grad;
}

double row_kl(std::span<const double> logp, std::span<const double> logq) {
  double kl = 0.0;
  for (std::size_t v = 0; v < logp.size(); ++v) {
    const double p = std::exp(logp[v]);
    if (p > 0.0) kl += p * (logp[v] - logq[v]);
  }
  return std::max(kl, 0.0);
}

double kl_to_reference(const PolicyParams& theta, const PolicyParams& ref, const HistoryEncoding& history,
                       std::span<const TokenId> step_output) {
  if (theta.config.vocab_size != ref.config.vocab_size) {
    throw std::invalid_argument("policies have different vocabularies");
  }
  const auto V = static_cast<std::size_t>(theta.config.vocab_size);
  std::vector<double> lp[2];
  const PolicyParams* ps[2] = {&theta, &ref};
  for (int m = 0; m < 2; ++m) {
    Tokens tokens;
    std::vector<int> rows;
    scoring_input(*ps[m], history, step_output, tokens, rows);
    const Transformer model(ps[m]->config, ps[m]->values);
    ForwardCache cache;
    std::vector<double> logits;
    model.forward(tokens, rows, cache, logits);
    log_softmax_rows(logits, rows.size(), static_cast<int>(V), lp[m]);
  }
  double sum = 0.0;
  for (std::size_t k = 0; k < step_output.size(); ++k) {
    sum += row_kl(std::span<const double>(lp[0]).subspan(k * V, V), std::span<const double>(lp[1]).subspan(k * V, V));
  }
  return sum / static_cast<double>(step_output.size());
}

Tokens sample_step(const PolicyParams& params, const HistoryEncoding& history, double temperature,
                   int max_step_tokens, Rng& rng) {
  if (max_step_tokens < 2) throw std::invalid_argument("max_step_tokens must be at least 2");
  const Transformer model(params.config, params.values);
  Decoder decoder(model);
  Tokens fed;
  for (auto t : history.tokens) {
    decoder.feed(t);
    fed.push_back(t);
  }
  return decode_step(decoder, fed, params.config.context, temperature, max_step_tokens, rng);
}

ParsedStep parse_step_output(EnvKind kind, std::span<const TokenId> output) {
  ParsedStep s;
  const auto eot = std::find(output.begin(), output.end(), tok::kEot);
  if (eot == output.end()) {
    s.action_tokens.assign(output.begin(), output.end());
    s.action = EnvAction{Verb::Noop, {}};
    s.parsed = false;
    return s;
  }
  s.thought.assign(output.begin(), eot);
  s.action_tokens.assign(eot, output.end());
  auto body_end = output.end();
  if (body_end != eot + 1 && *(body_end - 1) == tok::kEos) --body_end;
  const auto action = parse_action(kind, std::span<const TokenId>(eot + 1, body_end));
  if (action) {
    s.action = *action;
  } else {
    s.action = EnvAction{Verb::Noop, {}};
    s.parsed = false;
  }
  return s;
}

TrajectoryPass::TrajectoryPass(const PolicyParams& params, const Trajectory& traj, Exec exec) : params_(params) {
  const std::size_t n = traj.steps.size();
  const int context = params.config.context;
  const int V = params.config.vocab_size;
  step_row_begin_.resize(n + 1);

  // Shared window: untruncated history grows by one block per step.
  Window shared;
  shared.tokens = {tok::kBos, tok::kInstr};
  shared.tokens.insert(shared.tokens.end(), traj.task.instruction_tokens.begin(), traj.task.instruction_tokens.end());
  std::size_t i = 0;
  for (; i < n; ++i) {
    const auto& obs = i == 0 ? traj.initial_observation : traj.steps[i - 1].observation_tokens;
    const Tokens out = traj.steps[i].output_tokens();
    check_output(params, out);
    const std::size_t h = shared.tokens.size() + 2 + obs.size();
    if (h + out.size() - 1 > static_cast<std::size_t>(context)) break;
    shared.tokens.push_back(tok::kObs);
    shared.tokens.insert(shared.tokens.end(), obs.begin(), obs.end());
    shared.tokens.push_back(tok::kAgent);
    step_row_begin_[i] = targets_.size();
    for (std::size_t k = 0; k < out.size(); ++k) {
      shared.rows.push_back(static_cast<int>(h - 1 + k));
      targets_.push_back(out[k]);
      row_step_.push_back(i);
    }
    shared.tokens.insert(shared.tokens.end(), out.begin(), out.end());
  }
  if (i > 0) {
    // The final output token is never fed.
    shared.tokens.resize(static_cast<std::size_t>(shared.rows.back()) + 1);
    windows_.push_back(std::move(shared));
  }
  for (; i < n; ++i) {
    const Tokens out = traj.steps[i].output_tokens();
    const HistoryEncoding hist = step_history(traj, i, context);
    Window w;
    scoring_input(params, hist, out, w.tokens, w.rows);
    w.first_row = targets_.size();
    step_row_begin_[i] = targets_.size();
    for (std::size_t k = 0; k < out.size(); ++k) {
      targets_.push_back(out[k]);
      row_step_.push_back(i);
    }
    windows_.push_back(std::move(w));
  }
  step_row_begin_[n] = targets_.size();

  const Transformer model(params.config, params.values);
  std::vector<double> logits;
  for (auto& w : windows_) {
    model.forward(w.tokens, w.rows, w.cache, logits, exec);
    log_softmax_rows(logits, w.rows.size(), V, log_probs_);
  }
  step_logprob_.assign(n, 0.0);
  const auto uV = static_cast<std::size_t>(V);
  for (std::size_t s = 0; s < n; ++s) {
    double sum = 0.0;
    for (std::size_t r = step_row_begin_[s]; r < step_row_begin_[s + 1]; ++r) {
      sum += log_probs_[r * uV + static_cast<std::size_t>(targets_[r])];
    }
    step_logprob_[s] = sum;
  }
}

void TrajectoryPass::backward(std::span<const double> step_weights, std::span<double> grad, Exec exec) const {
  if (step_weights.size() != steps()) throw std::invalid_argument("one weight per step expected");
  const Transformer model(params_.config, params_.values);
  const auto V = static_cast<std::size_t>(params_.config.vocab_size);
  std::vector<double> dlogits;
  for (const auto& w : windows_) {
    dlogits.assign(w.rows.size() * V, 0.0);
    bool any = false;
    for (std::size_t k = 0; k < w.rows.size(); ++k) {
      const std::size_t r = w.first_row + k;
      const double g = step_weights[row_step_[r]];
      if (g == 0.0) continue;
      any = true;
      for (std::size_t v = 0; v < V; ++v) dlogits[k * V + v] = -g * std::exp(log_probs_[r * V + v]);
      dlogits[k * V + static_cast<std::size_t>(targets_[r])] += g;
    }
    if (any) model.backward(w.cache, dlogits, grad, exec);
  }
}

std::vector<double> step_kls(const TrajectoryPass& theta, std::span<const double> ref_log_probs, int vocab_size) {
  const auto V = static_cast<std::size_t>(vocab_size);
  const auto lp = theta.log_probs();
  if (ref_log_probs.size() != lp.size()) throw std::invalid_argument("reference rows do not match trajectory");
  const auto& begin = theta.step_row_begin();
  std::vector<double> out(theta.steps());
  for (std::size_t s = 0; s < out.size(); ++s) {
    double sum = 0.0;
    for (std::size_t r = begin[s]; r < begin[s + 1]; ++r) {
      sum += row_kl(lp.subspan(r * V, V), ref_log_probs.subspan(r * V, V));
    }
    out[s] = sum / static_cast<double>(begin[s + 1] - begin[s]);
  }
  return out;
}

LearnedPolicyActor::LearnedPolicyActor(const PolicyParams& params, double temperature, int max_step_tokens)
    : params_(params),
      model_(params.config, params.values),
      decoder_(model_),
      temperature_(temperature),
      max_step_tokens_(max_step_tokens) {
  if (max_step_tokens < 2) throw std::invalid_argument("max_step_tokens must be at least 2");
}

ActorDecision LearnedPolicyActor::act(const EpisodeView& episode, Rng& rng) {
  const HistoryEncoding h =
      encode_history(episode.task.instruction_tokens, episode.initial_observation, episode.steps,
                     params_.config.context, static_cast<std::size_t>(max_step_tokens_ - 1));
  const bool extends = fed_.size() <= h.tokens.size() && std::equal(fed_.begin(), fed_.end(), h.tokens.begin());
  if (!extends) {
    decoder_.reset();
    fed_.clear();
  }
  for (std::size_t i = fed_.size(); i < h.tokens.size(); ++i) {
    decoder_.feed(h.tokens[i]);
    fed_.push_back(h.tokens[i]);
  }
  const Tokens out = decode_step(decoder_, fed_, params_.config.context, temperature_, max_step_tokens_, rng);
  ParsedStep parsed = parse_step_output(episode.task.env_kind, out);
  return ActorDecision{std::move(parsed.thought), std::move(parsed.action), std::move(parsed.action_tokens)};
}

void save_checkpoint(const PolicyParams& params, const std::filesystem::path& path) {
  if (params.values.size() != params.config.parameter_count()) {
    throw std::invalid_argument("parameter vector does not match architecture");
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write checkpoint " + path.string());
  os.write(kMagic, sizeof(kMagic));
  put_bytes(os, kCheckpointVersion, 4);
  const ModelConfig& c = params.config;
  for (int v : {c.vocab_size, c.context, c.d_model, c.n_layers, c.n_heads, c.d_ff}) {
    put_bytes(os, static_cast<std::uint32_t>(v), 4);
  }
  put_bytes(os, params.values.size(), 8);
  for (double x : params.values) put_bytes(os, std::bit_cast<std::uint64_t>(x), 8);
  if (!os) throw std::runtime_error("failed writing checkpoint " + path.string());
}

PolicyParams load_checkpoint(const std::filesystem::path& path, const std::optional<ModelConfig>& expected) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("checkpoint not found: " + path.string());
  char magic[8];
  is.read(magic, sizeof(magic));
  if (is.gcount() != 8 || std::memcmp(magic, kMagic, 8) != 0) {
    throw FormatError(path.string() + ": not a checkpoint file");
  }
  const auto version = get_bytes(is, 4, path);
  if (version != kCheckpointVersion) {
    throw FormatError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  int dims[6];
  for (int& d : dims) d = static_cast<int>(static_cast<std::int32_t>(get_bytes(is, 4, path)));
  PolicyParams p;
  p.config = ModelConfig{dims[0], dims[1], dims[2], dims[3], dims[4], dims[5]};
  try {
    validate(p.config);
  } catch (const ConfigError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  if (expected && !(*expected == p.config)) {
    throw ConfigError(path.string() + ": checkpoint architecture does not match the configured policy");
  }
  const auto count = get_bytes(is, 8, path);
  if (count != p.config.parameter_count()) throw FormatError(path.string() + ": parameter count mismatch");
  p.values.resize(count);
  for (auto& x : p.values) x = std::bit_cast<double>(get_bytes(is, 8, path));
  if (is.peek() != std::char_traits<char>::eof()) throw FormatError(path.string() + ": trailing bytes");
  return p;
}

}  // namespace depo

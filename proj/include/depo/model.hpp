#pragma once

// Small pre-LayerNorm causal transformer over token ids with an exact,
// hand-written backward pass. Parameters live in one flat vector; Layout maps
// tensor names to offsets.

#include <cstddef>
#include <span>
#include <vector>

#include "depo/kernels.hpp"
#include "depo/rng.hpp"
#include "depo/vocab.hpp"

namespace depo {

using kernels::Exec;

struct ModelConfig {
  int vocab_size = 256;
  int context = 256;
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 4;
  int d_ff = 64;

  std::size_t parameter_count() const;
  bool operator==(const ModelConfig&) const = default;
};

// Throws ConfigError for non-positive sizes or d_model not divisible by n_heads.
void validate(const ModelConfig& cfg);

struct LayerOffsets {
  std::size_t ln1_g, ln1_b, w_qkv, b_qkv, w_o, b_o, ln2_g, ln2_b, w1, b1, w2, b2;
};

struct Layout {
  std::size_t tok_emb = 0;
  std::size_t pos_emb = 0;
  std::vector<LayerOffsets> layers;
  std::size_t lnf_g = 0, lnf_b = 0, w_out = 0, b_out = 0;
  std::size_t total = 0;

  explicit Layout(const ModelConfig& cfg);
};

void init_parameters(const ModelConfig& cfg, std::span<double> params, Rng& rng);

struct LayerCache {
  std::vector<double> x_in, ln1_xhat, ln1_rstd, h1, qkv, att_p, att_out, x_mid, ln2_xhat, ln2_rstd, h2, u, g;
};

// Activations kept for the backward pass of one forward call.
struct ForwardCache {
  std::vector<TokenId> tokens;
  std::vector<int> rows;  // positions whose logits were produced
  std::vector<LayerCache> layers;
  std::vector<double> x_final, lnf_xhat, lnf_rstd, hf;  // hf/lnf_* only for `rows`
};

class Transformer {
 public:
  Transformer(const ModelConfig& cfg, std::span<const double> params);

  const ModelConfig& config() const { return cfg_; }

  // Logits [rows.size() x vocab] for the requested positions of `tokens`.
  void forward(std::span<const TokenId> tokens, std::span<const int> rows, ForwardCache& cache,
               std::vector<double>& logits, Exec exec = Exec::Serial) const;

  // Accumulates d(loss)/d(params) into grad given d(loss)/d(logits) for the
  // rows of the matching forward call.
  void backward(const ForwardCache& cache, std::span<const double> dlogits, std::span<double> grad,
                Exec exec = Exec::Serial) const;

 private:
  friend class Decoder;
  ModelConfig cfg_;
  Layout layout_;
  std::span<const double> p_;
};

// Incremental (key/value cached) inference. Produces bit-identical logits to
// Transformer::forward for the same prefix.
class Decoder {
 public:
  explicit Decoder(const Transformer& model);

  void reset();
  std::size_t length() const { return length_; }
  // Appends one token; returns the logits predicting the next token.
  std::span<const double> feed(TokenId token);
  std::span<const double> logits() const { return logits_; }

 private:
  const Transformer& model_;
  std::size_t length_ = 0;
  std::vector<std::vector<double>> keys_, values_;  // per layer [length x d]
  std::vector<double> logits_;
};

// log softmax of one logit row.
void log_softmax(std::span<const double> logits, std::span<double> out);

}  // namespace depo

#pragma once

// Sequence VAE: LSTM encoder q(z|x) = N(mu(x), diag(exp(log_var(x)))), a
// standard normal prior, and a non-autoregressive LSTM decoder that sees z
// only on the first step through the mask channel (m_1 = 1, m_i = 0 after).

#include <cstdint>
#include <span>
#include <vector>

#include "glsr/corpus.hpp"
#include "glsr/diffcore.hpp"

namespace glsr {

struct ModelConfig {
  int vocab_size = 0;
  int seq_len = 0;
  int latent_dim = 12;
  int hidden = 32;
  int layers = 2;
  int embed = 16;
  double dropout = 0.2;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Leaves: enc/embed, enc/lstm, enc/mu, enc/logvar, dec/lstm, dec/out.
std::vector<LayerSpec> model_layout(const ModelConfig& config);

struct Model {
  ModelConfig config;
  ParamTree params;
};

Model make_model(const ModelConfig& config, std::uint64_t seed);

struct GaussianPosterior {
  std::vector<double> mu;
  std::vector<double> log_var;

  std::vector<double> sigma() const;
};

struct LatentPoint {
  std::vector<double> z;

  int dim() const { return static_cast<int>(z.size()); }
  bool operator==(const LatentPoint&) const = default;
};

/// T x A categorical probabilities, row-major.
class DecoderTable {
 public:
  DecoderTable(int steps, int tokens, std::vector<double> probs);

  int steps() const { return steps_; }
  int tokens() const { return tokens_; }
  std::span<const double> row(int step) const;
  double at(int step, int token) const { return probs_[static_cast<std::size_t>(step) * tokens_ + token]; }
  const std::vector<double>& data() const { return probs_; }

 private:
  int steps_;
  int tokens_;
  std::vector<double> probs_;
};

// Recorded versions, used by the objective.

struct EncoderVars {
  Var mu;
  Var log_var;
};

EncoderVars encode_vars(Tape& tape, const Model& model, std::span<const int> ids, Dropout* dropout = nullptr);
/// z = mu + exp(log_var / 2) * eps
Var reparam_vars(const EncoderVars& posterior, std::span<const double> eps);
/// Per-step logits. Step inputs are (m_i * z, m_i).
std::vector<Var> decode_logit_vars(Tape& tape, const Model& model, Var z, Dropout* dropout = nullptr);
/// Instrumented form: step i receives m_i * step_inputs[i]. decode_logit_vars
/// passes the same z to every step; the mask must make the result independent
/// of every entry after the first.
std::vector<Var> decode_logit_vars(Tape& tape, const Model& model, std::span<const Var> step_inputs,
                                   Dropout* dropout = nullptr);

// Value-level operations.

GaussianPosterior encode(const Model& model, const SequenceSample& x);
LatentPoint reparam_sample(const GaussianPosterior& posterior, std::span<const double> eps);
DecoderTable decode_probs(const Model& model, const LatentPoint& z);
/// Per-row argmax, ties to the lowest token index.
SequenceSample argmax_decode(const DecoderTable& table);
SequenceSample argmax_decode(const Model& model, const LatentPoint& z);
SequenceSample sample_decode(const DecoderTable& table, std::uint64_t seed);
SequenceSample sample_decode(const Model& model, const LatentPoint& z, std::uint64_t seed);
LatentPoint sample_prior(int dim, std::uint64_t seed);
/// Standard normal draws, deterministic in the seed.
std::vector<double> standard_normal(int n, std::uint64_t seed);

/// Stateless 64-bit mixing, used to derive independent stream seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace glsr

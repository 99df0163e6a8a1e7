#include "glsr/seqvae.hpp"

#include <cmath>
#include <random>

namespace glsr {

void ModelConfig::validate() const {
  if (vocab_size < 2) throw std::invalid_argument("vocab_size must be at least 2");
  if (seq_len < 1) throw std::invalid_argument("seq_len must be positive");
  if (latent_dim < 1 || hidden < 1 || layers < 1 || embed < 1) {
    throw std::invalid_argument("model widths must be positive");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("dropout must lie in [0, 1)");
}

std::vector<LayerSpec> model_layout(const ModelConfig& c) {
  c.validate();
  return {
      EmbeddingSpec{"enc/embed", c.vocab_size, c.embed},
      LstmSpec{"enc/lstm", c.embed, c.hidden, c.layers},
      DenseSpec{"enc/mu", c.hidden, c.latent_dim},
      DenseSpec{"enc/logvar", c.hidden, c.latent_dim},
      LstmSpec{"dec/lstm", c.latent_dim + 1, c.hidden, c.layers},
      DenseSpec{"dec/out", c.hidden, c.vocab_size},
  };
}

Model make_model(const ModelConfig& config, std::uint64_t seed) {
  const auto layout = model_layout(config);
  return Model{config, init_params(layout, seed)};
}

std::vector<double> GaussianPosterior::sigma() const {
  std::vector<double> s(log_var.size());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = std::exp(0.5 * log_var[i]);
  return s;
}

DecoderTable::DecoderTable(int steps, int tokens, std::vector<double> probs)
    : steps_(steps), tokens_(tokens), probs_(std::move(probs)) {
  if (static_cast<std::size_t>(steps) * tokens != probs_.size()) throw ShapeError("decoder table size mismatch");
}

std::span<const double> DecoderTable::row(int step) const {
  return std::span<const double>(probs_).subspan(static_cast<std::size_t>(step) * tokens_, tokens_);
}

// ---------------------------------------------------------------------------

EncoderVars encode_vars(Tape& tape, const Model& model, std::span<const int> ids, Dropout* dropout) {
  const auto& c = model.config;
  if (static_cast<int>(ids.size()) != c.seq_len) {
    throw ShapeError("sequence length " + std::to_string(ids.size()) + ", expected " + std::to_string(c.seq_len));
  }
  const LstmStack lstm(model.params, "enc/lstm", c.embed, c.hidden, c.layers);
  const Var table = tape.param(model.params, "enc/embed/E");
  auto state = lstm.initial_state(tape);
  Var top;
  for (int id : ids) {
    if (id < 0 || id >= c.vocab_size) throw std::out_of_range("token index " + std::to_string(id) + " out of range");
    top = lstm.step(tape, row(table, id), state, dropout);
  }
  const Var mu = matvec(tape.param(model.params, "enc/mu/W"), top) + tape.param(model.params, "enc/mu/b");
  const Var log_var =
      matvec(tape.param(model.params, "enc/logvar/W"), top) + tape.param(model.params, "enc/logvar/b");
  return {mu, log_var};
}

Var reparam_vars(const EncoderVars& posterior, std::span<const double> eps) {
  auto& tape = posterior.mu.tape();
  if (static_cast<int>(eps.size()) != posterior.mu.size()) throw ShapeError("eps size mismatch");
  const Var sigma = exp(0.5 * posterior.log_var);
  return posterior.mu + sigma * tape.constant(std::vector<double>(eps.begin(), eps.end()));
}

std::vector<Var> decode_logit_vars(Tape& tape, const Model& model, Var z, Dropout* dropout) {
  const std::vector<Var> inputs(model.config.seq_len, z);
  return decode_logit_vars(tape, model, inputs, dropout);
}

std::vector<Var> decode_logit_vars(Tape& tape, const Model& model, std::span<const Var> step_inputs,
                                   Dropout* dropout) {
  const auto& c = model.config;
  if (static_cast<int>(step_inputs.size()) != c.seq_len) throw ShapeError("one decoder input per step required");
  const LstmStack lstm(model.params, "dec/lstm", c.latent_dim + 1, c.hidden, c.layers);
  const Var w_out = tape.param(model.params, "dec/out/W");
  const Var b_out = tape.param(model.params, "dec/out/b");
  auto state = lstm.initial_state(tape);
  std::vector<Var> logits;
  logits.reserve(c.seq_len);
  for (int i = 0; i < c.seq_len; ++i) {
    if (step_inputs[i].size() != c.latent_dim) throw ShapeError("latent size mismatch");
    const double mask = i == 0 ? 1.0 : 0.0;
    const Var parts[] = {mask * step_inputs[i], tape.scalar(mask)};
    const Var h = lstm.step(tape, concat(parts), state, dropout);
    logits.push_back(matvec(w_out, h) + b_out);
  }
  return logits;
}

// ---------------------------------------------------------------------------

GaussianPosterior encode(const Model& model, const SequenceSample& x) {
  Tape tape;
  const auto vars = encode_vars(tape, model, x.ids);
  auto mu = vars.mu.value();
  auto lv = vars.log_var.value();
  return {{mu.begin(), mu.end()}, {lv.begin(), lv.end()}};
}

LatentPoint reparam_sample(const GaussianPosterior& posterior, std::span<const double> eps) {
  if (eps.size() != posterior.mu.size() || posterior.log_var.size() != posterior.mu.size()) {
    throw ShapeError("reparam_sample: size mismatch");
  }
  LatentPoint p;
  p.z.resize(eps.size());
  for (std::size_t d = 0; d < eps.size(); ++d) p.z[d] = posterior.mu[d] + std::exp(0.5 * posterior.log_var[d]) * eps[d];
  return p;
}

DecoderTable decode_probs(const Model& model, const LatentPoint& z) {
  Tape tape;
  const auto logits = decode_logit_vars(tape, model, tape.constant(z.z));
  std::vector<double> probs;
  probs.reserve(static_cast<std::size_t>(model.config.seq_len) * model.config.vocab_size);
  for (const auto& l : logits) {
    auto p = softmax(l).value();
    probs.insert(probs.end(), p.begin(), p.end());
  }
  return DecoderTable(model.config.seq_len, model.config.vocab_size, std::move(probs));
}

SequenceSample argmax_decode(const DecoderTable& table) {
  SequenceSample s;
  s.ids.resize(table.steps());
  for (int i = 0; i < table.steps(); ++i) {
    auto r = table.row(i);
    int best = 0;
    for (int a = 1; a < table.tokens(); ++a) {
      if (r[a] > r[best]) best = a;
    }
    s.ids[i] = best;
  }
  return s;
}

SequenceSample argmax_decode(const Model& model, const LatentPoint& z) { return argmax_decode(decode_probs(model, z)); }

SequenceSample sample_decode(const DecoderTable& table, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  SequenceSample s;
  s.ids.resize(table.steps());
  for (int i = 0; i < table.steps(); ++i) {
    auto r = table.row(i);
    const double u = unif(rng);
    double acc = 0.0;
    int pick = table.tokens() - 1;
    for (int a = 0; a < table.tokens(); ++a) {
      acc += r[a];
      if (u < acc) {
        pick = a;
        break;
      }
    }
    // Guard against rounding in the cumulative sum landing on a zero-probability tail.
    while (pick > 0 && r[pick] == 0.0) --pick;
    s.ids[i] = pick;
  }
  return s;
}

SequenceSample sample_decode(const Model& model, const LatentPoint& z, std::uint64_t seed) {
  return sample_decode(decode_probs(model, z), seed);
}

std::vector<double> standard_normal(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> out(n);
  for (auto& v : out) v = normal(rng);
  return out;
}

LatentPoint sample_prior(int dim, std::uint64_t seed) { return {standard_normal(dim, seed)}; }

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

}  // namespace glsr

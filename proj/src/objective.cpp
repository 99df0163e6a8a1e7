#include "glsr/objective.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

namespace glsr {

void RegSpec::validate(int latent_dim) const {
  if (!(fd_step > 0.0)) throw std::invalid_argument("finite-difference step must be positive");
  if (static_cast<int>(entries.size()) > latent_dim) throw std::invalid_argument("more regularized dims than latent dims");
  std::vector<int> dims;
  for (const auto& e : entries) {
    if (e.dim < 0 || e.dim >= latent_dim) throw std::invalid_argument("regularized dim out of range");
    if (std::find(dims.begin(), dims.end(), e.dim) != dims.end()) throw std::invalid_argument("regularized dims must be distinct");
    dims.push_back(e.dim);
    if (!(e.r_mu > 0.0)) throw std::invalid_argument("r_mu must be positive");
    if (!(e.r_sigma > 0.0)) throw std::invalid_argument("r_sigma must be positive");
    if (e.attribute.kind != AttributeKind::kTokenAdditive) {
      throw UnsupportedAttribute("attribute '" + e.attribute.name + "' is not token-additive");
    }
  }
}

double recon_loglik(const DecoderTable& table, const SequenceSample& x) {
  if (x.length() != table.steps()) throw ShapeError("recon_loglik: length mismatch");
  double s = 0.0;
  for (int i = 0; i < table.steps(); ++i) s += std::log(table.at(i, x.ids[i]));
  return s;
}

double kl_gaussian(const GaussianPosterior& p) {
  double s = 0.0;
  for (std::size_t d = 0; d < p.mu.size(); ++d) {
    s += p.mu[d] * p.mu[d] + std::exp(p.log_var[d]) - p.log_var[d] - 1.0;
  }
  return 0.5 * s;
}

double moment_G(const DecoderTable& table, const AttributeSpec& attribute) {
  if (attribute.kind != AttributeKind::kTokenAdditive) {
    throw UnsupportedAttribute("attribute '" + attribute.name + "' is not token-additive");
  }
  if (static_cast<int>(attribute.weights.size()) != table.tokens()) throw ShapeError("attribute weight size mismatch");
  double g = 0.0;
  for (int i = 0; i < table.steps(); ++i) {
    auto r = table.row(i);
    for (int a = 0; a < table.tokens(); ++a) g += attribute.weights[a] * r[a];
  }
  return g;
}

double moment_G(const Model& model, const LatentPoint& z, const AttributeSpec& attribute) {
  return moment_G(decode_probs(model, z), attribute);
}

double fd_partial_G(const Model& model, const LatentPoint& z, int dim, double h, const AttributeSpec& attribute) {
  if (!(h > 0.0)) throw std::invalid_argument("finite-difference step must be positive");
  if (dim < 0 || dim >= z.dim()) throw std::out_of_range("dim out of range");
  LatentPoint plus = z;
  LatentPoint minus = z;
  plus.z[dim] += h;
  minus.z[dim] -= h;
  return (moment_G(model, plus, attribute) - moment_G(model, minus, attribute)) / (2.0 * h);
}

double log_r(double partial, double r_mu, double r_sigma) {
  const double d = partial - r_mu;
  return -(d * d) / (2.0 * r_sigma * r_sigma);
}

double glsr_from_partials(std::span<const double> partials, const RegSpec& spec) {
  if (partials.size() != spec.entries.size()) throw ShapeError("one partial per regularized dim required");
  double s = 0.0;
  for (std::size_t k = 0; k < partials.size(); ++k) s += log_r(partials[k], spec.entries[k].r_mu, spec.entries[k].r_sigma);
  return s;
}

double glsr(const Model& model, const LatentPoint& z, const RegSpec& spec) {
  std::vector<double> partials;
  for (const auto& e : spec.entries) partials.push_back(fd_partial_G(model, z, e.dim, spec.fd_step, e.attribute));
  return glsr_from_partials(partials, spec);
}

double anneal(long long step, long long ramp_steps) {
  if (ramp_steps < 1) throw std::invalid_argument("ramp_steps must be at least 1");
  if (step <= 0) return 0.0;
  if (step >= ramp_steps) return 1.0;
  return static_cast<double>(step) / static_cast<double>(ramp_steps);
}

// ---------------------------------------------------------------------------

Var moment_G_var(Tape& tape, const Model& model, Var z, const AttributeSpec& attribute, Dropout* dropout) {
  if (attribute.kind != AttributeKind::kTokenAdditive) {
    throw UnsupportedAttribute("attribute '" + attribute.name + "' is not token-additive");
  }
  if (static_cast<int>(attribute.weights.size()) != model.config.vocab_size) {
    throw ShapeError("attribute weight size mismatch");
  }
  const auto logits = decode_logit_vars(tape, model, z, dropout);
  std::vector<Var> per_step;
  per_step.reserve(logits.size());
  for (const auto& l : logits) per_step.push_back(dot(softmax(l), attribute.weights));
  return sum(concat(per_step));
}

Var fd_partial_var(Var z, int dim, double h, const std::function<Var(Var)>& moment) {
  if (!(h > 0.0)) throw std::invalid_argument("finite-difference step must be positive");
  if (dim < 0 || dim >= z.size()) throw std::out_of_range("dim out of range");
  auto& tape = z.tape();
  std::vector<double> offset(z.size(), 0.0);
  offset[dim] = h;
  const Var shift = tape.constant(std::move(offset));
  const Var up = moment(z + shift);
  const Var down = moment(z - shift);
  return (1.0 / (2.0 * h)) * (up - down);
}

ElboVars regularized_elbo_vars(Tape& tape, const Model& model, const SequenceSample& x, std::span<const double> eps,
                               const RegSpec& spec, double beta, const DropoutSeeds* dropout) {
  if (!(beta >= 0.0 && beta <= 1.0)) throw std::invalid_argument("beta must lie in [0, 1]");
  const bool drop = dropout && dropout->rate > 0.0;
  auto decoder_dropout = [&]() -> std::optional<Dropout> {
    if (!drop) return std::nullopt;
    return Dropout(dropout->rate, dropout->decoder);
  };

  std::optional<Dropout> enc_drop;
  if (drop) enc_drop.emplace(dropout->rate, dropout->encoder);
  const auto posterior = encode_vars(tape, model, x.ids, enc_drop ? &*enc_drop : nullptr);
  const Var z = reparam_vars(posterior, eps);

  auto dec_drop = decoder_dropout();
  const auto logits = decode_logit_vars(tape, model, z, dec_drop ? &*dec_drop : nullptr);
  std::vector<Var> picked;
  picked.reserve(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) picked.push_back(pick(log_softmax(logits[i]), x.ids[i]));
  const Var recon = sum(concat(picked));

  const int dims = model.config.latent_dim;
  const Var kl = 0.5 * add_scalar(sum(square(posterior.mu) + exp(posterior.log_var) - posterior.log_var), -dims);

  LossReport report;
  report.beta = beta;
  report.recon = recon.item();
  report.kl = kl.item();

  Var total = recon;
  if (!spec.entries.empty()) {
    std::vector<Var> terms;
    for (const auto& e : spec.entries) {
      auto moment = [&](Var zz) {
        auto d = decoder_dropout();
        return moment_G_var(tape, model, zz, e.attribute, d ? &*d : nullptr);
      };
      const Var partial = fd_partial_var(z, e.dim, spec.fd_step, moment);
      report.partials.push_back(partial.item());
      const double c = -1.0 / (2.0 * e.r_sigma * e.r_sigma);
      terms.push_back(c * square(add_scalar(partial, -e.r_mu)));
    }
    const Var reg = sum(concat(terms));
    report.glsr = reg.item();
    total = total + beta * reg;
  }
  total = total - beta * kl;
  report.total = total.item();
  return {total, report};
}

LossReport regularized_elbo(const Model& model, const SequenceSample& x, std::span<const double> eps,
                            const RegSpec& spec, double beta) {
  Tape tape;
  return regularized_elbo_vars(tape, model, x, eps, spec, beta).report;
}

}  // namespace glsr

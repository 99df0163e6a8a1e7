#pragma once

// The regularized ELBO:
//   total = log p(x|z) + beta * R_geo(z) - beta * KL(q(z|x) || N(0, I)),
// with z = mu + sigma * eps and
//   R_geo(z) = sum_k log r_k(dG_k/dz_k),  G_k(z) = E_{p(x|z)}[g_k(x)].
// G_k is exact for token-additive g_k; its partial along z_k is a central
// difference of two extra decoder passes kept on the tape.

#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "glsr/corpus.hpp"
#include "glsr/diffcore.hpp"
#include "glsr/seqvae.hpp"

namespace glsr {

class UnsupportedAttribute : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct RegEntry {
  int dim = 0;
  AttributeSpec attribute;
  double r_mu = 2.0;
  double r_sigma = 0.1;
};

struct RegSpec {
  std::vector<RegEntry> entries;
  double fd_step = 1e-2;

  void validate(int latent_dim) const;
};

struct LossReport {
  double recon = 0.0;
  double kl = 0.0;
  double glsr = 0.0;
  double beta = 0.0;
  double total = 0.0;
  std::vector<double> partials;
};

double recon_loglik(const DecoderTable& table, const SequenceSample& x);
double kl_gaussian(const GaussianPosterior& posterior);

/// sum_i sum_a weights[a] * p_i(a)
double moment_G(const DecoderTable& table, const AttributeSpec& attribute);
double moment_G(const Model& model, const LatentPoint& z, const AttributeSpec& attribute);
double fd_partial_G(const Model& model, const LatentPoint& z, int dim, double h, const AttributeSpec& attribute);

/// log r(u) for r = N(r_mu, r_sigma^2), without the normalization constant.
double log_r(double partial, double r_mu, double r_sigma);
double glsr_from_partials(std::span<const double> partials, const RegSpec& spec);
double glsr(const Model& model, const LatentPoint& z, const RegSpec& spec);

LossReport regularized_elbo(const Model& model, const SequenceSample& x, std::span<const double> eps,
                            const RegSpec& spec, double beta);

/// beta = min(1, step / ramp_steps)
double anneal(long long step, long long ramp_steps);

// Recorded forms.

/// Throws UnsupportedAttribute unless the attribute is token-additive.
Var moment_G_var(Tape& tape, const Model& model, Var z, const AttributeSpec& attribute, Dropout* dropout = nullptr);
/// (G(z + h e_k) - G(z - h e_k)) / 2h for any recorded G.
Var fd_partial_var(Var z, int dim, double h, const std::function<Var(Var)>& moment);

/// Dropout for a training pass. Every decoder pass of one example replays the
/// same masks, so the finite difference sees one deterministic network.
struct DropoutSeeds {
  double rate = 0.0;
  std::uint64_t encoder = 0;
  std::uint64_t decoder = 0;
};

struct ElboVars {
  Var total;
  LossReport report;
};

ElboVars regularized_elbo_vars(Tape& tape, const Model& model, const SequenceSample& x, std::span<const double> eps,
                               const RegSpec& spec, double beta, const DropoutSeeds* dropout = nullptr);

}  // namespace glsr

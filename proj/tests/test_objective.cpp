#include <cmath>
#include <random>

#include "doctest.h"
#include "glsr/objective.hpp"
#include "glsr/trainer.hpp"
#include "support.hpp"

using namespace glsr;
using glsr::testing::central_difference;
using glsr::testing::relative_error;
using glsr::testing::tiny_config;
using glsr::testing::tiny_vocab;

namespace {

DecoderTable uniform_table(int T, int A) { return DecoderTable(T, A, std::vector<double>(T * A, 1.0 / A)); }

GaussianPosterior random_posterior(int D, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> mu(-1.5, 1.5), lv(-2.0, 1.0);
  GaussianPosterior p;
  for (int d = 0; d < D; ++d) {
    p.mu.push_back(mu(rng));
    p.log_var.push_back(lv(rng));
  }
  return p;
}

RegSpec note_spec(const TokenVocab& v, double r_mu = 2.0, double r_sigma = 0.1) {
  RegSpec s;
  s.entries.push_back(RegEntry{0, num_played_notes(v), r_mu, r_sigma});
  return s;
}

}  // namespace

TEST_SUITE("objective") {

TEST_CASE("reconstruction log-likelihood") {
  SUBCASE("one-hot correct rows") {
    std::vector<double> p(12, 0.0);
    p[2] = p[4 + 0] = p[8 + 3] = 1.0;
    CHECK(recon_loglik(DecoderTable(3, 4, p), SequenceSample{{2, 0, 3}}) == 0.0);
  }
  SUBCASE("uniform rows") {
    CHECK(recon_loglik(uniform_table(6, 5), SequenceSample{{0, 1, 2, 3, 4, 0}}) ==
          doctest::Approx(6 * std::log(1.0 / 5)).epsilon(1e-14));
  }
  SUBCASE("naive per-step sum") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.01, 1.0);
    for (int k = 0; k < 20; ++k) {
      std::vector<double> p;
      for (int i = 0; i < 5; ++i) {
        std::vector<double> r(4);
        double s = 0.0;
        for (auto& v : r) s += (v = u(rng));
        for (auto v : r) p.push_back(v / s);
      }
      const DecoderTable t(5, 4, p);
      const SequenceSample x{{static_cast<int>(rng() % 4), 1, 2, static_cast<int>(rng() % 4), 0}};
      double naive = 0.0;
      for (int i = 0; i < 5; ++i) naive += std::log(p[i * 4 + x.ids[i]]);
      CHECK(std::abs(recon_loglik(t, x) - naive) < 1e-12);
    }
  }
}

TEST_CASE("analytic KL") {
  CHECK(kl_gaussian({{0, 0, 0}, {0, 0, 0}}) == 0.0);
  CHECK(kl_gaussian({{1, 0, 0}, {0, 0, 0}}) == doctest::Approx(0.5));
  std::mt19937_64 rng(9);
  for (int k = 0; k < 10000; ++k) CHECK(kl_gaussian(random_posterior(4, rng)) >= 0.0);
}

TEST_CASE("moment parameter closed forms") {
  const auto v = tiny_vocab();  // 3 notes of 5 tokens
  const auto g = num_played_notes(v);
  CHECK(moment_G(uniform_table(4, 5), g) == doctest::Approx(4.0 * 3 / 5).epsilon(1e-14));
  std::vector<double> p(20, 0.0);
  p[0 * 5 + 2] = p[1 * 5 + 0] = p[2 * 5 + 4] = p[3 * 5 + 1] = 1.0;  // note, hold, note, rest
  CHECK(moment_G(DecoderTable(4, 5, p), g) == 2.0);
  CHECK_THROWS_AS(moment_G(DecoderTable(4, 5, p), highest_pitch(v)), UnsupportedAttribute);
}

TEST_CASE("moment parameter stays within the weight bounds") {
  const auto v = tiny_vocab();
  const auto g = num_played_notes(v);
  const auto m = make_model(tiny_config(), 5);
  for (int k = 0; k < 50; ++k) {
    auto z = sample_prior(3, k);
    for (auto& c : z.z) c *= 3;
    const double G = moment_G(m, z, g);
    CHECK(G >= 0.0);
    CHECK(G <= 4.0);
  }
}

TEST_CASE("finite-difference partial") {
  const auto v = tiny_vocab();
  const auto g = num_played_notes(v);
  SUBCASE("decoder that ignores z") {
    auto m = make_model(tiny_config(), 5);
    for (auto& leaf : m.params) std::fill(leaf.data.begin(), leaf.data.end(), 0.0);
    CHECK(fd_partial_G(m, LatentPoint{{0.2, 0.1, -0.4}}, 0, 1e-2, g) == 0.0);
  }
  SUBCASE("affine surrogate is differentiated exactly") {
    Tape t;
    const Var z = t.variable({0.7, -0.3});
    const Var u = fd_partial_var(z, 0, 1e-2, [](Var zz) { return 3.0 * pick(zz, 0); });
    CHECK(u.item() == doctest::Approx(3.0).epsilon(1e-12));
    const Var w = fd_partial_var(z, 1, 0.5, [](Var zz) { return add_scalar(-2.0 * pick(zz, 1) + pick(zz, 0), 4.0); });
    CHECK(w.item() == doctest::Approx(-2.0).epsilon(1e-12));
  }
  SUBCASE("recorded partial agrees with the value-level one") {
    const auto m = make_model(tiny_config(), 6);
    const LatentPoint z{{0.5, -0.2, 1.0}};
    Tape t;
    const Var zv = t.constant(z.z);
    const Var u = fd_partial_var(zv, 1, 1e-2, [&](Var zz) { return moment_G_var(t, m, zz, g); });
    CHECK(u.item() == doctest::Approx(fd_partial_G(m, z, 1, 1e-2, g)).epsilon(1e-12));
  }
}

TEST_CASE("log r and the regularizer") {
  CHECK(log_r(2.0, 2.0, 0.1) == 0.0);
  CHECK(log_r(2.1, 2.0, 0.1) == doctest::Approx(-0.5));
  CHECK(log_r(7.0, 5.0, 1.0) == doctest::Approx(-2.0));
  RegSpec two;
  two.entries = {RegEntry{0, {}, 2.0, 0.1}, RegEntry{1, {}, 5.0, 1.0}};
  CHECK(glsr_from_partials(std::vector<double>{2.0, 5.0}, two) == 0.0);
  CHECK(glsr_from_partials(std::vector<double>{2.1, 6.0}, two) == doctest::Approx(-1.0));
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(2.0, 3.0);
  for (int k = 0; k < 1000; ++k) CHECK(glsr_from_partials(std::vector<double>{n(rng), n(rng)}, two) <= 0.0);
}

TEST_CASE("reg spec validation") {
  const auto v = tiny_vocab();
  auto s = note_spec(v);
  CHECK_NOTHROW(s.validate(3));
  CHECK_THROWS(s.validate(0));
  s.entries[0].dim = 3;
  CHECK_THROWS(s.validate(3));
  s = note_spec(v);
  s.entries[0].attribute = highest_pitch(v);
  CHECK_THROWS_AS(s.validate(3), UnsupportedAttribute);
  s = note_spec(v);
  s.entries[0].r_sigma = 0.0;
  CHECK_THROWS(s.validate(3));
  s = note_spec(v);
  s.entries.push_back(s.entries[0]);
  CHECK_THROWS(s.validate(3));
}

TEST_CASE("anneal schedule") {
  CHECK(anneal(0, 100) == 0.0);
  CHECK(anneal(100, 100) == 1.0);
  CHECK(anneal(50, 100) == 0.5);
  CHECK(anneal(1000, 100) == 1.0);
  double prev = 0.0;
  for (long long s = 0; s < 300; ++s) {
    CHECK(anneal(s, 120) >= prev);
    prev = anneal(s, 120);
  }
}

TEST_CASE("elbo structure") {
  const auto v = tiny_vocab();
  const auto m = make_model(tiny_config(), 7);
  const SequenceSample x{{2, 0, 3, 1}};
  const std::vector<double> eps{0.3, -1.1, 0.4};
  const auto spec = note_spec(v);

  SUBCASE("beta = 0 keeps only reconstruction") {
    const auto r = regularized_elbo(m, x, eps, spec, 0.0);
    CHECK(r.total == r.recon);
    CHECK(r.glsr < 0.0);
  }
  SUBCASE("empty regularizer equals the plain ELBO estimate") {
    const auto r = regularized_elbo(m, x, eps, RegSpec{}, 1.0);
    const auto post = encode(m, x);
    const auto z = reparam_sample(post, eps);
    const double plain = recon_loglik(decode_probs(m, z), x) - kl_gaussian(post);
    CHECK(r.total == plain);
    CHECK(r.glsr == 0.0);
    CHECK(r.partials.empty());
  }
  SUBCASE("terms combine as recon + beta (glsr - kl)") {
    const auto r = regularized_elbo(m, x, eps, spec, 0.4);
    CHECK(r.total == doctest::Approx(r.recon + 0.4 * r.glsr - 0.4 * r.kl).epsilon(1e-14));
    const auto z = reparam_sample(encode(m, x), eps);
    CHECK(r.partials[0] == doctest::Approx(fd_partial_G(m, z, 0, 1e-2, num_played_notes(v))).epsilon(1e-12));
    CHECK(r.glsr == doctest::Approx(log_r(r.partials[0], 2.0, 0.1)).epsilon(1e-12));
  }
  SUBCASE("recorded and value-level forms agree") {
    Tape t;
    const auto e = regularized_elbo_vars(t, m, x, eps, spec, 0.6);
    const auto r = regularized_elbo(m, x, eps, spec, 0.6);
    CHECK(e.total.item() == doctest::Approx(r.total).epsilon(1e-13));
    CHECK(e.report.kl == doctest::Approx(r.kl).epsilon(1e-13));
  }
}

TEST_CASE("elbo gradient matches finite differences on the tiny model") {
  const auto v = tiny_vocab();
  auto m = make_model(tiny_config(), 17);
  const SequenceSample x{{3, 0, 2, 4}};
  const std::vector<double> eps{0.6, -0.4, 0.9};
  for (double beta : {0.0, 0.5, 1.0}) {
    for (const RegSpec& spec : {RegSpec{}, note_spec(v, 2.0, 0.5)}) {
      Tape t;
      const auto e = regularized_elbo_vars(t, m, x, eps, spec, beta);
      t.backward(e.total);
      const auto g = t.param_grad(m.params);
      std::mt19937_64 rng(31);
      for (int k = 0; k < 20; ++k) {
        const std::size_t leaf = rng() % m.params.size();
        const std::size_t i = rng() % m.params.at(leaf).data.size();
        auto f = [&] { return regularized_elbo(m, x, eps, spec, beta).total; };
        const double fd = central_difference(f, m.params.at(leaf).data[i], 1e-3);
        CHECK_MESSAGE(relative_error(g.leaves[leaf][i], fd) < 1e-4,
                      m.params.at(leaf).path << "[" << i << "] " << g.leaves[leaf][i] << " vs " << fd << ", beta " << beta);
      }
    }
  }
}

TEST_CASE("without a regularizer the GLSR path adds nothing to gradients") {
  const auto m = make_model(tiny_config(), 4);
  const std::vector<SequenceSample> batch{{{2, 0, 3, 1}}, {{4, 4, 0, 2}}, {{1, 2, 0, 0}}};
  const std::uint64_t seed = 12;
  const auto trained = batch_gradient(m, batch, RegSpec{}, 1.0, seed);

  // Plain ELBO assembled from the model's building blocks, same per-example noise.
  Grad plain = Grad::zeros_like(m.params);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    Tape t;
    const auto eps = standard_normal(3, mix_seed(seed, i));
    const auto enc = encode_vars(t, m, batch[i].ids);
    const auto logits = decode_logit_vars(t, m, reparam_vars(enc, eps));
    Var recon = t.scalar(0.0);
    for (int s = 0; s < 4; ++s) recon = recon + pick(log_softmax(logits[s]), batch[i].ids[s]);
    const Var kl = 0.5 * add_scalar(sum(square(enc.mu) + exp(enc.log_var) - enc.log_var), -3.0);
    t.backward(recon - kl);
    plain.add(t.param_grad(m.params));
  }
  plain.scale(1.0 / batch.size());
  REQUIRE(trained.congruent(m.params));
  for (std::size_t l = 0; l < plain.leaves.size(); ++l) {
    for (std::size_t k = 0; k < plain.leaves[l].size(); ++k) {
      CHECK(relative_error(trained.leaves[l][k], plain.leaves[l][k], 1e-12) < 1e-10);
    }
  }
}

}  // TEST_SUITE

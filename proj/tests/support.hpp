#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>

#include "glsr/corpus.hpp"
#include "glsr/seqvae.hpp"

namespace glsr::testing {

/// Fresh, empty scratch directory under the system temp directory.
inline std::filesystem::path test_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / "glsr_tests" / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

/// Tiny model shape used by gradient checks: T=4, A=5, D=3, H=8.
inline TokenVocab tiny_vocab() { return TokenVocab({"__", "R", "C4", "D4", "E4"}, "__", "R"); }

inline ModelConfig tiny_config() {
  ModelConfig c;
  c.vocab_size = 5;
  c.seq_len = 4;
  c.latent_dim = 3;
  c.hidden = 8;
  c.layers = 2;
  c.embed = 4;
  c.dropout = 0.0;
  return c;
}

/// Five-point central difference of f with respect to x, restoring x afterwards.
inline double central_difference(const std::function<double()>& f, double& x, double h) {
  const double x0 = x;
  x = x0 + 2 * h;
  const double f2 = f();
  x = x0 + h;
  const double f1 = f();
  x = x0 - h;
  const double m1 = f();
  x = x0 - 2 * h;
  const double m2 = f();
  x = x0;
  return (-f2 + 8 * f1 - 8 * m1 + m2) / (12 * h);
}

/// |a - b| relative to the larger magnitude. Magnitudes below `floor` count as
/// `floor`: a five-point difference of an objective of order 10 carries about
/// 1e-10 of rounding noise, so near-zero gradients are compared absolutely.
inline double relative_error(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace glsr::testing

#include <cmath>
#include <numeric>

#include "glsr/diffcore.hpp"

namespace glsr {

Leaf& ParamTree::add(std::string path, std::vector<int> shape) {
  if (shape.empty() || shape.size() > 2) throw ShapeError("leaf " + path + ": shape must have rank 1 or 2");
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 1) throw ShapeError("leaf " + path + ": non-positive dimension");
    n *= static_cast<std::size_t>(d);
  }
  if (!index_.emplace(path, leaves_.size()).second) throw std::invalid_argument("duplicate leaf path: " + path);
  leaves_.push_back(Leaf{std::move(path), std::move(shape), std::vector<double>(n, 0.0)});
  return leaves_.back();
}

std::size_t ParamTree::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : leaves_) n += l.data.size();
  return n;
}

std::size_t ParamTree::index_of(std::string_view path) const {
  auto it = index_.find(std::string(path));
  if (it == index_.end()) throw std::out_of_range("no parameter leaf " + std::string(path));
  return it->second;
}

// ---------------------------------------------------------------------------

Grad Grad::zeros_like(const ParamTree& params) {
  Grad g;
  g.leaves.reserve(params.size());
  for (const auto& l : params) g.leaves.emplace_back(l.data.size(), 0.0);
  return g;
}

bool Grad::congruent(const ParamTree& params) const {
  if (leaves.size() != params.size()) return false;
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    if (leaves[i].size() != params.at(i).data.size()) return false;
  }
  return true;
}

void Grad::add(const Grad& other) {
  if (other.leaves.size() != leaves.size()) throw ShapeError("gradient trees differ in leaf count");
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    if (other.leaves[i].size() != leaves[i].size()) throw ShapeError("gradient leaf size mismatch");
    for (std::size_t j = 0; j < leaves[i].size(); ++j) leaves[i][j] += other.leaves[i][j];
  }
}

void Grad::scale(double factor) {
  for (auto& l : leaves) {
    for (auto& v : l) v *= factor;
  }
}

double Grad::global_norm() const {
  double s = 0.0;
  for (const auto& l : leaves) {
    for (double v : l) s += v * v;
  }
  return std::sqrt(s);
}

double clip_global_norm(Grad& grad, double max_norm) {
  const double norm = grad.global_norm();
  if (max_norm > 0.0 && norm > max_norm) grad.scale(max_norm / norm);
  return norm;
}

// ---------------------------------------------------------------------------

namespace {

void fill_uniform(Leaf& leaf, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : leaf.data) v = dist(rng);
}

}  // namespace

ParamTree init_params(std::span<const LayerSpec> spec, std::uint64_t seed) {
  ParamTree tree;
  std::mt19937_64 rng(seed);
  for (const auto& layer : spec) {
    std::visit(
        [&](const auto& s) {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, DenseSpec>) {
            if (s.in < 1 || s.out < 1) throw ShapeError("dense " + s.name + ": non-positive width");
            fill_uniform(tree.add(s.name + "/W", {s.out, s.in}), 1.0 / std::sqrt(double(s.in)), rng);
            tree.add(s.name + "/b", {s.out});
          } else if constexpr (std::is_same_v<T, EmbeddingSpec>) {
            if (s.vocab < 1 || s.width < 1) throw ShapeError("embedding " + s.name + ": non-positive size");
            fill_uniform(tree.add(s.name + "/E", {s.vocab, s.width}), 1.0 / std::sqrt(double(s.width)), rng);
          } else {
            if (s.input < 1 || s.hidden < 1 || s.layers < 1) throw ShapeError("lstm " + s.name + ": non-positive size");
            for (int k = 0; k < s.layers; ++k) {
              const int in = (k == 0 ? s.input : s.hidden) + s.hidden;
              const std::string prefix = s.name + "/l" + std::to_string(k);
              fill_uniform(tree.add(prefix + "/W", {4 * s.hidden, in}), 1.0 / std::sqrt(double(in)), rng);
              auto& b = tree.add(prefix + "/b", {4 * s.hidden});
              std::fill(b.data.begin() + s.hidden, b.data.begin() + 2 * s.hidden, 1.0);
            }
          }
        },
        layer);
  }
  return tree;
}

// ---------------------------------------------------------------------------

void adam_ascent_step(ParamTree& params, const Grad& grad, AdamState& state, double lr, const AdamConfig& config) {
  if (!grad.congruent(params)) throw ShapeError("gradient is not congruent with parameters");
  if (state.m.leaves.empty()) {
    state.m = Grad::zeros_like(params);
    state.v = Grad::zeros_like(params);
  }
  if (!state.m.congruent(params) || !state.v.congruent(params)) throw ShapeError("optimizer state shape mismatch");
  ++state.step;
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& data = params.at(i).data;
    auto& m = state.m.leaves[i];
    auto& v = state.v.leaves[i];
    const auto& g = grad.leaves[i];
    for (std::size_t j = 0; j < data.size(); ++j) {
      m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * g[j];
      v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * g[j] * g[j];
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      data[j] += lr * mhat / (std::sqrt(vhat) + config.eps);
    }
  }
}

}  // namespace glsr

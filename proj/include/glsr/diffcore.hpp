#pragma once

// Reverse-mode differentiation over vectors and matrices, parameter storage,
// LSTM stacks and the Adam ascent step. Everything is double precision.

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

namespace glsr {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A non-finite cotangent reached a parameter leaf.
class GradientError : public std::runtime_error {
 public:
  explicit GradientError(std::string leaf)
      : std::runtime_error("non-finite gradient at " + leaf), leaf_(std::move(leaf)) {}
  const std::string& leaf() const { return leaf_; }

 private:
  std::string leaf_;
};

struct Leaf {
  std::string path;
  std::vector<int> shape;  // [rows, cols] for matrices, [n] for vectors
  std::vector<double> data;

  int rows() const { return shape.at(0); }
  int cols() const { return shape.size() > 1 ? shape[1] : 1; }
  bool operator==(const Leaf&) const = default;
};

class ParamTree {
 public:
  Leaf& add(std::string path, std::vector<int> shape);

  std::size_t size() const { return leaves_.size(); }
  std::size_t parameter_count() const;
  bool contains(std::string_view path) const { return index_.count(std::string(path)) > 0; }
  std::size_t index_of(std::string_view path) const;

  const Leaf& at(std::size_t i) const { return leaves_.at(i); }
  Leaf& at(std::size_t i) { return leaves_.at(i); }
  const Leaf& operator[](std::string_view path) const { return leaves_[index_of(path)]; }
  Leaf& operator[](std::string_view path) { return leaves_[index_of(path)]; }

  auto begin() const { return leaves_.begin(); }
  auto end() const { return leaves_.end(); }
  auto begin() { return leaves_.begin(); }
  auto end() { return leaves_.end(); }

  bool operator==(const ParamTree& other) const { return leaves_ == other.leaves_; }

 private:
  std::vector<Leaf> leaves_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// One cotangent array per ParamTree leaf, in leaf order.
struct Grad {
  std::vector<std::vector<double>> leaves;

  static Grad zeros_like(const ParamTree& params);
  bool congruent(const ParamTree& params) const;
  void add(const Grad& other);
  void scale(double factor);
  double global_norm() const;
  bool operator==(const Grad&) const = default;
};

/// Rescales `grad` so its global norm is at most `max_norm`; returns the norm before clipping.
double clip_global_norm(Grad& grad, double max_norm);

// ---------------------------------------------------------------------------
// Layer shapes and initialization

struct DenseSpec {
  std::string name;
  int in = 0;
  int out = 0;
};
struct EmbeddingSpec {
  std::string name;
  int vocab = 0;
  int width = 0;
};
struct LstmSpec {
  std::string name;
  int input = 0;
  int hidden = 0;
  int layers = 1;
};
using LayerSpec = std::variant<DenseSpec, EmbeddingSpec, LstmSpec>;

/// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases zero except the
/// LSTM forget gate, which starts at 1. Leaves:
///   dense      name/W [out,in], name/b [out]
///   embedding  name/E [vocab,width]
///   lstm       name/l<k>/W [4H, in_k+H], name/l<k>/b [4H], gate order i,f,g,o
ParamTree init_params(std::span<const LayerSpec> spec, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Recorded computation

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  Tape& tape() const { return *tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }
  std::span<const double> value() const;
  double item() const;
  int size() const;

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(std::vector<double> values);
  Var scalar(double value) { return constant({value}); }
  /// Leaf that receives a gradient but is not a parameter (tests, probes).
  Var variable(std::vector<double> values);
  /// Parameter leaf bound to tree.at(leaf); the value is read in place, so the
  /// tree must outlive the tape and stay unmodified while it is in use.
  Var param(const ParamTree& tree, std::size_t leaf);
  Var param(const ParamTree& tree, std::string_view path) { return param(tree, tree.index_of(path)); }

  /// Reverse sweep from a scalar root. Can be called once per tape.
  void backward(Var root);
  /// Cotangent of a node after backward(); zeros if the node was unreachable.
  std::vector<double> grad(Var v) const;
  /// Parameter cotangents in leaf order. Throws GradientError on NaN/Inf.
  Grad param_grad(const ParamTree& tree) const;

  std::size_t node_count() const { return nodes_.size(); }

  // Building blocks for operations.
  Var push(std::vector<double> value, int rows, int cols, bool requires_grad, BackwardFn backward);
  std::span<const double> value_of(int id) const;
  std::vector<double>& grad_of(int id);
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  int rows(int id) const { return nodes_[id].rows; }
  int cols(int id) const { return nodes_[id].cols; }

 private:
  struct Node {
    int rows = 0;
    int cols = 1;
    std::vector<double> value;
    const double* external = nullptr;
    std::vector<double> grad;
    bool requires_grad = false;
    BackwardFn backward;
    int param_leaf = -1;
  };
  std::vector<Node> nodes_;
  std::unordered_map<const Leaf*, int> param_nodes_;
  const ParamTree* bound_tree_ = nullptr;
};

// Operations. Unless stated otherwise arguments are vectors of equal size.

Var matvec(Var matrix, Var x);  // [m,n] x [n] -> [m]
Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);    // elementwise
Var operator*(double c, Var a);
Var operator-(Var a);
Var add_scalar(Var a, double c);
Var sigmoid(Var a);
Var tanh(Var a);
Var exp(Var a);
Var log(Var a);
Var square(Var a);
Var concat(std::span<const Var> parts);
Var slice(Var a, int offset, int length);
Var row(Var matrix, int index);  // [m,n] -> [n]
Var softmax(Var a);
Var log_softmax(Var a);
Var pick(Var a, int index);                      // scalar a[index]
Var dot(Var a, std::span<const double> weights); // scalar
Var sum(Var a);                                  // scalar
Var mul_const(Var a, std::span<const double> factors);

/// Inverted dropout. Masks are drawn from a private generator, so two Dropout
/// objects built from the same seed replay identical masks.
class Dropout {
 public:
  Dropout(double rate, std::uint64_t seed);
  Var apply(Var x);
  double rate() const { return rate_; }

 private:
  double rate_;
  std::mt19937_64 rng_;
};

/// Stacked LSTM bound to leaves "<name>/l<k>/{W,b}" of a ParamTree.
class LstmStack {
 public:
  struct State {
    std::vector<Var> h;
    std::vector<Var> c;
  };

  LstmStack(const ParamTree& params, std::string name, int input, int hidden, int layers);

  int input() const { return input_; }
  int hidden() const { return hidden_; }
  int layers() const { return layers_; }

  State initial_state(Tape& tape) const;
  /// Advances all layers one step and returns the top layer's h. Dropout, when
  /// given, is applied to the outputs passed from one layer to the next.
  Var step(Tape& tape, Var input, State& state, Dropout* dropout = nullptr) const;

 private:
  const ParamTree* params_;
  std::string name_;
  int input_;
  int hidden_;
  int layers_;
};

// ---------------------------------------------------------------------------
// Optimizer

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::int64_t step = 0;
  Grad m;
  Grad v;
  bool operator==(const AdamState&) const = default;
};

/// One Adam update in the ascent direction (the objective is maximized).
void adam_ascent_step(ParamTree& params, const Grad& grad, AdamState& state, double lr,
                      const AdamConfig& config = {});

}  // namespace glsr

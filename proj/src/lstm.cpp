#include "glsr/diffcore.hpp"

namespace glsr {

LstmStack::LstmStack(const ParamTree& params, std::string name, int input, int hidden, int layers)
    : params_(&params), name_(std::move(name)), input_(input), hidden_(hidden), layers_(layers) {
  if (input < 1 || hidden < 1 || layers < 1) throw ShapeError("lstm " + name_ + ": non-positive size");
  for (int k = 0; k < layers; ++k) {
    const auto& w = params[name_ + "/l" + std::to_string(k) + "/W"];
    const int in = (k == 0 ? input : hidden) + hidden;
    if (w.rows() != 4 * hidden || w.cols() != in) throw ShapeError("lstm " + name_ + ": weight shape mismatch");
  }
}

LstmStack::State LstmStack::initial_state(Tape& tape) const {
  State s;
  for (int k = 0; k < layers_; ++k) {
    s.h.push_back(tape.constant(std::vector<double>(hidden_, 0.0)));
    s.c.push_back(tape.constant(std::vector<double>(hidden_, 0.0)));
  }
  return s;
}

Var LstmStack::step(Tape& tape, Var input, State& state, Dropout* dropout) const {
  if (input.size() != input_) {
    throw ShapeError("lstm " + name_ + ": input width " + std::to_string(input.size()) + ", expected " +
                     std::to_string(input_));
  }
  Var x = input;
  for (int k = 0; k < layers_; ++k) {
    if (k > 0 && dropout) x = dropout->apply(x);
    const std::string prefix = name_ + "/l" + std::to_string(k);
    const Var w = tape.param(*params_, prefix + "/W");
    const Var b = tape.param(*params_, prefix + "/b");
    const Var xh[] = {x, state.h[k]};
    const Var gates = matvec(w, concat(xh)) + b;
    const Var i = sigmoid(slice(gates, 0, hidden_));
    const Var f = sigmoid(slice(gates, hidden_, hidden_));
    const Var g = tanh(slice(gates, 2 * hidden_, hidden_));
    const Var o = sigmoid(slice(gates, 3 * hidden_, hidden_));
    state.c[k] = f * state.c[k] + i * g;
    state.h[k] = o * tanh(state.c[k]);
    x = state.h[k];
  }
  return x;
}

}  // namespace glsr

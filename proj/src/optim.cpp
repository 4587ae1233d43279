#include "simt/optim.hpp"

#include <cmath>
#include <string>

#include "simt/error.hpp"

namespace simt {

GradientResult gradient(const Model& model, const LossClosure& loss, const Parameters* values) {
  ad::Tape tape;
  ParamBinding bind(tape, model, values, true);
  ad::Var root = loss(bind);
  GradientResult r;
  r.loss = root.scalar();
  if (!std::isfinite(r.loss)) throw NumericError("non-finite loss");
  if (tape.requires_grad(root)) {
    tape.backward(root);
    r.grads = bind.gradients();
  } else {
    r.grads = zeros_like(values ? *values : model.params());
  }
  return r;
}

double evaluate_loss(const Model& model, const LossClosure& loss, const Parameters* values) {
  ad::Tape tape;
  ParamBinding bind(tape, model, values, false);
  return loss(bind).scalar();
}

void apply_update(Parameters& params, const Gradients& grads, AdamState& state, const AdamConfig& config) {
  if (grads.size() != params.size()) {
    throw ShapeError("gradient count " + std::to_string(grads.size()) + " != parameter count " +
                     std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].rows() != params[i].rows() || grads[i].cols() != params[i].cols()) {
      throw ShapeError("gradient shape mismatch for " + params.name(i));
    }
  }
  if (state.m.empty()) {
    state.m = zeros_like(params);
    state.v = zeros_like(params);
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * grads[i];
    state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * grads[i].cwiseProduct(grads[i]);
    params[i].array() -= config.lr * (state.m[i].array() / bc1) /
                         ((state.v[i].array() / bc2).sqrt() + config.eps);
  }
}

}  // namespace simt

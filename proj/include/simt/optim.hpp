#pragma once

#include <functional>

#include "simt/model.hpp"
#include "simt/transformer.hpp"

namespace simt {

/// Builds a scalar loss on the binding's tape. Must be a deterministic
/// function of the bound parameter values.
using LossClosure = std::function<ad::Var(ParamBinding&)>;

struct GradientResult {
  double loss = 0.0;
  Gradients grads;
};

/// Reverse-mode gradient of `loss` at the model's parameters (or at `values`
/// when given). Throws NumericError for a non-finite loss.
GradientResult gradient(const Model& model, const LossClosure& loss, const Parameters* values = nullptr);

/// Loss value only.
double evaluate_loss(const Model& model, const LossClosure& loss, const Parameters* values = nullptr);

struct AdamConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
};

struct AdamState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  long step = 0;
};

/// One bias-corrected Adam step in place. Initialises the moment buffers on
/// first use.
void apply_update(Parameters& params, const Gradients& grads, AdamState& state, const AdamConfig& config);

}  // namespace simt

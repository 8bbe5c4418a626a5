#pragma once

#include "flsim/model.hpp"

namespace flsim {

struct OptimizerConfig {
  double learning_rate = 0.01;
  double weight_decay = 0.001;
  std::size_t batch_size = 32;

  void validate() const {
    if (learning_rate <= 0.0) throw DimensionError("optimizer: learning_rate must be > 0");
    if (weight_decay < 0.0) throw DimensionError("optimizer: weight_decay must be >= 0");
    if (batch_size < 1) throw DimensionError("optimizer: batch_size must be >= 1");
  }
};

// w' = w - lr * (grad + weight_decay * w); version_tag carried over.
ModelState sgd_step(const ModelState& model, const Gradient& grad, const OptimizerConfig& cfg);

// In-place variant for the training loop.
void sgd_step_inplace(ModelState& model, const Gradient& grad, const OptimizerConfig& cfg);

}  // namespace flsim

#include "flsim/optimizer.hpp"

namespace flsim {

namespace {

void step_array(DenseArray& w, const DenseArray& g, double lr, double wd) {
  if (!w.same_shape(g)) throw DimensionError("sgd_step: gradient shape mismatch");
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] -= lr * (g[i] + wd * w[i]);
  }
}

}  // namespace

void sgd_step_inplace(ModelState& model, const Gradient& grad, const OptimizerConfig& cfg) {
  cfg.validate();
  const double lr = cfg.learning_rate;
  const double wd = cfg.weight_decay;
  for (std::size_t i = 0; i < model.params.encoder.size(); ++i) {
    if (!model.params.encoder[i].present) continue;
    step_array(model.params.encoder[i].weight, grad.params.encoder[i].weight, lr, wd);
    step_array(model.params.encoder[i].bias, grad.params.encoder[i].bias, lr, wd);
  }
  step_array(model.params.projection.weight, grad.params.projection.weight, lr, wd);
  step_array(model.params.projection.bias, grad.params.projection.bias, lr, wd);
  step_array(model.params.classifier.weight, grad.params.classifier.weight, lr, wd);
  step_array(model.params.classifier.bias, grad.params.classifier.bias, lr, wd);
}

ModelState sgd_step(const ModelState& model, const Gradient& grad, const OptimizerConfig& cfg) {
  ModelState out = model;
  sgd_step_inplace(out, grad, cfg);
  return out;
}

}  // namespace flsim

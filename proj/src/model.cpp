#include "flsim/model.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace flsim {

namespace {

void for_each_layer(const ParamSet& p, const std::function<void(const ParamLayer&)>& fn) {
  for (const auto& l : p.encoder) {
    if (l.present) fn(l);
  }
  fn(p.projection);
  fn(p.classifier);
}

void for_each_layer(ParamSet& p, const std::function<void(ParamLayer&)>& fn) {
  for (auto& l : p.encoder) {
    if (l.present) fn(l);
  }
  fn(p.projection);
  fn(p.classifier);
}

}  // namespace

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for_each_layer(*this, [&](const ParamLayer& l) { n += l.weight.size() + l.bias.size(); });
  return n;
}

std::vector<double> ParamSet::flatten() const {
  std::vector<double> out;
  out.reserve(scalar_count());
  for_each_layer(*this, [&](const ParamLayer& l) {
    out.insert(out.end(), l.weight.raw().begin(), l.weight.raw().end());
    out.insert(out.end(), l.bias.raw().begin(), l.bias.raw().end());
  });
  return out;
}

void ParamSet::unflatten(const std::vector<double>& flat) {
  if (flat.size() != scalar_count()) {
    throw DimensionError("unflatten: vector of " + std::to_string(flat.size()) +
                         " scalars does not match parameter count " + std::to_string(scalar_count()));
  }
  std::size_t pos = 0;
  for_each_layer(*this, [&](ParamLayer& l) {
    std::copy(flat.begin() + pos, flat.begin() + pos + l.weight.size(), l.weight.raw().begin());
    pos += l.weight.size();
    std::copy(flat.begin() + pos, flat.begin() + pos + l.bias.size(), l.bias.raw().begin());
    pos += l.bias.size();
  });
}

bool ParamSet::congruent(const ParamSet& other) const {
  if (encoder.size() != other.encoder.size()) return false;
  for (std::size_t i = 0; i < encoder.size(); ++i) {
    if (encoder[i].present != other.encoder[i].present) return false;
    if (!encoder[i].present) continue;
    if (!encoder[i].weight.same_shape(other.encoder[i].weight)) return false;
    if (!encoder[i].bias.same_shape(other.encoder[i].bias)) return false;
  }
  return projection.weight.same_shape(other.projection.weight) &&
         classifier.weight.same_shape(other.classifier.weight);
}

void ParamSet::axpy(double scale, const ParamSet& other) {
  if (!congruent(other)) throw DimensionError("ParamSet::axpy: incongruent parameter sets");
  auto it = other.encoder.begin();
  for (auto& l : encoder) {
    if (l.present) {
      for (std::size_t i = 0; i < l.weight.size(); ++i) l.weight[i] += scale * it->weight[i];
      for (std::size_t i = 0; i < l.bias.size(); ++i) l.bias[i] += scale * it->bias[i];
    }
    ++it;
  }
  for (std::size_t i = 0; i < projection.weight.size(); ++i)
    projection.weight[i] += scale * other.projection.weight[i];
  for (std::size_t i = 0; i < projection.bias.size(); ++i)
    projection.bias[i] += scale * other.projection.bias[i];
  for (std::size_t i = 0; i < classifier.weight.size(); ++i)
    classifier.weight[i] += scale * other.classifier.weight[i];
  for (std::size_t i = 0; i < classifier.bias.size(); ++i)
    classifier.bias[i] += scale * other.classifier.bias[i];
}

void ParamSet::scale(double factor) {
  for_each_layer(*this, [&](ParamLayer& l) {
    for (auto& v : l.weight.raw()) v *= factor;
    for (auto& v : l.bias.raw()) v *= factor;
  });
}

void ParamSet::fill(double value) {
  for_each_layer(*this, [&](ParamLayer& l) {
    for (auto& v : l.weight.raw()) v = value;
    for (auto& v : l.bias.raw()) v = value;
  });
}

double ParamSet::squared_distance(const ParamSet& other) const {
  if (!congruent(other)) throw DimensionError("ParamSet::squared_distance: incongruent sets");
  double acc = 0.0;
  auto accum = [&](const DenseArray& a, const DenseArray& b) {
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double d = a[i] - b[i];
      acc += d * d;
    }
  };
  for (std::size_t i = 0; i < encoder.size(); ++i) {
    if (!encoder[i].present) continue;
    accum(encoder[i].weight, other.encoder[i].weight);
    accum(encoder[i].bias, other.encoder[i].bias);
  }
  accum(projection.weight, other.projection.weight);
  accum(projection.bias, other.projection.bias);
  accum(classifier.weight, other.classifier.weight);
  accum(classifier.bias, other.classifier.bias);
  return acc;
}

ParamSet make_param_set(const ArchSpec& arch) {
  ParamSet p;
  p.encoder.resize(arch.layers.size());
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    if (const auto* conv = std::get_if<Conv1DSpec>(&arch.layers[i])) {
      p.encoder[i].present = true;
      p.encoder[i].weight = DenseArray({conv->out_channels, conv->in_channels, conv->kernel});
      p.encoder[i].bias = DenseArray({conv->out_channels});
    } else if (const auto* dense = std::get_if<DenseSpec>(&arch.layers[i])) {
      p.encoder[i].present = true;
      p.encoder[i].weight = DenseArray({dense->out_dim, dense->in_dim});
      p.encoder[i].bias = DenseArray({dense->out_dim});
    }
  }
  p.projection.present = true;
  p.projection.weight = DenseArray({arch.projection_dim, arch.encoder_output_dim});
  p.projection.bias = DenseArray({arch.projection_dim});
  p.classifier.present = true;
  p.classifier.weight = DenseArray({arch.num_classes, arch.encoder_output_dim});
  p.classifier.bias = DenseArray({arch.num_classes});
  return p;
}

namespace {

void xavier_fill(DenseArray& w, std::size_t fan_in, std::size_t fan_out, RandomEngine& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& v : w.raw()) v = rng.uniform(-limit, limit);
}

}  // namespace

ModelState init_model(const ArchSpec& arch, RandomEngine& rng) {
  ModelState m;
  m.arch = arch;
  m.params = make_param_set(arch);
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    auto& l = m.params.encoder[i];
    if (!l.present) continue;
    if (const auto* conv = std::get_if<Conv1DSpec>(&arch.layers[i])) {
      xavier_fill(l.weight, conv->in_channels * conv->kernel, conv->out_channels * conv->kernel, rng);
    } else if (const auto* dense = std::get_if<DenseSpec>(&arch.layers[i])) {
      xavier_fill(l.weight, dense->in_dim, dense->out_dim, rng);
    }
  }
  xavier_fill(m.params.projection.weight, arch.encoder_output_dim, arch.projection_dim, rng);
  xavier_fill(m.params.classifier.weight, arch.encoder_output_dim, arch.num_classes, rng);
  return m;
}

ModelState zeros_model(const ArchSpec& arch) {
  ModelState m;
  m.arch = arch;
  m.params = make_param_set(arch);
  return m;
}

}  // namespace flsim

#include "flsim/arch.hpp"

#include <sstream>

namespace flsim {

LayerShape propagate_shape(const LayerSpec& layer, const LayerShape& in) {
  LayerShape out = in;
  if (const auto* conv = std::get_if<Conv1DSpec>(&layer)) {
    if (in.flattened) throw DimensionError("Conv1D after Flatten");
    if (conv->in_channels != in.channels) {
      throw DimensionError("Conv1D expects " + std::to_string(conv->in_channels) + " channels, got " +
                           std::to_string(in.channels));
    }
    if (conv->kernel == 0 || conv->stride == 0 || conv->out_channels == 0) {
      throw DimensionError("Conv1D: kernel, stride and out_channels must be positive");
    }
    if (in.length < conv->kernel) {
      throw DimensionError("Conv1D: input length " + std::to_string(in.length) +
                           " shorter than kernel " + std::to_string(conv->kernel));
    }
    out.channels = conv->out_channels;
    out.length = (in.length - conv->kernel) / conv->stride + 1;
  } else if (std::holds_alternative<ReluSpec>(layer)) {
    // shape preserved
  } else if (const auto* pool = std::get_if<MaxPool1DSpec>(&layer)) {
    if (in.flattened) throw DimensionError("MaxPool1D after Flatten");
    if (pool->kernel == 0) throw DimensionError("MaxPool1D: kernel must be positive");
    if (in.length < pool->kernel) {
      throw DimensionError("MaxPool1D: input length " + std::to_string(in.length) +
                           " shorter than kernel " + std::to_string(pool->kernel));
    }
    out.length = in.length / pool->kernel;
  } else if (std::holds_alternative<FlattenSpec>(layer)) {
    if (in.flattened) throw DimensionError("Flatten applied twice");
    out.flattened = true;
    out.features = in.channels * in.length;
  } else if (const auto* dense = std::get_if<DenseSpec>(&layer)) {
    if (!in.flattened) throw DimensionError("Dense before Flatten");
    if (dense->in_dim != in.features) {
      throw DimensionError("Dense expects " + std::to_string(dense->in_dim) + " features, got " +
                           std::to_string(in.features));
    }
    if (dense->out_dim == 0) throw DimensionError("Dense: out_dim must be positive");
    out.features = dense->out_dim;
  }
  return out;
}

void ArchSpec::validate(std::size_t in_channels, std::size_t window_len) const {
  if (layers.empty()) throw DimensionError("ArchSpec: empty layer list");
  if (encoder_output_dim == 0) throw DimensionError("ArchSpec: encoder_output_dim must be positive");
  if (projection_dim == 0) throw DimensionError("ArchSpec: projection_dim must be positive");
  if (num_classes < 2) throw DimensionError("ArchSpec: num_classes must be >= 2");

  LayerShape s;
  s.channels = in_channels;
  s.length = window_len;
  for (const auto& layer : layers) s = propagate_shape(layer, s);
  if (!s.flattened) throw DimensionError("ArchSpec: trunk must end flattened");
  if (s.features != encoder_output_dim) {
    throw DimensionError("ArchSpec: trunk produces " + std::to_string(s.features) +
                         " features, expected encoder_output_dim=" + std::to_string(encoder_output_dim));
  }
}

std::size_t ArchSpec::input_channels() const {
  if (layers.empty()) throw DimensionError("ArchSpec: empty layer list");
  if (const auto* conv = std::get_if<Conv1DSpec>(&layers.front())) return conv->in_channels;
  throw DimensionError("ArchSpec: first layer is not Conv1D; input channels undefined");
}

ArchSpec default_arch(std::size_t in_channels, std::size_t window_len, std::size_t num_classes,
                      const ArchOptions& opts) {
  ArchSpec arch;
  LayerShape s;
  s.channels = in_channels;
  s.length = window_len;
  std::size_t prev = in_channels;
  for (std::size_t ch : opts.conv_channels) {
    Conv1DSpec conv{prev, ch, opts.kernel, 1};
    arch.layers.emplace_back(conv);
    s = propagate_shape(arch.layers.back(), s);
    arch.layers.emplace_back(ReluSpec{});
    arch.layers.emplace_back(MaxPool1DSpec{opts.pool});
    s = propagate_shape(arch.layers.back(), s);
    prev = ch;
  }
  arch.layers.emplace_back(FlattenSpec{});
  s = propagate_shape(arch.layers.back(), s);
  arch.layers.emplace_back(DenseSpec{s.features, opts.d_enc});
  arch.encoder_output_dim = opts.d_enc;
  arch.projection_dim = opts.d_proj;
  arch.num_classes = num_classes;
  arch.validate(in_channels, window_len);
  return arch;
}

std::string layer_description(const LayerSpec& layer) {
  std::ostringstream os;
  if (const auto* c = std::get_if<Conv1DSpec>(&layer)) {
    os << "Conv1D(" << c->in_channels << "->" << c->out_channels << ", k=" << c->kernel
       << ", s=" << c->stride << ")";
  } else if (std::holds_alternative<ReluSpec>(layer)) {
    os << "ReLU";
  } else if (const auto* p = std::get_if<MaxPool1DSpec>(&layer)) {
    os << "MaxPool1D(" << p->kernel << ")";
  } else if (std::holds_alternative<FlattenSpec>(layer)) {
    os << "Flatten";
  } else if (const auto* d = std::get_if<DenseSpec>(&layer)) {
    os << "Dense(" << d->in_dim << "->" << d->out_dim << ")";
  }
  return os.str();
}

}  // namespace flsim

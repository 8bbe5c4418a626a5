#pragma once

#include <cstddef>
#include <string>
#include <variant>
#include <vector>

#include "flsim/errors.hpp"

namespace flsim {

struct Conv1DSpec {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 0;
  std::size_t stride = 1;
};

struct ReluSpec {};

struct MaxPool1DSpec {
  std::size_t kernel = 2;  // non-overlapping: stride == kernel
};

struct FlattenSpec {};

struct DenseSpec {
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
};

using LayerSpec = std::variant<Conv1DSpec, ReluSpec, MaxPool1DSpec, FlattenSpec, DenseSpec>;

// Declarative network description: the encoder trunk plus the dimensions of
// the projection head (Dense d_enc -> d_proj) and classifier (Dense d_enc -> C).
// Drives both the trainable model and the analytic parameter/MAC counters.
struct ArchSpec {
  std::vector<LayerSpec> layers;
  std::size_t encoder_output_dim = 0;  // d_enc
  std::size_t projection_dim = 0;      // d_proj
  std::size_t num_classes = 0;

  // Checks that layer dims chain consistently for the given input and that
  // the trunk lands on encoder_output_dim. Throws DimensionError.
  void validate(std::size_t in_channels, std::size_t window_len) const;

  std::size_t input_channels() const;
};

// Shape bookkeeping while walking a layer list.
struct LayerShape {
  std::size_t channels = 0;
  std::size_t length = 0;
  bool flattened = false;
  std::size_t features = 0;  // valid once flattened
};

LayerShape propagate_shape(const LayerSpec& layer, const LayerShape& in);

// Tunable knobs for the stock conv trunk.
struct ArchOptions {
  std::vector<std::size_t> conv_channels = {32, 64};
  std::size_t kernel = 8;
  std::size_t pool = 2;
  std::size_t d_enc = 128;
  std::size_t d_proj = 64;
};

// Conv/ReLU/pool stack ending in Dense(flattened -> d_enc).
ArchSpec default_arch(std::size_t in_channels, std::size_t window_len, std::size_t num_classes,
                      const ArchOptions& opts = {});

std::string layer_description(const LayerSpec& layer);

}  // namespace flsim

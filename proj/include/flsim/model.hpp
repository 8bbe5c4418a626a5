#pragma once

#include <cstdint>
#include <vector>

#include "flsim/arch.hpp"
#include "flsim/rng.hpp"
#include "flsim/tensor.hpp"

namespace flsim {

// Weight/bias pair for one parameterized layer (Conv1D or Dense). Layers
// without parameters keep an empty entry so indices line up with ArchSpec.
struct ParamLayer {
  DenseArray weight;
  DenseArray bias;
  bool present = false;
};

// Encoder trunk parameters plus the projection and classifier heads.
struct ParamSet {
  std::vector<ParamLayer> encoder;  // one entry per ArchSpec layer
  ParamLayer projection;            // Dense d_enc -> d_proj
  ParamLayer classifier;            // Dense d_enc -> num_classes

  std::size_t scalar_count() const;
  std::vector<double> flatten() const;
  void unflatten(const std::vector<double>& flat);

  // this += scale * other (shape-congruent)
  void axpy(double scale, const ParamSet& other);
  void scale(double factor);
  void fill(double value);
  double squared_distance(const ParamSet& other) const;
  bool congruent(const ParamSet& other) const;
};

struct ModelState {
  ArchSpec arch;
  ParamSet params;
  std::int64_t version_tag = 0;

  std::vector<double> flatten() const { return params.flatten(); }
  void unflatten(const std::vector<double>& flat) { params.unflatten(flat); }
};

struct Gradient {
  ParamSet params;
  std::vector<double> flatten() const { return params.flatten(); }
};

// Zero-valued ParamSet with shapes dictated by the arch.
ParamSet make_param_set(const ArchSpec& arch);

// Xavier-uniform init, deterministic under the engine's stream.
ModelState init_model(const ArchSpec& arch, RandomEngine& rng);

ModelState zeros_model(const ArchSpec& arch);

}  // namespace flsim

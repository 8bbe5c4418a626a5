#pragma once

#include <vector>

#include "flsim/model.hpp"
#include "flsim/tensor.hpp"

namespace flsim {

// Saved activations from one forward pass, consumed by the backward pass.
struct ForwardTrace {
  DenseArray input;                         // [B, C, L]
  std::vector<DenseArray> activations;      // output of every encoder layer
  std::vector<std::vector<std::size_t>> pool_argmax;  // per layer (empty unless MaxPool1D)
  DenseArray embeddings;                    // [B, d_enc]
  DenseArray projection_raw;                // [B, d_proj] before row normalization
  DenseArray projections;                   // [B, d_proj] rows L2-normalized (0 stays 0)
  std::vector<double> projection_norms;     // per row
  DenseArray logits;                        // [B, num_classes]
};

struct ForwardResult {
  DenseArray embeddings;
  DenseArray projections;
  DenseArray logits;
};

// Full forward pass. Checks input/activation finiteness; throws DimensionError
// on shape mismatch and NumericError on NaN/Inf.
ForwardResult forward(const ModelState& model, const DenseArray& batch);

ForwardTrace forward_trace(const ModelState& model, const DenseArray& batch);

// Backpropagates head/embedding gradients through the traced network.
// d_logits [B,C], d_projections [B,d_proj] (w.r.t. the normalized rows) and
// d_embeddings [B,d_enc] may be empty when a term is unused.
Gradient backprop(const ModelState& model, const ForwardTrace& trace, const DenseArray& d_logits,
                  const DenseArray& d_projections, const DenseArray& d_embeddings);

}  // namespace flsim

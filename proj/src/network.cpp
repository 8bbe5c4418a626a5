#include "flsim/network.hpp"

#include <cmath>
#include <cstring>

namespace flsim {

namespace {

DenseArray conv1d_forward(const Conv1DSpec& spec, const ParamLayer& p, const DenseArray& x) {
  const std::size_t batch = x.dim(0);
  const std::size_t in_len = x.dim(2);
  const std::size_t out_len = (in_len - spec.kernel) / spec.stride + 1;
  DenseArray y({batch, spec.out_channels, out_len});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t o = 0; o < spec.out_channels; ++o) {
      const double bias = p.bias[o];
      for (std::size_t t = 0; t < out_len; ++t) {
        double acc = bias;
        const std::size_t x0 = t * spec.stride;
        for (std::size_t c = 0; c < spec.in_channels; ++c) {
          const double* xr = x.data() + (b * spec.in_channels + c) * in_len + x0;
          const double* wr = p.weight.data() + (o * spec.in_channels + c) * spec.kernel;
          for (std::size_t k = 0; k < spec.kernel; ++k) acc += wr[k] * xr[k];
        }
        y.at3(b, o, t) = acc;
      }
    }
  }
  return y;
}

void conv1d_backward(const Conv1DSpec& spec, const ParamLayer& p, const DenseArray& x,
                     const DenseArray& dy, DenseArray& dx, ParamLayer& grad) {
  const std::size_t batch = x.dim(0);
  const std::size_t in_len = x.dim(2);
  const std::size_t out_len = dy.dim(2);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t o = 0; o < spec.out_channels; ++o) {
      for (std::size_t t = 0; t < out_len; ++t) {
        const double g = dy.at3(b, o, t);
        if (g == 0.0) continue;
        grad.bias[o] += g;
        const std::size_t x0 = t * spec.stride;
        for (std::size_t c = 0; c < spec.in_channels; ++c) {
          const double* xr = x.data() + (b * spec.in_channels + c) * in_len + x0;
          const double* wr = p.weight.data() + (o * spec.in_channels + c) * spec.kernel;
          double* dxr = dx.data() + (b * spec.in_channels + c) * in_len + x0;
          double* dwr = grad.weight.data() + (o * spec.in_channels + c) * spec.kernel;
          for (std::size_t k = 0; k < spec.kernel; ++k) {
            dwr[k] += g * xr[k];
            dxr[k] += g * wr[k];
          }
        }
      }
    }
  }
}

DenseArray maxpool_forward(const MaxPool1DSpec& spec, const DenseArray& x,
                           std::vector<std::size_t>& argmax) {
  const std::size_t batch = x.dim(0);
  const std::size_t channels = x.dim(1);
  const std::size_t in_len = x.dim(2);
  const std::size_t out_len = in_len / spec.kernel;
  DenseArray y({batch, channels, out_len});
  argmax.assign(batch * channels * out_len, 0);
  std::size_t pos = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      const double* xr = x.data() + (b * channels + c) * in_len;
      for (std::size_t t = 0; t < out_len; ++t) {
        std::size_t best = t * spec.kernel;
        double m = xr[best];
        for (std::size_t k = 1; k < spec.kernel; ++k) {
          const std::size_t idx = t * spec.kernel + k;
          if (xr[idx] > m) {  // first max wins ties
            m = xr[idx];
            best = idx;
          }
        }
        y.at3(b, c, t) = m;
        argmax[pos++] = best;
      }
    }
  }
  return y;
}

void maxpool_backward(const DenseArray& dy, const std::vector<std::size_t>& argmax,
                      std::size_t in_len, DenseArray& dx) {
  const std::size_t batch = dy.dim(0);
  const std::size_t channels = dy.dim(1);
  const std::size_t out_len = dy.dim(2);
  std::size_t pos = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      double* dxr = dx.data() + (b * channels + c) * in_len;
      for (std::size_t t = 0; t < out_len; ++t) {
        dxr[argmax[pos]] += dy.at3(b, c, t);
        ++pos;
      }
    }
  }
}

DenseArray dense_forward(const DenseSpec& spec, const ParamLayer& p, const DenseArray& x) {
  const std::size_t batch = x.dim(0);
  DenseArray y({batch, spec.out_dim});
  for (std::size_t b = 0; b < batch; ++b) {
    const double* xr = x.data() + b * spec.in_dim;
    for (std::size_t o = 0; o < spec.out_dim; ++o) {
      const double* wr = p.weight.data() + o * spec.in_dim;
      double acc = p.bias[o];
      for (std::size_t i = 0; i < spec.in_dim; ++i) acc += wr[i] * xr[i];
      y.at2(b, o) = acc;
    }
  }
  return y;
}

void dense_backward(const DenseSpec& spec, const ParamLayer& p, const DenseArray& x,
                    const DenseArray& dy, DenseArray& dx, ParamLayer& grad) {
  const std::size_t batch = x.dim(0);
  for (std::size_t b = 0; b < batch; ++b) {
    const double* xr = x.data() + b * spec.in_dim;
    double* dxr = dx.data() + b * spec.in_dim;
    for (std::size_t o = 0; o < spec.out_dim; ++o) {
      const double g = dy.at2(b, o);
      if (g == 0.0) continue;
      grad.bias[o] += g;
      const double* wr = p.weight.data() + o * spec.in_dim;
      double* dwr = grad.weight.data() + o * spec.in_dim;
      for (std::size_t i = 0; i < spec.in_dim; ++i) {
        dwr[i] += g * xr[i];
        dxr[i] += g * wr[i];
      }
    }
  }
}

DenseArray reshape_flat(const DenseArray& x) {
  // [B, C, L] -> [B, C*L]; row-major makes this a view-equivalent copy.
  return DenseArray({x.dim(0), x.dim(1) * x.dim(2)}, x.raw());
}

void check_batch_shape(const ModelState& model, const DenseArray& batch) {
  if (batch.rank() != 3) {
    throw DimensionError("forward: batch must be [B, channels, window]; got rank " +
                         std::to_string(batch.rank()));
  }
  const std::size_t in_ch = model.arch.input_channels();
  if (batch.dim(1) != in_ch) {
    throw DimensionError("forward: batch has " + std::to_string(batch.dim(1)) +
                         " channels, model expects " + std::to_string(in_ch));
  }
  if (batch.dim(0) == 0) throw DimensionError("forward: empty batch");
}

}  // namespace

ForwardTrace forward_trace(const ModelState& model, const DenseArray& batch) {
  check_batch_shape(model, batch);
  batch.require_finite("forward input");

  ForwardTrace trace;
  trace.input = batch;
  trace.activations.reserve(model.arch.layers.size());
  trace.pool_argmax.resize(model.arch.layers.size());

  const DenseArray* cur = &trace.input;
  for (std::size_t i = 0; i < model.arch.layers.size(); ++i) {
    const auto& layer = model.arch.layers[i];
    DenseArray out;
    if (const auto* conv = std::get_if<Conv1DSpec>(&layer)) {
      if (cur->dim(1) != conv->in_channels || cur->dim(2) < conv->kernel) {
        throw DimensionError("forward: Conv1D shape mismatch at layer " + std::to_string(i));
      }
      out = conv1d_forward(*conv, model.params.encoder[i], *cur);
    } else if (std::holds_alternative<ReluSpec>(layer)) {
      out = *cur;
      for (auto& v : out.raw()) v = v > 0.0 ? v : 0.0;
    } else if (const auto* pool = std::get_if<MaxPool1DSpec>(&layer)) {
      out = maxpool_forward(*pool, *cur, trace.pool_argmax[i]);
    } else if (std::holds_alternative<FlattenSpec>(layer)) {
      out = reshape_flat(*cur);
    } else if (const auto* dense = std::get_if<DenseSpec>(&layer)) {
      if (cur->rank() != 2 || cur->dim(1) != dense->in_dim) {
        throw DimensionError("forward: Dense shape mismatch at layer " + std::to_string(i));
      }
      out = dense_forward(*dense, model.params.encoder[i], *cur);
    }
    out.require_finite("forward activation");
    trace.activations.push_back(std::move(out));
    cur = &trace.activations.back();
  }

  trace.embeddings = trace.activations.back();

  const DenseSpec proj_spec{model.arch.encoder_output_dim, model.arch.projection_dim};
  trace.projection_raw = dense_forward(proj_spec, model.params.projection, trace.embeddings);
  trace.projection_raw.require_finite("projection output");

  // Row L2 normalization; all-zero rows stay zero instead of dividing by 0.
  const std::size_t batch_n = trace.projection_raw.dim(0);
  const std::size_t d_proj = trace.projection_raw.dim(1);
  trace.projections = trace.projection_raw;
  trace.projection_norms.assign(batch_n, 0.0);
  for (std::size_t b = 0; b < batch_n; ++b) {
    double sq = 0.0;
    for (std::size_t j = 0; j < d_proj; ++j) {
      const double v = trace.projection_raw.at2(b, j);
      sq += v * v;
    }
    const double norm = std::sqrt(sq);
    trace.projection_norms[b] = norm;
    if (norm > 0.0) {
      for (std::size_t j = 0; j < d_proj; ++j) trace.projections.at2(b, j) /= norm;
    }
  }

  const DenseSpec clf_spec{model.arch.encoder_output_dim, model.arch.num_classes};
  trace.logits = dense_forward(clf_spec, model.params.classifier, trace.embeddings);
  trace.logits.require_finite("logits");
  return trace;
}

ForwardResult forward(const ModelState& model, const DenseArray& batch) {
  ForwardTrace trace = forward_trace(model, batch);
  return ForwardResult{std::move(trace.embeddings), std::move(trace.projections),
                       std::move(trace.logits)};
}

Gradient backprop(const ModelState& model, const ForwardTrace& trace, const DenseArray& d_logits,
                  const DenseArray& d_projections, const DenseArray& d_embeddings) {
  Gradient grad;
  grad.params = make_param_set(model.arch);

  const std::size_t batch_n = trace.embeddings.dim(0);
  const std::size_t d_enc = model.arch.encoder_output_dim;
  DenseArray d_emb({batch_n, d_enc});

  if (!d_embeddings.empty()) {
    if (!d_embeddings.same_shape(trace.embeddings)) {
      throw DimensionError("backprop: embedding gradient shape mismatch");
    }
    d_emb = d_embeddings;
  }

  if (!d_logits.empty()) {
    if (!d_logits.same_shape(trace.logits)) {
      throw DimensionError("backprop: logits gradient shape mismatch");
    }
    const DenseSpec clf_spec{d_enc, model.arch.num_classes};
    dense_backward(clf_spec, model.params.classifier, trace.embeddings, d_logits, d_emb,
                   grad.params.classifier);
  }

  if (!d_projections.empty()) {
    if (!d_projections.same_shape(trace.projections)) {
      throw DimensionError("backprop: projection gradient shape mismatch");
    }
    // Undo the row normalization: for z = u/|u|, dL/du = (dL/dz - (dL/dz . z) z)/|u|.
    const std::size_t d_proj = model.arch.projection_dim;
    DenseArray d_raw({batch_n, d_proj});
    for (std::size_t b = 0; b < batch_n; ++b) {
      const double norm = trace.projection_norms[b];
      if (norm == 0.0) continue;  // zero row: normalized output pinned at 0
      double dot = 0.0;
      for (std::size_t j = 0; j < d_proj; ++j) dot += d_projections.at2(b, j) * trace.projections.at2(b, j);
      for (std::size_t j = 0; j < d_proj; ++j) {
        d_raw.at2(b, j) = (d_projections.at2(b, j) - dot * trace.projections.at2(b, j)) / norm;
      }
    }
    const DenseSpec proj_spec{d_enc, model.arch.projection_dim};
    dense_backward(proj_spec, model.params.projection, trace.embeddings, d_raw, d_emb,
                   grad.params.projection);
  }

  // Walk the encoder in reverse.
  DenseArray d_cur = std::move(d_emb);
  for (std::size_t ri = model.arch.layers.size(); ri-- > 0;) {
    const auto& layer = model.arch.layers[ri];
    const DenseArray& input = ri == 0 ? trace.input : trace.activations[ri - 1];
    DenseArray d_in(input.shape());
    if (const auto* conv = std::get_if<Conv1DSpec>(&layer)) {
      conv1d_backward(*conv, model.params.encoder[ri], input, d_cur, d_in, grad.params.encoder[ri]);
    } else if (std::holds_alternative<ReluSpec>(layer)) {
      for (std::size_t i = 0; i < d_in.size(); ++i) {
        d_in[i] = input[i] > 0.0 ? d_cur[i] : 0.0;
      }
    } else if (std::holds_alternative<MaxPool1DSpec>(layer)) {
      maxpool_backward(d_cur, trace.pool_argmax[ri], input.dim(2), d_in);
    } else if (std::holds_alternative<FlattenSpec>(layer)) {
      d_in = DenseArray(input.shape(), d_cur.raw());
    } else if (const auto* dense = std::get_if<DenseSpec>(&layer)) {
      dense_backward(*dense, model.params.encoder[ri], input, d_cur, d_in, grad.params.encoder[ri]);
    }
    d_cur = std::move(d_in);
  }
  return grad;
}

}  // namespace flsim

#include "flsim/losses.hpp"

#include <algorithm>
#include <cmath>

namespace flsim {

namespace {

void check_labels(const std::vector<int>& labels, std::size_t rows, std::size_t num_classes) {
  if (labels.size() != rows) {
    throw DimensionError("labels: expected " + std::to_string(rows) + " entries, got " +
                         std::to_string(labels.size()));
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
      throw DimensionError("label " + std::to_string(y) + " out of range [0, " +
                           std::to_string(num_classes) + ")");
    }
  }
}

DenseArray take_rows(const DenseArray& m, std::size_t rows) {
  if (rows == m.dim(0)) return m;
  DenseArray out({rows, m.dim(1)});
  std::copy(m.data(), m.data() + rows * m.dim(1), out.data());
  return out;
}

}  // namespace

DenseArray softmax_rows(const DenseArray& logits) {
  const std::size_t rows = logits.dim(0);
  const std::size_t cols = logits.dim(1);
  DenseArray probs({rows, cols});
  for (std::size_t b = 0; b < rows; ++b) {
    double m = logits.at2(b, 0);
    for (std::size_t j = 1; j < cols; ++j) m = std::max(m, logits.at2(b, j));
    double sum = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      const double e = std::exp(logits.at2(b, j) - m);
      probs.at2(b, j) = e;
      sum += e;
    }
    for (std::size_t j = 0; j < cols; ++j) probs.at2(b, j) /= sum;
  }
  return probs;
}

double mean_row_entropy(const DenseArray& probs) {
  const std::size_t rows = probs.dim(0);
  const std::size_t cols = probs.dim(1);
  if (rows == 0) throw DimensionError("mean_row_entropy: empty matrix");
  double acc = 0.0;
  for (std::size_t b = 0; b < rows; ++b) {
    for (std::size_t j = 0; j < cols; ++j) {
      const double p = probs.at2(b, j);
      if (p > 0.0) acc -= p * std::log(p);
    }
  }
  return acc / static_cast<double>(rows);
}

double cross_entropy_loss(const DenseArray& logits, const std::vector<int>& labels) {
  DenseArray unused;
  return cross_entropy_loss_grad(logits, labels, 0.0, unused);
}

double cross_entropy_loss_grad(const DenseArray& logits, const std::vector<int>& labels,
                               double weight, DenseArray& d_logits) {
  const std::size_t rows = logits.dim(0);
  const std::size_t cols = logits.dim(1);
  check_labels(labels, rows, cols);
  double loss = 0.0;
  const double inv_n = 1.0 / static_cast<double>(rows);
  for (std::size_t b = 0; b < rows; ++b) {
    double m = logits.at2(b, 0);
    for (std::size_t j = 1; j < cols; ++j) m = std::max(m, logits.at2(b, j));
    double sum = 0.0;
    for (std::size_t j = 0; j < cols; ++j) sum += std::exp(logits.at2(b, j) - m);
    const double lse = m + std::log(sum);
    loss += lse - logits.at2(b, static_cast<std::size_t>(labels[b]));
    if (weight != 0.0) {
      for (std::size_t j = 0; j < cols; ++j) {
        const double p = std::exp(logits.at2(b, j) - lse);
        const double onehot = (static_cast<std::size_t>(labels[b]) == j) ? 1.0 : 0.0;
        d_logits.at2(b, j) += weight * inv_n * (p - onehot);
      }
    }
  }
  return loss * inv_n;
}

double supcon_loss(const DenseArray& projections, const std::vector<int>& labels, double tau) {
  DenseArray unused;
  return supcon_loss_grad(projections, labels, tau, 0.0, unused);
}

double supcon_loss_grad(const DenseArray& projections, const std::vector<int>& labels, double tau,
                        double weight, DenseArray& d_projections) {
  if (tau <= 0.0) throw DimensionError("supcon: temperature must be positive");
  const std::size_t n = projections.dim(0);
  const std::size_t d = projections.dim(1);
  if (labels.size() != n) {
    throw DimensionError("supcon: expected " + std::to_string(n) + " labels, got " +
                         std::to_string(labels.size()));
  }
  if (n < 2) return 0.0;

  // Pairwise similarities s[j][q] = (z_j . z_q) / tau.
  std::vector<double> sim(n * n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t q = j + 1; q < n; ++q) {
      double dot = 0.0;
      for (std::size_t k = 0; k < d; ++k) dot += projections.at2(j, k) * projections.at2(q, k);
      sim[j * n + q] = dot / tau;
      sim[q * n + j] = dot / tau;
    }
  }

  std::vector<std::size_t> pos_count(n, 0);
  std::size_t valid = 0;
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t q = 0; q < n; ++q) {
      if (q != j && labels[q] == labels[j]) ++pos_count[j];
    }
    if (pos_count[j] > 0) ++valid;
  }
  if (valid == 0) return 0.0;
  const double inv_valid = 1.0 / static_cast<double>(valid);

  double loss = 0.0;
  std::vector<double> coef;  // d loss / d sim[j][q], filled per anchor
  if (weight != 0.0) coef.assign(n * n, 0.0);

  std::vector<double> alpha(n);
  for (std::size_t j = 0; j < n; ++j) {
    if (pos_count[j] == 0) continue;
    double m = -1e300;
    for (std::size_t q = 0; q < n; ++q) {
      if (q != j) m = std::max(m, sim[j * n + q]);
    }
    double denom = 0.0;
    for (std::size_t q = 0; q < n; ++q) {
      if (q == j) continue;
      alpha[q] = std::exp(sim[j * n + q] - m);
      denom += alpha[q];
    }
    const double lse = m + std::log(denom);
    double mean_pos = 0.0;
    for (std::size_t q = 0; q < n; ++q) {
      if (q != j && labels[q] == labels[j]) mean_pos += sim[j * n + q];
    }
    mean_pos /= static_cast<double>(pos_count[j]);
    loss += lse - mean_pos;

    if (weight != 0.0) {
      const double inv_pos = 1.0 / static_cast<double>(pos_count[j]);
      for (std::size_t q = 0; q < n; ++q) {
        if (q == j) continue;
        double g = alpha[q] / denom;
        if (labels[q] == labels[j]) g -= inv_pos;
        coef[j * n + q] = g * inv_valid;
      }
    }
  }
  loss *= inv_valid;

  if (weight != 0.0) {
    // d sim[j][q] / d z_j = z_q / tau and symmetric in the q slot.
    const double scale = weight / tau;
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t q = 0; q < n; ++q) {
        const double c = coef[j * n + q];
        if (c == 0.0) continue;
        for (std::size_t k = 0; k < d; ++k) {
          d_projections.at2(j, k) += scale * c * projections.at2(q, k);
          d_projections.at2(q, k) += scale * c * projections.at2(j, k);
        }
      }
    }
  }
  return loss;
}

double kd_loss(const DenseArray& teacher_logits, const DenseArray& student_logits, double tau,
               KdForm form) {
  DenseArray unused;
  return kd_loss_grad(teacher_logits, student_logits, tau, form, 0.0, unused);
}

double kd_loss_grad(const DenseArray& teacher_logits, const DenseArray& student_logits, double tau,
                    KdForm form, double weight, DenseArray& d_logits) {
  if (tau <= 0.0) throw DimensionError("kd: temperature must be positive");
  if (!teacher_logits.same_shape(student_logits)) {
    throw DimensionError("kd: teacher/student logits shape mismatch");
  }
  const std::size_t rows = teacher_logits.dim(0);
  const std::size_t cols = teacher_logits.dim(1);
  const double inv_n = 1.0 / static_cast<double>(rows);

  // Canonical: (tau^2/n) sum KL(softmax(t/tau) || softmax(s/tau)).
  // Literal: softened probability vectors are divided by tau instead, which
  // collapses to KL(softmax(t) || softmax(s)) / tau under the same prefactor.
  DenseArray t_scaled = teacher_logits;
  DenseArray s_scaled = student_logits;
  double out_scale = tau * tau * inv_n;
  double grad_temp = tau;
  if (form == KdForm::Canonical) {
    for (auto& v : t_scaled.raw()) v /= tau;
    for (auto& v : s_scaled.raw()) v /= tau;
  } else {
    out_scale = tau * inv_n;
    grad_temp = 1.0;
  }
  const DenseArray p = softmax_rows(t_scaled);
  const DenseArray q = softmax_rows(s_scaled);

  double loss = 0.0;
  for (std::size_t b = 0; b < rows; ++b) {
    for (std::size_t j = 0; j < cols; ++j) {
      const double pj = p.at2(b, j);
      if (pj > 0.0) loss += pj * (std::log(pj) - std::log(q.at2(b, j)));
    }
  }
  loss *= out_scale;

  if (weight != 0.0) {
    const double gscale = weight * out_scale / grad_temp;
    for (std::size_t b = 0; b < rows; ++b) {
      for (std::size_t j = 0; j < cols; ++j) {
        d_logits.at2(b, j) += gscale * (q.at2(b, j) - p.at2(b, j));
      }
    }
  }
  return loss;
}

namespace {

double row_cosine(const DenseArray& a, const DenseArray& b, std::size_t row, std::size_t d) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    const double x = a.at2(row, k);
    const double y = b.at2(row, k);
    dot += x * y;
    na += x * x;
    nb += y * y;
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

// d cos(z, c) / d z = c/(|z||c|) - cos * z/|z|^2; zero when either norm is 0.
void add_cosine_grad(const DenseArray& z, const DenseArray& c, std::size_t row, std::size_t d,
                     double coeff, DenseArray& dz) {
  double dot = 0.0, nz = 0.0, nc = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    dot += z.at2(row, k) * c.at2(row, k);
    nz += z.at2(row, k) * z.at2(row, k);
    nc += c.at2(row, k) * c.at2(row, k);
  }
  if (nz == 0.0 || nc == 0.0) return;
  const double inv_norms = 1.0 / (std::sqrt(nz) * std::sqrt(nc));
  const double cos = dot * inv_norms;
  for (std::size_t k = 0; k < d; ++k) {
    dz.at2(row, k) += coeff * (c.at2(row, k) * inv_norms - cos * z.at2(row, k) / nz);
  }
}

}  // namespace

double moon_contrastive_loss(const DenseArray& embeddings, const DenseArray& global_embeddings,
                             const DenseArray& prev_embeddings, double tau) {
  DenseArray unused;
  return moon_contrastive_loss_grad(embeddings, global_embeddings, prev_embeddings, tau, 0.0, unused);
}

double moon_contrastive_loss_grad(const DenseArray& embeddings, const DenseArray& global_embeddings,
                                  const DenseArray& prev_embeddings, double tau, double weight,
                                  DenseArray& d_embeddings) {
  if (tau <= 0.0) throw DimensionError("moon: temperature must be positive");
  if (!embeddings.same_shape(global_embeddings) || !embeddings.same_shape(prev_embeddings)) {
    throw DimensionError("moon: embedding shape mismatch");
  }
  const std::size_t rows = embeddings.dim(0);
  const std::size_t d = embeddings.dim(1);
  const double inv_n = 1.0 / static_cast<double>(rows);

  double loss = 0.0;
  for (std::size_t b = 0; b < rows; ++b) {
    const double a = row_cosine(embeddings, global_embeddings, b, d) / tau;
    const double neg = row_cosine(embeddings, prev_embeddings, b, d) / tau;
    // -log(e^a / (e^a + e^neg)) = log(1 + e^(neg - a))
    const double delta = neg - a;
    loss += delta > 30.0 ? delta : std::log1p(std::exp(delta));
    if (weight != 0.0) {
      const double sig = 1.0 / (1.0 + std::exp(-delta));  // d loss / d delta
      const double coeff = weight * inv_n * sig / tau;
      add_cosine_grad(embeddings, global_embeddings, b, d, -coeff, d_embeddings);
      add_cosine_grad(embeddings, prev_embeddings, b, d, coeff, d_embeddings);
    }
  }
  return loss * inv_n;
}

BackwardResult backward(const ModelState& model, const DenseArray& batch,
                        const std::vector<int>& labels, const LossSpec& spec) {
  ForwardTrace trace = forward_trace(model, batch);
  const std::size_t rows = batch.dim(0);
  const std::size_t primary = spec.primary_rows == 0 ? rows : spec.primary_rows;
  if (primary > rows) throw DimensionError("backward: primary_rows exceeds batch");
  check_labels(labels, rows, model.arch.num_classes);

  BackwardResult result;
  DenseArray d_logits({rows, model.arch.num_classes});
  DenseArray d_proj;
  DenseArray d_emb;
  bool use_logits = false;

  if (spec.ce_weight != 0.0) {
    // CE over the primary (original) rows unless configured for the full
    // expanded batch; gradient lands in the covered slice.
    const std::size_t ce_rows = spec.ce_all_rows ? rows : primary;
    DenseArray ce_logits = take_rows(trace.logits, ce_rows);
    DenseArray d_ce({ce_rows, model.arch.num_classes});
    std::vector<int> ce_labels(labels.begin(), labels.begin() + ce_rows);
    result.parts.ce = cross_entropy_loss_grad(ce_logits, ce_labels, 1.0, d_ce);
    for (std::size_t b = 0; b < ce_rows; ++b) {
      for (std::size_t j = 0; j < model.arch.num_classes; ++j) {
        d_logits.at2(b, j) += spec.ce_weight * d_ce.at2(b, j);
      }
    }
    use_logits = true;
  }

  if (spec.kd_weight != 0.0) {
    if (spec.teacher_logits == nullptr) throw DimensionError("backward: kd requested without teacher");
    DenseArray primary_logits = take_rows(trace.logits, primary);
    DenseArray d_primary({primary, model.arch.num_classes});
    result.parts.kd = kd_loss_grad(*spec.teacher_logits, primary_logits, spec.tau_kd, spec.kd_form,
                                   1.0, d_primary);
    for (std::size_t b = 0; b < primary; ++b) {
      for (std::size_t j = 0; j < model.arch.num_classes; ++j) {
        d_logits.at2(b, j) += spec.kd_weight * d_primary.at2(b, j);
      }
    }
    use_logits = true;
  }

  if (spec.supcon_weight != 0.0) {
    d_proj = DenseArray({rows, model.arch.projection_dim});
    result.parts.supcon =
        supcon_loss_grad(trace.projections, labels, spec.tau_sc, spec.supcon_weight, d_proj);
  }

  if (spec.moon_weight != 0.0) {
    if (spec.moon_global_emb == nullptr || spec.moon_prev_emb == nullptr) {
      throw DimensionError("backward: moon requested without reference embeddings");
    }
    d_emb = DenseArray({rows, model.arch.encoder_output_dim});
    DenseArray primary_emb = take_rows(trace.embeddings, primary);
    DenseArray d_primary({primary, model.arch.encoder_output_dim});
    result.parts.moon = moon_contrastive_loss_grad(primary_emb, *spec.moon_global_emb,
                                                   *spec.moon_prev_emb, spec.tau_moon,
                                                   spec.moon_weight, d_primary);
    for (std::size_t b = 0; b < primary; ++b) {
      for (std::size_t j = 0; j < model.arch.encoder_output_dim; ++j) {
        d_emb.at2(b, j) += d_primary.at2(b, j);
      }
    }
  }

  result.grad = backprop(model, trace, use_logits ? d_logits : DenseArray(), d_proj, d_emb);

  if (spec.prox_mu != 0.0) {
    if (spec.prox_reference == nullptr) throw DimensionError("backward: prox requested without reference");
    result.parts.prox =
        0.5 * spec.prox_mu * model.params.squared_distance(spec.prox_reference->params);
    // grad += mu * (w - w_ref)
    result.grad.params.axpy(spec.prox_mu, model.params);
    result.grad.params.axpy(-spec.prox_mu, spec.prox_reference->params);
  }

  result.parts.total = spec.ce_weight * result.parts.ce + spec.supcon_weight * result.parts.supcon +
                       spec.kd_weight * result.parts.kd + spec.moon_weight * result.parts.moon +
                       result.parts.prox;
  result.loss = result.parts.total;
  return result;
}

}  // namespace flsim

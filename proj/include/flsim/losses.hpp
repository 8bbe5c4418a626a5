#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "flsim/network.hpp"

namespace flsim {

enum class KdForm {
  Canonical,  // softmax(logits / tau), tau^2 prefactor
  Literal,    // softmax(logits) / tau inside the divergence
};

DenseArray softmax_rows(const DenseArray& logits);

// Mean per-row entropy (natural log) of a probability matrix.
double mean_row_entropy(const DenseArray& probs);

// Mean over the batch of -log softmax(logits)[label]. Labels in [0, C).
double cross_entropy_loss(const DenseArray& logits, const std::vector<int>& labels);

// Supervised contrastive loss over row-normalized projections; the batch is
// expected to hold original and augmented views back to back. Anchors without
// any positive are skipped; mean over the remaining anchors.
double supcon_loss(const DenseArray& projections, const std::vector<int>& labels, double tau);

// Distillation between softened teacher/student distributions; the teacher is
// a constant. (tau^2 / B) * sum_i KL(teacher_i || student_i).
double kd_loss(const DenseArray& teacher_logits, const DenseArray& student_logits, double tau,
               KdForm form = KdForm::Canonical);

// Model-contrastive term: pulls the current embedding toward the global
// model's and away from the previous local model's, cosine similarity.
double moon_contrastive_loss(const DenseArray& embeddings, const DenseArray& global_embeddings,
                             const DenseArray& prev_embeddings, double tau);

// Gradient-producing variants; each adds into d_out scaled by `weight`.
double cross_entropy_loss_grad(const DenseArray& logits, const std::vector<int>& labels,
                               double weight, DenseArray& d_logits);
double supcon_loss_grad(const DenseArray& projections, const std::vector<int>& labels, double tau,
                        double weight, DenseArray& d_projections);
double kd_loss_grad(const DenseArray& teacher_logits, const DenseArray& student_logits, double tau,
                    KdForm form, double weight, DenseArray& d_logits);
double moon_contrastive_loss_grad(const DenseArray& embeddings, const DenseArray& global_embeddings,
                                  const DenseArray& prev_embeddings, double tau, double weight,
                                  DenseArray& d_embeddings);

// Weighted composite of the losses above, evaluated in one forward/backward.
// The batch may be an expanded (original + augmented) stack; `primary_rows`
// bounds the rows the CE/KD/MOON terms see (0 = all rows).
struct LossSpec {
  double ce_weight = 1.0;
  double supcon_weight = 0.0;
  double kd_weight = 0.0;
  double moon_weight = 0.0;
  double prox_mu = 0.0;

  double tau_sc = 0.07;
  double tau_kd = 2.0;
  double tau_moon = 0.5;
  KdForm kd_form = KdForm::Canonical;

  std::size_t primary_rows = 0;
  bool ce_all_rows = false;  // CE over the full expanded batch instead
  const DenseArray* teacher_logits = nullptr;      // [primary_rows, C], constant
  const DenseArray* moon_global_emb = nullptr;     // [primary_rows, d_enc], constant
  const DenseArray* moon_prev_emb = nullptr;       // [primary_rows, d_enc], constant
  const ModelState* prox_reference = nullptr;      // proximal anchor
};

struct LossParts {
  double ce = 0.0;
  double supcon = 0.0;
  double kd = 0.0;
  double moon = 0.0;
  double prox = 0.0;
  double total = 0.0;
};

struct BackwardResult {
  double loss = 0.0;
  LossParts parts;
  Gradient grad;
};

// One traced forward pass plus backprop of the designated loss mix.
BackwardResult backward(const ModelState& model, const DenseArray& batch,
                        const std::vector<int>& labels, const LossSpec& spec);

}  // namespace flsim

#pragma once

#include <string>
#include <vector>

#include "flsim/engine.hpp"

namespace flsim {

struct EvalResult {
  std::vector<double> per_class_f1;
  double macro_f1 = 0.0;
  std::vector<std::vector<std::size_t>> confusion;  // [true][pred]
};

// Per-class F1 = 2PR/(P+R), 0 when P+R = 0; macro is the unweighted mean
// over all classes, counting classes absent from the data as 0.
EvalResult macro_f1(const std::vector<int>& predictions, const std::vector<int>& labels,
                    std::size_t num_classes);

struct DiagnosticCurve {
  std::vector<std::size_t> x;  // number of missing modalities
  std::vector<double> y_entropy;
  std::vector<double> y_f1;
  std::vector<double> y_embed_dist;
};

enum class EmbedMetric { Euclidean, Cosine };

struct DiagnosticOptions {
  std::size_t subset_cap = 256;  // max modality subsets evaluated per d
  std::uint64_t seed = 1;
  std::size_t batch_size = 64;
  EmbedMetric metric = EmbedMetric::Euclidean;
};

// For d = 0..M-1 missing modalities: averages mean prediction entropy and
// macro-F1 over all (or up to subset_cap sampled) retained-modality subsets
// of complete-modality test samples.
DiagnosticCurve entropy_vs_missing(const ModelState& model,
                                   const std::vector<MultimodalSample>& test_samples,
                                   const ModalityLayout& layout, std::size_t num_classes,
                                   const DiagnosticOptions& opts = {});

// Mean distance between projection embeddings of complete inputs and their
// d-modality-masked versions, for each of two same-arch models.
std::pair<DiagnosticCurve, DiagnosticCurve> embedding_distance_curve(
    const ModelState& model_with_mirl, const ModelState& model_without,
    const std::vector<MultimodalSample>& test_samples, const ModalityLayout& layout,
    const DiagnosticOptions& opts = {});

struct AblationRow {
  std::string name;
  double final_macro_f1 = 0.0;
  std::vector<RoundReport> rounds;
};

// The four-configuration component sweep: none / +MIRL / +MIRL+MQAA / full,
// identical seeds and population.
std::vector<AblationRow> ablation_suite(const Population& population, const FLConfig& base_cfg,
                                        const ArchSpec& arch, unsigned threads = 1);

// Spearman rank correlation (average ranks on ties); 0 when either side is
// constant.
double spearman_rho(const std::vector<double>& xs, const std::vector<double>& ys);

}  // namespace flsim

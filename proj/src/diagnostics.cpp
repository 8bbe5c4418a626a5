#include "flsim/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace flsim {

EvalResult macro_f1(const std::vector<int>& predictions, const std::vector<int>& labels,
                    std::size_t num_classes) {
  if (predictions.size() != labels.size()) {
    throw DimensionError("macro_f1: prediction/label length mismatch");
  }
  if (num_classes < 2) throw DimensionError("macro_f1: need at least two classes");
  EvalResult result;
  result.confusion.assign(num_classes, std::vector<std::size_t>(num_classes, 0));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    const int p = predictions[i];
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes || p < 0 ||
        static_cast<std::size_t>(p) >= num_classes) {
      throw DimensionError("macro_f1: label or prediction out of range");
    }
    result.confusion[static_cast<std::size_t>(y)][static_cast<std::size_t>(p)]++;
  }
  result.per_class_f1.assign(num_classes, 0.0);
  double sum = 0.0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    std::size_t tp = result.confusion[c][c];
    std::size_t fp = 0, fn = 0;
    for (std::size_t o = 0; o < num_classes; ++o) {
      if (o == c) continue;
      fp += result.confusion[o][c];
      fn += result.confusion[c][o];
    }
    const double denom = static_cast<double>(2 * tp + fp + fn);
    // 2PR/(P+R) collapses to 2tp / (2tp + fp + fn); 0 when nothing was
    // predicted or present for the class.
    result.per_class_f1[c] = denom > 0.0 ? 2.0 * static_cast<double>(tp) / denom : 0.0;
    sum += result.per_class_f1[c];
  }
  result.macro_f1 = sum / static_cast<double>(num_classes);
  return result;
}

namespace {

// All subsets of {0..M-1} of size `keep`, as presence masks.
void enumerate_subsets(std::size_t m, std::size_t keep, std::vector<std::vector<bool>>& out) {
  std::vector<std::size_t> comb(keep);
  std::iota(comb.begin(), comb.end(), std::size_t{0});
  for (;;) {
    std::vector<bool> mask(m, false);
    for (std::size_t idx : comb) mask[idx] = true;
    out.push_back(std::move(mask));
    // next combination
    std::size_t i = keep;
    while (i > 0 && comb[i - 1] == m - keep + i - 1) --i;
    if (i == 0) break;
    ++comb[i - 1];
    for (std::size_t j = i; j < keep; ++j) comb[j] = comb[j - 1] + 1;
  }
}

double binomial(std::size_t n, std::size_t k) {
  double r = 1.0;
  for (std::size_t i = 0; i < k; ++i) r = r * static_cast<double>(n - i) / static_cast<double>(i + 1);
  return r;
}

// All retained-modality masks of size M-d, or a uniform sample of `cap` when
// the full enumeration is larger.
std::vector<std::vector<bool>> retained_masks(std::size_t m, std::size_t missing, std::size_t cap,
                                              RandomEngine& rng) {
  const std::size_t keep = m - missing;
  std::vector<std::vector<bool>> masks;
  if (binomial(m, missing) <= static_cast<double>(cap)) {
    enumerate_subsets(m, keep, masks);
    return masks;
  }
  std::set<std::vector<bool>> unique;
  while (unique.size() < cap) {
    std::vector<std::size_t> ids(m);
    std::iota(ids.begin(), ids.end(), std::size_t{0});
    rng.shuffle(ids);
    std::vector<bool> mask(m, false);
    for (std::size_t i = 0; i < keep; ++i) mask[ids[i]] = true;
    unique.insert(std::move(mask));
  }
  masks.assign(unique.begin(), unique.end());
  return masks;
}

std::vector<MultimodalSample> masked_copy(const std::vector<MultimodalSample>& samples,
                                          const ModalityLayout& layout,
                                          const std::vector<bool>& mask) {
  std::vector<MultimodalSample> out = samples;
  for (auto& s : out) {
    zero_absent_blocks(s.data, layout, mask);
    s.present_mask = mask;
  }
  return out;
}

double mean_model_entropy(const ModelState& model, const std::vector<MultimodalSample>& samples,
                          std::size_t batch_size) {
  double sum = 0.0;
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    const std::size_t count = std::min(batch_size, samples.size() - start);
    std::vector<std::size_t> idx(count);
    std::iota(idx.begin(), idx.end(), start);
    const ForwardResult out = forward(model, stack_samples(samples, idx));
    sum += mean_row_entropy(softmax_rows(out.logits)) * static_cast<double>(count);
  }
  return sum / static_cast<double>(samples.size());
}

DenseArray all_projections(const ModelState& model, const std::vector<MultimodalSample>& samples,
                           std::size_t batch_size) {
  DenseArray out({samples.size(), model.arch.projection_dim});
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    const std::size_t count = std::min(batch_size, samples.size() - start);
    std::vector<std::size_t> idx(count);
    std::iota(idx.begin(), idx.end(), start);
    const ForwardResult fr = forward(model, stack_samples(samples, idx));
    std::copy(fr.projections.data(), fr.projections.data() + fr.projections.size(),
              out.data() + start * model.arch.projection_dim);
  }
  return out;
}

double mean_row_distance(const DenseArray& a, const DenseArray& b, EmbedMetric metric) {
  const std::size_t rows = a.dim(0);
  const std::size_t cols = a.dim(1);
  double sum = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (metric == EmbedMetric::Euclidean) {
      double sq = 0.0;
      for (std::size_t c = 0; c < cols; ++c) {
        const double d = a.at2(r, c) - b.at2(r, c);
        sq += d * d;
      }
      sum += std::sqrt(sq);
    } else {
      double dot = 0.0, na = 0.0, nb = 0.0;
      for (std::size_t c = 0; c < cols; ++c) {
        dot += a.at2(r, c) * b.at2(r, c);
        na += a.at2(r, c) * a.at2(r, c);
        nb += b.at2(r, c) * b.at2(r, c);
      }
      const double denom = std::sqrt(na) * std::sqrt(nb);
      sum += denom > 0.0 ? 1.0 - dot / denom : 0.0;
    }
  }
  return sum / static_cast<double>(rows);
}

std::vector<int> sample_labels(const std::vector<MultimodalSample>& samples) {
  std::vector<int> labels;
  labels.reserve(samples.size());
  for (const auto& s : samples) labels.push_back(s.label);
  return labels;
}

}  // namespace

DiagnosticCurve entropy_vs_missing(const ModelState& model,
                                   const std::vector<MultimodalSample>& test_samples,
                                   const ModalityLayout& layout, std::size_t num_classes,
                                   const DiagnosticOptions& opts) {
  if (test_samples.empty()) throw DimensionError("entropy_vs_missing: empty test set");
  const std::size_t m = layout.num_modalities();
  const std::vector<int> labels = sample_labels(test_samples);

  DiagnosticCurve curve;
  RandomEngine rng(mix_seed(opts.seed, 0xD1A6ULL));
  for (std::size_t d = 0; d < m; ++d) {
    const auto masks = retained_masks(m, d, opts.subset_cap, rng);
    double entropy_acc = 0.0;
    double f1_acc = 0.0;
    for (const auto& mask : masks) {
      const auto masked = masked_copy(test_samples, layout, mask);
      entropy_acc += mean_model_entropy(model, masked, opts.batch_size);
      f1_acc += macro_f1(predict(model, masked, opts.batch_size), labels, num_classes).macro_f1;
    }
    curve.x.push_back(d);
    curve.y_entropy.push_back(entropy_acc / static_cast<double>(masks.size()));
    curve.y_f1.push_back(f1_acc / static_cast<double>(masks.size()));
  }
  return curve;
}

std::pair<DiagnosticCurve, DiagnosticCurve> embedding_distance_curve(
    const ModelState& model_with_mirl, const ModelState& model_without,
    const std::vector<MultimodalSample>& test_samples, const ModalityLayout& layout,
    const DiagnosticOptions& opts) {
  if (test_samples.empty()) throw DimensionError("embedding_distance_curve: empty test set");
  if (model_with_mirl.arch.projection_dim != model_without.arch.projection_dim ||
      model_with_mirl.arch.encoder_output_dim != model_without.arch.encoder_output_dim) {
    throw DimensionError("embedding_distance_curve: model architectures differ");
  }
  const std::size_t m = layout.num_modalities();

  const DenseArray base_with = all_projections(model_with_mirl, test_samples, opts.batch_size);
  const DenseArray base_without = all_projections(model_without, test_samples, opts.batch_size);

  DiagnosticCurve with_curve, without_curve;
  RandomEngine rng(mix_seed(opts.seed, 0xE3B3ULL));
  for (std::size_t d = 0; d < m; ++d) {
    const auto masks = retained_masks(m, d, opts.subset_cap, rng);
    double with_acc = 0.0, without_acc = 0.0;
    for (const auto& mask : masks) {
      const auto masked = masked_copy(test_samples, layout, mask);
      const DenseArray proj_with = all_projections(model_with_mirl, masked, opts.batch_size);
      const DenseArray proj_without = all_projections(model_without, masked, opts.batch_size);
      with_acc += mean_row_distance(base_with, proj_with, opts.metric);
      without_acc += mean_row_distance(base_without, proj_without, opts.metric);
    }
    const double inv = 1.0 / static_cast<double>(masks.size());
    with_curve.x.push_back(d);
    with_curve.y_embed_dist.push_back(with_acc * inv);
    without_curve.x.push_back(d);
    without_curve.y_embed_dist.push_back(without_acc * inv);
  }
  return {with_curve, without_curve};
}

std::vector<AblationRow> ablation_suite(const Population& population, const FLConfig& base_cfg,
                                        const ArchSpec& arch, unsigned threads) {
  struct Variant {
    const char* name;
    bool mirl;
    AggWeighting weighting;
    double gamma;
  };
  const Variant variants[] = {
      {"fedavg_equiv", false, AggWeighting::SampleSize, 0.0},
      {"mirl", true, AggWeighting::SampleSize, 0.0},
      {"mirl_mqaa", true, AggWeighting::Entropy, 0.0},
      {"flism_full", true, AggWeighting::Entropy, base_cfg.gamma},
  };
  std::vector<AblationRow> rows;
  for (const auto& v : variants) {
    FLConfig cfg = base_cfg;
    cfg.strategy = Strategy::FLISM;
    cfg.mirl = v.mirl;
    cfg.weighting = v.weighting;
    cfg.gamma = v.gamma;
    AblationRow row;
    row.name = v.name;
    row.rounds = run_federation(population, cfg, arch, threads);
    row.final_macro_f1 = row.rounds.back().macro_f1;
    rows.push_back(std::move(row));
  }
  return rows;
}

double spearman_rho(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size() || xs.size() < 2) {
    throw DimensionError("spearman_rho: need two equally sized series");
  }
  auto ranks = [](const std::vector<double>& v) {
    const std::size_t n = v.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
      std::size_t j = i;
      while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
      const double avg = 0.5 * static_cast<double>(i + j) + 1.0;  // average rank, 1-based
      for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const std::vector<double> rx = ranks(xs);
  const std::vector<double> ry = ranks(ys);
  const std::size_t n = rx.size();
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double num = 0.0, dx = 0.0, dy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    num += (rx[i] - mx) * (ry[i] - my);
    dx += (rx[i] - mx) * (rx[i] - mx);
    dy += (ry[i] - my) * (ry[i] - my);
  }
  if (dx == 0.0 || dy == 0.0) return 0.0;
  return num / std::sqrt(dx * dy);
}

}  // namespace flsim

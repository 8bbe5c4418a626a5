#include "flsim/engine.hpp"

#include <algorithm>
#include <cmath>

#include "flsim/cost.hpp"
#include "flsim/diagnostics.hpp"
#include "flsim/parallel.hpp"

namespace flsim {

Strategy strategy_from_string(const std::string& name) {
  if (name == "flism") return Strategy::FLISM;
  if (name == "fedavg") return Strategy::FedAvg;
  if (name == "fedprox") return Strategy::FedProx;
  if (name == "moon") return Strategy::MOON;
  throw ConfigError("fl.strategy: unknown strategy '" + name +
                    "' (expected flism|fedavg|fedprox|moon)");
}

std::string strategy_name(Strategy s) {
  switch (s) {
    case Strategy::FLISM: return "flism";
    case Strategy::FedAvg: return "fedavg";
    case Strategy::FedProx: return "fedprox";
    case Strategy::MOON: return "moon";
  }
  return "unknown";
}

void FLConfig::validate() const {
  if (rounds < 1) throw ConfigError("fl.rounds: must be >= 1");
  if (local_epochs < 1) throw ConfigError("fl.local_epochs: must be >= 1");
  if (selection_fraction <= 0.0 || selection_fraction > 1.0) {
    throw ConfigError("fl.selection_fraction: must lie in (0, 1]");
  }
  if (gamma < 0.0) throw ConfigError("fl.gamma: must be >= 0");
  if (tau_sc <= 0.0) throw ConfigError("fl.tau_sc: must be > 0");
  if (tau_kd <= 0.0) throw ConfigError("fl.tau_kd: must be > 0");
  if (tau_moon <= 0.0) throw ConfigError("fl.tau_moon: must be > 0");
  if (mu_prox < 0.0) throw ConfigError("fl.mu_prox: must be >= 0");
  if (mu_moon < 0.0) throw ConfigError("fl.mu_moon: must be >= 0");
  if (entropy_floor <= 0.0) throw ConfigError("fl.entropy_floor: must be > 0");
  if (noise_sigma < 0.0) throw ConfigError("fl.noise_sigma: must be >= 0");
  try {
    optimizer.validate();
  } catch (const DimensionError& e) {
    throw ConfigError(std::string("fl.optimizer: ") + e.what());
  }
}

DenseArray stack_samples(const std::vector<MultimodalSample>& samples,
                         const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw DimensionError("stack_samples: empty index set");
  const std::size_t channels = samples[indices[0]].data.dim(0);
  const std::size_t window = samples[indices[0]].data.dim(1);
  DenseArray batch({indices.size(), channels, window});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto& s = samples[indices[i]].data;
    if (s.dim(0) != channels || s.dim(1) != window) {
      throw DimensionError("stack_samples: inconsistent sample shapes");
    }
    std::copy(s.data(), s.data() + s.size(), batch.data() + i * channels * window);
  }
  return batch;
}

std::vector<int> predict(const ModelState& model, const std::vector<MultimodalSample>& samples,
                         std::size_t batch_size) {
  std::vector<int> preds;
  preds.reserve(samples.size());
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    const std::size_t count = std::min(batch_size, samples.size() - start);
    std::vector<std::size_t> idx(count);
    for (std::size_t i = 0; i < count; ++i) idx[i] = start + i;
    const DenseArray batch = stack_samples(samples, idx);
    const ForwardResult out = forward(model, batch);
    for (std::size_t b = 0; b < count; ++b) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < model.arch.num_classes; ++j) {
        if (out.logits.at2(b, j) > out.logits.at2(b, best)) best = j;
      }
      preds.push_back(static_cast<int>(best));
    }
  }
  return preds;
}

double entropy_quality_weight(const ModelState& model, const std::vector<MultimodalSample>& samples,
                              double floor, std::size_t batch_size) {
  if (samples.empty()) throw DimensionError("entropy_quality_weight: empty dataset");
  if (floor <= 0.0) throw DimensionError("entropy_quality_weight: floor must be > 0");
  double entropy_sum = 0.0;
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    const std::size_t count = std::min(batch_size, samples.size() - start);
    std::vector<std::size_t> idx(count);
    for (std::size_t i = 0; i < count; ++i) idx[i] = start + i;
    const ForwardResult out = forward(model, stack_samples(samples, idx));
    const DenseArray probs = softmax_rows(out.logits);
    entropy_sum += mean_row_entropy(probs) * static_cast<double>(count);
  }
  const double mean_entropy = entropy_sum / static_cast<double>(samples.size());
  return 1.0 / std::max(mean_entropy, floor);
}

ModelState aggregate_weighted(const std::vector<ClientUpdateResult>& updates,
                              std::vector<std::pair<std::size_t, double>>* weights_out) {
  if (updates.empty()) throw DimensionError("aggregate: no client updates");
  std::vector<const ClientUpdateResult*> ordered;
  ordered.reserve(updates.size());
  for (const auto& u : updates) ordered.push_back(&u);
  std::sort(ordered.begin(), ordered.end(), [](const ClientUpdateResult* a, const ClientUpdateResult* b) {
    return a->client_id < b->client_id;
  });

  double max_weight = 0.0;
  for (const auto* u : ordered) {
    if (!std::isfinite(u->quality_weight) || u->quality_weight <= 0.0) {
      throw NumericError("aggregate: non-finite or non-positive client weight");
    }
    max_weight = std::max(max_weight, u->quality_weight);
  }

  // Scale by the max first: equal raw weights become exactly 1, so the
  // result collapses to the plain mean (sum / n) with no rounding slack.
  ModelState out = ordered.front()->params;  // shape carrier
  out.params.fill(0.0);
  out.version_tag = ordered.front()->params.version_tag;
  double scale_sum = 0.0;
  for (const auto* u : ordered) {
    const double s = u->quality_weight / max_weight;
    scale_sum += s;
    out.params.axpy(s, u->params.params);
  }
  out.params.scale(1.0 / scale_sum);

  if (weights_out) {
    weights_out->clear();
    for (const auto* u : ordered) {
      weights_out->emplace_back(u->client_id, (u->quality_weight / max_weight) / scale_sum);
    }
  }
  return out;
}

ModelState aggregate_quality_weighted(const std::vector<ClientUpdateResult>& updates,
                                      std::vector<std::pair<std::size_t, double>>* weights_out) {
  return aggregate_weighted(updates, weights_out);
}

ModelState aggregate_fedavg(const std::vector<ClientUpdateResult>& updates,
                            std::vector<std::pair<std::size_t, double>>* weights_out) {
  std::vector<ClientUpdateResult> by_samples = updates;
  for (auto& u : by_samples) u.quality_weight = static_cast<double>(u.samples_used);
  return aggregate_weighted(by_samples, weights_out);
}

namespace {

constexpr std::uint64_t kInitTag = 0x1717ULL;
constexpr std::uint64_t kSelectTag = 0x5E1Eu;
constexpr std::uint64_t kBatchTag = 0xBA7CULL;
constexpr std::uint64_t kAugTag = 0xA6D0ULL;

std::vector<bool> availability_mask(const ClientProfile& client, std::size_t num_modalities) {
  std::vector<bool> mask(num_modalities, false);
  for (std::size_t id : client.available_modalities) mask[id] = true;
  return mask;
}

}  // namespace

ClientUpdateResult client_update(const ClientProfile& client, const ModalityLayout& layout,
                                 const ModelState& global_state, const FLConfig& cfg,
                                 std::size_t round, const ModelState* prev_local) {
  if (client.dataset.empty()) throw DimensionError("client_update: client has no samples");
  const std::size_t n_k = client.dataset.size();

  // Independent streams so that disabling augmentation does not perturb the
  // batch order shared with the plain strategies.
  RandomEngine batch_rng(mix_seed(cfg.seed, kBatchTag, mix_seed(round, client.client_id)));
  RandomEngine aug_rng(mix_seed(cfg.seed, kAugTag, mix_seed(round, client.client_id)));

  ModelState local = global_state;
  local.version_tag = static_cast<std::int64_t>(round);

  const bool use_mirl = cfg.strategy == Strategy::FLISM && cfg.mirl;
  const bool use_kd = cfg.strategy == Strategy::FLISM && cfg.gamma > 0.0;
  const std::vector<bool> present = availability_mask(client, layout.num_modalities());
  const bool can_dropout = client.available_modalities.size() >= 2;

  // Batches are split once per update and reused across the local epochs.
  std::vector<std::size_t> order = batch_rng.permutation(n_k);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n_k; start += cfg.optimizer.batch_size) {
    const std::size_t count = std::min(cfg.optimizer.batch_size, n_k - start);
    batches.emplace_back(order.begin() + start, order.begin() + start + count);
  }

  // Retained-modality set fixed once per update unless configured otherwise.
  std::vector<bool> retain;
  if (use_mirl && can_dropout && cfg.retain_resample == RetainResample::PerRound) {
    retain = sample_retain_set(client.available_modalities, layout.num_modalities(), aug_rng);
  }

  ClientUpdateResult result;
  result.client_id = client.client_id;
  result.samples_used = n_k;
  result.local_losses.reserve(cfg.local_epochs);

  const ModelState* prev_model = prev_local != nullptr ? prev_local : &global_state;

  for (std::size_t epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    EpochLosses epoch_losses;
    for (const auto& batch_idx : batches) {
      const DenseArray originals = stack_samples(client.dataset, batch_idx);
      std::vector<int> labels;
      labels.reserve(batch_idx.size());
      for (std::size_t i : batch_idx) labels.push_back(client.dataset[i].label);

      DenseArray train_batch = originals;
      std::vector<int> train_labels = labels;
      if (use_mirl) {
        if (use_mirl && can_dropout && cfg.retain_resample == RetainResample::PerBatch) {
          retain = sample_retain_set(client.available_modalities, layout.num_modalities(), aug_rng);
        }
        DenseArray augmented;
        if (!can_dropout) {
          augmented = noise_augment(originals, layout, present, cfg.noise_mu, cfg.noise_sigma, aug_rng);
        } else if (cfg.retain_resample == RetainResample::PerSample) {
          augmented = DenseArray(originals.shape());
          const std::size_t stride = originals.dim(1) * originals.dim(2);
          for (std::size_t b = 0; b < batch_idx.size(); ++b) {
            const std::vector<bool> row_retain =
                sample_retain_set(client.available_modalities, layout.num_modalities(), aug_rng);
            DenseArray row({originals.dim(1), originals.dim(2)},
                           std::vector<double>(originals.data() + b * stride,
                                               originals.data() + (b + 1) * stride));
            const DenseArray out = modality_dropout(row, layout, present, row_retain, cfg.noise_mu,
                                                    cfg.noise_sigma, aug_rng);
            std::copy(out.data(), out.data() + stride, augmented.data() + b * stride);
          }
        } else {
          augmented = modality_dropout(originals, layout, present, retain, cfg.noise_mu,
                                       cfg.noise_sigma, aug_rng);
        }
        // Expanded batch: originals first, augmented views behind them.
        DenseArray expanded({originals.dim(0) * 2, originals.dim(1), originals.dim(2)});
        std::copy(originals.data(), originals.data() + originals.size(), expanded.data());
        std::copy(augmented.data(), augmented.data() + augmented.size(),
                  expanded.data() + originals.size());
        train_batch = std::move(expanded);
        train_labels.insert(train_labels.end(), labels.begin(), labels.end());
      }

      LossSpec spec;
      spec.primary_rows = originals.dim(0);
      spec.ce_weight = 1.0;
      spec.ce_all_rows = cfg.ce_on_expanded;
      spec.tau_sc = cfg.tau_sc;
      spec.tau_kd = cfg.tau_kd;
      spec.kd_form = cfg.kd_form;
      spec.tau_moon = cfg.tau_moon;

      DenseArray teacher_logits;
      DenseArray global_emb;
      DenseArray prev_emb;
      if (use_mirl) spec.supcon_weight = 1.0;
      if (use_kd) {
        teacher_logits = forward(global_state, originals).logits;
        spec.kd_weight = cfg.gamma;
        spec.teacher_logits = &teacher_logits;
      }
      if (cfg.strategy == Strategy::FedProx) {
        spec.prox_mu = cfg.mu_prox;
        spec.prox_reference = &global_state;
      }
      if (cfg.strategy == Strategy::MOON && cfg.mu_moon > 0.0) {
        global_emb = forward(global_state, originals).embeddings;
        prev_emb = forward(*prev_model, originals).embeddings;
        spec.moon_weight = cfg.mu_moon;
        spec.moon_global_emb = &global_emb;
        spec.moon_prev_emb = &prev_emb;
      }

      const BackwardResult back = backward(local, train_batch, train_labels, spec);
      sgd_step_inplace(local, back.grad, cfg.optimizer);

      epoch_losses.supcon += back.parts.supcon;
      epoch_losses.kd += back.parts.kd;
      epoch_losses.ce += back.parts.ce;
      epoch_losses.total += back.loss;
    }
    const double inv_batches = 1.0 / static_cast<double>(batches.size());
    epoch_losses.supcon *= inv_batches;
    epoch_losses.kd *= inv_batches;
    epoch_losses.ce *= inv_batches;
    epoch_losses.total *= inv_batches;
    result.local_losses.push_back(epoch_losses);
  }

  if (cfg.strategy == Strategy::FLISM && cfg.weighting != AggWeighting::SampleSize) {
    const double r = entropy_quality_weight(local, client.dataset, cfg.entropy_floor,
                                            cfg.optimizer.batch_size);
    result.quality_weight =
        cfg.weighting == AggWeighting::EntropySamples ? r * static_cast<double>(n_k) : r;
  } else {
    result.quality_weight = static_cast<double>(n_k);
  }
  result.params = std::move(local);
  return result;
}

std::vector<RoundReport> run_federation(const Population& population, const FLConfig& cfg,
                                        const ArchSpec& arch, unsigned threads) {
  cfg.validate();
  if (population.clients.empty()) throw DimensionError("run_federation: empty population");
  arch.validate(population.layout.total_channels, population.window_len);

  const std::size_t num_clients = population.clients.size();
  const std::size_t per_round = std::min(
      num_clients,
      std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(
                                   cfg.selection_fraction * static_cast<double>(num_clients)))));

  RandomEngine init_rng(mix_seed(cfg.seed, kInitTag));
  ModelState global = init_model(arch, init_rng);
  global.version_tag = 0;

  const std::int64_t model_params = count_params(arch);
  const std::int64_t model_bytes = model_params * 8;  // 64-bit scalars

  std::map<std::size_t, ModelState> moon_prev;  // last local model per client

  std::vector<RoundReport> reports;
  reports.reserve(cfg.rounds);

  for (std::size_t t = 1; t <= cfg.rounds; ++t) {
    RandomEngine select_rng(mix_seed(cfg.seed, kSelectTag, t));
    std::vector<std::size_t> perm = select_rng.permutation(num_clients);
    std::vector<std::size_t> selected(perm.begin(), perm.begin() + per_round);
    std::sort(selected.begin(), selected.end());

    std::vector<ClientUpdateResult> updates(selected.size());
    parallel_for_index(selected.size(), threads, [&](std::size_t i) {
      const ClientProfile& client = population.clients[selected[i]];
      const ModelState* prev = nullptr;
      if (cfg.strategy == Strategy::MOON) {
        auto it = moon_prev.find(client.client_id);
        if (it != moon_prev.end()) prev = &it->second;
      }
      updates[i] = client_update(client, population.layout, global, cfg, t, prev);
    });

    RoundReport report;
    report.round = t;
    report.selected = selected;

    global = cfg.strategy == Strategy::FLISM && cfg.weighting != AggWeighting::SampleSize
                 ? aggregate_quality_weighted(updates, &report.weights)
                 : aggregate_fedavg(updates, &report.weights);
    global.version_tag = static_cast<std::int64_t>(t);

    if (cfg.strategy == Strategy::MOON) {
      for (auto& u : updates) moon_prev.insert_or_assign(u.client_id, u.params);
    }

    const std::vector<int> preds = predict(global, population.test_set, cfg.optimizer.batch_size);
    std::vector<int> labels;
    labels.reserve(population.test_set.size());
    for (const auto& s : population.test_set) labels.push_back(s.label);
    report.macro_f1 = macro_f1(preds, labels, population.num_classes).macro_f1;

    double round_time = 0.0;
    for (std::size_t id : selected) {
      const ClientProfile& c = population.clients[id];
      if (c.download_bps <= 0.0 || c.upload_bps <= 0.0) {
        throw DimensionError("run_federation: client link speeds must be positive");
      }
      const double bits = static_cast<double>(model_bytes) * 8.0;
      round_time = std::max(round_time, bits / c.download_bps + bits / c.upload_bps);
    }
    report.comm_seconds = round_time;
    report.params_trained = model_params * static_cast<std::int64_t>(selected.size());
    report.global_state = global;
    reports.push_back(std::move(report));
  }
  return reports;
}

}  // namespace flsim

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "flsim/data.hpp"
#include "flsim/losses.hpp"
#include "flsim/optimizer.hpp"

namespace flsim {

enum class Strategy { FLISM, FedAvg, FedProx, MOON };

Strategy strategy_from_string(const std::string& name);
std::string strategy_name(Strategy s);

enum class AggWeighting {
  Entropy,         // inverse mean prediction entropy (quality-aware)
  SampleSize,      // n_k
  EntropySamples,  // hybrid r_k * n_k, for sensitivity studies
};

enum class RetainResample { PerRound, PerBatch, PerSample };

struct FLConfig {
  std::size_t rounds = 30;
  std::size_t local_epochs = 1;
  double selection_fraction = 0.3;
  Strategy strategy = Strategy::FLISM;

  double gamma = 1.0;  // KD weight in the composite loss
  double tau_sc = 0.07;
  double tau_kd = 2.0;
  double mu_prox = 0.01;
  double mu_moon = 1.0;
  double tau_moon = 0.5;

  OptimizerConfig optimizer;
  double entropy_floor = 1e-3;
  std::uint64_t seed = 1;

  // Component toggles (ablations / reductions).
  bool mirl = true;  // augmentation + supervised contrastive term
  AggWeighting weighting = AggWeighting::Entropy;

  RetainResample retain_resample = RetainResample::PerRound;
  bool ce_on_expanded = false;
  KdForm kd_form = KdForm::Canonical;
  double noise_mu = 0.0;
  double noise_sigma = 0.1;

  void validate() const;
};

struct EpochLosses {
  double supcon = 0.0;
  double kd = 0.0;
  double ce = 0.0;
  double total = 0.0;
};

struct ClientUpdateResult {
  std::size_t client_id = 0;
  ModelState params;
  double quality_weight = 0.0;
  std::vector<EpochLosses> local_losses;
  std::size_t samples_used = 0;
};

struct RoundReport {
  std::size_t round = 0;
  std::vector<std::size_t> selected;                     // client ids, sorted
  std::vector<std::pair<std::size_t, double>> weights;   // normalized, by client id
  ModelState global_state;
  double macro_f1 = 0.0;
  double comm_seconds = 0.0;
  std::int64_t params_trained = 0;
};

// Mean prediction entropy of `model` on `samples`, clamped from below, then
// inverted: r = 1 / max(mean_entropy, floor).
double entropy_quality_weight(const ModelState& model, const std::vector<MultimodalSample>& samples,
                              double floor, std::size_t batch_size = 64);

// Normalized convex combination of updates with the given raw weights.
// Updates are reduced in client_id order regardless of input order.
ModelState aggregate_weighted(const std::vector<ClientUpdateResult>& updates,
                              std::vector<std::pair<std::size_t, double>>* weights_out = nullptr);

// Quality-weighted aggregation (uses quality_weight as-is).
ModelState aggregate_quality_weighted(const std::vector<ClientUpdateResult>& updates,
                                      std::vector<std::pair<std::size_t, double>>* weights_out = nullptr);

// Sample-size weighting n_k / sum(n).
ModelState aggregate_fedavg(const std::vector<ClientUpdateResult>& updates,
                            std::vector<std::pair<std::size_t, double>>* weights_out = nullptr);

// One client's local update for the configured strategy.
ClientUpdateResult client_update(const ClientProfile& client, const ModalityLayout& layout,
                                 const ModelState& global_state, const FLConfig& cfg,
                                 std::size_t round, const ModelState* prev_local);

// Full federation: T rounds of select / local update / aggregate / evaluate.
std::vector<RoundReport> run_federation(const Population& population, const FLConfig& cfg,
                                        const ArchSpec& arch, unsigned threads = 1);

// Argmax predictions for a sample set.
std::vector<int> predict(const ModelState& model, const std::vector<MultimodalSample>& samples,
                         std::size_t batch_size = 64);

// Stacks samples [i0, i0+count) into a [count, C, L] batch.
DenseArray stack_samples(const std::vector<MultimodalSample>& samples,
                         const std::vector<std::size_t>& indices);

}  // namespace flsim

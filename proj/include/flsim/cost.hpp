#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flsim/arch.hpp"
#include "flsim/data.hpp"

namespace flsim {

// Trainable parameters of a single layer.
std::int64_t layer_params(const LayerSpec& layer);

// Multiply-accumulates one sample costs in a layer, given the input length;
// also advances the shape. ReLU/pool/flatten cost 0.
std::int64_t layer_macs(const LayerSpec& layer, LayerShape& shape);

// Parameters of the trunk layer list only.
std::int64_t count_trunk_params(const std::vector<LayerSpec>& layers);

// Full model: trunk + projection head + classifier.
std::int64_t count_params(const ArchSpec& arch);

// Per-sample MACs for the full model at the given input window.
std::int64_t count_macs(const ArchSpec& arch, std::size_t in_channels, std::size_t window_len);

enum class FusionKind { Early, Intermediate, DeepImputation };

// Conv trunk template instantiated per fusion mode.
struct EncoderTemplate {
  std::vector<std::size_t> conv_channels = {32, 64};
  std::size_t kernel = 8;
  std::size_t pool = 2;
  std::size_t d_enc = 128;

  // Trunk + Dense(flatten -> d_enc); no heads.
  std::vector<LayerSpec> instantiate(std::size_t in_channels, std::size_t window_len) const;
};

// Attention-style fusion head shared across modalities: query/key/value and
// output projections on d_enc plus a classifier. Parameter count is
// independent of the number of fused tokens.
struct FusionHeadSpec {
  std::size_t d_att = 128;
  std::int64_t params(std::size_t d_enc, std::size_t num_classes) const;
  std::int64_t macs(std::size_t d_enc, std::size_t num_classes, std::size_t num_tokens) const;
};

// Small conv autoencoder standing in for one cross-modality transfer model.
struct ImputerTemplate {
  std::vector<std::size_t> conv_channels = {16, 16};
  std::size_t kernel = 5;
  std::vector<LayerSpec> instantiate(std::size_t channels, std::size_t window_len) const;
};

struct FusionCostSpec {
  FusionKind fusion = FusionKind::Early;
  std::size_t num_modalities = 2;
  std::size_t per_modality_channels = 1;
  std::size_t window_len = 200;
  std::size_t num_classes = 4;
  std::size_t d_proj = 64;
  EncoderTemplate encoder;
  FusionHeadSpec head;
  ImputerTemplate imputer;
  double harmony_unimodal_fraction = 0.5;  // stage-1 share of rounds
  std::size_t bytes_per_param = 8;

  void validate() const;
};

struct CostReport {
  std::int64_t params_per_client_round = 0;
  std::int64_t macs_per_sample = 0;
  std::int64_t models_trained_count = 0;
  double comm_seconds_total = 0.0;
  std::int64_t bytes_per_round = 0;
};

// Analytic cost of one client-round under the given fusion mode.
CostReport fusion_cost(const FusionCostSpec& spec);

struct LinkSpeed {
  double upload_bps = 0.0;
  double download_bps = 0.0;
};

// Synchronous rounds: each selected client downloads and uploads
// bytes_per_round; the round takes as long as its slowest client; rounds are
// summed. Selection is seeded and uniform without replacement.
double simulate_comm(std::int64_t bytes_per_round, const std::vector<LinkSpeed>& speeds,
                     std::size_t rounds, std::size_t clients_per_round, std::uint64_t seed);

// Seeded log-normal device-speed table.
std::vector<LinkSpeed> default_speed_table(std::size_t num_clients, double upload_mbps_median,
                                           double download_mbps_median, std::uint64_t seed);

// Cost strategies compared in the scalability sweep.
enum class CostStrategy { EarlyFusion, IntermediateFedMM, IntermediateHarmony, DeepImputation };

std::string cost_strategy_name(CostStrategy s);

struct SweepRow {
  std::size_t num_modalities = 0;
  CostStrategy strategy = CostStrategy::EarlyFusion;
  CostReport report;
};

struct SweepSettings {
  std::size_t rounds = 20;
  std::size_t num_clients = 100;
  double selection_fraction = 0.1;
  std::uint64_t seed = 1;
};

// (M, strategy) cost table across the modality axis.
std::vector<SweepRow> scalability_sweep(const std::vector<std::size_t>& modality_counts,
                                        const FusionCostSpec& base,
                                        const std::vector<LinkSpeed>& speeds,
                                        const SweepSettings& settings);

}  // namespace flsim

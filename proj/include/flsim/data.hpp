#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "flsim/rng.hpp"
#include "flsim/tensor.hpp"

namespace flsim {

struct ModalitySpec {
  std::size_t modality_id = 0;
  std::size_t channels = 1;
  double informativeness = 1.0;  // in [0,1]; scales the class signal amplitude
  double noise_std = 0.5;
};

// Channel offsets for the fixed early-fusion layout (modality blocks ordered
// by modality_id).
struct ModalityLayout {
  std::vector<std::size_t> offsets;
  std::vector<std::size_t> channels;
  std::size_t total_channels = 0;

  static ModalityLayout from_specs(const std::vector<ModalitySpec>& specs);
  std::size_t num_modalities() const { return channels.size(); }
};

struct MultimodalSample {
  DenseArray data;  // [total_channels, window_len]
  int label = 0;
  std::vector<bool> present_mask;  // per modality
};

struct ClientProfile {
  std::size_t client_id = 0;
  std::vector<MultimodalSample> dataset;
  std::vector<std::size_t> available_modalities;  // sorted modality ids
  double upload_bps = 0.0;
  double download_bps = 0.0;

  std::size_t num_modalities() const { return available_modalities.size(); }
};

struct PopulationConfig {
  std::size_t num_clients = 20;
  std::size_t num_classes = 4;
  std::vector<ModalitySpec> modalities;
  std::size_t window_len = 64;
  std::size_t samples_per_client_min = 24;
  std::size_t samples_per_client_max = 40;
  std::size_t test_samples_per_client = 8;
  double incomplete_ratio = 0.0;  // p_inc
  std::optional<double> label_skew;  // Dirichlet concentration; empty = uniform labels
  double upload_mbps_median = 5.0;
  double download_mbps_median = 20.0;
  std::uint64_t seed = 1;

  void validate() const;
};

struct Population {
  std::vector<ClientProfile> clients;
  std::vector<MultimodalSample> test_set;  // pooled complete-modality holdout
  ModalityLayout layout;
  std::size_t window_len = 0;
  std::size_t num_classes = 0;
};

// Synthetic multimodal population. Exactly round(p_inc * K) clients keep a
// uniformly random non-empty proper modality subset; data of absent
// modalities is zeroed. Byte-identical output for identical configs. The
// drawn data is independent of incomplete_ratio, and the set of incomplete
// clients is nested as the ratio grows.
Population generate_population(const PopulationConfig& cfg);

// Zeroes channel blocks of modalities outside `retain` and adds Gaussian
// noise to the retained blocks. `batch` is [B, C, L] or [C, L]; `present`
// marks the modalities the client actually has. `retain` must be a non-empty
// proper subset of the present set.
DenseArray modality_dropout(const DenseArray& batch, const ModalityLayout& layout,
                            const std::vector<bool>& present, const std::vector<bool>& retain,
                            double noise_mu, double noise_sigma, RandomEngine& rng);

// Noise-only fallback for single-modality clients: Gaussian noise on the
// present blocks, nothing zeroed.
DenseArray noise_augment(const DenseArray& batch, const ModalityLayout& layout,
                         const std::vector<bool>& present, double noise_mu, double noise_sigma,
                         RandomEngine& rng);

// Uniform draw over the non-empty proper subsets of `present_ids`. Throws
// DimensionError when fewer than two modalities are present (callers fall
// back to noise_augment).
std::vector<bool> sample_retain_set(const std::vector<std::size_t>& present_ids,
                                    std::size_t num_modalities, RandomEngine& rng);

// Zeroes the blocks of modalities with mask false. Used by the generator and
// the diagnostics masking sweeps.
void zero_absent_blocks(DenseArray& data, const ModalityLayout& layout,
                        const std::vector<bool>& mask);

}  // namespace flsim

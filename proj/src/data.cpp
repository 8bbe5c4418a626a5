#include "flsim/data.hpp"

#include <algorithm>
#include <cmath>

namespace flsim {

ModalityLayout ModalityLayout::from_specs(const std::vector<ModalitySpec>& specs) {
  ModalityLayout layout;
  layout.offsets.resize(specs.size());
  layout.channels.resize(specs.size());
  std::size_t off = 0;
  std::vector<ModalitySpec> ordered = specs;
  std::sort(ordered.begin(), ordered.end(),
            [](const ModalitySpec& a, const ModalitySpec& b) { return a.modality_id < b.modality_id; });
  for (std::size_t i = 0; i < ordered.size(); ++i) {
    if (ordered[i].modality_id != i) {
      throw DimensionError("modalities must carry ids 0..M-1 without gaps");
    }
    if (ordered[i].channels == 0) throw DimensionError("modality channels must be positive");
    layout.offsets[i] = off;
    layout.channels[i] = ordered[i].channels;
    off += ordered[i].channels;
  }
  layout.total_channels = off;
  return layout;
}

void PopulationConfig::validate() const {
  if (num_clients < 1) throw ConfigError("population.num_clients: must be >= 1");
  if (num_classes < 2) throw ConfigError("population.num_classes: must be >= 2");
  if (modalities.size() < 2) throw ConfigError("population.modalities: at least 2 modalities required");
  if (window_len < 1) throw ConfigError("population.window_len: must be >= 1");
  if (samples_per_client_min < 1 || samples_per_client_max < samples_per_client_min) {
    throw ConfigError("population.samples_per_client: invalid range");
  }
  if (incomplete_ratio < 0.0 || incomplete_ratio > 1.0) {
    throw ConfigError("population.incomplete_ratio: must lie in [0, 1]");
  }
  for (const auto& m : modalities) {
    if (m.informativeness < 0.0 || m.informativeness > 1.0) {
      throw ConfigError("population.modalities.informativeness: must lie in [0, 1]");
    }
    if (m.noise_std < 0.0) throw ConfigError("population.modalities.noise_std: must be >= 0");
  }
  if (label_skew && *label_skew <= 0.0) {
    throw ConfigError("population.label_skew: Dirichlet concentration must be > 0");
  }
  if (upload_mbps_median <= 0.0 || download_mbps_median <= 0.0) {
    throw ConfigError("population.link speeds: medians must be > 0");
  }
}

namespace {

// Class-conditional channel signal: per-class sinusoid with AR(1) noise.
// Informativeness scales the signal; noise_std scales the noise, so the
// per-modality signal-to-noise ratio is informativeness / noise_std.
void fill_modality_block(DenseArray& data, const ModalityLayout& layout, std::size_t modality,
                         const ModalitySpec& spec, int label, std::size_t num_classes,
                         std::size_t window_len, RandomEngine& rng) {
  constexpr double kTwoPi = 6.283185307179586476925286766559;
  constexpr double kArRho = 0.7;
  const double freq = 1.5 + static_cast<double>(label);
  const double class_phase = kTwoPi * static_cast<double>(label) / static_cast<double>(num_classes);
  const double sample_phase = rng.uniform(0.0, kTwoPi);
  const double amp_jitter = rng.uniform(0.8, 1.2);

  for (std::size_t c = 0; c < spec.channels; ++c) {
    const std::size_t row = layout.offsets[modality] + c;
    const double channel_phase = 0.7 * static_cast<double>(c) + 0.9 * static_cast<double>(modality);
    double ar = rng.normal();
    for (std::size_t t = 0; t < window_len; ++t) {
      const double x = static_cast<double>(t) / static_cast<double>(window_len);
      const double signal = std::sin(kTwoPi * freq * x + class_phase + channel_phase + sample_phase);
      ar = kArRho * ar + std::sqrt(1.0 - kArRho * kArRho) * rng.normal();
      data.at2(row, t) = spec.informativeness * amp_jitter * signal + spec.noise_std * ar;
    }
  }
}

MultimodalSample draw_sample(const PopulationConfig& cfg, const ModalityLayout& layout, int label,
                             RandomEngine& rng) {
  MultimodalSample s;
  s.label = label;
  s.present_mask.assign(layout.num_modalities(), true);
  s.data = DenseArray({layout.total_channels, cfg.window_len});
  for (std::size_t m = 0; m < cfg.modalities.size(); ++m) {
    fill_modality_block(s.data, layout, m, cfg.modalities[m], label, cfg.num_classes,
                        cfg.window_len, rng);
  }
  return s;
}

int draw_label(const std::vector<double>& class_probs, RandomEngine& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t c = 0; c < class_probs.size(); ++c) {
    acc += class_probs[c];
    if (u < acc) return static_cast<int>(c);
  }
  return static_cast<int>(class_probs.size()) - 1;
}

// Log-normal link speed: median * exp(sigma * N(0,1)).
double draw_speed(double median_mbps, RandomEngine& rng) {
  return median_mbps * 1e6 * std::exp(0.5 * rng.normal());
}

}  // namespace

std::vector<bool> sample_retain_set(const std::vector<std::size_t>& present_ids,
                                    std::size_t num_modalities, RandomEngine& rng) {
  const std::size_t m = present_ids.size();
  if (m < 2) {
    throw DimensionError("sample_retain_set: modality dropout needs at least two present modalities");
  }
  // Uniform over the 2^m - 2 non-empty proper subsets, by rejection.
  std::uint64_t bits;
  do {
    bits = rng.uniform_int(std::uint64_t{1} << m);
  } while (bits == 0 || bits == (std::uint64_t{1} << m) - 1);
  std::vector<bool> retain(num_modalities, false);
  for (std::size_t i = 0; i < m; ++i) {
    if (bits & (std::uint64_t{1} << i)) retain[present_ids[i]] = true;
  }
  return retain;
}

void zero_absent_blocks(DenseArray& data, const ModalityLayout& layout,
                        const std::vector<bool>& mask) {
  const bool batched = data.rank() == 3;
  const std::size_t window = batched ? data.dim(2) : data.dim(1);
  const std::size_t nbatch = batched ? data.dim(0) : 1;
  const std::size_t channels = batched ? data.dim(1) : data.dim(0);
  if (channels != layout.total_channels) {
    throw DimensionError("zero_absent_blocks: channel count does not match layout");
  }
  for (std::size_t b = 0; b < nbatch; ++b) {
    for (std::size_t mIdx = 0; mIdx < layout.num_modalities(); ++mIdx) {
      if (mask[mIdx]) continue;
      for (std::size_t c = 0; c < layout.channels[mIdx]; ++c) {
        double* row = data.data() + ((b * channels) + layout.offsets[mIdx] + c) * window;
        std::fill(row, row + window, 0.0);
      }
    }
  }
}

namespace {

DenseArray add_block_noise(const DenseArray& batch, const ModalityLayout& layout,
                           const std::vector<bool>& noisy_blocks, double mu, double sigma,
                           RandomEngine& rng) {
  DenseArray out = batch;
  const bool batched = out.rank() == 3;
  const std::size_t window = batched ? out.dim(2) : out.dim(1);
  const std::size_t nbatch = batched ? out.dim(0) : 1;
  const std::size_t channels = batched ? out.dim(1) : out.dim(0);
  for (std::size_t b = 0; b < nbatch; ++b) {
    for (std::size_t m = 0; m < layout.num_modalities(); ++m) {
      if (!noisy_blocks[m]) continue;
      for (std::size_t c = 0; c < layout.channels[m]; ++c) {
        double* row = out.data() + ((b * channels) + layout.offsets[m] + c) * window;
        for (std::size_t t = 0; t < window; ++t) row[t] += rng.normal(mu, sigma);
      }
    }
  }
  return out;
}

}  // namespace

DenseArray modality_dropout(const DenseArray& batch, const ModalityLayout& layout,
                            const std::vector<bool>& present, const std::vector<bool>& retain,
                            double noise_mu, double noise_sigma, RandomEngine& rng) {
  if (present.size() != layout.num_modalities() || retain.size() != layout.num_modalities()) {
    throw DimensionError("modality_dropout: mask arity does not match layout");
  }
  std::size_t retained = 0, present_count = 0;
  for (std::size_t m = 0; m < layout.num_modalities(); ++m) {
    if (retain[m] && !present[m]) {
      throw DimensionError("modality_dropout: retain set includes an absent modality");
    }
    retained += retain[m] ? 1 : 0;
    present_count += present[m] ? 1 : 0;
  }
  if (retained == 0) throw DimensionError("modality_dropout: retain set must be non-empty");
  if (retained == present_count) {
    throw DimensionError("modality_dropout: retain set must be a proper subset of present modalities");
  }

  DenseArray out = add_block_noise(batch, layout, retain, noise_mu, noise_sigma, rng);
  std::vector<bool> keep(layout.num_modalities(), false);
  for (std::size_t m = 0; m < layout.num_modalities(); ++m) keep[m] = retain[m];
  zero_absent_blocks(out, layout, keep);
  return out;
}

DenseArray noise_augment(const DenseArray& batch, const ModalityLayout& layout,
                         const std::vector<bool>& present, double noise_mu, double noise_sigma,
                         RandomEngine& rng) {
  return add_block_noise(batch, layout, present, noise_mu, noise_sigma, rng);
}

Population generate_population(const PopulationConfig& cfg) {
  cfg.validate();
  const std::size_t num_mod = cfg.modalities.size();

  Population pop;
  pop.layout = ModalityLayout::from_specs(cfg.modalities);
  pop.window_len = cfg.window_len;
  pop.num_classes = cfg.num_classes;

  // Which clients are incomplete: a fixed seeded shuffle, truncated at
  // round(p_inc*K). Rising p_inc extends the same ordering, so incomplete
  // sets are nested across ratios.
  const std::size_t num_incomplete =
      static_cast<std::size_t>(std::lround(cfg.incomplete_ratio * static_cast<double>(cfg.num_clients)));
  RandomEngine incomplete_rng(mix_seed(cfg.seed, 0xA5A5A5A5ULL));
  std::vector<std::size_t> order = incomplete_rng.permutation(cfg.num_clients);
  std::vector<bool> is_incomplete(cfg.num_clients, false);
  for (std::size_t i = 0; i < num_incomplete; ++i) is_incomplete[order[i]] = true;

  pop.clients.resize(cfg.num_clients);
  std::vector<std::size_t> all_ids(num_mod);
  for (std::size_t m = 0; m < num_mod; ++m) all_ids[m] = m;

  for (std::size_t k = 0; k < cfg.num_clients; ++k) {
    ClientProfile& client = pop.clients[k];
    client.client_id = k;

    // All per-client draws come from dedicated streams so the sample data is
    // identical whether or not the client ends up incomplete.
    RandomEngine meta_rng(mix_seed(cfg.seed, 0xC11E27ULL, k));
    RandomEngine data_rng(mix_seed(cfg.seed, 0xDA7AULL, k));
    RandomEngine mask_rng(mix_seed(cfg.seed, 0x3A5Full, k));

    const std::size_t span = cfg.samples_per_client_max - cfg.samples_per_client_min + 1;
    const std::size_t n_train = cfg.samples_per_client_min + meta_rng.uniform_int(span);
    std::vector<double> class_probs(cfg.num_classes, 1.0 / static_cast<double>(cfg.num_classes));
    if (cfg.label_skew) class_probs = meta_rng.dirichlet(*cfg.label_skew, cfg.num_classes);
    client.upload_bps = draw_speed(cfg.upload_mbps_median, meta_rng);
    client.download_bps = draw_speed(cfg.download_mbps_median, meta_rng);

    std::vector<bool> available(num_mod, true);
    if (is_incomplete[k]) available = sample_retain_set(all_ids, num_mod, mask_rng);
    client.available_modalities.clear();
    for (std::size_t m = 0; m < num_mod; ++m) {
      if (available[m]) client.available_modalities.push_back(m);
    }

    client.dataset.reserve(n_train);
    for (std::size_t i = 0; i < n_train; ++i) {
      const int label = draw_label(class_probs, data_rng);
      MultimodalSample s = draw_sample(cfg, pop.layout, label, data_rng);
      s.present_mask = available;
      zero_absent_blocks(s.data, pop.layout, available);
      client.dataset.push_back(std::move(s));
    }

    // Complete-modality holdout, pooled across clients for global evaluation.
    for (std::size_t i = 0; i < cfg.test_samples_per_client; ++i) {
      const int label = draw_label(class_probs, data_rng);
      pop.test_set.push_back(draw_sample(cfg, pop.layout, label, data_rng));
    }
  }
  return pop;
}

}  // namespace flsim

#include "flsim/cost.hpp"

#include <algorithm>
#include <cmath>

#include "flsim/rng.hpp"

namespace flsim {

std::int64_t layer_params(const LayerSpec& layer) {
  if (const auto* conv = std::get_if<Conv1DSpec>(&layer)) {
    return static_cast<std::int64_t>(conv->out_channels) * conv->in_channels * conv->kernel +
           conv->out_channels;
  }
  if (const auto* dense = std::get_if<DenseSpec>(&layer)) {
    return static_cast<std::int64_t>(dense->out_dim) * dense->in_dim + dense->out_dim;
  }
  return 0;
}

std::int64_t layer_macs(const LayerSpec& layer, LayerShape& shape) {
  std::int64_t macs = 0;
  if (const auto* conv = std::get_if<Conv1DSpec>(&layer)) {
    const std::size_t out_len = (shape.length - conv->kernel) / conv->stride + 1;
    macs = static_cast<std::int64_t>(out_len) * conv->out_channels * conv->in_channels * conv->kernel;
  } else if (const auto* dense = std::get_if<DenseSpec>(&layer)) {
    macs = static_cast<std::int64_t>(dense->in_dim) * dense->out_dim;
  }
  shape = propagate_shape(layer, shape);
  return macs;
}

std::int64_t count_trunk_params(const std::vector<LayerSpec>& layers) {
  std::int64_t total = 0;
  for (const auto& l : layers) total += layer_params(l);
  return total;
}

std::int64_t count_params(const ArchSpec& arch) {
  std::int64_t total = count_trunk_params(arch.layers);
  total += static_cast<std::int64_t>(arch.projection_dim) * arch.encoder_output_dim +
           arch.projection_dim;
  total += static_cast<std::int64_t>(arch.num_classes) * arch.encoder_output_dim + arch.num_classes;
  return total;
}

namespace {

std::int64_t trunk_macs(const std::vector<LayerSpec>& layers, std::size_t in_channels,
                        std::size_t window_len) {
  LayerShape shape;
  shape.channels = in_channels;
  shape.length = window_len;
  std::int64_t total = 0;
  for (const auto& l : layers) total += layer_macs(l, shape);
  return total;
}

}  // namespace

std::int64_t count_macs(const ArchSpec& arch, std::size_t in_channels, std::size_t window_len) {
  std::int64_t total = trunk_macs(arch.layers, in_channels, window_len);
  total += static_cast<std::int64_t>(arch.projection_dim) * arch.encoder_output_dim;
  total += static_cast<std::int64_t>(arch.num_classes) * arch.encoder_output_dim;
  return total;
}

std::vector<LayerSpec> EncoderTemplate::instantiate(std::size_t in_channels,
                                                    std::size_t window_len) const {
  std::vector<LayerSpec> layers;
  LayerShape s;
  s.channels = in_channels;
  s.length = window_len;
  std::size_t prev = in_channels;
  for (std::size_t ch : conv_channels) {
    layers.emplace_back(Conv1DSpec{prev, ch, kernel, 1});
    s = propagate_shape(layers.back(), s);
    layers.emplace_back(ReluSpec{});
    layers.emplace_back(MaxPool1DSpec{pool});
    s = propagate_shape(layers.back(), s);
    prev = ch;
  }
  layers.emplace_back(FlattenSpec{});
  s = propagate_shape(layers.back(), s);
  layers.emplace_back(DenseSpec{s.features, d_enc});
  return layers;
}

std::int64_t FusionHeadSpec::params(std::size_t d_enc, std::size_t num_classes) const {
  const std::int64_t proj = static_cast<std::int64_t>(d_att) * d_enc + d_att;  // per Q/K/V
  const std::int64_t out = static_cast<std::int64_t>(d_att) * d_att + d_att;
  const std::int64_t clf = static_cast<std::int64_t>(num_classes) * d_att + num_classes;
  return 3 * proj + out + clf;
}

std::int64_t FusionHeadSpec::macs(std::size_t d_enc, std::size_t num_classes,
                                  std::size_t num_tokens) const {
  const std::int64_t m = static_cast<std::int64_t>(num_tokens);
  std::int64_t total = 3 * m * static_cast<std::int64_t>(d_enc) * d_att;  // Q/K/V projections
  total += 2 * m * m * static_cast<std::int64_t>(d_att);                  // scores + weighted sum
  total += m * static_cast<std::int64_t>(d_att) * d_att;                  // output projection
  total += static_cast<std::int64_t>(d_att) * num_classes;                // pooled classifier
  return total;
}

std::vector<LayerSpec> ImputerTemplate::instantiate(std::size_t channels,
                                                    std::size_t window_len) const {
  // Conv encoder plus a mirrored conv decoder standing in for transpose
  // convs; identical parameter/MAC footprint at this granularity.
  std::vector<LayerSpec> layers;
  LayerShape s;
  s.channels = channels;
  s.length = window_len;
  std::size_t prev = channels;
  for (std::size_t ch : conv_channels) {
    layers.emplace_back(Conv1DSpec{prev, ch, kernel, 1});
    s = propagate_shape(layers.back(), s);
    layers.emplace_back(ReluSpec{});
    prev = ch;
  }
  for (std::size_t i = conv_channels.size(); i-- > 0;) {
    const std::size_t ch = i == 0 ? channels : conv_channels[i - 1];
    layers.emplace_back(Conv1DSpec{prev, ch, kernel, 1});
    s = propagate_shape(layers.back(), s);
    if (i != 0) layers.emplace_back(ReluSpec{});
    prev = ch;
  }
  return layers;
}

void FusionCostSpec::validate() const {
  if (num_modalities < 2) throw ConfigError("cost.num_modalities: must be >= 2");
  if (per_modality_channels < 1) throw ConfigError("cost.per_modality_channels: must be >= 1");
  if (window_len < 1) throw ConfigError("cost.window_len: must be >= 1");
  if (num_classes < 2) throw ConfigError("cost.num_classes: must be >= 2");
  if (harmony_unimodal_fraction < 0.0 || harmony_unimodal_fraction > 1.0) {
    throw ConfigError("cost.harmony_unimodal_fraction: must lie in [0, 1]");
  }
  if (bytes_per_param == 0) throw ConfigError("cost.bytes_per_param: must be >= 1");
}

CostReport fusion_cost(const FusionCostSpec& spec) {
  spec.validate();
  CostReport report;
  const std::size_t M = spec.num_modalities;
  const std::size_t ch = spec.per_modality_channels;
  const std::size_t d_enc = spec.encoder.d_enc;

  switch (spec.fusion) {
    case FusionKind::Early: {
      const auto trunk = spec.encoder.instantiate(M * ch, spec.window_len);
      std::int64_t params = count_trunk_params(trunk);
      params += static_cast<std::int64_t>(spec.d_proj) * d_enc + spec.d_proj;
      params += static_cast<std::int64_t>(spec.num_classes) * d_enc + spec.num_classes;
      std::int64_t macs = trunk_macs(trunk, M * ch, spec.window_len);
      macs += static_cast<std::int64_t>(spec.d_proj) * d_enc;
      macs += static_cast<std::int64_t>(spec.num_classes) * d_enc;
      report.params_per_client_round = params;
      report.macs_per_sample = macs;
      report.models_trained_count = 1;
      break;
    }
    case FusionKind::Intermediate: {
      const auto trunk = spec.encoder.instantiate(ch, spec.window_len);
      const std::int64_t enc_params = count_trunk_params(trunk);
      const std::int64_t enc_macs = trunk_macs(trunk, ch, spec.window_len);
      report.params_per_client_round =
          static_cast<std::int64_t>(M) * enc_params + spec.head.params(d_enc, spec.num_classes);
      report.macs_per_sample =
          static_cast<std::int64_t>(M) * enc_macs + spec.head.macs(d_enc, spec.num_classes, M);
      report.models_trained_count = static_cast<std::int64_t>(M) + 1;
      break;
    }
    case FusionKind::DeepImputation: {
      const auto imputer = spec.imputer.instantiate(ch, spec.window_len);
      const std::int64_t imp_params = count_trunk_params(imputer);
      const std::int64_t imp_macs = trunk_macs(imputer, ch, spec.window_len);
      const std::int64_t pairs = static_cast<std::int64_t>(M) * (static_cast<std::int64_t>(M) - 1);

      FusionCostSpec task = spec;
      task.fusion = FusionKind::Early;
      const CostReport task_report = fusion_cost(task);

      report.params_per_client_round = pairs * imp_params + task_report.params_per_client_round;
      report.macs_per_sample = pairs * imp_macs + task_report.macs_per_sample;
      report.models_trained_count = pairs;
      break;
    }
  }
  report.bytes_per_round =
      report.params_per_client_round * static_cast<std::int64_t>(spec.bytes_per_param);
  return report;
}

double simulate_comm(std::int64_t bytes_per_round, const std::vector<LinkSpeed>& speeds,
                     std::size_t rounds, std::size_t clients_per_round, std::uint64_t seed) {
  if (speeds.empty()) throw DimensionError("simulate_comm: empty speed table");
  if (bytes_per_round < 0) throw DimensionError("simulate_comm: negative payload");
  for (const auto& s : speeds) {
    if (s.upload_bps <= 0.0 || s.download_bps <= 0.0) {
      throw DimensionError("simulate_comm: link speeds must be positive");
    }
  }
  const std::size_t take = std::min(std::max<std::size_t>(clients_per_round, 1), speeds.size());
  const double bits = static_cast<double>(bytes_per_round) * 8.0;

  RandomEngine rng(mix_seed(seed, 0xC0117ULL));
  double total = 0.0;
  for (std::size_t t = 0; t < rounds; ++t) {
    std::vector<std::size_t> order = rng.permutation(speeds.size());
    double round_time = 0.0;
    for (std::size_t i = 0; i < take; ++i) {
      const LinkSpeed& s = speeds[order[i]];
      round_time = std::max(round_time, bits / s.download_bps + bits / s.upload_bps);
    }
    total += round_time;
  }
  return total;
}

std::vector<LinkSpeed> default_speed_table(std::size_t num_clients, double upload_mbps_median,
                                           double download_mbps_median, std::uint64_t seed) {
  std::vector<LinkSpeed> table(num_clients);
  RandomEngine rng(mix_seed(seed, 0x5EEDULL));
  for (auto& s : table) {
    s.upload_bps = upload_mbps_median * 1e6 * std::exp(0.5 * rng.normal());
    s.download_bps = download_mbps_median * 1e6 * std::exp(0.5 * rng.normal());
  }
  return table;
}

std::string cost_strategy_name(CostStrategy s) {
  switch (s) {
    case CostStrategy::EarlyFusion: return "early_fusion";
    case CostStrategy::IntermediateFedMM: return "intermediate_fedmm";
    case CostStrategy::IntermediateHarmony: return "intermediate_harmony";
    case CostStrategy::DeepImputation: return "deep_imputation";
  }
  return "unknown";
}

std::vector<SweepRow> scalability_sweep(const std::vector<std::size_t>& modality_counts,
                                        const FusionCostSpec& base,
                                        const std::vector<LinkSpeed>& speeds,
                                        const SweepSettings& settings) {
  std::vector<SweepRow> rows;
  const std::size_t per_round = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::lround(settings.selection_fraction *
                                              static_cast<double>(settings.num_clients))));
  for (std::size_t M : modality_counts) {
    if (M < 2 || M > 64) throw ConfigError("cost sweep: modality counts must lie in [2, 64]");
    FusionCostSpec spec = base;
    spec.num_modalities = M;

    for (CostStrategy strat :
         {CostStrategy::EarlyFusion, CostStrategy::IntermediateFedMM,
          CostStrategy::IntermediateHarmony, CostStrategy::DeepImputation}) {
      SweepRow row;
      row.num_modalities = M;
      row.strategy = strat;
      switch (strat) {
        case CostStrategy::EarlyFusion: {
          spec.fusion = FusionKind::Early;
          row.report = fusion_cost(spec);
          row.report.comm_seconds_total = simulate_comm(row.report.bytes_per_round, speeds,
                                                        settings.rounds, per_round, settings.seed);
          break;
        }
        case CostStrategy::IntermediateFedMM: {
          spec.fusion = FusionKind::Intermediate;
          row.report = fusion_cost(spec);
          row.report.comm_seconds_total = simulate_comm(row.report.bytes_per_round, speeds,
                                                        settings.rounds, per_round, settings.seed);
          break;
        }
        case CostStrategy::IntermediateHarmony: {
          // Stage one trains/ships all M unimodal models for a fraction of the
          // rounds; stage two trains/ships only the fusion head.
          spec.fusion = FusionKind::Intermediate;
          const auto trunk = spec.encoder.instantiate(spec.per_modality_channels, spec.window_len);
          const std::int64_t enc_params = count_trunk_params(trunk);
          const std::int64_t unimodal_params =
              enc_params + static_cast<std::int64_t>(spec.num_classes) * spec.encoder.d_enc +
              spec.num_classes;  // per-modality encoder + its own classifier
          const std::int64_t head_params = spec.head.params(spec.encoder.d_enc, spec.num_classes);

          const auto stage1_rounds = static_cast<std::size_t>(
              std::lround(spec.harmony_unimodal_fraction * static_cast<double>(settings.rounds)));
          const std::size_t stage2_rounds = settings.rounds - stage1_rounds;

          const std::int64_t stage1_bytes = static_cast<std::int64_t>(spec.num_modalities) *
                                            unimodal_params *
                                            static_cast<std::int64_t>(spec.bytes_per_param);
          const std::int64_t stage2_bytes =
              head_params * static_cast<std::int64_t>(spec.bytes_per_param);

          CostReport rep;
          rep.models_trained_count = static_cast<std::int64_t>(spec.num_modalities) + 1;
          const std::int64_t total_params =
              static_cast<std::int64_t>(stage1_rounds) * spec.num_modalities * unimodal_params +
              static_cast<std::int64_t>(stage2_rounds) * head_params;
          rep.params_per_client_round = settings.rounds == 0
                                            ? 0
                                            : total_params / static_cast<std::int64_t>(settings.rounds);
          const std::int64_t enc_macs =
              trunk_macs(trunk, spec.per_modality_channels, spec.window_len);
          rep.macs_per_sample = static_cast<std::int64_t>(spec.num_modalities) * enc_macs +
                                spec.head.macs(spec.encoder.d_enc, spec.num_classes,
                                               spec.num_modalities);
          rep.bytes_per_round = stage1_rounds > 0 ? stage1_bytes : stage2_bytes;
          rep.comm_seconds_total =
              simulate_comm(stage1_bytes, speeds, stage1_rounds, per_round, settings.seed) +
              simulate_comm(stage2_bytes, speeds, stage2_rounds, per_round,
                            mix_seed(settings.seed, 2));
          row.report = rep;
          break;
        }
        case CostStrategy::DeepImputation: {
          spec.fusion = FusionKind::DeepImputation;
          row.report = fusion_cost(spec);
          row.report.comm_seconds_total = simulate_comm(row.report.bytes_per_round, speeds,
                                                        settings.rounds, per_round, settings.seed);
          break;
        }
      }
      rows.push_back(row);
    }
  }
  return rows;
}

}  // namespace flsim

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "flsim/cost.hpp"
#include "flsim/engine.hpp"

namespace flsim {

// Knobs for the analytic cost sweeps; independent of the training population.
struct CostConfig {
  std::size_t window_len = 200;
  std::size_t per_modality_channels = 1;
  std::vector<std::size_t> modality_axis = {5, 10, 15, 20, 25, 30};
  std::vector<double> p_inc_axis = {0.4, 0.6, 0.8};
  EncoderTemplate encoder;
  std::size_t d_att = 128;
  std::size_t d_proj = 64;
  std::size_t num_classes = 4;
  std::size_t bytes_per_param = 8;
  double harmony_unimodal_fraction = 0.5;
  std::size_t num_clients = 100;
  double selection_fraction = 0.1;
  std::size_t rounds = 20;
  std::uint64_t seed = 1;
};

struct ExperimentConfig {
  PopulationConfig population;
  FLConfig fl;
  ArchOptions arch;
  CostConfig cost;
  std::string output_dir = "out";
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};

  // Strategy-specific optimizer overrides applied when running MOON.
  std::optional<double> moon_learning_rate;
  std::optional<std::size_t> moon_batch_size;

  void validate() const;
};

ExperimentConfig config_from_json_string(const std::string& text);
ExperimentConfig load_config(const std::string& path);

// Canonical serialization of the parsed config; stable across reload cycles.
std::string config_to_json_string(const ExperimentConfig& cfg);

// FNV-1a over the canonical serialization.
std::string config_hash(const ExperimentConfig& cfg);

// FLConfig for one run: seed installed, MOON optimizer overrides applied.
FLConfig effective_fl_config(const ExperimentConfig& cfg, Strategy strategy, std::uint64_t seed);

// Population for one run; the config seed is mixed with the run seed so
// strategies compared under one run seed share the data draw.
PopulationConfig effective_population_config(const ExperimentConfig& cfg, std::uint64_t run_seed);

// 17-significant-digit formatting used by every CSV writer.
std::string format_g17(double v);

}  // namespace flsim

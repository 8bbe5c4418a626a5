#include "flsim/cli.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "flsim/config.hpp"
#include "flsim/diagnostics.hpp"
#include "flsim/parallel.hpp"
#include "flsim/version.hpp"

namespace flsim {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> strategies;
  std::vector<std::uint64_t> seeds;
  std::string out_dir;
};

ExperimentConfig load_effective_config(const CommonArgs& args) {
  ExperimentConfig cfg = load_config(args.config_path);
  if (!args.seeds.empty()) cfg.seeds = args.seeds;
  if (!args.out_dir.empty()) cfg.output_dir = args.out_dir;
  cfg.validate();
  return cfg;
}

std::vector<Strategy> resolve_strategies(const ExperimentConfig& cfg,
                                         const std::vector<std::string>& names) {
  std::vector<Strategy> out;
  if (names.empty()) {
    out.push_back(cfg.fl.strategy);
    return out;
  }
  for (const auto& n : names) out.push_back(strategy_from_string(n));
  return out;
}

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

std::string weights_field(const std::vector<std::pair<std::size_t, double>>& weights) {
  std::ostringstream os;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (i) os << "|";
    os << weights[i].first << "=" << format_g17(weights[i].second);
  }
  return os.str();
}

struct RunOutput {
  Strategy strategy;
  std::uint64_t seed = 0;
  double final_macro_f1 = 0.0;
  double mean_macro_f1 = 0.0;
  fs::path dir;
};

std::string rounds_csv_text(Strategy strategy, const std::vector<RoundReport>& reports) {
  std::ostringstream os;
  os << "t,strategy,macro_f1,comm_seconds,params_trained,weights\n";
  for (const auto& r : reports) {
    os << r.round << "," << strategy_name(strategy) << "," << format_g17(r.macro_f1) << ","
       << format_g17(r.comm_seconds) << "," << r.params_trained << "," << weights_field(r.weights)
       << "\n";
  }
  return os.str();
}

double round3(double v) { return std::round(v * 1000.0) / 1000.0; }

RunOutput execute_run(const ExperimentConfig& cfg, Strategy strategy, std::uint64_t seed,
                      const fs::path& dir, unsigned engine_threads) {
  const auto t0 = std::chrono::steady_clock::now();
  const Population population = generate_population(effective_population_config(cfg, seed));
  const FLConfig fl = effective_fl_config(cfg, strategy, seed);
  const ArchSpec arch = default_arch(population.layout.total_channels, population.window_len,
                                     population.num_classes, cfg.arch);
  const std::vector<RoundReport> reports = run_federation(population, fl, arch, engine_threads);

  write_text_file(dir / "rounds.csv", rounds_csv_text(strategy, reports));

  double comm_total = 0.0;
  double f1_sum = 0.0;
  std::int64_t params_total = 0;
  for (const auto& r : reports) {
    comm_total += r.comm_seconds;
    params_total += r.params_trained;
    f1_sum += r.macro_f1;
  }
  const RoundReport& last = reports.back();
  const double mean_f1 = f1_sum / static_cast<double>(reports.size());

  json summary;
  summary["strategy"] = strategy_name(strategy);
  summary["seed"] = seed;
  summary["final"] = {{"round", last.round},
                      {"macro_f1", last.macro_f1},
                      {"comm_seconds", last.comm_seconds},
                      {"params_trained", last.params_trained}};
  summary["totals"] = {{"comm_seconds", comm_total}, {"params_trained", params_total}};
  summary["averaged"] = {{"macro_f1_over_rounds", mean_f1}};
  summary["display"] = {{"final_macro_f1", round3(last.macro_f1)},
                        {"averaged_macro_f1", round3(mean_f1)}};
  write_text_file(dir / "summary.json", summary.dump(2) + "\n");

  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  json manifest;
  manifest["config_hash"] = config_hash(cfg);
  manifest["tool_version"] = kToolVersion;
  manifest["strategy"] = strategy_name(strategy);
  manifest["seed"] = seed;
  manifest["files"] = {"rounds.csv", "summary.json"};
  manifest["wall_clock_seconds"] = wall;
  write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");

  RunOutput out;
  out.strategy = strategy;
  out.seed = seed;
  out.final_macro_f1 = last.macro_f1;
  out.mean_macro_f1 = mean_f1;
  out.dir = dir;
  return out;
}

// Job-level fan-out: each (strategy, seed) pipeline is independent, so spare
// workers go to whole runs first and inside a run only when jobs are few.
unsigned threads_within_job(std::size_t num_jobs) {
  const unsigned total = sim_threads();
  if (num_jobs == 0) return total;
  return std::max(1u, static_cast<unsigned>(total / num_jobs));
}

int cmd_run(const CommonArgs& args) {
  const ExperimentConfig cfg = load_effective_config(args);
  const std::vector<Strategy> strategies = resolve_strategies(cfg, args.strategies);
  const fs::path root = cfg.output_dir;

  struct Job {
    Strategy strategy;
    std::uint64_t seed;
    fs::path dir;
  };
  std::vector<Job> jobs;
  for (Strategy s : strategies) {
    for (std::uint64_t seed : cfg.seeds) {
      const fs::path dir = root / strategy_name(s) / ("seed_" + std::to_string(seed));
      fs::create_directories(dir);
      jobs.push_back({s, seed, dir});
    }
  }

  std::vector<RunOutput> outputs(jobs.size());
  const unsigned inner = threads_within_job(jobs.size());
  parallel_for_index(jobs.size(), sim_threads(), [&](std::size_t i) {
    outputs[i] = execute_run(cfg, jobs[i].strategy, jobs[i].seed, jobs[i].dir, inner);
  });

  for (const auto& o : outputs) {
    std::cout << "[run] strategy=" << strategy_name(o.strategy) << " seed=" << o.seed
              << " final_f1=" << format_g17(o.final_macro_f1) << "\n";
  }

  if (strategies.size() > 1) {
    std::ostringstream os;
    os << "seed";
    for (Strategy s : strategies) os << "," << strategy_name(s) << "_final_f1";
    for (std::size_t i = 1; i < strategies.size(); ++i) {
      os << ",delta_" << strategy_name(strategies[i]) << "_vs_" << strategy_name(strategies[0]);
    }
    os << "\n";
    std::map<std::uint64_t, std::map<std::string, double>> by_seed;
    for (const auto& o : outputs) by_seed[o.seed][strategy_name(o.strategy)] = o.final_macro_f1;
    std::vector<double> mean(strategies.size(), 0.0);
    for (const auto& [seed, row] : by_seed) {
      os << seed;
      for (std::size_t i = 0; i < strategies.size(); ++i) {
        const double v = row.at(strategy_name(strategies[i]));
        mean[i] += v;
        os << "," << format_g17(v);
      }
      for (std::size_t i = 1; i < strategies.size(); ++i) {
        os << ","
           << format_g17(row.at(strategy_name(strategies[i])) - row.at(strategy_name(strategies[0])));
      }
      os << "\n";
    }
    os << "mean";
    for (auto& v : mean) v /= static_cast<double>(by_seed.size());
    for (std::size_t i = 0; i < strategies.size(); ++i) os << "," << format_g17(mean[i]);
    for (std::size_t i = 1; i < strategies.size(); ++i) os << "," << format_g17(mean[i] - mean[0]);
    os << "\n";
    write_text_file(root / "head_to_head.csv", os.str());
  }
  return 0;
}

int cmd_sweep(const CommonArgs& args, const std::string& axis) {
  const ExperimentConfig cfg = load_effective_config(args);
  const fs::path root = cfg.output_dir;
  fs::create_directories(root);

  if (axis == "M") {
    if (cfg.cost.modality_axis.empty()) {
      throw ConfigError("cost.modality_axis: sweep axis must not be empty");
    }
    FusionCostSpec base;
    base.per_modality_channels = cfg.cost.per_modality_channels;
    base.window_len = cfg.cost.window_len;
    base.num_classes = cfg.cost.num_classes;
    base.d_proj = cfg.cost.d_proj;
    base.encoder = cfg.cost.encoder;
    base.head.d_att = cfg.cost.d_att;
    base.harmony_unimodal_fraction = cfg.cost.harmony_unimodal_fraction;
    base.bytes_per_param = cfg.cost.bytes_per_param;

    SweepSettings settings;
    settings.rounds = cfg.cost.rounds;
    settings.num_clients = cfg.cost.num_clients;
    settings.selection_fraction = cfg.cost.selection_fraction;
    settings.seed = cfg.cost.seed;

    const auto speeds = default_speed_table(cfg.cost.num_clients, cfg.population.upload_mbps_median,
                                            cfg.population.download_mbps_median, cfg.cost.seed);
    const auto rows = scalability_sweep(cfg.cost.modality_axis, base, speeds, settings);

    std::ostringstream os;
    os << "M,strategy,params,macs,models,comm_seconds\n";
    json jrows = json::array();
    for (const auto& r : rows) {
      os << r.num_modalities << "," << cost_strategy_name(r.strategy) << ","
         << r.report.params_per_client_round << "," << r.report.macs_per_sample << ","
         << r.report.models_trained_count << "," << format_g17(r.report.comm_seconds_total) << "\n";
      jrows.push_back({{"M", r.num_modalities},
                       {"strategy", cost_strategy_name(r.strategy)},
                       {"params", r.report.params_per_client_round},
                       {"macs", r.report.macs_per_sample},
                       {"models", r.report.models_trained_count},
                       {"comm_seconds", r.report.comm_seconds_total}});
    }
    write_text_file(root / "sweep.csv", os.str());
    write_text_file(root / "sweep.json", jrows.dump(2) + "\n");
    std::cout << "[sweep] axis=M rows=" << rows.size() << "\n";
    return 0;
  }

  if (axis != "p_inc") throw ConfigError("sweep: axis must be one of p_inc|M");
  if (cfg.cost.p_inc_axis.empty()) throw ConfigError("cost.p_inc_axis: sweep axis must not be empty");
  const std::vector<Strategy> strategies = resolve_strategies(cfg, args.strategies);

  struct Job {
    double p_inc;
    Strategy strategy;
    std::uint64_t seed;
    fs::path dir;
  };
  std::vector<Job> jobs;
  for (double p : cfg.cost.p_inc_axis) {
    if (p < 0.0 || p > 1.0) throw ConfigError("cost.p_inc_axis: values must lie in [0, 1]");
    std::ostringstream label;
    label << "p_" << p;
    for (Strategy s : strategies) {
      for (std::uint64_t seed : cfg.seeds) {
        const fs::path dir = root / label.str() / strategy_name(s) / ("seed_" + std::to_string(seed));
        fs::create_directories(dir);
        jobs.push_back({p, s, seed, dir});
      }
    }
  }

  std::vector<RunOutput> outputs(jobs.size());
  const unsigned inner = threads_within_job(jobs.size());
  parallel_for_index(jobs.size(), sim_threads(), [&](std::size_t i) {
    ExperimentConfig sub = cfg;
    sub.population.incomplete_ratio = jobs[i].p_inc;
    outputs[i] = execute_run(sub, jobs[i].strategy, jobs[i].seed, jobs[i].dir, inner);
  });

  std::ostringstream os;
  os << "p_inc,strategy,seed,final_macro_f1\n";
  std::map<std::pair<double, std::string>, std::pair<double, std::size_t>> means;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    os << format_g17(jobs[i].p_inc) << "," << strategy_name(jobs[i].strategy) << "," << jobs[i].seed
       << "," << format_g17(outputs[i].final_macro_f1) << "\n";
    auto& acc = means[{jobs[i].p_inc, strategy_name(jobs[i].strategy)}];
    acc.first += outputs[i].final_macro_f1;
    acc.second += 1;
  }
  for (const auto& [key, acc] : means) {
    os << format_g17(key.first) << "," << key.second << ",mean,"
       << format_g17(acc.first / static_cast<double>(acc.second)) << "\n";
  }
  write_text_file(root / "sweep.csv", os.str());
  std::cout << "[sweep] axis=p_inc runs=" << jobs.size() << "\n";
  return 0;
}

int cmd_diagnose(const CommonArgs& args, bool skip_mirl_pair) {
  const ExperimentConfig cfg = load_effective_config(args);
  const fs::path root = cfg.output_dir;
  fs::create_directories(root);

  struct SeedResult {
    DiagnosticCurve entropy;
    DiagnosticCurve embed_with;
    DiagnosticCurve embed_without;
  };
  std::vector<SeedResult> results(cfg.seeds.size());
  const unsigned inner = threads_within_job(cfg.seeds.size());

  parallel_for_index(cfg.seeds.size(), sim_threads(), [&](std::size_t i) {
    const std::uint64_t seed = cfg.seeds[i];
    const Population population = generate_population(effective_population_config(cfg, seed));
    const ArchSpec arch = default_arch(population.layout.total_channels, population.window_len,
                                       population.num_classes, cfg.arch);

    // Plain run: the baseline trained without the contrastive term.
    FLConfig plain = effective_fl_config(cfg, Strategy::FLISM, seed);
    plain.mirl = false;
    plain.gamma = 0.0;
    plain.weighting = AggWeighting::SampleSize;
    const auto plain_rounds = run_federation(population, plain, arch, inner);
    const ModelState& model_plain = plain_rounds.back().global_state;

    DiagnosticOptions opts;
    opts.seed = seed;
    opts.batch_size = cfg.fl.optimizer.batch_size;
    results[i].entropy = entropy_vs_missing(model_plain, population.test_set, population.layout,
                                            population.num_classes, opts);

    if (!skip_mirl_pair) {
      FLConfig mirl = plain;
      mirl.mirl = true;
      const auto mirl_rounds = run_federation(population, mirl, arch, inner);
      const ModelState& model_mirl = mirl_rounds.back().global_state;
      auto pair = embedding_distance_curve(model_mirl, model_plain, population.test_set,
                                           population.layout, opts);
      results[i].embed_with = std::move(pair.first);
      results[i].embed_without = std::move(pair.second);
    }
  });

  {
    std::ostringstream os;
    os << "seed,d,entropy,f1\n";
    const std::size_t points = results[0].entropy.x.size();
    std::vector<double> mean_entropy(points, 0.0), mean_f1(points, 0.0);
    for (std::size_t i = 0; i < results.size(); ++i) {
      for (std::size_t k = 0; k < points; ++k) {
        os << cfg.seeds[i] << "," << results[i].entropy.x[k] << ","
           << format_g17(results[i].entropy.y_entropy[k]) << ","
           << format_g17(results[i].entropy.y_f1[k]) << "\n";
        mean_entropy[k] += results[i].entropy.y_entropy[k];
        mean_f1[k] += results[i].entropy.y_f1[k];
      }
    }
    if (results.size() > 1) {
      for (std::size_t k = 0; k < points; ++k) {
        os << "mean," << k << "," << format_g17(mean_entropy[k] / static_cast<double>(results.size()))
           << "," << format_g17(mean_f1[k] / static_cast<double>(results.size())) << "\n";
      }
    }
    write_text_file(root / "entropy_vs_missing.csv", os.str());
  }

  if (!skip_mirl_pair) {
    std::ostringstream os;
    os << "seed,model,d,embed_dist\n";
    const std::size_t points = results[0].embed_with.x.size();
    std::vector<double> mean_with(points, 0.0), mean_without(points, 0.0);
    for (std::size_t i = 0; i < results.size(); ++i) {
      for (std::size_t k = 0; k < points; ++k) {
        os << cfg.seeds[i] << ",mirl," << k << ","
           << format_g17(results[i].embed_with.y_embed_dist[k]) << "\n";
        os << cfg.seeds[i] << ",no_mirl," << k << ","
           << format_g17(results[i].embed_without.y_embed_dist[k]) << "\n";
        mean_with[k] += results[i].embed_with.y_embed_dist[k];
        mean_without[k] += results[i].embed_without.y_embed_dist[k];
      }
    }
    if (results.size() > 1) {
      for (std::size_t k = 0; k < points; ++k) {
        os << "mean,mirl," << k << ","
           << format_g17(mean_with[k] / static_cast<double>(results.size())) << "\n";
        os << "mean,no_mirl," << k << ","
           << format_g17(mean_without[k] / static_cast<double>(results.size())) << "\n";
      }
    }
    write_text_file(root / "embed_dist.csv", os.str());
  }
  std::cout << "[diagnose] seeds=" << cfg.seeds.size()
            << (skip_mirl_pair ? " (entropy only)" : "") << "\n";
  return 0;
}

int cmd_ablate(const CommonArgs& args) {
  const ExperimentConfig cfg = load_effective_config(args);
  const fs::path root = cfg.output_dir;
  fs::create_directories(root);

  std::vector<std::vector<AblationRow>> tables(cfg.seeds.size());
  const unsigned inner = threads_within_job(cfg.seeds.size());
  parallel_for_index(cfg.seeds.size(), sim_threads(), [&](std::size_t i) {
    const std::uint64_t seed = cfg.seeds[i];
    const Population population = generate_population(effective_population_config(cfg, seed));
    const ArchSpec arch = default_arch(population.layout.total_channels, population.window_len,
                                       population.num_classes, cfg.arch);
    const FLConfig base = effective_fl_config(cfg, Strategy::FLISM, seed);
    tables[i] = ablation_suite(population, base, arch, inner);
  });

  std::ostringstream os;
  os << "seed,config,final_macro_f1\n";
  const std::size_t variants = tables[0].size();
  std::vector<double> mean(variants, 0.0);
  for (std::size_t i = 0; i < tables.size(); ++i) {
    for (std::size_t v = 0; v < variants; ++v) {
      os << cfg.seeds[i] << "," << tables[i][v].name << ","
         << format_g17(tables[i][v].final_macro_f1) << "\n";
      mean[v] += tables[i][v].final_macro_f1;
    }
  }
  if (tables.size() > 1) {
    for (std::size_t v = 0; v < variants; ++v) {
      os << "mean," << tables[0][v].name << ","
         << format_g17(mean[v] / static_cast<double>(tables.size())) << "\n";
    }
  }
  write_text_file(root / "ablation.csv", os.str());
  std::cout << "[ablate] seeds=" << cfg.seeds.size() << " variants=" << variants << "\n";
  return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"Federated multimodal time-series simulator"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string axis;
  bool skip_mirl_pair = false;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", args.config_path, "Experiment config (JSON)")->required();
    cmd->add_option("--strategy", args.strategies, "Strategy override (repeatable)");
    cmd->add_option("--seed", args.seeds, "Seed override (repeatable)");
    cmd->add_option("--out", args.out_dir, "Output directory override");
  };

  CLI::App* run = app.add_subcommand("run", "Train per configured strategy and seeds");
  add_common(run);
  CLI::App* sweep = app.add_subcommand("sweep", "Sweep incomplete ratio or modality count");
  add_common(sweep);
  sweep->add_option("--axis", axis, "Sweep axis: p_inc or M")->required();
  CLI::App* diagnose = app.add_subcommand("diagnose", "Entropy / embedding-distance curves");
  add_common(diagnose);
  diagnose->add_flag("--skip-mirl-pair", skip_mirl_pair, "Entropy curve only");
  CLI::App* ablate = app.add_subcommand("ablate", "Component-wise configuration table");
  add_common(ablate);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (run->parsed()) return cmd_run(args);
    if (sweep->parsed()) return cmd_sweep(args, axis);
    if (diagnose->parsed()) return cmd_diagnose(args, skip_mirl_pair);
    if (ablate->parsed()) return cmd_ablate(args);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}

}  // namespace flsim

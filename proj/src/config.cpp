#include "flsim/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace flsim {

using nlohmann::json;

std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& message) {
  throw ConfigError(path + ": " + message);
}

template <typename T>
T get_field(const json& j, const std::string& path, const std::string& key, const T& fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    fail(path + "." + key, "wrong type");
  }
}

json require_object(const json& j, const std::string& path, const std::string& key) {
  if (!j.contains(key)) return json::object();
  if (!j.at(key).is_object()) fail(path + "." + key, "expected an object");
  return j.at(key);
}

std::vector<ModalitySpec> default_modalities() {
  // Informativeness ladder: the low end is close to pure noise.
  const double inf[] = {1.0, 0.8, 0.65, 0.5, 0.35, 0.2};
  std::vector<ModalitySpec> mods(6);
  for (std::size_t i = 0; i < mods.size(); ++i) {
    mods[i].modality_id = i;
    mods[i].channels = 2;
    mods[i].informativeness = inf[i];
    mods[i].noise_std = 0.5;
  }
  return mods;
}

PopulationConfig parse_population(const json& j) {
  PopulationConfig p;
  const std::string path = "population";
  p.num_clients = get_field<std::size_t>(j, path, "num_clients", 20);
  p.num_classes = get_field<std::size_t>(j, path, "num_classes", 4);
  p.window_len = get_field<std::size_t>(j, path, "window_len", 64);
  if (j.contains("samples_per_client")) {
    const auto& range = j.at("samples_per_client");
    if (!range.is_array() || range.size() != 2) {
      fail(path + ".samples_per_client", "expected [min, max]");
    }
    p.samples_per_client_min = range[0].get<std::size_t>();
    p.samples_per_client_max = range[1].get<std::size_t>();
  }
  p.test_samples_per_client = get_field<std::size_t>(j, path, "test_samples_per_client", 8);
  p.incomplete_ratio = get_field<double>(j, path, "incomplete_ratio", 0.6);
  if (j.contains("label_skew") && !j.at("label_skew").is_null()) {
    p.label_skew = get_field<double>(j, path, "label_skew", 0.5);
  }
  p.upload_mbps_median = get_field<double>(j, path, "upload_mbps_median", 5.0);
  p.download_mbps_median = get_field<double>(j, path, "download_mbps_median", 20.0);
  p.seed = get_field<std::uint64_t>(j, path, "seed", 7);

  if (j.contains("modalities")) {
    const auto& jm = j.at("modalities");
    if (!jm.is_array() || jm.size() < 2) fail(path + ".modalities", "expected an array of >= 2 entries");
    p.modalities.clear();
    for (std::size_t i = 0; i < jm.size(); ++i) {
      const auto& e = jm[i];
      const std::string epath = path + ".modalities[" + std::to_string(i) + "]";
      ModalitySpec m;
      m.modality_id = get_field<std::size_t>(e, epath, "id", i);
      m.channels = get_field<std::size_t>(e, epath, "channels", 2);
      m.informativeness = get_field<double>(e, epath, "informativeness", 1.0);
      m.noise_std = get_field<double>(e, epath, "noise_std", 0.5);
      p.modalities.push_back(m);
    }
  } else {
    p.modalities = default_modalities();
  }
  return p;
}

FLConfig parse_fl(const json& j) {
  FLConfig f;
  const std::string path = "fl";
  f.rounds = get_field<std::size_t>(j, path, "rounds", 30);
  f.local_epochs = get_field<std::size_t>(j, path, "local_epochs", 1);
  f.selection_fraction = get_field<double>(j, path, "selection_fraction", 0.3);
  f.strategy = strategy_from_string(get_field<std::string>(j, path, "strategy", "flism"));
  f.gamma = get_field<double>(j, path, "gamma", 1.0);
  f.tau_sc = get_field<double>(j, path, "tau_sc", 0.07);
  f.tau_kd = get_field<double>(j, path, "tau_kd", 2.0);
  f.mu_prox = get_field<double>(j, path, "mu_prox", 0.01);
  f.mu_moon = get_field<double>(j, path, "mu_moon", 1.0);
  f.tau_moon = get_field<double>(j, path, "tau_moon", 0.5);
  f.optimizer.learning_rate = get_field<double>(j, path, "learning_rate", 0.01);
  f.optimizer.weight_decay = get_field<double>(j, path, "weight_decay", 0.001);
  f.optimizer.batch_size = get_field<std::size_t>(j, path, "batch_size", 32);
  f.entropy_floor = get_field<double>(j, path, "entropy_floor", 1e-3);
  f.mirl = get_field<bool>(j, path, "mirl", true);

  const std::string weighting = get_field<std::string>(j, path, "weighting", "entropy");
  if (weighting == "entropy") {
    f.weighting = AggWeighting::Entropy;
  } else if (weighting == "samples") {
    f.weighting = AggWeighting::SampleSize;
  } else if (weighting == "entropy_samples") {
    f.weighting = AggWeighting::EntropySamples;
  } else {
    fail(path + ".weighting", "expected entropy|samples|entropy_samples, got '" + weighting + "'");
  }

  const std::string resample = get_field<std::string>(j, path, "retain_resample", "per_round");
  if (resample == "per_round") {
    f.retain_resample = RetainResample::PerRound;
  } else if (resample == "per_batch") {
    f.retain_resample = RetainResample::PerBatch;
  } else if (resample == "per_sample") {
    f.retain_resample = RetainResample::PerSample;
  } else {
    fail(path + ".retain_resample", "expected per_round|per_batch|per_sample, got '" + resample + "'");
  }

  f.ce_on_expanded = get_field<bool>(j, path, "ce_on_expanded", false);
  const std::string kd_form = get_field<std::string>(j, path, "kd_form", "canonical");
  if (kd_form == "canonical") {
    f.kd_form = KdForm::Canonical;
  } else if (kd_form == "literal") {
    f.kd_form = KdForm::Literal;
  } else {
    fail(path + ".kd_form", "expected canonical|literal, got '" + kd_form + "'");
  }
  f.noise_mu = get_field<double>(j, path, "noise_mu", 0.0);
  f.noise_sigma = get_field<double>(j, path, "noise_sigma", 0.1);
  return f;
}

ArchOptions parse_arch(const json& j) {
  ArchOptions a;
  const std::string path = "arch";
  a.conv_channels = get_field<std::vector<std::size_t>>(j, path, "conv_channels", {32, 64});
  a.kernel = get_field<std::size_t>(j, path, "kernel", 8);
  a.pool = get_field<std::size_t>(j, path, "pool", 2);
  a.d_enc = get_field<std::size_t>(j, path, "d_enc", 128);
  a.d_proj = get_field<std::size_t>(j, path, "d_proj", 64);
  if (a.conv_channels.empty()) fail(path + ".conv_channels", "must name at least one conv layer");
  return a;
}

CostConfig parse_cost(const json& j) {
  CostConfig c;
  const std::string path = "cost";
  c.window_len = get_field<std::size_t>(j, path, "window_len", 200);
  c.per_modality_channels = get_field<std::size_t>(j, path, "per_modality_channels", 1);
  c.modality_axis = get_field<std::vector<std::size_t>>(j, path, "modality_axis", {5, 10, 15, 20, 25, 30});
  c.p_inc_axis = get_field<std::vector<double>>(j, path, "p_inc_axis", {0.4, 0.6, 0.8});
  c.encoder.conv_channels = get_field<std::vector<std::size_t>>(j, path, "conv_channels", {32, 64});
  c.encoder.kernel = get_field<std::size_t>(j, path, "kernel", 8);
  c.encoder.pool = get_field<std::size_t>(j, path, "pool", 2);
  c.encoder.d_enc = get_field<std::size_t>(j, path, "d_enc", 128);
  c.d_att = get_field<std::size_t>(j, path, "d_att", 128);
  c.d_proj = get_field<std::size_t>(j, path, "d_proj", 64);
  c.num_classes = get_field<std::size_t>(j, path, "num_classes", 4);
  c.bytes_per_param = get_field<std::size_t>(j, path, "bytes_per_param", 8);
  c.harmony_unimodal_fraction = get_field<double>(j, path, "harmony_unimodal_fraction", 0.5);
  c.num_clients = get_field<std::size_t>(j, path, "num_clients", 100);
  c.selection_fraction = get_field<double>(j, path, "selection_fraction", 0.1);
  c.rounds = get_field<std::size_t>(j, path, "rounds", 20);
  c.seed = get_field<std::uint64_t>(j, path, "seed", 1);
  return c;
}

}  // namespace

void ExperimentConfig::validate() const {
  population.validate();
  fl.validate();
  if (seeds.empty()) throw ConfigError("seeds: must list at least one seed");
  if (output_dir.empty()) throw ConfigError("output_dir: must not be empty");
  if (arch.d_enc == 0 || arch.d_proj == 0) throw ConfigError("arch: d_enc and d_proj must be positive");
  if (moon_learning_rate && *moon_learning_rate <= 0.0) {
    throw ConfigError("fl.moon_learning_rate: must be > 0");
  }
  if (moon_batch_size && *moon_batch_size < 1) {
    throw ConfigError("fl.moon_batch_size: must be >= 1");
  }
  // The arch must actually fit the configured population.
  const ModalityLayout layout = ModalityLayout::from_specs(population.modalities);
  default_arch(layout.total_channels, population.window_len, population.num_classes, arch);
}

ExperimentConfig config_from_json_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config: top level must be an object");

  ExperimentConfig cfg;
  cfg.population = parse_population(require_object(j, "config", "population"));
  const json jfl = require_object(j, "config", "fl");
  cfg.fl = parse_fl(jfl);
  cfg.arch = parse_arch(require_object(j, "config", "arch"));
  cfg.cost = parse_cost(require_object(j, "config", "cost"));
  cfg.output_dir = get_field<std::string>(j, "config", "output_dir", "out");
  cfg.seeds = get_field<std::vector<std::uint64_t>>(j, "config", "seeds", {1, 2, 3, 4, 5});
  if (jfl.contains("moon_learning_rate")) {
    cfg.moon_learning_rate = get_field<double>(jfl, "fl", "moon_learning_rate", 0.001);
  }
  if (jfl.contains("moon_batch_size")) {
    cfg.moon_batch_size = get_field<std::size_t>(jfl, "fl", "moon_batch_size", 64);
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return config_from_json_string(buf.str());
}

std::string config_to_json_string(const ExperimentConfig& cfg) {
  json j;
  json& p = j["population"];
  p["num_clients"] = cfg.population.num_clients;
  p["num_classes"] = cfg.population.num_classes;
  p["window_len"] = cfg.population.window_len;
  p["samples_per_client"] = {cfg.population.samples_per_client_min, cfg.population.samples_per_client_max};
  p["test_samples_per_client"] = cfg.population.test_samples_per_client;
  p["incomplete_ratio"] = cfg.population.incomplete_ratio;
  if (cfg.population.label_skew) {
    p["label_skew"] = *cfg.population.label_skew;
  } else {
    p["label_skew"] = nullptr;
  }
  p["upload_mbps_median"] = cfg.population.upload_mbps_median;
  p["download_mbps_median"] = cfg.population.download_mbps_median;
  p["seed"] = cfg.population.seed;
  p["modalities"] = json::array();
  for (const auto& m : cfg.population.modalities) {
    p["modalities"].push_back({{"id", m.modality_id},
                               {"channels", m.channels},
                               {"informativeness", m.informativeness},
                               {"noise_std", m.noise_std}});
  }

  json& f = j["fl"];
  f["rounds"] = cfg.fl.rounds;
  f["local_epochs"] = cfg.fl.local_epochs;
  f["selection_fraction"] = cfg.fl.selection_fraction;
  f["strategy"] = strategy_name(cfg.fl.strategy);
  f["gamma"] = cfg.fl.gamma;
  f["tau_sc"] = cfg.fl.tau_sc;
  f["tau_kd"] = cfg.fl.tau_kd;
  f["mu_prox"] = cfg.fl.mu_prox;
  f["mu_moon"] = cfg.fl.mu_moon;
  f["tau_moon"] = cfg.fl.tau_moon;
  f["learning_rate"] = cfg.fl.optimizer.learning_rate;
  f["weight_decay"] = cfg.fl.optimizer.weight_decay;
  f["batch_size"] = cfg.fl.optimizer.batch_size;
  f["entropy_floor"] = cfg.fl.entropy_floor;
  f["mirl"] = cfg.fl.mirl;
  switch (cfg.fl.weighting) {
    case AggWeighting::Entropy: f["weighting"] = "entropy"; break;
    case AggWeighting::SampleSize: f["weighting"] = "samples"; break;
    case AggWeighting::EntropySamples: f["weighting"] = "entropy_samples"; break;
  }
  switch (cfg.fl.retain_resample) {
    case RetainResample::PerRound: f["retain_resample"] = "per_round"; break;
    case RetainResample::PerBatch: f["retain_resample"] = "per_batch"; break;
    case RetainResample::PerSample: f["retain_resample"] = "per_sample"; break;
  }
  f["ce_on_expanded"] = cfg.fl.ce_on_expanded;
  f["kd_form"] = cfg.fl.kd_form == KdForm::Canonical ? "canonical" : "literal";
  f["noise_mu"] = cfg.fl.noise_mu;
  f["noise_sigma"] = cfg.fl.noise_sigma;
  if (cfg.moon_learning_rate) f["moon_learning_rate"] = *cfg.moon_learning_rate;
  if (cfg.moon_batch_size) f["moon_batch_size"] = *cfg.moon_batch_size;

  json& a = j["arch"];
  a["conv_channels"] = cfg.arch.conv_channels;
  a["kernel"] = cfg.arch.kernel;
  a["pool"] = cfg.arch.pool;
  a["d_enc"] = cfg.arch.d_enc;
  a["d_proj"] = cfg.arch.d_proj;

  json& c = j["cost"];
  c["window_len"] = cfg.cost.window_len;
  c["per_modality_channels"] = cfg.cost.per_modality_channels;
  c["modality_axis"] = cfg.cost.modality_axis;
  c["p_inc_axis"] = cfg.cost.p_inc_axis;
  c["conv_channels"] = cfg.cost.encoder.conv_channels;
  c["kernel"] = cfg.cost.encoder.kernel;
  c["pool"] = cfg.cost.encoder.pool;
  c["d_enc"] = cfg.cost.encoder.d_enc;
  c["d_att"] = cfg.cost.d_att;
  c["d_proj"] = cfg.cost.d_proj;
  c["num_classes"] = cfg.cost.num_classes;
  c["bytes_per_param"] = cfg.cost.bytes_per_param;
  c["harmony_unimodal_fraction"] = cfg.cost.harmony_unimodal_fraction;
  c["num_clients"] = cfg.cost.num_clients;
  c["selection_fraction"] = cfg.cost.selection_fraction;
  c["rounds"] = cfg.cost.rounds;
  c["seed"] = cfg.cost.seed;

  j["output_dir"] = cfg.output_dir;
  j["seeds"] = cfg.seeds;
  return j.dump(2);
}

std::string config_hash(const ExperimentConfig& cfg) {
  const std::string text = config_to_json_string(cfg);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

FLConfig effective_fl_config(const ExperimentConfig& cfg, Strategy strategy, std::uint64_t seed) {
  FLConfig f = cfg.fl;
  f.strategy = strategy;
  f.seed = seed;
  if (strategy == Strategy::MOON) {
    if (cfg.moon_learning_rate) f.optimizer.learning_rate = *cfg.moon_learning_rate;
    if (cfg.moon_batch_size) f.optimizer.batch_size = *cfg.moon_batch_size;
  }
  return f;
}

PopulationConfig effective_population_config(const ExperimentConfig& cfg, std::uint64_t run_seed) {
  PopulationConfig p = cfg.population;
  p.seed = mix_seed(cfg.population.seed, run_seed);
  return p;
}

}  // namespace flsim

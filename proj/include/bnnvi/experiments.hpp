#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bnnvi/data.hpp"
#include "bnnvi/elbo.hpp"
#include "bnnvi/metrics.hpp"
#include "bnnvi/trainer.hpp"
#include "json.hpp"

namespace bnnvi {

inline constexpr const char* kVersion = "bnnvi-0.1.0";

// Experiment kinds: train, evaluate, tau-sweep, collapse, balance-ratio,
// theorem3, prop5, ood. Configs are JSON; every runner deep-merges its
// defaults under the user config, so a manifest echo is fully self-describing.
nlohmann::json default_config(const std::string& experiment);

// Reads a config file; a manifest ({"version":..., "config": {...}}) is
// unwrapped so any run can be reproduced from its manifest.
nlohmann::json load_config_file(const std::string& path);

// "a.b.c=value" dotted-path override; the value is parsed as JSON when
// possible and kept as a string otherwise.
void apply_override(nlohmann::json& config, const std::string& assignment);

// defaults <- file <- overrides <- out/seed flags, validated.
nlohmann::json resolve_config(const std::string& experiment,
                              const std::optional<std::string>& config_path,
                              const std::vector<std::string>& overrides,
                              const std::optional<std::string>& out_dir,
                              const std::optional<std::int64_t>& seed);

// Typed view over a resolved config. Parsing throws std::invalid_argument on
// bad values or missing referenced files.
struct ExperimentConfig {
  std::string experiment;
  std::uint64_t seed = 0;
  std::string out_dir;
  nlohmann::json raw;

  static ExperimentConfig parse(const nlohmann::json& config);

  Dataset dataset(const char* key = "dataset") const;
  Activation activation() const;
  Loss loss() const;
  int n_neurons() const;
  bool append_bias() const;
  FactorizedGaussianPrior prior() const;
  TrainerConfig trainer_config() const;
  TemperatureSchedule schedule() const;
  int metric_bins() const;
  int prediction_samples() const;
};

Dataset build_dataset(const nlohmann::json& spec, std::uint64_t seed);

struct ExperimentResult {
  nlohmann::json summary;
  std::vector<std::string> outputs;  // files written, relative to out_dir
};

ExperimentResult run_train(const ExperimentConfig& config);
ExperimentResult run_evaluate(const ExperimentConfig& config);
ExperimentResult run_tau_sweep(const ExperimentConfig& config);
ExperimentResult run_collapse(const ExperimentConfig& config);
ExperimentResult run_balance_ratio(const ExperimentConfig& config);
ExperimentResult run_theorem3(const ExperimentConfig& config);
ExperimentResult run_prop5(const ExperimentConfig& config);
ExperimentResult run_ood(const ExperimentConfig& config);

// Dispatch on config["experiment"]; writes outputs plus manifest.json and
// summary.json under config["out"].
ExperimentResult run_experiment(const nlohmann::json& config);

// MC prediction records for a dataset (labels kept when present).
std::vector<PredictionRecord> predict_records(const VariationalPosterior& q, const Dataset& data,
                                              int prediction_samples, Activation act,
                                              const Rng& rng);

}  // namespace bnnvi

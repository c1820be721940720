#include "bnnvi/experiments.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"

using namespace bnnvi;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json small_config(const std::string& experiment, const std::string& out) {
  json cfg = default_config(experiment);
  cfg["out"] = out;
  return cfg;
}

}  // namespace

TEST_CASE("config defaults, overrides, and precedence") {
  json cfg = default_config("tau-sweep");
  CHECK(cfg["model"]["n_neurons"] == 256);
  CHECK(cfg["schedule"]["mode"] == "scaled");

  apply_override(cfg, "model.n_neurons=32");
  CHECK(cfg["model"]["n_neurons"] == 32);
  apply_override(cfg, "trainer.step_size=0.01");
  CHECK(cfg["trainer"]["step_size"] == 0.01);
  apply_override(cfg, "dataset.kind=blobs");
  CHECK(cfg["dataset"]["kind"] == "blobs");
  apply_override(cfg, "tau_grid=[0.1,1.0]");
  CHECK(cfg["tau_grid"].size() == 2);
  CHECK_THROWS_AS(apply_override(cfg, "no_equals_sign"), std::invalid_argument);

  // resolve_config: flags beat file values.
  const fs::path cfg_file = fs::temp_directory_path() / "bnnvi_cfg.json";
  std::ofstream(cfg_file) << R"({"seed": 7, "model": {"n_neurons": 8}})";
  const json resolved = resolve_config("train", cfg_file.string(), {"model.n_neurons=16"},
                                       std::string("outdir"), 123);
  CHECK(resolved["seed"] == 123);
  CHECK(resolved["model"]["n_neurons"] == 16);
  CHECK(resolved["out"] == "outdir");
  CHECK(resolved["experiment"] == "train");
  fs::remove(cfg_file);
}

TEST_CASE("config validation catches errors early") {
  json cfg = default_config("train");
  cfg["out"] = "somewhere";
  cfg["model"]["activation"] = "tanh";
  CHECK_THROWS_AS(ExperimentConfig::parse(cfg), std::invalid_argument);

  cfg = default_config("train");
  cfg["out"] = "somewhere";
  cfg["trainer"]["step_size"] = -1.0;
  CHECK_THROWS_AS(ExperimentConfig::parse(cfg), std::invalid_argument);

  cfg = default_config("evaluate");
  cfg["out"] = "somewhere";
  cfg["posterior"] = "/nonexistent/posterior.json";
  CHECK_THROWS_AS(ExperimentConfig::parse(cfg), std::invalid_argument);

  // Evaluate with no posterior at all is a config-level error at run time.
  cfg["posterior"] = "";
  CHECK_THROWS_AS(run_evaluate(ExperimentConfig::parse(cfg)), std::invalid_argument);
}

TEST_CASE("train then evaluate round trip is reproducible") {
  TempDir dir_a("bnnvi_train_a");
  json cfg = small_config("train", dir_a.str());
  cfg["model"]["n_neurons"] = 8;
  cfg["trainer"]["iterations"] = 60;
  cfg["trainer"]["trace_every"] = 20;
  cfg["dataset"]["per_class"] = 32;
  const ExperimentResult train_result = run_experiment(cfg);
  CHECK(fs::exists(dir_a.path / "posterior.json"));
  CHECK(fs::exists(dir_a.path / "trace.csv"));
  CHECK(fs::exists(dir_a.path / "manifest.json"));

  // Trace CSV has the documented header.
  const std::string trace = slurp(dir_a.path / "trace.csv");
  CHECK(trace.rfind("iteration,elbo,data_term,kl_term,eta,grad_norm_mu,grad_norm_rho", 0) == 0);

  TempDir dir_b("bnnvi_eval_b");
  json eval_cfg = small_config("evaluate", dir_b.str());
  eval_cfg["dataset"] = cfg["dataset"];
  eval_cfg["posterior"] = (dir_a.path / "posterior.json").string();
  const ExperimentResult eval1 = run_experiment(eval_cfg);
  const std::string metrics1 = slurp(dir_b.path / "metrics.json");

  TempDir dir_c("bnnvi_eval_c");
  eval_cfg["out"] = dir_c.str();
  const ExperimentResult eval2 = run_experiment(eval_cfg);
  CHECK(metrics1 == slurp(dir_c.path / "metrics.json"));
  CHECK(eval1.summary["accuracy"] == eval2.summary["accuracy"]);
  (void)train_result;
}

TEST_CASE("manifest rerun reproduces outputs bit-identically") {
  TempDir dir_a("bnnvi_manifest_a");
  json cfg = small_config("balance-ratio", dir_a.str());
  cfg["n_grid"] = {16, 64};
  cfg["taus"] = {1.0};
  cfg["dataset"]["per_class"] = 32;
  run_experiment(cfg);
  const std::string csv_a = slurp(dir_a.path / "balance_ratio.csv");
  CHECK(csv_a.rfind("N,eta_mode,data_term,kl_term,ratio", 0) == 0);

  // Reload the manifest exactly as the CLI would and rerun elsewhere.
  const json reloaded = load_config_file((dir_a.path / "manifest.json").string());
  TempDir dir_b("bnnvi_manifest_b");
  json rerun = reloaded;
  rerun["out"] = dir_b.str();
  run_experiment(rerun);
  CHECK(slurp(dir_b.path / "balance_ratio.csv") == csv_a);
  CHECK(slurp(dir_b.path / "summary.json") == slurp(dir_a.path / "summary.json"));
}

TEST_CASE("theorem3 runner emits the gap table with a slope") {
  TempDir dir("bnnvi_theorem3");
  json cfg = small_config("theorem3", dir.str());
  cfg["n_grid"] = {8, 16, 32, 64};
  const ExperimentResult result = run_experiment(cfg);
  const double slope = result.summary.at("slope").get<double>();
  CHECK(slope < -0.8);
  CHECK(slope > -1.2);
  const std::string csv = slurp(dir.path / "theorem3.csv");
  CHECK(csv.rfind("N,p,tau,gap,gap_times_N_over_p", 0) == 0);
  // Rows: header + 4 grid points.
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
}

TEST_CASE("theorem3 mc mode accepts cross-entropy on classification data") {
  TempDir dir("bnnvi_theorem3_mc");
  json cfg = small_config("theorem3", dir.str());
  cfg["mode"] = "mc";
  cfg["mc_samples"] = 256;
  cfg["n_grid"] = {4, 16, 64};
  cfg["dataset"] =
      json{{"kind", "blobs"}, {"per_class", 16}, {"classes", 2}, {"d_x", 3}, {"separation", 2.0}};
  cfg["model"]["loss"] = "cross_entropy";
  cfg["atoms"] = {{"mu_std", 0.3}, {"sigma_lo", 0.4}, {"sigma_hi", 0.6}};
  const ExperimentResult result = run_experiment(cfg);
  // Statistical mode: the gap estimate shrinks with N; no exact-rate claim.
  const std::string csv = slurp(dir.path / "theorem3.csv");
  CHECK(csv.rfind("N,p,tau,gap,gap_times_N_over_p", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
  const json rows = result.summary;
  CHECK(rows.contains("slope"));

  // Exact mode on classification data is rejected.
  cfg["mode"] = "exact";
  CHECK_THROWS_AS(run_experiment(cfg), std::invalid_argument);
}

TEST_CASE("prop5 runner fits a concentration slope") {
  TempDir dir("bnnvi_prop5");
  json cfg = small_config("prop5", dir.str());
  cfg["p_grid"] = {32, 128, 512};
  cfg["resamples"] = 8;
  cfg["reference_draws"] = 65536;
  const ExperimentResult result = run_experiment(cfg);
  const double slope = result.summary.at("slope").get<double>();
  CHECK(slope < -0.2);
  CHECK(slope > -0.8);
  CHECK(slurp(dir.path / "prop5.csv").rfind("p,mean_abs_deviation,fitted_slope", 0) == 0);
}

TEST_CASE("ood runner separates predictive entropies for a data-dominated model") {
  TempDir dir("bnnvi_ood");
  json cfg = small_config("ood", dir.str());
  cfg["model"]["n_neurons"] = 32;
  cfg["dataset"]["per_class"] = 128;
  cfg["ood_dataset"]["per_class"] = 64;
  cfg["trainer"]["iterations"] = 800;
  cfg["schedule"] = {{"mode", "scaled"}, {"value", 1e-6}};
  const ExperimentResult result = run_experiment(cfg);
  const double in_entropy = result.summary.at("mean_entropy_in").get<double>();
  const double out_entropy = result.summary.at("mean_entropy_out").get<double>();
  CHECK(out_entropy > in_entropy);

  // Histogram counts sum to the record counts.
  for (const char* name : {"entropy_in_distribution.csv", "entropy_out_of_distribution.csv"}) {
    const std::string csv = slurp(dir.path / name);
    CHECK(csv.rfind("bin_lo,bin_hi,count", 0) == 0);
    std::size_t total = 0;
    std::istringstream lines(csv);
    std::string line;
    std::getline(lines, line);  // header
    while (std::getline(lines, line)) {
      total += std::stoul(line.substr(line.rfind(',') + 1));
    }
    const std::size_t expected = std::string(name).find("in_") != std::string::npos
                                     ? result.summary.at("n_in").get<std::size_t>()
                                     : result.summary.at("n_out").get<std::size_t>();
    CHECK(total == expected);
  }
}

TEST_CASE("every experiment defaults to 50 prediction samples") {
  for (const char* experiment : {"train", "evaluate", "tau-sweep", "collapse", "ood"}) {
    CHECK(default_config(experiment)["metrics"]["prediction_samples"] == 50);
  }
}

TEST_CASE("strongly tempered ood model is uncertain everywhere") {
  TempDir dir("bnnvi_ood_pinned");
  json cfg = small_config("ood", dir.str());
  cfg["model"]["n_neurons"] = 32;
  cfg["dataset"]["per_class"] = 128;
  cfg["ood_dataset"]["per_class"] = 64;
  cfg["trainer"]["iterations"] = 800;
  cfg["trainer"]["step_size"] = 2e-4;  // eta/L is large under tau = 100
  cfg["schedule"] = {{"mode", "scaled"}, {"value", 100.0}};
  const ExperimentResult result = run_experiment(cfg);
  // Pinned to the prior, the model concentrates both entropy histograms near
  // the log(2) ceiling.
  const double ln2 = std::log(2.0);
  CHECK(result.summary.at("mean_entropy_in").get<double>() > 0.85 * ln2);
  CHECK(result.summary.at("mean_entropy_out").get<double>() > 0.85 * ln2);
}

TEST_CASE("ood rejects mismatched input dimensions") {
  TempDir dir("bnnvi_ood_bad");
  json cfg = small_config("ood", dir.str());
  cfg["ood_dataset"]["d_x"] = 5;
  CHECK_THROWS_AS(run_experiment(cfg), std::invalid_argument);
}

TEST_CASE("dataset builder handles every kind") {
  const Dataset blobs = build_dataset(json{{"kind", "blobs"},
                                           {"per_class", 10},
                                           {"classes", 3},
                                           {"d_x", 2},
                                           {"separation", 2.0}},
                                      9);
  CHECK(blobs.size() == 30);
  CHECK(blobs.n_classes == 3);

  const Dataset teacher = build_dataset(json{{"kind", "teacher"},
                                             {"p", 12},
                                             {"n_teacher", 4},
                                             {"d_x", 3},
                                             {"d_y", 2},
                                             {"weight_scale", 1.0},
                                             {"input_scale", 1.0}},
                                        9);
  CHECK(teacher.size() == 12);
  CHECK_FALSE(teacher.classification());

  CHECK_THROWS_AS(build_dataset(json{{"kind", "nope"}}, 1), std::invalid_argument);
}

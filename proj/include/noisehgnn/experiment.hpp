#pragma once

// Experiment plumbing behind the command-line tool: configuration documents, dataset
// ingestion, paired noise sweeps and ablations, homogeneity reports, and report output.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "noisehgnn/hetgraph.hpp"
#include "noisehgnn/noise.hpp"
#include "noisehgnn/training.hpp"

namespace noisehgnn::experiment {

using nlohmann::json;

struct DataSource {
    std::string kind = "synthetic";  // synthetic | hgb | manifest
    std::string path;                // directory (hgb) or file (manifest)
    hetgraph::SyntheticConfig synthetic;
    double val_fraction = 0.2;  // hgb only
    std::uint64_t split_seed = 0;
    int feature_regime = 0;  // 0 given features, 1 target features only, 2 one-hot for non-target types
};

/// "mlp" or "gcn" for a model config; gcn maps to eta 2 under feature regime 2, else 1.
std::string synthesizer_name(int eta);
int synthesizer_eta(const std::string& name, int feature_regime);

struct ExperimentConfig {
    std::string name = "experiment";
    DataSource data;
    double noise_ratio = 0.3;
    std::optional<std::uint64_t> noise_seed;  // pins the corruption for every run seed
    training::ModelConfig model;
    // target -> first edge type -> back, which exists on every generated graph
    training::TrainConfig train = [] {
        training::TrainConfig t;
        t.metapaths = {"0,~0"};
        return t;
    }();
    std::vector<std::uint64_t> seeds = {0, 1, 2};
    std::vector<double> sweep_ratios = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5};
    std::vector<std::string> sweep_ablations = {"full", "no_synthesizer"};
    bool homogeneity_train = true;  // train before measuring the synthesized target graph
    std::string out_dir = "runs";

    /// Throws ConfigError with the dotted path of the first bad field.
    void validate() const;
};

json to_json(const ExperimentConfig& cfg);
/// Missing keys keep their defaults; unknown keys are a ConfigError.
ExperimentConfig config_from_json(const json& doc);
ExperimentConfig load_config(const std::filesystem::path& file);

/// Loads or generates the clean graph and applies the configured feature regime.
hetgraph::HeteroGraph load_dataset(const ExperimentConfig& cfg);

/// Seeds of one run; the noise seed is replaced by cfg.noise_seed when set.
training::Seeds run_seeds(const ExperimentConfig& cfg, std::uint64_t run_seed);

struct RunRecord {
    std::uint64_t run_seed = 0;
    training::Seeds seeds;
    training::Ablation ablation = training::Ablation::full;
    double noise_ratio = 0.0;
    std::size_t rewired = 0;
    std::size_t shortfall = 0;
    training::TrainResult result;
    training::Metrics test;
    double seconds = 0.0;
};

/// Trains and tests one arm on an already corrupted graph.
RunRecord run_arm(const noise::NoiseResult& corrupted, const ExperimentConfig& cfg, training::Ablation ablation,
                  std::uint64_t run_seed, double ratio);

struct Summary {
    std::size_t n = 0;
    double mean = 0.0;
    std::optional<double> stddev;  // sample std, absent below two values
};
Summary summarize(const std::vector<double>& values);

/// Reports. Each returns the JSON document it wrote to cfg.out_dir and prints a text table to `log`.
json cmd_train(const ExperimentConfig& cfg, std::ostream& log);
json cmd_sweep(const ExperimentConfig& cfg, std::ostream& log);
json cmd_ablate(const ExperimentConfig& cfg, std::ostream& log);
json cmd_homogeneity(const ExperimentConfig& cfg, std::ostream& log);

/// Writes the configured dataset to `out` as an HGB directory, or as a manifest when `out`
/// ends in .json.
void cmd_gen_synthetic(const ExperimentConfig& cfg, const std::filesystem::path& out, std::ostream& log);
/// Loads, validates and summarizes the dataset, and checks every configured metapath.
json cmd_validate_data(const ExperimentConfig& cfg, std::ostream& log);

}  // namespace noisehgnn::experiment

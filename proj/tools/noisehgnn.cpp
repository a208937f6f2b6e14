// Command-line experiment runner.

#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "noisehgnn/experiment.hpp"

namespace ex = noisehgnn::experiment;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitDivergence = 3;

struct Overrides {
    std::string config;
    std::string out;
    std::string seeds;
    std::optional<double> noise_ratio;
    std::optional<std::uint64_t> noise_seed;
    std::string ablation;
    std::vector<double> ratios;
};

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
    std::vector<std::uint64_t> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            if (!item.empty() && item.front() == '-') throw std::invalid_argument("negative");
            out.push_back(std::stoull(item, &used));
            if (used != item.size()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
            throw noisehgnn::ConfigError("--seeds", "'" + item + "' is not a non-negative integer");
        }
    }
    if (out.empty()) throw noisehgnn::ConfigError("--seeds", "empty seed list");
    return out;
}

ex::ExperimentConfig resolve(const Overrides& o) {
    ex::ExperimentConfig cfg = o.config.empty() ? ex::ExperimentConfig{} : ex::load_config(o.config);
    if (!o.out.empty()) cfg.out_dir = o.out;
    if (!o.seeds.empty()) cfg.seeds = parse_seeds(o.seeds);
    if (o.noise_ratio) cfg.noise_ratio = *o.noise_ratio;
    if (o.noise_seed) cfg.noise_seed = *o.noise_seed;
    if (!o.ablation.empty()) cfg.train.ablation = noisehgnn::training::parse_ablation(o.ablation);
    if (!o.ratios.empty()) cfg.sweep_ratios = o.ratios;
    cfg.validate();
    return cfg;
}

void add_common(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--config", o.config, "Experiment config (JSON)");
    cmd->add_option("--out", o.out, "Output directory");
    cmd->add_option("--seeds", o.seeds, "Comma-separated run seeds, e.g. 0,1,2");
    cmd->add_option("--noise-ratio", o.noise_ratio, "Share of edges to rewire");
    cmd->add_option("--noise-seed", o.noise_seed, "Pin the corruption seed for every run");
    cmd->add_option("--ablation", o.ablation, "full | no_synthesizer | no_meta_target");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Heterogeneous graph learning under structural noise"};
    app.require_subcommand(1);
    Overrides o;
    std::string gen_out;

    auto* train = app.add_subcommand("train", "Corrupt, synthesize, train and test over all seeds");
    auto* sweep = app.add_subcommand("sweep", "Train every (noise ratio, seed, ablation) cell");
    auto* ablate = app.add_subcommand("ablate", "Run full, no_synthesizer and no_meta_target on shared seeds");
    auto* homog = app.add_subcommand("homogeneity", "Homogeneity of metapath graphs and the synthesized target graph");
    auto* gen = app.add_subcommand("gen-synthetic", "Write the configured synthetic graph");
    auto* check = app.add_subcommand("validate-data", "Load and validate the configured dataset");
    for (auto* cmd : {train, sweep, ablate, homog, gen, check}) add_common(cmd, o);
    sweep->add_option("--ratios", o.ratios, "Noise ratios (overrides sweep.ratios)")->delimiter(',');
    gen->add_option("output", gen_out, "HGB directory, or a .json manifest path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitConfig;
    }

    try {
        const ex::ExperimentConfig cfg = resolve(o);
        if (train->parsed()) ex::cmd_train(cfg, std::cout);
        if (sweep->parsed()) ex::cmd_sweep(cfg, std::cout);
        if (ablate->parsed()) ex::cmd_ablate(cfg, std::cout);
        if (homog->parsed()) ex::cmd_homogeneity(cfg, std::cout);
        if (gen->parsed()) ex::cmd_gen_synthetic(cfg, gen_out, std::cout);
        if (check->parsed()) ex::cmd_validate_data(cfg, std::cout);
    } catch (const noisehgnn::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const noisehgnn::DivergenceError& e) {
        std::cerr << "training diverged: " << e.what() << '\n';
        return kExitDivergence;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

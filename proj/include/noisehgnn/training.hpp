#pragma once

// Classification heads, the three loss terms, the joint training loop with early stopping,
// and F1 evaluation.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "noisehgnn/encoder.hpp"
#include "noisehgnn/hetgraph.hpp"
#include "noisehgnn/numkernel.hpp"
#include "noisehgnn/synthesizer.hpp"

namespace noisehgnn::training {

using hetgraph::HeteroGraph;
using hetgraph::LabelMode;
using numkernel::Matrix;
using numkernel::Parameter;
using numkernel::Tape;
using numkernel::Tensor;

inline constexpr double kProbClamp = 1e-12;

enum class Ablation { full, no_synthesizer, no_meta_target };
enum class CosineReduction { row, frobenius };

std::string to_string(Ablation a);
Ablation parse_ablation(const std::string& text);
std::string to_string(CosineReduction r);
CosineReduction parse_reduction(const std::string& text);

/// Named seeds: noise corrupts the graph, mask drives edge dropping and batched kNN, init
/// draws the initial parameters.
struct Seeds {
    std::uint64_t noise = 0;
    std::uint64_t mask = 0;
    std::uint64_t init = 0;

    /// Three independent streams derived from one run seed.
    static Seeds from_run(std::uint64_t run_seed);
};

struct ModelConfig {
    std::size_t dim = 64;  // d', shared projection width
    std::size_t k = 15;
    int eta = 0;
    std::size_t knn_batch = 0;  // 0 = exact kNN
    bool symmetric_knn = false;
    encoder::EncoderConfig encoder;
    bool separate_heads = false;
};

struct TrainConfig {
    double lr = 5e-4;
    double weight_decay = 0.0;
    std::size_t epochs = 300;
    std::size_t patience = 30;
    double gamma = 1.0;
    double p_a = 0.0;
    double p_atheta = 0.0;
    Ablation ablation = Ablation::full;
    CosineReduction reduction = CosineReduction::row;
    std::vector<std::string> metapaths;  // MetapathSpec::parse syntax

    /// Throws ConfigError naming the offending field.
    void validate() const;
};

struct ClassifierParams {
    Parameter weight;  // d_out x C
    Parameter bias;    // 1 x C
};

struct Model {
    ModelConfig config;
    synth::SynthesizerParams synthesizer;
    encoder::EncoderParams encoder;
    ClassifierParams head;
    ClassifierParams head_theta;  // used only with separate_heads

    static Model init(const HeteroGraph& g, const ModelConfig& cfg, std::uint64_t init_seed);
    std::vector<Parameter*> parameters();
    /// Parameters that receive gradient under `ablation`.
    std::vector<Parameter*> trainable(Ablation ablation);
};

struct Predictions {
    Tensor y;        // noised branch
    Tensor y_theta;  // synthesized branch
};

/// Probabilities from target-row embeddings: softmax rows (single) or sigmoid entries (multi).
Tensor predict(const Tensor& h_target, ClassifierParams& head, LabelMode mode);
Predictions predict_heads(const Tensor& h_target, const Tensor& h_theta_target, ClassifierParams& head,
                          ClassifierParams& head_theta, LabelMode mode);

/// Mean cross-entropy over `split` (indices into the rows of `pred`). Multi-label uses
/// binary cross-entropy averaged over nodes and classes. Probabilities are clamped to
/// [kProbClamp, 1 - kProbClamp].
Tensor classification_loss(const Tensor& pred, const std::vector<std::vector<int>>& labels, std::span<const int> split,
                           LabelMode mode);

/// Scaled cosine error between two n x n matrices. Row reduction averages (1 - cos)^gamma over
/// rows; a row that is zero in both counts as 0, zero in exactly one as 1. Frobenius reduction
/// takes one cosine over the flattened matrices.
Tensor contrastive_loss(const Tensor& a_phi, const Tensor& a_hat_theta, double gamma,
                        CosineReduction reduction = CosineReduction::row);

/// L_o + L_s + L_g under `ablation`. Throws DivergenceError naming the first non-finite term.
Tensor total_loss(const Tensor& l_o, const Tensor& l_s, const Tensor& l_g, Ablation ablation, int epoch = -1);

struct ClassScore {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t support = 0;
    bool absent = false;  // neither predicted nor present; f1 is 0
};

struct Metrics {
    double macro_f1 = 0.0;
    double micro_f1 = 0.0;
    std::vector<ClassScore> per_class;
};

/// Hard decisions: argmax (single) or threshold 0.5 (multi).
std::vector<std::vector<int>> decide(const Matrix& probs, LabelMode mode);

/// F1 scores of `probs` rows in `split` against `labels`. Throws ContractError on an empty split.
Metrics evaluate(const Matrix& probs, const std::vector<std::vector<int>>& labels, std::span<const int> split,
                 std::size_t num_classes, LabelMode mode);

struct EpochRecord {
    std::size_t epoch = 0;
    double l_o = 0.0;
    double l_s = 0.0;
    double l_g = 0.0;
    double total = 0.0;
    double val_macro_f1 = 0.0;
    double val_micro_f1 = 0.0;
};

struct TrainResult {
    std::vector<EpochRecord> history;
    std::size_t best_epoch = 0;
    double best_val_macro_f1 = 0.0;
    bool stopped_early = false;
};

/// Everything that stays fixed across epochs for one corrupted graph.
struct TrainingContext {
    const HeteroGraph* graph = nullptr;
    encoder::EdgeList adjacency;   // symmetric structure of the noised graph
    synth::Propagation propagation;  // GCN operator, only for eta 1 and 2
    std::vector<Matrix> a_phi;     // one metapath graph per configured metapath
    std::vector<int> target_ids;

    static TrainingContext build(const HeteroGraph& g, const ModelConfig& model, const TrainConfig& cfg);
};

struct StepLosses {
    double l_o = 0.0;
    double l_s = 0.0;
    double l_g = 0.0;
    double total = 0.0;
};

/// Records one full training forward pass (synthesis, masking, both branches, heads, losses)
/// and returns the total loss tensor. `losses` receives the component values. `frozen`
/// replays a previous top-k pattern; `selection` receives the raw pattern used.
Tensor training_objective(Tape& tape, const TrainingContext& ctx, Model& model, const TrainConfig& cfg,
                          std::uint64_t mask_seed, std::size_t epoch, StepLosses* losses = nullptr,
                          const synth::KnnSelection* frozen = nullptr, synth::KnnSelection* selection = nullptr);

/// Noised-branch probabilities for all target nodes on unmasked graphs.
Matrix infer(const TrainingContext& ctx, Model& model);

/// Joint training with early stopping on validation Macro-F1; the best epoch's parameters
/// are restored before returning. Throws DivergenceError with the epoch on a non-finite loss.
TrainResult train(const TrainingContext& ctx, Model& model, const TrainConfig& cfg, std::uint64_t mask_seed);

/// Test-split metrics of the noised branch.
Metrics evaluate_model(const TrainingContext& ctx, Model& model, std::span<const int> split);

/// Target block of the synthesized graph A_theta for `model` on unmasked inputs (n_target x n_target).
Matrix target_graph(const TrainingContext& ctx, Model& model);

/// Flat named-parameter table: {"format", "version", "parameters": [{name, rows, cols, values}]}.
void save_checkpoint(Model& model, const std::filesystem::path& file);
/// Loads values by name into an initialized model; shapes must match.
void load_checkpoint(Model& model, const std::filesystem::path& file);

}  // namespace noisehgnn::training

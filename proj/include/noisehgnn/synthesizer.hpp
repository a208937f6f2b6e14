#pragma once

// Similarity graph synthesis: type-specific projection to a shared space, an MLP or GCN
// graph projection, cosine similarity, and per-row top-k sparsification.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "noisehgnn/hetgraph.hpp"
#include "noisehgnn/numkernel.hpp"
#include "noisehgnn/random.hpp"

namespace noisehgnn::synth {

using hetgraph::HeteroGraph;
using numkernel::Matrix;
using numkernel::Parameter;
using numkernel::Tape;
using numkernel::Tensor;

inline constexpr double kNormEps = 1e-12;

struct SynthesizerParams {
    std::vector<Parameter> type_weight;  // per node type, d0 x d'
    std::vector<Parameter> type_bias;    // per node type, 1 x d'
    Parameter graph_weight;              // d' x d'
    Parameter graph_bias;                // 1 x d', MLP branch only
    int eta = 0;                         // 0: MLP branch, 1 or 2: GCN branch
    std::size_t k = 15;
    std::size_t dim = 64;

    /// Glorot-uniform weights, zero biases.
    static SynthesizerParams init(const HeteroGraph& g, std::size_t dim, std::size_t k, int eta, Rng& rng);
    std::vector<Parameter*> parameters();
};

/// Row-sparse top-k pattern in CSR order: row i owns entries [offsets[i], offsets[i+1]).
struct KnnSelection {
    std::vector<int> rows;
    std::vector<int> cols;
    std::vector<std::size_t> offsets;

    std::size_t size() const noexcept { return rows.size(); }
    std::size_t num_rows() const noexcept { return offsets.empty() ? 0 : offsets.size() - 1; }

    friend bool operator==(const KnnSelection&, const KnnSelection&) = default;
};

struct SynthesizedGraph {
    Matrix z;        // N x d'
    Matrix a_theta;  // N x N, row i holds at most k nonzeros
};

/// Sparse D^-1/2 (A + I) D^-1/2 with entries in row-major order.
struct Propagation {
    std::size_t n = 0;
    std::vector<int> rows;
    std::vector<int> cols;
    std::vector<double> values;

    Matrix dense() const;
};

/// From a square weighted adjacency; zero entries are absent.
Propagation gcn_propagation(const Matrix& adjacency);
/// From unit-weight pairs over n nodes. Duplicates collapse; a self loop is always added.
Propagation gcn_propagation(std::size_t n, std::span<const int> rows, std::span<const int> cols);

/// Z stacking W^phi X^phi + b^phi per type in global id order.
Tensor project_nodes(Tape& tape, const HeteroGraph& g, SynthesizerParams& params);

/// MLP branch (eta 0): sigma(Z W + b). GCN branch (eta 1, 2): sigma(P Z W) with P from gcn_propagation.
/// `propagation` must be given for the GCN branch.
Tensor graph_project(Tape& tape, const Tensor& z, const Propagation* propagation, SynthesizerParams& params);

/// S[i, j] = cos(z_i, z_j) with norms floored at kNormEps.
Tensor cosine_similarity_matrix(const Tensor& z_bar);

/// Per row the k largest entries, diagonal excluded, ties to the lower column index.
KnnSelection topk_select(const Matrix& s, std::size_t k);

/// Exact kNN selection on cosine similarity of the rows of `z_bar`, computed in row blocks
/// so the full N x N similarity is never held. `row_subset` restricts which rows select.
KnnSelection knn_select(const Matrix& z_bar, std::size_t k, const std::vector<int>* row_subset = nullptr);

/// Keeps the selected entries of S (clipped at 0), zeroes the rest. The selection is constant
/// for backward; gradients reach S only through kept entries.
Tensor topk_sparsify(const Tensor& s, std::size_t k);

/// Locality-sensitive variant: nodes are shuffled into batches of `batch_size` and pick
/// their top-k within their own batch. A trailing batch smaller than k + 1 merges into the
/// previous one. Throws DomainError when batch_size < k + 1.
KnnSelection batched_knn_select(const Matrix& z_bar, std::size_t k, std::size_t batch_size, std::uint64_t seed);
/// Dense A_theta from batched_knn_select with clipped cosine values.
Matrix batched_knn(const Matrix& z_bar, std::size_t k, std::size_t batch_size, std::uint64_t seed);

/// Differentiable weights max(cos(z_i, z_j), 0) for the selected pairs (E x 1).
Tensor selection_weights(const Tensor& z_bar, const KnnSelection& sel);

/// Union of a selection with its transpose; weights become (w_ij + w_ji) / 2.
struct SymmetrizedEdges {
    KnnSelection selection;
    Tensor weights;
};
SymmetrizedEdges symmetrize(const KnnSelection& sel, const Tensor& weights, std::size_t n);

struct KnnOptions {
    std::size_t batch_size = 0;  // 0 = exact
    std::uint64_t seed = 0;
    bool symmetric = false;
};

/// Recorded synthesis used inside the training step.
struct SynthesisOnTape {
    Tensor z;
    Tensor z_bar;
    KnnSelection selection;       // pattern of A_theta (after optional symmetrization)
    Tensor weights;               // E x 1 values of A_theta on `selection`
    KnnSelection base_selection;  // raw top-k pattern; pass as `frozen` to replay it
};

/// `frozen` reuses a previous top-k pattern instead of recomputing it.
SynthesisOnTape synthesize_on_tape(Tape& tape, const HeteroGraph& g, SynthesizerParams& params, const Propagation* propagation,
                                   const KnnOptions& knn, const KnnSelection* frozen = nullptr);

/// Plain-value synthesis G_theta = {Z, A_theta}.
SynthesizedGraph synthesize(const HeteroGraph& g, SynthesizerParams& params, const Propagation* propagation,
                            const KnnOptions& knn = {});

/// Scatter a selection with values into a dense n x n matrix.
Matrix to_dense(const KnnSelection& sel, std::span<const double> values, std::size_t n);

}  // namespace noisehgnn::synth

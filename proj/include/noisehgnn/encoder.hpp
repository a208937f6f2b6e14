#pragma once

// Edge-mask augmentation and the similarity-aware multi-head attention encoder. The same
// parameters encode the noised graph and the synthesized graph.

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "noisehgnn/numkernel.hpp"
#include "noisehgnn/random.hpp"
#include "noisehgnn/synthesizer.hpp"

namespace noisehgnn::encoder {

using numkernel::Matrix;
using numkernel::Parameter;
using numkernel::Tape;
using numkernel::Tensor;

struct AugmentConfig {
    double p_a = 0.0;       // drop probability on the noised graph
    double p_atheta = 0.0;  // drop probability on the synthesized graph
    std::uint64_t seed = 0;
};

/// Each nonzero entry (row-major order) is zeroed with probability p; kept entries keep their weight.
Matrix mask_edges(const Matrix& a, double p, std::uint64_t seed);

/// Keep flags for `count` entries drawn exactly as mask_edges draws them.
std::vector<char> keep_flags(std::size_t count, double p, std::uint64_t seed);

/// Neighborhoods of one branch in CSR order by receiving node i: entries
/// [offsets[i], offsets[i+1]) list neighbors j (self loop included) and the weight A_ij.
struct BranchGraph {
    std::vector<int> dst;  // receiving node i per entry
    std::vector<int> src;  // neighbor j per entry
    std::vector<std::size_t> offsets;
    Tensor weights;  // E x 1

    std::size_t num_nodes() const noexcept { return offsets.empty() ? 0 : offsets.size() - 1; }
    std::size_t num_entries() const noexcept { return dst.size(); }
};

/// Nonzeros of a square adjacency in row-major order.
struct EdgeList {
    std::size_t n = 0;
    std::vector<int> rows;
    std::vector<int> cols;
    std::vector<double> values;

    static EdgeList from_dense(const Matrix& a);
};

/// Branch from a (masked) dense adjacency. Self loops get weight 1.
BranchGraph branch_from_dense(Tape& tape, const Matrix& a_bar);

/// Same as branch_from_dense(tape, mask_edges(a, p, seed)) with a = the dense form of `edges`,
/// without touching an n x n matrix.
BranchGraph branch_from_edges(Tape& tape, const EdgeList& edges, double p, std::uint64_t seed);

/// Branch from synthesized top-k entries: zero-valued entries are dropped, the rest are
/// masked with (p, seed), then self loops of weight 1 are added. Weights stay on the tape.
BranchGraph branch_from_selection(Tape& tape, const synth::KnnSelection& sel, const Tensor& weights, double p,
                                  std::uint64_t seed);

struct EncoderConfig {
    std::size_t layers = 2;
    std::size_t heads = 8;
    std::size_t hidden = 64;
    bool residual = true;
    bool attention_residual = true;
    double slope = numkernel::kLeakySlope;
};

struct HeadParams {
    Parameter w;        // d_in x hidden, feature transform inside the scores
    Parameter a_dst;    // hidden x 1, half of a(.) applied to W z_i
    Parameter a_src;    // hidden x 1, half of a(.) applied to W z_j
    Parameter w_alpha;  // d_in x hidden, aggregation transform
};

struct LayerParams {
    std::vector<HeadParams> heads;
    Parameter shortcut;  // d_in x d_out when residual dims differ, else empty
    bool has_shortcut = false;
    std::size_t in_dim = 0;
    std::size_t out_dim = 0;
};

struct EncoderParams {
    EncoderConfig config;
    std::vector<LayerParams> layers;

    static EncoderParams init(std::size_t in_dim, const EncoderConfig& cfg, Rng& rng);
    std::vector<Parameter*> parameters();
    std::size_t output_dim() const { return layers.empty() ? 0 : layers.back().out_dim; }
};

/// e_ij = a([W z_i || W z_j]) = a_dst . W z_i + a_src . W z_j for every entry of `g`.
Tensor attention_coefficients(const Tensor& z, const Tensor& w, const Tensor& a_dst, const Tensor& a_src, const BranchGraph& g);

/// alpha_ij = softmax over j in N(i) of LeakyReLU(e_ij), times A_ij.
Tensor similarity_aware_attention(const Tensor& e, const BranchGraph& g, double slope = numkernel::kLeakySlope);

/// h_i = sigma(sum_j alpha_ij W_alpha z_j).
Tensor aggregate(const Tensor& alpha, const Tensor& z, const Tensor& w_alpha, const BranchGraph& g,
                 double slope = numkernel::kLeakySlope);

/// Full encoder on one branch; returns N x output_dim.
Tensor encode(Tape& tape, const Tensor& z, const BranchGraph& g, EncoderParams& params);

/// Attention values of the first head of layer `layer` (for inspection and tests).
Tensor layer_attention(Tape& tape, const Tensor& z, const BranchGraph& g, EncoderParams& params, std::size_t layer = 0);

/// Both branches through the same parameters: (H on the noised graph, H on the synthesized graph).
std::pair<Tensor, Tensor> forward(Tape& tape, const Tensor& z, const BranchGraph& noised, const BranchGraph& synthesized,
                                  EncoderParams& params);

}  // namespace noisehgnn::encoder

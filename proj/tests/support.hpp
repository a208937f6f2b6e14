#pragma once

// Shared generators and reference computations for the unit tests and the acceptance binary.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "noisehgnn/hetgraph.hpp"
#include "noisehgnn/numkernel.hpp"
#include "noisehgnn/random.hpp"

namespace support {

using noisehgnn::Rng;
using noisehgnn::numkernel::Matrix;
using noisehgnn::numkernel::ScalarFn;
using noisehgnn::numkernel::Tape;
using noisehgnn::numkernel::Tensor;

inline Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double lo = -2.0, double hi = 2.0) {
    Matrix m(r, c);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.uniform(lo, hi);
    return m;
}

/// Random 0/1 matrix with the given density.
inline Matrix random_binary(std::size_t r, std::size_t c, double density, Rng& rng) {
    Matrix m(r, c);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.bernoulli(density) ? 1.0 : 0.0;
    return m;
}

/// sum(t * R) with a fixed pseudo-random R of t's shape, so every output entry gets a
/// distinct weight in the scalar being differentiated.
inline Tensor weighted_sum(const Tensor& t) {
    Rng rng(1000 + 31 * t.rows() + t.cols());
    namespace nk = noisehgnn::numkernel;
    return nk::sum(nk::mul(t, t.tape().constant(random_matrix(t.rows(), t.cols(), rng, 0.5, 1.5))));
}

struct OpCase {
    std::string name;
    std::vector<std::pair<std::size_t, std::size_t>> shapes;
    ScalarFn fn;
    double lo = -2.0;
    double hi = 2.0;
};

/// One case per recorded primitive op.
std::vector<OpCase> primitive_cases();

/// Random heterogeneous graph: `types` node types with the given counts, type 0 as target,
/// random edges across random type pairs, random features and labels, and a 3-way split.
noisehgnn::hetgraph::HeteroGraph random_hetero_graph(Rng& rng, std::vector<std::size_t> counts, std::size_t edge_types,
                                                     std::size_t edges, std::size_t classes, std::size_t feature_dim);

/// Random metapath over `g` with `hops` steps that starts and ends at the target type, or an
/// empty spec when no such walk was found.
noisehgnn::hetgraph::MetapathSpec random_metapath(const noisehgnn::hetgraph::HeteroGraph& g, std::size_t hops, Rng& rng);

/// Path enumeration by depth-first search along the edge list.
Matrix metapath_oracle(const noisehgnn::hetgraph::HeteroGraph& g, const noisehgnn::hetgraph::MetapathSpec& spec);

/// Mean same-label share over nodes with a neighbor, counted from an explicit neighbor list.
double homogeneity_oracle(const Matrix& adj, const std::vector<int>& labels);

/// Sorted column lists of the k largest off-diagonal entries per row, ties to the lower index.
std::vector<std::vector<int>> topk_oracle(const Matrix& s, std::size_t k);

struct F1Oracle {
    double macro = 0.0;
    double micro = 0.0;
};
/// F1 from an explicit per-class confusion table over single-label predictions.
F1Oracle f1_oracle(const std::vector<int>& predicted, const std::vector<int>& truth, std::size_t classes);

/// Small fixture: 12 nodes over target/aux types with two metapath-capable edge types.
noisehgnn::hetgraph::HeteroGraph twelve_node_graph();

}  // namespace support

#pragma once

// Heterogeneous graph model: typed nodes with contiguous per-type id blocks,
// typed edges with fixed (src type, dst type) signatures, per-type features,
// labels on the target type, and train/val/test splits over target nodes.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "noisehgnn/numkernel.hpp"

namespace noisehgnn::hetgraph {

using numkernel::Matrix;

/// N x N (or n_target x n_target) dense adjacency. Entries are >= 0; structural graphs are {0,1}.
using AdjacencyMatrix = Matrix;

struct Edge {
    int src = 0;
    int dst = 0;
    int type = 0;

    friend bool operator==(const Edge&, const Edge&) = default;
};

struct EdgeType {
    std::string name;
    int src_type = 0;
    int dst_type = 0;

    friend bool operator==(const EdgeType&, const EdgeType&) = default;
};

/// Features of one node type. A one-hot block stores nothing and stands for the identity
/// matrix of size count x count.
struct FeatureBlock {
    Matrix values;
    bool one_hot = false;

    static FeatureBlock identity() { return {Matrix(), true}; }
};

enum class LabelMode { single, multi };

struct Splits {
    // Indices into the target-node range [0, n_target).
    std::vector<int> train;
    std::vector<int> val;
    std::vector<int> test;
};

class HeteroGraph {
   public:
    HeteroGraph() = default;
    HeteroGraph(std::vector<std::string> type_names, std::vector<std::size_t> counts, int target_type);

    int add_edge_type(int src_type, int dst_type, std::string name = {});
    /// Throws SpecError if the endpoints do not match the type signature.
    void add_edge(int src, int dst, int type);
    void set_features(int type, FeatureBlock block);
    /// `labels[i]` lists the classes of target node i (empty = unlabeled).
    void set_labels(std::vector<std::vector<int>> labels, std::size_t num_classes, LabelMode mode);
    void set_splits(Splits splits);
    void set_feature_regime(int eta) { feature_regime_ = eta; }

    std::size_t num_nodes() const noexcept { return total_; }
    std::size_t num_types() const noexcept { return names_.size(); }
    const std::vector<std::string>& type_names() const noexcept { return names_; }
    int type_index(const std::string& name) const;
    std::size_t type_count(int t) const { return counts_.at(static_cast<std::size_t>(t)); }
    std::size_t type_offset(int t) const { return offsets_.at(static_cast<std::size_t>(t)); }
    int node_type(int id) const;

    int target_type() const noexcept { return target_type_; }
    std::size_t num_target() const { return type_count(target_type_); }
    /// Global ids of target nodes, ascending.
    std::vector<int> target_ids() const;

    const std::vector<Edge>& edges() const noexcept { return edges_; }
    std::vector<Edge>& mutable_edges() noexcept { return edges_; }
    const std::vector<EdgeType>& edge_types() const noexcept { return edge_types_; }
    int edge_type_index(const std::string& name) const;

    const FeatureBlock& features(int t) const { return features_.at(static_cast<std::size_t>(t)); }
    /// Input feature dimension of type t (count for one-hot blocks).
    std::size_t feature_dim(int t) const;

    const std::vector<std::vector<int>>& labels() const noexcept { return labels_; }
    std::size_t num_classes() const noexcept { return num_classes_; }
    LabelMode label_mode() const noexcept { return label_mode_; }
    const Splits& splits() const noexcept { return splits_; }
    int feature_regime() const noexcept { return feature_regime_; }

    /// Checks every structural invariant; throws SpecError describing the first violation.
    void validate() const;

   private:
    std::vector<std::string> names_;
    std::vector<std::size_t> counts_;
    std::vector<std::size_t> offsets_;
    std::size_t total_ = 0;
    int target_type_ = 0;
    std::vector<EdgeType> edge_types_;
    std::vector<Edge> edges_;
    std::vector<FeatureBlock> features_;
    std::vector<std::vector<int>> labels_;
    std::size_t num_classes_ = 0;
    LabelMode label_mode_ = LabelMode::single;
    Splits splits_;
    int feature_regime_ = 0;
};

/// Returns a copy whose features follow regime eta: 0 keeps given features, 1 keeps only
/// target features (other types get a constant 1-dim feature), 2 keeps target features and
/// gives every other type one-hot features. Types without given features get one-hot (eta 0).
HeteroGraph apply_feature_regime(const HeteroGraph& g, int eta);

// ---------------------------------------------------------------------------
// Structure

/// N x N binary adjacency from the edge list; `symmetric` yields max(A, A^T).
AdjacencyMatrix build_full_adjacency(const HeteroGraph& g, bool symmetric);

/// One hop along an edge type, optionally against its direction.
struct MetapathStep {
    int edge_type = 0;
    bool reverse = false;

    friend bool operator==(const MetapathStep&, const MetapathStep&) = default;
};

struct MetapathSpec {
    std::string name;
    std::vector<MetapathStep> steps;

    /// Parses "0,3" or "0,~0" (edge type indices, '~' traverses dst->src). Edge type names also work.
    static MetapathSpec parse(const std::string& text, const HeteroGraph& g);
    /// Steps in reverse order with every direction flipped.
    MetapathSpec reversed() const;
    std::string to_string() const;
};

/// Throws SpecError unless the spec starts and ends at the target type and its hops chain.
void validate_metapath(const HeteroGraph& g, const MetapathSpec& spec);

/// n_target x n_target binary graph: (u, v) = 1 iff some path instance follows `spec` from u to v.
/// Diagonal is zeroed.
AdjacencyMatrix metapath_graph(const HeteroGraph& g, const MetapathSpec& spec);

/// Rows/cols of an N x N matrix restricted to target ids, order preserved.
AdjacencyMatrix target_subgraph(const AdjacencyMatrix& a_theta, const HeteroGraph& g);

struct HomogeneityResult {
    double beta = 0.0;
    std::size_t counted = 0;   // nodes with at least one neighbor
    std::size_t isolated = 0;  // excluded from the average
};

/// Mean over nodes v with >= 1 neighbor u (adj(u, v) != 0) of the fraction of neighbors with y_u == y_v.
HomogeneityResult homogeneity_score(const AdjacencyMatrix& adj, std::span<const int> labels);

/// Per-node label key for homogeneity: single-label class id, or an id per distinct class set.
/// Unlabeled nodes get -1.
std::vector<int> label_keys(const HeteroGraph& g);

// ---------------------------------------------------------------------------
// I/O

struct HgbOptions {
    double val_fraction = 0.2;  // share of label.dat moved to validation
    std::uint64_t split_seed = 0;
};

/// Reads node.dat, link.dat, label.dat and (optionally) label.dat.test.
/// Throws ParseError with file and line on malformed or dangling rows.
HeteroGraph load_hgb(const std::filesystem::path& dir, const HgbOptions& options = {});
void write_hgb(const HeteroGraph& g, const std::filesystem::path& dir);

void save_manifest(const HeteroGraph& g, const std::filesystem::path& file);
HeteroGraph load_manifest(const std::filesystem::path& file);

// ---------------------------------------------------------------------------
// Synthetic planted graphs

struct SyntheticConfig {
    std::size_t n_target = 800;
    std::vector<std::size_t> n_aux = {200, 200};
    std::size_t classes = 4;
    double intra_class_link_prob = 0.05;
    double inter_class_link_prob = 0.005;
    std::size_t feature_dim = 16;
    double feature_noise = 1.0;
    double class_separation = 1.0;
    double train_fraction = 0.2;
    double val_fraction = 0.2;
    std::uint64_t seed = 0;
};

/// Target nodes get Gaussian features around a per-class mean; each auxiliary node has a
/// dominant class and links to each target node with the intra probability when classes
/// match, the inter probability otherwise. Edge type k joins target -> auxiliary type k.
HeteroGraph generate_synthetic(const SyntheticConfig& cfg);

/// Expected edge count of generate_synthetic under its class assignment.
double expected_synthetic_edges(const HeteroGraph& g, const SyntheticConfig& cfg);

}  // namespace noisehgnn::hetgraph

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "noisehgnn/hetgraph.hpp"

namespace noisehgnn::noise {

struct NoiseConfig {
    double ratio = 0.3;  // in [0, 1]
    std::uint64_t seed = 0;
};

struct RewiredEdge {
    std::size_t index = 0;  // position in the edge list
    int src = 0;
    int old_dst = 0;
    int new_dst = 0;
    int type = 0;
};

struct NoiseResult {
    hetgraph::HeteroGraph graph;
    std::vector<RewiredEdge> rewired;  // in selection order
    std::size_t quota = 0;             // floor(ratio * M)
    std::size_t shortfall = 0;         // quota - rewired.size()
};

/// floor(ratio * M), robust to the representation error of ratio.
std::size_t error_link_quota(double ratio, std::size_t num_edges);

/// Picks floor(ratio * M) edges uniformly without replacement and moves each edge's
/// destination to a different node of the same type. Edges whose destination type has a
/// single node are passed over; if the quota cannot be met, `shortfall` says by how much.
NoiseResult inject_error_links(const hetgraph::HeteroGraph& g, const NoiseConfig& cfg);

/// Tab-separated audit log: index, src, old_dst, new_dst, type.
void write_rewired(const std::vector<RewiredEdge>& rewired, const std::filesystem::path& file);

}  // namespace noisehgnn::noise

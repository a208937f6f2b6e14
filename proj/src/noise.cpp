#include "noisehgnn/noise.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include "noisehgnn/random.hpp"

namespace noisehgnn::noise {

std::size_t error_link_quota(double ratio, std::size_t num_edges) {
    if (!(ratio >= 0.0 && ratio <= 1.0)) throw DomainError("noise ratio must lie in [0, 1], got " + std::to_string(ratio));
    return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(num_edges) + 1e-9));
}

NoiseResult inject_error_links(const hetgraph::HeteroGraph& g, const NoiseConfig& cfg) {
    NoiseResult result{g, {}, error_link_quota(cfg.ratio, g.edges().size()), 0};
    if (result.quota == 0) return result;

    Rng rng(cfg.seed);
    std::vector<std::size_t> order(g.edges().size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);

    auto& edges = result.graph.mutable_edges();
    for (std::size_t idx : order) {
        if (result.rewired.size() == result.quota) break;
        hetgraph::Edge& e = edges[idx];
        const int dst_type = g.edge_types()[static_cast<std::size_t>(e.type)].dst_type;
        const std::size_t candidates = g.type_count(dst_type);
        if (candidates < 2) continue;
        const auto off = static_cast<int>(g.type_offset(dst_type));
        auto pick = static_cast<int>(rng.below(candidates - 1));
        if (pick >= e.dst - off) ++pick;
        result.rewired.push_back({idx, e.src, e.dst, off + pick, e.type});
        e.dst = off + pick;
    }
    result.shortfall = result.quota - result.rewired.size();
    return result;
}

void write_rewired(const std::vector<RewiredEdge>& rewired, const std::filesystem::path& file) {
    std::ofstream out(file);
    if (!out) throw Error("cannot write " + file.string());
    out << "index\tsrc\told_dst\tnew_dst\ttype\n";
    for (const RewiredEdge& r : rewired) {
        out << r.index << '\t' << r.src << '\t' << r.old_dst << '\t' << r.new_dst << '\t' << r.type << '\n';
    }
}

}  // namespace noisehgnn::noise

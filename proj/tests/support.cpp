#include "support.hpp"

#include <algorithm>
#include <functional>
#include <numeric>

namespace support {

namespace nk = noisehgnn::numkernel;
namespace hg = noisehgnn::hetgraph;

std::vector<OpCase> primitive_cases() {
    using S = std::span<const Tensor>;
    const std::vector<std::size_t> offsets = {0, 2, 3, 6};
    const std::vector<int> rows_idx = {2, 0, 2, 1};
    const std::vector<int> e_rows = {0, 2, 1, 2, 0};
    const std::vector<int> e_cols = {1, 0, 3, 0, 1};
    const std::vector<int> blk_rows = {3, 1};
    const std::vector<int> blk_cols = {0, 2, 2};
    return {
        {"matmul", {{5, 4}, {4, 3}}, [](Tape&, S x) { return weighted_sum(nk::matmul(x[0], x[1])); }},
        {"transpose", {{3, 4}}, [](Tape&, S x) { return weighted_sum(nk::transpose(x[0])); }},
        {"add", {{3, 4}, {3, 4}}, [](Tape&, S x) { return weighted_sum(nk::add(x[0], x[1])); }},
        {"sub", {{3, 4}, {3, 4}}, [](Tape&, S x) { return weighted_sum(nk::sub(x[0], x[1])); }},
        {"mul", {{3, 4}, {3, 4}}, [](Tape&, S x) { return weighted_sum(nk::mul(x[0], x[1])); }},
        {"add_row", {{3, 4}, {1, 4}}, [](Tape&, S x) { return weighted_sum(nk::add_row(x[0], x[1])); }},
        {"mul_col", {{3, 4}, {3, 1}}, [](Tape&, S x) { return weighted_sum(nk::mul_col(x[0], x[1])); }},
        {"scale", {{3, 4}}, [](Tape&, S x) { return weighted_sum(nk::scale(x[0], -1.7)); }},
        {"add_scalar", {{3, 4}}, [](Tape&, S x) { return weighted_sum(nk::add_scalar(x[0], 0.3)); }},
        {"sigmoid", {{3, 4}}, [](Tape&, S x) { return weighted_sum(nk::sigmoid(x[0])); }},
        {"leaky_relu", {{3, 4}}, [](Tape&, S x) { return weighted_sum(nk::leaky_relu(x[0])); }},
        {"relu", {{3, 4}}, [](Tape&, S x) { return weighted_sum(nk::relu(x[0])); }},
        {"exp", {{3, 4}}, [](Tape&, S x) { return weighted_sum(nk::exp(x[0])); }},
        {"log", {{3, 4}}, [](Tape&, S x) { return weighted_sum(nk::log(x[0])); }, 0.2, 2.0},
        {"power_real", {{3, 4}}, [](Tape&, S x) { return weighted_sum(nk::power(x[0], 2.5)); }, 0.2, 2.0},
        {"power_int", {{3, 4}}, [](Tape&, S x) { return weighted_sum(nk::power(x[0], 3.0)); }},
        {"clamp", {{3, 4}}, [](Tape&, S x) { return weighted_sum(nk::clamp(x[0], -1.0, 1.0)); }},
        {"sum", {{3, 4}}, [](Tape&, S x) { return nk::scale(nk::sum(x[0]), 1.3); }},
        {"mean", {{3, 4}}, [](Tape&, S x) { return nk::scale(nk::mean(x[0]), 1.3); }},
        {"row_sum", {{3, 4}}, [](Tape&, S x) { return weighted_sum(nk::row_sum(x[0])); }},
        {"row_normalize", {{3, 4}}, [](Tape&, S x) { return weighted_sum(nk::row_normalize(x[0])); }},
        {"softmax_rows", {{3, 4}}, [](Tape&, S x) { return weighted_sum(nk::softmax_rows(x[0])); }},
        {"segment_softmax", {{6, 1}}, [offsets](Tape&, S x) { return weighted_sum(nk::segment_softmax(x[0], offsets)); }},
        {"gather_rows", {{3, 4}}, [rows_idx](Tape&, S x) { return weighted_sum(nk::gather_rows(x[0], rows_idx)); }},
        {"scatter_add_rows", {{4, 3}}, [rows_idx](Tape&, S x) { return weighted_sum(nk::scatter_add_rows(x[0], rows_idx, 3)); }},
        {"gather_entries", {{3, 4}},
         [e_rows, e_cols](Tape&, S x) { return weighted_sum(nk::gather_entries(x[0], e_rows, e_cols)); }},
        {"scatter_entries", {{5, 1}},
         [e_rows, e_cols](Tape&, S x) { return weighted_sum(nk::scatter_entries(x[0], e_rows, e_cols, 3, 4)); }},
        {"gather_block", {{4, 3}},
         [blk_rows, blk_cols](Tape&, S x) { return weighted_sum(nk::gather_block(x[0], blk_rows, blk_cols)); }},
        {"concat_cols", {{3, 2}, {3, 4}},
         [](Tape&, S x) { return weighted_sum(nk::concat_cols(std::vector<Tensor>{x[0], x[1]})); }},
        {"concat_rows", {{2, 3}, {4, 3}},
         [](Tape&, S x) { return weighted_sum(nk::concat_rows(std::vector<Tensor>{x[0], x[1]})); }},
    };
}

hg::HeteroGraph random_hetero_graph(Rng& rng, std::vector<std::size_t> counts, std::size_t edge_types, std::size_t edges,
                                    std::size_t classes, std::size_t feature_dim) {
    std::vector<std::string> names;
    for (std::size_t t = 0; t < counts.size(); ++t) names.push_back("t" + std::to_string(t));
    hg::HeteroGraph g(names, counts, 0);
    const int nt = static_cast<int>(counts.size());
    for (std::size_t e = 0; e < edge_types; ++e) {
        const int s = e == 0 ? 0 : static_cast<int>(rng.below(static_cast<std::uint64_t>(nt)));
        const int d = static_cast<int>(rng.below(static_cast<std::uint64_t>(nt)));
        g.add_edge_type(s, d);
    }
    for (std::size_t e = 0; e < edges; ++e) {
        const int type = static_cast<int>(rng.below(edge_types));
        const auto& sig = g.edge_types()[static_cast<std::size_t>(type)];
        const int src = static_cast<int>(g.type_offset(sig.src_type) + rng.below(g.type_count(sig.src_type)));
        const int dst = static_cast<int>(g.type_offset(sig.dst_type) + rng.below(g.type_count(sig.dst_type)));
        g.add_edge(src, dst, type);
    }
    for (int t = 0; t < nt; ++t) g.set_features(t, {random_matrix(counts[static_cast<std::size_t>(t)], feature_dim, rng, -1.0, 1.0), false});
    std::vector<std::vector<int>> labels(counts[0]);
    for (auto& l : labels) l.push_back(static_cast<int>(rng.below(classes)));
    g.set_labels(labels, classes, hg::LabelMode::single);
    std::vector<int> order(counts[0]);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    hg::Splits s;
    const std::size_t a = counts[0] / 3, b = 2 * counts[0] / 3;
    s.train.assign(order.begin(), order.begin() + static_cast<long>(a));
    s.val.assign(order.begin() + static_cast<long>(a), order.begin() + static_cast<long>(b));
    s.test.assign(order.begin() + static_cast<long>(b), order.end());
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.val.begin(), s.val.end());
    std::sort(s.test.begin(), s.test.end());
    g.set_splits(s);
    return g;
}

hg::MetapathSpec random_metapath(const hg::HeteroGraph& g, std::size_t hops, Rng& rng) {
    const int target = g.target_type();
    const auto& types = g.edge_types();
    for (int attempt = 0; attempt < 200; ++attempt) {
        hg::MetapathSpec spec;
        int at = target;
        for (std::size_t h = 0; h < hops; ++h) {
            std::vector<hg::MetapathStep> options;
            for (std::size_t e = 0; e < types.size(); ++e) {
                const bool last = h + 1 == hops;
                if (types[e].src_type == at && (!last || types[e].dst_type == target)) options.push_back({static_cast<int>(e), false});
                if (types[e].dst_type == at && (!last || types[e].src_type == target)) options.push_back({static_cast<int>(e), true});
            }
            if (options.empty()) break;
            const auto step = options[rng.below(options.size())];
            spec.steps.push_back(step);
            at = step.reverse ? types[static_cast<std::size_t>(step.edge_type)].src_type
                              : types[static_cast<std::size_t>(step.edge_type)].dst_type;
        }
        if (spec.steps.size() == hops && at == target) return spec;
    }
    return {};
}

Matrix metapath_oracle(const hg::HeteroGraph& g, const hg::MetapathSpec& spec) {
    const std::size_t n = g.num_nodes(), nt = g.num_target();
    const int off = static_cast<int>(g.type_offset(g.target_type()));
    // Outgoing neighbors per (step, node).
    std::vector<std::vector<std::vector<int>>> next(spec.steps.size(), std::vector<std::vector<int>>(n));
    for (std::size_t s = 0; s < spec.steps.size(); ++s) {
        for (const auto& e : g.edges()) {
            if (e.type != spec.steps[s].edge_type) continue;
            if (spec.steps[s].reverse)
                next[s][static_cast<std::size_t>(e.dst)].push_back(e.src);
            else
                next[s][static_cast<std::size_t>(e.src)].push_back(e.dst);
        }
    }
    Matrix out(nt, nt);
    std::function<void(std::size_t, int, int)> dfs = [&](std::size_t depth, int node, int start) {
        if (depth == spec.steps.size()) {
            if (node - off != start) out(static_cast<std::size_t>(start), static_cast<std::size_t>(node - off)) = 1.0;
            return;
        }
        for (int m : next[depth][static_cast<std::size_t>(node)]) dfs(depth + 1, m, start);
    };
    for (std::size_t u = 0; u < nt; ++u) dfs(0, off + static_cast<int>(u), static_cast<int>(u));
    return out;
}

double homogeneity_oracle(const Matrix& adj, const std::vector<int>& labels) {
    std::vector<std::vector<std::size_t>> in(labels.size());
    for (std::size_t u = 0; u < adj.rows(); ++u)
        for (std::size_t v = 0; v < adj.cols(); ++v)
            if (adj(u, v) != 0.0) in[v].push_back(u);
    double total = 0.0;
    std::size_t counted = 0;
    for (std::size_t v = 0; v < in.size(); ++v) {
        if (in[v].empty()) continue;
        const auto same = std::count_if(in[v].begin(), in[v].end(), [&](std::size_t u) { return labels[u] == labels[v]; });
        total += static_cast<double>(same) / static_cast<double>(in[v].size());
        ++counted;
    }
    return counted ? total / static_cast<double>(counted) : 0.0;
}

std::vector<std::vector<int>> topk_oracle(const Matrix& s, std::size_t k) {
    std::vector<std::vector<int>> out(s.rows());
    for (std::size_t i = 0; i < s.rows(); ++i) {
        std::vector<int> cols;
        for (std::size_t j = 0; j < s.cols(); ++j)
            if (j != i) cols.push_back(static_cast<int>(j));
        std::stable_sort(cols.begin(), cols.end(), [&](int a, int b) { return s(i, static_cast<std::size_t>(a)) > s(i, static_cast<std::size_t>(b)); });
        cols.resize(std::min(k, cols.size()));
        std::sort(cols.begin(), cols.end());
        out[i] = cols;
    }
    return out;
}

F1Oracle f1_oracle(const std::vector<int>& predicted, const std::vector<int>& truth, std::size_t classes) {
    std::vector<std::vector<std::size_t>> confusion(classes, std::vector<std::size_t>(classes, 0));
    for (std::size_t i = 0; i < truth.size(); ++i) ++confusion[static_cast<std::size_t>(truth[i])][static_cast<std::size_t>(predicted[i])];
    double macro = 0.0;
    std::size_t tp_all = 0, fp_all = 0, fn_all = 0;
    for (std::size_t c = 0; c < classes; ++c) {
        std::size_t row = 0, col = 0;
        for (std::size_t o = 0; o < classes; ++o) {
            row += confusion[c][o];
            col += confusion[o][c];
        }
        const std::size_t tp = confusion[c][c], fn = row - tp, fp = col - tp;
        const double p = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
        const double r = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
        macro += p + r > 0 ? 2 * p * r / (p + r) : 0.0;
        tp_all += tp;
        fp_all += fp;
        fn_all += fn;
    }
    const double mp = static_cast<double>(tp_all) / static_cast<double>(tp_all + fp_all);
    const double mr = static_cast<double>(tp_all) / static_cast<double>(tp_all + fn_all);
    return {macro / static_cast<double>(classes), mp + mr > 0 ? 2 * mp * mr / (mp + mr) : 0.0};
}

hg::HeteroGraph twelve_node_graph() {
    // 6 targets (ids 0-5), 4 "paper" nodes (6-9), 2 "venue" nodes (10-11).
    hg::HeteroGraph g({"author", "paper", "venue"}, {6, 4, 2}, 0);
    const int writes = g.add_edge_type(0, 1, "writes");
    const int at = g.add_edge_type(1, 2, "published_at");
    const std::vector<std::pair<int, int>> ap = {{0, 6}, {1, 6}, {1, 7}, {2, 7}, {3, 8}, {4, 8}, {4, 9}, {5, 9}, {0, 9}};
    for (auto [a, p] : ap) g.add_edge(a, p, writes);
    g.add_edge(6, 10, at);
    g.add_edge(7, 10, at);
    g.add_edge(8, 11, at);
    g.add_edge(9, 11, at);
    Rng rng(12);
    g.set_features(0, {random_matrix(6, 4, rng, -1.0, 1.0), false});
    g.set_features(1, {random_matrix(4, 3, rng, -1.0, 1.0), false});
    g.set_features(2, hg::FeatureBlock::identity());
    g.set_labels({{0}, {0}, {1}, {1}, {2}, {2}}, 3, hg::LabelMode::single);
    g.set_splits({{0, 2, 4}, {1, 3}, {5}});
    return g;
}

}  // namespace support

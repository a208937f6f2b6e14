#include "noisehgnn/synthesizer.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <tuple>

namespace noisehgnn::synth {

namespace nk = numkernel;

SynthesizerParams SynthesizerParams::init(const HeteroGraph& g, std::size_t dim, std::size_t k, int eta, Rng& rng) {
    if (k < 1) throw DomainError("synthesizer: k must be >= 1");
    if (eta < 0 || eta > 2) throw DomainError("synthesizer: eta must be 0, 1 or 2");
    SynthesizerParams p;
    p.eta = eta;
    p.k = k;
    p.dim = dim;
    for (int t = 0; t < static_cast<int>(g.num_types()); ++t) {
        const std::string name = g.type_names()[static_cast<std::size_t>(t)];
        p.type_weight.emplace_back("synth.W_type." + name, nk::glorot_uniform(g.feature_dim(t), dim, rng));
        p.type_bias.emplace_back("synth.b_type." + name, Matrix(1, dim));
    }
    p.graph_weight = Parameter("synth.W_graph", nk::glorot_uniform(dim, dim, rng));
    p.graph_bias = Parameter("synth.b_graph", Matrix(1, dim));
    return p;
}

std::vector<Parameter*> SynthesizerParams::parameters() {
    std::vector<Parameter*> out;
    for (auto& w : type_weight) out.push_back(&w);
    for (auto& b : type_bias) out.push_back(&b);
    out.push_back(&graph_weight);
    if (eta == 0) out.push_back(&graph_bias);
    return out;
}

namespace {

Propagation normalized(std::size_t n, std::vector<std::tuple<int, int, double>> entries) {
    std::sort(entries.begin(), entries.end(), [](const auto& x, const auto& y) {
        return std::tie(std::get<0>(x), std::get<1>(x)) < std::tie(std::get<0>(y), std::get<1>(y));
    });
    Propagation p;
    p.n = n;
    for (const auto& [i, j, v] : entries) {
        if (!p.rows.empty() && p.rows.back() == i && p.cols.back() == j) {
            p.values.back() += v;
            continue;
        }
        p.rows.push_back(i);
        p.cols.push_back(j);
        p.values.push_back(v);
    }
    std::vector<double> degree(n, 0.0);
    for (std::size_t e = 0; e < p.rows.size(); ++e) degree[p.rows[e]] += p.values[e];
    for (std::size_t e = 0; e < p.rows.size(); ++e) p.values[e] /= std::sqrt(degree[p.rows[e]] * degree[p.cols[e]]);
    return p;
}

}  // namespace

Matrix Propagation::dense() const {
    Matrix out(n, n);
    for (std::size_t e = 0; e < rows.size(); ++e) out(rows[e], cols[e]) = values[e];
    return out;
}

Propagation gcn_propagation(const Matrix& adjacency) {
    if (adjacency.rows() != adjacency.cols()) throw DimensionError("gcn_propagation: adjacency must be square");
    const std::size_t n = adjacency.rows();
    std::vector<std::tuple<int, int, double>> entries;
    for (std::size_t i = 0; i < n; ++i) {
        entries.emplace_back(static_cast<int>(i), static_cast<int>(i), 1.0);
        for (std::size_t j = 0; j < n; ++j) {
            if (adjacency(i, j) != 0.0) entries.emplace_back(static_cast<int>(i), static_cast<int>(j), adjacency(i, j));
        }
    }
    return normalized(n, std::move(entries));
}

Propagation gcn_propagation(std::size_t n, std::span<const int> rows, std::span<const int> cols) {
    if (rows.size() != cols.size()) throw DimensionError("gcn_propagation: rows and cols differ in length");
    std::vector<std::pair<int, int>> pairs;
    for (std::size_t e = 0; e < rows.size(); ++e) {
        if (rows[e] < 0 || cols[e] < 0 || static_cast<std::size_t>(rows[e]) >= n || static_cast<std::size_t>(cols[e]) >= n) {
            throw ContractError("gcn_propagation: edge endpoint out of range");
        }
        if (rows[e] != cols[e]) pairs.emplace_back(rows[e], cols[e]);
    }
    std::sort(pairs.begin(), pairs.end());
    pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
    std::vector<std::tuple<int, int, double>> entries;
    for (std::size_t i = 0; i < n; ++i) entries.emplace_back(static_cast<int>(i), static_cast<int>(i), 1.0);
    for (const auto& [i, j] : pairs) entries.emplace_back(i, j, 1.0);
    return normalized(n, std::move(entries));
}

Tensor project_nodes(Tape& tape, const HeteroGraph& g, SynthesizerParams& params) {
    if (params.type_weight.size() < g.num_types() || params.type_bias.size() < g.num_types()) {
        throw ContractError("project_nodes: missing projection weights for " + std::to_string(g.num_types()) + " node types");
    }
    std::vector<Tensor> blocks;
    for (int t = 0; t < static_cast<int>(g.num_types()); ++t) {
        if (g.type_count(t) == 0) continue;
        Parameter& w = params.type_weight[static_cast<std::size_t>(t)];
        if (w.value.rows() != g.feature_dim(t)) {
            throw DimensionError("project_nodes: type '" + g.type_names()[static_cast<std::size_t>(t)] + "' has feature dim " +
                                 std::to_string(g.feature_dim(t)) + " but weight " + w.value.shape_string());
        }
        const auto& f = g.features(t);
        Tensor lin = f.one_hot ? tape.param(w) : nk::matmul(tape.constant(f.values), tape.param(w));
        blocks.push_back(nk::add_row(lin, tape.param(params.type_bias[static_cast<std::size_t>(t)])));
    }
    return nk::concat_rows(blocks);
}

Tensor graph_project(Tape& tape, const Tensor& z, const Propagation* propagation, SynthesizerParams& params) {
    if (params.eta == 0) {
        return nk::leaky_relu(nk::add_row(nk::matmul(z, tape.param(params.graph_weight)), tape.param(params.graph_bias)));
    }
    if (!propagation) throw ContractError("graph_project: the GCN branch (eta 1, 2) needs an adjacency");
    if (propagation->n != z.rows()) {
        throw DimensionError("graph_project: propagation over " + std::to_string(propagation->n) + " nodes vs Z " +
                             z.value().shape_string());
    }
    // P (Z W) as gather, scale, scatter over the nonzeros of P.
    const Tensor zw = nk::matmul(z, tape.param(params.graph_weight));
    const Tensor w = tape.constant(Matrix(propagation->values.size(), 1, propagation->values));
    return nk::leaky_relu(nk::scatter_add_rows(nk::mul_col(nk::gather_rows(zw, propagation->cols), w), propagation->rows, propagation->n));
}

Tensor cosine_similarity_matrix(const Tensor& z_bar) {
    Tensor zn = nk::row_normalize(z_bar, kNormEps);
    return nk::matmul(zn, nk::transpose(zn));
}

namespace {

// Top-k of `values` (indexed by `ids`), skipping `self`; returns chosen ids ascending.
std::vector<int> top_k_of(std::span<const double> values, std::span<const int> ids, int self, std::size_t k) {
    std::vector<std::size_t> cand;
    cand.reserve(ids.size());
    for (std::size_t c = 0; c < ids.size(); ++c)
        if (ids[c] != self) cand.push_back(c);
    const std::size_t keep = std::min(k, cand.size());
    std::partial_sort(cand.begin(), cand.begin() + static_cast<long>(keep), cand.end(), [&](std::size_t a, std::size_t b) {
        if (values[a] != values[b]) return values[a] > values[b];
        return ids[a] < ids[b];
    });
    std::vector<int> out;
    out.reserve(keep);
    for (std::size_t c = 0; c < keep; ++c) out.push_back(ids[cand[c]]);
    std::sort(out.begin(), out.end());
    return out;
}

Matrix normalized_rows(const Matrix& x) {
    Matrix out = x;
    for (std::size_t i = 0; i < x.rows(); ++i) {
        double s = 0.0;
        for (double v : x.row(i)) s += v * v;
        const double d = std::max(std::sqrt(s), kNormEps);
        for (double& v : out.row(i)) v /= d;
    }
    return out;
}

void append_row(KnnSelection& sel, int row, const std::vector<int>& cols) {
    for (int c : cols) {
        sel.rows.push_back(row);
        sel.cols.push_back(c);
    }
    sel.offsets.push_back(sel.rows.size());
}

}  // namespace

KnnSelection topk_select(const Matrix& s, std::size_t k) {
    if (k < 1) throw DomainError("topk: k must be >= 1");
    if (s.rows() != s.cols()) throw DimensionError("topk: similarity must be square, got " + s.shape_string());
    std::vector<int> ids(s.cols());
    std::iota(ids.begin(), ids.end(), 0);
    KnnSelection sel;
    sel.offsets.push_back(0);
    for (std::size_t i = 0; i < s.rows(); ++i) append_row(sel, static_cast<int>(i), top_k_of(s.row(i), ids, static_cast<int>(i), k));
    return sel;
}

KnnSelection knn_select(const Matrix& z_bar, std::size_t k, const std::vector<int>* row_subset) {
    if (k < 1) throw DomainError("knn: k must be >= 1");
    const Matrix zn = normalized_rows(z_bar);
    std::vector<int> rows;
    if (row_subset) {
        rows = *row_subset;
    } else {
        rows.resize(z_bar.rows());
        std::iota(rows.begin(), rows.end(), 0);
    }
    std::vector<int> ids(z_bar.rows());
    std::iota(ids.begin(), ids.end(), 0);
    KnnSelection sel;
    sel.offsets.push_back(0);
    constexpr std::size_t kBlock = 256;
    for (std::size_t b = 0; b < rows.size(); b += kBlock) {
        const std::size_t e = std::min(rows.size(), b + kBlock);
        Matrix block(e - b, zn.cols());
        for (std::size_t r = b; r < e; ++r) {
            const auto src = zn.row(static_cast<std::size_t>(rows[r]));
            std::copy(src.begin(), src.end(), block.row(r - b).begin());
        }
        const Matrix sims = nk::product(block, zn, false, true);
        for (std::size_t r = b; r < e; ++r) append_row(sel, rows[r], top_k_of(sims.row(r - b), ids, rows[r], k));
    }
    return sel;
}

Tensor topk_sparsify(const Tensor& s, std::size_t k) {
    const KnnSelection sel = topk_select(s.value(), k);
    Tensor kept = nk::relu(nk::gather_entries(s, sel.rows, sel.cols));
    return nk::scatter_entries(kept, sel.rows, sel.cols, s.rows(), s.cols());
}

KnnSelection batched_knn_select(const Matrix& z_bar, std::size_t k, std::size_t batch_size, std::uint64_t seed) {
    if (k < 1) throw DomainError("batched_knn: k must be >= 1");
    if (batch_size < k + 1) {
        throw DomainError("batched_knn: batch size " + std::to_string(batch_size) + " must be at least k + 1 = " + std::to_string(k + 1));
    }
    const std::size_t n = z_bar.rows();
    const Matrix zn = normalized_rows(z_bar);
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    rng.shuffle(order);

    std::vector<std::size_t> starts;
    for (std::size_t b = 0; b < n; b += batch_size) starts.push_back(b);
    if (starts.size() > 1 && n - starts.back() < k + 1) starts.pop_back();
    starts.push_back(n);

    std::vector<std::vector<int>> chosen(n);
    for (std::size_t bi = 0; bi + 1 < starts.size(); ++bi) {
        std::vector<int> members(order.begin() + static_cast<long>(starts[bi]), order.begin() + static_cast<long>(starts[bi + 1]));
        Matrix block(members.size(), zn.cols());
        for (std::size_t r = 0; r < members.size(); ++r) {
            const auto src = zn.row(static_cast<std::size_t>(members[r]));
            std::copy(src.begin(), src.end(), block.row(r).begin());
        }
        const Matrix sims = nk::product(block, block, false, true);
        for (std::size_t r = 0; r < members.size(); ++r) {
            chosen[static_cast<std::size_t>(members[r])] = top_k_of(sims.row(r), members, members[r], k);
        }
    }
    KnnSelection sel;
    sel.offsets.push_back(0);
    for (std::size_t i = 0; i < n; ++i) append_row(sel, static_cast<int>(i), chosen[i]);
    return sel;
}

Matrix to_dense(const KnnSelection& sel, std::span<const double> values, std::size_t n) {
    if (values.size() != sel.size()) throw DimensionError("to_dense: value count does not match selection");
    Matrix a(n, n);
    for (std::size_t e = 0; e < sel.size(); ++e) a(sel.rows[e], sel.cols[e]) += values[e];
    return a;
}

Matrix batched_knn(const Matrix& z_bar, std::size_t k, std::size_t batch_size, std::uint64_t seed) {
    const KnnSelection sel = batched_knn_select(z_bar, k, batch_size, seed);
    const Matrix zn = normalized_rows(z_bar);
    std::vector<double> vals(sel.size());
    for (std::size_t e = 0; e < sel.size(); ++e) {
        double dot = 0.0;
        const auto a = zn.row(static_cast<std::size_t>(sel.rows[e]));
        const auto b = zn.row(static_cast<std::size_t>(sel.cols[e]));
        for (std::size_t j = 0; j < a.size(); ++j) dot += a[j] * b[j];
        vals[e] = std::max(dot, 0.0);
    }
    return to_dense(sel, vals, z_bar.rows());
}

Tensor selection_weights(const Tensor& z_bar, const KnnSelection& sel) {
    Tensor zn = nk::row_normalize(z_bar, kNormEps);
    Tensor a = nk::gather_rows(zn, sel.rows);
    Tensor b = nk::gather_rows(zn, sel.cols);
    return nk::relu(nk::row_sum(nk::mul(a, b)));
}

SymmetrizedEdges symmetrize(const KnnSelection& sel, const Tensor& weights, std::size_t n) {
    std::map<std::pair<int, int>, int> pattern;
    for (std::size_t e = 0; e < sel.size(); ++e) {
        pattern[{sel.rows[e], sel.cols[e]}] = 1;
        pattern[{sel.cols[e], sel.rows[e]}] = 1;
    }
    KnnSelection out;
    out.offsets.assign(n + 1, 0);
    for (const auto& [rc, _] : pattern) {
        out.rows.push_back(rc.first);
        out.cols.push_back(rc.second);
        ++out.offsets[static_cast<std::size_t>(rc.first) + 1];
    }
    for (std::size_t i = 0; i < n; ++i) out.offsets[i + 1] += out.offsets[i];
    Tensor dense = nk::scatter_entries(weights, sel.rows, sel.cols, n, n);
    Tensor sym = nk::scale(nk::add(dense, nk::transpose(dense)), 0.5);
    Tensor w = nk::gather_entries(sym, out.rows, out.cols);
    return {std::move(out), w};
}

SynthesisOnTape synthesize_on_tape(Tape& tape, const HeteroGraph& g, SynthesizerParams& params, const Propagation* propagation,
                                   const KnnOptions& knn, const KnnSelection* frozen) {
    SynthesisOnTape out;
    out.z = project_nodes(tape, g, params);
    out.z_bar = graph_project(tape, out.z, propagation, params);
    if (frozen) {
        out.selection = *frozen;
    } else if (knn.batch_size > 0) {
        out.selection = batched_knn_select(out.z_bar.value(), params.k, knn.batch_size, knn.seed);
    } else {
        out.selection = knn_select(out.z_bar.value(), params.k);
    }
    out.base_selection = out.selection;
    out.weights = selection_weights(out.z_bar, out.selection);
    if (knn.symmetric) {
        auto sym = symmetrize(out.selection, out.weights, g.num_nodes());
        out.selection = std::move(sym.selection);
        out.weights = sym.weights;
    }
    return out;
}

SynthesizedGraph synthesize(const HeteroGraph& g, SynthesizerParams& params, const Propagation* propagation, const KnnOptions& knn) {
    Tape tape;
    SynthesisOnTape s = synthesize_on_tape(tape, g, params, propagation, knn);
    return {s.z.value(), to_dense(s.selection, s.weights.value().values(), g.num_nodes())};
}

}  // namespace noisehgnn::synth
